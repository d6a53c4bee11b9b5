mod common;

use std::time::Duration;

use reqwest::StatusCode;
use serde_json::{json, Value};

use vrmod::mod_service::{router, ReviewStatus, Service, ServiceConfig};
use vrmod::taxonomy::Stage2Label;

const TOKEN: &str = "t0ken";

struct Harness {
    base: String,
    client: reqwest::Client,
    service: Service,
}

impl Harness {
    async fn start(cfg: ServiceConfig) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let mut cfg = cfg;
        cfg.public_base_url = base.clone();
        let service = Service::start(cfg).unwrap();
        let app = router(service.clone());
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        Self {
            base,
            client: reqwest::Client::new(),
            service,
        }
    }

    fn get(&self, path: &str) -> reqwest::RequestBuilder {
        self.client.get(format!("{}{path}", self.base)).bearer_auth(TOKEN)
    }

    fn post(&self, path: &str) -> reqwest::RequestBuilder {
        self.client.post(format!("{}{path}", self.base)).bearer_auth(TOKEN)
    }

    async fn json(&self, path: &str) -> Value {
        let resp = self.get(path).send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK, "GET {path}");
        resp.json().await.unwrap()
    }
}

fn config(root: &std::path::Path, sidecars: &std::path::Path) -> ServiceConfig {
    let mut cfg = ServiceConfig::mock(root.join("svc"), sidecars);
    cfg.auth_token = Some(TOKEN.into());
    cfg
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn upload_classify_review_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let clips = common::corpus(&dir.path().join("corpus"), 1, 11, 22.0);
    let cfg = config(dir.path(), &dir.path().join("corpus/sidecars"));
    let h = Harness::start(cfg.clone()).await;

    // auth applies to everything except health and frames
    let anon = h.client.get(format!("{}/queue", h.base)).send().await.unwrap();
    assert_eq!(anon.status(), StatusCode::UNAUTHORIZED);
    let health = h.client.get(format!("{}/health", h.base)).send().await.unwrap();
    assert_eq!(health.status(), StatusCode::OK);

    for c in &clips {
        let bytes = std::fs::read(&c.path).unwrap();
        let resp = h
            .post(&format!("/clips?clip_id={}&room=whack-a-pig&participants=2", c.clip_id))
            .body(bytes.clone())
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::ACCEPTED);
        // same file again is idempotent
        let again = h.post(&format!("/clips?clip_id={}", c.clip_id)).body(bytes).send().await.unwrap();
        assert_eq!(again.status(), StatusCode::OK);
    }
    let dup = h
        .post(&format!("/clips?clip_id={}", clips[0].clip_id))
        .body(std::fs::read(&clips[1].path).unwrap())
        .send()
        .await
        .unwrap();
    assert_eq!(dup.status(), StatusCode::CONFLICT);
    let junk = h.post("/clips").body(b"definitely not a video".to_vec()).send().await.unwrap();
    assert_eq!(junk.status(), StatusCode::UNSUPPORTED_MEDIA_TYPE);

    tokio::time::timeout(Duration::from_secs(60), h.service.wait_idle()).await.unwrap();

    let expected_pending: usize = clips
        .iter()
        .filter(|c| c.truth.unwrap().label != Stage2Label::BenignBehavior)
        .map(common::segment_count)
        .sum();
    let page = h.json("/queue?status=pending&page_size=500").await;
    assert_eq!(page["total"], expected_pending);
    let items = page["items"].as_array().unwrap();
    assert!(items.iter().all(|i| i["status"] == "pending" && i["room"] == "WhackAPig"), "{:#}", items[0]);

    for c in &clips {
        let clip = h.json(&format!("/clips/{}", c.clip_id)).await;
        assert_eq!(clip["status"], "classified", "{}", c.clip_id);
    }

    // segment detail with fetchable frames, no token needed for frames
    let first = items[0]["segment_id"].as_str().unwrap().to_string();
    let seg = h.json(&format!("/segments/{first}")).await;
    let frames = seg["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 6);
    let frame = h.client.get(frames[0]["url"].as_str().unwrap()).send().await.unwrap();
    assert_eq!(frame.status(), StatusCode::OK);
    assert_eq!(frame.headers()["content-type"], "image/jpeg");
    assert_eq!(&frame.bytes().await.unwrap()[..2], &[0xFF, 0xD8]);
    let missing = h.client.get(format!("{}/frames/{}.jpg", h.base, "0".repeat(64))).send().await.unwrap();
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);

    // reviews are final
    let confirm = h.post(&format!("/review/{first}")).json(&json!({"decision": "confirm"})).send().await.unwrap();
    assert_eq!(confirm.status(), StatusCode::OK);
    let twice = h.post(&format!("/review/{first}")).json(&json!({"decision": "confirm"})).send().await.unwrap();
    assert_eq!(twice.status(), StatusCode::CONFLICT);
    let unknown = h.post("/review/nope").json(&json!({"decision": "confirm"})).send().await.unwrap();
    assert_eq!(unknown.status(), StatusCode::NOT_FOUND);
    let second = items[1]["segment_id"].as_str().unwrap().to_string();
    let no_label = h.post(&format!("/review/{second}")).json(&json!({"decision": "override"})).send().await.unwrap();
    assert_eq!(no_label.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let over = h
        .post(&format!("/review/{second}"))
        .json(&json!({"decision": "override", "label": "Benign", "note": "friends play-fighting", "actor": "mod-7"}))
        .send()
        .await
        .unwrap();
    assert_eq!(over.status(), StatusCode::OK);
    let item: Value = over.json().await.unwrap();
    assert_eq!(item["status"], "overridden");
    assert_eq!(item["reviewed_by"], "mod-7");

    let export = h.get("/exports/overrides").send().await.unwrap().text().await.unwrap();
    let lines: Vec<Value> = export.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    let last = lines[0]["messages"].as_array().unwrap().last().unwrap().clone();
    assert!(last["content"].as_str().unwrap().contains("friends play-fighting"));

    let report = h.json("/reports/latest").await;
    assert_eq!(report["queue"]["confirmed"], 1);
    assert_eq!(report["queue"]["overridden"], 1);
    assert_eq!(report["queue"]["pending"], expected_pending - 2);

    // the audit trail is gap-free
    let audit = h.json("/audit?since=0").await;
    let seqs: Vec<u64> = audit["events"].as_array().unwrap().iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    let tail = h.json(&format!("/audit?since={}", seqs[seqs.len() - 3])).await;
    assert_eq!(tail["events"].as_array().unwrap().len(), 2);

    // a fresh process over the same store sees the same state
    let before = h.service.read(|s| (s.queue(None).into_iter().cloned().collect::<Vec<_>>(), s.last_seq));
    let restarted = Service::start(cfg).unwrap();
    restarted.wait_idle().await;
    let after = restarted.read(|s| (s.queue(None).into_iter().cloned().collect::<Vec<_>>(), s.last_seq));
    assert_eq!(before, after);
    assert_eq!(
        restarted.read(|s| s.items[&first].status),
        ReviewStatus::Confirmed
    );
}

#[tokio::test]
async fn quota_and_bad_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let clips = common::corpus(&dir.path().join("corpus"), 1, 3, 12.0);
    let mut cfg = config(dir.path(), &dir.path().join("corpus/sidecars"));
    let size = std::fs::metadata(&clips[0].path).unwrap().len();
    cfg.store_quota_bytes = size + size / 2;
    let h = Harness::start(cfg).await;

    let body = |i: usize| std::fs::read(&clips[i].path).unwrap();
    let bad_room = h.post("/clips?room=moon").body(body(0)).send().await.unwrap();
    assert_eq!(bad_room.status(), StatusCode::BAD_REQUEST);
    let bad_id = h.post("/clips?clip_id=../x").body(body(0)).send().await.unwrap();
    assert_eq!(bad_id.status(), StatusCode::BAD_REQUEST);
    assert_eq!(h.post("/clips").body(body(0)).send().await.unwrap().status(), StatusCode::ACCEPTED);
    let full = h.post("/clips").body(body(1)).send().await.unwrap();
    assert_eq!(full.status(), StatusCode::INSUFFICIENT_STORAGE);
    let err: Value = full.json().await.unwrap();
    assert_eq!(err["error"], "StoreFull");
    h.service.wait_idle().await;
}
