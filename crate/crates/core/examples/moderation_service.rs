//! Run the moderation service in-process: upload clips over HTTP, wait for
//! classification, review the queue and read the audit trail.
//!
//! ```bash
//! cargo run --example moderation_service
//! cargo run --example moderation_service -- --serve   # keep serving afterwards
//! ```

use serde_json::{json, Value};

use vrmod::mod_service::{router, Service, ServiceConfig};
use vrmod::synth_arena::{generate_corpus, CorpusSpec};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let keep_serving = std::env::args().any(|a| a == "--serve");
    let dir = tempfile::tempdir()?;
    let corpus = dir.path().join("corpus");
    let spec = CorpusSpec {
        count_per_class: 1,
        ..CorpusSpec::default()
    };
    let clips = generate_corpus(&spec, &corpus)?;

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let mut cfg = ServiceConfig::mock(dir.path().join("service"), corpus.join("sidecars"));
    cfg.public_base_url = base.clone();
    let service = Service::start(cfg)?;
    let app = router(service.clone());
    tokio::spawn(async move { axum::serve(listener, app).await });
    println!("serving on {base}");

    let http = reqwest::Client::new();
    for c in &clips {
        let receipt: Value = http
            .post(format!("{base}/clips?clip_id={}&room=climbing", c.clip_id))
            .body(std::fs::read(corpus.join(&c.path))?)
            .send()
            .await?
            .json()
            .await?;
        println!("submitted {receipt}");
    }
    service.wait_idle().await;

    let queue: Value = http.get(format!("{base}/queue?status=pending")).send().await?.json().await?;
    println!("\n{} segments await review", queue["total"]);
    let items = queue["items"].as_array().cloned().unwrap_or_default();
    for (i, item) in items.iter().enumerate() {
        let id = item["item_id"].as_str().unwrap_or_default();
        let decision = if i == 0 {
            json!({"decision": "override", "label": "Benign", "note": "two friends sparring", "actor": "alice"})
        } else {
            json!({"decision": "confirm", "actor": "alice"})
        };
        let reviewed: Value = http.post(format!("{base}/review/{id}")).json(&decision).send().await?.json().await?;
        println!("  {id}: {}", reviewed["status"]);
    }

    let audit: Value = http.get(format!("{base}/audit?since=0")).send().await?.json().await?;
    println!("\naudit trail:");
    for e in audit["events"].as_array().into_iter().flatten() {
        println!("  #{:<3} {:<8} {}", e["seq"], e["actor"].as_str().unwrap_or(""), e["action"].as_str().unwrap_or(""));
    }
    let report: Value = http.get(format!("{base}/reports/latest")).send().await?.json().await?;
    println!("\n{}", serde_json::to_string_pretty(&report)?);

    if keep_serving {
        println!("still serving on {base}; Ctrl-C to stop");
        tokio::signal::ctrl_c().await?;
    }
    Ok(())
}
