use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use vrmod::prompt_forge::{build_prompt, PromptVariant};
use vrmod::taxonomy::Stage;
use vrmod::vlm_gateway::{BackendConfig, Gateway, GatewayError, InferenceRequest, RemoteChat};

#[derive(Default)]
struct Script {
    replies: VecDeque<(u16, Value)>,
    seen: Vec<(Option<String>, Value)>,
}

type Shared = Arc<Mutex<Script>>;

async fn chat(State(script): State<Shared>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let mut s = script.lock().unwrap();
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(String::from);
    s.seen.push((auth, body));
    let (status, reply) = s.replies.pop_front().unwrap_or((500, json!({"error": "script exhausted"})));
    (StatusCode::from_u16(status).unwrap(), Json(reply))
}

fn answer(content: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
}

async fn server(replies: Vec<(u16, Value)>) -> (String, Shared) {
    let script: Shared = Arc::new(Mutex::new(Script {
        replies: replies.into(),
        ..Default::default()
    }));
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .with_state(script.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat/completions"), script)
}

fn gateway(endpoint: &str) -> Gateway {
    let cfg = BackendConfig {
        endpoint_url: Some(endpoint.to_string()),
        model_name: "gpt-4o".into(),
        backoff_base: 0.01,
        timeout: 5.0,
        ..BackendConfig::default()
    };
    let backend = RemoteChat::from_config(&cfg).unwrap().with_api_key("test-key");
    Gateway::new(cfg, Arc::new(backend)).unwrap()
}

fn request() -> InferenceRequest {
    let bundle = build_prompt(Stage::Stage1, PromptVariant::Baseline, 6, None).unwrap();
    let urls = (0..6).map(|i| format!("http://frames.test/frames/{i:064x}.jpg")).collect();
    InferenceRequest::new("run:seg:stage1:1", bundle, urls).unwrap()
}

#[tokio::test]
async fn answer_text_and_wire_payload() {
    let body = r#"{"label": "Benign", "reason": "ordinary play"}"#;
    let (url, script) = server(vec![(200, answer(body))]).await;
    let resp = gateway(&url).infer(&request()).await.unwrap();
    assert_eq!(resp.body, body);
    assert_eq!(resp.attempt, 1);

    let s = script.lock().unwrap();
    let (auth, payload) = &s.seen[0];
    assert_eq!(auth.as_deref(), Some("Bearer test-key"));
    assert_eq!(payload["model"], "gpt-4o");
    assert_eq!(payload["temperature"], 0.0);
    let messages = payload["messages"].as_array().unwrap();
    assert_eq!(messages[0]["role"], "system");
    let parts = messages[1]["content"].as_array().unwrap();
    let images: Vec<&str> = parts
        .iter()
        .filter(|p| p["type"] == "image_url")
        .map(|p| p["image_url"]["url"].as_str().unwrap())
        .collect();
    assert_eq!(images.len(), 6);
    assert!(images[0].ends_with(&format!("{:064x}.jpg", 0)));
}

#[tokio::test]
async fn auth_failure_is_not_retried() {
    let (url, script) = server(vec![(401, json!({"error": "bad key"})), (200, answer("{}"))]).await;
    let err = gateway(&url).infer(&request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::AuthFailure { attempts: 1, .. }), "{err:?}");
    assert_eq!(script.lock().unwrap().seen.len(), 1);
}

#[tokio::test]
async fn rate_limits_and_server_errors_are_retried() {
    let ok = r#"{"label": "Anomaly", "reason": "x"}"#;
    let (url, script) = server(vec![
        (429, json!({"error": "slow down"})),
        (503, json!({"error": "busy"})),
        (200, answer(ok)),
    ])
    .await;
    let resp = gateway(&url).infer(&request()).await.unwrap();
    assert_eq!(resp.attempt, 3);
    assert_eq!(resp.body, ok);
    assert_eq!(script.lock().unwrap().seen.len(), 3);
}

#[tokio::test]
async fn gives_up_after_three_retries() {
    let (url, script) = server(vec![(500, json!({})); 6]).await;
    let err = gateway(&url).infer(&request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnavailable { attempts: 4, .. }), "{err:?}");
    assert_eq!(script.lock().unwrap().seen.len(), 4);

    let (url, _) = server(vec![(429, json!({})); 6]).await;
    let err = gateway(&url).infer(&request()).await.unwrap_err();
    assert_eq!(err, GatewayError::RateLimited { attempts: 4 });
}

#[tokio::test]
async fn bad_request_fails_once() {
    let (url, script) = server(vec![(400, json!({"error": "image too large"})), (200, answer("{}"))]).await;
    let err = gateway(&url).infer(&request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnavailable { attempts: 1, .. }), "{err:?}");
    assert_eq!(script.lock().unwrap().seen.len(), 1);
}

#[tokio::test]
async fn unreachable_endpoint_is_a_transport_failure() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    drop(listener);
    let err = gateway(&url).infer(&request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnavailable { attempts: 4, .. }), "{err:?}");
}
