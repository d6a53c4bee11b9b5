//! One Stage 1 request against an OpenAI-compatible endpoint.
//!
//! Frames must be reachable by the remote model, so pass URLs it can fetch:
//!
//! ```bash
//! OPENAI_API_KEY=... cargo run --example remote_backend -- https://host/frames/a.jpg ...
//! ```
//!
//! Without a key the request payload is printed instead.

use std::sync::Arc;

use vrmod::prompt_forge::{build_prompt, expected_schema, PromptVariant};
use vrmod::taxonomy::Stage;
use vrmod::verdict_parser::parse;
use vrmod::vlm_gateway::{BackendConfig, Gateway, InferenceRequest, RemoteChat};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let mut urls: Vec<String> = std::env::args().skip(1).collect();
    if urls.len() < 2 {
        urls = (0..6).map(|i| format!("https://frames.example/frames/{i:064x}.jpg")).collect();
    }
    let cfg = BackendConfig {
        requests_per_minute: 30,
        ..BackendConfig::default()
    };
    let bundle = build_prompt(Stage::Stage1, PromptVariant::Context, urls.len(), None)?;
    let request = InferenceRequest::new("example:seg-0:stage1:1", bundle, urls)?;

    if std::env::var_os(&cfg.api_key_ref).is_none() {
        println!("{} is not set; this is what would be sent:", cfg.api_key_ref);
        println!("{}", serde_json::to_string_pretty(&request.messages())?);
        return Ok(());
    }
    let gateway = Gateway::new(cfg.clone(), Arc::new(RemoteChat::from_config(&cfg)?))?;
    let raw = gateway.infer(&request).await?;
    let parsed = parse(&raw.body, &expected_schema(Stage::Stage1));
    println!("attempt {} in {:.2}s: {:?} {:?}", raw.attempt, raw.latency, parsed.status, parsed.label);
    println!("raw: {}", raw.body);
    Ok(())
}
