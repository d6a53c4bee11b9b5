//! Render the prompt for a stage and variant, and the chat messages a
//! backend receives.
//!
//! ```bash
//! cargo run --example prompts -- stage2 cot
//! ```

use vrmod::prompt_forge::{build_prompt, PromptVariant};
use vrmod::taxonomy::Stage;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let stage: Stage = args.next().as_deref().unwrap_or("stage1").parse()?;
    let variant: PromptVariant = args.next().as_deref().unwrap_or("context").parse()?;
    if variant == PromptVariant::FewShot {
        anyhow::bail!("few-shot prompts need exemplars; see the mock_run example");
    }

    let bundle = build_prompt(stage, variant, 6, None)?;
    println!("--- system\n{}\n--- user\n{}\n", bundle.system_text, bundle.user_text);

    let urls: Vec<String> = (0..6).map(|i| format!("https://frames.example/frames/{i:064x}.jpg")).collect();
    println!("{}", serde_json::to_string_pretty(&bundle.to_messages(&urls))?);
    Ok(())
}
