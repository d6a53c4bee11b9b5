//! Strict parsing of model answers, with salvage for chatty replies.
//!
//! ```bash
//! cargo run --example parse_answers
//! ```

use vrmod::prompt_forge::expected_schema;
use vrmod::taxonomy::Stage;
use vrmod::verdict_parser::parse;

fn main() {
    let stage1 = expected_schema(Stage::Stage1);
    let stage2 = expected_schema(Stage::Stage2);
    let answers = [
        (&stage1, r#"{"label":"Anomaly","reason":"punching another avatar"}"#),
        (&stage1, r#"Sure! {"label":"Benign","reason":"normal play"}"#),
        (&stage1, "```json\n{\"label\": \"Anomaly\", \"reason\": \"slap\"}\n```"),
        (&stage1, r#"{"label":"Maybe","reason":"unclear"}"#),
        (&stage1, r#"{"label":"Benign","reason":"ok","extra":1}"#),
        (&stage2, r#"{"label": "Personal Space Violation", "reason": "face pressed close"}"#),
        (&stage2, "I cannot tell from these frames."),
    ];
    for (schema, body) in answers {
        let p = parse(body, schema);
        let label = p.label.map_or("-", |l| l.as_str());
        println!("{:<9} {:<26} {body:?}", format!("{:?}", p.status), label);
    }
}
