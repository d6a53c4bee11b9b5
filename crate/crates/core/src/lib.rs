//! Two-stage harassment moderation for social VR recordings.
//!
//! Clips are cut into 10 s segments, a few frames are sampled from each,
//! and a vision-language model labels every segment first as
//! Benign/Anomaly and then with a hostile behavior class.

pub mod evalkit;
pub mod finetune_export;
pub mod media_ingest;
pub mod mod_service;
pub mod pipeline;
pub mod prompt_forge;
pub mod synth_arena;
pub mod taxonomy;
pub mod verdict_parser;
pub mod vlm_gateway;
