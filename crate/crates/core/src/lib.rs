//! Orchestration for long-form storytelling video generation.
//!
//! A story specification is planned by four LLM-driven agents into chapters,
//! a reusable location library, scenes and shots. Each scene is rendered on
//! one canonical background: odd shots are image-to-video clips from composed
//! keyframes, even shots are first/last-frame transitions carrying explicit
//! character movement metadata. All generative models sit behind a single
//! JSON wire protocol, with deterministic mock backends for verification.

pub mod agents;
pub mod backends;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod render;
pub mod schema;
pub mod synth;
pub mod transition;
pub(crate) mod util;
