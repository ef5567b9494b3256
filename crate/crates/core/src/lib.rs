//! Emotional prompt selection for prompt-conditioned speech synthesis.
//!
//! A static stage filters one speaker/emotion pool down to a small ranked
//! set of prompts: pitch clustering ([`clustering`]), a perceptual and
//! textual quality gate ([`quality`]) and model-in-the-loop probing
//! ([`modelperf`]). A dynamic stage ([`dynamic`]) then picks the prompt whose
//! transcript is most relevant to each target text.

pub mod backends;
pub mod clustering;
pub mod config;
pub mod corpus;
pub mod dynamic;
pub mod modelperf;
pub mod pipeline;
pub mod pitch;
pub mod quality;
pub mod report;
pub mod synthetic;
