//! Plain-text table of the static Top-k.

use std::fmt::Write;

use thiserror::Error;

use crate::pipeline::{RunStatus, StaticSelectionResult};

pub const NO_CANDIDATES: &str = "no candidates";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("result is incomplete (stage {stage} failed: {message})")]
    Incomplete { stage: String, message: String },
}

/// One row per Top-k prompt: id, CER in percent, the two speaker
/// similarities, emotion similarity and rank label.
pub fn render_report(result: &StaticSelectionResult) -> Result<String, ReportError> {
    if let RunStatus::Failed { stage, message } = &result.status {
        return Err(ReportError::Incomplete {
            stage: stage.clone(),
            message: message.clone(),
        });
    }
    if result.top_k.is_empty() {
        return Ok(format!("{NO_CANDIDATES}\n"));
    }
    let mut out = String::new();
    writeln!(out, "# speaker {} / {}", result.speaker, result.emotion).unwrap();
    writeln!(out, "PromptID | CER | SpkSim-A | SpkSim-B | ES | Rank").unwrap();
    for e in &result.top_k {
        let p = &e.perf;
        writeln!(
            out,
            "{} | {:.2}% | {:.4} | {:.4} | {:.4} | Top{}",
            e.candidate_id,
            p.mean_cer * 100.0,
            p.mean_spk_a,
            p.mean_spk_b,
            p.mean_emo,
            e.rank
        )
        .unwrap();
    }
    Ok(out)
}
