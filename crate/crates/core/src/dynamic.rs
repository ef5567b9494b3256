//! Per-utterance choice among the statically selected prompts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::protocol::SemanticRequest;
use crate::backends::BackendClient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticScore {
    pub candidate_id: String,
    pub relevance: f64,
}

/// A statically selected prompt, as the dynamic stage sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrompt {
    pub candidate_id: String,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicSelection {
    pub chosen: String,
    /// Empty when the semantic backend failed.
    pub scores: Vec<SemanticScore>,
    /// Set when the static Top-1 was used because scoring failed.
    pub fallback: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicError {
    #[error("no candidates to choose from")]
    NoCandidates,
    #[error("target text is empty")]
    EmptyTarget,
}

/// Index of the largest score; earlier entries win ties.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores every prompt transcript against `target_text` in one request and
/// returns the most relevant prompt. `candidates` must be in static order.
pub fn select_prompt(
    target_text: &str,
    candidates: &[RankedPrompt],
    client: &BackendClient,
) -> Result<DynamicSelection, DynamicError> {
    if candidates.is_empty() {
        return Err(DynamicError::NoCandidates);
    }
    if target_text.trim().is_empty() {
        return Err(DynamicError::EmptyTarget);
    }
    let request = SemanticRequest {
        target_text: target_text.to_string(),
        candidate_texts: candidates.iter().map(|c| c.transcript.clone()).collect(),
    };
    match client.call(&request) {
        Ok(resp) => {
            let best = argmax_first(&resp.scores).expect("scores match candidates");
            let scores = candidates
                .iter()
                .zip(resp.scores)
                .map(|(c, relevance)| SemanticScore {
                    candidate_id: c.candidate_id.clone(),
                    relevance,
                })
                .collect();
            Ok(DynamicSelection {
                chosen: candidates[best].candidate_id.clone(),
                scores,
                fallback: None,
            })
        }
        Err(e) => {
            log::warn!("semantic scoring failed, using static Top-1: {e}");
            Ok(DynamicSelection {
                chosen: candidates[0].candidate_id.clone(),
                scores: Vec::new(),
                fallback: Some(e.to_string()),
            })
        }
    }
}
