//! Perceptual and textual quality gate.
//!
//! Each candidate gets a MOS estimate for its audio and a coherence score
//! for how well its transcript fits the target emotion. Both are min-max
//! normalized within the pool and summed; the top `n` percent survive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::protocol::{encode_audio, CoherenceRequest, QualityRequest};
use crate::backends::{BackendClient, BackendError};
use crate::corpus::{AudioBuffer, EmotionLabel, PromptCandidate};

/// Rubric sent with every coherence request unless the config overrides it.
pub const BUILTIN_RUBRIC: &str = include_str!("../assets/coherence_rubric_v1.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQuality {
    pub candidate_id: String,
    pub dnsmos: f64,
    pub coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub candidate_id: String,
    pub dnsmos_raw: f64,
    pub coherence_raw: f64,
    pub dnsmos_norm: f64,
    pub coherence_norm: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityCut {
    /// Every scored candidate, best first.
    pub scores: Vec<QualityScore>,
    /// Ids of the retained prefix of `scores`.
    pub retained: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityError {
    #[error("no scored candidates")]
    Empty,
    #[error("n_percent must be in (0, 100], got {0}")]
    InvalidPercent(f64),
}

pub fn score_quality(
    candidate: &PromptCandidate,
    audio: &AudioBuffer,
    emotion: EmotionLabel,
    rubric: &str,
    client: &BackendClient,
) -> Result<RawQuality, BackendError> {
    let mos = client
        .call(&QualityRequest {
            audio: encode_audio(audio),
        })?
        .mos;
    let coherence = client
        .call(&CoherenceRequest {
            text: candidate.transcript.clone(),
            emotion: emotion.as_str().to_string(),
            rubric: rubric.to_string(),
        })?
        .score;
    Ok(RawQuality {
        candidate_id: candidate.id.clone(),
        dnsmos: mos,
        coherence,
    })
}

/// Min-max scaling to [0, 1]; a constant column maps to 0.5.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

/// `ceil(n_percent / 100 * len)`, never below one for a non-empty pool.
pub fn retained_count(n_percent: f64, len: usize) -> usize {
    if len == 0 {
        return 0;
    }
    // multiply before dividing so 15% of 60 is exactly 9
    let exact = n_percent * len as f64 / 100.0;
    ((exact - 1e-9).ceil() as usize).clamp(1, len)
}

pub fn aggregate_and_cut(raw: &[RawQuality], n_percent: f64) -> Result<QualityCut, QualityError> {
    if !(n_percent > 0.0 && n_percent <= 100.0) {
        return Err(QualityError::InvalidPercent(n_percent));
    }
    if raw.is_empty() {
        return Err(QualityError::Empty);
    }
    let d = min_max(&raw.iter().map(|r| r.dnsmos).collect::<Vec<_>>());
    let c = min_max(&raw.iter().map(|r| r.coherence).collect::<Vec<_>>());
    let mut scores: Vec<QualityScore> = raw
        .iter()
        .zip(d.into_iter().zip(c))
        .map(|(r, (dn, cn))| QualityScore {
            candidate_id: r.candidate_id.clone(),
            dnsmos_raw: r.dnsmos,
            coherence_raw: r.coherence,
            dnsmos_norm: dn,
            coherence_norm: cn,
            combined: dn + cn,
        })
        .collect();
    scores.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then_with(|| a.candidate_id.cmp(&b.candidate_id))
    });
    let retained = scores
        .iter()
        .take(retained_count(n_percent, scores.len()))
        .map(|s| s.candidate_id.clone())
        .collect();
    Ok(QualityCut { scores, retained })
}
