//! Model-in-the-loop evaluation of prompt candidates.
//!
//! Each candidate is used as the prompt for a fixed set of neutral probe
//! texts. The synthesized speech is transcribed and embedded, giving per
//! probe a character error rate against the probe text, two speaker
//! similarities and an emotion similarity to the prompt. Per-candidate means
//! are combined into one ordering by Borda rank-sum.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::backends::protocol::{
    decode_audio_field, encode_audio, AsrRequest, EmbedRequest, EmbedRole, TtsRequest,
};
use crate::backends::{BackendClient, BackendError};
use crate::corpus::{write_wav, AudioBuffer, PcmEncoding, PromptCandidate};

/// Neutral descriptive probe texts shipped with the crate.
pub const BUILTIN_PROBE_TEXTS: &str = include_str!("../assets/probe_texts_v1.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("reference text is empty after normalization")]
    EmptyReference,
    #[error("embedding lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("no successful probes to aggregate")]
    NoProbes,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeSetError {
    #[error("probe text set is empty")]
    Empty,
    #[error("probe text {0} is empty after normalization")]
    EmptyText(usize),
}

/// NFKC, lowercase, drop whitespace and punctuation.
pub fn normalize_for_cer(text: &str) -> Vec<char> {
    text.nfkc()
        .flat_map(char::to_lowercase)
        .filter(|c| !c.is_whitespace() && c.general_category_group() != GeneralCategoryGroup::Punctuation)
        .collect()
}

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over normalized characters divided by the normalized
/// reference length. Can exceed 1 for long hypotheses.
pub fn compute_cer(reference: &str, hypothesis: &str) -> Result<f64, MetricError> {
    let r = normalize_for_cer(reference);
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let h = normalize_for_cer(hypothesis);
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeTextSet {
    texts: Vec<String>,
    hash: String,
}

impl ProbeTextSet {
    pub fn new(texts: Vec<String>) -> Result<Self, ProbeSetError> {
        if texts.is_empty() {
            return Err(ProbeSetError::Empty);
        }
        if let Some(i) = texts.iter().position(|t| normalize_for_cer(t).is_empty()) {
            return Err(ProbeSetError::EmptyText(i));
        }
        let mut h = Sha256::new();
        for t in &texts {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        Ok(Self {
            hash: hex::encode(h.finalize()),
            texts,
        })
    }

    /// One text per non-blank line; `#` starts a comment line.
    pub fn parse(source: &str) -> Result<Self, ProbeSetError> {
        Self::new(
            source
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        )
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PROBE_TEXTS).expect("builtin probe texts are valid")
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub candidate_id: String,
    pub probe_index: usize,
    pub probe_text: String,
    /// Digest of the synthesized audio.
    pub synth_audio: String,
    pub asr_hypothesis: String,
    pub cer: f64,
    pub spk_sim_a: f64,
    pub spk_sim_b: f64,
    pub emo_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub candidate_id: String,
    pub probe_index: usize,
    pub error: String,
}

pub type ProbeOutcome = Result<ProbeResult, ProbeFailure>;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("synthesized audio: {0}")]
    Audio(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Prompt embeddings under the three embedding roles.
fn embed_all(client: &BackendClient, audio_b64: &str) -> Result<[Vec<f64>; 3], BackendError> {
    let mut out: [Vec<f64>; 3] = Default::default();
    for (slot, role) in out.iter_mut().zip(EmbedRole::ALL) {
        *slot = client
            .call(&EmbedRequest {
                role,
                audio: audio_b64.to_string(),
            })?
            .embedding;
    }
    Ok(out)
}

/// Synthesizes every probe with `candidate` as the prompt and scores it.
/// With `persist_dir`, synthesized audio is kept there as `<digest>.wav`.
///
/// A failure to embed the prompt itself fails every probe.
pub fn run_probes(
    candidate: &PromptCandidate,
    audio: &AudioBuffer,
    probes: &ProbeTextSet,
    client: &BackendClient,
    persist_dir: Option<&Path>,
) -> Vec<ProbeOutcome> {
    let prompt_b64 = encode_audio(audio);
    let fail = |probe_index: usize, error: String| ProbeFailure {
        candidate_id: candidate.id.clone(),
        probe_index,
        error,
    };
    let prompt_embeddings = match embed_all(client, &prompt_b64) {
        Ok(e) => e,
        Err(e) => {
            return (0..probes.len()).map(|i| Err(fail(i, format!("prompt embedding: {e}")))).collect();
        }
    };

    probes
        .texts()
        .iter()
        .enumerate()
        .map(|(probe_index, text)| {
            run_one_probe(candidate, &prompt_b64, &prompt_embeddings, probe_index, text, client, persist_dir)
                .map_err(|e| fail(probe_index, e.to_string()))
        })
        .collect()
}

fn run_one_probe(
    candidate: &PromptCandidate,
    prompt_b64: &str,
    prompt_embeddings: &[Vec<f64>; 3],
    probe_index: usize,
    text: &str,
    client: &BackendClient,
    persist_dir: Option<&Path>,
) -> Result<ProbeResult, ProbeError> {
    let synth = client.call(&TtsRequest {
        prompt_audio: prompt_b64.to_string(),
        prompt_text: candidate.transcript.clone(),
        text: text.to_string(),
    })?;
    let synth_audio = decode_audio_field(&synth.audio).map_err(|e| ProbeError::Audio(e.to_string()))?;
    let synth_digest = synth_audio.digest();
    if let Some(dir) = persist_dir {
        let path = dir.join(format!("{synth_digest}.wav"));
        if !path.exists() {
            std::fs::create_dir_all(dir)
                .and_then(|_| write_wav(&path, &synth_audio, PcmEncoding::Float32))
                .map_err(|e| ProbeError::Audio(format!("persisting {}: {e}", path.display())))?;
        }
    }
    let hypothesis = client
        .call(&AsrRequest {
            audio: synth.audio.clone(),
        })?
        .text;
    let cer = compute_cer(text, &hypothesis)?;
    let synth_embeddings = embed_all(client, &synth.audio)?;
    let sims: Vec<f64> = synth_embeddings
        .iter()
        .zip(prompt_embeddings)
        .map(|(s, p)| cosine_similarity(s, p))
        .collect::<Result<_, _>>()?;
    Ok(ProbeResult {
        candidate_id: candidate.id.clone(),
        probe_index,
        probe_text: text.to_string(),
        synth_audio: synth_digest,
        asr_hypothesis: hypothesis,
        cer,
        spk_sim_a: sims[0],
        spk_sim_b: sims[1],
        emo_sim: sims[2],
    })
}

/// Fraction of failed probes above which a candidate is dropped.
pub const DEFAULT_PROBE_FAILURE_TOLERANCE: f64 = 0.25;

pub fn failed_too_often(outcomes: &[ProbeOutcome], tolerance: f64) -> bool {
    if outcomes.is_empty() {
        return true;
    }
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    failed as f64 / outcomes.len() as f64 > tolerance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePerf {
    pub candidate_id: String,
    pub mean_cer: f64,
    pub mean_spk_a: f64,
    pub mean_spk_b: f64,
    pub mean_emo: f64,
    pub probes: usize,
    /// Borda rank-sum over the four metric columns, set by ranking.
    pub rank_score: Option<u32>,
}

impl CandidatePerf {
    pub fn new(id: impl Into<String>, cer: f64, spk_a: f64, spk_b: f64, emo: f64) -> Self {
        Self {
            candidate_id: id.into(),
            mean_cer: cer,
            mean_spk_a: spk_a,
            mean_spk_b: spk_b,
            mean_emo: emo,
            probes: 1,
            rank_score: None,
        }
    }
}

/// Arithmetic means over the successful probes of one candidate.
pub fn aggregate_perf(results: &[ProbeResult]) -> Result<CandidatePerf, MetricError> {
    let first = results.first().ok_or(MetricError::NoProbes)?;
    let n = results.len() as f64;
    let mean = |f: fn(&ProbeResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    Ok(CandidatePerf {
        candidate_id: first.candidate_id.clone(),
        mean_cer: mean(|r| r.cer),
        mean_spk_a: mean(|r| r.spk_sim_a),
        mean_spk_b: mean(|r| r.spk_sim_b),
        mean_emo: mean(|r| r.emo_sim),
        probes: results.len(),
        rank_score: None,
    })
}

/// Competition ranks ("1224"): one plus the number of strictly better rows.
fn column_ranks(values: &[f64], lower_is_better: bool) -> Vec<u32> {
    values
        .iter()
        .map(|v| {
            let better = values
                .iter()
                .filter(|o| if lower_is_better { *o < v } else { *o > v })
                .count();
            better as u32 + 1
        })
        .collect()
}

/// Every candidate with its rank-sum, best first. Ties on the rank-sum go to
/// the lower mean CER, then the lexicographically smaller id.
pub fn rank_candidates(perfs: &[CandidatePerf]) -> Vec<CandidatePerf> {
    let cer: Vec<f64> = perfs.iter().map(|p| p.mean_cer).collect();
    let a: Vec<f64> = perfs.iter().map(|p| p.mean_spk_a).collect();
    let b: Vec<f64> = perfs.iter().map(|p| p.mean_spk_b).collect();
    let e: Vec<f64> = perfs.iter().map(|p| p.mean_emo).collect();
    let columns = [
        column_ranks(&cer, true),
        column_ranks(&a, false),
        column_ranks(&b, false),
        column_ranks(&e, false),
    ];
    let mut ranked: Vec<CandidatePerf> = perfs
        .iter()
        .enumerate()
        .map(|(i, p)| CandidatePerf {
            rank_score: Some(columns.iter().map(|c| c[i]).sum()),
            ..p.clone()
        })
        .collect();
    ranked.sort_by(|x, y| {
        x.rank_score
            .cmp(&y.rank_score)
            .then(x.mean_cer.total_cmp(&y.mean_cer))
            .then_with(|| x.candidate_id.cmp(&y.candidate_id))
    });
    ranked
}

pub fn rank_and_select_topk(perfs: &[CandidatePerf], k: usize) -> Vec<CandidatePerf> {
    let mut ranked = rank_candidates(perfs);
    ranked.truncate(k.min(perfs.len()));
    ranked
}
