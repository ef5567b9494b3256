//! Deterministic stand-ins for every scorer role, driven by a JSON fixture.
//!
//! Responses are pure functions of `(fixture, role, request)`:
//!
//! * `tts` returns a tone whose pitch is derived from the prompt audio digest
//!   (or, in `echo` mode, the prompt audio itself). The WAV carries an extra
//!   `emop` RIFF chunk after `data` recording the prompt digest and the text
//!   that was synthesized; ordinary WAV readers skip it.
//! * `asr` reads that chunk back (optionally dropping every n-th character
//!   per prompt), or falls back to a digest → transcript table.
//! * embedding roles return seeded unit vectors keyed by a label looked up
//!   from the prompt digest, so a synthesis and its prompt agree up to a
//!   per-prompt `drift`. Labels listed under `orthogonal` map to basis vectors.
//! * `quality` (by audio digest), `coherence` (by text) and `semantic` (by
//!   candidate text, or exact string match) are table lookups.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::protocol::{
    decode_audio_field, AsrRequest, AsrResponse, CoherenceRequest, CoherenceResponse, EmbedRequest,
    EmbedResponse, ErrorBody, ErrorDetail, QualityRequest, QualityResponse, RawRequestEnvelope,
    ResponseEnvelope, SemanticRequest, SemanticResponse, TtsRequest, TtsResponse,
};
use super::{BackendRole, Endpoint, Transport, TransportError};
use crate::corpus::{encode_wav_bytes, AudioBuffer, PcmEncoding};

const META_CHUNK: &[u8; 4] = b"emop";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockFixture {
    pub seed: u64,
    /// Reported by the health endpoint; `mock-<role>` when absent.
    pub model_ids: BTreeMap<BackendRole, String>,
    /// Roles that answer 503.
    pub unavailable: BTreeSet<BackendRole>,
    pub tts: TtsFixture,
    pub asr: AsrFixture,
    pub embedding: EmbeddingFixture,
    pub quality: TableFixture,
    pub coherence: TableFixture,
    pub semantic: SemanticFixture,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TtsMode {
    #[default]
    Tone,
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TtsFixture {
    pub mode: TtsMode,
    pub sample_rate_hz: u32,
}

impl Default for TtsFixture {
    fn default() -> Self {
        Self {
            mode: TtsMode::Tone,
            sample_rate_hz: 8_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsrFixture {
    /// Audio digest → transcript, for audio without synthesis metadata.
    pub table: BTreeMap<String, String>,
    /// Prompt digest → n: drop every n-th character of the synthesized text.
    pub drop_every: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingFixture {
    pub dim: usize,
    /// Audio digest → label. Unlisted audio is its own label.
    pub labels: BTreeMap<String, String>,
    /// Labels mapped to basis vectors e_0, e_1, ... in list order.
    pub orthogonal: Vec<String>,
    /// Prompt digest → perturbation scale applied to its syntheses.
    pub drift: BTreeMap<String, f64>,
}

impl Default for EmbeddingFixture {
    fn default() -> Self {
        Self {
            dim: 32,
            labels: BTreeMap::new(),
            orthogonal: Vec::new(),
            drift: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableFixture {
    pub table: BTreeMap<String, f64>,
    pub default: Option<f64>,
}

impl TableFixture {
    fn lookup(&self, key: &str, role: BackendRole) -> Result<f64, MockError> {
        self.table
            .get(key)
            .copied()
            .or(self.default)
            .ok_or_else(|| MockError::missing(role, key))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticMode {
    /// 1.0 when the candidate text equals the target, else 0.0.
    Exact,
    #[default]
    Table,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticFixture {
    pub mode: SemanticMode,
    pub table: BTreeMap<String, f64>,
    pub default: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl MockError {
    fn missing(role: BackendRole, key: &str) -> Self {
        Self {
            status: 404,
            code: "fixture_key_missing".into(),
            message: format!("{role}: no fixture entry for {key:?}"),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: 400,
            code: "bad_request".into(),
            message: message.into(),
        }
    }

    pub fn body(&self) -> Vec<u8> {
        serde_json::to_vec(&ErrorBody {
            error: ErrorDetail {
                code: self.code.clone(),
                message: self.message.clone(),
            },
        })
        .expect("error body serializes")
    }
}

/// Metadata the mock TTS embeds in its output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub src: String,
    pub text: String,
}

pub fn append_meta_chunk(mut wav: Vec<u8>, meta: &SynthMeta) -> Vec<u8> {
    let payload = serde_json::to_vec(meta).expect("meta serializes");
    wav.extend_from_slice(META_CHUNK);
    wav.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    wav.extend_from_slice(&payload);
    if payload.len() % 2 == 1 {
        wav.push(0);
    }
    let riff_size = (wav.len() - 8) as u32;
    wav[4..8].copy_from_slice(&riff_size.to_le_bytes());
    wav
}

pub fn read_meta_chunk(wav: &[u8]) -> Option<SynthMeta> {
    if wav.len() < 12 || &wav[..4] != b"RIFF" || &wav[8..12] != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    while pos + 8 <= wav.len() {
        let id = &wav[pos..pos + 4];
        let size = u32::from_le_bytes(wav[pos + 4..pos + 8].try_into().ok()?) as usize;
        let start = pos + 8;
        let end = start.checked_add(size)?;
        if end > wav.len() {
            return None;
        }
        if id == META_CHUNK {
            return serde_json::from_slice(&wav[start..end]).ok();
        }
        pos = end + (size % 2);
    }
    None
}

fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub struct MockBackend {
    fixture: MockFixture,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self { fixture }
    }

    pub fn fixture(&self) -> &MockFixture {
        &self.fixture
    }

    pub fn model_id(&self, role: BackendRole) -> String {
        self.fixture
            .model_ids
            .get(&role)
            .cloned()
            .unwrap_or_else(|| format!("mock-{role}"))
    }

    /// Handles one wire request body for `role`.
    pub fn handle(&self, role: BackendRole, body: &[u8]) -> Result<Vec<u8>, MockError> {
        if self.fixture.unavailable.contains(&role) {
            return Err(MockError {
                status: 503,
                code: "role_unavailable".into(),
                message: format!("{role} is not bound"),
            });
        }
        let envelope: RawRequestEnvelope =
            serde_json::from_slice(body).map_err(|e| MockError::bad_request(format!("envelope: {e}")))?;
        if envelope.role != role.as_str() {
            return Err(MockError::bad_request(format!(
                "envelope role {:?} posted to {role}",
                envelope.role
            )));
        }
        let payload = envelope.payload;
        let result = match role {
            BackendRole::Tts => to_value(self.tts(&parse(payload)?)?),
            BackendRole::Asr => to_value(self.asr(&parse(payload)?)?),
            BackendRole::SpeakerEmbedA | BackendRole::SpeakerEmbedB | BackendRole::EmotionEmbed => {
                to_value(self.embed(role, &parse::<EmbedRequest>(payload)?)?)
            }
            BackendRole::Quality => to_value(self.quality(&parse(payload)?)?),
            BackendRole::Coherence => to_value(self.coherence(&parse(payload)?)?),
            BackendRole::Semantic => to_value(self.semantic(&parse(payload)?)?),
        };
        Ok(serde_json::to_vec(&ResponseEnvelope {
            role: role.as_str().to_string(),
            model_id: envelope.model_id,
            result,
        })
        .expect("response serializes"))
    }

    fn tts(&self, req: &TtsRequest) -> Result<TtsResponse, MockError> {
        let prompt = decode_audio_field(&req.prompt_audio)
            .map_err(|e| MockError::bad_request(format!("prompt_audio: {e}")))?;
        let src = prompt.digest();
        let audio = match self.fixture.tts.mode {
            TtsMode::Echo => prompt,
            TtsMode::Tone => {
                let rate = self.fixture.tts.sample_rate_hz;
                let pitch = 100.0 + (u64::from_str_radix(&src[..8], 16).unwrap_or(0) % 300) as f64;
                let seconds = 0.4 + 0.01 * req.text.chars().count() as f64;
                let n = (seconds * f64::from(rate)) as usize;
                let samples = (0..n)
                    .map(|i| (0.3 * (std::f64::consts::TAU * pitch * i as f64 / f64::from(rate)).sin()) as f32)
                    .collect();
                AudioBuffer::new(rate, samples).map_err(|e| MockError::bad_request(e.to_string()))?
            }
        };
        let wav = append_meta_chunk(
            encode_wav_bytes(&audio, PcmEncoding::Float32),
            &SynthMeta {
                src,
                text: req.text.clone(),
            },
        );
        use base64::Engine;
        Ok(TtsResponse {
            audio: base64::engine::general_purpose::STANDARD.encode(wav),
        })
    }

    fn audio_bytes(field: &str) -> Result<Vec<u8>, MockError> {
        use base64::Engine;
        base64::engine::general_purpose::STANDARD
            .decode(field)
            .map_err(|e| MockError::bad_request(format!("audio: {e}")))
    }

    fn asr(&self, req: &AsrRequest) -> Result<AsrResponse, MockError> {
        let bytes = Self::audio_bytes(&req.audio)?;
        if let Some(meta) = read_meta_chunk(&bytes) {
            let text = match self.fixture.asr.drop_every.get(&meta.src) {
                Some(&n) if n > 0 => meta
                    .text
                    .chars()
                    .enumerate()
                    .filter(|(i, _)| (i + 1) % n != 0)
                    .map(|(_, c)| c)
                    .collect(),
                _ => meta.text,
            };
            return Ok(AsrResponse { text });
        }
        let digest = decode_audio_field(&req.audio)
            .map_err(|e| MockError::bad_request(format!("audio: {e}")))?
            .digest();
        self.fixture
            .asr
            .table
            .get(&digest)
            .map(|t| AsrResponse { text: t.clone() })
            .ok_or_else(|| MockError::missing(BackendRole::Asr, &digest))
    }

    fn embed(&self, role: BackendRole, req: &EmbedRequest) -> Result<EmbedResponse, MockError> {
        let fx = &self.fixture.embedding;
        let bytes = Self::audio_bytes(&req.audio)?;
        let (key_digest, drift, noise_key) = match read_meta_chunk(&bytes) {
            Some(meta) => {
                let drift = fx.drift.get(&meta.src).copied().unwrap_or(0.0);
                (meta.src, drift, meta.text)
            }
            None => {
                let digest = decode_audio_field(&req.audio)
                    .map_err(|e| MockError::bad_request(format!("audio: {e}")))?
                    .digest();
                (digest, 0.0, String::new())
            }
        };
        let label = fx.labels.get(&key_digest).cloned().unwrap_or(key_digest.clone());
        Ok(EmbedResponse {
            embedding: self.embedding_for(role, &label, drift, &noise_key),
        })
    }

    /// Vector for `label`, perturbed by `drift` along a direction seeded by `noise_key`.
    pub fn embedding_for(&self, role: BackendRole, label: &str, drift: f64, noise_key: &str) -> Vec<f64> {
        let fx = &self.fixture.embedding;
        let dim = fx.dim.max(fx.orthogonal.len()).max(1);
        let seed = self.fixture.seed.to_le_bytes();
        let base = match fx.orthogonal.iter().position(|l| l == label) {
            Some(i) => {
                let mut v = vec![0.0; dim];
                v[i] = 1.0;
                v
            }
            None => unit_vector(
                &mut seeded_rng(&[&seed, role.as_str().as_bytes(), b"label", label.as_bytes()]),
                dim,
            ),
        };
        if drift == 0.0 {
            return base;
        }
        let noise = unit_vector(
            &mut seeded_rng(&[&seed, role.as_str().as_bytes(), b"noise", label.as_bytes(), noise_key.as_bytes()]),
            dim,
        );
        let v: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + drift * n).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    fn quality(&self, req: &QualityRequest) -> Result<QualityResponse, MockError> {
        let digest = decode_audio_field(&req.audio)
            .map_err(|e| MockError::bad_request(format!("audio: {e}")))?
            .digest();
        Ok(QualityResponse {
            mos: self.fixture.quality.lookup(&digest, BackendRole::Quality)?,
        })
    }

    fn coherence(&self, req: &CoherenceRequest) -> Result<CoherenceResponse, MockError> {
        Ok(CoherenceResponse {
            score: self.fixture.coherence.lookup(&req.text, BackendRole::Coherence)?,
        })
    }

    fn semantic(&self, req: &SemanticRequest) -> Result<SemanticResponse, MockError> {
        let fx = &self.fixture.semantic;
        let scores = req
            .candidate_texts
            .iter()
            .map(|t| match fx.mode {
                SemanticMode::Exact => Ok(if *t == req.target_text { 1.0 } else { 0.0 }),
                SemanticMode::Table => fx
                    .table
                    .get(t)
                    .copied()
                    .or(fx.default)
                    .ok_or_else(|| MockError::missing(BackendRole::Semantic, t)),
            })
            .collect::<Result<_, _>>()?;
        Ok(SemanticResponse { scores })
    }
}

fn parse<T: serde::de::DeserializeOwned>(payload: serde_json::Value) -> Result<T, MockError> {
    serde_json::from_value(payload).map_err(|e| MockError::bad_request(format!("payload: {e}")))
}

fn to_value<T: Serialize>(v: T) -> serde_json::Value {
    serde_json::to_value(v).expect("mock responses serialize")
}

/// In-process transport over a [`MockBackend`], counting calls.
pub struct MockTransport {
    backend: Arc<MockBackend>,
    calls: AtomicU64,
}

impl MockTransport {
    pub fn new(backend: Arc<MockBackend>) -> Self {
        Self {
            backend,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for MockTransport {
    fn post(&self, _: &Endpoint, role: BackendRole, body: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.backend.handle(role, body).map_err(|e| TransportError::Status {
            status: e.status,
            body: String::from_utf8_lossy(&e.body()).into_owned(),
        })
    }
}
