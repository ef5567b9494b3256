//! Wire schemas for every scorer role.
//!
//! Every request is an envelope `{"role", "model_id", "payload"}` POSTed to
//! `/v1/<endpoint>`; every successful response is `{"role", "model_id",
//! "result"}`. Errors come back with a non-2xx status and
//! `{"error": {"code", "message"}}`. Audio travels as base64 RIFF/WAVE.
//! See `docs/protocol.md` for the field-by-field reference.

use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendRole};
use crate::corpus::{decode_wav_bytes, encode_wav_bytes, AudioBuffer, AudioError, PcmEncoding};

pub const QUALITY_RANGE: (f64, f64) = (1.0, 5.0);
pub const UNIT_RANGE: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Serialize)]
pub struct RequestEnvelope<'a, P: Serialize> {
    pub role: &'a str,
    pub model_id: &'a str,
    pub payload: &'a P,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRequestEnvelope {
    pub role: String,
    pub model_id: String,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseEnvelope<R> {
    pub role: String,
    pub model_id: String,
    pub result: R,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

/// A request payload bound to one role and its response schema.
pub trait RoleCall: Serialize {
    type Response: Serialize + DeserializeOwned;

    fn role(&self) -> BackendRole;

    /// Range and shape checks beyond what deserialization enforces.
    fn validate(&self, response: &Self::Response) -> Result<(), BackendError>;
}

pub fn encode_audio(audio: &AudioBuffer) -> String {
    base64::engine::general_purpose::STANDARD.encode(encode_wav_bytes(audio, PcmEncoding::Float32))
}

pub fn decode_audio_field(field: &str) -> Result<AudioBuffer, AudioError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(field)
        .map_err(|e| AudioError::Corrupt(format!("base64: {e}")))?;
    decode_wav_bytes(&bytes)
}

pub(crate) fn check_range(
    role: BackendRole,
    field: &str,
    value: f64,
    (min, max): (f64, f64),
) -> Result<(), BackendError> {
    if value.is_finite() && (min..=max).contains(&value) {
        Ok(())
    } else {
        Err(BackendError::Range {
            role,
            field: field.to_string(),
            value,
            min,
            max,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsRequest {
    /// base64 WAV of the prompt speech.
    pub prompt_audio: String,
    pub prompt_text: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtsResponse {
    pub audio: String,
}

impl RoleCall for TtsRequest {
    type Response = TtsResponse;

    fn role(&self) -> BackendRole {
        BackendRole::Tts
    }

    fn validate(&self, response: &TtsResponse) -> Result<(), BackendError> {
        decode_audio_field(&response.audio)
            .map(|_| ())
            .map_err(|e| BackendError::Schema {
                role: BackendRole::Tts,
                detail: format!("field `audio`: {e}"),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrRequest {
    pub audio: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrResponse {
    pub text: String,
}

impl RoleCall for AsrRequest {
    type Response = AsrResponse;

    fn role(&self) -> BackendRole {
        BackendRole::Asr
    }

    fn validate(&self, _: &AsrResponse) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Shared by the two speaker roles and the emotion role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    #[serde(skip)]
    pub role: EmbedRole,
    pub audio: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbedRole {
    #[default]
    SpeakerA,
    SpeakerB,
    Emotion,
}

impl EmbedRole {
    pub const ALL: [EmbedRole; 3] = [EmbedRole::SpeakerA, EmbedRole::SpeakerB, EmbedRole::Emotion];

    pub fn backend_role(self) -> BackendRole {
        match self {
            EmbedRole::SpeakerA => BackendRole::SpeakerEmbedA,
            EmbedRole::SpeakerB => BackendRole::SpeakerEmbedB,
            EmbedRole::Emotion => BackendRole::EmotionEmbed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
}

impl RoleCall for EmbedRequest {
    type Response = EmbedResponse;

    fn role(&self) -> BackendRole {
        self.role.backend_role()
    }

    fn validate(&self, response: &EmbedResponse) -> Result<(), BackendError> {
        let role = self.role();
        if response.embedding.is_empty() {
            return Err(BackendError::Schema {
                role,
                detail: "field `embedding` is empty".into(),
            });
        }
        if let Some(v) = response.embedding.iter().find(|v| !v.is_finite()) {
            return Err(BackendError::Range {
                role,
                field: "embedding".into(),
                value: *v,
                min: f64::MIN,
                max: f64::MAX,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRequest {
    pub audio: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityResponse {
    pub mos: f64,
}

impl RoleCall for QualityRequest {
    type Response = QualityResponse;

    fn role(&self) -> BackendRole {
        BackendRole::Quality
    }

    fn validate(&self, response: &QualityResponse) -> Result<(), BackendError> {
        check_range(BackendRole::Quality, "mos", response.mos, QUALITY_RANGE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceRequest {
    pub text: String,
    pub emotion: String,
    pub rubric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceResponse {
    pub score: f64,
}

impl RoleCall for CoherenceRequest {
    type Response = CoherenceResponse;

    fn role(&self) -> BackendRole {
        BackendRole::Coherence
    }

    fn validate(&self, response: &CoherenceResponse) -> Result<(), BackendError> {
        check_range(BackendRole::Coherence, "score", response.score, UNIT_RANGE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRequest {
    pub target_text: String,
    pub candidate_texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticResponse {
    pub scores: Vec<f64>,
}

impl RoleCall for SemanticRequest {
    type Response = SemanticResponse;

    fn role(&self) -> BackendRole {
        BackendRole::Semantic
    }

    fn validate(&self, response: &SemanticResponse) -> Result<(), BackendError> {
        if response.scores.len() != self.candidate_texts.len() {
            return Err(BackendError::Schema {
                role: BackendRole::Semantic,
                detail: format!(
                    "field `scores` has {} entries for {} candidate texts",
                    response.scores.len(),
                    self.candidate_texts.len()
                ),
            });
        }
        for s in &response.scores {
            check_range(BackendRole::Semantic, "scores", *s, UNIT_RANGE)?;
        }
        Ok(())
    }
}

/// Parses and validates a response body for `request`.
pub fn parse_response<R: RoleCall>(
    request: &R,
    model_id: &str,
    body: &[u8],
) -> Result<R::Response, BackendError> {
    let role = request.role();
    let envelope: ResponseEnvelope<serde_json::Value> =
        serde_json::from_slice(body).map_err(|e| BackendError::Schema {
            role,
            detail: format!("response envelope: {e}"),
        })?;
    if envelope.role != role.as_str() {
        return Err(BackendError::Schema {
            role,
            detail: format!("response for role {:?}", envelope.role),
        });
    }
    if envelope.model_id != model_id {
        return Err(BackendError::Schema {
            role,
            detail: format!(
                "response from model {:?}, requested {model_id:?}",
                envelope.model_id
            ),
        });
    }
    let result: R::Response =
        serde_json::from_value(envelope.result).map_err(|e| BackendError::Schema {
            role,
            detail: e.to_string(),
        })?;
    request.validate(&result)?;
    Ok(result)
}
