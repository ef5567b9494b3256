//! Selection configuration: defaults, flat config files, environment
//! overrides and the snapshot hash stored with every result.
//!
//! The config file is flat TOML (`key = value` lines, `#` comments); every
//! key in [`CONFIG_KEYS`] can also be set by a CLI flag of the same name.
//! Precedence, lowest first: defaults, config file, environment, flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::http::HttpTransport;
use crate::backends::mock::{MockBackend, MockFixture, MockTransport};
use crate::backends::{BackendClient, BackendRole, BackendSet, RequestCache, Transport};
use crate::clustering::{EmotionPolarity, Polarity};
use crate::corpus::{EmotionLabel, ValidationLimits};
use crate::modelperf::{ProbeSetError, ProbeTextSet, DEFAULT_PROBE_FAILURE_TOLERANCE};
use crate::pitch::PitchConfig;
use crate::quality::BUILTIN_RUBRIC;

pub const ENV_BACKEND_URL: &str = "EMOPRO_BACKEND_URL";
pub const ENV_CACHE_DIR: &str = "EMOPRO_CACHE_DIR";
pub const ENV_SEED: &str = "EMOPRO_SEED";
pub const ENV_BEARER_TOKEN: &str = "EMOPRO_BEARER_TOKEN";

/// Every accepted key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("num_clusters", "k-means clusters per pool"),
    ("m", "pitch clusters kept"),
    ("n_percent", "percent kept by the quality gate"),
    ("k", "prompts kept by the static stage"),
    ("seed", "k-means seed"),
    ("polarity_happy", "high or low"),
    ("polarity_sad", "high or low"),
    ("polarity_anger", "high or low"),
    ("polarity_surprised", "high or low"),
    ("polarity_comfort", "high or low"),
    ("frame_size_s", "pitch analysis frame length in seconds"),
    ("hop_s", "pitch analysis hop in seconds"),
    ("f0_min", "lowest F0 in Hz"),
    ("f0_max", "highest F0 in Hz"),
    ("yin_threshold", "YIN dip threshold"),
    ("min_voiced", "voiced frames required for pitch stats"),
    ("min_duration_s", "validation: shortest clip"),
    ("max_duration_s", "validation: longest clip"),
    ("max_clipping_fraction", "validation: clipped-sample fraction"),
    ("probe_texts", "probe text file (builtin when unset)"),
    ("rubric", "coherence rubric file (builtin when unset)"),
    ("probe_failure_tolerance", "failed-probe fraction that drops a candidate"),
    ("persist_probe_audio", "write synthesized probes under the cache dir"),
    ("backend_url", "scorer base URL"),
    ("backend_timeout_s", "per-request timeout"),
    ("backend_retries", "retries after the first attempt"),
    ("backend_backoff_ms", "first retry delay, doubled per retry"),
    ("max_in_flight", "concurrent backend requests"),
    ("mock_fixture", "serve every role from this mock fixture in-process"),
    ("cache_dir", "persistent response cache"),
    ("model_tts", "model id for the tts role"),
    ("model_asr", "model id for the asr role"),
    ("model_speaker_a", "model id for the first speaker embedding"),
    ("model_speaker_b", "model id for the second speaker embedding"),
    ("model_emotion", "model id for the emotion embedding"),
    ("model_quality", "model id for the quality role"),
    ("model_coherence", "model id for the coherence role"),
    ("model_semantic", "model id for the semantic role"),
];

/// Keys that do not affect selection outcomes and stay out of the snapshot hash.
const OPERATIONAL_KEYS: &[&str] = &[
    "backend_url",
    "backend_timeout_s",
    "backend_retries",
    "backend_backoff_ms",
    "max_in_flight",
    "cache_dir",
    "persist_probe_audio",
];

const MODEL_KEYS: [(&str, BackendRole, &str); 8] = [
    ("model_tts", BackendRole::Tts, "cosyvoice-300m"),
    ("model_asr", BackendRole::Asr, "paraformer-zh"),
    ("model_speaker_a", BackendRole::SpeakerEmbedA, "resemblyzer"),
    ("model_speaker_b", BackendRole::SpeakerEmbedB, "wavlm-base-plus-sv"),
    ("model_emotion", BackendRole::EmotionEmbed, "emotion2vec-base"),
    ("model_quality", BackendRole::Quality, "dnsmos-p835"),
    ("model_coherence", BackendRole::Coherence, "gpt-4"),
    ("model_semantic", BackendRole::Semantic, "stsb-distilroberta-base"),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: cannot parse {value:?}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("config file {path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("probe texts: {0}")]
    ProbeSet(#[from] ProbeSetError),
    #[error("no backend configured: set backend_url, {ENV_BACKEND_URL} or mock_fixture")]
    NoBackend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub num_clusters: usize,
    pub m: usize,
    pub n_percent: f64,
    pub k: usize,
    pub seed: u64,
    pub polarity: EmotionPolarity,
    pub pitch: PitchConfig,
    pub validation: ValidationLimits,
    pub probe_texts: Option<PathBuf>,
    pub rubric: Option<PathBuf>,
    pub probe_failure_tolerance: f64,
    pub persist_probe_audio: bool,
    pub backend_url: Option<String>,
    pub backend_timeout_s: f64,
    pub backend_retries: u32,
    pub backend_backoff_ms: u64,
    pub max_in_flight: usize,
    pub mock_fixture: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub models: BTreeMap<BackendRole, String>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            num_clusters: 10,
            m: 3,
            n_percent: 15.0,
            k: 5,
            seed: 0,
            polarity: EmotionPolarity::default(),
            pitch: PitchConfig::default(),
            validation: ValidationLimits::default(),
            probe_texts: None,
            rubric: None,
            probe_failure_tolerance: DEFAULT_PROBE_FAILURE_TOLERANCE,
            persist_probe_audio: false,
            backend_url: None,
            backend_timeout_s: 60.0,
            backend_retries: 3,
            backend_backoff_ms: 200,
            max_in_flight: 8,
            mock_fixture: None,
            cache_dir: None,
            models: MODEL_KEYS.iter().map(|(_, r, id)| (*r, id.to_string())).collect(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn opt_string(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_string())
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl SelectionConfig {
    /// Sets one key from its textual value. An empty value clears optional keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if let Some(emotion) = key.strip_prefix("polarity_") {
            let e: EmotionLabel = emotion.parse().map_err(|_| ConfigError::UnknownKey(key.to_string()))?;
            let p: Polarity = parse_value(key, value)?;
            self.polarity.set(e, p);
            return Ok(());
        }
        if let Some((_, role, _)) = MODEL_KEYS.iter().find(|(k, _, _)| *k == key) {
            self.models.insert(*role, value.trim().to_string());
            return Ok(());
        }
        match key {
            "num_clusters" => self.num_clusters = parse_value(key, value)?,
            "m" => self.m = parse_value(key, value)?,
            "n_percent" => self.n_percent = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "frame_size_s" => self.pitch.frame_size_s = parse_value(key, value)?,
            "hop_s" => self.pitch.hop_s = parse_value(key, value)?,
            "f0_min" => self.pitch.f0_min = parse_value(key, value)?,
            "f0_max" => self.pitch.f0_max = parse_value(key, value)?,
            "yin_threshold" => self.pitch.yin_threshold = parse_value(key, value)?,
            "min_voiced" => self.pitch.min_voiced = parse_value(key, value)?,
            "min_duration_s" => self.validation.min_duration_s = parse_value(key, value)?,
            "max_duration_s" => self.validation.max_duration_s = parse_value(key, value)?,
            "max_clipping_fraction" => self.validation.max_clipping_fraction = parse_value(key, value)?,
            "probe_texts" => self.probe_texts = opt_path(value),
            "rubric" => self.rubric = opt_path(value),
            "probe_failure_tolerance" => self.probe_failure_tolerance = parse_value(key, value)?,
            "persist_probe_audio" => self.persist_probe_audio = parse_value(key, value)?,
            "backend_url" => self.backend_url = opt_string(value),
            "backend_timeout_s" => self.backend_timeout_s = parse_value(key, value)?,
            "backend_retries" => self.backend_retries = parse_value(key, value)?,
            "backend_backoff_ms" => self.backend_backoff_ms = parse_value(key, value)?,
            "max_in_flight" => self.max_in_flight = parse_value(key, value)?,
            "mock_fixture" => self.mock_fixture = opt_path(value),
            "cache_dir" => self.cache_dir = opt_path(value),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in [`CONFIG_KEYS`] order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        CONFIG_KEYS
            .iter()
            .map(|(key, _)| (key.to_string(), self.get(key).expect("listed keys resolve")))
            .collect()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(emotion) = key.strip_prefix("polarity_") {
            let e: EmotionLabel = emotion.parse().ok()?;
            return Some(self.polarity.get(e).to_string());
        }
        if let Some((_, role, _)) = MODEL_KEYS.iter().find(|(k, _, _)| *k == key) {
            return Some(self.models.get(role).cloned().unwrap_or_default());
        }
        Some(match key {
            "num_clusters" => self.num_clusters.to_string(),
            "m" => self.m.to_string(),
            "n_percent" => self.n_percent.to_string(),
            "k" => self.k.to_string(),
            "seed" => self.seed.to_string(),
            "frame_size_s" => self.pitch.frame_size_s.to_string(),
            "hop_s" => self.pitch.hop_s.to_string(),
            "f0_min" => self.pitch.f0_min.to_string(),
            "f0_max" => self.pitch.f0_max.to_string(),
            "yin_threshold" => self.pitch.yin_threshold.to_string(),
            "min_voiced" => self.pitch.min_voiced.to_string(),
            "min_duration_s" => self.validation.min_duration_s.to_string(),
            "max_duration_s" => self.validation.max_duration_s.to_string(),
            "max_clipping_fraction" => self.validation.max_clipping_fraction.to_string(),
            "probe_texts" => path_str(&self.probe_texts),
            "rubric" => path_str(&self.rubric),
            "probe_failure_tolerance" => self.probe_failure_tolerance.to_string(),
            "persist_probe_audio" => self.persist_probe_audio.to_string(),
            "backend_url" => self.backend_url.clone().unwrap_or_default(),
            "backend_timeout_s" => self.backend_timeout_s.to_string(),
            "backend_retries" => self.backend_retries.to_string(),
            "backend_backoff_ms" => self.backend_backoff_ms.to_string(),
            "max_in_flight" => self.max_in_flight.to_string(),
            "mock_fixture" => path_str(&self.mock_fixture),
            "cache_dir" => path_str(&self.cache_dir),
            _ => return None,
        })
    }

    /// Applies a flat TOML document. Relative paths resolve against `base_dir`.
    pub fn apply_toml(&mut self, text: &str, base_dir: Option<&Path>, origin: &Path) -> Result<(), ConfigError> {
        let file_err = |reason: String| ConfigError::File {
            path: origin.to_path_buf(),
            reason,
        };
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| file_err(e.to_string()))?;
        for (key, value) in table {
            let text = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => return Err(file_err(format!("`{key}` must be a scalar, got {}", other.type_str()))),
            };
            let text = match (key.as_str(), base_dir) {
                ("probe_texts" | "rubric" | "mock_fixture" | "cache_dir", Some(base)) if !text.is_empty() => {
                    base.join(&text).display().to_string()
                }
                _ => text,
            };
            self.set(&key, &text)?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        self.apply_toml(&text, path.parent(), path)
    }

    /// Applies `EMOPRO_BACKEND_URL`, `EMOPRO_CACHE_DIR` and `EMOPRO_SEED`.
    pub fn apply_env_from(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for (var, key) in [(ENV_BACKEND_URL, "backend_url"), (ENV_CACHE_DIR, "cache_dir"), (ENV_SEED, "seed")] {
            if let Some(v) = lookup(var) {
                self.set(key, &v)?;
            }
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_env_from(|k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.num_clusters == 0 {
            return invalid("num_clusters must be at least 1".into());
        }
        if self.m == 0 || self.m > self.num_clusters {
            return invalid(format!("m must lie in [1, num_clusters={}], got {}", self.num_clusters, self.m));
        }
        if !(self.n_percent > 0.0 && self.n_percent <= 100.0) {
            return invalid(format!("n_percent must lie in (0, 100], got {}", self.n_percent));
        }
        if self.k == 0 {
            return invalid("k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.probe_failure_tolerance) {
            return invalid("probe_failure_tolerance must lie in [0, 1]".into());
        }
        if !self.backend_timeout_s.is_finite() || self.backend_timeout_s <= 0.0 {
            return invalid("backend_timeout_s must be positive".into());
        }
        self.pitch.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn probe_set(&self) -> Result<ProbeTextSet, ConfigError> {
        match &self.probe_texts {
            None => Ok(ProbeTextSet::builtin()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                Ok(ProbeTextSet::parse(&text)?)
            }
        }
    }

    pub fn rubric_text(&self) -> Result<String, ConfigError> {
        match &self.rubric {
            None => Ok(BUILTIN_RUBRIC.to_string()),
            Some(path) => std::fs::read_to_string(path).map_err(|e| ConfigError::File {
                path: path.clone(),
                reason: e.to_string(),
            }),
        }
    }

    /// Hash of every outcome-relevant key plus the probe and rubric contents.
    pub fn snapshot_hash(&self, probe_hash: &str, rubric_hash: &str) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_kv() {
            if OPERATIONAL_KEYS.contains(&k.as_str()) {
                continue;
            }
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.update(format!("probe_set={probe_hash}\nrubric={rubric_hash}\n").as_bytes());
        hex::encode(h.finalize())
    }

    pub fn backend_set(&self) -> BackendSet {
        let base = self.backend_url.clone().unwrap_or_else(|| "mock://in-process".into());
        let mut set = BackendSet::uniform(&base, &self.models, self.backend_timeout_s, self.backend_retries);
        set.mock = self.mock_fixture.is_some();
        set.backoff_base_ms = self.backend_backoff_ms;
        set.max_in_flight = self.max_in_flight;
        set.bearer_token = std::env::var(ENV_BEARER_TOKEN).ok().filter(|t| !t.is_empty());
        set
    }

    /// Client for the configured backends: the in-process mock when
    /// `mock_fixture` is set, HTTP otherwise.
    pub fn build_client(&self) -> Result<BackendClient, ConfigError> {
        let set = self.backend_set();
        let transport: Arc<dyn Transport> = match (&self.mock_fixture, &self.backend_url) {
            (Some(path), _) => {
                let fixture = load_fixture(path)?;
                Arc::new(MockTransport::new(Arc::new(MockBackend::new(fixture))))
            }
            (None, Some(_)) => Arc::new(HttpTransport::new(set.bearer_token.clone())),
            (None, None) => return Err(ConfigError::NoBackend),
        };
        let cache = match &self.cache_dir {
            Some(dir) => RequestCache::on_disk(dir).map_err(|e| ConfigError::File {
                path: dir.clone(),
                reason: e.to_string(),
            })?,
            None => RequestCache::in_memory(),
        };
        Ok(BackendClient::new(set, transport, cache))
    }
}

pub fn load_fixture(path: &Path) -> Result<MockFixture, ConfigError> {
    let file_err = |reason: String| ConfigError::File {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SelectionConfig::default();
        assert_eq!((c.num_clusters, c.m, c.n_percent, c.k), (10, 3, 15.0, 5));
        c.validate().unwrap();
        assert_eq!(c.to_kv().len(), CONFIG_KEYS.len());
    }

    #[test]
    fn kv_roundtrip() {
        let mut c = SelectionConfig::default();
        c.set("polarity_anger", "low").unwrap();
        c.set("model_tts", "gpt-sovits").unwrap();
        c.set("cache_dir", "/tmp/x").unwrap();
        let mut again = SelectionConfig::default();
        for (k, v) in c.to_kv() {
            again.set(&k, &v).unwrap();
        }
        assert_eq!(again, c);
    }

    #[test]
    fn errors() {
        let mut c = SelectionConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("polarity_bored", "high"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("m", "three"), Err(ConfigError::BadValue { .. })));
        c.set("m", "11").unwrap();
        assert!(c.validate().is_err());
        let mut c = SelectionConfig::default();
        c.set("n_percent", "0").unwrap();
        assert!(c.validate().is_err());
        let mut c = SelectionConfig::default();
        c.set("k", "0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_file_and_relative_paths() {
        let mut c = SelectionConfig::default();
        let text = "# comment\nm = 4\nn_percent = 20.5\npolarity_sad = \"high\"\nprobe_texts = \"probes.txt\"\npersist_probe_audio = true\n";
        c.apply_toml(text, Some(Path::new("/cfg")), Path::new("/cfg/c.toml")).unwrap();
        assert_eq!(c.m, 4);
        assert_eq!(c.n_percent, 20.5);
        assert_eq!(c.polarity.get(EmotionLabel::Sad), Polarity::High);
        assert_eq!(c.probe_texts, Some(PathBuf::from("/cfg/probes.txt")));
        assert!(c.persist_probe_audio);
        assert!(c.apply_toml("m = [1]", None, Path::new("x")).is_err());
        assert!(c.apply_toml("bogus = 1", None, Path::new("x")).is_err());
    }

    #[test]
    fn env_overrides() {
        let mut c = SelectionConfig::default();
        c.apply_env_from(|k| match k {
            ENV_SEED => Some("42".into()),
            ENV_BACKEND_URL => Some("http://127.0.0.1:9".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.backend_url.as_deref(), Some("http://127.0.0.1:9"));
        assert_eq!(c.cache_dir, None);
    }

    #[test]
    fn hash_tracks_every_outcome_key() {
        let base = SelectionConfig::default();
        let h0 = base.snapshot_hash("p", "r");
        for (key, value) in base.to_kv() {
            let mut c = base.clone();
            let changed = match key.as_str() {
                k if k.starts_with("polarity_") => if value == "high" { "low" } else { "high" }.to_string(),
                "persist_probe_audio" => "true".into(),
                k if k.starts_with("model_") || k.ends_with("_url") => format!("{value}-x"),
                "probe_texts" | "rubric" | "mock_fixture" | "cache_dir" => "/elsewhere".into(),
                "m" => "2".into(),
                _ => format!("{}", value.parse::<f64>().unwrap() + 1.0),
            };
            c.set(&key, &changed).unwrap();
            let moved = c.snapshot_hash("p", "r") != h0;
            assert_eq!(moved, !OPERATIONAL_KEYS.contains(&key.as_str()), "{key}");
        }
        assert_ne!(base.snapshot_hash("p2", "r"), h0);
        assert_ne!(base.snapshot_hash("p", "r2"), h0);
    }

    #[test]
    fn no_backend() {
        assert!(matches!(SelectionConfig::default().build_client(), Err(ConfigError::NoBackend)));
    }
}
