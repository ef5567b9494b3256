//! Prompt corpus ingestion: JSON Lines manifests, RIFF/WAVE decoding and
//! per-candidate sanity checks.
//!
//! A manifest holds one record per line:
//!
//! ```text
//! {"id": "f1_happy_000", "speaker": "f1", "emotion": "happy", "audio": "wav/000.wav", "text": "..."}
//! ```
//!
//! `audio` is resolved relative to the manifest's directory. Loading always
//! scopes the result to a single `(speaker, emotion)` pool, which is the unit
//! every later selection stage works on.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Cursor};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MIN_SAMPLE_RATE_HZ: u32 = 8_000;
pub const MAX_SAMPLE_RATE_HZ: u32 = 192_000;

/// Emotion categories a prompt can be labelled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Happy,
    Sad,
    Anger,
    Surprised,
    Comfort,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 5] = [
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Anger,
        EmotionLabel::Surprised,
        EmotionLabel::Comfort,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Surprised => "surprised",
            EmotionLabel::Comfort => "comfort",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown emotion label {0:?} (expected one of happy, sad, anger, surprised, comfort)")]
pub struct UnknownEmotion(pub String);

impl FromStr for EmotionLabel {
    type Err = UnknownEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmotionLabel::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| UnknownEmotion(s.to_string()))
    }
}

/// One corpus entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: String,
    pub speaker_id: String,
    pub emotion: EmotionLabel,
    pub audio_path: PathBuf,
    pub transcript: String,
    /// Filled in by [`decode_audio`].
    pub duration_s: Option<f64>,
}

/// Mono PCM audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    sample_rate_hz: u32,
    samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn new(sample_rate_hz: u32, samples: Vec<f32>) -> Result<Self, AudioError> {
        if !(MIN_SAMPLE_RATE_HZ..=MAX_SAMPLE_RATE_HZ).contains(&sample_rate_hz) {
            return Err(AudioError::UnsupportedSampleRate(sample_rate_hz));
        }
        if samples.is_empty() {
            return Err(AudioError::ZeroLength);
        }
        if let Some(bad) = samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(AudioError::OutOfRange(*bad));
        }
        Ok(Self {
            sample_rate_hz,
            samples,
        })
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Content digest over the sample rate and the little-endian sample bytes.
    ///
    /// Stable across WAV container details, so a 16-bit file and its 32-bit
    /// float re-encoding share a digest.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.sample_rate_hz.to_le_bytes());
        for s in &self.samples {
            hasher.update(s.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..16])
    }
}

/// Ordered candidates sharing one speaker and one emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    speaker_id: String,
    emotion: EmotionLabel,
    candidates: Vec<PromptCandidate>,
}

impl CandidatePool {
    pub fn new(
        speaker_id: impl Into<String>,
        emotion: EmotionLabel,
        candidates: Vec<PromptCandidate>,
    ) -> Result<Self, CorpusError> {
        let speaker_id = speaker_id.into();
        let mut seen = HashSet::new();
        for c in &candidates {
            if c.speaker_id != speaker_id || c.emotion != emotion {
                return Err(CorpusError::MixedPool {
                    id: c.id.clone(),
                    speaker_id: c.speaker_id.clone(),
                    emotion: c.emotion,
                });
            }
            if !seen.insert(c.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: c.id.clone(),
                    line: None,
                });
            }
        }
        Ok(Self {
            speaker_id,
            emotion,
            candidates,
        })
    }

    pub fn speaker_id(&self) -> &str {
        &self.speaker_id
    }

    pub fn emotion(&self) -> EmotionLabel {
        self.emotion
    }

    pub fn candidates(&self) -> &[PromptCandidate] {
        &self.candidates
    }

    pub fn candidates_mut(&mut self) -> &mut [PromptCandidate] {
        &mut self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&PromptCandidate> {
        self.candidates.iter().find(|c| c.id == id)
    }

    /// Keeps candidates for which `keep` holds, preserving pool order.
    pub fn filtered(&self, mut keep: impl FnMut(&PromptCandidate) -> bool) -> CandidatePool {
        CandidatePool {
            speaker_id: self.speaker_id.clone(),
            emotion: self.emotion,
            candidates: self.candidates.iter().filter(|c| keep(c)).cloned().collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate candidate id {id:?}{}", line.map(|l| format!(" at manifest line {l}")).unwrap_or_default())]
    DuplicateId { id: String, line: Option<usize> },
    #[error("no manifest records for speaker {speaker_id:?} with emotion {emotion}")]
    EmptyPool {
        speaker_id: String,
        emotion: EmotionLabel,
    },
    #[error("candidate {id:?} ({speaker_id}, {emotion}) does not belong to this pool")]
    MixedPool {
        id: String,
        speaker_id: String,
        emotion: EmotionLabel,
    },
}

#[derive(Debug, Deserialize)]
struct ManifestRecord {
    id: String,
    speaker: String,
    emotion: String,
    audio: PathBuf,
    text: String,
}

/// Loads the `(speaker_id, emotion)` pool from a JSON Lines manifest.
///
/// Blank lines are skipped. Line numbers in errors are 1-based. Ids must be
/// unique across the whole file, not just within the selected pool.
pub fn load_manifest(
    path: &Path,
    speaker_id: &str,
    emotion: EmotionLabel,
) -> Result<CandidatePool, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    let mut total = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let record_emotion: EmotionLabel =
            record.emotion.parse().map_err(|e: UnknownEmotion| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.id.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "empty id".into(),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: record.id,
                line: Some(line_no),
            });
        }
        total += 1;
        if record.speaker == speaker_id && record_emotion == emotion {
            let audio_path = if record.audio.is_absolute() {
                record.audio
            } else {
                base.join(record.audio)
            };
            candidates.push(PromptCandidate {
                id: record.id,
                speaker_id: record.speaker,
                emotion: record_emotion,
                audio_path,
                transcript: record.text,
                duration_s: None,
            });
        }
    }

    if candidates.is_empty() {
        return Err(CorpusError::EmptyPool {
            speaker_id: speaker_id.to_string(),
            emotion,
        });
    }
    log::info!(
        "manifest {}: {} of {} records match ({speaker_id}, {emotion})",
        path.display(),
        candidates.len(),
        total
    );
    CandidatePool::new(speaker_id, emotion, candidates)
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read audio {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt WAV data: {0}")]
    Corrupt(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedSampleRate(u32),
    #[error("audio has zero length")]
    ZeroLength,
    #[error("sample {0} outside [-1, 1]")]
    OutOfRange(f32),
}

/// Decodes the candidate's audio to mono and records its duration.
pub fn decode_audio(candidate: &mut PromptCandidate) -> Result<AudioBuffer, AudioError> {
    let bytes = fs::read(&candidate.audio_path).map_err(|source| AudioError::Io {
        path: candidate.audio_path.clone(),
        source,
    })?;
    let audio = decode_wav_bytes(&bytes)?;
    candidate.duration_s = Some(audio.duration_s());
    Ok(audio)
}

/// Decodes RIFF/WAVE bytes (16-bit integer or 32-bit float PCM), averaging
/// channels to mono.
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(AudioError::Corrupt("zero channels".into()));
    }
    if !(MIN_SAMPLE_RATE_HZ..=MAX_SAMPLE_RATE_HZ).contains(&spec.sample_rate) {
        return Err(AudioError::UnsupportedSampleRate(spec.sample_rate));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v.clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "{bits}-bit {format:?}"
            )))
        }
    };
    if !interleaved.len().is_multiple_of(channels) {
        return Err(AudioError::Corrupt("partial final frame".into()));
    }
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioBuffer::new(spec.sample_rate, mono)
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) => AudioError::Corrupt(e.to_string()),
        hound::Error::Unsupported => AudioError::UnsupportedEncoding("unsupported WAV feature".into()),
        other => AudioError::Corrupt(other.to_string()),
    }
}

/// Sample encodings [`encode_wav_bytes`] can write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcmEncoding {
    Int16,
    Float32,
}

pub fn encode_wav_bytes(audio: &AudioBuffer, encoding: PcmEncoding) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate_hz,
        bits_per_sample: match encoding {
            PcmEncoding::Int16 => 16,
            PcmEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            PcmEncoding::Int16 => hound::SampleFormat::Int,
            PcmEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        // Writing into memory cannot fail.
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory WAV writer");
        for &s in &audio.samples {
            match encoding {
                PcmEncoding::Int16 => {
                    let q = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q).expect("in-memory WAV write");
                }
                PcmEncoding::Float32 => writer.write_sample(s).expect("in-memory WAV write"),
            }
        }
        writer.finalize().expect("in-memory WAV finalize");
    }
    cursor.into_inner()
}

pub fn write_wav(path: &Path, audio: &AudioBuffer, encoding: PcmEncoding) -> std::io::Result<()> {
    fs::write(path, encode_wav_bytes(audio, encoding))
}

/// Thresholds used by [`validate_candidate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationLimits {
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub max_clipping_fraction: f64,
}

impl Default for ValidationLimits {
    fn default() -> Self {
        Self {
            min_duration_s: 0.5,
            max_duration_s: 30.0,
            max_clipping_fraction: 0.01,
        }
    }
}

/// Samples at or above this magnitude count as clipped; covers full-scale
/// 16-bit values, which decode to 32767/32768.
pub const CLIP_LEVEL: f32 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum ValidationFlag {
    EmptyTranscript,
    DurationOutOfRange { duration_s: f64 },
    Clipping { fraction: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub flags: Vec<ValidationFlag>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn has_empty_transcript(&self) -> bool {
        self.flags.contains(&ValidationFlag::EmptyTranscript)
    }
}

pub fn validate_candidate(
    candidate: &PromptCandidate,
    audio: &AudioBuffer,
    limits: &ValidationLimits,
) -> ValidationReport {
    let mut flags = Vec::new();
    if candidate.transcript.trim().is_empty() {
        flags.push(ValidationFlag::EmptyTranscript);
    }
    let duration_s = audio.duration_s();
    if duration_s < limits.min_duration_s || duration_s > limits.max_duration_s {
        flags.push(ValidationFlag::DurationOutOfRange { duration_s });
    }
    let clipped = audio.samples.iter().filter(|s| s.abs() >= CLIP_LEVEL).count();
    let fraction = clipped as f64 / audio.len() as f64;
    if fraction > limits.max_clipping_fraction {
        flags.push(ValidationFlag::Clipping { fraction });
    }
    ValidationReport { flags }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn candidate(id: &str, text: &str) -> PromptCandidate {
        PromptCandidate {
            id: id.into(),
            speaker_id: "f1".into(),
            emotion: EmotionLabel::Happy,
            audio_path: PathBuf::from("x.wav"),
            transcript: text.into(),
            duration_s: None,
        }
    }

    fn write_manifest(lines: &[String]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let mut f = fs::File::create(dir.path().join("manifest.jsonl")).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        dir
    }

    fn record(id: &str, speaker: &str, emotion: &str) -> String {
        serde_json::json!({"id": id, "speaker": speaker, "emotion": emotion, "audio": format!("{id}.wav"), "text": "hello"})
            .to_string()
    }

    #[test]
    fn emotion_parsing_is_closed() {
        for e in EmotionLabel::ALL {
            assert_eq!(e.as_str().parse::<EmotionLabel>().unwrap(), e);
        }
        assert!("neutral".parse::<EmotionLabel>().is_err());
        assert!("Happy".parse::<EmotionLabel>().is_err());
    }

    #[test]
    fn manifest_filters_to_one_pool() {
        // one speaker, 4 emotions x 200 records
        let records: Vec<String> = ["happy", "sad", "anger", "surprised"]
            .iter()
            .flat_map(|e| (0..200).map(move |i| record(&format!("x_{e}_{i:03}"), "f1", e)))
            .collect();
        let dir = write_manifest(&records);
        let pool = load_manifest(&dir.path().join("manifest.jsonl"), "f1", EmotionLabel::Happy).unwrap();
        assert_eq!(pool.len(), 200);
        assert!(pool
            .candidates()
            .iter()
            .all(|c| c.speaker_id == "f1" && c.emotion == EmotionLabel::Happy));
        assert_eq!(pool.candidates()[0].id, "x_happy_000");
        assert_eq!(pool.candidates()[199].id, "x_happy_199");
        assert_eq!(pool.candidates()[0].audio_path, dir.path().join("x_happy_000.wav"));

        let mixed: Vec<String> = ["f1", "m2"]
            .iter()
            .flat_map(|s| (0..50).map(move |i| record(&format!("{s}_sad_{i:03}"), s, "sad")))
            .collect();
        let dir = write_manifest(&mixed);
        let pool = load_manifest(&dir.path().join("manifest.jsonl"), "m2", EmotionLabel::Sad).unwrap();
        assert_eq!(pool.len(), 50);
    }

    #[test]
    fn empty_manifest_is_empty_pool() {
        let dir = write_manifest(&[]);
        let err = load_manifest(&dir.path().join("manifest.jsonl"), "f1", EmotionLabel::Happy)
            .unwrap_err();
        assert!(matches!(err, CorpusError::EmptyPool { .. }));
    }

    #[test]
    fn duplicate_id_is_named() {
        let dir = write_manifest(&[
            record("a", "f1", "happy"),
            record("b", "f1", "happy"),
            record("a", "f1", "sad"),
        ]);
        let err = load_manifest(&dir.path().join("manifest.jsonl"), "f1", EmotionLabel::Happy)
            .unwrap_err();
        match err {
            CorpusError::DuplicateId { id, line } => {
                assert_eq!(id, "a");
                assert_eq!(line, Some(3));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = write_manifest(&[
            record("a", "f1", "happy"),
            "{\"id\": \"b\", \"speaker\": \"f1\"".into(),
        ]);
        let err = load_manifest(&dir.path().join("manifest.jsonl"), "f1", EmotionLabel::Happy)
            .unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }), "{err}");

        let dir = write_manifest(&[record("a", "f1", "neutral")]);
        let err = load_manifest(&dir.path().join("manifest.jsonl"), "f1", EmotionLabel::Happy)
            .unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn decode_three_second_mono() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<f32> = (0..48_000)
            .map(|i| 0.3 * (i as f32 * 0.01).sin())
            .collect();
        let audio = AudioBuffer::new(16_000, samples).unwrap();
        let path = dir.path().join("a.wav");
        write_wav(&path, &audio, PcmEncoding::Int16).unwrap();
        let mut c = candidate("a", "text");
        c.audio_path = path;
        let decoded = decode_audio(&mut c).unwrap();
        assert_eq!(decoded.len(), 48_000);
        assert_eq!(decoded.sample_rate_hz(), 16_000);
        assert_eq!(c.duration_s, Some(3.0));
    }

    #[test]
    fn stereo_is_averaged() {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
            for _ in 0..1600 {
                w.write_sample(16384i16).unwrap();
                w.write_sample(-16384i16).unwrap();
            }
            w.finalize().unwrap();
        }
        let audio = decode_wav_bytes(&cursor.into_inner()).unwrap();
        assert_eq!(audio.len(), 1600);
        assert!(audio.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn truncated_header_is_corrupt() {
        let audio = AudioBuffer::new(16_000, vec![0.1; 100]).unwrap();
        let bytes = encode_wav_bytes(&audio, PcmEncoding::Int16);
        let err = decode_wav_bytes(&bytes[..20]).unwrap_err();
        assert!(matches!(err, AudioError::Corrupt(_)), "{err}");
    }

    #[test]
    fn zero_length_and_unsupported_encodings() {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        hound::WavWriter::new(&mut cursor, spec).unwrap().finalize().unwrap();
        assert!(matches!(
            decode_wav_bytes(&cursor.into_inner()),
            Err(AudioError::ZeroLength)
        ));

        let spec = hound::WavSpec {
            bits_per_sample: 24,
            ..spec
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
            w.write_sample(5i32).unwrap();
            w.finalize().unwrap();
        }
        assert!(matches!(
            decode_wav_bytes(&cursor.into_inner()),
            Err(AudioError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn float_wav_roundtrip_is_exact() {
        let samples: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.37).sin() * 0.9).collect();
        let audio = AudioBuffer::new(22_050, samples).unwrap();
        let back = decode_wav_bytes(&encode_wav_bytes(&audio, PcmEncoding::Float32)).unwrap();
        assert_eq!(back, audio);
        assert_eq!(back.digest(), audio.digest());
    }

    #[test]
    fn validation_flags() {
        let clean = AudioBuffer::new(16_000, vec![0.2; 48_000]).unwrap();
        assert!(validate_candidate(&candidate("a", "hi"), &clean, &ValidationLimits::default())
            .is_clean());

        let short = AudioBuffer::new(16_000, vec![0.2; 3_200]).unwrap();
        let report = validate_candidate(&candidate("a", "hi"), &short, &ValidationLimits::default());
        assert!(matches!(
            report.flags.as_slice(),
            [ValidationFlag::DurationOutOfRange { .. }]
        ));

        let mut samples = vec![0.2; 48_000];
        for s in samples.iter_mut().step_by(20) {
            *s = -1.0;
        }
        let clipped = AudioBuffer::new(16_000, samples).unwrap();
        let report =
            validate_candidate(&candidate("a", "hi"), &clipped, &ValidationLimits::default());
        match report.flags.as_slice() {
            [ValidationFlag::Clipping { fraction }] => assert!((fraction - 0.05).abs() < 1e-12),
            other => panic!("{other:?}"),
        }

        let report = validate_candidate(&candidate("a", "  "), &clean, &ValidationLimits::default());
        assert!(report.has_empty_transcript());
    }

    #[test]
    fn buffer_invariants() {
        assert!(matches!(AudioBuffer::new(16_000, vec![]), Err(AudioError::ZeroLength)));
        assert!(matches!(
            AudioBuffer::new(4_000, vec![0.0]),
            Err(AudioError::UnsupportedSampleRate(4_000))
        ));
        assert!(matches!(
            AudioBuffer::new(16_000, vec![1.5]),
            Err(AudioError::OutOfRange(_))
        ));
    }
}
