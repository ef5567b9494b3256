//! Synthetic prompt corpus with known answers, for end-to-end checks.
//!
//! 200 one-second FM tones fall into 10 pitch blobs of 20: five mean F0
//! levels crossed with a shallow or a deep vibrato. Candidate `i` belongs to
//! blob `i % 10`. The accompanying mock fixture makes the quality gate and
//! the probe ranking predictable: nine "star" candidates spread over the
//! three highest-pitch deep-vibrato blobs outscore everything else there,
//! and their probe quality degrades with their star rank.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backends::mock::MockFixture;
use crate::corpus::{decode_wav_bytes, encode_wav_bytes, AudioBuffer, EmotionLabel, PcmEncoding};

pub const POOL_SIZE: usize = 200;
pub const BLOBS: usize = 10;
pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const SPEAKER: &str = "spk01";
pub const EMOTION: EmotionLabel = EmotionLabel::Happy;

const MEANS_HZ: [f64; 5] = [120.0, 150.0, 180.0, 210.0, 240.0];
const DEPTHS_HZ: [f64; 2] = [4.0, 40.0];
const VIBRATO_RATE_HZ: f64 = 3.0;
/// Blobs kept for a high-polarity emotion with m = 3: means 240, 210, 180 with deep vibrato.
pub const HIGH_BLOBS: [usize; 3] = [9, 7, 5];
/// ASR drops every n-th character for star rank r (0 = no drops).
const DROP_EVERY: [usize; 9] = [0, 30, 20, 14, 10, 7, 5, 4, 3];
pub const STARS: usize = 9;

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub fixture_path: PathBuf,
    pub fixture: MockFixture,
    pub speaker: String,
    pub emotion: EmotionLabel,
    pub ids: Vec<String>,
    pub transcripts: BTreeMap<String, String>,
    /// Members of [`HIGH_BLOBS`], in pool order.
    pub expected_post_pitch: Vec<String>,
    /// Star candidates, best first.
    pub stars: Vec<String>,
}

impl SyntheticCorpus {
    /// The first `k` stars, which is the expected static Top-k for `k <= 9`.
    pub fn expected_top(&self, k: usize) -> Vec<String> {
        self.stars.iter().take(k).cloned().collect()
    }
}

pub fn blob_of(index: usize) -> usize {
    index % BLOBS
}

pub fn blob_params(blob: usize) -> (f64, f64) {
    (MEANS_HZ[blob / 2], DEPTHS_HZ[blob % 2])
}

/// A vibrato tone: instantaneous frequency `mean + depth * sin(2 pi rate t + phase)`.
pub fn fm_tone(sample_rate_hz: u32, seconds: f64, mean_hz: f64, depth_hz: f64, phase: f64, amp: f64) -> AudioBuffer {
    let sr = f64::from(sample_rate_hz);
    let n = (seconds * sr) as usize;
    let w = std::f64::consts::TAU * VIBRATO_RATE_HZ;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let theta = std::f64::consts::TAU * mean_hz * t - depth_hz / VIBRATO_RATE_HZ * ((w * t + phase).cos() - phase.cos());
            (amp * theta.sin()) as f32
        })
        .collect();
    AudioBuffer::new(sample_rate_hz, samples).expect("tone parameters are valid")
}

fn id_of(i: usize) -> String {
    format!("c{i:03}")
}

/// Writes the WAVs, `manifest.jsonl` and `fixture.json` under `dir`.
pub fn generate(dir: &Path, seed: u64) -> std::io::Result<SyntheticCorpus> {
    let audio_dir = dir.join("audio");
    std::fs::create_dir_all(&audio_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ids: Vec<String> = (0..POOL_SIZE).map(id_of).collect();
    let mut digests = Vec::with_capacity(POOL_SIZE);
    let mut transcripts = BTreeMap::new();
    let mut manifest = String::new();
    for (i, id) in ids.iter().enumerate() {
        let (mean, depth) = blob_params(blob_of(i));
        let mean = mean + rng.random_range(-1.5..1.5);
        let depth = depth * rng.random_range(0.95..1.05);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let tone = fm_tone(SAMPLE_RATE_HZ, 1.0, mean, depth, phase, 0.5);
        let bytes = encode_wav_bytes(&tone, PcmEncoding::Int16);
        digests.push(decode_wav_bytes(&bytes).expect("own encoding decodes").digest());
        std::fs::write(audio_dir.join(format!("{id}.wav")), &bytes)?;

        let transcript = format!("Prompt {id} reads a short cheerful line number {}.", i + 1);
        manifest.push_str(
            &serde_json::json!({
                "id": id,
                "speaker": SPEAKER,
                "emotion": EMOTION.as_str(),
                "audio": format!("audio/{id}.wav"),
                "text": transcript,
            })
            .to_string(),
        );
        manifest.push('\n');
        transcripts.insert(id.clone(), transcript);
    }

    let expected_post_pitch: Vec<String> = (0..POOL_SIZE)
        .filter(|i| HIGH_BLOBS.contains(&blob_of(*i)))
        .map(id_of)
        .collect();
    // three stars per kept blob, interleaved across blobs
    let stars: Vec<String> = (0..STARS).map(|r| id_of(HIGH_BLOBS[r % 3] + BLOBS * (r / 3))).collect();

    let mut fixture = MockFixture {
        seed,
        ..MockFixture::default()
    };
    for (i, id) in ids.iter().enumerate() {
        let (mos, coherence) = match stars.iter().position(|s| s == id) {
            Some(r) => (4.8 - 0.05 * r as f64, 0.95 - 0.01 * r as f64),
            None => (rng.random_range(2.0..4.0), rng.random_range(0.2..0.7)),
        };
        fixture.quality.table.insert(digests[i].clone(), mos);
        fixture.coherence.table.insert(transcripts[id].clone(), coherence);
        fixture.semantic.table.insert(transcripts[id].clone(), 0.1);
    }
    for (r, star) in stars.iter().enumerate() {
        let i: usize = star[1..].parse().expect("numeric id");
        fixture.embedding.drift.insert(digests[i].clone(), 0.05 * (r + 1) as f64);
        if DROP_EVERY[r] > 0 {
            fixture.asr.drop_every.insert(digests[i].clone(), DROP_EVERY[r]);
        }
    }

    let manifest_path = dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest)?;
    let fixture_path = dir.join("fixture.json");
    let mut f = std::fs::File::create(&fixture_path)?;
    f.write_all(&serde_json::to_vec_pretty(&fixture).map_err(std::io::Error::other)?)?;

    Ok(SyntheticCorpus {
        dir: dir.to_path_buf(),
        manifest: manifest_path,
        fixture_path,
        fixture,
        speaker: SPEAKER.to_string(),
        emotion: EMOTION,
        ids,
        transcripts,
        expected_post_pitch,
        stars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pitch::{analyze, PitchConfig};

    #[test]
    fn tone_pitch_matches_design() {
        let cfg = PitchConfig::default();
        let shallow = analyze(&fm_tone(SAMPLE_RATE_HZ, 1.0, 180.0, 4.0, 0.3, 0.5), &cfg).unwrap();
        let deep = analyze(&fm_tone(SAMPLE_RATE_HZ, 1.0, 180.0, 40.0, 0.3, 0.5), &cfg).unwrap();
        assert!((shallow.mean_hz - 180.0).abs() < 2.0, "{shallow:?}");
        assert!((deep.mean_hz - 180.0).abs() < 4.0, "{deep:?}");
        // sinusoidal FM has variance depth^2 / 2
        assert!(shallow.variance_hz2 < 20.0, "{shallow:?}");
        assert!(deep.variance_hz2 > 500.0 && deep.variance_hz2 < 1000.0, "{deep:?}");
    }

    #[test]
    fn stars_are_in_kept_blobs() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(dir.path(), 7).unwrap();
        assert_eq!(c.expected_post_pitch.len(), 60);
        assert_eq!(c.stars.len(), 9);
        assert!(c.stars.iter().all(|s| c.expected_post_pitch.contains(s)));
        assert_eq!(c.ids.len(), 200);
    }
}
