//! Fundamental-frequency tracking and the mean/variance pitch features.
//!
//! F0 is estimated per frame with YIN: the squared difference function is
//! normalized by its cumulative mean, the first dip below the threshold is
//! taken (then followed down to its local minimum) and refined with a
//! parabola through the neighbouring lags. Frames with no dip below the
//! threshold, or whose estimate falls outside `[f0_min, f0_max]`, are
//! unvoiced.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AudioBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchConfig {
    pub frame_size_s: f64,
    pub hop_s: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub yin_threshold: f64,
    pub min_voiced: usize,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            frame_size_s: 0.040,
            hop_s: 0.010,
            f0_min: 60.0,
            f0_max: 500.0,
            yin_threshold: 0.15,
            min_voiced: 10,
        }
    }
}

impl PitchConfig {
    pub fn validate(&self) -> Result<(), PitchError> {
        let bad = |msg: &str| Err(PitchError::InvalidConfig(msg.to_string()));
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max) {
            return bad("require 0 < f0_min < f0_max");
        }
        if !self.hop_s.is_finite() || self.hop_s <= 0.0 {
            return bad("hop_s must be positive");
        }
        // Two periods of the lowest F0 must fit in one frame.
        if self.frame_size_s + 1e-12 < 2.0 / self.f0_min {
            return bad("frame_size_s must cover two periods of f0_min");
        }
        if !(self.yin_threshold > 0.0 && self.yin_threshold < 1.0) {
            return bad("yin_threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PitchError {
    #[error("invalid pitch config: {0}")]
    InvalidConfig(String),
    #[error("audio has {samples} samples, shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
    #[error("only {voiced} voiced frames (need at least {required})")]
    InsufficientVoicing { voiced: usize, required: usize },
}

/// Per-frame F0 values; `None` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Contour {
    pub frame_hop_s: f64,
    pub values: Vec<Option<f64>>,
}

impl F0Contour {
    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    pub fn voiced_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchStats {
    pub mean_hz: f64,
    /// Population variance over voiced frames.
    pub variance_hz2: f64,
    pub voiced_frames: usize,
    pub total_frames: usize,
}

struct FrameGeometry {
    frame_len: usize,
    hop: usize,
    tau_min: usize,
    tau_max: usize,
    window: usize,
}

impl FrameGeometry {
    fn new(cfg: &PitchConfig, sample_rate: f64) -> Self {
        let frame_len = (cfg.frame_size_s * sample_rate).round() as usize;
        let hop = ((cfg.hop_s * sample_rate).round() as usize).max(1);
        let tau_min = ((sample_rate / cfg.f0_max).floor() as usize).max(2);
        let tau_max = (sample_rate / cfg.f0_min).ceil() as usize;
        // One extra lag so the parabola at tau_max has a right neighbour.
        let tau_max = tau_max.min(frame_len.saturating_sub(2) / 2).max(tau_min + 1);
        let window = frame_len - tau_max - 1;
        Self {
            frame_len,
            hop,
            tau_min,
            tau_max,
            window,
        }
    }
}

pub fn estimate_f0_contour(audio: &AudioBuffer, cfg: &PitchConfig) -> Result<F0Contour, PitchError> {
    cfg.validate()?;
    let sample_rate = f64::from(audio.sample_rate_hz());
    let geo = FrameGeometry::new(cfg, sample_rate);
    let samples: Vec<f64> = audio.samples().iter().map(|&s| f64::from(s)).collect();
    if samples.len() < geo.frame_len {
        return Err(PitchError::TooShort {
            samples: samples.len(),
            frame: geo.frame_len,
        });
    }

    let frames = 1 + (samples.len() - geo.frame_len) / geo.hop;
    let mut diff = vec![0.0; geo.tau_max + 2];
    let values = (0..frames)
        .map(|i| {
            let frame = &samples[i * geo.hop..i * geo.hop + geo.frame_len];
            yin_frame(frame, &geo, cfg, sample_rate, &mut diff)
        })
        .collect();
    Ok(F0Contour {
        frame_hop_s: geo.hop as f64 / sample_rate,
        values,
    })
}

fn yin_frame(
    frame: &[f64],
    geo: &FrameGeometry,
    cfg: &PitchConfig,
    sample_rate: f64,
    cmnd: &mut [f64],
) -> Option<f64> {
    let w = geo.window;
    // Difference function d(tau).
    cmnd[0] = 0.0;
    for tau in 1..=geo.tau_max + 1 {
        let mut acc = 0.0;
        for j in 0..w {
            let delta = frame[j] - frame[j + tau];
            acc += delta * delta;
        }
        cmnd[tau] = acc;
    }
    // Cumulative mean normalization, in place.
    cmnd[0] = 1.0;
    let mut running = 0.0;
    for (tau, v) in cmnd.iter_mut().enumerate().take(geo.tau_max + 2).skip(1) {
        running += *v;
        *v = if running > 0.0 { *v * tau as f64 / running } else { 1.0 };
    }

    let mut tau = geo.tau_min;
    while tau <= geo.tau_max {
        if cmnd[tau] < cfg.yin_threshold {
            while tau < geo.tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            break;
        }
        tau += 1;
    }
    if tau > geo.tau_max {
        return None;
    }

    let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom > 0.0 {
        (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let f0 = sample_rate / (tau as f64 + shift);
    (cfg.f0_min..=cfg.f0_max).contains(&f0).then_some(f0)
}

/// Mean and population variance of the voiced frames.
pub fn compute_pitch_stats(contour: &F0Contour, cfg: &PitchConfig) -> Result<PitchStats, PitchError> {
    let voiced: Vec<f64> = contour.voiced().collect();
    if voiced.len() < cfg.min_voiced.max(1) {
        return Err(PitchError::InsufficientVoicing {
            voiced: voiced.len(),
            required: cfg.min_voiced.max(1),
        });
    }
    let n = voiced.len() as f64;
    let mean_hz = voiced.iter().sum::<f64>() / n;
    let variance_hz2 = voiced.iter().map(|v| (v - mean_hz).powi(2)).sum::<f64>() / n;
    Ok(PitchStats {
        mean_hz,
        variance_hz2,
        voiced_frames: voiced.len(),
        total_frames: contour.values.len(),
    })
}

/// Contour plus statistics in one call.
pub fn analyze(audio: &AudioBuffer, cfg: &PitchConfig) -> Result<PitchStats, PitchError> {
    compute_pitch_stats(&estimate_f0_contour(audio, cfg)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};

    fn sine(freq: f64, seconds: f64, rate: u32, amp: f64) -> AudioBuffer {
        let n = (seconds * f64::from(rate)) as usize;
        let samples = (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin()) as f32)
            .collect();
        AudioBuffer::new(rate, samples).unwrap()
    }

    fn contour(values: &[Option<f64>]) -> F0Contour {
        F0Contour {
            frame_hop_s: 0.01,
            values: values.to_vec(),
        }
    }

    /// Independent reference: per-frame normalized autocorrelation peak over
    /// the same lag range, no YIN normalization, no interpolation.
    fn autocorrelation_f0(frame: &[f64], rate: f64, f0_min: f64, f0_max: f64) -> Option<f64> {
        let lag_lo = (rate / f0_max).floor() as usize;
        let lag_hi = (rate / f0_min).ceil() as usize;
        let w = frame.len() - lag_hi;
        let r = |lag: usize| {
            let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
            for j in 0..w {
                xy += frame[j] * frame[j + lag];
                xx += frame[j] * frame[j];
                yy += frame[j + lag] * frame[j + lag];
            }
            if xx == 0.0 || yy == 0.0 {
                0.0
            } else {
                xy / (xx * yy).sqrt()
            }
        };
        let scores: Vec<f64> = (lag_lo..=lag_hi).map(r).collect();
        let best = scores.iter().cloned().fold(f64::MIN, f64::max);
        if best < 0.8 {
            return None;
        }
        // first lag within 1% of the best peak avoids octave-down errors
        let idx = scores.iter().position(|&s| s >= best - 0.01)?;
        Some(rate / (lag_lo + idx) as f64)
    }

    #[test]
    fn sine_220_tracks_within_two_percent() {
        let audio = sine(220.0, 2.0, 16_000, 0.5);
        let cfg = PitchConfig::default();
        let c = estimate_f0_contour(&audio, &cfg).unwrap();
        assert!(c.values.len() > 190);
        for v in &c.values {
            let f = v.expect("every frame of a steady sine is voiced");
            assert!((f - 220.0).abs() <= 0.02 * 220.0, "{f}");
        }
        // The reference extractor agrees on the same frames.
        let samples: Vec<f64> = audio.samples().iter().map(|&s| f64::from(s)).collect();
        for start in (0..samples.len() - 640).step_by(1600) {
            let f = autocorrelation_f0(&samples[start..start + 640], 16_000.0, 60.0, 500.0).unwrap();
            assert!((f - 220.0).abs() <= 0.02 * 220.0, "reference {f}");
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let audio = AudioBuffer::new(16_000, vec![0.0; 16_000]).unwrap();
        let cfg = PitchConfig::default();
        let c = estimate_f0_contour(&audio, &cfg).unwrap();
        assert!(c.values.iter().all(Option::is_none));
        assert!(matches!(
            compute_pitch_stats(&c, &cfg),
            Err(PitchError::InsufficientVoicing { voiced: 0, .. })
        ));
    }

    #[test]
    fn white_noise_is_mostly_unvoiced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        let samples: Vec<f32> = (0..32_000).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        let audio = AudioBuffer::new(16_000, samples).unwrap();
        let c = estimate_f0_contour(&audio, &PitchConfig::default()).unwrap();
        let unvoiced = c.values.iter().filter(|v| v.is_none()).count() as f64 / c.values.len() as f64;
        assert!(unvoiced >= 0.9, "unvoiced fraction {unvoiced}");

        // Reference extractor on the same fixture, frozen: no frame reaches
        // a 0.8 normalized autocorrelation.
        let x: Vec<f64> = audio.samples().iter().map(|&s| f64::from(s)).collect();
        let ref_voiced = (0..x.len() - 640)
            .step_by(160)
            .filter(|&s| autocorrelation_f0(&x[s..s + 640], 16_000.0, 60.0, 500.0).is_some())
            .count();
        assert_eq!(ref_voiced, 0);
    }

    #[test]
    fn too_short_audio_is_an_error() {
        let audio = AudioBuffer::new(16_000, vec![0.1; 100]).unwrap();
        assert!(matches!(
            estimate_f0_contour(&audio, &PitchConfig::default()),
            Err(PitchError::TooShort { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let cfg = PitchConfig {
            f0_min: 600.0,
            ..PitchConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PitchConfig {
            frame_size_s: 0.02,
            ..PitchConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(PitchConfig::default().validate().is_ok());
    }

    #[test]
    fn constant_contour_stats() {
        let c = contour(&[Some(210.0); 12]);
        let s = compute_pitch_stats(&c, &PitchConfig::default()).unwrap();
        assert_eq!(s.mean_hz, 210.0);
        assert_eq!(s.variance_hz2, 0.0);
        assert_eq!(s.voiced_frames, 12);
    }

    #[test]
    fn three_value_population_variance() {
        let cfg = PitchConfig {
            min_voiced: 3,
            ..PitchConfig::default()
        };
        let c = contour(&[Some(200.0), None, Some(210.0), Some(220.0), None]);
        let s = compute_pitch_stats(&c, &cfg).unwrap();
        assert_eq!(s.mean_hz, 210.0);
        // (100 + 0 + 100) / 3
        assert!((s.variance_hz2 - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!((s.voiced_frames, s.total_frames), (3, 5));
    }

    #[test]
    fn too_few_voiced_frames() {
        let c = contour(&[Some(200.0), Some(201.0), Some(202.0), None]);
        assert_eq!(
            compute_pitch_stats(&c, &PitchConfig::default()),
            Err(PitchError::InsufficientVoicing {
                voiced: 3,
                required: 10
            })
        );
    }

    #[test]
    fn leading_silence_barely_moves_the_mean() {
        let cfg = PitchConfig::default();
        let tone = sine(180.0, 1.0, 16_000, 0.5);
        let base = analyze(&tone, &cfg).unwrap();
        for pad in [160usize, 400, 1600] {
            let mut samples = vec![0.0f32; pad];
            samples.extend_from_slice(tone.samples());
            let shifted = analyze(&AudioBuffer::new(16_000, samples).unwrap(), &cfg).unwrap();
            assert!((shifted.mean_hz - base.mean_hz).abs() < 1.0, "pad {pad}");
        }
    }

    #[test]
    fn halving_amplitude_changes_nothing() {
        let cfg = PitchConfig::default();
        let n = 16_000;
        let samples: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                let f = 200.0 + 20.0 * (2.0 * std::f64::consts::PI * 3.0 * t).sin();
                (0.6 * (2.0 * std::f64::consts::PI * f * t).sin()) as f32
            })
            .collect();
        let half: Vec<f32> = samples.iter().map(|s| s * 0.5).collect();
        let a = estimate_f0_contour(&AudioBuffer::new(16_000, samples).unwrap(), &cfg).unwrap();
        let b = estimate_f0_contour(&AudioBuffer::new(16_000, half).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn mean_within_voiced_range(values in proptest::collection::vec(proptest::option::of(60.0f64..500.0), 10..200)) {
            let c = contour(&values);
            let cfg = PitchConfig { min_voiced: 1, ..PitchConfig::default() };
            if let Ok(s) = compute_pitch_stats(&c, &cfg) {
                let lo = c.voiced().fold(f64::MAX, f64::min);
                let hi = c.voiced().fold(f64::MIN, f64::max);
                prop_assert!(s.mean_hz >= lo - 1e-9 && s.mean_hz <= hi + 1e-9);
                prop_assert!(s.variance_hz2 >= 0.0);
                prop_assert!(s.voiced_frames <= s.total_frames);
            }
        }

        #[test]
        fn variance_two_ways_agree(values in proptest::collection::vec(60.0f64..500.0, 10..200)) {
            prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 0.5));
            let c = contour(&values.iter().map(|&v| Some(v)).collect::<Vec<_>>());
            let s = compute_pitch_stats(&c, &PitchConfig::default()).unwrap();
            let n = values.len() as f64;
            let ex2 = values.iter().map(|v| v * v).sum::<f64>() / n;
            let ex = values.iter().sum::<f64>() / n;
            let alt = ex2 - ex * ex;
            prop_assert!((alt - s.variance_hz2).abs() <= 1e-6 * s.variance_hz2);
        }
    }
}
