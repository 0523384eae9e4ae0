//! Clip-level MFCC features: pre-emphasis, Hann-windowed frames, power
//! spectrum, triangular mel filterbank, log compression, orthonormal DCT-II.
//!
//! Each clip is summarized by one vector, either the per-coefficient mean over
//! its frames or the first frame alone ([`FrameAggregation`]).

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::par::{self, Execution};

#[derive(Debug, Error, PartialEq)]
pub enum MfccError {
    #[error("invalid MFCC configuration: {0}")]
    InvalidConfig(String),
    #[error("mel filters {lower} and {upper} share FFT bin {bin}")]
    DegenerateBand {
        lower: usize,
        upper: usize,
        bin: usize,
    },
    #[error("clip of {len} samples is shorter than one {n_fft}-sample frame")]
    ClipTooShort { len: usize, n_fft: usize },
    #[error("clip sample rate {clip} Hz differs from extractor rate {extractor} Hz")]
    RateMismatch { clip: u32, extractor: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FrameAggregation {
    #[default]
    Mean,
    FirstFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub pre_emphasis: f64,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
    pub aggregation: FrameAggregation,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            n_fft: 1024,
            hop: 512,
            n_mels: 40,
            n_coeffs: 13,
            pre_emphasis: 0.97,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
            aggregation: FrameAggregation::Mean,
        }
    }
}

impl MfccConfig {
    pub fn fmax_for(&self, sample_rate: u32) -> f64 {
        self.fmax.unwrap_or(sample_rate as f64 / 2.0)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), MfccError> {
        let bad = |m: String| Err(MfccError::InvalidConfig(m));
        if sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.n_fft < 2 {
            return bad(format!("n_fft must be at least 2, got {}", self.n_fft));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return bad(format!(
                "hop must be in 1..={}, got {}",
                self.n_fft, self.hop
            ));
        }
        if self.n_mels == 0 || self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return bad(format!(
                "need 0 < n_coeffs ({}) <= n_mels ({})",
                self.n_coeffs, self.n_mels
            ));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return bad(format!(
                "pre_emphasis must be in [0, 1), got {}",
                self.pre_emphasis
            ));
        }
        let fmax = self.fmax_for(sample_rate);
        if !(self.fmin >= 0.0 && self.fmin < fmax && fmax <= sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({fmax}) <= nyquist",
                self.fmin
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }
}

/// One clip's feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFeature {
    pub song_id: String,
    pub clip_index: usize,
    pub values: Vec<f64>,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// The `n_mels + 2` band edges in Hz, equally spaced on the mel scale from
/// `fmin` to `fmax`. Filter `m` has its peak at element `m + 1`.
pub fn mel_points_hz(config: &MfccConfig, sample_rate: u32) -> Vec<f64> {
    let lo = hz_to_mel(config.fmin);
    let hi = hz_to_mel(config.fmax_for(sample_rate));
    let n = config.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Triangular mel filterbank, `n_mels` rows of `n_fft / 2 + 1` weights.
///
/// Band edges are snapped to the nearest FFT bin; each filter rises linearly
/// from its left edge to a peak of 1 at its center bin and falls back to 0 at
/// its right edge.
pub fn mel_filterbank(config: &MfccConfig, sample_rate: u32) -> Result<Vec<Vec<f64>>, MfccError> {
    config.validate(sample_rate)?;
    let n_bins = config.n_fft / 2 + 1;
    let bins: Vec<usize> = mel_points_hz(config, sample_rate)
        .iter()
        .map(|&f| ((f * config.n_fft as f64 / sample_rate as f64).round() as usize).min(n_bins - 1))
        .collect();
    for (i, w) in bins.windows(2).enumerate() {
        if w[0] >= w[1] {
            return Err(MfccError::DegenerateBand {
                lower: i.saturating_sub(1),
                upper: i,
                bin: w[1],
            });
        }
    }
    let mut bank = vec![vec![0.0; n_bins]; config.n_mels];
    for (m, row) in bank.iter_mut().enumerate() {
        let (left, center, right) = (bins[m], bins[m + 1], bins[m + 2]);
        for (k, w) in row.iter_mut().enumerate().take(right + 1).skip(left) {
            *w = if k <= center {
                (k - left) as f64 / (center - left) as f64
            } else {
                (right - k) as f64 / (right - center) as f64
            };
        }
    }
    Ok(bank)
}

/// Orthonormal DCT-II basis, `n_coeffs` rows of length `n_mels`.
pub fn dct2_matrix(n_coeffs: usize, n_mels: usize) -> Vec<Vec<f64>> {
    assert!(n_coeffs <= n_mels, "n_coeffs must not exceed n_mels");
    let n = n_mels as f64;
    (0..n_coeffs)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            (0..n_mels)
                .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Precomputed MFCC pipeline for a fixed configuration and sample rate.
/// Immutable and shareable across threads.
pub struct MfccExtractor {
    config: MfccConfig,
    sample_rate: u32,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("config", &self.config)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl MfccExtractor {
    pub fn new(config: MfccConfig, sample_rate: u32) -> Result<Self, MfccError> {
        let filterbank = mel_filterbank(&config, sample_rate)?;
        let dct = dct2_matrix(config.n_coeffs, config.n_mels);
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Ok(MfccExtractor {
            window: hann_window(config.n_fft),
            filterbank,
            dct,
            fft,
            config,
            sample_rate,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Power spectrum `|X_k|^2` for `k = 0..=n_fft/2` of an already windowed frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        buf[..self.config.n_fft / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect()
    }

    /// Cepstral coefficients of one power spectrum.
    pub fn cepstrum(&self, power: &[f64]) -> Vec<f64> {
        let log_mel: Vec<f64> = self
            .filterbank
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(power).map(|(w, p)| w * p).sum();
                e.max(self.config.log_floor).ln()
            })
            .collect();
        self.dct
            .iter()
            .map(|basis| basis.iter().zip(&log_mel).map(|(b, l)| b * l).sum())
            .collect()
    }

    /// Per-frame MFCCs of a raw sample buffer.
    pub fn frames(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, MfccError> {
        let n_fft = self.config.n_fft;
        if samples.len() < n_fft {
            return Err(MfccError::ClipTooShort {
                len: samples.len(),
                n_fft,
            });
        }
        let p = self.config.pre_emphasis;
        let emphasized: Vec<f64> = std::iter::once(samples[0])
            .chain(samples.windows(2).map(|w| w[1] - p * w[0]))
            .collect();
        let n_frames = (emphasized.len() - n_fft) / self.config.hop + 1;
        let take = match self.config.aggregation {
            FrameAggregation::Mean => n_frames,
            FrameAggregation::FirstFrame => 1,
        };
        Ok((0..take)
            .map(|f| {
                let start = f * self.config.hop;
                let frame: Vec<f64> = emphasized[start..start + n_fft]
                    .iter()
                    .zip(&self.window)
                    .map(|(x, w)| x * w)
                    .collect();
                self.cepstrum(&self.power_spectrum(&frame))
            })
            .collect())
    }

    /// Clip-level feature: frame MFCCs collapsed by the configured aggregation.
    pub fn extract(&self, clip: &AudioClip) -> Result<ClipFeature, MfccError> {
        if clip.sample_rate != self.sample_rate {
            return Err(MfccError::RateMismatch {
                clip: clip.sample_rate,
                extractor: self.sample_rate,
            });
        }
        let frames = self.frames(&clip.samples)?;
        let mut values = vec![0.0; self.config.n_coeffs];
        for frame in &frames {
            for (v, c) in values.iter_mut().zip(frame) {
                *v += c;
            }
        }
        let n = frames.len() as f64;
        values.iter_mut().for_each(|v| *v /= n);
        Ok(ClipFeature {
            song_id: clip.song_id.clone(),
            clip_index: clip.clip_index,
            values,
        })
    }

    /// Extract every clip, preserving order.
    pub fn extract_batch(
        &self,
        clips: &[AudioClip],
        exec: Execution,
    ) -> Result<Vec<ClipFeature>, MfccError> {
        par::map(exec, clips, |c| self.extract(c))
            .into_iter()
            .collect()
    }
}

/// One-shot convenience wrapper around [`MfccExtractor`].
pub fn mfcc_clip(clip: &AudioClip, config: &MfccConfig) -> Result<ClipFeature, MfccError> {
    MfccExtractor::new(config.clone(), clip.sample_rate)?.extract(clip)
}
