//! Deterministic stand-in audio: each genre label maps to a tone/noise
//! recipe, so a labelled dataset can be generated without real recordings.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use crate::audio::{encode_wav_pcm16, AudioSignal, CANONICAL_RATE};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    pub base_hz: f64,
    pub harmonics: usize,
    /// Amplitude ratio between consecutive harmonics.
    pub rolloff: f64,
    /// Soft-clipping gain; 1 leaves the tone clean.
    pub drive: f64,
    /// Share of white noise in the mix, 0..1.
    pub noise: f64,
    /// Amplitude modulation rate in Hz; 0 disables it.
    pub tremolo_hz: f64,
    /// Seconds between note changes.
    pub note_seconds: f64,
}

const SCALE: [f64; 6] = [1.0, 9.0 / 8.0, 5.0 / 4.0, 4.0 / 3.0, 3.0 / 2.0, 5.0 / 3.0];

pub fn recipe_for(genre: &str) -> Recipe {
    let r = |base_hz, harmonics, rolloff, drive, noise, tremolo_hz, note_seconds| Recipe {
        base_hz,
        harmonics,
        rolloff,
        drive,
        noise,
        tremolo_hz,
        note_seconds,
    };
    match genre {
        "rock" => r(110.0, 8, 0.7, 3.0, 0.05, 0.0, 0.5),
        "metal" => r(82.4, 12, 0.85, 12.0, 0.35, 0.0, 0.25),
        "pop" => r(440.0, 3, 0.4, 1.0, 0.0, 5.0, 0.4),
        "blues" => r(196.0, 6, 0.6, 1.5, 0.03, 3.0, 0.6),
        "classical" => r(523.3, 2, 0.3, 1.0, 0.0, 0.0, 0.8),
        "country" => r(293.7, 5, 0.55, 1.2, 0.02, 0.0, 0.4),
        "disco" => r(349.2, 4, 0.5, 2.0, 0.1, 8.0, 0.25),
        "hiphop" => r(55.0, 4, 0.5, 2.0, 0.15, 2.0, 0.5),
        "jazz" => r(246.9, 4, 0.45, 1.0, 0.05, 0.0, 0.3),
        "reggae" => r(164.8, 5, 0.5, 1.5, 0.08, 4.0, 0.5),
        other => {
            let mut rng = rng_from_seed(derive_seed(0, &format!("recipe/{other}")));
            r(
                rng.random_range(60.0..600.0),
                rng.random_range(1..10),
                rng.random_range(0.3..0.9),
                rng.random_range(1.0..8.0),
                rng.random_range(0.0..0.3),
                rng.random_range(0.0..6.0),
                rng.random_range(0.2..0.8),
            )
        }
    }
}

/// Render `seconds` of mono audio for `genre`. The seed picks the song's
/// detuning, harmonic phases, note sequence and noise.
pub fn synthesize_song(genre: &str, seconds: f64, sample_rate: u32, seed: u64) -> AudioSignal {
    let recipe = recipe_for(genre);
    let mut rng = rng_from_seed(seed);
    let sr = sample_rate as f64;
    let n = (seconds * sr).round() as usize;
    let detune = 1.0 + 0.04 * (rng.random::<f64>() - 0.5);
    let harmonics: Vec<(f64, f64)> = (1..=recipe.harmonics)
        .map(|h| (h as f64, recipe.rolloff.powi(h as i32 - 1)))
        .collect();
    let norm: f64 = harmonics.iter().map(|(_, a)| a).sum();
    let mut phases: Vec<f64> = harmonics
        .iter()
        .map(|_| rng.random::<f64>() * TAU)
        .collect();
    let note_len = ((recipe.note_seconds * sr).round() as usize).max(1);
    let mut freq = recipe.base_hz * detune;
    let drive_norm = recipe.drive.tanh();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        if i % note_len == 0 {
            freq = recipe.base_hz * detune * SCALE[rng.random_range(0..SCALE.len())];
        }
        let mut tone = 0.0;
        for ((h, amp), phase) in harmonics.iter().zip(phases.iter_mut()) {
            let f = h * freq;
            if f < sr / 2.0 {
                tone += amp * phase.sin();
            }
            *phase = (*phase + TAU * f / sr) % TAU;
        }
        tone /= norm;
        if recipe.drive > 1.0 {
            tone = (recipe.drive * tone).tanh() / drive_norm;
        }
        let t = i as f64 / sr;
        let env = if recipe.tremolo_hz > 0.0 {
            1.0 - 0.4 * (1.0 - (TAU * recipe.tremolo_hz * t).cos())
        } else {
            1.0
        };
        let noise = rng.random_range(-1.0..1.0);
        samples.push(0.7 * ((1.0 - recipe.noise) * env * tone + recipe.noise * noise));
    }
    AudioSignal::mono(samples, sample_rate)
}

/// A generated dataset laid out as `<genre>/songNN.wav`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub genres: Vec<String>,
    pub songs_per_genre: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            genres: vec!["rock".into(), "metal".into(), "pop".into()],
            songs_per_genre: 3,
            seconds: 3.0,
            sample_rate: CANONICAL_RATE,
            seed: 7,
        }
    }
}

/// Write the fixture under `dir` and return the written paths.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for genre in &spec.genres {
        let gdir = dir.join(genre);
        std::fs::create_dir_all(&gdir)?;
        for i in 0..spec.songs_per_genre {
            let seed = derive_seed(spec.seed, &format!("fixture/{genre}/{i}"));
            let signal = synthesize_song(genre, spec.seconds, spec.sample_rate, seed);
            let path = gdir.join(format!("song{i:02}.wav"));
            std::fs::write(&path, encode_wav_pcm16(&signal))?;
            written.push(path);
        }
    }
    Ok(written)
}
