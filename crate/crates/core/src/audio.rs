//! WAV decoding, mono downmix, linear resampling and fixed-length clipping.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;

/// Canonical ingest rate: 22050 Hz mono.
pub const CANONICAL_RATE: u32 = 22_050;

/// Default clip length in seconds.
pub const DEFAULT_CLIP_SECONDS: f64 = 0.10;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("signal of {samples} samples is shorter than one clip of {clip_len} samples")]
    SignalTooShort { samples: usize, clip_len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Decoded PCM audio. Multi-channel samples are interleaved frame by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl AudioSignal {
    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioSignal {
            samples,
            sample_rate,
            channels: 1,
        }
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }
}

/// A fixed-length slice of one song.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub song_id: String,
    pub clip_index: usize,
    pub start_time: f64,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::Unsupported => {
            AudioError::UnsupportedEncoding("compressed or unknown format tag".into())
        }
        hound::Error::TooWide => AudioError::UnsupportedEncoding("sample width too large".into()),
        hound::Error::FormatError(msg) => AudioError::MalformedWav(msg.to_string()),
        hound::Error::UnfinishedSample => {
            AudioError::MalformedWav("data chunk ends inside a sample".into())
        }
        hound::Error::InvalidSampleFormat => {
            AudioError::UnsupportedEncoding("invalid sample format for bit depth".into())
        }
        hound::Error::IoError(e) => AudioError::MalformedWav(format!("truncated file: {e}")),
    }
}

/// Decode a RIFF/WAVE byte buffer (integer PCM 8/16/24/32-bit or 32-bit float)
/// into interleaved samples scaled to [-1, 1].
pub fn decode_wav(bytes: &[u8]) -> Result<AudioSignal, AudioError> {
    let mut reader = WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(AudioError::MalformedWav("zero channels".into()));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::MalformedWav("zero sample rate".into()));
    }
    let declared = reader.len() as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(map_hound)?
        }
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "{fmt:?} with {bits} bits per sample"
            )))
        }
    };
    if samples.len() != declared {
        return Err(AudioError::MalformedWav(format!(
            "data chunk declares {declared} samples but {} were read",
            samples.len()
        )));
    }
    if !samples.len().is_multiple_of(spec.channels as usize) {
        return Err(AudioError::MalformedWav(
            "partial frame at end of data".into(),
        ));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(AudioError::MalformedWav("non-finite sample".into()));
    }
    Ok(AudioSignal {
        samples: samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
        sample_rate: spec.sample_rate,
        channels: spec.channels,
    })
}

/// Encode as 16-bit integer PCM. Samples are clamped to [-1, 1].
pub fn encode_wav_pcm16(signal: &AudioSignal) -> Vec<u8> {
    let spec = WavSpec {
        channels: signal.channels,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut cursor, spec).expect("in-memory WAV header");
        for &s in &signal.samples {
            let v = (s.clamp(-1.0, 1.0) * 32768.0)
                .round()
                .clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).expect("in-memory WAV write");
        }
        writer.finalize().expect("in-memory WAV finalize");
    }
    cursor.into_inner()
}

/// Average the channels of every frame.
pub fn to_mono(signal: &AudioSignal) -> AudioSignal {
    let ch = signal.channels.max(1) as usize;
    if ch == 1 {
        return signal.clone();
    }
    let samples = signal
        .samples
        .chunks_exact(ch)
        .map(|frame| frame.iter().sum::<f64>() / ch as f64)
        .collect();
    AudioSignal::mono(samples, signal.sample_rate)
}

/// Linear-interpolation resampling. Output length is
/// `round(frames * target_rate / sample_rate)`.
pub fn resample(signal: &AudioSignal, target_rate: u32) -> Result<AudioSignal, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidArgument(
            "target_rate must be positive".into(),
        ));
    }
    if target_rate == signal.sample_rate {
        return Ok(signal.clone());
    }
    let ch = signal.channels.max(1) as usize;
    let n_in = signal.frames();
    let n_out = ((n_in as f64) * target_rate as f64 / signal.sample_rate as f64).round() as usize;
    let step = signal.sample_rate as f64 / target_rate as f64;
    let mut out = Vec::with_capacity(n_out * ch);
    for i in 0..n_out {
        let pos = i as f64 * step;
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        for c in 0..ch {
            let v = if i0 + 1 < n_in {
                let a = signal.samples[i0 * ch + c];
                let b = signal.samples[(i0 + 1) * ch + c];
                a + (b - a) * frac
            } else {
                signal.samples[(n_in - 1) * ch + c]
            };
            out.push(v);
        }
    }
    Ok(AudioSignal {
        samples: out,
        sample_rate: target_rate,
        channels: signal.channels,
    })
}

/// Number of samples in one clip at `sample_rate`.
pub fn clip_len(clip_seconds: f64, sample_rate: u32) -> usize {
    (clip_seconds * sample_rate as f64).round() as usize
}

/// Cut a signal into consecutive non-overlapping clips. The trailing partial
/// clip is dropped. Multi-channel input is downmixed first.
pub fn segment_clips(
    signal: &AudioSignal,
    song_id: &str,
    clip_seconds: f64,
) -> Result<Vec<AudioClip>, AudioError> {
    if !(clip_seconds > 0.0) || !clip_seconds.is_finite() {
        return Err(AudioError::InvalidArgument(format!(
            "clip_seconds must be positive, got {clip_seconds}"
        )));
    }
    let mono = to_mono(signal);
    let len = clip_len(clip_seconds, mono.sample_rate);
    if len == 0 {
        return Err(AudioError::InvalidArgument(
            "clip_seconds rounds to zero samples".into(),
        ));
    }
    if mono.samples.len() < len {
        return Err(AudioError::SignalTooShort {
            samples: mono.samples.len(),
            clip_len: len,
        });
    }
    Ok(mono
        .samples
        .chunks_exact(len)
        .enumerate()
        .map(|(clip_index, chunk)| AudioClip {
            song_id: song_id.to_string(),
            clip_index,
            start_time: clip_index as f64 * clip_seconds,
            samples: chunk.to_vec(),
            sample_rate: mono.sample_rate,
        })
        .collect())
}

/// Read a WAV file and normalize it to mono at `target_rate`.
pub fn load_song(path: &Path, target_rate: u32) -> Result<AudioSignal, AudioError> {
    let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let decoded = decode_wav(&bytes)?;
    resample(&to_mono(&decoded), target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn wav_bytes(
        spec: WavSpec,
        write: impl FnOnce(&mut WavWriter<&mut Cursor<Vec<u8>>>),
    ) -> Vec<u8> {
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut cursor, spec).unwrap();
            write(&mut w);
            w.finalize().unwrap();
        }
        cursor.into_inner()
    }

    #[test]
    fn pcm16_one_second_has_rate_samples() {
        let spec = WavSpec {
            channels: 1,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let bytes = wav_bytes(spec, |w| {
            for i in 0..22050 {
                w.write_sample((i % 100) as i16).unwrap();
            }
        });
        let sig = decode_wav(&bytes).unwrap();
        assert_eq!(sig.samples.len(), 22050);
        assert_eq!(sig.sample_rate, 22050);
        assert_eq!(sig.channels, 1);
    }

    #[test]
    fn float_constant_is_identity_scaled() {
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let bytes = wav_bytes(spec, |w| {
            for _ in 0..100 {
                w.write_sample(0.5f32).unwrap();
            }
        });
        let sig = decode_wav(&bytes).unwrap();
        assert!(sig.samples.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn int_depths_scale_into_unit_range() {
        for bits in [8u16, 16, 24, 32] {
            let spec = WavSpec {
                channels: 1,
                sample_rate: 8000,
                bits_per_sample: bits,
                sample_format: SampleFormat::Int,
            };
            let max = ((1i64 << (bits - 1)) - 1) as i32;
            let min = -(1i64 << (bits - 1)) as i32;
            let bytes = wav_bytes(spec, |w| {
                if bits == 8 {
                    w.write_sample(max as i8).unwrap();
                    w.write_sample(min as i8).unwrap();
                } else if bits == 16 {
                    w.write_sample(max as i16).unwrap();
                    w.write_sample(min as i16).unwrap();
                } else {
                    w.write_sample(max).unwrap();
                    w.write_sample(min).unwrap();
                }
            });
            let sig = decode_wav(&bytes).unwrap();
            assert!(sig.samples[0] < 1.0 && sig.samples[0] > 0.99, "bits {bits}");
            assert_eq!(sig.samples[1], -1.0, "bits {bits}");
        }
    }

    #[test]
    fn data_length_disagreeing_with_header_is_malformed() {
        let sig = AudioSignal::mono(vec![0.25; 1000], 8000);
        let mut bytes = encode_wav_pcm16(&sig);
        // drop the last 100 bytes of sample data; header still claims 2000
        bytes.truncate(bytes.len() - 100);
        assert!(matches!(
            decode_wav(&bytes),
            Err(AudioError::MalformedWav(_))
        ));
    }

    #[test]
    fn bad_magic_is_malformed() {
        let mut bytes = encode_wav_pcm16(&AudioSignal::mono(vec![0.0; 10], 8000));
        bytes[0] = b'X';
        assert!(matches!(
            decode_wav(&bytes),
            Err(AudioError::MalformedWav(_))
        ));
        assert!(matches!(
            decode_wav(&bytes[..8]),
            Err(AudioError::MalformedWav(_))
        ));
    }

    #[test]
    fn compressed_format_is_unsupported() {
        let mut bytes = encode_wav_pcm16(&AudioSignal::mono(vec![0.0; 10], 8000));
        // fmt chunk starts at 12; format tag at offset 20. 0x0002 = MS ADPCM.
        bytes[20] = 2;
        bytes[21] = 0;
        assert!(matches!(
            decode_wav(&bytes),
            Err(AudioError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn mono_downmix() {
        let stereo = AudioSignal {
            samples: vec![0.3, 0.3, 1.0, -1.0, -0.5, -0.5],
            sample_rate: 100,
            channels: 2,
        };
        let m = to_mono(&stereo);
        assert_eq!(m.samples, vec![0.3, 0.0, -0.5]);
        assert_eq!(m.sample_rate, 100);
        let mono = AudioSignal::mono(vec![0.1, 0.2], 100);
        assert_eq!(to_mono(&mono), mono);
    }

    #[test]
    fn resample_identity_and_constant() {
        let sig = AudioSignal::mono((0..500).map(|i| (i as f64 * 0.01).sin()).collect(), 44100);
        assert_eq!(resample(&sig, 44100).unwrap(), sig);
        let c = AudioSignal::mono(vec![0.3; 44100], 44100);
        let r = resample(&c, 22050).unwrap();
        assert_eq!(r.samples.len(), 22050);
        assert!(r.samples.iter().all(|&s| (s - 0.3).abs() < 1e-15));
        assert!(matches!(
            resample(&c, 0),
            Err(AudioError::InvalidArgument(_))
        ));
    }

    #[test]
    fn resample_preserves_duration_within_one_period() {
        for (from, to, n) in [
            (44100u32, 22050u32, 12345usize),
            (8000, 22050, 999),
            (48000, 22050, 4801),
        ] {
            let sig = AudioSignal::mono(vec![0.0; n], from);
            let r = resample(&sig, to).unwrap();
            assert!((r.duration_seconds() - sig.duration_seconds()).abs() <= 1.0 / to as f64);
        }
    }

    /// Brute-force DFT magnitude peak, in Hz.
    fn dft_peak_hz(samples: &[f64], rate: u32) -> f64 {
        let n = samples.len();
        let mut best = (0usize, 0.0f64);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in samples.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (k, mag);
            }
        }
        best.0 as f64 * rate as f64 / n as f64
    }

    #[test]
    fn resampled_sine_keeps_its_peak() {
        let n = 8820; // 0.2 s at 44100
        let sig = AudioSignal::mono(
            (0..n)
                .map(|t| (2.0 * PI * 440.0 * t as f64 / 44100.0).sin())
                .collect(),
            44100,
        );
        let r = resample(&sig, 22050).unwrap();
        let bin_hz = 22050.0 / r.samples.len() as f64;
        let peak = dft_peak_hz(&r.samples, 22050);
        assert!((peak - 440.0).abs() <= bin_hz, "peak {peak}");
    }

    #[test]
    fn segmentation_counts_and_remainder() {
        let sig = AudioSignal::mono(vec![0.0; 30 * 22050], 22050);
        let clips = segment_clips(&sig, "s", 0.10).unwrap();
        assert_eq!(clips.len(), 300);
        assert!(clips.iter().all(|c| c.samples.len() == 2205));
        assert!((clips[299].start_time - 29.9).abs() < 1e-9);

        let sig = AudioSignal::mono(vec![0.0; (1.05 * 22050.0) as usize], 22050);
        assert_eq!(segment_clips(&sig, "s", 0.10).unwrap().len(), 10);

        let sig = AudioSignal::mono(vec![0.0; (0.05 * 22050.0) as usize], 22050);
        assert!(matches!(
            segment_clips(&sig, "s", 0.10),
            Err(AudioError::SignalTooShort { .. })
        ));
    }

    #[test]
    fn clips_are_consecutive_and_reproduce_a_prefix() {
        let samples: Vec<f64> = (0..5000)
            .map(|i| ((i * 7919) % 1000) as f64 / 1000.0)
            .collect();
        let sig = AudioSignal::mono(samples.clone(), 22050);
        let clips = segment_clips(&sig, "x", 0.10).unwrap();
        let cat: Vec<f64> = clips
            .iter()
            .flat_map(|c| c.samples.iter().copied())
            .collect();
        assert_eq!(&samples[..cat.len()], &cat[..]);
        for (i, c) in clips.iter().enumerate() {
            assert_eq!(c.clip_index, i);
            assert_eq!(c.start_time, i as f64 * 0.10);
        }
    }

    proptest::proptest! {
        #[test]
        fn pcm16_round_trip_is_bit_exact(raw in proptest::collection::vec(proptest::num::i16::ANY, 1..400), stereo in proptest::bool::ANY) {
            let channels = if stereo && raw.len() % 2 == 0 { 2 } else { 1 };
            let sig = AudioSignal {
                samples: raw.iter().map(|&v| v as f64 / 32768.0).collect(),
                sample_rate: 22050,
                channels,
            };
            let back = decode_wav(&encode_wav_pcm16(&sig)).unwrap();
            proptest::prop_assert_eq!(back, sig);
        }
    }
}
