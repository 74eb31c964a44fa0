//! Waveform container, 16-bit PCM WAV I/O, band-limited resampling and
//! deterministic test-signal synthesis.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("sample rate must be positive")]
    ZeroRate,
    #[error("sample {index} is {value}, outside [-1, 1] or not finite")]
    OutOfRange { index: usize, value: f32 },
    #[error("malformed WAV file: {0}")]
    Format(String),
    #[error("unsupported WAV encoding: {0}")]
    Unsupported(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroRate);
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(AudioError::OutOfRange { index, value });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a waveform, clamping every sample into `[-1, 1]`. Non-finite
    /// values become zero.
    pub fn from_clamped(mut samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        for s in &mut samples {
            *s = if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 };
        }
        Self::new(samples, sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Largest absolute amplitude.
    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Reads a 16-bit PCM WAV file. Stereo is averaged to mono; samples are
/// scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let reader = hound::WavReader::open(path.as_ref()).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::Unsupported(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = usize::from(spec.channels);
    if channels == 0 || channels > 2 {
        return Err(AudioError::Unsupported(format!("{channels} channels")));
    }
    let raw = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f32 = frame.iter().map(|&s| f32::from(s) / 32768.0).sum();
            sum / channels as f32
        })
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV file (44-byte header). Amplitudes are scaled
/// by 32768, rounded, and saturated to the i16 range.
pub fn write_wav(wave: &Waveform, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    for &s in &wave.samples {
        writer.write_sample(to_i16(s)).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

fn to_i16(s: f32) -> i16 {
    (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::FormatError(msg) => AudioError::Format(msg.to_string()),
        hound::Error::Unsupported => AudioError::Unsupported("feature not supported".into()),
        other => AudioError::Format(other.to_string()),
    }
}

/// Windowed-sinc polyphase resampler.
///
/// The kernel is `sinc` with cutoff at the lower of the two Nyquist rates,
/// tapered by a Kaiser window. `taps` counts zero crossings of the kernel at
/// the lower rate (so 64 taps span 32 low-rate periods either side).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resampler {
    pub taps: usize,
    pub kaiser_beta: f64,
}

impl Default for Resampler {
    fn default() -> Self {
        Self {
            taps: 64,
            kaiser_beta: 8.0,
        }
    }
}

/// Phase tables larger than this are evaluated on the fly.
const MAX_TABLE_PHASES: u64 = 4096;

impl Resampler {
    pub fn resample(&self, wave: &Waveform, target_rate: u32) -> Result<Waveform, AudioError> {
        if target_rate == 0 {
            return Err(AudioError::ZeroRate);
        }
        let source_rate = wave.sample_rate;
        if target_rate == source_rate {
            return Ok(wave.clone());
        }
        let g = gcd(u64::from(source_rate), u64::from(target_rate));
        let up = u64::from(target_rate) / g;
        let down = u64::from(source_rate) / g;
        let n = wave.len() as u64;
        let out_len = ((n as f64) * up as f64 / down as f64).round() as usize;

        let scale = (up as f64 / down as f64).min(1.0);
        let half_width = (self.taps as f64 / 2.0) / scale;
        let reach = half_width.ceil() as i64;
        let kernel = Kernel {
            scale,
            half_width,
            beta: self.kaiser_beta,
            i0_beta: bessel_i0(self.kaiser_beta),
        };

        let table: Option<Vec<Vec<f64>>> = (up <= MAX_TABLE_PHASES).then(|| {
            (0..up)
                .map(|p| {
                    let frac = p as f64 / up as f64;
                    (-reach + 1..=reach)
                        .map(|m| kernel.eval(frac - m as f64))
                        .collect()
                })
                .collect()
        });

        let x = wave.samples();
        let mut out = Vec::with_capacity(out_len);
        let mut scratch = Vec::with_capacity((2 * reach) as usize);
        for j in 0..out_len as u64 {
            let pos = j * down;
            let base = (pos / up) as i64;
            let phase = pos % up;
            let weights: &[f64] = match &table {
                Some(t) => &t[phase as usize],
                None => {
                    let frac = phase as f64 / up as f64;
                    scratch.clear();
                    scratch.extend((-reach + 1..=reach).map(|m| kernel.eval(frac - m as f64)));
                    &scratch
                }
            };
            let mut acc = 0.0f64;
            for (offset, w) in (-reach + 1..=reach).zip(weights) {
                let i = base + offset;
                if i >= 0 && (i as u64) < n {
                    acc += f64::from(x[i as usize]) * w;
                }
            }
            out.push(acc as f32);
        }
        Waveform::from_clamped(out, target_rate)
    }
}

struct Kernel {
    scale: f64,
    half_width: f64,
    beta: f64,
    i0_beta: f64,
}

impl Kernel {
    /// Kernel value at `tau` input samples from the output instant.
    fn eval(&self, tau: f64) -> f64 {
        let r = tau / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(self.beta * (1.0 - r * r).sqrt()) / self.i0_beta;
        self.scale * sinc(self.scale * tau) * window
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Resamples with the default 64-tap Kaiser-windowed sinc.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform, AudioError> {
    Resampler::default().resample(wave, target_rate)
}

/// Deterministic test signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    Silence,
    /// Unit-amplitude sine starting at phase zero.
    Sine { freq: f64 },
    /// Uniform white noise in `[-1, 1)`.
    Noise { seed: u64 },
}

pub fn synth(kind: SynthKind, duration_s: f64, rate: u32) -> Result<Waveform, AudioError> {
    if rate == 0 {
        return Err(AudioError::ZeroRate);
    }
    let len = (duration_s * f64::from(rate)).round().max(0.0) as usize;
    let samples = match kind {
        SynthKind::Silence => vec![0.0; len],
        SynthKind::Sine { freq } => {
            let w = 2.0 * PI * freq / f64::from(rate);
            (0..len).map(|i| (w * i as f64).sin() as f32).collect()
        }
        SynthKind::Noise { seed } => {
            let mut r = rng::rng(seed);
            (0..len).map(|_| r.random_range(-1.0f32..1.0)).collect()
        }
    };
    Waveform::new(samples, rate)
}
