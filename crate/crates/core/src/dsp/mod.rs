//! Spectrogram frontend: STFT power, mel projection, PCEN, and the
//! clip-versus-window padding policies.

mod grid_io;
mod mel;
mod pcen;
mod stft;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid_io::{read_grid, write_grid};
pub use mel::{hz_to_mel, mel_project, mel_to_hz, MelFilterbank};
pub use pcen::{pcen, pcen_in_place, PcenConfig, SmootherInit};
pub use stft::{stft_power, PowerSpectrogram, Stft};
pub use window::{window_clip, PadPolicy};
pub(crate) use window::window_clip_samples;

use crate::audio_io::Waveform;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("input of {len} samples is shorter than one {frame}-sample frame")]
    EmptyInput { len: usize, frame: usize },
    #[error("invalid frontend config: {0}")]
    Config(String),
    #[error("grid file: {0}")]
    Io(#[from] std::io::Error),
}

/// STFT and mel filterbank parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub frame_length_s: f64,
    pub hop_length_s: f64,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Apply `log(1 + E)` to mel energies before PCEN.
    pub log_pre: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            frame_length_s: 0.025,
            hop_length_s: 0.010,
            n_mels: 128,
            fmin: 60.0,
            fmax: 10_000.0,
            log_pre: false,
        }
    }
}

impl MelConfig {
    /// Frequency range of the SurfPerch-style preset (50 Hz to 16 kHz).
    pub fn surfperch() -> Self {
        Self {
            fmin: 50.0,
            fmax: 16_000.0,
            ..Self::default()
        }
    }

    /// Same config with `fmax` lowered to the Nyquist rate of `rate` if needed.
    pub fn clamped_to(mut self, rate: u32) -> Self {
        self.fmax = self.fmax.min(f64::from(rate) / 2.0);
        self
    }

    pub fn frame_len(&self, rate: u32) -> usize {
        (self.frame_length_s * f64::from(rate)).round() as usize
    }

    pub fn hop_len(&self, rate: u32) -> usize {
        (self.hop_length_s * f64::from(rate)).round() as usize
    }

    pub fn validate(&self, rate: u32) -> Result<(), DspError> {
        let nyquist = f64::from(rate) / 2.0;
        let bad = |m: String| Err(DspError::Config(m));
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.fmin > 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!(
                "need 0 < fmin < fmax <= {nyquist} Hz, got fmin={} fmax={}",
                self.fmin, self.fmax
            ));
        }
        let (frame, hop) = (self.frame_len(rate), self.hop_len(rate));
        if frame == 0 || hop == 0 || hop > frame {
            return bad(format!("need 0 < hop <= frame, got hop={hop} frame={frame} samples"));
        }
        Ok(())
    }
}

/// Time × mel grid, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub n_mels: usize,
    pub values: Vec<f64>,
    pub hop_s: f64,
    pub frame_s: f64,
}

impl MelSpectrogram {
    pub fn from_values(frames: usize, n_mels: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), frames * n_mels, "grid shape mismatch");
        Self {
            frames,
            n_mels,
            values,
            hop_s: 0.0,
            frame_s: 0.0,
        }
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.n_mels + f]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    /// Per-band mean over time.
    pub fn band_means(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_mels];
        for row in self.values.chunks_exact(self.n_mels) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        let n = self.frames.max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Per-band population standard deviation over time.
    pub fn band_stds(&self) -> Vec<f64> {
        let means = self.band_means();
        let mut acc = vec![0.0; self.n_mels];
        for row in self.values.chunks_exact(self.n_mels) {
            for ((a, v), m) in acc.iter_mut().zip(row).zip(&means) {
                *a += (v - m) * (v - m);
            }
        }
        let n = self.frames.max(1) as f64;
        acc.iter().map(|a| (a / n).sqrt()).collect()
    }

    /// Applies `log(1 + x)` elementwise.
    pub fn log1p(mut self) -> Self {
        self.values.iter_mut().for_each(|v| *v = v.ln_1p());
        self
    }
}

/// Reusable waveform → mel-energy pipeline for one sample rate.
#[derive(Clone)]
pub struct Frontend {
    config: MelConfig,
    rate: u32,
    stft: Stft,
    filterbank: MelFilterbank,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend")
            .field("config", &self.config)
            .field("rate", &self.rate)
            .finish()
    }
}

impl Frontend {
    pub fn new(config: MelConfig, rate: u32) -> Result<Self, DspError> {
        config.validate(rate)?;
        let stft = Stft::new(config.frame_len(rate), config.hop_len(rate));
        let filterbank = MelFilterbank::new(&config, rate, stft.nfft());
        Ok(Self {
            config,
            rate,
            stft,
            filterbank,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    /// Mel energies of `samples`, with the optional `log(1 + E)` pre-stage.
    pub fn mel_energies(&self, samples: &[f32]) -> Result<MelSpectrogram, DspError> {
        let power = self.stft.power(samples)?;
        let mel = self.filterbank.project(&power);
        Ok(if self.config.log_pre { mel.log1p() } else { mel })
    }

    pub fn mel_energies_of(&self, wave: &Waveform) -> Result<MelSpectrogram, DspError> {
        if wave.sample_rate() != self.rate {
            return Err(DspError::Config(format!(
                "frontend expects {} Hz audio, got {} Hz",
                self.rate,
                wave.sample_rate()
            )));
        }
        self.mel_energies(wave.samples())
    }
}
