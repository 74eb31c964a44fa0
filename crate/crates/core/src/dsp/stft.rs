use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspError, MelConfig};
use crate::audio_io::Waveform;

/// Power spectrogram: frames × (nfft/2 + 1) bins, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub frames: usize,
    pub n_bins: usize,
    pub nfft: usize,
    pub values: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// Short-time Fourier transform with a periodic Hann window and an FFT size
/// of the next power of two at or above the frame length.
#[derive(Clone)]
pub struct Stft {
    frame: usize,
    hop: usize,
    nfft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(frame: usize, hop: usize) -> Self {
        assert!(frame > 0 && hop > 0, "frame and hop must be positive");
        let nfft = frame.next_power_of_two();
        let window = (0..frame)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Self {
            frame,
            hop,
            nfft,
            window,
            fft,
        }
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn frame_len(&self) -> usize {
        self.frame
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame {
            0
        } else {
            (len - self.frame) / self.hop + 1
        }
    }

    pub fn power(&self, samples: &[f32]) -> Result<PowerSpectrogram, DspError> {
        let frames = self.frame_count(samples.len());
        if frames == 0 {
            return Err(DspError::EmptyInput {
                len: samples.len(),
                frame: self.frame,
            });
        }
        let n_bins = self.nfft / 2 + 1;
        let mut values = Vec::with_capacity(frames * n_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * self.hop;
            let chunk = &samples[start..start + self.frame];
            for (b, (&s, &w)) in buf.iter_mut().zip(chunk.iter().zip(&self.window)) {
                *b = Complex::new(f64::from(s) * w, 0.0);
            }
            buf[self.frame..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            values.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
        }
        Ok(PowerSpectrogram {
            frames,
            n_bins,
            nfft: self.nfft,
            values,
        })
    }
}

/// `|FFT|²` of Hann-windowed frames at the configured hop.
pub fn stft_power(wave: &Waveform, config: &MelConfig) -> Result<PowerSpectrogram, DspError> {
    let rate = wave.sample_rate();
    let (frame, hop) = (config.frame_len(rate), config.hop_len(rate));
    if frame == 0 || hop == 0 || hop > frame {
        return Err(DspError::Config(format!(
            "need 0 < hop <= frame, got hop={hop} frame={frame}"
        )));
    }
    Stft::new(frame, hop).power(wave.samples())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::{synth, SynthKind};

    #[test]
    fn zeros_give_zero_grid() {
        let wave = Waveform::silence(4000, 16000).unwrap();
        let p = stft_power(&wave, &MelConfig::default()).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_formula() {
        let cfg = MelConfig::default();
        for n in [400usize, 401, 559, 560, 16000, 16037] {
            let wave = Waveform::silence(n, 16000).unwrap();
            let p = stft_power(&wave, &cfg).unwrap();
            assert_eq!(p.frames, (n - 400) / 160 + 1, "n={n}");
            assert_eq!(p.n_bins, 257);
        }
    }

    #[test]
    fn short_input_is_an_error() {
        let wave = Waveform::silence(399, 16000).unwrap();
        assert!(matches!(
            stft_power(&wave, &MelConfig::default()),
            Err(DspError::EmptyInput { len: 399, frame: 400 })
        ));
    }

    #[test]
    fn bin_centred_sine_matches_hann_leakage() {
        // frame = nfft = 512 at 16 kHz; bin spacing 31.25 Hz.
        let cfg = MelConfig {
            frame_length_s: 0.032,
            ..MelConfig::default()
        };
        let k = 40usize;
        let wave = synth(SynthKind::Sine { freq: k as f64 * 31.25 }, 0.5, 16000).unwrap();
        let p = stft_power(&wave, &cfg).unwrap();
        assert_eq!(p.nfft, 512);
        for t in 0..p.frames {
            let row = p.frame(t);
            let total: f64 = row.iter().sum();
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, k);
            // Periodic Hann on an integer number of cycles: bin amplitudes
            // 1/4, 1/2, 1/4, so the main lobe holds all the energy and the
            // centre bin (1/4) / (1/16 + 1/4 + 1/16) = 2/3 of it.
            let lobe: f64 = row[k - 1..=k + 1].iter().sum();
            assert!(lobe / total >= 0.99);
            assert!((row[k] / total - 2.0 / 3.0).abs() < 1e-6);
        }
    }
}
