use super::{MelConfig, MelSpectrogram, PowerSpectrogram};
use super::DspError;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters spaced evenly on the mel scale.
///
/// Each FFT bin stands for the band `[f_k - Δ/2, f_k + Δ/2]`; its weight in a
/// filter is the triangle's mean height over that band. Every filter that
/// overlaps the spectrum therefore gets positive total weight even when it is
/// narrower than one bin, and the filters sum to one on every bin lying
/// between the first and last filter centres.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per filter: first bin index and its weights.
    rows: Vec<(usize, Vec<f64>)>,
    /// Filter edge frequencies (lo, centre, hi) in Hz.
    edges: Vec<(f64, f64, f64)>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(config: &MelConfig, rate: u32, nfft: usize) -> Self {
        let n_bins = nfft / 2 + 1;
        let bin_hz = f64::from(rate) / nfft as f64;
        let (mlo, mhi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
        let points: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let mut rows = Vec::with_capacity(config.n_mels);
        let mut edges = Vec::with_capacity(config.n_mels);
        for m in 0..config.n_mels {
            let (lo, centre, hi) = (points[m], points[m + 1], points[m + 2]);
            edges.push((lo, centre, hi));
            let first = (((lo / bin_hz) - 0.5).floor().max(0.0)) as usize;
            let last = ((((hi / bin_hz) + 0.5).ceil()) as usize).min(n_bins - 1);
            let weights: Vec<f64> = (first..=last)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    triangle_integral(f - bin_hz / 2.0, f + bin_hz / 2.0, lo, centre, hi) / bin_hz
                })
                .collect();
            rows.push((first, weights));
        }
        Self { rows, edges, n_bins }
    }

    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    /// `(lo, centre, hi)` of filter `m` in Hz.
    pub fn edges(&self, m: usize) -> (f64, f64, f64) {
        self.edges[m]
    }

    /// Dense weight row of filter `m` over all bins.
    pub fn dense_row(&self, m: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_bins];
        let (first, w) = &self.rows[m];
        row[*first..*first + w.len()].copy_from_slice(w);
        row
    }

    pub fn project(&self, power: &PowerSpectrogram) -> MelSpectrogram {
        assert_eq!(power.n_bins, self.n_bins, "filterbank built for another FFT size");
        let n_mels = self.rows.len();
        let mut values = Vec::with_capacity(power.frames * n_mels);
        for t in 0..power.frames {
            let frame = power.frame(t);
            values.extend(self.rows.iter().map(|(first, w)| {
                w.iter().zip(&frame[*first..]).map(|(a, b)| a * b).sum::<f64>()
            }));
        }
        MelSpectrogram::from_values(power.frames, n_mels, values)
    }
}

/// Integral over `[a, b]` of the unit-peak triangle on `(lo, centre, hi)`.
fn triangle_integral(a: f64, b: f64, lo: f64, centre: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    let (x0, x1) = (a.max(lo), b.min(centre));
    if x1 > x0 {
        let w = centre - lo;
        total += ((x1 - lo).powi(2) - (x0 - lo).powi(2)) / (2.0 * w);
    }
    let (x0, x1) = (a.max(centre), b.min(hi));
    if x1 > x0 {
        let w = hi - centre;
        total += ((hi - x0).powi(2) - (hi - x1).powi(2)) / (2.0 * w);
    }
    total
}

/// Projects a power spectrogram onto the mel filterbank of `config`.
pub fn mel_project(
    power: &PowerSpectrogram,
    config: &MelConfig,
    rate: u32,
) -> Result<MelSpectrogram, DspError> {
    config.validate(rate)?;
    let mut mel = MelFilterbank::new(config, rate, power.nfft).project(power);
    mel.hop_s = config.hop_length_s;
    mel.frame_s = config.frame_length_s;
    Ok(mel)
}
