use rand::{Rng as _, RngCore};
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;

/// Draws a gain `g ~ U[gain_min, gain_max]` and rescales `wave` so its peak
/// equals `g`. A silent wave is returned unchanged.
pub fn augment_gain(wave: &Waveform, rng: &mut impl RngCore, gain_min: f64, gain_max: f64) -> Waveform {
    let g = draw_gain(rng, gain_min, gain_max);
    let peak = f64::from(wave.peak());
    if peak == 0.0 {
        return wave.clone();
    }
    let scale = gain_factor(peak, g);
    let samples = wave.samples().iter().map(|&s| (f64::from(s) * scale) as f32).collect();
    Waveform::from_clamped(samples, wave.sample_rate()).expect("rate of a valid waveform")
}

pub(crate) fn draw_gain(rng: &mut impl RngCore, gain_min: f64, gain_max: f64) -> f64 {
    if gain_min == gain_max {
        gain_min
    } else {
        rng.random_range(gain_min..=gain_max)
    }
}

/// Amplitude factor mapping a wave of peak `peak` to peak `gain`; 1 for silence.
pub fn gain_factor(peak: f64, gain: f64) -> f64 {
    if peak > 0.0 {
        gain / peak
    } else {
        1.0
    }
}

/// Distribution of the MixUp weight of the original example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaDist {
    Uniform,
    Beta { alpha: f64 },
}

impl LambdaDist {
    fn sample(&self, rng: &mut impl RngCore) -> f64 {
        match *self {
            LambdaDist::Uniform => rng.random::<f64>(),
            LambdaDist::Beta { alpha } => Beta::new(alpha, alpha).map(|b| b.sample(rng)).unwrap_or(0.5),
        }
    }
}

/// Network input plus one optional soft target per head. `None` masks the
/// head for this example.
#[derive(Debug, Clone, PartialEq)]
pub struct MixItem {
    pub features: Vec<f32>,
    pub targets: Vec<Option<Vec<f32>>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MixupStats {
    pub mixed: usize,
    /// Examples selected for mixing that had no partner (batch of one).
    pub no_partner: usize,
}

/// Mixes each example with probability `p` with a partner drawn uniformly
/// from the rest of the batch: `x ← λx + (1−λ)x'`, same for every head
/// target present on both sides. A head target present on only one side is
/// kept as is. Partners are read from the batch as it was before mixing.
pub fn mixup(batch: &mut [MixItem], p: f64, lambda: LambdaDist, rng: &mut impl RngCore) -> MixupStats {
    let mut stats = MixupStats::default();
    if p <= 0.0 {
        return stats;
    }
    let original = batch.to_vec();
    let n = batch.len();
    for i in 0..n {
        if rng.random::<f64>() >= p {
            continue;
        }
        if n < 2 {
            stats.no_partner += 1;
            continue;
        }
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let lam = lambda.sample(rng);
        mix_into(&mut batch[i], &original[j], lam);
        stats.mixed += 1;
    }
    stats
}

fn mix_into(item: &mut MixItem, partner: &MixItem, lam: f64) {
    let blend = |a: &mut [f32], b: &[f32]| {
        for (x, &y) in a.iter_mut().zip(b) {
            *x = (lam * f64::from(*x) + (1.0 - lam) * f64::from(y)) as f32;
        }
    };
    blend(&mut item.features, &partner.features);
    for (t, pt) in item.targets.iter_mut().zip(&partner.targets) {
        match (t.as_mut(), pt) {
            (Some(a), Some(b)) => blend(a, b),
            (None, Some(b)) => *t = Some(b.clone()),
            _ => {}
        }
    }
}
