use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::draw_gain;
use super::toy::pooled_pcen;
use super::{
    gain_factor, mixup, sample_stream, HeadSpec, MixItem, MixtureConfig, MixupStats, PretrainError, ToyArch,
    ToyEmbedderModel, ToyFrontend, ToyNet,
};
use crate::audio_io;
use crate::corpus::{DatasetRegistry, LabeledClip};
use crate::dsp::{window_clip_samples, MelSpectrogram, PadPolicy};
use crate::embedder::AudioSource;
use crate::probe::Optimizer;
use crate::rng::{self, SeedDeriver};

/// Drops clips whose secondary label is `label`.
pub fn strip_labeled(clips: &[LabeledClip], label: &str) -> Vec<LabeledClip> {
    clips
        .iter()
        .filter(|c| c.secondary.as_deref() != Some(label))
        .cloned()
        .collect()
}

/// Optimisation settings. Batch size and step count come from the
/// [`MixtureConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainHparams {
    pub lr: f64,
    pub arch: ToyArch,
    pub optimizer: Optimizer,
    pub frontend: ToyFrontend,
}

impl Default for PretrainHparams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            arch: ToyArch::default(),
            optimizer: Optimizer::adam(),
            frontend: ToyFrontend::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    /// Total weighted loss of every step's batch.
    pub losses: Vec<f64>,
    pub mixed: usize,
    pub no_partner: usize,
}

impl PretrainLog {
    /// Mean loss over steps `range` (clamped to the run).
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let end = range.end.min(self.losses.len());
        let start = range.start.min(end);
        let s = &self.losses[start..end];
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }
}

struct CachedClip {
    energies: MelSpectrogram,
    peak: f64,
}

struct Prepared {
    model: ToyEmbedderModel,
    cache: HashMap<String, CachedClip>,
}

fn clip_energies(
    clip: &LabeledClip,
    audio: &dyn AudioSource,
    model: &ToyEmbedderModel,
) -> Result<CachedClip, PretrainError> {
    let wrap = |e: PretrainError| PretrainError::Clip {
        clip: clip.cache_key(),
        source: Box::new(e),
    };
    let wave = audio.load(clip).map_err(|e| wrap(e.into()))?;
    let wave = audio_io::resample(&wave, model.frontend.input_rate).map_err(|e| wrap(e.into()))?;
    let target = model.frontend.window_samples();
    let policy = if wave.len() <= target {
        PadPolicy::RepeatPad
    } else {
        PadPolicy::SplitAndCollect
    };
    let window = window_clip_samples(&wave, policy, target)
        .into_iter()
        .next()
        .ok_or_else(|| wrap(PretrainError::Config("empty clip".into())))?;
    let energies = model.mel().mel_energies(window.samples()).map_err(|e| wrap(e.into()))?;
    Ok(CachedClip {
        energies,
        peak: f64::from(window.peak()),
    })
}

fn prepare(
    mixture: &MixtureConfig,
    heads: &[HeadSpec],
    hparams: &PretrainHparams,
    registry: &DatasetRegistry,
    audio: &dyn AudioSource,
    seed: u64,
) -> Result<Prepared, PretrainError> {
    mixture.validate()?;
    heads.iter().try_for_each(HeadSpec::validate)?;
    if !(hparams.lr > 0.0) {
        return Err(PretrainError::Config(format!("learning rate {} must be positive", hparams.lr)));
    }
    let stream = sample_stream(mixture, registry, seed)?;
    let mut clips: Vec<&LabeledClip> = (0..mixture.sources.len())
        .flat_map(|i| stream.source_items(i).iter())
        .collect();
    clips.sort_by_key(|c| c.cache_key());
    clips.dedup_by_key(|c| c.cache_key());

    let fe = hparams.frontend;
    let n_mels = fe.mel.n_mels;
    let head_dims: Vec<usize> = heads.iter().map(|h| h.classes.len()).collect();
    let net = ToyNet::init(n_mels, hparams.arch, &head_dims, SeedDeriver::new(seed).str("init").finish());
    let inference_gain = 0.5 * (mixture.augment.gain_min + mixture.augment.gain_max);
    let mut model = ToyEmbedderModel::assemble(
        "toy",
        fe,
        heads.to_vec(),
        vec![0.0; n_mels],
        vec![1.0; n_mels],
        inference_gain,
        net,
        seed,
    )?;

    let computed: Vec<(String, CachedClip)> = clips
        .par_iter()
        .map(|c| Ok((c.cache_key(), clip_energies(c, audio, &model)?)))
        .collect::<Result<_, PretrainError>>()?;

    // Standardization statistics at the inference gain.
    let mut sum = vec![0.0f64; n_mels];
    let mut sq = vec![0.0f64; n_mels];
    for (_, c) in &computed {
        let pooled = pooled_pcen(&c.energies, gain_factor(c.peak, inference_gain), &fe)?;
        for (k, v) in pooled.iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    let n = computed.len() as f64;
    model.feature_mean = sum.iter().map(|s| (s / n) as f32).collect();
    model.feature_std = sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            let m = s / n;
            ((q / n - m * m).max(0.0).sqrt().max(1e-3)) as f32
        })
        .collect();
    Ok(Prepared {
        model,
        cache: computed.into_iter().collect(),
    })
}

/// The model `pretrain_toy` starts from: initial weights plus input
/// standardization fitted on the mixture's clips.
pub fn init_model(
    mixture: &MixtureConfig,
    heads: &[HeadSpec],
    hparams: &PretrainHparams,
    registry: &DatasetRegistry,
    audio: &dyn AudioSource,
    seed: u64,
) -> Result<ToyEmbedderModel, PretrainError> {
    Ok(prepare(mixture, heads, hparams, registry, audio, seed)?.model)
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

/// Trains the toy embedder for `mixture.steps` steps of `mixture.batch_size`
/// clips drawn from the weighted source stream. Each clip gets a random gain
/// (applied exactly to its mel energies), then MixUp mixes the pooled
/// features and head targets.
pub fn pretrain_toy(
    mixture: &MixtureConfig,
    heads: &[HeadSpec],
    hparams: &PretrainHparams,
    registry: &DatasetRegistry,
    audio: &dyn AudioSource,
    seed: u64,
) -> Result<(ToyEmbedderModel, PretrainLog), PretrainError> {
    let Prepared { mut model, cache } = prepare(mixture, heads, hparams, registry, audio, seed)?;
    let mut stream = sample_stream(mixture, registry, seed)?;
    let mut r = rng::rng(SeedDeriver::new(seed).str("augment").finish());
    let aug = mixture.augment;
    let mut log = PretrainLog::default();
    let n = model.net.params.len();
    let mut adam = Adam {
        m: vec![0.0; n],
        v: vec![0.0; n],
        t: 0,
    };
    for step in 0..mixture.steps {
        let mut batch = Vec::with_capacity(mixture.batch_size);
        for _ in 0..mixture.batch_size {
            let (_, clip) = stream.draw();
            let cached = &cache[&clip.cache_key()];
            let g = draw_gain(&mut r, aug.gain_min, aug.gain_max);
            batch.push(MixItem {
                features: model.features(&cached.energies, gain_factor(cached.peak, g))?,
                targets: heads.iter().map(|h| h.one_hot(&clip)).collect(),
            });
        }
        let MixupStats { mixed, no_partner } = mixup(&mut batch, aug.mixup_p, aug.mixup_lambda, &mut r);
        log.mixed += mixed;
        log.no_partner += no_partner;
        let (loss, grad) = model.net.loss_and_grad(&batch, heads)?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(PretrainError::Diverged { step });
        }
        log.losses.push(loss.total);
        apply_update(&mut model.net.params, &grad, hparams, &mut adam);
        if model.net.params.iter().any(|p| !p.is_finite()) {
            return Err(PretrainError::Diverged { step });
        }
    }
    model.steps_trained = mixture.steps;
    Ok((model, log))
}

fn apply_update(params: &mut [f32], grad: &[f32], hp: &PretrainHparams, adam: &mut Adam) {
    let lr = hp.lr as f32;
    match hp.optimizer {
        Optimizer::Sgd => params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g),
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.t += 1;
            let (b1, b2) = (beta1 as f32, beta2 as f32);
            let c1 = 1.0 - b1.powi(adam.t);
            let c2 = 1.0 - b2.powi(adam.t);
            let eps = eps as f32;
            for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut adam.m).zip(&mut adam.v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PrimaryLabel;

    #[test]
    fn strip_counts() {
        let clips: Vec<LabeledClip> = (0..100)
            .map(|i| {
                let sec = if i % 40 == 0 { "bird" } else { "dog" };
                LabeledClip::new("fs", format!("c{i}"), PrimaryLabel::Biophony, Some(sec))
            })
            .collect();
        assert_eq!(strip_labeled(&clips, "bird").len(), 97);
        assert_eq!(strip_labeled(&clips, "cat").len(), 100);
        assert!(strip_labeled(&clips[..1], "bird").is_empty());
    }
}
