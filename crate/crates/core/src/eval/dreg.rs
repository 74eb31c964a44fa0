use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{embed_clips, fewshot_cell, fewshot_eval, with_workers, EvalError, EvalRecord, EvalReport, FewshotConfig};
use crate::corpus::{amalgamate_labels, Dataset, DatasetRegistry};
use crate::embedder::{AudioBackend, AudioSource, EmbeddingProvider};
use crate::pretrain::{
    derive_heads, exclude_holdout_classes, pretrain_toy, HeadSpec, MixtureConfig, PretrainHparams, PretrainLog,
    ToyEmbedderModel,
};
use crate::rng::SeedDeriver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DregConfig {
    /// Mixture over the whole registry; each rotation drops its holdout.
    /// `None` means one equally weighted source per dataset, all sharing
    /// one head group.
    #[serde(default)]
    pub mixture: Option<MixtureConfig>,
    #[serde(default)]
    pub hparams: PretrainHparams,
    #[serde(default)]
    pub fewshot: FewshotConfig,
    #[serde(default)]
    pub seed: u64,
    /// Amalgamation threshold applied to the holdout before evaluation.
    #[serde(default)]
    pub min_class_size: Option<usize>,
}

impl DregConfig {
    pub fn new(fewshot: FewshotConfig, seed: u64) -> Self {
        Self {
            mixture: None,
            hparams: PretrainHparams::default(),
            fewshot,
            seed,
            min_class_size: None,
        }
    }

    pub fn full_mixture(&self, registry: &DatasetRegistry) -> MixtureConfig {
        self.mixture
            .clone()
            .unwrap_or_else(|| MixtureConfig::uniform_over(&registry.dataset_ids(), "all"))
    }

    pub fn pretrain_seed(&self, holdout: &str) -> u64 {
        SeedDeriver::new(self.seed).str("dreg").str(holdout).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub holdout: String,
    pub training: Vec<String>,
    pub heads: Vec<HeadSpec>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
    /// Mean batch loss over the first and last 10% of pretraining steps.
    pub loss_start: Option<f64>,
    pub loss_end: Option<f64>,
}

/// Pretrains on every dataset except `holdout` and evaluates on `holdout`.
/// Depends only on its arguments, so a rotation run alone matches the same
/// rotation inside [`dreg`].
pub fn dreg_rotation(
    registry: &DatasetRegistry,
    audio: Arc<dyn AudioSource>,
    cfg: &DregConfig,
    holdout: &str,
) -> Rotation {
    let full = cfg.full_mixture(registry);
    let mixture = full.without_dataset(holdout);
    let mut rotation = Rotation {
        holdout: holdout.to_owned(),
        training: mixture.sources.iter().flat_map(|s| s.datasets.iter().cloned()).collect(),
        heads: Vec::new(),
        report: None,
        error: None,
        loss_start: None,
        loss_end: None,
    };
    if let Err(e) = run(registry, audio, cfg, holdout, &mut rotation) {
        rotation.error = Some(e.to_string());
    }
    rotation
}

/// Pretrained model, heads, loss log and evaluation set of one rotation.
struct RotationModel {
    model: ToyEmbedderModel,
    log: PretrainLog,
    heads: Vec<HeadSpec>,
    eval_set: Dataset,
}

fn rotation_model(
    registry: &DatasetRegistry,
    audio: &dyn AudioSource,
    cfg: &DregConfig,
    holdout: &str,
) -> Result<RotationModel, EvalError> {
    let target = registry.get(holdout)?;
    let full = cfg.full_mixture(registry);
    let mixture = full.without_dataset(holdout);
    if mixture.sources.is_empty() {
        return Err(EvalError::Config(format!("no training data left without {holdout:?}")));
    }
    let heads = exclude_holdout_classes(&derive_heads(registry, &full)?, holdout, registry)?;
    let (model, log) = pretrain_toy(&mixture, &heads, &cfg.hparams, registry, audio, cfg.pretrain_seed(holdout))?;
    Ok(RotationModel {
        model,
        log,
        heads,
        eval_set: holdout_eval_set(target, cfg),
    })
}

/// The holdout as evaluated: amalgamated when `min_class_size` is set.
pub fn holdout_eval_set(target: &Dataset, cfg: &DregConfig) -> Dataset {
    match cfg.min_class_size {
        Some(m) => Dataset {
            id: target.id.clone(),
            clips: amalgamate_labels(&target.clips, m),
        },
        None => target.clone(),
    }
}

fn run(
    registry: &DatasetRegistry,
    audio: Arc<dyn AudioSource>,
    cfg: &DregConfig,
    holdout: &str,
    rotation: &mut Rotation,
) -> Result<(), EvalError> {
    let rm = rotation_model(registry, audio.as_ref(), cfg, holdout)?;
    rotation.heads = rm.heads;
    let losses = &rm.log.losses;
    let tenth = (losses.len() / 10).max(1);
    if !losses.is_empty() {
        rotation.loss_start = Some(rm.log.mean_loss(0..tenth));
        rotation.loss_end = Some(rm.log.mean_loss(losses.len() - tenth..losses.len()));
    }
    let backend = AudioBackend::new(Arc::new(rm.model), audio);
    rotation.report = Some(fewshot_eval(&rm.eval_set, &backend, &cfg.fewshot)?);
    Ok(())
}

/// A single `(k, repeat)` cell of the `holdout` rotation. Matches the
/// corresponding record of [`dreg`] exactly.
pub fn dreg_cell(
    registry: &DatasetRegistry,
    audio: Arc<dyn AudioSource>,
    cfg: &DregConfig,
    holdout: &str,
    k: usize,
    repeat: usize,
) -> Result<EvalRecord, EvalError> {
    cfg.fewshot.validate()?;
    let rm = rotation_model(registry, audio.as_ref(), cfg, holdout)?;
    let backend = AudioBackend::new(Arc::new(rm.model), audio);
    let embeddings = with_workers(cfg.fewshot.workers, || embed_clips(&rm.eval_set.clips, &backend))??;
    Ok(fewshot_cell(&rm.eval_set, &embeddings, backend.name(), k, repeat, &cfg.fewshot))
}

/// One rotation per dataset, in registry order. A failing rotation is
/// recorded and the rest still run.
pub fn dreg(
    registry: &DatasetRegistry,
    audio: Arc<dyn AudioSource>,
    cfg: &DregConfig,
) -> Result<Vec<Rotation>, EvalError> {
    if registry.datasets().len() < 2 {
        return Err(EvalError::Config("rotation needs at least two datasets".into()));
    }
    let ids = registry.dataset_ids();
    with_workers(cfg.fewshot.workers, || {
        ids.par_iter()
            .map(|d| dreg_rotation(registry, audio.clone(), cfg, d))
            .collect()
    })
}
