//! Cross-domain mixture pretraining of the toy embedder: weighted source
//! sampling, random-gain and MixUp augmentation, multi-head loss.

mod augment;
mod heads;
mod sampler;
mod toy;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment_gain, gain_factor, mixup, LambdaDist, MixItem, MixupStats};
pub use heads::{
    derive_heads, exclude_holdout_classes, multi_head_loss, HeadLoss, HeadLogits, HeadSpec,
    LabelKey, TAXONOMY_KEYS, TAXONOMY_LOSS_WEIGHT,
};
pub use sampler::{sample_stream, SampleStream};
pub use toy::{ToyArch, ToyEmbedderModel, ToyFrontend, ToyNet};
pub use train::{init_model, pretrain_toy, strip_labeled, PretrainHparams, PretrainLog};

use crate::audio_io::AudioError;
use crate::dsp::DspError;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("mixture config: {0}")]
    Config(String),
    #[error("source {0:?} is empty")]
    EmptySource(String),
    #[error("head {head:?}: {message}")]
    Head { head: String, message: String },
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },
    #[error("clip {clip}: {source}")]
    Clip {
        clip: String,
        #[source]
        source: Box<PretrainError>,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

/// One sampling source: a group of datasets drawn with probability `weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub id: String,
    pub datasets: Vec<String>,
    pub weight: f64,
    /// Sources sharing a head group share output heads. Defaults to `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_group: Option<String>,
}

impl SourceSpec {
    pub fn new(id: &str, datasets: &[&str], weight: f64) -> Self {
        Self {
            id: id.to_owned(),
            datasets: datasets.iter().map(|s| (*s).to_owned()).collect(),
            weight,
            head_group: None,
        }
    }

    pub fn with_head_group(mut self, group: &str) -> Self {
        self.head_group = Some(group.to_owned());
        self
    }

    pub fn head_group(&self) -> &str {
        self.head_group.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub gain_min: f64,
    pub gain_max: f64,
    pub mixup_p: f64,
    pub mixup_lambda: LambdaDist,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            gain_min: 0.15,
            gain_max: 0.25,
            mixup_p: 0.75,
            mixup_lambda: LambdaDist::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub sources: Vec<SourceSpec>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub augment: AugmentConfig,
}

fn default_batch() -> usize {
    32
}

fn default_steps() -> usize {
    2000
}

impl MixtureConfig {
    pub fn new(sources: Vec<SourceSpec>) -> Self {
        Self {
            sources,
            batch_size: default_batch(),
            steps: default_steps(),
            augment: AugmentConfig::default(),
        }
    }

    /// Equal weights, one source per dataset, all sharing one head group.
    pub fn uniform_over(datasets: &[&str], head_group: &str) -> Self {
        let w = 1.0 / datasets.len() as f64;
        Self::new(
            datasets
                .iter()
                .map(|d| SourceSpec::new(d, &[d], w).with_head_group(head_group))
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<(), PretrainError> {
        let bad = |m: String| Err(PretrainError::Config(m));
        if self.sources.is_empty() {
            return bad("no sources".into());
        }
        for s in &self.sources {
            if !(s.weight > 0.0 && s.weight <= 1.0) {
                return bad(format!("source {:?} weight {} not in (0, 1]", s.id, s.weight));
            }
        }
        let total: f64 = self.sources.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}, expected 1"));
        }
        let a = &self.augment;
        if !(a.gain_min > 0.0 && a.gain_min <= a.gain_max) {
            return bad(format!("gain range [{}, {}] invalid", a.gain_min, a.gain_max));
        }
        if !(0.0..=1.0).contains(&a.mixup_p) {
            return bad(format!("mixup_p {} not in [0, 1]", a.mixup_p));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Drops `dataset` from every source; sources left empty are removed and
    /// the remaining weights renormalized.
    pub fn without_dataset(&self, dataset: &str) -> Self {
        let mut out = self.clone();
        for s in &mut out.sources {
            s.datasets.retain(|d| d != dataset);
        }
        out.sources.retain(|s| !s.datasets.is_empty());
        let total: f64 = out.sources.iter().map(|s| s.weight).sum();
        if total > 0.0 {
            out.sources.iter_mut().for_each(|s| s.weight /= total);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let mut m = MixtureConfig::new(vec![SourceSpec::new("a", &["x"], 0.9), SourceSpec::new("b", &["y"], 0.1)]);
        assert!(m.validate().is_ok());
        m.sources[1].weight = 0.2;
        assert!(m.validate().is_err());
        let mut m = MixtureConfig::new(vec![SourceSpec::new("a", &["x"], 1.0)]);
        m.augment.gain_min = 0.3;
        assert!(m.validate().is_err());
    }

    #[test]
    fn holdout_removal_renormalizes() {
        let m = MixtureConfig::new(vec![
            SourceSpec::new("reef", &["a", "b"], 0.5),
            SourceSpec::new("solo", &["c"], 0.5),
        ]);
        let r = m.without_dataset("c");
        assert_eq!(r.sources.len(), 1);
        assert_eq!(r.sources[0].weight, 1.0);
        let r = m.without_dataset("a");
        assert_eq!(r.sources[0].datasets, vec!["b".to_string()]);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn json_roundtrip_with_defaults() {
        let text = r#"{"sources":[{"id":"reef","datasets":["a"],"weight":1.0}]}"#;
        let m: MixtureConfig = serde_json::from_str(text).unwrap();
        assert_eq!(m.batch_size, 32);
        assert_eq!(m.augment.mixup_p, 0.75);
        let again: MixtureConfig = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(again, m);
    }
}
