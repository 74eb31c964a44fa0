use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, EvalRecord, EvalReport};
use crate::corpus::{class_counts, split_train_test, Dataset, LabeledClip, SplitSpec};
use crate::embedder::EmbeddingProvider;
use crate::probe::{auc_roc_macro, score_examples, train_probe, LabeledEmbedding, ProbeHparams};
use crate::rng::cell_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewshotConfig {
    pub ks: Vec<usize>,
    pub repeats: usize,
    pub base_seed: u64,
    pub probe: ProbeHparams,
    pub min_test: usize,
    pub max_train: usize,
    /// Worker threads for embedding and cells; `None` uses all cores.
    pub workers: Option<usize>,
}

impl Default for FewshotConfig {
    fn default() -> Self {
        Self {
            ks: vec![4, 8, 16, 32],
            repeats: 10,
            base_seed: 0,
            probe: ProbeHparams::default(),
            min_test: 10,
            max_train: 32,
            workers: None,
        }
    }
}

impl FewshotConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0 || k > self.max_train) {
            return Err(EvalError::Config(format!("ks {:?} must lie in 1..={}", self.ks, self.max_train)));
        }
        if self.repeats == 0 {
            return Err(EvalError::Config("repeats must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(EvalError::Config("workers must be positive".into()));
        }
        Ok(())
    }
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, EvalError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| EvalError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Embeddings keyed by [`LabeledClip::cache_key`], computed in parallel.
pub fn embed_clips(clips: &[LabeledClip], provider: &dyn EmbeddingProvider) -> Result<HashMap<String, Vec<f32>>, EvalError> {
    clips
        .par_iter()
        .map(|c| Ok((c.cache_key(), provider.embed(c)?.values)))
        .collect()
}

fn skip_reason(clips: &[LabeledClip], k: usize, cfg: &FewshotConfig) -> Option<String> {
    let need = k + cfg.min_test;
    class_counts(clips)
        .into_iter()
        .find(|(_, n)| *n < need)
        .map(|(class, n)| format!("skipped: class {class:?} has {n} clips, k={k} needs {need}"))
}

/// One `(k, repeat)` cell on pre-computed embeddings. Failures are
/// returned as a record without AUC and with the reason in `note`.
pub fn fewshot_cell(
    dataset: &Dataset,
    embeddings: &HashMap<String, Vec<f32>>,
    model: &str,
    k: usize,
    repeat: usize,
    cfg: &FewshotConfig,
) -> EvalRecord {
    let seed = cell_seed(cfg.base_seed, &dataset.id, k, repeat);
    let mut record = EvalRecord {
        model: model.to_owned(),
        dataset: dataset.id.clone(),
        k,
        repeat,
        seed,
        macro_auc: None,
        per_class: BTreeMap::new(),
        note: None,
    };
    if let Some(reason) = skip_reason(&dataset.clips, k, cfg) {
        record.note = Some(reason);
        return record;
    }
    match run_cell(dataset, embeddings, k, seed, cfg) {
        Ok((mean, per_class)) => {
            record.macro_auc = Some(mean);
            record.per_class = per_class;
        }
        Err(e) => record.note = Some(format!("failed: {e}")),
    }
    record
}

fn run_cell(
    dataset: &Dataset,
    embeddings: &HashMap<String, Vec<f32>>,
    k: usize,
    seed: u64,
    cfg: &FewshotConfig,
) -> Result<(f64, BTreeMap<String, f64>), String> {
    let spec = SplitSpec {
        k,
        min_test: cfg.min_test,
        max_train: cfg.max_train,
        seed,
    };
    let split = split_train_test(&dataset.clips, &spec).map_err(|e| e.to_string())?;
    let labeled = |clips: &[LabeledClip]| -> Result<Vec<LabeledEmbedding>, String> {
        clips
            .iter()
            .map(|c| {
                let key = c.cache_key();
                let values = embeddings.get(&key).ok_or_else(|| format!("no embedding for {key}"))?;
                Ok(LabeledEmbedding {
                    id: key,
                    values: values.clone(),
                    class: c.class_name().to_owned(),
                })
            })
            .collect()
    };
    let train = labeled(&split.train)?;
    let test = labeled(&split.test)?;
    let outcome = train_probe::<f32>(&train, &cfg.probe, seed).map_err(|e| e.to_string())?;
    let scored = score_examples(&outcome.model, &test).map_err(|e| e.to_string())?;
    let auc = auc_roc_macro(&scored, &outcome.model.classes).map_err(|e| e.to_string())?;
    Ok((auc.mean, auc.per_class.into_iter().collect()))
}

/// Few-shot evaluation on already embedded clips.
pub fn fewshot_eval_embedded(
    dataset: &Dataset,
    embeddings: &HashMap<String, Vec<f32>>,
    model: &str,
    cfg: &FewshotConfig,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .ks
        .iter()
        .flat_map(|&k| (0..cfg.repeats).map(move |r| (k, r)))
        .collect();
    let records = with_workers(cfg.workers, || {
        cells
            .par_iter()
            .map(|&(k, r)| fewshot_cell(dataset, embeddings, model, k, r, cfg))
            .collect()
    })?;
    Ok(EvalReport::new(records))
}

/// Embeds every clip of `dataset` once, then runs all `(k, repeat)` cells:
/// seeded split, probe training, macro AUC on the held-out clips. A `k`
/// that some class cannot support yields records marked skipped.
pub fn fewshot_eval(
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    cfg: &FewshotConfig,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let embeddings = with_workers(cfg.workers, || embed_clips(&dataset.clips, provider))??;
    fewshot_eval_embedded(dataset, &embeddings, provider.name(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PrimaryLabel;

    /// Two well separated classes of 3-d points plus a small third class.
    fn fixture() -> (Dataset, HashMap<String, Vec<f32>>) {
        let mut clips = Vec::new();
        let mut emb = HashMap::new();
        for (class, n, centre) in [("a", 20usize, 0.0f32), ("b", 20, 5.0), ("c", 12, -5.0)] {
            for i in 0..n {
                let c = LabeledClip::new("d", format!("{class}{i:02}"), PrimaryLabel::Biophony, Some(class));
                let jitter = (i as f32 * 0.37).sin() * 0.5;
                emb.insert(c.cache_key(), vec![centre + jitter, centre - jitter, 1.0]);
                clips.push(c);
            }
        }
        (Dataset { id: "d".into(), clips }, emb)
    }

    #[test]
    fn grid_shape_and_skips() {
        let (ds, emb) = fixture();
        let cfg = FewshotConfig {
            ks: vec![1, 2, 4],
            repeats: 3,
            probe: ProbeHparams { epochs: 20, lr: 0.05, ..ProbeHparams::default() },
            ..FewshotConfig::default()
        };
        let rep = fewshot_eval_embedded(&ds, &emb, "toy", &cfg).unwrap();
        assert_eq!(rep.records.len(), 9);
        for r in &rep.records {
            if r.k == 4 {
                assert!(r.macro_auc.is_none());
                assert!(r.note.as_deref().unwrap().contains("\"c\""));
            } else {
                assert!(r.macro_auc.unwrap() > 0.9, "{r:?}");
            }
        }
        let again = fewshot_eval_embedded(&ds, &emb, "toy", &cfg).unwrap();
        assert_eq!(again, rep);
    }

    #[test]
    fn cells_use_distinct_seeds() {
        let (ds, emb) = fixture();
        let cfg = FewshotConfig::default();
        let a = fewshot_cell(&ds, &emb, "m", 1, 0, &cfg);
        let b = fewshot_cell(&ds, &emb, "m", 2, 0, &cfg);
        assert_ne!(a.seed, b.seed);
    }
}
