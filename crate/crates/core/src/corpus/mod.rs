//! Labeled clip registry: two-tier labels, amalgamation of rare classes,
//! ambient filtering and seeded few-shot splits.

mod manifest;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, SeedDeriver};

pub use manifest::{export_csv, load_manifest, parse_manifest, save_manifest, to_manifest_json};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate clip id {clip:?} in dataset {dataset:?}")]
    DuplicateClip { dataset: String, clip: String },
    #[error("duplicate dataset id {0:?}")]
    DuplicateDataset(String),
    #[error("clip {clip:?} claims dataset {claimed:?} but sits in {actual:?}")]
    DatasetMismatch {
        clip: String,
        claimed: String,
        actual: String,
    },
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("class {class:?} has {have} samples, needs at least {need}")]
    InsufficientSamples {
        class: String,
        have: usize,
        need: usize,
    },
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse source category of a sound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimaryLabel {
    Biophony,
    Anthrophony,
    Geophony,
    Ambient,
}

impl PrimaryLabel {
    pub const ALL: [PrimaryLabel; 4] = [
        PrimaryLabel::Biophony,
        PrimaryLabel::Anthrophony,
        PrimaryLabel::Geophony,
        PrimaryLabel::Ambient,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrimaryLabel::Biophony => "biophony",
            PrimaryLabel::Anthrophony => "anthrophony",
            PrimaryLabel::Geophony => "geophony",
            PrimaryLabel::Ambient => "ambient",
        }
    }
}

impl fmt::Display for PrimaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrimaryLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown primary label {s:?}"))
    }
}

/// One audio sample and its labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledClip {
    pub dataset_id: String,
    pub clip_id: String,
    pub primary: PrimaryLabel,
    pub secondary: Option<String>,
    /// Audio file path, relative paths resolve against the manifest's directory.
    pub path: String,
    /// Additional per-head labels (e.g. `genus`, `family`, `order`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl LabeledClip {
    pub fn new(
        dataset_id: impl Into<String>,
        clip_id: impl Into<String>,
        primary: PrimaryLabel,
        secondary: Option<&str>,
    ) -> Self {
        let clip_id = clip_id.into();
        Self {
            dataset_id: dataset_id.into(),
            path: format!("{clip_id}.wav"),
            clip_id,
            primary,
            secondary: secondary.map(str::to_owned),
            labels: BTreeMap::new(),
        }
    }

    /// Class used for thresholds and splits: the secondary label when
    /// present, else the primary label.
    pub fn class_name(&self) -> &str {
        self.secondary.as_deref().unwrap_or(self.primary.as_str())
    }

    pub fn is_primary_only(&self) -> bool {
        self.secondary.is_none()
    }

    /// Key used by embedding caches: `dataset/clip`.
    pub fn cache_key(&self) -> String {
        format!("{}/{}", self.dataset_id, self.clip_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub clips: Vec<LabeledClip>,
}

/// Datasets in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetRegistry {
    datasets: Vec<Dataset>,
}

impl DatasetRegistry {
    pub fn new(datasets: Vec<Dataset>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        for ds in &datasets {
            if !ids.insert(ds.id.as_str()) {
                return Err(CorpusError::DuplicateDataset(ds.id.clone()));
            }
            let mut clips = HashSet::new();
            for c in &ds.clips {
                if c.dataset_id != ds.id {
                    return Err(CorpusError::DatasetMismatch {
                        clip: c.clip_id.clone(),
                        claimed: c.dataset_id.clone(),
                        actual: ds.id.clone(),
                    });
                }
                if !clips.insert(c.clip_id.as_str()) {
                    return Err(CorpusError::DuplicateClip {
                        dataset: ds.id.clone(),
                        clip: c.clip_id.clone(),
                    });
                }
            }
        }
        Ok(Self { datasets })
    }

    /// Groups clips by their `dataset_id`, keeping first-seen dataset order.
    pub fn from_clips(clips: impl IntoIterator<Item = LabeledClip>) -> Result<Self, CorpusError> {
        let mut datasets: Vec<Dataset> = Vec::new();
        for c in clips {
            match datasets.iter_mut().find(|d| d.id == c.dataset_id) {
                Some(d) => d.clips.push(c),
                None => datasets.push(Dataset {
                    id: c.dataset_id.clone(),
                    clips: vec![c],
                }),
            }
        }
        Self::new(datasets)
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn dataset_ids(&self) -> Vec<&str> {
        self.datasets.iter().map(|d| d.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Result<&Dataset, CorpusError> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| CorpusError::UnknownDataset(id.to_owned()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.datasets.iter().any(|d| d.id == id)
    }

    pub fn clips(&self) -> impl Iterator<Item = &LabeledClip> {
        self.datasets.iter().flat_map(|d| d.clips.iter())
    }

    /// Class counts for one dataset.
    pub fn class_inventory(&self, id: &str) -> Result<BTreeMap<String, usize>, CorpusError> {
        Ok(class_counts(&self.get(id)?.clips))
    }

    /// Registry without the listed datasets.
    pub fn without(&self, excluded: &[&str]) -> Self {
        Self {
            datasets: self
                .datasets
                .iter()
                .filter(|d| !excluded.contains(&d.id.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Applies `f` to every dataset's clip list.
    pub fn map_clips(&self, f: impl Fn(&[LabeledClip]) -> Vec<LabeledClip>) -> Self {
        Self {
            datasets: self
                .datasets
                .iter()
                .map(|d| Dataset {
                    id: d.id.clone(),
                    clips: f(&d.clips),
                })
                .collect(),
        }
    }
}

pub fn class_counts(clips: &[LabeledClip]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for c in clips {
        *counts.entry(c.class_name().to_owned()).or_insert(0) += 1;
    }
    counts
}

/// Merges rare secondary classes into their primary label and drops
/// primary-only groups that remain too small.
///
/// Secondary classes with fewer than `min_total` clips lose their secondary
/// label. Afterwards each primary-only group (per primary label) totalling
/// fewer than `min_total` clips is discarded. Ambient clips are neither
/// counted, merged nor discarded. Survivors keep their input order.
pub fn amalgamate_labels(clips: &[LabeledClip], min_total: usize) -> Vec<LabeledClip> {
    let is_ambient = |c: &LabeledClip| c.primary == PrimaryLabel::Ambient;
    let mut secondary_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in clips.iter().filter(|c| !is_ambient(c)) {
        if let Some(s) = &c.secondary {
            *secondary_counts.entry(s.as_str()).or_insert(0) += 1;
        }
    }
    let merged: Vec<LabeledClip> = clips
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if !is_ambient(&c) {
                if let Some(s) = &c.secondary {
                    if secondary_counts[s.as_str()] < min_total {
                        c.secondary = None;
                    }
                }
            }
            c
        })
        .collect();
    let mut primary_only: BTreeMap<PrimaryLabel, usize> = BTreeMap::new();
    for c in merged.iter().filter(|c| !is_ambient(c) && c.is_primary_only()) {
        *primary_only.entry(c.primary).or_insert(0) += 1;
    }
    merged
        .into_iter()
        .filter(|c| is_ambient(c) || !c.is_primary_only() || primary_only[&c.primary] >= min_total)
        .collect()
}

/// Drops clips whose primary label is ambient, preserving order.
pub fn filter_ambient(clips: &[LabeledClip]) -> Vec<LabeledClip> {
    clips
        .iter()
        .filter(|c| c.primary != PrimaryLabel::Ambient)
        .cloned()
        .collect()
}

/// Few-shot split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub k: usize,
    pub min_test: usize,
    pub max_train: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            min_test: 10,
            max_train: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.k == 0 || self.k > self.max_train {
            return Err(CorpusError::InvalidSpec(format!(
                "k={} must be in 1..={}",
                self.k, self.max_train
            )));
        }
        if self.min_test == 0 {
            return Err(CorpusError::InvalidSpec("min_test must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<LabeledClip>,
    pub test: Vec<LabeledClip>,
}

/// Per class: exactly `k` clips to train, the rest to test.
///
/// Within a class, clip ids are sorted lexicographically and shuffled with a
/// generator seeded from `(spec.seed, class name)`; the first `k` train. The
/// result depends only on the seed and the clip ids, not on input order.
pub fn split_train_test(clips: &[LabeledClip], spec: &SplitSpec) -> Result<Split, CorpusError> {
    spec.validate()?;
    let mut by_class: BTreeMap<&str, Vec<&LabeledClip>> = BTreeMap::new();
    for c in clips {
        by_class.entry(c.class_name()).or_default().push(c);
    }
    let need = spec.k + spec.min_test;
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut members) in by_class {
        if members.len() < need {
            return Err(CorpusError::InsufficientSamples {
                class: class.to_owned(),
                have: members.len(),
                need,
            });
        }
        members.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let mut r = rng::rng(SeedDeriver::new(spec.seed).str(class).finish());
        members.shuffle(&mut r);
        let (train, test) = members.split_at(spec.k);
        split.train.extend(train.iter().map(|&c| c.clone()));
        let mut test: Vec<LabeledClip> = test.iter().map(|&c| c.clone()).collect();
        test.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        split.test.extend(test);
    }
    Ok(split)
}

/// Distinct class names, sorted.
pub fn class_names(clips: &[LabeledClip]) -> BTreeSet<String> {
    clips.iter().map(|c| c.class_name().to_owned()).collect()
}
