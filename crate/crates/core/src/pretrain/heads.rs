use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{MixtureConfig, PretrainError};
use crate::corpus::{DatasetRegistry, LabeledClip, PrimaryLabel};

/// Extra label keys treated as coarse taxonomy heads.
pub const TAXONOMY_KEYS: [&str; 3] = ["genus", "family", "order"];
pub const TAXONOMY_LOSS_WEIGHT: f64 = 0.1;

/// Which clip label a head predicts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKey {
    Primary,
    Secondary,
    /// A key of [`LabeledClip::labels`].
    Extra(String),
}

impl LabelKey {
    pub fn label_of<'a>(&self, clip: &'a LabeledClip) -> Option<&'a str> {
        match self {
            LabelKey::Primary => (clip.primary != PrimaryLabel::Ambient).then(|| clip.primary.as_str()),
            LabelKey::Secondary => clip.secondary.as_deref(),
            LabelKey::Extra(k) => clip.labels.get(k).map(String::as_str),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            LabelKey::Primary => "primary",
            LabelKey::Secondary => "secondary",
            LabelKey::Extra(k) => k,
        }
    }
}

/// An output head: a softmax over `classes`, trained on clips from
/// `datasets` (all datasets when empty) that carry a label under `key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub classes: Vec<String>,
    #[serde(default = "one")]
    pub loss_weight: f64,
    pub key: LabelKey,
    #[serde(default)]
    pub datasets: Vec<String>,
}

fn one() -> f64 {
    1.0
}

impl HeadSpec {
    pub fn new(name: &str, key: LabelKey, classes: &[&str]) -> Self {
        Self {
            name: name.to_owned(),
            classes: classes.iter().map(|c| (*c).to_owned()).collect(),
            loss_weight: 1.0,
            key,
            datasets: Vec::new(),
        }
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.loss_weight = w;
        self
    }

    pub fn validate(&self) -> Result<(), PretrainError> {
        let err = |m: &str| PretrainError::Head {
            head: self.name.clone(),
            message: m.to_owned(),
        };
        if !(self.loss_weight > 0.0 && self.loss_weight.is_finite()) {
            return Err(err("loss weight must be positive"));
        }
        if self.classes.is_empty() {
            return Err(err("no classes"));
        }
        if self.classes.iter().collect::<BTreeSet<_>>().len() != self.classes.len() {
            return Err(err("duplicate class"));
        }
        Ok(())
    }

    pub fn in_scope(&self, clip: &LabeledClip) -> bool {
        self.datasets.is_empty() || self.datasets.iter().any(|d| *d == clip.dataset_id)
    }

    /// Class index of `clip` for this head, `None` when the head is masked.
    pub fn target_index(&self, clip: &LabeledClip) -> Option<usize> {
        if !self.in_scope(clip) {
            return None;
        }
        let label = self.key.label_of(clip)?;
        self.classes.iter().position(|c| c == label)
    }

    pub fn one_hot(&self, clip: &LabeledClip) -> Option<Vec<f32>> {
        self.target_index(clip).map(|i| {
            let mut y = vec![0.0; self.classes.len()];
            y[i] = 1.0;
            y
        })
    }
}

/// Heads for every head group of the mixture: primary, secondary and one per
/// extra label key, each over the labels seen in the group's non-ambient
/// clips. Heads with fewer than two classes are omitted. Taxonomy keys get
/// weight [`TAXONOMY_LOSS_WEIGHT`], everything else 1.
pub fn derive_heads(registry: &DatasetRegistry, mixture: &MixtureConfig) -> Result<Vec<HeadSpec>, PretrainError> {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for s in &mixture.sources {
        let g = s.head_group().to_owned();
        match groups.iter_mut().find(|(name, _)| *name == g) {
            Some((_, ds)) => ds.extend(s.datasets.iter().cloned()),
            None => groups.push((g, s.datasets.clone())),
        }
    }
    let mut heads = Vec::new();
    for (group, datasets) in groups {
        let mut clips = Vec::new();
        for d in &datasets {
            clips.extend(registry.get(d)?.clips.iter());
        }
        let extras: BTreeSet<&String> = clips.iter().flat_map(|c| c.labels.keys()).collect();
        let keys = [LabelKey::Primary, LabelKey::Secondary]
            .into_iter()
            .chain(extras.into_iter().map(|k| LabelKey::Extra(k.clone())));
        for key in keys {
            let classes: BTreeSet<&str> = clips.iter().filter_map(|c| key.label_of(c)).collect();
            if classes.len() < 2 {
                continue;
            }
            let weight = if TAXONOMY_KEYS.contains(&key.name()) {
                TAXONOMY_LOSS_WEIGHT
            } else {
                1.0
            };
            heads.push(HeadSpec {
                name: format!("{group}/{}", key.name()),
                classes: classes.into_iter().map(str::to_owned).collect(),
                loss_weight: weight,
                key,
                datasets: datasets.clone(),
            });
        }
    }
    Ok(heads)
}

/// Removes classes whose clips all come from `holdout`; a class labelled in
/// any other dataset of `registry` stays. Heads left with fewer than two
/// classes are dropped.
pub fn exclude_holdout_classes(
    heads: &[HeadSpec],
    holdout: &str,
    registry: &DatasetRegistry,
) -> Result<Vec<HeadSpec>, PretrainError> {
    registry.get(holdout)?;
    let mut out = Vec::with_capacity(heads.len());
    for h in heads {
        let mut seen_in: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for clip in registry.clips() {
            if let Some(l) = h.key.label_of(clip) {
                seen_in.entry(l).or_default().insert(&clip.dataset_id);
            }
        }
        let exclusive = |c: &str| seen_in.get(c).is_some_and(|ds| ds.len() == 1 && ds.contains(holdout));
        let mut head = h.clone();
        head.classes.retain(|c| !exclusive(c));
        if head.classes.len() >= 2 {
            out.push(head);
        }
    }
    Ok(out)
}

/// One head's batch: row-major `B × C` logits and one optional target per row.
#[derive(Debug, Clone)]
pub struct HeadLogits<'a> {
    pub logits: &'a [f32],
    pub targets: Vec<Option<&'a [f32]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadLoss {
    pub total: f64,
    /// Unweighted cross entropy per head.
    pub per_head: Vec<(String, f64)>,
    /// `∂total/∂logits` per head, same layout as the logits.
    pub grads: Vec<Vec<f64>>,
}

/// `total = Σ_h w_h · CE_h`, where `CE_h` sums `−Σ_c y_c log softmax(z)_c`
/// over unmasked rows and divides by the full batch size.
pub fn multi_head_loss(outputs: &[HeadLogits<'_>], heads: &[HeadSpec]) -> Result<HeadLoss, PretrainError> {
    if outputs.len() != heads.len() {
        return Err(PretrainError::Config(format!(
            "{} logit blocks for {} heads",
            outputs.len(),
            heads.len()
        )));
    }
    let mut total = 0.0;
    let mut per_head = Vec::with_capacity(heads.len());
    let mut grads = Vec::with_capacity(heads.len());
    for (out, head) in outputs.iter().zip(heads) {
        let c = head.classes.len();
        let b = out.targets.len();
        let mismatch = |what: String| PretrainError::Head {
            head: head.name.clone(),
            message: what,
        };
        if out.logits.len() != b * c {
            return Err(mismatch(format!("{} logits for {b} rows of {c} classes", out.logits.len())));
        }
        let mut grad = vec![0.0; b * c];
        let mut ce = 0.0;
        for (i, target) in out.targets.iter().enumerate() {
            let Some(y) = target else { continue };
            if y.len() != c {
                return Err(mismatch(format!("target has {} entries, head has {c} classes", y.len())));
            }
            let z = &out.logits[i * c..(i + 1) * c];
            let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
            let lse = max + z.iter().map(|&v| (f64::from(v) - max).exp()).sum::<f64>().ln();
            let mass: f64 = y.iter().map(|&v| f64::from(v)).sum();
            for k in 0..c {
                let logp = f64::from(z[k]) - lse;
                let yk = f64::from(y[k]);
                ce -= yk * logp;
                grad[i * c + k] = logp.exp() * mass - yk;
            }
        }
        let scale = if b > 0 { 1.0 / b as f64 } else { 0.0 };
        ce *= scale;
        grad.iter_mut().for_each(|g| *g *= head.loss_weight * scale);
        total += head.loss_weight * ce;
        per_head.push((head.name.clone(), ce));
        grads.push(grad);
    }
    Ok(HeadLoss { total, per_head, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dataset, PrimaryLabel::*};

    fn clip(ds: &str, id: &str, sec: Option<&str>) -> LabeledClip {
        LabeledClip::new(ds, id, Biophony, sec)
    }

    fn registry() -> DatasetRegistry {
        DatasetRegistry::new(vec![
            Dataset { id: "a".into(), clips: vec![clip("a", "1", Some("fish")), clip("a", "2", Some("shrimp"))] },
            Dataset { id: "b".into(), clips: vec![clip("b", "1", Some("fish")), LabeledClip::new("b", "2", Geophony, None)] },
            Dataset { id: "h".into(), clips: vec![clip("h", "1", Some("whale")), clip("h", "2", Some("shrimp"))] },
        ])
        .unwrap()
    }

    #[test]
    fn plain_cross_entropy() {
        let h = [HeadSpec::new("s", LabelKey::Secondary, &["x", "y", "z"])];
        let logits = [0.0f32; 3];
        let y = [0.0, 1.0, 0.0f32];
        let out = multi_head_loss(&[HeadLogits { logits: &logits, targets: vec![Some(&y)] }], &h).unwrap();
        assert!((out.total - 3f64.ln()).abs() < 1e-12);
        let g = &out.grads[0];
        assert!((g[1] - (1.0 / 3.0 - 1.0)).abs() < 1e-12 && (g[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_sum_and_mask() {
        let h = [
            HeadSpec::new("p", LabelKey::Primary, &["a", "b"]),
            HeadSpec::new("g", LabelKey::Extra("genus".into()), &["a", "b"]).with_weight(0.1),
        ];
        let e = std::f64::consts::E;
        let z = [(e - 1.0).ln() as f32, 0.0];
        let y = [0.0f32, 1.0];
        let zz = [z[0], z[1], 5.0, -5.0];
        let out = multi_head_loss(
            &[
                HeadLogits { logits: &z, targets: vec![Some(&y)] },
                HeadLogits { logits: &zz, targets: vec![Some(&y), None] },
            ],
            &h,
        )
        .unwrap();
        assert!((out.per_head[0].1 - 1.0).abs() < 1e-6);
        assert!((out.per_head[1].1 - 0.5).abs() < 1e-6);
        assert!((out.total - 1.05).abs() < 1e-6);
        assert_eq!(&out.grads[1][2..], &[0.0, 0.0]);
    }

    #[test]
    fn dim_mismatch_names_head() {
        let h = [HeadSpec::new("sec", LabelKey::Secondary, &["x", "y"])];
        let y = [1.0f32, 0.0, 0.0];
        let err = multi_head_loss(&[HeadLogits { logits: &[0.0, 0.0], targets: vec![Some(&y)] }], &h).unwrap_err();
        assert!(err.to_string().contains("sec"));
    }

    #[test]
    fn holdout_exclusion() {
        let reg = registry();
        let heads = vec![
            HeadSpec::new("sec", LabelKey::Secondary, &["fish", "shrimp", "whale"]),
            HeadSpec::new("pri", LabelKey::Primary, &["biophony", "geophony"]),
        ];
        let out = exclude_holdout_classes(&heads, "h", &reg).unwrap();
        assert_eq!(out[0].classes, vec!["fish", "shrimp"]);
        assert_eq!(out[1].classes, vec!["biophony", "geophony"]);
        assert!(exclude_holdout_classes(&heads, "nope", &reg).is_err());
    }

    #[test]
    fn derived_heads_follow_groups() {
        let mut reg_clips: Vec<LabeledClip> = registry().clips().cloned().collect();
        reg_clips[0].labels.insert("genus".into(), "g1".into());
        reg_clips[1].labels.insert("genus".into(), "g2".into());
        let reg = DatasetRegistry::from_clips(reg_clips).unwrap();
        let mix = MixtureConfig::uniform_over(&["a", "b"], "reef");
        let heads = derive_heads(&reg, &mix).unwrap();
        let names: Vec<&str> = heads.iter().map(|h| h.name.as_str()).collect();
        assert_eq!(names, vec!["reef/primary", "reef/secondary", "reef/genus"]);
        assert_eq!(heads[1].classes, vec!["fish", "shrimp"]);
        assert_eq!(heads[2].loss_weight, TAXONOMY_LOSS_WEIGHT);
        assert_eq!(heads[1].target_index(&clip("h", "9", Some("fish"))), None);
        assert_eq!(heads[1].target_index(&clip("b", "9", Some("shrimp"))), Some(1));
    }
}
