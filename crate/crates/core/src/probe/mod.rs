//! Linear softmax probe trained on frozen embeddings.

pub mod metrics;

use std::collections::BTreeSet;
use std::path::Path;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub use metrics::{
    auc_rank, auc_roc_macro, auc_trapezoid, error_reduction, MacroAuc, MetricError, ScoredExample,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("probe needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("empty training set")]
    Empty,
    #[error("class {0:?} has no training examples")]
    EmptyClass(String),
    #[error("embedding has {got} values, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("invalid hyperparameters: {0}")]
    Hparams(String),
    #[error("probe file: {0}")]
    Io(#[from] std::io::Error),
    #[error("probe file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeHparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    /// L2 penalty `0.5 * l2 * |W|²` added to the loss.
    pub l2: f64,
    pub init_std: f64,
}

impl Default for ProbeHparams {
    fn default() -> Self {
        Self {
            epochs: 128,
            batch_size: 32,
            lr: 0.001,
            optimizer: Optimizer::Sgd,
            l2: 0.0,
            init_std: 0.01,
        }
    }
}

impl ProbeHparams {
    fn validate(&self) -> Result<(), ProbeError> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.l2 < 0.0 || self.init_std < 0.0 {
            return Err(ProbeError::Hparams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// A training or test example: clip id, embedding, class name.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub id: String,
    pub values: Vec<f32>,
    pub class: String,
}

/// Linear head: `logits = Wᵀ x + b` with `W` stored row-major as
/// `dim × classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel<T = f32> {
    pub classes: Vec<String>,
    pub dim: usize,
    #[serde(rename = "W")]
    pub weights: Vec<T>,
    #[serde(rename = "b")]
    pub bias: Vec<T>,
    pub hparams: ProbeHparams,
    pub seed: u64,
}

/// Loss value and gradients for one batch.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub loss: T,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("float conversion")
}

impl<T: Float> ProbeModel<T> {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    fn logits_into(&self, x: &[T], out: &mut [T]) {
        let c = self.classes.len();
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weights[i * c..(i + 1) * c];
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + w * xi;
            }
        }
    }

    /// Mean cross entropy over `(x, y)` pairs, plus the L2 penalty, and its
    /// gradient: `∂L/∂z = softmax(z) - onehot(y)` per example, averaged.
    pub fn loss_and_grad(&self, xs: &[&[T]], ys: &[usize], l2: f64) -> Gradients<T> {
        let c = self.classes.len();
        let mut g = Gradients {
            loss: T::zero(),
            weights: vec![T::zero(); self.weights.len()],
            bias: vec![T::zero(); c],
        };
        let n: T = cast(xs.len() as f64);
        let mut z = vec![T::zero(); c];
        for (x, &y) in xs.iter().zip(ys) {
            self.logits_into(x, &mut z);
            let lse = log_sum_exp(&z);
            g.loss = g.loss + (lse - z[y]) / n;
            for (k, zk) in z.iter_mut().enumerate() {
                let p = (*zk - lse).exp();
                *zk = (p - if k == y { T::one() } else { T::zero() }) / n;
            }
            for (gb, &d) in g.bias.iter_mut().zip(&z) {
                *gb = *gb + d;
            }
            for (i, &xi) in x.iter().enumerate() {
                let row = &mut g.weights[i * c..(i + 1) * c];
                for (gw, &d) in row.iter_mut().zip(&z) {
                    *gw = *gw + d * xi;
                }
            }
        }
        if l2 > 0.0 {
            let l2: T = cast(l2);
            let half: T = cast(0.5);
            for (gw, &w) in g.weights.iter_mut().zip(&self.weights) {
                g.loss = g.loss + half * l2 * w * w;
                *gw = *gw + l2 * w;
            }
        }
        g
    }

    /// Class probabilities, computed in `f64` with max-subtraction.
    pub fn predict_scores(&self, x: &[f32]) -> Result<Vec<f64>, ProbeError> {
        if x.len() != self.dim {
            return Err(ProbeError::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let c = self.classes.len();
        let mut z: Vec<f64> = self.bias.iter().map(|b| b.to_f64().unwrap()).collect();
        for (i, &xi) in x.iter().enumerate() {
            for (k, zk) in z.iter_mut().enumerate() {
                *zk += self.weights[i * c + k].to_f64().unwrap() * f64::from(xi);
            }
        }
        Ok(softmax(&z))
    }
}

impl ProbeModel<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProbeError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn log_sum_exp<T: Float>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    m + z.iter().map(|&v| (v - m).exp()).fold(T::zero(), |a, b| a + b).ln()
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Trained model and its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ProbeModel<T>,
    pub epoch_losses: Vec<f64>,
}

/// Trains a probe with mini-batch gradient descent on cross entropy.
///
/// Examples are sorted by `(id, class)` first, so the result depends on the
/// seed and the example set but not on input order. Weights start from
/// `N(0, init_std²)`, biases at zero; each epoch draws a fresh shuffle from
/// the same seeded generator.
pub fn train_probe<T: Float>(
    train: &[LabeledEmbedding],
    hparams: &ProbeHparams,
    seed: u64,
) -> Result<TrainOutcome<T>, ProbeError> {
    hparams.validate()?;
    if train.is_empty() {
        return Err(ProbeError::Empty);
    }
    let classes: Vec<String> = train
        .iter()
        .map(|e| e.class.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(ProbeError::TooFewClasses(classes.len()));
    }
    let dim = train[0].values.len();
    let mut sorted: Vec<&LabeledEmbedding> = train.iter().collect();
    sorted.sort_by(|a, b| (&a.id, &a.class).cmp(&(&b.id, &b.class)));
    let mut xs: Vec<Vec<T>> = Vec::with_capacity(sorted.len());
    let mut ys = Vec::with_capacity(sorted.len());
    for e in &sorted {
        if e.values.len() != dim {
            return Err(ProbeError::DimMismatch {
                expected: dim,
                got: e.values.len(),
            });
        }
        xs.push(e.values.iter().map(|&v| cast(f64::from(v))).collect());
        ys.push(classes.binary_search(&e.class).expect("class collected above"));
    }

    let c = classes.len();
    let mut r = rng::rng(seed);
    let normal = Normal::new(0.0, hparams.init_std).map_err(|e| ProbeError::Hparams(e.to_string()))?;
    let mut model = ProbeModel {
        weights: (0..dim * c).map(|_| cast(normal.sample(&mut r))).collect(),
        bias: vec![T::zero(); c],
        classes,
        dim,
        hparams: *hparams,
        seed,
    };
    let mut opt = OptState::new(hparams.optimizer, model.weights.len(), c);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hparams.epochs);
    for epoch in 0..hparams.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for batch in order.chunks(hparams.batch_size) {
            let bx: Vec<&[T]> = batch.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
            let g = model.loss_and_grad(&bx, &by, hparams.l2);
            let loss = g.loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(ProbeError::Diverged { epoch });
            }
            total += loss * batch.len() as f64;
            opt.step(hparams.lr, &mut model.weights, &mut model.bias, &g);
        }
        epoch_losses.push(total / xs.len() as f64);
    }
    if model.weights.iter().chain(&model.bias).any(|w| !w.is_finite()) {
        return Err(ProbeError::Diverged {
            epoch: hparams.epochs,
        });
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// Mean cross entropy of `model` on `data` (no penalty).
pub fn probe_loss<T: Float>(model: &ProbeModel<T>, data: &[LabeledEmbedding]) -> Result<f64, ProbeError> {
    let xs: Vec<Vec<T>> = data
        .iter()
        .map(|e| e.values.iter().map(|&v| cast(f64::from(v))).collect())
        .collect();
    let ys = data
        .iter()
        .map(|e| model.class_index(&e.class).ok_or_else(|| ProbeError::UnknownClass(e.class.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&[T]> = xs.iter().map(Vec::as_slice).collect();
    Ok(model.loss_and_grad(&refs, &ys, 0.0).loss.to_f64().unwrap())
}

/// Scores every example; the truth index follows `model.classes`.
pub fn score_examples<T: Float>(
    model: &ProbeModel<T>,
    data: &[LabeledEmbedding],
) -> Result<Vec<ScoredExample>, ProbeError> {
    data.iter()
        .map(|e| {
            Ok(ScoredExample {
                scores: model.predict_scores(&e.values)?,
                truth: model
                    .class_index(&e.class)
                    .ok_or_else(|| ProbeError::UnknownClass(e.class.clone()))?,
            })
        })
        .collect()
}

enum OptState<T> {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: i32,
        m: Vec<T>,
        v: Vec<T>,
    },
}

impl<T: Float> OptState<T> {
    fn new(opt: Optimizer, n_weights: usize, n_bias: usize) -> Self {
        match opt {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { beta1, beta2, eps } => OptState::Adam {
                beta1,
                beta2,
                eps,
                t: 0,
                m: vec![T::zero(); n_weights + n_bias],
                v: vec![T::zero(); n_weights + n_bias],
            },
        }
    }

    fn step(&mut self, lr: f64, weights: &mut [T], bias: &mut [T], g: &Gradients<T>) {
        let params = weights.iter_mut().chain(bias.iter_mut());
        let grads = g.weights.iter().chain(&g.bias);
        match self {
            OptState::Sgd => {
                let lr: T = cast(lr);
                for (p, &d) in params.zip(grads) {
                    *p = *p - lr * d;
                }
            }
            OptState::Adam {
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                *t += 1;
                let (b1, b2): (T, T) = (cast(*beta1), cast(*beta2));
                let c1: T = cast(1.0 - beta1.powi(*t));
                let c2: T = cast(1.0 - beta2.powi(*t));
                let (lr, eps): (T, T) = (cast(lr), cast(*eps));
                for (((p, &d), mi), vi) in params.zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = b1 * *mi + (T::one() - b1) * d;
                    *vi = b2 * *vi + (T::one() - b2) * d * d;
                    let mhat = *mi / c1;
                    let vhat = *vi / c2;
                    *p = *p - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, v: &[f32], class: &str) -> LabeledEmbedding {
        LabeledEmbedding {
            id: id.into(),
            values: v.to_vec(),
            class: class.into(),
        }
    }

    fn zero_model(c: usize) -> ProbeModel<f32> {
        ProbeModel {
            classes: (0..c).map(|i| i.to_string()).collect(),
            dim: 3,
            weights: vec![0.0; 3 * c],
            bias: vec![0.0; c],
            hparams: ProbeHparams::default(),
            seed: 0,
        }
    }

    #[test]
    fn zero_model_uniform() {
        let s = zero_model(4).predict_scores(&[1.0, 2.0, 3.0]).unwrap();
        assert!(s.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_shift_and_overflow() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        let s = softmax(&[1000.0, 0.0]);
        assert_eq!(s[0], 1.0);
        assert!(s[1] >= 0.0 && s[1] < 1e-300);
    }

    #[test]
    fn dim_mismatch() {
        assert!(matches!(
            zero_model(2).predict_scores(&[1.0]),
            Err(ProbeError::DimMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn one_example_per_class_fits() {
        let train = [ex("a", &[1.0, 0.5], "x"), ex("b", &[-1.0, -0.5], "y")];
        let m = train_probe::<f32>(&train, &ProbeHparams::default(), 3).unwrap().model;
        let s = score_examples(&m, &train).unwrap();
        assert!(s[0].scores[0] > 0.5 && s[1].scores[1] > 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let train = [ex("a", &[1.0], "x"), ex("b", &[2.0], "x")];
        assert!(matches!(
            train_probe::<f32>(&train, &ProbeHparams::default(), 0),
            Err(ProbeError::TooFewClasses(1))
        ));
    }

    #[test]
    fn divergence_reported() {
        let train = [ex("a", &[1e30, 1e30], "x"), ex("b", &[-1e30, 1e30], "y")];
        let h = ProbeHparams { lr: 1e30, ..ProbeHparams::default() };
        assert!(matches!(train_probe::<f32>(&train, &h, 0), Err(ProbeError::Diverged { .. })));
    }

    #[test]
    fn order_independent() {
        let mut train: Vec<LabeledEmbedding> = (0..20)
            .map(|i| ex(&format!("c{i:02}"), &[i as f32 / 10.0, 1.0 - i as f32 / 20.0], if i % 2 == 0 { "a" } else { "b" }))
            .collect();
        let a = train_probe::<f32>(&train, &ProbeHparams::default(), 9).unwrap().model;
        train.reverse();
        let b = train_probe::<f32>(&train, &ProbeHparams::default(), 9).unwrap().model;
        assert_eq!(a, b);
    }

    #[test]
    fn adam_runs_and_json_roundtrip() {
        let train = [ex("a", &[1.0, 0.5], "x"), ex("b", &[-1.0, -0.5], "y")];
        let h = ProbeHparams { optimizer: Optimizer::adam(), ..ProbeHparams::default() };
        let m = train_probe::<f32>(&train, &h, 1).unwrap().model;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("probe.json");
        m.save(&p).unwrap();
        assert_eq!(ProbeModel::load(&p).unwrap(), m);
        let text = std::fs::read_to_string(&p).unwrap();
        for key in ["\"classes\"", "\"dim\"", "\"W\"", "\"b\"", "\"hparams\"", "\"seed\""] {
            assert!(text.contains(key), "{key}");
        }
    }
}
