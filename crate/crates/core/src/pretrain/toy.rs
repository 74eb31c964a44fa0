use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{multi_head_loss, HeadLogits, HeadLoss, HeadSpec, MixItem, PretrainError};
use crate::dsp::{pcen_in_place, Frontend, MelConfig, MelSpectrogram, PadPolicy, PcenConfig};
use crate::embedder::{EmbedError, Embedder, EmbedderSpec};
use crate::rng;

/// Width, hidden depth and embedding size of the toy network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyArch {
    pub width: usize,
    pub depth: usize,
    pub emb_dim: usize,
}

impl Default for ToyArch {
    fn default() -> Self {
        Self::t1()
    }
}

impl ToyArch {
    pub fn t0() -> Self {
        Self { width: 128, depth: 1, emb_dim: 64 }
    }

    pub fn t1() -> Self {
        Self { width: 256, depth: 2, emb_dim: 128 }
    }

    pub fn t2() -> Self {
        Self { width: 384, depth: 3, emb_dim: 128 }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "t0" => Some(Self::t0()),
            "t1" => Some(Self::t1()),
            "t2" => Some(Self::t2()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    offset: usize,
    inp: usize,
    out: usize,
}

impl Layer {
    fn bias(&self) -> usize {
        self.offset + self.inp * self.out
    }

    fn end(&self) -> usize {
        self.bias() + self.out
    }

    fn apply(&self, params: &[f32], x: &[f32], out: &mut Vec<f32>) {
        let w = &params[self.offset..self.bias()];
        let b = &params[self.bias()..self.end()];
        out.clear();
        out.extend(w.chunks_exact(self.inp).zip(b).map(|(row, &bi)| {
            bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f32>()
        }));
    }

    /// Accumulates `∂W += d xᵀ`, `∂b += d`; writes `Wᵀ d` into `dx` when given.
    fn backward(&self, params: &[f32], grad: &mut [f32], x: &[f32], d: &[f32], dx: Option<&mut Vec<f32>>) {
        let bias = self.bias();
        for (o, &dv) in d.iter().enumerate() {
            if dv == 0.0 {
                continue;
            }
            let row = &mut grad[self.offset + o * self.inp..self.offset + (o + 1) * self.inp];
            row.iter_mut().zip(x).for_each(|(g, &xi)| *g += dv * xi);
            grad[bias + o] += dv;
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(self.inp, 0.0);
            let w = &params[self.offset..bias];
            for (row, &dv) in w.chunks_exact(self.inp).zip(d) {
                if dv != 0.0 {
                    dx.iter_mut().zip(row).for_each(|(a, &wv)| *a += dv * wv);
                }
            }
        }
    }
}

/// ReLU MLP → linear embedding → one linear classifier per head, with all
/// parameters in one flat vector: for each layer in that order, the
/// row-major `out × in` weight matrix then the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    pub input_dim: usize,
    pub arch: ToyArch,
    pub head_dims: Vec<usize>,
    pub params: Vec<f32>,
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Input followed by each hidden layer's post-ReLU output.
    pub hidden: Vec<Vec<f32>>,
    pub embedding: Vec<f32>,
    pub logits: Vec<Vec<f32>>,
}

impl ToyNet {
    fn layout(input_dim: usize, arch: ToyArch, head_dims: &[usize]) -> Vec<Layer> {
        let mut layers = Vec::with_capacity(arch.depth + 1 + head_dims.len());
        let mut offset = 0;
        let mut push = |inp: usize, out: usize| {
            let l = Layer { offset, inp, out };
            offset = l.end();
            layers.push(l);
        };
        let mut inp = input_dim;
        for _ in 0..arch.depth {
            push(inp, arch.width);
            inp = arch.width;
        }
        push(inp, arch.emb_dim);
        for &c in head_dims {
            push(arch.emb_dim, c);
        }
        layers
    }

    fn layers(&self) -> Vec<Layer> {
        Self::layout(self.input_dim, self.arch, &self.head_dims)
    }

    pub fn param_count(input_dim: usize, arch: ToyArch, head_dims: &[usize]) -> usize {
        Self::layout(input_dim, arch, head_dims).last().map_or(0, Layer::end)
    }

    /// He-normal weights before ReLU layers, `N(0, 1/in)` for the linear
    /// ones, zero biases.
    pub fn init(input_dim: usize, arch: ToyArch, head_dims: &[usize], seed: u64) -> Self {
        let layers = Self::layout(input_dim, arch, head_dims);
        let mut params = vec![0.0f32; layers.last().map_or(0, Layer::end)];
        let mut r = rng::rng(seed);
        for (i, l) in layers.iter().enumerate() {
            let gain = if i < arch.depth { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / l.inp as f64).sqrt()).expect("positive std");
            for w in &mut params[l.offset..l.bias()] {
                *w = normal.sample(&mut r) as f32;
            }
        }
        Self {
            input_dim,
            arch,
            head_dims: head_dims.to_vec(),
            params,
        }
    }

    pub fn forward(&self, x: &[f32]) -> Forward {
        let layers = self.layers();
        let depth = self.arch.depth;
        let mut hidden = Vec::with_capacity(depth + 1);
        hidden.push(x.to_vec());
        for l in &layers[..depth] {
            let mut out = Vec::new();
            l.apply(&self.params, hidden.last().expect("input pushed"), &mut out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            hidden.push(out);
        }
        let mut embedding = Vec::new();
        layers[depth].apply(&self.params, hidden.last().expect("input pushed"), &mut embedding);
        let logits = layers[depth + 1..]
            .iter()
            .map(|l| {
                let mut z = Vec::new();
                l.apply(&self.params, &embedding, &mut z);
                z
            })
            .collect();
        Forward {
            hidden,
            embedding,
            logits,
        }
    }

    pub fn embed(&self, x: &[f32]) -> Vec<f32> {
        let layers = self.layers();
        let mut a = x.to_vec();
        let mut out = Vec::new();
        for l in &layers[..self.arch.depth] {
            l.apply(&self.params, &a, &mut out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            std::mem::swap(&mut a, &mut out);
        }
        layers[self.arch.depth].apply(&self.params, &a, &mut out);
        out
    }

    /// Multi-head loss of a batch and its gradient with respect to `params`.
    pub fn loss_and_grad(&self, batch: &[MixItem], heads: &[HeadSpec]) -> Result<(HeadLoss, Vec<f32>), PretrainError> {
        if heads.len() != self.head_dims.len() {
            return Err(PretrainError::Config(format!(
                "network has {} heads, {} specs given",
                self.head_dims.len(),
                heads.len()
            )));
        }
        let passes: Vec<Forward> = batch.iter().map(|item| self.forward(&item.features)).collect();
        let logits: Vec<Vec<f32>> = (0..heads.len())
            .map(|h| passes.iter().flat_map(|p| p.logits[h].iter().copied()).collect())
            .collect();
        let outputs: Vec<HeadLogits<'_>> = logits
            .iter()
            .enumerate()
            .map(|(h, z)| HeadLogits {
                logits: z,
                targets: batch.iter().map(|it| it.targets.get(h).and_then(|t| t.as_deref())).collect(),
            })
            .collect();
        let loss = multi_head_loss(&outputs, heads)?;

        let layers = self.layers();
        let depth = self.arch.depth;
        let mut grad = vec![0.0f32; self.params.len()];
        let mut d_emb = vec![0.0f32; self.arch.emb_dim];
        let mut tmp = Vec::new();
        let mut da = Vec::new();
        for (i, pass) in passes.iter().enumerate() {
            d_emb.iter_mut().for_each(|v| *v = 0.0);
            for (h, l) in layers[depth + 1..].iter().enumerate() {
                let c = self.head_dims[h];
                let dz: Vec<f32> = loss.grads[h][i * c..(i + 1) * c].iter().map(|&g| g as f32).collect();
                if dz.iter().all(|&g| g == 0.0) {
                    continue;
                }
                l.backward(&self.params, &mut grad, &pass.embedding, &dz, Some(&mut tmp));
                d_emb.iter_mut().zip(&tmp).for_each(|(a, &b)| *a += b);
            }
            let last = pass.hidden.last().expect("input present");
            layers[depth].backward(&self.params, &mut grad, last, &d_emb, Some(&mut da));
            for l in (0..depth).rev() {
                let post = &pass.hidden[l + 1];
                da.iter_mut().zip(post).for_each(|(d, &a)| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                let need_dx = l > 0;
                let d = std::mem::take(&mut da);
                layers[l].backward(&self.params, &mut grad, &pass.hidden[l], &d, need_dx.then_some(&mut da));
            }
        }
        Ok((loss, grad))
    }
}

/// Fixed (untrained) part of the toy embedder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyFrontend {
    pub input_rate: u32,
    pub window_len_s: f64,
    pub mel: MelConfig,
    pub pcen: PcenConfig,
}

impl Default for ToyFrontend {
    fn default() -> Self {
        Self {
            input_rate: 16_000,
            window_len_s: 2.0,
            mel: MelConfig {
                n_mels: 64,
                fmax: 7_800.0,
                ..MelConfig::default()
            },
            pcen: PcenConfig::default(),
        }
    }
}

impl ToyFrontend {
    pub fn window_samples(&self) -> usize {
        (self.window_len_s * f64::from(self.input_rate)).round() as usize
    }

    /// Mel energies without the optional log pre-stage, which is applied
    /// after gain scaling in [`ToyEmbedderModel::features`].
    pub(crate) fn build(&self) -> Result<Frontend, PretrainError> {
        self.pcen.validate()?;
        Ok(Frontend::new(
            MelConfig {
                log_pre: false,
                ..self.mel
            },
            self.input_rate,
        )?)
    }
}

/// Trained toy network used as an embedding backend.
///
/// Input windows are peak-normalized to `inference_gain` (the centre of the
/// training gain range), then PCEN, time-mean pooling, standardization and
/// the MLP produce the embedding.
#[derive(Debug, Clone)]
pub struct ToyEmbedderModel {
    pub spec: EmbedderSpec,
    pub frontend: ToyFrontend,
    pub heads: Vec<HeadSpec>,
    pub feature_mean: Vec<f32>,
    pub feature_std: Vec<f32>,
    pub inference_gain: f64,
    pub net: ToyNet,
    pub seed: u64,
    pub steps_trained: usize,
    mel: Frontend,
}

impl PartialEq for ToyEmbedderModel {
    fn eq(&self, other: &Self) -> bool {
        self.record() == other.record() && self.net.params == other.net.params
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ToyRecord {
    spec: EmbedderSpec,
    frontend: ToyFrontend,
    arch: ToyArch,
    input_dim: usize,
    heads: Vec<HeadSpec>,
    feature_mean: Vec<f32>,
    feature_std: Vec<f32>,
    inference_gain: f64,
    seed: u64,
    steps_trained: usize,
    param_count: usize,
    weights_file: String,
}

impl ToyEmbedderModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        name: &str,
        frontend: ToyFrontend,
        heads: Vec<HeadSpec>,
        feature_mean: Vec<f32>,
        feature_std: Vec<f32>,
        inference_gain: f64,
        net: ToyNet,
        seed: u64,
    ) -> Result<Self, PretrainError> {
        let spec = EmbedderSpec::new(
            name,
            frontend.input_rate,
            frontend.window_len_s,
            net.arch.emb_dim,
            PadPolicy::RepeatPad,
        );
        Ok(Self {
            mel: frontend.build()?,
            spec,
            frontend,
            heads,
            feature_mean,
            feature_std,
            inference_gain,
            net,
            seed,
            steps_trained: 0,
        })
    }

    pub(crate) fn mel(&self) -> &Frontend {
        &self.mel
    }

    /// Network input for a window whose raw mel energies are `energies` and
    /// whose amplitude is multiplied by `amp_scale`.
    pub fn features(&self, energies: &MelSpectrogram, amp_scale: f64) -> Result<Vec<f32>, PretrainError> {
        let pooled = pooled_pcen(energies, amp_scale, &self.frontend)?;
        Ok(pooled
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&v, (&m, &s))| ((v - f64::from(m)) / f64::from(s)) as f32)
            .collect())
    }

    fn record(&self) -> ToyRecord {
        ToyRecord {
            spec: self.spec.clone(),
            frontend: self.frontend,
            arch: self.net.arch,
            input_dim: self.net.input_dim,
            heads: self.heads.clone(),
            feature_mean: self.feature_mean.clone(),
            feature_std: self.feature_std.clone(),
            inference_gain: self.inference_gain,
            seed: self.seed,
            steps_trained: self.steps_trained,
            param_count: self.net.params.len(),
            weights_file: String::new(),
        }
    }

    /// Writes the architecture record to `path` (JSON) and the weights as
    /// little-endian f32 to the same path with extension `bin`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PretrainError> {
        let path = path.as_ref();
        let weights = path.with_extension("bin");
        let mut rec = self.record();
        rec.weights_file = weights
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        fs::write(path, serde_json::to_string_pretty(&rec)?)?;
        let bytes: Vec<u8> = self.net.params.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(weights, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PretrainError> {
        let path = path.as_ref();
        let rec: ToyRecord = serde_json::from_str(&fs::read_to_string(path)?)?;
        let weights: PathBuf = path.with_file_name(&rec.weights_file);
        let bytes = fs::read(weights)?;
        let head_dims: Vec<usize> = rec.heads.iter().map(|h| h.classes.len()).collect();
        let expected = ToyNet::param_count(rec.input_dim, rec.arch, &head_dims);
        if rec.param_count != expected || bytes.len() != expected * 4 {
            return Err(PretrainError::Config(format!(
                "weights file holds {} bytes, architecture needs {expected} parameters",
                bytes.len()
            )));
        }
        let params: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if params.iter().any(|v| !v.is_finite()) {
            return Err(PretrainError::Config("non-finite weight".into()));
        }
        let net = ToyNet {
            input_dim: rec.input_dim,
            arch: rec.arch,
            head_dims,
            params,
        };
        let mut model = Self::assemble(
            &rec.spec.name,
            rec.frontend,
            rec.heads,
            rec.feature_mean,
            rec.feature_std,
            rec.inference_gain,
            net,
            rec.seed,
        )?;
        model.steps_trained = rec.steps_trained;
        Ok(model)
    }
}

/// Time-mean of the PCEN grid of `energies · amp_scale²`.
pub(crate) fn pooled_pcen(energies: &MelSpectrogram, amp_scale: f64, fe: &ToyFrontend) -> Result<Vec<f64>, PretrainError> {
    let power = amp_scale * amp_scale;
    let mut grid = energies.clone();
    if fe.mel.log_pre {
        grid.values.iter_mut().for_each(|v| *v = (*v * power).ln_1p());
    } else if power != 1.0 {
        grid.values.iter_mut().for_each(|v| *v *= power);
    }
    pcen_in_place(&mut grid, &fe.pcen)?;
    Ok(grid.band_means())
}

impl Embedder for ToyEmbedderModel {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_window(&self, window: &[f32]) -> Result<Vec<f32>, EmbedError> {
        let expected = self.spec.window_samples();
        if window.len() != expected {
            return Err(EmbedError::WindowLength {
                expected,
                got: window.len(),
            });
        }
        let energies = self.mel.mel_energies(window)?;
        let peak = window.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let scale = super::gain_factor(f64::from(peak), self.inference_gain);
        let x = self
            .features(&energies, scale)
            .map_err(|e| EmbedError::Backend(e.to_string()))?;
        let out = self.net.embed(&x);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(out)
    }
}
