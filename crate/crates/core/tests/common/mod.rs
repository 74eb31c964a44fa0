//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use pamkit::pretrain::{HeadSpec, LabelKey, MixItem, ToyArch, ToyNet};
use pamkit::probe::{train_probe, LabeledEmbedding, ProbeHparams, ProbeModel};
use pamkit::rng::rng;
use rand::Rng;

/// Independent f64 evaluation of the toy network loss from its flat
/// parameter vector: hidden ReLU layers, linear embedding, linear heads,
/// masked soft-target cross entropy averaged over the full batch.
pub fn oracle_loss(params: &[f64], input: usize, arch: ToyArch, head_dims: &[usize], weights: &[f64], batch: &[MixItem]) -> f64 {
    oracle_forward(params, input, arch, head_dims, weights, batch).0
}

/// Loss and the smallest |pre-activation| of any hidden ReLU unit, i.e.
/// the distance of the evaluation point from a kink.
pub fn oracle_forward(
    params: &[f64],
    input: usize,
    arch: ToyArch,
    head_dims: &[usize],
    weights: &[f64],
    batch: &[MixItem],
) -> (f64, f64) {
    let mut total = 0.0;
    let mut margin = f64::INFINITY;
    for item in batch {
        let mut off = 0;
        let mut a: Vec<f64> = item.features.iter().map(|&v| f64::from(v)).collect();
        let dense = |a: &[f64], out: usize, off: &mut usize| -> Vec<f64> {
            let inp = a.len();
            let w = &params[*off..*off + inp * out];
            let b = &params[*off + inp * out..*off + inp * out + out];
            *off += inp * out + out;
            (0..out).map(|o| b[o] + (0..inp).map(|i| w[o * inp + i] * a[i]).sum::<f64>()).collect()
        };
        assert_eq!(a.len(), input);
        for _ in 0..arch.depth {
            let pre = dense(&a, arch.width, &mut off);
            margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
            a = pre.into_iter().map(|v| v.max(0.0)).collect();
        }
        let emb = dense(&a, arch.emb_dim, &mut off);
        for (h, &c) in head_dims.iter().enumerate() {
            let z = dense(&emb, c, &mut off);
            let Some(y) = &item.targets[h] else { continue };
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            let ce: f64 = y.iter().zip(&z).map(|(&yk, zk)| -f64::from(yk) * (zk - lse)).sum();
            total += weights[h] * ce / batch.len() as f64;
        }
    }
    (total, margin)
}


/// Max relative error of the toy network's analytic gradient against
/// central differences of [`oracle_loss`]. Two heads (the second with
/// weight 0.1 and a target on every other example) over random inputs.
///
/// Biases start at zero, so a layer whose units are all off feeds exact
/// zeros forward and sits on a ReLU kink where no derivative exists. The
/// parameters are jittered (seeded) until every hidden pre-activation is
/// at least `KINK_MARGIN` away from zero.
pub fn toy_gradient_error(seed: u64, input: usize, arch: ToyArch, head_dims: [usize; 2], batch_size: usize) -> f64 {
    const KINK_MARGIN: f64 = 1e-3;
    let names = |n: usize| (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>();
    let (a, b) = (names(head_dims[0]), names(head_dims[1]));
    let heads = [
        HeadSpec::new("p", LabelKey::Primary, &a.iter().map(String::as_str).collect::<Vec<_>>()),
        HeadSpec::new("g", LabelKey::Extra("genus".into()), &b.iter().map(String::as_str).collect::<Vec<_>>())
            .with_weight(0.1),
    ];
    let mut net = ToyNet::init(input, arch, &head_dims, seed);
    let mut r = rng(seed ^ 0x5eed);
    let batch: Vec<MixItem> = (0..batch_size)
        .map(|i| MixItem {
            features: (0..input).map(|_| r.random::<f32>() * 2.0 - 1.0).collect(),
            targets: vec![Some(soft(head_dims[0], &mut r)), (i % 2 == 0).then(|| soft(head_dims[1], &mut r))],
        })
        .collect();
    let weights = [1.0, 0.1];
    let init = net.params.clone();
    let mut jitter = rng(seed ^ 0x7177e5);
    for attempt in 0.. {
        assert!(attempt < 1000, "no differentiable point found");
        let theta: Vec<f64> = net.params.iter().map(|&v| f64::from(v)).collect();
        if oracle_forward(&theta, input, arch, &head_dims, &weights, &batch).1 >= KINK_MARGIN {
            break;
        }
        net.params = init.iter().map(|&v| v + (jitter.random::<f32>() - 0.5) * 0.1).collect();
    }
    let (loss, grad) = net.loss_and_grad(&batch, &heads).unwrap();
    let theta: Vec<f64> = net.params.iter().map(|&v| f64::from(v)).collect();
    let l0 = oracle_loss(&theta, input, arch, &head_dims, &weights, &batch);
    assert!((l0 - loss.total).abs() < 1e-5, "{l0} vs {}", loss.total);

    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = oracle_loss(&probe, input, arch, &head_dims, &weights, &batch);
        probe[i] = theta[i] - h;
        let down = oracle_loss(&probe, input, arch, &head_dims, &weights, &batch);
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        let analytic = f64::from(grad[i]);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    worst
}

pub fn soft(c: usize, r: &mut impl Rng) -> Vec<f32> {
    let raw: Vec<f32> = (0..c).map(|_| r.random::<f32>()).collect();
    let s: f32 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// All-pairs count of correctly ordered (positive, negative) pairs.
pub fn auc_brute(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

pub fn probe_data(seed: u64, n: usize, dim: usize, classes: usize) -> Vec<LabeledEmbedding> {
    let mut s = seed | 1;
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    (0..n)
        .map(|i| {
            let c = i % classes;
            LabeledEmbedding {
                id: format!("x{i:03}"),
                values: (0..dim).map(|d| (next() + if d == c { 1.5 } else { 0.0 }) as f32).collect(),
                class: format!("c{c}"),
            }
        })
        .collect()
}

/// Max relative error of the analytic probe gradient against central
/// differences of the loss in f64.
pub fn probe_gradient_error(seed: u64, dim: usize, classes: usize, l2: f64) -> f64 {
    let data = probe_data(seed, 12, dim, classes);
    let hp = ProbeHparams { epochs: 2, ..ProbeHparams::default() };
    let trained: ProbeModel<f32> = train_probe(&data, &hp, seed).unwrap().model;
    // Perturb in f64 for the oracle, evaluate the f32 gradient analytically.
    let xs: Vec<Vec<f32>> = data.iter().map(|e| e.values.clone()).collect();
    let ys: Vec<usize> = data.iter().map(|e| trained.class_index(&e.class).unwrap()).collect();
    let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
    let g = trained.loss_and_grad(&refs, &ys, l2);

    let to64 = |m: &ProbeModel<f32>| ProbeModel::<f64> {
        classes: m.classes.clone(),
        dim: m.dim,
        weights: m.weights.iter().map(|&w| f64::from(w)).collect(),
        bias: m.bias.iter().map(|&b| f64::from(b)).collect(),
        hparams: m.hparams,
        seed: m.seed,
    };
    let xs64: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|&v| f64::from(v)).collect()).collect();
    let refs64: Vec<&[f64]> = xs64.iter().map(Vec::as_slice).collect();
    let loss = |m: &ProbeModel<f64>| -> f64 {
        // Independent cross entropy, not the library's.
        let c = m.classes.len();
        let mut total = 0.0;
        for (x, &y) in refs64.iter().zip(&ys) {
            let z: Vec<f64> = (0..c).map(|k| m.bias[k] + (0..m.dim).map(|i| m.weights[i * c + k] * x[i]).sum::<f64>()).collect();
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            total += lse - z[y];
        }
        total / refs64.len() as f64 + 0.5 * l2 * m.weights.iter().map(|w| w * w).sum::<f64>()
    };
    let base = to64(&trained);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let analytic: Vec<f64> = g.weights.iter().chain(&g.bias).map(|&v| f64::from(v)).collect();
    let nw = base.weights.len();
    for (idx, &a) in analytic.iter().enumerate() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        if idx < nw {
            plus.weights[idx] += h;
            minus.weights[idx] -= h;
        } else {
            plus.bias[idx - nw] += h;
            minus.bias[idx - nw] -= h;
        }
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        worst = worst.max((a - fd).abs() / fd.abs().max(a.abs()).max(1e-2));
    }
    worst
}

