//! Acceptance criteria. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use pamkit::corpus::{
    amalgamate_labels, class_counts, filter_ambient, split_train_test, LabeledClip, PrimaryLabel, SplitSpec,
};
use pamkit::dsp::{pcen, MelSpectrogram, PcenConfig, SmootherInit};
use pamkit::embedder::{AudioBackend, AudioSource, MockEmbedder};
use pamkit::eval::{dreg, fewshot_eval, sweep, DregConfig, FewshotConfig, SweepSpec};
use pamkit::pretrain::{mixup, LambdaDist, MixItem, SampleStream, ToyArch};
use pamkit::probe::{auc_rank, error_reduction};
use pamkit::rng::rng;
use pamkit::synthetic::{SyntheticSpec, SHARED_CLASS};

mod common;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Runner {
    failed: Vec<&'static str>,
}

impl Runner {
    fn run(&mut self, name: &'static str, budget: Duration, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.1?}, budget {budget:?}"))
            }
        });
        let line = match &result {
            Ok(detail) => format!("PASS  {name}: {detail} [{:.2} s]", elapsed.as_secs_f64()),
            Err(why) => {
                self.failed.push(name);
                format!("FAIL  {name}: {why} [{:.2} s]", elapsed.as_secs_f64())
            }
        };
        // Written directly so the line shows without --nocapture.
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
}

fn auc_oracle() -> Check {
    let four = auc_rank(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).map_err(|e| e.to_string())?;
    ensure(four == 0.75, || format!("4-point example gave {four}"))?;
    let mut r = rng(20_240_101);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 1000 {
        let n = r.random_range(2..=200);
        let levels = r.random_range(1..=n.max(2) / 2 + 1);
        // Scores on a coarse grid so ties are frequent.
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..levels as u32)) * 0.37).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
            continue;
        }
        let fast = auc_rank(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((fast - common::auc_brute(&scores, &labels)).abs());
        instances += 1;
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("{instances} instances, max |rank - brute| = {worst:e}; 4-point = 0.75"))
}

/// Rounded mean AUCs of the strongest transfer model, a general audio
/// model and the in-domain model, and the reference reductions computed from the
/// unrounded means.
const BEST_TRANSFER: f64 = 0.908;
const GENERAL_AUDIO: f64 = 0.813;
const IN_DOMAIN: f64 = 0.724;
const REFERENCE: [f64; 2] = [200.72, 47.80];

fn error_reduction_reproduction() -> Check {
    let best = error_reduction(BEST_TRANSFER, IN_DOMAIN).map_err(|e| e.to_string())?;
    let general = error_reduction(GENERAL_AUDIO, IN_DOMAIN).map_err(|e| e.to_string())?;
    let rounded = |x: f64| (x * 10.0).round() / 10.0;
    ensure(rounded(best) == 200.0, || format!("best transfer vs in-domain: {best}"))?;
    ensure(rounded(general) == 47.6, || format!("general audio vs in-domain: {general}"))?;
    ensure((best - REFERENCE[0]).abs() <= 1.5 && (general - REFERENCE[1]).abs() <= 1.5, || {
        format!("{best:.2} / {general:.2} vs reference {REFERENCE:?}")
    })?;
    Ok(format!(
        "{best:.1}% and {general:.1}% from rounded AUCs (reference {:.2}% / {:.2}%)",
        REFERENCE[0], REFERENCE[1]
    ))
}

fn pcen_oracle() -> Check {
    let mut r = rng(77);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let (frames, bands) = (r.random_range(1..60), r.random_range(1..12));
        let values: Vec<f64> = (0..frames * bands).map(|_| r.random::<f64>() * 100.0).collect();
        let mut cfg = if trial % 2 == 0 { PcenConfig::default() } else { PcenConfig::surfperch() };
        if trial % 3 == 0 {
            cfg.init = SmootherInit::Zero;
        }
        let out = pcen(&MelSpectrogram::from_values(frames, bands, values.clone()), &cfg).map_err(|e| e.to_string())?;
        for f in 0..bands {
            let mut m = if cfg.init == SmootherInit::Zero { 0.0 } else { values[f] };
            for t in 0..frames {
                let e = values[t * bands + f];
                if t > 0 {
                    m = (1.0 - cfg.smoothing) * m + cfg.smoothing * e;
                }
                let want = (e / (cfg.eps + m).powf(cfg.gain) + cfg.bias).powf(cfg.root) - cfg.bias.powf(cfg.root);
                worst = worst.max((out.get(t, f) - want).abs() / want.abs().max(1.0));
            }
        }
    }
    ensure(worst <= 1e-9, || format!("grid vs scalar oracle deviates by {worst:e}"))?;

    let constant = pcen(&MelSpectrogram::from_values(500, 1, vec![1.0; 500]), &PcenConfig::default())
        .map_err(|e| e.to_string())?;
    let converged = constant.get(499, 0);
    ensure((converged - 4.999997).abs() <= 1e-5, || format!("constant input converges to {converged}"))?;

    let cfg = PcenConfig {
        init: SmootherInit::Zero,
        gain: 1.0,
        bias: 0.0,
        root: 1.0,
        eps: 1e-300,
        ..PcenConfig::default()
    };
    let ramp = pcen(&MelSpectrogram::from_values(80, 1, vec![1.0; 80]), &cfg).map_err(|e| e.to_string())?;
    let mut closed = 0.0f64;
    for t in 1..80 {
        let m = 1.0 / ramp.get(t, 0);
        closed = closed.max((m - (1.0 - (1.0 - cfg.smoothing).powi(t as i32))).abs());
    }
    ensure(closed <= 1e-12, || format!("closed form deviates by {closed:e}"))?;
    Ok(format!("oracle max rel err {worst:e}; constant -> {converged:.6}; closed form err {closed:e}"))
}

fn gradient_checks() -> Check {
    let mut r = rng(4242);
    let mut probe_worst = 0.0f64;
    for _ in 0..20 {
        let (dim, classes) = (r.random_range(1..10), r.random_range(2..6));
        let l2 = if r.random_bool(0.5) { 0.0 } else { r.random::<f64>() * 0.1 };
        probe_worst = probe_worst.max(common::probe_gradient_error(r.random(), dim, classes, l2));
    }
    ensure(probe_worst < 1e-4, || format!("probe max rel err {probe_worst:e}"))?;
    let mut toy_worst = 0.0f64;
    for _ in 0..20 {
        let arch = ToyArch {
            width: r.random_range(4..20),
            depth: r.random_range(1..4),
            emb_dim: r.random_range(2..10),
        };
        let heads = [r.random_range(2..6), r.random_range(2..6)];
        let input = r.random_range(2..16);
        toy_worst = toy_worst.max(common::toy_gradient_error(r.random(), input, arch, heads, r.random_range(1..6)));
    }
    ensure(toy_worst < 1e-3, || format!("toy max rel err {toy_worst:e}"))?;
    Ok(format!("20 probe configs max rel err {probe_worst:.2e}; 20 toy configs max rel err {toy_worst:.2e}"))
}

fn clip(i: usize, tag: &str, primary: PrimaryLabel, secondary: Option<&str>) -> LabeledClip {
    LabeledClip::new("d", format!("{tag}_{i:03}"), primary, secondary)
}

fn corpus_rules() -> Check {
    let mut clips = Vec::new();
    clips.extend((0..42).map(|i| clip(i, "keep", PrimaryLabel::Biophony, Some("kept_species"))));
    clips.extend((0..41).map(|i| clip(i, "merge", PrimaryLabel::Biophony, Some("rare_species"))));
    clips.extend((0..41).map(|i| clip(i, "geo", PrimaryLabel::Geophony, None)));
    clips.extend((0..1).map(|i| clip(i, "anthro_sec", PrimaryLabel::Anthrophony, Some("boat"))));
    clips.extend((0..41).map(|i| clip(i, "anthro", PrimaryLabel::Anthrophony, None)));
    clips.extend((0..5).map(|i| clip(i, "amb", PrimaryLabel::Ambient, None)));
    let out = amalgamate_labels(&clips, 42);
    let counts = class_counts(&out);
    let expect: BTreeMap<String, usize> = [
        ("kept_species", 42),
        ("anthrophony", 42),
        ("ambient", 5),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect();
    ensure(counts == expect, || format!("amalgamation gave {counts:?}"))?;
    ensure(amalgamate_labels(&out, 42) == out, || "amalgamation is not idempotent".into())?;
    let split = split_train_test(
        &(0..42).map(|i| clip(i, "s", PrimaryLabel::Biophony, Some("sp"))).collect::<Vec<_>>(),
        &SplitSpec::new(32, 5),
    )
    .map_err(|e| e.to_string())?;
    ensure(split.train.len() == 32 && split.test.len() == 10, || {
        format!("split {} / {}", split.train.len(), split.test.len())
    })?;
    let short = split_train_test(
        &(0..41).map(|i| clip(i, "s", PrimaryLabel::Biophony, Some("sp"))).collect::<Vec<_>>(),
        &SplitSpec::new(32, 5),
    );
    ensure(short.is_err(), || "41 clips accepted for k=32".into())?;
    let mixed: Vec<LabeledClip> = (0..100)
        .map(|i| clip(i, "m", if i % 10 == 0 { PrimaryLabel::Ambient } else { PrimaryLabel::Geophony }, None))
        .collect();
    let filtered = filter_ambient(&mixed);
    ensure(filtered.len() == 90, || format!("ambient filter kept {}", filtered.len()))?;
    Ok("41-clip species merged, 42 kept; 41-clip primary groups discarded, 42 kept; 32+10 split, 100 -> 90 ambient filter, idempotent".into())
}

fn sampler_statistics() -> Check {
    let n = 100_000usize;
    let mut detail = Vec::new();
    for weights in [vec![0.9, 0.1], vec![0.5, 0.4, 0.1]] {
        let sizes = [37usize, 11, 5];
        let pools: Vec<(String, Vec<usize>, f64)> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| (format!("s{i}"), (0..sizes[i]).collect(), w))
            .collect();
        let mut counts = vec![0usize; weights.len()];
        let mut passes: Vec<Vec<usize>> = vec![Vec::new(); weights.len()];
        for (src, item) in SampleStream::new(pools, 31).map_err(|e| e.to_string())?.take(n) {
            counts[src] += 1;
            passes[src].push(item);
        }
        for (i, &w) in weights.iter().enumerate() {
            let sigma = (n as f64 * w * (1.0 - w)).sqrt();
            let dev = (counts[i] as f64 - n as f64 * w).abs();
            ensure(dev < 4.0 * sigma, || format!("source {i} of {weights:?}: {} draws, {:.1} sigma", counts[i], dev / sigma))?;
            for pass in passes[i].chunks_exact(sizes[i]) {
                let mut seen = pass.to_vec();
                seen.sort_unstable();
                ensure(seen == (0..sizes[i]).collect::<Vec<_>>(), || format!("source {i} repeated within a pass"))?;
            }
        }
        detail.push(format!("{weights:?} -> {counts:?}"));
    }
    let mut r = rng(99);
    let (mut mixed, mut total) = (0usize, 0usize);
    while total < n {
        let mut batch: Vec<MixItem> = (0..100).map(|i| MixItem { features: vec![i as f32], targets: vec![] }).collect();
        mixed += mixup(&mut batch, 0.75, LambdaDist::Uniform, &mut r).mixed;
        total += batch.len();
    }
    let sigma = (total as f64 * 0.75 * 0.25).sqrt();
    let dev = (mixed as f64 - 0.75 * total as f64).abs();
    ensure(dev < 4.0 * sigma, || format!("MixUp mixed {mixed}/{total}"))?;
    detail.push(format!("MixUp {:.4}", mixed as f64 / total as f64));
    Ok(detail.join("; "))
}

fn protocol_shape() -> Check {
    let (reg, audio) = SyntheticSpec::default().generate().map_err(|e| e.to_string())?;
    let audio: Arc<dyn AudioSource> = Arc::new(audio);
    let backend = AudioBackend::new(Arc::new(MockEmbedder::named("mock").map_err(|e| e.to_string())?), audio.clone());
    let cfg = FewshotConfig::default();
    let ds = reg.get("reef_a").map_err(|e| e.to_string())?;
    let report = fewshot_eval(ds, &backend, &cfg).map_err(|e| e.to_string())?;
    ensure(report.records.len() == cfg.ks.len() * cfg.repeats, || format!("{} records", report.records.len()))?;

    let mut dcfg = DregConfig::new(FewshotConfig { ks: vec![4], repeats: 2, ..FewshotConfig::default() }, 3);
    let mut mix = dcfg.full_mixture(&reg);
    mix.steps = 40;
    dcfg.mixture = Some(mix);
    let rotations = dreg(&reg, audio, &dcfg).map_err(|e| e.to_string())?;
    ensure(rotations.len() == reg.datasets().len(), || format!("{} rotations", rotations.len()))?;
    for rot in &rotations {
        ensure(rot.error.is_none(), || format!("rotation {} failed: {:?}", rot.holdout, rot.error))?;
        ensure(!rot.training.contains(&rot.holdout), || format!("{} trained on its holdout", rot.holdout))?;
        let classes: Vec<&String> = rot.heads.iter().flat_map(|h| &h.classes).collect();
        let exclusive = format!("{}_", rot.holdout);
        ensure(!classes.iter().any(|c| c.starts_with(&exclusive)), || {
            format!("{} heads keep holdout-only classes", rot.holdout)
        })?;
        ensure(classes.iter().any(|c| *c == SHARED_CLASS), || "shared class dropped".into())?;
    }

    let names = ["t1", "t2", "t3"];
    let val = ["v1", "v2"];
    let mut counts = Vec::new();
    for preset in ["reefset", "reef_bird", "reef_bird_freesound"] {
        let stages = SweepSpec::preset(preset, &names, &val).expect("known preset");
        let table = sweep(&stages, &mut |_, point| Ok(point.len() as f64)).map_err(|e| e.to_string())?;
        let mut per_stage: BTreeMap<Option<u32>, usize> = BTreeMap::new();
        for row in &table.rows {
            *per_stage.entry(row.stage).or_default() += 1;
        }
        counts.push(per_stage.values().copied().collect::<Vec<_>>());
    }
    ensure(counts == vec![vec![18], vec![15, 6], vec![12, 6]], || format!("sweep rows {counts:?}"))?;
    Ok(format!(
        "fewshot {} records; dreg {} rotations with exclusion verified; sweep rows {counts:?}",
        report.records.len(),
        rotations.len()
    ))
}

/// Mean holdout AUC at k=32 recorded at the first verified run.
const E2E_GOLDEN_K32: f64 = 0.999962797619;

fn end_to_end_dreg() -> Check {
    let (reg, audio) = SyntheticSpec::default().generate().map_err(|e| e.to_string())?;
    let audio: Arc<dyn AudioSource> = Arc::new(audio);
    let fewshot = FewshotConfig { ks: vec![4, 32], repeats: 10, base_seed: 0, ..FewshotConfig::default() };
    let mut cfg = DregConfig::new(fewshot, 0);
    cfg.min_class_size = Some(42);
    let rotations = dreg(&reg, audio, &cfg).map_err(|e| e.to_string())?;
    let mut by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for rot in &rotations {
        ensure(rot.error.is_none(), || format!("rotation {} failed: {:?}", rot.holdout, rot.error))?;
        for rec in &rot.report.as_ref().expect("report present").records {
            let auc = rec.macro_auc.ok_or_else(|| format!("cell failed: {:?}", rec.note))?;
            by_k.entry(rec.k).or_default().push(auc);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let k4 = mean(&by_k[&4]);
    let k32 = mean(&by_k[&32]);
    ensure(by_k[&32].len() == 40, || format!("{} k=32 cells", by_k[&32].len()))?;
    ensure(k32 >= 0.95, || format!("mean holdout AUC at k=32 is {k32}"))?;
    ensure((k32 - E2E_GOLDEN_K32).abs() <= 1e-6, || format!("k=32 mean {k32:.12} differs from golden {E2E_GOLDEN_K32}"))?;
    Ok(format!("mean holdout AUC k=4 {k4:.6}, k=32 {k32:.6} (golden {E2E_GOLDEN_K32})"))
}

fn pamkit(dir: &Path, args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pamkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Replays `cells` from `config` and compares each row with `full`.
fn replay_cells(dir: &Path, config: &Path, full: &str, cells: &[String]) -> Result<(), String> {
    let rows: HashMap<String, &str> = full
        .lines()
        .skip(1)
        .map(|l| (l.split(',').skip(1).take(3).collect::<Vec<_>>().join(","), l))
        .collect();
    let header = full.lines().next().unwrap_or_default();
    for cell in cells {
        let out = pamkit(dir, &["replay", "--config", config.to_str().unwrap(), "--cell", cell])?;
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        let mut lines = text.lines();
        ensure(lines.next() == Some(header), || format!("cell {cell}: header differs"))?;
        let got = lines.next().unwrap_or_default();
        ensure(Some(&got) == rows.get(cell), || format!("cell {cell}: {got:?} vs {:?}", rows.get(cell)))?;
    }
    Ok(())
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    pamkit(dir, &["synth-corpus", "--out", "corpus", "--domains", "x,y", "--clips-per-class", "44"])?;
    pamkit(
        dir,
        &["fewshot", "--manifest", "corpus/manifest.json", "--ks", "4,8,16,32", "--repeats", "10", "--seed", "5", "--out", "fs.csv"],
    )?;
    let full = std::fs::read_to_string(dir.join("fs.csv")).map_err(|e| e.to_string())?;
    let mut r = rng(8);
    let cells: Vec<String> = (0..6)
        .map(|_| {
            let ds = if r.random_bool(0.5) { "x" } else { "y" };
            let k = [4, 8, 16, 32][r.random_range(0..4)];
            format!("{ds},{k},{}", r.random_range(0..10))
        })
        .collect();
    // Replay from a different working directory: the config alone suffices.
    let elsewhere = tempfile::tempdir().map_err(|e| e.to_string())?;
    replay_cells(elsewhere.path(), &dir.join("fs.csv.run.json"), &full, &cells)?;

    pamkit(
        dir,
        &["dreg", "--manifest", "corpus/manifest.json", "--steps", "150", "--ks", "4,16", "--repeats", "4", "--out", "dreg.csv", "--rotations-out", "rot.json"],
    )?;
    let dreg_full = std::fs::read_to_string(dir.join("dreg.csv")).map_err(|e| e.to_string())?;
    let dreg_cells = vec!["x,16,3".to_owned(), "y,4,0".to_owned()];
    replay_cells(elsewhere.path(), &dir.join("dreg.csv.run.json"), &dreg_full, &dreg_cells)?;
    Ok(format!("fewshot cells {cells:?} and dreg cells {dreg_cells:?} reproduced bitwise from run configs"))
}

fn bench() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = pamkit(tmp.path(), &["bench", "--backend", "mock", "--out", "bench.csv"])?;
    let csv = std::fs::read_to_string(tmp.path().join("bench.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    ensure(header == "backend,batch_size,workers,windows,wall_s,rtf,error", || format!("header {header}"))?;
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    ensure(rows.len() == 25, || format!("{} cells", rows.len()))?;
    let failed = rows.iter().filter(|r| !r[6].is_empty()).count();
    let best = rows.iter().filter_map(|r| r[5].parse::<f64>().ok()).fold(0.0, f64::max);
    ensure(best > 1.0, || format!("best RTF {best}"))?;
    let summary = String::from_utf8_lossy(&out.stdout).trim().to_owned();
    ensure(summary.starts_with("best:"), || format!("summary line {summary:?}"))?;
    Ok(format!("25 cells ({failed} failed), best RTF {best:.1}; {summary}"))
}

fn main() {
    let mut runner = Runner { failed: Vec::new() };
    let s = Duration::from_secs;
    runner.run("auc-oracle-equivalence", s(5), auc_oracle);
    runner.run("error-reduction-reproduction", s(1), error_reduction_reproduction);
    runner.run("pcen-oracle", s(5), pcen_oracle);
    runner.run("gradient-checks", s(30), gradient_checks);
    runner.run("corpus-rules", s(1), corpus_rules);
    runner.run("sampler-statistics", s(10), sampler_statistics);
    runner.run("protocol-shape", s(60), protocol_shape);
    runner.run("end-to-end-dreg", s(600), end_to_end_dreg);
    runner.run("determinism-replay", s(300), determinism);
    runner.run("bench-grid", s(120), bench);
    if runner.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {:?}", runner.failed.len(), runner.failed);
        std::process::exit(1);
    }
}
