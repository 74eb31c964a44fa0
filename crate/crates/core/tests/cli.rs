use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pamkit::cli::RunConfig;
use pamkit::eval::load_report;

fn pamkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pamkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = pamkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Two-domain synthetic corpus under `dir/corpus`.
fn corpus(dir: &Path) -> PathBuf {
    ok(dir, &["synth-corpus", "--out", "corpus", "--domains", "a,b", "--clips-per-class", "44"]);
    dir.join("corpus/manifest.json")
}

#[test]
fn fewshot_twice_gives_identical_csv_and_cells_replay_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir);
    let args = |out: &str| {
        [
            "fewshot", "--manifest", "corpus/manifest.json", "--backend", "mock", "--ks", "4,8,16,32", "--repeats",
            "10", "--seed", "1", "--out",
        ]
        .into_iter()
        .chain([out])
        .map(str::to_owned)
        .collect::<Vec<_>>()
    };
    let a: Vec<String> = args("one.csv");
    let b: Vec<String> = args("two.csv");
    ok(dir, &a.iter().map(String::as_str).collect::<Vec<_>>());
    ok(dir, &b.iter().map(String::as_str).collect::<Vec<_>>());
    let one = std::fs::read_to_string(dir.join("one.csv")).unwrap();
    let two = std::fs::read_to_string(dir.join("two.csv")).unwrap();
    assert_eq!(one, two);
    assert_eq!(one.lines().count(), 1 + 2 * 4 * 10);

    // The run config alone reproduces the run, from any directory.
    let config = dir.join("one.csv.run.json");
    let rc: RunConfig = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    assert_eq!(rc.prng, pamkit::rng::PRNG_ID);
    let elsewhere = tempfile::tempdir().unwrap();
    let cfg = config.to_str().unwrap();
    ok(elsewhere.path(), &["replay", "--config", cfg, "--out", "again.csv"]);
    assert_eq!(std::fs::read_to_string(elsewhere.path().join("again.csv")).unwrap(), one);

    let header = one.lines().next().unwrap();
    for cell in ["a,4,0", "b,16,7", "b,32,9"] {
        let out = ok(elsewhere.path(), &["replay", "--config", cfg, "--cell", cell]);
        let text = String::from_utf8(out.stdout).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], header);
        let row = one.lines().find(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[1..4].join(",") == cell
        });
        assert_eq!(Some(lines[1]), row, "cell {cell}");
    }
    let out = pamkit(dir, &["replay", "--config", cfg, "--cell", "a,5,0"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bench_prints_full_grid_and_best_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["bench", "--backend", "mock", "--duration-s", "120"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "backend,batch_size,workers,windows,wall_s,rtf,error");
    assert_eq!(lines.len(), 26);
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("best: "));
    assert!(tmp.path().join("pamkit-bench.run.json").exists());
}

#[test]
fn error_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pamkit(tmp.path(), &["fewshot", "--manifest", "missing.json"]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert_eq!(err["field"], "--manifest");

    let out = pamkit(tmp.path(), &["fewshot", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(tmp.path().join("bad.json"), "{not json").unwrap();
    let out = pamkit(tmp.path(), &["manifest", "--manifest", "bad.json"]);
    assert_eq!(out.status.code(), Some(3));

    let out = pamkit(tmp.path(), &["bench", "--backend", "nonsense"]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["field"], "--backend");
}

#[test]
fn pretrain_embed_and_report_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir);
    ok(dir, &["manifest", "--manifest", "corpus/manifest.json", "--out", "copy.json", "--drop-ambient"]);
    let copy = pamkit::corpus::load_manifest(dir.join("copy.json")).unwrap();
    assert!(copy.clips().all(|c| c.primary != pamkit::corpus::PrimaryLabel::Ambient));

    ok(
        dir,
        &["pretrain", "--manifest", "corpus/manifest.json", "--datasets", "a", "--steps", "20", "--out", "toy.json"],
    );
    let cache_dir = dir.join("caches");
    let out = Command::new(env!("CARGO_BIN_EXE_pamkit"))
        .current_dir(dir)
        .env("PAMKIT_CACHE_DIR", &cache_dir)
        .args(["embed", "--manifest", "corpus/manifest.json", "--backend", "toy:toy.json", "--datasets", "b"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cache = cache_dir.join("toy.pemb");
    assert!(cache.exists());

    let backend = format!("cache:{}", cache.display());
    let fewshot = |backend: &str, out: &str| {
        ok(
            dir,
            &[
                "fewshot", "--manifest", "corpus/manifest.json", "--backend", backend, "--datasets", "b", "--ks",
                "4", "--repeats", "3", "--out", out,
            ],
        );
    };
    fewshot(&backend, "cached.json");
    fewshot("toy:toy.json", "direct.csv");
    let cached = load_report(dir.join("cached.json")).unwrap();
    let direct = load_report(dir.join("direct.csv")).unwrap();
    assert_eq!(cached.records.len(), 3);
    for (c, d) in cached.records.iter().zip(&direct.records) {
        assert_eq!(c.macro_auc, d.macro_auc);
        assert_eq!(c.seed, d.seed);
    }

    let out = ok(dir, &["report", "direct.csv", "--merged", "merged.json"]);
    let agg = String::from_utf8(out.stdout).unwrap();
    assert!(agg.starts_with("model,dataset,k,n,failed,mean_auc,std_auc"));
    assert_eq!(load_report(dir.join("merged.json")).unwrap(), direct);
}
