use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::json;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tempoprobe"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn tempoprobe")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "tempoprobe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn smoke_config(iters: usize) -> serde_json::Value {
    json!({
        "model": {
            "n_layers": 2, "n_heads": 2, "d_model": 16, "d_mlp": 0,
            "vocab_size": 32, "ctx_len": 32, "pos_scale": 1.0
        },
        "train": {
            "max_lr": 3e-3, "warmup_iters": 20, "weight_decay": 0.01, "batch_size": 4,
            "seq_len": 32, "total_iters": iters, "checkpoint_every": 100, "seed": 0
        },
        "task": { "pool_size": 32, "min_prefix": 4, "max_prefix": 16 },
        "probe": { "N": 12, "perms": 3, "recall_N": 20, "recall_prompts": 5 },
        "analysis": { "lags": 5, "exclusion": 1, "source": "pre", "window": 5 },
        "seed": 3
    })
}

fn write_config(dir: &Path, iters: usize) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(&smoke_config(iters)).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--config", s(&dir.path().join("nope.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 200);
    let out = run(&["sweep-pos", "--config", s(&cfg), "--out", s(dir.path()), "--magnitudes", "0,-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.tpw");
    fs::write(&bogus, b"not an archive").unwrap();
    let out = run(&["analyze", s(&bogus), "--out", s(&dir.path().join("a"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus.tpw"));
}

#[test]
fn smoke_pipeline_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_config(root, 200);
    let run_dir = root.join("run");

    let t = Instant::now();
    let out = ok(&["train", "--config", s(&cfg), "--out", s(&run_dir)]);
    assert!(t.elapsed().as_secs() < 60, "smoke training took {:?}", t.elapsed());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("iter    100") && stdout.contains("iter    200"), "{stdout}");
    let series = fs::read_to_string(run_dir.join("series.csv")).unwrap();
    assert!(series.starts_with("iteration,val_loss,path\n"));
    assert_eq!(series.lines().count(), 4);

    let an = root.join("analysis");
    ok(&["analyze", s(&run_dir), "--config", s(&cfg), "--out", s(&an)]);
    for f in ["lagcrp.csv", "induction_grid.csv", "summary.csv", "lagcrp_ckpt_200.svg", "induction_ckpt_200.svg"] {
        assert!(an.join(f).exists(), "missing {f}");
    }
    let lag = fs::read_to_string(an.join("lagcrp.csv")).unwrap();
    // 3 checkpoints × 4 heads × 11 lags.
    assert_eq!(lag.lines().count(), 1 + 3 * 4 * 11);

    let ds = root.join("downstream");
    ok(&[
        "downstream",
        s(&run_dir.join("ckpt_200.tpw")),
        "--config",
        s(&cfg),
        "--ablate-threshold",
        "0.01",
        "--ablate-control",
        "--out",
        s(&ds),
    ]);
    let csv = fs::read_to_string(ds.join("downstream.csv")).unwrap();
    assert!(csv.starts_with("ablation_label,lag,prob\n"));
    assert!(csv.contains("\nnone,") && csv.contains("\ninduction>0.01,"));

    for (name, sub) in [("train", &run_dir), ("analyze", &an), ("downstream", &ds)] {
        let again = root.join(format!("replay_{name}"));
        let out = ok(&["replay", s(&sub.join("manifest.json")), "--out", s(&again)]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("replay identical"));
        for f in fs::read_dir(sub).unwrap() {
            let f = f.unwrap().path();
            if f.extension().is_some_and(|e| e == "csv") {
                let other = again.join(f.file_name().unwrap());
                assert_eq!(fs::read(&f).unwrap(), fs::read(&other).unwrap(), "{}", f.display());
            }
        }
    }
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.txt");
    fs::write(&counts, "5 100\n2 50\n9 200\n").unwrap();
    let out = dir.path().join("pool");
    ok(&["make-pool", "--counts", s(&counts), "--size", "2", "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("pool.txt")).unwrap(), "9\n5\n");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"]["command"], "make-pool");
    assert!(m["input_digests"].as_object().unwrap().keys().any(|k| k.ends_with("counts.txt")));
    assert!(m["outputs"]["pool.txt"].as_str().unwrap().len() == 64);
    assert!(m["toolkit_version"].is_string() && m["wall_clock_secs"].is_number());

    // A changed input makes replay refuse to run.
    fs::write(&counts, "5 100\n2 500\n9 200\n").unwrap();
    let r = run(&["replay", s(&out.join("manifest.json")), "--out", s(&dir.path().join("r"))]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn sweep_shares_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 100);
    let out = dir.path().join("sweep");
    ok(&["sweep-pos", "--config", s(&cfg), "--magnitudes", "0,1", "--out", s(&out)]);
    let summary = fs::read_to_string(out.join("posenc_summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("magnitude,avg_induction,avg_tau,avg_slope,n_induction"));
    assert_eq!(lines.count(), 2);
    assert_eq!(
        fs::read(out.join("mag_0/ckpt_0.tpw")).unwrap().len(),
        fs::read(out.join("mag_1/ckpt_0.tpw")).unwrap().len()
    );
    assert!(out.join("posenc_correlation.svg").exists());
}

#[test]
fn golden_parity_check() {
    use tempoprobe::seeding::{rng_for, Stream};
    use tempoprobe::transformer::{write_archive, Model, ModelConfig};
    use tempoprobe_cli::golden::{encode_golden_logits, final_logits};

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ModelConfig::toy_induction();
    cfg.vocab_size = 48;
    cfg.ctx_len = 16;
    let m = Model::init_with_std(cfg, 0.02, &mut rng_for(2, Stream::Init)).unwrap();
    let ckpt = dir.path().join("m.tpw");
    write_archive(&ckpt, &m, "test").unwrap();
    let prompt: Vec<u32> = (0..16).map(|i| (i * 5 % 48) as u32).collect();
    let mut golden = final_logits(&m, &prompt).unwrap();
    let side = dir.path().join("golden.bin");
    fs::write(&side, encode_golden_logits(&golden)).unwrap();
    let prompt_arg = prompt.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",");
    ok(&["check-golden", s(&ckpt), "--golden", s(&side), "--prompt", &prompt_arg, "--out", s(&dir.path().join("p"))]);

    golden[3] += 0.5;
    fs::write(&side, encode_golden_logits(&golden)).unwrap();
    let out = run(&["check-golden", s(&ckpt), "--golden", s(&side), "--prompt", &prompt_arg, "--out", s(&dir.path().join("q"))]);
    assert_eq!(out.status.code(), Some(1));
}
