use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepfusion::data::save_checkpoint;
use deepfusion::{FusionModel, ModelConfig};
use serde_json::json;

fn deepfusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepfusion"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = deepfusion(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command expected to fail and returns its standard error.
fn fails(args: &[&str]) -> String {
    let out = deepfusion(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    assert!(out.stdout.is_empty(), "diagnostics leaked to stdout");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(!err.trim().is_empty());
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("data{n}_{seed}"));
    ok(&["gen-data", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", s(&out)]);
    out
}

fn train_args<'a>(data: &'a str, emb: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--manifest", data, "--embeddings", emb, "--out", out, "--seed", "5",
        "--batch-size", "8", "--lr", "0.05", "--epochs", "2",
    ]
}

#[test]
fn gen_data_writes_manifest_and_images_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), 100, 7);
    let manifest = std::fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 100);
    assert_eq!(std::fs::read_dir(a.join("images")).unwrap().count(), 100);

    let b = dir.path().join("again");
    ok(&["gen-data", "--n", "100", "--seed", "7", "--out", s(&b)]);
    for name in ["manifest.jsonl", "embeddings.txt", "images/syn00042.ppm"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn proportions_not_summing_to_one_fail() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(&["gen-data", "--n", "10", "--mix", "0.5,0.5,0.5,0", "--out", s(dir.path())]);
    assert!(err.contains("sum to 1"), "{err}");
    assert!(!dir.path().join("manifest.jsonl").exists());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("d");
    std::fs::write(&cfg, format!("n = 12\nseed = 1\nout = \"{}\"\n", out.display())).unwrap();
    ok(&["gen-data", "--config", s(&cfg), "--n", "9"]);
    let manifest = std::fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 9);

    std::fs::write(&cfg, "batch_size = 3\n").unwrap();
    let err = fails(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    assert!(err.contains("run.toml"), "{err}");
}

#[test]
fn training_is_deterministic_and_evaluable() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 40, 3);
    let (manifest, emb) = (data.join("manifest.jsonl"), data.join("embeddings.txt"));
    let run = dir.path().join("run");
    ok(&train_args(s(&manifest), s(&emb), s(&run)));
    let first: Vec<Vec<u8>> = ["history.csv", "final.ckpt", "best.ckpt", "run.json"]
        .iter()
        .map(|f| std::fs::read(run.join(f)).unwrap())
        .collect();
    ok(&train_args(s(&manifest), s(&emb), s(&run)));
    for (f, bytes) in ["history.csv", "final.ckpt", "best.ckpt", "run.json"].iter().zip(&first) {
        assert_eq!(&std::fs::read(run.join(f)).unwrap(), bytes, "{f} differs between runs");
    }

    let ckpt = deepfusion::data::load_checkpoint(&run.join("final.ckpt")).unwrap();
    assert_eq!(ckpt.meta["run"]["train"]["batch_size"], 8);
    assert_eq!(ckpt.meta["run"]["seed"], 5);

    let stdout = ok(&[
        "eval", "--manifest", s(&manifest), "--embeddings", s(&emb), "--checkpoint",
        s(&run.join("best.ckpt")), "--split", "test", "--seed", "5",
    ]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "Prec. Rec. F1 Acc.");
    let row: Vec<f64> = lines[1].split(' ').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row.len(), 4);
    assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(lines[1].split(' ').all(|v| v.len() == 5), "three decimals: {}", lines[1]);

    let table = ok(&["report", "--out", s(&run)]);
    assert!(table.starts_with("| Epoch | Split | Prec. | Rec. | F1 | Acc. |\n"));
    assert_eq!(table.lines().filter(|l| l.starts_with("| 2 |")).count(), 2);
}

#[test]
fn zero_model_predicts_even_odds() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 10, 2);
    let ckpt = dir.path().join("zero.ckpt");
    let model = FusionModel::zeros(ModelConfig::tiny()).unwrap();
    save_checkpoint(&model, &json!({}), &ckpt).unwrap();
    let out = ok(&[
        "predict", "--checkpoint", s(&ckpt), "--embeddings", s(&data.join("embeddings.txt")),
        "--image", s(&data.join("images/syn00000.ppm")), "--text", "a bright sunny day",
    ]);
    assert_eq!(out.trim(), "label 0 (negative) p(neg)/p(pos) 0.500/0.500");
}

#[test]
fn gradcheck_passes_on_tiny_presets() {
    let out = ok(&["gradcheck", "--trials", "4"]);
    assert!(out.lines().any(|l| l.starts_with("model/fused")));
    assert!(!out.contains("FAIL"), "{out}");
}

#[test]
fn malformed_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 10, 4);
    let emb = data.join("embeddings.txt");
    let manifest = data.join("manifest.jsonl");
    let out = dir.path().join("out");

    let err = fails(&["train", "--embeddings", s(&emb), "--out", s(&out)]);
    assert!(err.contains("--manifest"), "{err}");
    fails(&["train", "--manifest", "missing.jsonl", "--embeddings", s(&emb), "--out", s(&out)]);

    let bad_manifest = dir.path().join("bad.jsonl");
    std::fs::write(&bad_manifest, "{\"id\":\"a\",\"image\":\"x.ppm\",\"text\":\"t\"}\n").unwrap();
    let err = fails(&["train", "--manifest", s(&bad_manifest), "--embeddings", s(&emb), "--out", s(&out)]);
    assert!(err.contains("bad.jsonl:1"), "{err}");

    let bad_emb = dir.path().join("bad.txt");
    std::fs::write(&bad_emb, "2 3\nup 1 2 3\ndown 1 2\n").unwrap();
    let err = fails(&["train", "--manifest", s(&manifest), "--embeddings", s(&bad_emb), "--out", s(&out)]);
    assert!(err.contains("bad.txt:3"), "{err}");

    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&FusionModel::zeros(ModelConfig::tiny()).unwrap(), &json!({}), &ckpt).unwrap();
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let corrupt = dir.path().join("corrupt.ckpt");
    std::fs::write(&corrupt, bytes).unwrap();
    let err = fails(&["eval", "--manifest", s(&manifest), "--embeddings", s(&emb), "--checkpoint", s(&corrupt)]);
    assert!(err.contains("checksum"), "{err}");

    let truncated = dir.path().join("short.ppm");
    let ppm = std::fs::read(data.join("images/syn00001.ppm")).unwrap();
    std::fs::write(&truncated, &ppm[..ppm.len() - 10]).unwrap();
    let err = fails(&[
        "predict", "--checkpoint", s(&ckpt), "--embeddings", s(&emb), "--image", s(&truncated),
        "--text", "hello there",
    ]);
    assert!(err.contains("truncated"), "{err}");

    fails(&["report", "--history", s(&manifest)]);
    fails(&["gen-data", "--n", "10", "--preset", "huge", "--out", s(&out)]);
}
