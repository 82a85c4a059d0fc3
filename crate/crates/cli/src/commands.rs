use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use deepfusion::data::{
    filter_by_length, gen_synthetic, load_checkpoint, load_embeddings, load_examples, prepare_example,
    save_checkpoint, split_train_test, Regime, RegimeMix, SyntheticOptions,
};
use deepfusion::suite::{gradcheck_suite, SuiteOptions};
use deepfusion::train::{evaluate, train, TrainHistory};
use deepfusion::{Checkpoint, EmbeddingTable, FusionModel, Manifest, ModelConfig, Sample};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

pub const METRICS_HEADER: &str = "Prec. Rec. F1 Acc.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Every sample in the manifest.
    All,
    /// The training part of the length-filtered, seeded split.
    Train,
    /// The held-out part of the same split.
    Test,
}

pub fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.require(&cfg.out, "out")?;
    let opts = SyntheticOptions {
        n: cfg.n,
        mix: RegimeMix(cfg.mix),
        seed: cfg.seed,
        image_side: cfg.image_side,
        embed_dim: cfg.model_config().text.embed_dim,
    };
    let data = gen_synthetic(&opts)?;
    data.write(out)?;
    let counts = opts.mix.counts(opts.n)?;
    let positives = data.samples.iter().filter(|s| s.sample.label == 1).count();
    let mut summary = String::new();
    for (regime, count) in Regime::ALL.iter().zip(counts) {
        let _ = write!(summary, " {regime}={count}");
    }
    eprintln!(
        "wrote {} samples ({positives} positive;{summary}) to {}",
        data.samples.len(),
        out.display()
    );
    println!("{}", out.join("manifest.jsonl").display());
    Ok(())
}

fn load_table(cfg: &RunConfig, model: &ModelConfig, oov_seed: u64) -> Result<EmbeddingTable, CliError> {
    if !model.modality.uses_text() {
        return match &cfg.embeddings {
            Some(path) => Ok(load_embeddings(path, oov_seed)?),
            None => Ok(EmbeddingTable::new(model.text.embed_dim, oov_seed)?),
        };
    }
    let path = cfg.require(&cfg.embeddings, "embeddings")?;
    let table = load_embeddings(path, oov_seed)?;
    if table.dim() != model.text.embed_dim {
        return Err(CliError::Usage(format!(
            "{} has {}-dimensional vectors but the model expects {}",
            path.display(),
            table.dim(),
            model.text.embed_dim
        )));
    }
    Ok(table)
}

fn split_examples(manifest: &Manifest, seed: u64) -> (Manifest, Manifest) {
    split_train_test(&filter_by_length(manifest), seed)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.require(&cfg.out, "out")?;
    let manifest = Manifest::load(cfg.require(&cfg.manifest, "manifest")?)?;
    let model_cfg = cfg.model_config();
    let table = load_table(cfg, &model_cfg, cfg.seed)?;
    let (train_part, test_part) = split_examples(&manifest, cfg.seed);
    eprintln!(
        "{} samples, {} after length filter: {} train / {} test",
        manifest.len(),
        train_part.len() + test_part.len(),
        train_part.len(),
        test_part.len()
    );
    let train_set = load_examples(&train_part, &model_cfg)?;
    let test_set = load_examples(&test_part, &model_cfg)?;
    let model = FusionModel::new(model_cfg, cfg.seed)?;
    let held_out = (!test_set.is_empty()).then_some(test_set.as_slice());
    let result = train(&model, &train_set, held_out, &table, &cfg.train)?;

    for e in &result.history.epochs {
        eprintln!("epoch {:>3} {:<5} {}", e.epoch, e.split, e.metrics.table_row());
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let run = cfg.to_json();
    let meta = |which: &str, epoch: usize| {
        json!({ "run": run, "checkpoint": which, "epoch": epoch, "oov_seed": cfg.seed })
    };
    save_checkpoint(&result.final_model, &meta("final", cfg.train.epochs), &out.join("final.ckpt"))?;
    save_checkpoint(&result.best_model, &meta("best", result.best_epoch), &out.join("best.ckpt"))?;
    result.history.write_csv(&out.join("history.csv"))?;
    let run_path = out.join("run.json");
    let pretty = serde_json::to_string_pretty(&run).expect("json value serialises");
    std::fs::write(&run_path, pretty + "\n").map_err(|e| CliError::io(&run_path, e))?;
    println!(
        "best epoch {} ({} accuracy {:.3}); wrote final.ckpt, best.ckpt, history.csv, run.json to {}",
        result.best_epoch,
        if held_out.is_some() { "test" } else { "train" },
        result.best_accuracy,
        out.display()
    );
    Ok(())
}

/// Loads the checkpoint and the word vectors with the OOV seed it was trained with.
fn load_model(cfg: &RunConfig) -> Result<(Checkpoint, EmbeddingTable), CliError> {
    let ckpt = load_checkpoint(cfg.require(&cfg.checkpoint, "checkpoint")?)?;
    let oov_seed = ckpt.meta.get("oov_seed").and_then(|v| v.as_u64()).unwrap_or(cfg.seed);
    let table = load_table(cfg, &ckpt.model.config, oov_seed)?;
    Ok((ckpt, table))
}

pub fn eval(cfg: &RunConfig, split: Split) -> Result<(), CliError> {
    let (ckpt, table) = load_model(cfg)?;
    let manifest = Manifest::load(cfg.require(&cfg.manifest, "manifest")?)?;
    let part = match split {
        Split::All => manifest,
        Split::Train => split_examples(&manifest, cfg.seed).0,
        Split::Test => split_examples(&manifest, cfg.seed).1,
    };
    let examples = load_examples(&part, &ckpt.model.config)?;
    let report = evaluate(&ckpt.model, &examples, &table)?;
    let c = &report.counts;
    eprintln!("{} samples: tp {} fp {} fn {} tn {}", c.total(), c.tp, c.fp, c.fn_, c.tn);
    println!("{METRICS_HEADER}");
    println!("{}", report.table_row());
    Ok(())
}

pub fn predict(cfg: &RunConfig, image: &Path, text: &str) -> Result<(), CliError> {
    let (ckpt, table) = load_model(cfg)?;
    let sample = Sample {
        id: "input".into(),
        image: image.to_path_buf(),
        text: text.into(),
        label: 0,
    };
    let holder = Manifest::new(vec![sample.clone()], PathBuf::new())?;
    let example = prepare_example(&holder, &sample, &ckpt.model.config)?;
    let p = ckpt.model.predict(&example, &table)?;
    let name = if p.label == 1 { "positive" } else { "negative" };
    println!("label {} ({name}) p(neg)/p(pos) {:.3}/{:.3}", p.label, p.p_neg, p.p_pos);
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, trials: usize) -> Result<(), CliError> {
    let opts = SuiteOptions { trials, seed: cfg.seed, ..Default::default() };
    eprintln!(
        "eps {:e}, tol {:e}, {trials} trials per op; end-to-end data seed {}, model seed {}",
        opts.eps, opts.tol, opts.data_seed, opts.model_seed
    );
    let entries = gradcheck_suite(&opts)?;
    println!("{:<24} {:>6} {:>6} {:>10}", "case", "trials", "failed", "max rel");
    for e in &entries {
        println!(
            "{:<24} {:>6} {:>6} {:>10.2e} {}",
            e.name,
            e.trials,
            e.failed,
            e.max_rel_error,
            if e.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = entries.iter().filter(|e| !e.passed()).count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} gradient cases failed", entries.len())));
    }
    Ok(())
}

pub fn render_report(history: &str, path: &Path) -> Result<String, CliError> {
    let (steps, epochs) = TrainHistory::parse_csv(history, path)?;
    let mut out = String::new();
    out.push_str("| Epoch | Split | Prec. | Rec. | F1 | Acc. |\n");
    out.push_str("|---:|:---|---:|---:|---:|---:|\n");
    for e in &epochs {
        let _ = writeln!(
            out,
            "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} |",
            e.epoch, e.split, e.precision, e.recall, e.f1, e.accuracy
        );
    }
    if let (Some(first), Some(last)) = (steps.first(), steps.last()) {
        let _ = write!(
            out,
            "\n{} steps; loss {:.4} at step {} -> {:.4} at step {}; final lr {:e}\n",
            steps.len(),
            first.loss,
            first.step,
            last.loss,
            last.step,
            last.lr
        );
    }
    Ok(out)
}

pub fn report(cfg: &RunConfig, history: Option<&Path>) -> Result<(), CliError> {
    let path = match history {
        Some(p) => p.to_path_buf(),
        None => cfg.require(&cfg.out, "out")?.join("history.csv"),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    print!("{}", render_report(&text, &path)?);
    Ok(())
}
