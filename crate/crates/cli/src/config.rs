use std::path::{Path, PathBuf};

use clap::Args;
use deepfusion::data::RegimeMix;
use deepfusion::train::Optimizer;
use deepfusion::{Modality, ModelConfig, Precision, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Settings that may come from the config file or from flags. Every field is
/// optional; [`Overrides::resolve`] fills the gaps with defaults.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Overrides {
    /// Seed for every random choice: data, split, initialisation, shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Architecture preset [default: tiny].
    #[arg(long, value_parser = ["full", "tiny"])]
    pub preset: Option<String>,
    /// fused, image-only or text-only [default: fused].
    #[arg(long)]
    pub modality: Option<String>,
    /// Word-vector file, "count dim" header then one word per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// JSON Lines manifest of {id, image, text, label}.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory (gen-data, train).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mini-batch size [default: 100].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate [default: 1e-4].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate decay factor [default: 0.96].
    #[arg(long)]
    pub decay_base: Option<f64>,
    /// Steps between decays [default: 3000].
    #[arg(long)]
    pub decay_every: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Parameter storage between steps, narrow (f32) or wide (f64) [default: narrow].
    #[arg(long)]
    pub precision: Option<String>,
    /// Number of synthetic samples [default: 1000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Regime proportions "a,b,c,d" summing to 1 [default: 0.25,0.25,0.25,0.25].
    #[arg(long)]
    pub mix: Option<String>,
    /// Side of generated square images [default: 32].
    #[arg(long)]
    pub image_side: Option<usize>,
}

macro_rules! layer {
    ($base:ident, $top:ident; $($field:ident),*) => {
        Overrides { $($field: $top.$field.or($base.$field)),* }
    };
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: String,
    pub modality: Modality,
    pub embeddings: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub n: usize,
    /// Regime proportions A to D.
    pub mix: [f64; 4],
    pub image_side: usize,
}

impl Overrides {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Field-wise `top` over `self`.
    pub fn layered(self, top: Overrides) -> Overrides {
        let base = self;
        layer!(base, top; seed, preset, modality, embeddings, manifest, checkpoint, out,
            batch_size, lr, decay_base, decay_every, epochs, precision, n, mix, image_side)
    }

    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let seed = self.seed.unwrap_or(0);
        let defaults = TrainConfig::default();
        let precision = match self.precision.as_deref() {
            None | Some("narrow") => Precision::Narrow,
            Some("wide") => Precision::Wide,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "unknown precision `{other}` (expected narrow or wide)"
                )))
            }
        };
        let train = TrainConfig {
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            initial_lr: self.lr.unwrap_or(defaults.initial_lr),
            decay_base: self.decay_base.unwrap_or(defaults.decay_base),
            decay_every: self.decay_every.unwrap_or(defaults.decay_every),
            epochs: self.epochs.unwrap_or(defaults.epochs),
            seed,
            optimizer: Optimizer::Sgd,
            precision,
        };
        train.validate()?;
        let mix: RegimeMix = match &self.mix {
            Some(s) => s.parse()?,
            None => RegimeMix::default(),
        };
        mix.validate()?;
        let preset = self.preset.unwrap_or_else(|| "tiny".into());
        ModelConfig::preset(&preset)?;
        Ok(RunConfig {
            seed,
            preset,
            modality: self.modality.as_deref().unwrap_or("fused").parse()?,
            embeddings: self.embeddings,
            manifest: self.manifest,
            checkpoint: self.checkpoint,
            out: self.out,
            train,
            n: self.n.unwrap_or(1000),
            mix: mix.0,
            image_side: self.image_side.unwrap_or(32),
        })
    }
}

impl RunConfig {
    /// Defaults, then the config file if given, then flags.
    pub fn from_sources(file: Option<&Path>, flags: Overrides) -> Result<Self, CliError> {
        let base = match file {
            Some(path) => Overrides::load(path)?,
            None => Overrides::default(),
        };
        base.layered(flags).resolve()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::preset(&self.preset)
            .expect("preset checked in resolve")
            .with_modality(self.modality)
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("missing --{flag} (or `{flag}` in the config file)")))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}
