use std::collections::HashSet;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppm::load_ppm;
use crate::error::{Error, Result};
use crate::image::preprocess_image;
use crate::model::{Example, ModelConfig};
use crate::text::tokenize;

/// Texts need strictly more than this many words to be kept.
pub const MIN_WORDS_EXCLUSIVE: usize = 5;
/// Texts need strictly fewer than this many words to be kept.
pub const MAX_WORDS_EXCLUSIVE: usize = 150;

/// One image and its co-occurring text. `label` is 0 (negative) or 1 (positive).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub image: PathBuf,
    pub text: String,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitTag {
    #[default]
    Unsplit,
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Unsplit => "unsplit",
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        })
    }
}

/// An ordered list of samples with unique ids.
///
/// On disk this is JSON Lines, one `{id, image, text, label}` object per line.
/// Relative image paths are resolved against `base_dir`, which [`Manifest::load`]
/// sets to the manifest's own directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub samples: Vec<Sample>,
    pub note: String,
    pub split: SplitTag,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(samples: Vec<Sample>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let manifest = Self {
            samples,
            note: String::new(),
            split: SplitTag::Unsplit,
            base_dir: base_dir.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id `{}`", s.id)));
            }
            if s.label > 1 {
                return Err(Error::InvalidArgument(format!(
                    "sample `{}` has label {}, expected 0 or 1",
                    s.id, s.label
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, path, base)
    }

    pub fn parse(text: &str, path: &Path, base_dir: PathBuf) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let sample: Sample = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
            samples.push(sample);
        }
        let mut manifest = Self::new(samples, base_dir)?;
        manifest.note = format!("loaded from {}", path.display());
        Ok(manifest)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serialises"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn image_path(&self, sample: &Sample) -> PathBuf {
        self.base_dir.join(&sample.image)
    }

    fn with_samples(&self, samples: Vec<Sample>, split: SplitTag, note: String) -> Self {
        Self {
            samples,
            note,
            split,
            base_dir: self.base_dir.clone(),
        }
    }
}

/// Keeps samples whose token count lies strictly between 5 and 150.
pub fn filter_by_length(manifest: &Manifest) -> Manifest {
    let kept: Vec<Sample> = manifest
        .samples
        .iter()
        .filter(|s| {
            let n = tokenize(&s.text).len();
            n > MIN_WORDS_EXCLUSIVE && n < MAX_WORDS_EXCLUSIVE
        })
        .cloned()
        .collect();
    let note = format!(
        "{}; length-filtered {} -> {}",
        manifest.note,
        manifest.len(),
        kept.len()
    );
    manifest.with_samples(kept, manifest.split, note)
}

/// Seeded shuffle, then the first `floor(0.8 n)` samples train and the rest test.
pub fn split_train_test(manifest: &Manifest, seed: u64) -> (Manifest, Manifest) {
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = manifest.len() * 4 / 5;
    let pick = |idx: &[usize]| idx.iter().map(|&i| manifest.samples[i].clone()).collect();
    let note = |tag| format!("{}; {tag} split with seed {seed}", manifest.note);
    (
        manifest.with_samples(pick(&order[..n_train]), SplitTag::Train, note("train")),
        manifest.with_samples(pick(&order[n_train..]), SplitTag::Test, note("test")),
    )
}

/// Loads, preprocesses and tokenizes one sample for `cfg`.
pub fn prepare_example(manifest: &Manifest, sample: &Sample, cfg: &ModelConfig) -> Result<Example> {
    let raw = load_ppm(&manifest.image_path(sample))?;
    let image = preprocess_image(&raw, cfg.image.input_side, cfg.image.channel_mean)?;
    Ok(Example {
        id: sample.id.clone(),
        image,
        tokens: tokenize(&sample.text),
        label: usize::from(sample.label),
    })
}

/// Prepares every sample of the manifest, in order, loading images in parallel.
pub fn load_examples(manifest: &Manifest, cfg: &ModelConfig) -> Result<Vec<Example>> {
    use rayon::prelude::*;
    manifest
        .samples
        .par_iter()
        .map(|s| prepare_example(manifest, s, cfg))
        .collect()
}
