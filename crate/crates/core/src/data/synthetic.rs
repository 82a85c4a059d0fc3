//! Synthetic image/text pairs in four regimes: both modalities informative
//! and positive (A) or negative (B), only the image informative (C), or only
//! the text informative (D).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::embeddings::write_embeddings;
use super::manifest::{Manifest, Sample};
use super::ppm::save_ppm;
use crate::error::{Error, Result};
use crate::image::{preprocess_image, RgbImage};
use crate::model::{Example, ModelConfig};
use crate::text::{tokenize, EmbeddingTable, DEFAULT_EMBED_DIM};

const POSITIVE: &[&str] = &[
    "happy", "beautiful", "amazing", "wonderful", "lovely", "joyful", "sunny", "delightful",
    "great", "glorious", "cheerful", "brilliant",
];
const NEGATIVE: &[&str] = &[
    "sad", "gloomy", "terrible", "awful", "lonely", "broken", "miserable", "horrible", "bleak",
    "grim", "dreadful", "depressing",
];
const NEUTRAL_ADJ: &[&str] = &["old", "small", "wooden", "tall", "busy", "quiet", "plain", "square"];
const NOUNS: &[&str] = &[
    "street", "photo", "table", "window", "morning", "city", "car", "tree", "camera", "wall",
    "building", "road", "afternoon", "corner", "train", "bridge",
];
const DETERMINERS: &[&str] = &["the", "a", "this", "that"];
const PREPOSITIONS: &[&str] = &["near", "on", "in", "at", "by", "behind"];
const VERBS: &[&str] = &["stands", "sits", "waits", "appears", "looks"];
/// Left out of the emitted vector file so the out-of-vocabulary path is exercised.
const OOV_WORDS: &[&str] = &["afternoon", "corner", "bridge", "behind"];

/// Fraction of adjective slots filled from the polarity lexicon in informative texts.
const POLAR_ADJ_RATE: f64 = 0.6;
pub const MIN_TEXT_WORDS: usize = 6;
pub const MAX_TEXT_WORDS: usize = 149;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    A,
    B,
    C,
    D,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::A, Regime::B, Regime::C, Regime::D];

    pub fn image_informative(self) -> bool {
        self != Regime::D
    }

    pub fn text_informative(self) -> bool {
        self != Regime::C
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Regime::A => "a",
            Regime::B => "b",
            Regime::C => "c",
            Regime::D => "d",
        };
        f.write_str(c)
    }
}

/// Proportions of regimes A to D; must be non-negative and sum to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeMix(pub [f64; 4]);

impl Default for RegimeMix {
    fn default() -> Self {
        RegimeMix([0.25; 4])
    }
}

impl RegimeMix {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "regime proportions must be non-negative and sum to 1, got {:?} (sum {sum})",
                self.0
            )));
        }
        Ok(())
    }

    /// Splits `n` by largest remainder; earlier regimes win ties.
    pub fn counts(&self, n: usize) -> Result<[usize; 4]> {
        self.validate()?;
        let exact = self.0.map(|p| p * n as f64);
        let mut counts = exact.map(|e| e.floor() as usize);
        let mut order = [0, 1, 2, 3];
        order.sort_by(|&i, &j| {
            let (ri, rj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
            rj.total_cmp(&ri).then(i.cmp(&j))
        });
        let short = n - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        Ok(counts)
    }
}

/// Parses comma-separated proportions such as `0.25,0.25,0.25,0.25`.
impl FromStr for RegimeMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad proportion `{p}`")))
            })
            .collect::<Result<_>>()?;
        let arr: [f64; 4] = parts.try_into().map_err(|v: Vec<f64>| {
            Error::InvalidArgument(format!("expected 4 proportions, got {}", v.len()))
        })?;
        let mix = RegimeMix(arr);
        mix.validate()?;
        Ok(mix)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOptions {
    pub n: usize,
    pub mix: RegimeMix,
    pub seed: u64,
    pub image_side: usize,
    pub embed_dim: usize,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            n: 100,
            mix: RegimeMix::default(),
            seed: 0,
            image_side: 32,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub sample: Sample,
    pub regime: Regime,
    pub image: RgbImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Vec<SyntheticSample>,
    pub embeddings: EmbeddingTable,
    pub options: SyntheticOptions,
}

impl SyntheticDataset {
    /// The manifest as it will be written, with image paths relative to `base_dir`.
    pub fn manifest(&self, base_dir: impl Into<PathBuf>) -> Result<Manifest> {
        let mut m = Manifest::new(self.samples.iter().map(|s| s.sample.clone()).collect(), base_dir)?;
        let o = &self.options;
        m.note = format!("synthetic n={} mix={:?} seed={}", o.n, o.mix.0, o.seed);
        Ok(m)
    }

    /// Preprocesses every sample in memory, skipping the file round trip.
    pub fn examples(&self, cfg: &ModelConfig) -> Result<Vec<Example>> {
        self.samples
            .iter()
            .map(|s| {
                Ok(Example {
                    id: s.sample.id.clone(),
                    image: preprocess_image(&s.image, cfg.image.input_side, cfg.image.channel_mean)?,
                    tokens: tokenize(&s.sample.text),
                    label: usize::from(s.sample.label),
                })
            })
            .collect()
    }

    /// Writes `manifest.jsonl`, `embeddings.txt` and `images/*.ppm` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        for s in &self.samples {
            save_ppm(&s.image, &dir.join(&s.sample.image))?;
        }
        write_embeddings(&self.embeddings, &dir.join("embeddings.txt"))?;
        let manifest = self.manifest(dir)?;
        manifest.save(&dir.join("manifest.jsonl"))?;
        Ok(manifest)
    }
}

pub fn gen_synthetic(opts: &SyntheticOptions) -> Result<SyntheticDataset> {
    let counts = opts.mix.counts(opts.n)?;
    if opts.image_side == 0 || opts.embed_dim == 0 {
        return Err(Error::InvalidArgument(
            "image side and embedding dimension must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut plan = Vec::with_capacity(opts.n);
    for (regime, &count) in Regime::ALL.iter().zip(&counts) {
        for i in 0..count {
            let label = match regime {
                Regime::A => 1,
                Regime::B => 0,
                // Alternating keeps the single-modality regimes balanced;
                // opposite phases keep odd-sized draws balanced overall.
                Regime::C => (i % 2) as u8,
                Regime::D => 1 - (i % 2) as u8,
            };
            plan.push((*regime, label));
        }
    }
    plan.shuffle(&mut rng);

    let samples = plan
        .into_iter()
        .enumerate()
        .map(|(i, (regime, label))| {
            let id = format!("syn{i:05}");
            let image = draw_image(
                &mut rng,
                opts.image_side,
                regime.image_informative().then_some(label),
            );
            let text = draw_text(&mut rng, regime.text_informative().then_some(label));
            SyntheticSample {
                sample: Sample {
                    image: PathBuf::from("images").join(format!("{id}.ppm")),
                    id,
                    text,
                    label,
                },
                regime,
                image,
            }
        })
        .collect();

    Ok(SyntheticDataset {
        samples,
        embeddings: draw_embeddings(&mut rng, opts.embed_dim)?,
        options: opts.clone(),
    })
}

/// Warm and bright for label 1, cold and dark for label 0, gray noise otherwise.
fn draw_image(rng: &mut ChaCha8Rng, side: usize, label: Option<u8>) -> RgbImage {
    let base: [f64; 3] = match label {
        Some(1) => [0.80, 0.62, 0.38],
        Some(_) => [0.18, 0.24, 0.45],
        None => [0.5, 0.5, 0.5],
    };
    let level = rng.gen_range(-0.06..0.06);
    let (fx, fy) = (rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp = if label.is_some() { 0.12 } else { 0.04 };
    let mut pixels = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let wave = amp * (fx * x as f64 + fy * y as f64 + phase).sin();
            for &b in &base {
                let noise = rng.gen_range(-0.1..0.1);
                let v = (b + level + wave + noise).clamp(0.0, 1.0);
                pixels.push((v * 255.0).round() as u8);
            }
        }
    }
    RgbImage::new(side, side, pixels).expect("sized above")
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("non-empty lexicon")
}

/// Template sentences `det adj noun verb prep det adj noun.` cut to a length
/// drawn uniformly from `[6, 149]` words. Informative texts always start with
/// a polarity adjective.
fn draw_text(rng: &mut ChaCha8Rng, label: Option<u8>) -> String {
    let len = rng.gen_range(MIN_TEXT_WORDS..=MAX_TEXT_WORDS);
    let polar = match label {
        Some(1) => Some(POSITIVE),
        Some(_) => Some(NEGATIVE),
        None => None,
    };
    let mut words: Vec<String> = Vec::with_capacity(len + 8);
    let mut first_adj = true;
    while words.len() < len {
        let mut adj = |rng: &mut ChaCha8Rng| match polar {
            Some(lex) if first_adj || rng.gen_bool(POLAR_ADJ_RATE) => {
                first_adj = false;
                pick(rng, lex)
            }
            _ => pick(rng, NEUTRAL_ADJ),
        };
        let sentence = [
            pick(rng, DETERMINERS),
            adj(rng),
            pick(rng, NOUNS),
            pick(rng, VERBS),
            pick(rng, PREPOSITIONS),
            pick(rng, DETERMINERS),
            adj(rng),
            pick(rng, NOUNS),
        ];
        words.extend(sentence.iter().map(|w| w.to_string()));
        if let Some(last) = words.last_mut() {
            last.push('.');
        }
    }
    words.truncate(len);
    let mut text = words.join(" ");
    if let Some(first) = text.get_mut(..1) {
        first.make_ascii_uppercase();
    }
    text
}

/// Polarity words lie along a shared sentiment direction, positive along `+d`
/// and negative along `-d`; everything else is small noise.
fn draw_embeddings(rng: &mut ChaCha8Rng, dim: usize) -> Result<EmbeddingTable> {
    let direction: Vec<f64> = (0..dim)
        .map(|_| if rng.gen_bool(0.5) { 0.3 } else { -0.3 })
        .collect();
    let mut table = EmbeddingTable::new(dim, 0)?;
    let lexicons: [(&[&str], f64); 7] = [
        (POSITIVE, 1.0),
        (NEGATIVE, -1.0),
        (NEUTRAL_ADJ, 0.0),
        (NOUNS, 0.0),
        (DETERMINERS, 0.0),
        (PREPOSITIONS, 0.0),
        (VERBS, 0.0),
    ];
    for (words, polarity) in lexicons {
        for &w in words {
            let v = direction
                .iter()
                .map(|d| polarity * d + rng.gen_range(-0.1..0.1))
                .collect();
            if !OOV_WORDS.contains(&w) {
                table.insert(w, v)?;
            }
        }
    }
    Ok(table)
}
