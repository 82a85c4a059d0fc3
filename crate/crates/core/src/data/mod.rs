//! File formats and dataset plumbing: PPM images, word-vector files, JSONL
//! manifests, checkpoints, and the synthetic cross-modal generator.

mod checkpoint;
mod embeddings;
mod manifest;
mod ppm;
mod synthetic;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use embeddings::{load_embeddings, parse_embeddings, write_embeddings};
pub use manifest::{
    filter_by_length, load_examples, prepare_example, split_train_test, Manifest, Sample, SplitTag,
    MAX_WORDS_EXCLUSIVE, MIN_WORDS_EXCLUSIVE,
};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use synthetic::{gen_synthetic, Regime, RegimeMix, SyntheticDataset, SyntheticOptions, SyntheticSample};
