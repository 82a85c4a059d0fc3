//! Text branch: tokenisation, frozen word vectors, and the multi-width
//! convolution with max/mean/min pooling.

mod embedding;
mod encoder;
mod tokenize;

pub use embedding::{EmbeddingTable, SentenceMatrix, DEFAULT_EMBED_DIM, MAX_SENTENCE_LEN};
pub use encoder::{
    encode_text, text_feature_maps, triple_pool, FilterBank, Nonlinearity, TextBranch, TextConfig,
};
pub use tokenize::tokenize;
