//! Word vectors in the textual word2vec format: a `count dim` header, then one
//! line per word holding the word and `dim` space-separated reals.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::EmbeddingTable;

pub fn load_embeddings(path: &Path, oov_seed: u64) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path, oov_seed)
}

pub fn parse_embeddings(text: &str, path: &Path, oov_seed: u64) -> Result<EmbeddingTable> {
    let err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing `count dim` header".into()))?;
    let header: Vec<&str> = header.split_whitespace().collect();
    let [count, dim] = header[..] else {
        return Err(err(1, format!("expected `count dim`, found {} fields", header.len())));
    };
    let count: usize = count
        .parse()
        .map_err(|_| err(1, format!("bad word count `{count}`")))?;
    let dim: usize = dim
        .parse()
        .map_err(|_| err(1, format!("bad dimension `{dim}`")))?;
    if dim == 0 {
        return Err(err(1, "dimension must be positive".into()));
    }

    let mut table = EmbeddingTable::new(dim, oov_seed)?;
    let mut seen = 0;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        let values = parts
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(lineno, format!("bad value `{v}` for `{word}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(err(
                lineno,
                format!("`{word}` has {} values, expected {dim}", values.len()),
            ));
        }
        table.insert(word, values)?;
        seen += 1;
    }
    if seen != count {
        return Err(err(1, format!("header announces {count} words, file has {seen}")));
    }
    Ok(table)
}

/// Writes words in lexicographic order with shortest round-trip formatting.
pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", table.len(), table.dim());
    for word in table.words() {
        out.push_str(word);
        for v in table.get(word).expect("listed word") {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
