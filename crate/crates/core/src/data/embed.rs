//! Word-embedding tables in the plain text format
//! `V D` header followed by `V` lines of `word v1 ... vD`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DataError;
use crate::nn::tensor::Tensor;

/// Frozen lookup table. A vocabulary word literally spelled `unk` provides
/// the out-of-vocabulary vector; if the file has none, an all-zero `unk` row
/// is appended.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
    unk_index: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vocabulary size including any synthetic unk row.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.unk_index
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn lookup(&self, word: &str) -> usize {
        *self.index.get(word).unwrap_or(&self.unk_index)
    }

    pub fn vector(&self, row: usize) -> &[f64] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// Row i is the vector of token i, unknowns mapped to the unk row.
    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Tensor, DataError> {
        if tokens.is_empty() {
            return Err(DataError::EmptySequence);
        }
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for t in tokens {
            data.extend_from_slice(self.vector(self.lookup(t.as_ref())));
        }
        Ok(Tensor::from_vec(&[tokens.len(), self.dim], data).expect("sized by construction"))
    }
}

pub fn load_embeddings(content: &str, file: &str) -> Result<EmbeddingTable, DataError> {
    let bad = |message: String| DataError::BadFormat {
        file: file.to_string(),
        message,
    };
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad("empty embedding file".to_string()))?;
    let mut parts = header.split_whitespace();
    let declared: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("header must be 'V D', got {header:?}")))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("header must be 'V D', got {header:?}")))?;
    if parts.next().is_some() || dim == 0 {
        return Err(bad(format!("header must be 'V D', got {header:?}")));
    }

    let mut words: Vec<String> = Vec::with_capacity(declared);
    let mut vectors: Vec<f64> = Vec::with_capacity(declared * dim);
    let mut index: HashMap<String, usize> = HashMap::with_capacity(declared);
    let mut seen = 0usize;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| bad(format!("line {lineno}: missing word")))?
            .to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| DataError::BadFormat {
                    file: file.to_string(),
                    message: format!("line {lineno}: {f:?} is not a number"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(DataError::DimensionMismatch {
                file: file.to_string(),
                line: lineno,
                expected: dim,
                found: values.len(),
            });
        }
        if let Some(&row) = index.get(&word) {
            log::warn!("{file}: line {lineno}: duplicate word {word:?}, keeping the later vector");
            vectors[row * dim..(row + 1) * dim].copy_from_slice(&values);
        } else {
            index.insert(word.clone(), words.len());
            words.push(word);
            vectors.extend_from_slice(&values);
        }
    }
    if seen != declared {
        return Err(bad(format!(
            "header declares {declared} words, file has {seen}"
        )));
    }
    let unk_index = match index.get("unk") {
        Some(&row) => row,
        None => {
            index.insert("unk".to_string(), words.len());
            words.push("unk".to_string());
            vectors.resize(vectors.len() + dim, 0.0);
            words.len() - 1
        }
    };
    Ok(EmbeddingTable {
        dim,
        words,
        vectors,
        index,
        unk_index,
    })
}

pub fn load_embeddings_path(path: &Path) -> Result<EmbeddingTable, DataError> {
    let content = fs::read_to_string(path)?;
    load_embeddings(&content, &path.display().to_string())
}

/// Write the text format read by `load_embeddings`.
pub fn write_embeddings(words: &[(String, Vec<f64>)], dim: usize) -> String {
    let mut out = String::new();
    writeln!(out, "{} {}", words.len(), dim).unwrap();
    for (word, vec) in words {
        assert_eq!(vec.len(), dim);
        out.push_str(word);
        for v in vec {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}
