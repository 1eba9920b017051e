//! Bag-of-embeddings text features.
//!
//! The MDW's notes are concatenated in time order, tokenized, and each
//! in-vocabulary token's embedding vector is summed into a fixed-length
//! feature vector. Out-of-vocabulary tokens contribute nothing but are
//! counted.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::window::ModelingDataWindow;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding file is empty")]
    Empty,
    #[error("line {line}: expected {expected} components, found {found}")]
    RaggedLine {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: component {component:?} is not a finite number")]
    BadComponent { line: usize, component: String },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("line {line}: no components after token")]
    MissingComponents { line: usize },
}

/// Token → vector map with a single declared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn from_entries<I>(entries: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut map = HashMap::new();
        let mut dimension = None;
        for (line, (token, vector)) in entries.into_iter().enumerate() {
            let line = line + 1;
            let expected = *dimension.get_or_insert(vector.len());
            if vector.len() != expected {
                return Err(EmbeddingError::RaggedLine {
                    line,
                    expected,
                    found: vector.len(),
                });
            }
            if vector.is_empty() {
                return Err(EmbeddingError::MissingComponents { line });
            }
            if let Some(bad) = vector.iter().find(|c| !c.is_finite()) {
                return Err(EmbeddingError::BadComponent {
                    line,
                    component: bad.to_string(),
                });
            }
            if map.insert(token.clone(), vector).is_some() {
                return Err(EmbeddingError::DuplicateToken { line, token });
            }
        }
        match dimension {
            Some(dimension) => Ok(EmbeddingTable {
                dimension,
                entries: map,
            }),
            None => Err(EmbeddingError::Empty),
        }
    }

    /// Loads a GloVe-format text file: one token per line followed by its
    /// whitespace-separated decimal components. The first line fixes the
    /// dimension.
    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let file = File::open(path).map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let reader = BufReader::new(file);
        let mut entries = HashMap::new();
        let mut dimension: Option<usize> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|source| EmbeddingError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line has a first field");
            let mut vector = Vec::new();
            for part in parts {
                let value: f64 = part.parse().map_err(|_| EmbeddingError::BadComponent {
                    line: line_no,
                    component: part.to_string(),
                })?;
                if !value.is_finite() {
                    return Err(EmbeddingError::BadComponent {
                        line: line_no,
                        component: part.to_string(),
                    });
                }
                vector.push(value);
            }
            if vector.is_empty() {
                return Err(EmbeddingError::MissingComponents { line: line_no });
            }
            let expected = *dimension.get_or_insert(vector.len());
            if vector.len() != expected {
                return Err(EmbeddingError::RaggedLine {
                    line: line_no,
                    expected,
                    found: vector.len(),
                });
            }
            if entries.insert(token.to_string(), vector).is_some() {
                return Err(EmbeddingError::DuplicateToken {
                    line: line_no,
                    token: token.to_string(),
                });
            }
        }
        match dimension {
            Some(dimension) => Ok(EmbeddingTable { dimension, entries }),
            None => Err(EmbeddingError::Empty),
        }
    }

    /// Writes the table in the same GloVe text format, tokens sorted, with
    /// shortest-round-trip decimal components.
    pub fn write(&self, path: &Path) -> Result<(), EmbeddingError> {
        let io_err = |source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut out = BufWriter::new(file);
        let mut tokens: Vec<&String> = self.entries.keys().collect();
        tokens.sort();
        for token in tokens {
            write!(out, "{token}").map_err(io_err)?;
            for c in &self.entries[token] {
                write!(out, " {c}").map_err(io_err)?;
            }
            writeln!(out).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(|v| v.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeature {
    pub vector: Vec<f64>,
    pub token_count: usize,
    pub oov_count: usize,
}

/// Lowercases and splits on every non-alphanumeric character; empty tokens
/// are dropped and order is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Joins the MDW's note texts in note-time order with single spaces.
pub fn concatenated_text(mdw: &ModelingDataWindow) -> String {
    let mut notes: Vec<_> = mdw.notes.iter().collect();
    notes.sort_by_key(|n| n.time);
    notes
        .iter()
        .map(|n| n.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Sums embedding vectors over the MDW's tokens. With `mean_pool` the sum
/// is divided by the in-vocabulary token count.
pub fn featurize_text(
    mdw: &ModelingDataWindow,
    table: &EmbeddingTable,
    mean_pool: bool,
) -> TextFeature {
    featurize_tokens(&tokenize(&concatenated_text(mdw)), table, mean_pool)
}

pub fn featurize_tokens(tokens: &[String], table: &EmbeddingTable, mean_pool: bool) -> TextFeature {
    let mut vector = vec![0.0; table.dimension()];
    let mut oov_count = 0usize;
    let mut in_vocab = 0usize;
    for token in tokens {
        match table.get(token) {
            Some(embedding) => {
                in_vocab += 1;
                for (acc, c) in vector.iter_mut().zip(embedding) {
                    *acc += c;
                }
            }
            None => oov_count += 1,
        }
    }
    if mean_pool && in_vocab > 0 {
        for c in &mut vector {
            *c /= in_vocab as f64;
        }
    }
    TextFeature {
        vector,
        token_count: tokens.len(),
        oov_count,
    }
}
