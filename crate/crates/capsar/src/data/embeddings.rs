//! Pretrained word-embedding loading (GloVe-style text files) and the
//! aspect-embedding average.

use crate::data::{Example, Vocabulary, PAD, UNK};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// `|W| × D_x` embedding matrix. Row 0 belongs to PAD and is all zeros —
/// the trainer re-zeroes it after every optimizer step so padding never
/// acquires meaning.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    matrix: Tensor<f32>,
}

/// What [`load_embeddings`] found in the file.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    /// Non-reserved vocabulary words with a row in the file.
    pub covered: usize,
    /// Total non-reserved vocabulary words.
    pub total: usize,
    /// Words that appeared more than once (first occurrence kept).
    pub duplicates: usize,
}

impl CoverageReport {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.covered as f64 / self.total as f64
        }
    }
}

impl EmbeddingTable {
    /// All rows except PAD drawn uniform(−0.05, 0.05), in row order — the
    /// no-pretrained-file initialization.
    pub fn random(vocab_len: usize, dim: usize, rng: &mut Rng) -> EmbeddingTable {
        let mut data = vec![0.0f32; vocab_len * dim];
        for row in 1..vocab_len {
            for v in &mut data[row * dim..(row + 1) * dim] {
                *v = rng.uniform(-0.05, 0.05) as f32;
            }
        }
        EmbeddingTable {
            matrix: Tensor::new(vec![vocab_len, dim], data).expect("finite by construction"),
        }
    }

    pub fn from_tensor(matrix: Tensor<f32>) -> Result<EmbeddingTable> {
        if matrix.shape().len() != 2 {
            return Err(Error::Contract(format!(
                "embedding table must be rank 2, got {:?}",
                matrix.shape()
            )));
        }
        Ok(EmbeddingTable { matrix })
    }

    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.matrix.data()[i * d..(i + 1) * d]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.matrix
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.matrix
    }
}

/// Loads a GloVe-style text file: one `word v1 v2 … v_dim` entry per line,
/// whitespace-separated, optionally preceded by a `count dim` header line
/// (detected and skipped). In-vocabulary rows are copied; UNK and uncovered
/// words are drawn uniform(−0.05, 0.05) in vocabulary index order; PAD
/// stays zero.
pub fn load_embeddings(
    text: &str,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut Rng,
) -> Result<(EmbeddingTable, CoverageReport)> {
    let mut data = vec![0.0f32; vocab.len() * dim];
    let mut filled = vec![false; vocab.len()];
    let mut duplicates = 0usize;

    let mut lines = text.lines().enumerate().peekable();

    // Header detection: exactly two integer fields and nothing else.
    if let Some((_, first)) = lines.peek() {
        let fields: Vec<&str> = first.split_whitespace().collect();
        if fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok()) {
            lines.next();
        }
    }

    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-empty line has a first field");
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::Format(format!(
                "embedding line {line_no}: expected {dim} values for \"{word}\", found {}",
                values.len()
            )));
        }
        if !vocab.contains(word) {
            continue;
        }
        let id = vocab.id(word);
        if id == PAD || id == UNK {
            continue; // reserved rows never come from the file
        }
        if filled[id] {
            duplicates += 1;
            continue; // first occurrence wins
        }
        for (j, v) in values.iter().enumerate() {
            data[id * dim + j] = v.parse::<f32>().map_err(|_| {
                Error::Format(format!(
                    "embedding line {line_no}: non-numeric value {v:?} for \"{word}\""
                ))
            })?;
        }
        filled[id] = true;
    }

    // UNK and every uncovered word get random rows, drawn in index order so
    // the result is a pure function of (file, vocab, seed).
    for id in 1..vocab.len() {
        if id != UNK && filled[id] {
            continue;
        }
        for v in &mut data[id * dim..(id + 1) * dim] {
            *v = rng.uniform(-0.05, 0.05) as f32;
        }
    }

    let covered = filled.iter().filter(|&&f| f).count();
    let report = CoverageReport {
        covered,
        total: vocab.len() - 2,
        duplicates,
    };
    let matrix = Tensor::new(vec![vocab.len(), dim], data)
        .map_err(|e| Error::Format(format!("embedding file contains non-finite values: {e}")))?;
    Ok((EmbeddingTable { matrix }, report))
}

/// Mean of the aspect tokens' current embedding rows. The result is a
/// constant in the loss — no gradient flows back through it — so it is
/// materialized as a plain tensor, not a tape node.
pub fn aspect_embedding(example: &Example, table: &EmbeddingTable) -> Result<Tensor<f32>> {
    if example.aspect_token_ids.is_empty() {
        return Err(Error::Contract(
            "aspect_embedding requires a non-empty aspect".into(),
        ));
    }
    let dim = table.dim();
    let mut mean = vec![0.0f32; dim];
    for &id in &example.aspect_token_ids {
        for (m, &v) in mean.iter_mut().zip(table.row(id)) {
            *m += v;
        }
    }
    let count = example.aspect_token_ids.len() as f32;
    for m in &mut mean {
        *m /= count;
    }
    Tensor::new(vec![dim], mean)
}
