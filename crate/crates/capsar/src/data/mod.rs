//! Corpus ingestion: raw annotated sentences → vocabulary-indexed examples
//! and padded batches.
//!
//! Two input formats produce the same [`RawSentence`] records: SemEval-2014
//! Task-4 XML ([`semeval`]) and a tab-separated line format ([`tsv`]) that
//! makes small hand-written datasets easy to author. Everything downstream
//! of [`RawSentence`] is shared.

pub mod embeddings;
pub mod semeval;
pub mod tsv;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Sentiment polarity as annotated in the corpora. `Conflict` survives
/// parsing (the filtering happens in [`to_examples`]) but has no class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Negative,
    Neutral,
    Positive,
    Conflict,
}

impl Polarity {
    pub fn parse(s: &str) -> Option<Polarity> {
        match s {
            "negative" => Some(Polarity::Negative),
            "neutral" => Some(Polarity::Neutral),
            "positive" => Some(Polarity::Positive),
            "conflict" => Some(Polarity::Conflict),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
            Polarity::Positive => "positive",
            Polarity::Conflict => "conflict",
        }
    }

    /// Fixed class order: negative 0, neutral 1, positive 2.
    /// `Conflict` has no class and maps to `None`.
    pub fn label(self) -> Option<usize> {
        match self {
            Polarity::Negative => Some(0),
            Polarity::Neutral => Some(1),
            Polarity::Positive => Some(2),
            Polarity::Conflict => None,
        }
    }

    pub fn from_label(label: usize) -> Option<Polarity> {
        match label {
            0 => Some(Polarity::Negative),
            1 => Some(Polarity::Neutral),
            2 => Some(Polarity::Positive),
            _ => None,
        }
    }
}

pub const CLASS_NAMES: [&str; 3] = ["negative", "neutral", "positive"];

/// One aspect-term annotation; `from`/`to` are character offsets into the
/// sentence text, end-exclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectAnnotation {
    pub term: String,
    pub polarity: Polarity,
    pub from: usize,
    pub to: usize,
}

/// A sentence with its aspect annotations, straight out of a parser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSentence {
    pub id: String,
    pub text: String,
    pub aspects: Vec<AspectAnnotation>,
}

/// Validates the offset/term invariants for one annotation. Shared by both
/// parsers so XML and TSV inputs are held to the same contract.
pub(crate) fn validate_aspect(id: &str, text: &str, aspect: &AspectAnnotation) -> Result<()> {
    let chars: Vec<char> = text.chars().collect();
    if aspect.from >= aspect.to || aspect.to > chars.len() {
        return Err(Error::Record {
            id: id.to_string(),
            msg: format!(
                "aspect \"{}\" has offsets {}..{} outside text of {} characters",
                aspect.term,
                aspect.from,
                aspect.to,
                chars.len()
            ),
        });
    }
    let span: String = chars[aspect.from..aspect.to].iter().collect();
    if !span.eq_ignore_ascii_case(&aspect.term) {
        return Err(Error::Record {
            id: id.to_string(),
            msg: format!(
                "aspect term \"{}\" does not match text span \"{span}\" at {}..{}",
                aspect.term, aspect.from, aspect.to
            ),
        });
    }
    Ok(())
}

/// A lowercased token and its character span in the original text
/// (end-exclusive), used to map annotation offsets to token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercases, splits on whitespace, and detaches leading/trailing ASCII
/// punctuation characters as their own tokens, so "Great screen!" becomes
/// ["great", "screen", "!"]. Interior punctuation (don't, wi-fi) stays put.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;

        // Peel punctuation off both ends of the whitespace-delimited word.
        let mut core_start = start;
        let mut core_end = end;
        let mut leading = Vec::new();
        while core_start < core_end && chars[core_start].is_ascii_punctuation() {
            leading.push(core_start);
            core_start += 1;
        }
        let mut trailing = Vec::new();
        while core_end > core_start && chars[core_end - 1].is_ascii_punctuation() {
            trailing.push(core_end - 1);
            core_end -= 1;
        }
        trailing.reverse();

        for p in leading {
            tokens.push(Token {
                text: chars[p].to_string(),
                start: p,
                end: p + 1,
            });
        }
        if core_start < core_end {
            let text: String = chars[core_start..core_end]
                .iter()
                .flat_map(|c| c.to_lowercase())
                .collect();
            tokens.push(Token {
                text,
                start: core_start,
                end: core_end,
            });
        }
        for p in trailing {
            tokens.push(Token {
                text: chars[p].to_string(),
                start: p,
                end: p + 1,
            });
        }
    }
    tokens
}

/// One training/evaluation unit: a sentence paired with a single aspect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    /// Vocabulary indices of the (possibly truncated) sentence tokens.
    pub token_ids: Vec<usize>,
    /// 1-based index of the aspect's first token within `token_ids`.
    pub aspect_first_index: usize,
    /// Vocabulary indices of the aspect's tokens (contiguous sub-span).
    pub aspect_token_ids: Vec<usize>,
    /// Class index: 0 negative, 1 neutral, 2 positive.
    pub label: usize,
}

impl Example {
    pub fn n(&self) -> usize {
        self.token_ids.len()
    }
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Word ↔ index bijection with two reserved slots: 0 PAD, 1 UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    words: Vec<String>,
}

impl Vocabulary {
    /// Builds from tokenized sentences; non-reserved words are numbered in
    /// first-occurrence order, which makes vocabulary construction
    /// deterministic for a fixed corpus order.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a RawSentence>) -> Vocabulary {
        let mut vocab = Vocabulary::empty();
        for sentence in sentences {
            for token in tokenize(&sentence.text) {
                vocab.intern(&token.text);
            }
        }
        vocab
    }

    pub fn empty() -> Vocabulary {
        let words = vec!["<pad>".to_string(), "<unk>".to_string()];
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary { index, words }
    }

    /// Restores a vocabulary from its non-reserved word list (checkpoint path).
    pub fn from_words(non_reserved: &[String]) -> Vocabulary {
        let mut vocab = Vocabulary::empty();
        for w in non_reserved {
            vocab.intern(w);
        }
        vocab
    }

    fn intern(&mut self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        let i = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), i);
        i
    }

    /// Index for a word, UNK when absent.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved slots always exist
    }

    /// Non-reserved words in index order (what checkpoints persist).
    pub fn non_reserved(&self) -> &[String] {
        &self.words[2..]
    }
}

/// Output of [`to_examples`]: the converted examples plus the count of
/// aspects that fell entirely beyond the truncation point.
#[derive(Debug, Clone)]
pub struct ExampleSet {
    pub examples: Vec<Example>,
    pub skipped_truncated: usize,
}

/// Expands sentences into one [`Example`] per (sentence, non-conflict
/// aspect) pair — each aspect of a sentence is trained separately.
/// Sentences are truncated to `t_max` tokens; an aspect whose first token
/// falls beyond the cut is skipped and counted.
pub fn to_examples(
    sentences: &[RawSentence],
    vocab: &Vocabulary,
    t_max: usize,
) -> Result<ExampleSet> {
    let mut examples = Vec::new();
    let mut skipped_truncated = 0;

    for sentence in sentences {
        let tokens = tokenize(&sentence.text);
        let kept = tokens.len().min(t_max);
        let token_ids: Vec<usize> = tokens[..kept].iter().map(|t| vocab.id(&t.text)).collect();
        if token_ids.is_empty() {
            continue;
        }

        for aspect in &sentence.aspects {
            let Some(label) = aspect.polarity.label() else {
                continue; // conflict-labeled aspects are dropped
            };
            let first = tokens
                .iter()
                .position(|t| t.start <= aspect.from && aspect.from < t.end);
            let last = tokens
                .iter()
                .position(|t| t.start < aspect.to && aspect.to - 1 < t.end);
            let (Some(first), Some(last)) = (first, last) else {
                return Err(Error::Record {
                    id: sentence.id.clone(),
                    msg: format!(
                        "aspect \"{}\" at {}..{} does not align with any token",
                        aspect.term, aspect.from, aspect.to
                    ),
                });
            };
            if first >= kept {
                skipped_truncated += 1;
                continue;
            }
            let last = last.min(kept - 1);
            examples.push(Example {
                token_ids: token_ids.clone(),
                aspect_first_index: first + 1,
                aspect_token_ids: token_ids[first..=last].to_vec(),
                label,
            });
        }
    }

    Ok(ExampleSet {
        examples,
        skipped_truncated,
    })
}

/// A padded mini-batch. Token ids are row-major `[len × t_max]`, padded
/// with PAD; true lengths ride alongside.
#[derive(Debug, Clone)]
pub struct Batch {
    pub token_ids: Vec<usize>,
    pub t_max: usize,
    pub examples: Vec<Example>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Padded id row for batch item `i`.
    pub fn padded_row(&self, i: usize) -> &[usize] {
        &self.token_ids[i * self.t_max..(i + 1) * self.t_max]
    }
}

/// Splits examples into batches of `batch_size` (final batch may be
/// smaller), optionally shuffling example order first with `rng`.
pub fn batch_iter(
    examples: &[Example],
    batch_size: usize,
    t_max: usize,
    rng: &mut Rng,
    shuffle: bool,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let mut token_ids = vec![PAD; chunk.len() * t_max];
        let mut items = Vec::with_capacity(chunk.len());
        for (row, &ei) in chunk.iter().enumerate() {
            let ex = &examples[ei];
            token_ids[row * t_max..row * t_max + ex.n()].copy_from_slice(&ex.token_ids);
            items.push(ex.clone());
        }
        batches.push(Batch {
            token_ids,
            t_max,
            examples: items,
        });
    }
    Ok(batches)
}
