//! Cloze-style MRC examples and their on-disk format.
//!
//! A dataset file holds one JSON record per line: `{id, passage, query,
//! candidates, answers}`. The query contains the literal `@placeholder`
//! exactly once; candidate spans are 0-based inclusive *token* offsets into
//! the tokenized passage. The loader validates every invariant and reports
//! the first violation together with the offending example id.

use crate::text::{tokenize, Annotator, Segment, Token};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use thiserror::Error;

pub const PLACEHOLDER: &str = "@placeholder";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("example {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// The serialized form of one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: String,
    pub passage: String,
    pub query: String,
    pub candidates: Vec<CandidateSpan>,
    pub answers: Vec<String>,
}

/// A validated, tokenized example ready for the model.
#[derive(Clone, Debug)]
pub struct MrcExample {
    pub id: String,
    pub query_tokens: Vec<Token>,
    pub passage_tokens: Vec<Token>,
    /// Inclusive token spans into the passage.
    pub candidates: Vec<(usize, usize)>,
    pub answers: Vec<String>,
}

impl MrcExample {
    pub fn passage_len(&self) -> usize {
        self.passage_tokens.len()
    }

    pub fn span_text(&self, start: usize, end: usize) -> String {
        self.passage_tokens[start..=end]
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Candidate indices whose normalized text matches a normalized gold
    /// answer; these are the supervision targets.
    pub fn gold_candidate_indices(&self) -> Vec<usize> {
        let golds: Vec<String> =
            self.answers.iter().map(|a| crate::metrics::normalize_answer(a)).collect();
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| {
                let text = crate::metrics::normalize_answer(&self.span_text(s, e));
                golds.iter().any(|g| *g == text)
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// Tokenizes a query, keeping `@placeholder` (even with attached
/// punctuation) as a single token.
pub fn tokenize_query(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if let Some(stripped) = placeholder_chunk(chunk) {
            out.extend(stripped.0);
            out.push(PLACEHOLDER.to_string());
            out.extend(stripped.1);
        } else {
            out.extend(tokenize(chunk));
        }
    }
    out
}

/// Splits a chunk of the form `punct* @placeholder punct*`.
fn placeholder_chunk(chunk: &str) -> Option<(Vec<String>, Vec<String>)> {
    let idx = chunk.find(PLACEHOLDER)?;
    let (before, rest) = chunk.split_at(idx);
    let after = &rest[PLACEHOLDER.len()..];
    let ann = Annotator::default();
    if !before.chars().all(|c| ann.is_punctuation(&c.to_string())) {
        return None;
    }
    if !after.chars().all(|c| ann.is_punctuation(&c.to_string())) {
        return None;
    }
    Some((
        before.chars().map(|c| c.to_string()).collect(),
        after.chars().map(|c| c.to_string()).collect(),
    ))
}

impl ExampleRecord {
    /// Validates and tokenizes. The annotator fills lemmas and flags; the
    /// placeholder token is neither a stopword nor punctuation.
    pub fn into_example(self, ann: &Annotator) -> Result<MrcExample, DatasetError> {
        let invalid = |reason: String| DatasetError::Invalid { id: self.id.clone(), reason };
        let query_surfaces = tokenize_query(&self.query);
        let placeholder_count = query_surfaces.iter().filter(|s| *s == PLACEHOLDER).count();
        if placeholder_count != 1 {
            return Err(invalid(format!(
                "query must contain exactly one {PLACEHOLDER}, found {placeholder_count}"
            )));
        }
        let query_tokens: Vec<Token> = query_surfaces
            .iter()
            .enumerate()
            .map(|(pos, s)| {
                if s == PLACEHOLDER {
                    Token {
                        surface: PLACEHOLDER.to_string(),
                        lemma: PLACEHOLDER.to_string(),
                        is_stop: false,
                        is_punct: false,
                        segment: Segment::Query,
                        position: pos,
                    }
                } else {
                    ann.token(s, Segment::Query, pos)
                }
            })
            .collect();
        let passage_tokens = ann.annotate(&self.passage, Segment::Passage);
        if passage_tokens.is_empty() {
            return Err(invalid("passage has no tokens".to_string()));
        }
        if self.answers.is_empty() {
            return Err(invalid("answers must be non-empty".to_string()));
        }
        let n = passage_tokens.len();
        let mut candidates = Vec::with_capacity(self.candidates.len());
        for c in &self.candidates {
            if c.start > c.end || c.end >= n {
                return Err(invalid(format!(
                    "candidate span ({}, {}) out of range for {n} passage tokens",
                    c.start, c.end
                )));
            }
            let text: String = passage_tokens[c.start..=c.end]
                .iter()
                .map(|t| t.surface.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            if text != c.text {
                return Err(invalid(format!(
                    "candidate text {:?} does not match passage span {:?}",
                    c.text, text
                )));
            }
            candidates.push((c.start, c.end));
        }
        Ok(MrcExample {
            id: self.id,
            query_tokens,
            passage_tokens,
            candidates,
            answers: self.answers,
        })
    }
}

pub fn save_records<W: Write>(records: &[ExampleRecord], mut w: W) -> Result<(), DatasetError> {
    for record in records {
        serde_json::to_writer(&mut w, record)
            .map_err(|source| DatasetError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_records<R: BufRead>(r: R) -> Result<Vec<ExampleRecord>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExampleRecord = serde_json::from_str(&line)
            .map_err(|source| DatasetError::Json { line: idx + 1, source })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads and validates a whole dataset file.
pub fn load_examples<R: BufRead>(r: R, ann: &Annotator) -> Result<Vec<MrcExample>, DatasetError> {
    load_records(r)?.into_iter().map(|rec| rec.into_example(ann)).collect()
}

pub fn load_examples_path(path: &std::path::Path) -> Result<Vec<MrcExample>, DatasetError> {
    let file = std::fs::File::open(path)?;
    load_examples(std::io::BufReader::new(file), &Annotator::default())
}

/// Token vocabulary over lowercased surfaces; id 0 is the unknown token and
/// id 1 the query/passage separator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

pub const UNK_ID: u32 = 0;
pub const SEP_ID: u32 = 1;

impl Vocab {
    pub fn build<'a>(examples: impl Iterator<Item = &'a MrcExample>) -> Vocab {
        let mut vocab = Vocab { words: vec!["<unk>".into(), "<sep>".into()], index: HashMap::new() };
        for example in examples {
            for tok in example.query_tokens.iter().chain(&example.passage_tokens) {
                let key = tok.surface.to_lowercase();
                if !vocab.index.contains_key(&key) && key != "<unk>" && key != "<sep>" {
                    vocab.index.insert(key.clone(), vocab.words.len() as u32);
                    vocab.words.push(key);
                }
            }
        }
        vocab.rebuild_index();
        vocab
    }

    fn rebuild_index(&mut self) {
        self.index =
            self.words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
    }

    /// Restores the lookup index after deserialization.
    pub fn restored(mut self) -> Vocab {
        self.rebuild_index();
        self
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Unknown surfaces map to [`UNK_ID`], never an error.
    pub fn id_of(&self, surface: &str) -> u32 {
        self.index.get(&surface.to_lowercase()).copied().unwrap_or(UNK_ID)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}
