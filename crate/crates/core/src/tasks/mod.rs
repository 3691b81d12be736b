//! Data plumbing: vocabulary, samples, corpus files, bAbI ingestion,
//! synthetic generators, and answer-level metrics.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub mod babi;
pub mod generate;
pub mod metrics;

pub use babi::{decode, encode, parse_babi, preprocess_eval, preprocess_train, tokenize, Encoded};
pub use generate::{
    copy_vocab, counting_heuristic, gen_copy, gen_induction, gen_qa, induction_answer,
    induction_vocab, qa_vocab, CopyConfig, InductionConfig, InductionMode, QaConfig,
};
pub use metrics::{accuracy, sample_correct, wer};

/// The model answers wherever this token appears in the input.
pub const ANSWER_TOKEN: &str = "-";
pub const QUERY_TOKEN: &str = "?";
pub const DELIM_TOKEN: &str = "!";

/// Dense token-index mapping. The three marker symbols always occupy the
/// first slots; words follow in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn with_reserved() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [QUERY_TOKEN, DELIM_TOKEN, ANSWER_TOKEN] {
            v.intern(t);
        }
        v
    }

    /// Index of `token`, adding it if new.
    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn lookup(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| CoreError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn answer_id(&self) -> usize {
        self.index[ANSWER_TOKEN]
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = CoreError;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CoreError::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        for t in [QUERY_TOKEN, DELIM_TOKEN, ANSWER_TOKEN] {
            if !index.contains_key(t) {
                return Err(CoreError::Config(format!("vocabulary is missing {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }
}

/// One training/evaluation sequence, already mapped to vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Input token ids; answer slots hold the `-` token.
    pub tokens: Vec<usize>,
    /// Expected token id per answer slot, in step order.
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
    /// Restricts prediction to a subset of the vocabulary when present.
    pub candidates: Option<Vec<usize>>,
    pub task: String,
}

impl Sample {
    /// Mask exactly on answer-marker steps, one target per masked step,
    /// ids inside the vocabulary.
    pub fn check(&self, vocab: &Vocabulary) -> Result<()> {
        if self.tokens.len() != self.mask.len() {
            return Err(CoreError::Config("mask length != token length".into()));
        }
        let answer = vocab.answer_id();
        let mut masked = 0;
        for (t, (&tok, &m)) in self.tokens.iter().zip(&self.mask).enumerate() {
            if tok >= vocab.len() {
                return Err(CoreError::UnknownToken(format!("#{tok}")));
            }
            if m != (tok == answer) {
                return Err(CoreError::Config(format!(
                    "step {t}: mask and answer marker disagree"
                )));
            }
            masked += m as usize;
        }
        if self.targets.len() != masked {
            return Err(CoreError::Config(format!(
                "{} targets for {masked} answer slots",
                self.targets.len()
            )));
        }
        for &t in self.targets.iter().chain(self.candidates.iter().flatten()) {
            if t >= vocab.len() {
                return Err(CoreError::UnknownToken(format!("#{t}")));
            }
        }
        Ok(())
    }

    /// Targets aligned to the full sequence: `Some` exactly on masked steps.
    pub fn aligned_targets(&self) -> Vec<Option<usize>> {
        let mut it = self.targets.iter().copied();
        self.mask
            .iter()
            .map(|&m| if m { it.next() } else { None })
            .collect()
    }
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, vocab)?;
    w.flush()?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
