//! bAbI-format text ingestion: parsing, normalization, one-hot encoding.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{CoreError, Result};

use super::{Sample, Vocabulary, ANSWER_TOKEN};

/// One line of a story, as it will appear in the input stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawLine {
    Statement(String),
    Question { text: String, answers: Vec<String> },
}

/// One question with everything the reader saw before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSample {
    pub context: Vec<RawLine>,
    pub question: String,
    pub answers: Vec<String>,
}

/// Split a file of numbered stories into per-question samples. A line
/// numbered 1 opens a new story; question lines carry tab-separated answer
/// and supporting-fact fields (the latter are dropped).
pub fn parse_babi(path: &Path) -> Result<Vec<RawSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut story: Vec<RawLine> = Vec::new();
    let mut prev_no: Option<usize> = None;

    for (idx, line) in reader.lines().enumerate() {
        let file_line = idx + 1;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (no, rest) = line.split_once(' ').ok_or_else(|| CoreError::Parse {
            line: file_line,
            message: "expected a line number".into(),
        })?;
        let no: usize = no.parse().map_err(|_| CoreError::Parse {
            line: file_line,
            message: format!("bad line number {no:?}"),
        })?;
        if no == 1 {
            story.clear();
        } else if prev_no.map_or(true, |p| no != p + 1) {
            return Err(CoreError::Parse {
                line: file_line,
                message: format!("line number {no} does not continue the story"),
            });
        }
        prev_no = Some(no);

        if rest.contains('\t') {
            let mut parts = rest.split('\t');
            let text = parts.next().unwrap_or("").trim().to_string();
            let answer = parts.next().unwrap_or("").trim();
            if answer.is_empty() {
                return Err(CoreError::Parse {
                    line: file_line,
                    message: "question without an answer field".into(),
                });
            }
            let answers: Vec<String> =
                answer.split(',').map(|a| a.trim().to_lowercase()).collect();
            samples.push(RawSample {
                context: story.clone(),
                question: text.clone(),
                answers: answers.clone(),
            });
            story.push(RawLine::Question { text, answers });
        } else {
            story.push(RawLine::Statement(rest.trim().to_string()));
        }
    }
    Ok(samples)
}

/// Lowercase, split on whitespace, peel trailing punctuation (`?` and `!`
/// become their own tokens, `.` and `,` disappear), drop all-digit tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let lower = word.to_lowercase();
        let mut core = lower.as_str();
        let mut peeled = Vec::new();
        while let Some(stripped) = core.strip_suffix(['.', ',', '?', '!']) {
            peeled.push(core.as_bytes()[core.len() - 1] as char);
            core = stripped;
        }
        if !core.is_empty() && !core.bytes().all(|b| b.is_ascii_digit()) {
            out.push(core.to_string());
        }
        for ch in peeled.into_iter().rev() {
            if ch == '?' || ch == '!' {
                out.push(ch.to_string());
            }
        }
    }
    out
}

/// A line as the model reads it: question lines end in `?` followed by one
/// answer marker per answer word.
fn render_line(line: &RawLine) -> Vec<String> {
    match line {
        RawLine::Statement(text) => tokenize(text),
        RawLine::Question { text, answers } => {
            let mut toks = tokenize(text);
            toks.extend(answers.iter().map(|_| ANSWER_TOKEN.to_string()));
            toks
        }
    }
}

fn render_sample(raw: &RawSample) -> (Vec<String>, Vec<String>) {
    let mut tokens = Vec::new();
    let mut answers = Vec::new();
    for line in &raw.context {
        tokens.extend(render_line(line));
        if let RawLine::Question { answers: a, .. } = line {
            answers.extend(a.iter().cloned());
        }
    }
    tokens.extend(render_line(&RawLine::Question {
        text: raw.question.clone(),
        answers: raw.answers.clone(),
    }));
    answers.extend(raw.answers.iter().cloned());
    (tokens, answers)
}

/// Build the vocabulary (first-occurrence order after the reserved symbols)
/// and the index-space samples; exact repeats of the same context+question
/// are kept once.
pub fn preprocess_train(raw: &[RawSample], task: &str) -> (Vec<Sample>, Vocabulary) {
    let mut vocab = Vocabulary::with_reserved();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in raw {
        let (tokens, answers) = render_sample(r);
        if !seen.insert(tokens.join("\u{1f}")) {
            continue;
        }
        let token_ids: Vec<usize> = tokens.iter().map(|t| vocab.intern(t)).collect();
        let target_ids: Vec<usize> = answers.iter().map(|a| vocab.intern(a)).collect();
        let mask: Vec<bool> = tokens.iter().map(|t| t == ANSWER_TOKEN).collect();
        out.push(Sample {
            tokens: token_ids,
            targets: target_ids,
            mask,
            candidates: None,
            task: task.to_string(),
        });
    }
    (out, vocab)
}

/// Map held-out samples through an existing vocabulary; unknown tokens are
/// an error, duplicates are kept.
pub fn preprocess_eval(raw: &[RawSample], vocab: &Vocabulary, task: &str) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for r in raw {
        let (tokens, answers) = render_sample(r);
        let token_ids: Vec<usize> = tokens
            .iter()
            .map(|t| vocab.lookup(t))
            .collect::<Result<_>>()?;
        let target_ids: Vec<usize> = answers
            .iter()
            .map(|a| vocab.lookup(a))
            .collect::<Result<_>>()?;
        let mask: Vec<bool> = tokens.iter().map(|t| t == ANSWER_TOKEN).collect();
        out.push(Sample {
            tokens: token_ids,
            targets: target_ids,
            mask,
            candidates: None,
            task: task.to_string(),
        });
    }
    Ok(out)
}

/// One-hot rows plus aligned targets, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<Option<usize>>,
    pub mask: Vec<bool>,
}

pub fn encode(sample: &Sample, vocab: &Vocabulary) -> Result<Encoded> {
    sample.check(vocab)?;
    let rows = sample
        .tokens
        .iter()
        .map(|&t| {
            let mut row = vec![0.0; vocab.len()];
            row[t] = 1.0;
            row
        })
        .collect();
    Ok(Encoded {
        rows,
        targets: sample.aligned_targets(),
        mask: sample.mask.clone(),
    })
}

/// Inverse of [`encode`] up to the fields an encoding carries.
pub fn decode(enc: &Encoded) -> (Vec<usize>, Vec<usize>, Vec<bool>) {
    let tokens = enc
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect();
    let targets = enc.targets.iter().flatten().copied().collect();
    (tokens, targets, enc.mask.clone())
}
