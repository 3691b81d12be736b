//! Answer-level and sample-level scoring.

use crate::error::{CoreError, Result};

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Fraction of requested words answered wrongly: rows are per-step scores,
/// `targets[t]` is `Some` exactly on answer steps.
pub fn wer(rows: &[Vec<f64>], targets: &[Option<usize>]) -> Result<f64> {
    assert_eq!(rows.len(), targets.len(), "sequence length mismatch");
    let mut asked = 0usize;
    let mut wrong = 0usize;
    for (row, t) in rows.iter().zip(targets) {
        if let Some(t) = t {
            asked += 1;
            wrong += (argmax(row) != *t) as usize;
        }
    }
    if asked == 0 {
        return Err(CoreError::Config("no answer steps to score".into()));
    }
    Ok(wrong as f64 / asked as f64)
}

/// Whether every requested word in one sample is answered correctly.
pub fn sample_correct(rows: &[Vec<f64>], targets: &[Option<usize>]) -> Result<bool> {
    Ok(wer(rows, targets)? == 0.0)
}

/// Fraction of fully correct samples.
pub fn accuracy(correct: &[bool]) -> Result<f64> {
    if correct.is_empty() {
        return Err(CoreError::Config("no samples to score".into()));
    }
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}
