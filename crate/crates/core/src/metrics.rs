//! Multi-label evaluation metrics.
//!
//! Label ranks are positions in descending score order starting at 1; equal
//! scores rank the lower label index first. Ranking-based metrics skip rows
//! that have no relevant label (ranking loss also skips rows with no
//! irrelevant label) and report how many were skipped.

use serde::{Deserialize, Serialize};

use crate::error::{PmlError, Result};
use crate::linalg::Mat;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hamming_loss: f64,
    pub ranking_loss: f64,
    pub one_error: f64,
    pub coverage: f64,
    pub average_precision: f64,
    pub n: usize,
    pub c: usize,
    /// Rows without any relevant label (excluded from ranking metrics).
    pub skipped_no_relevant: usize,
    /// Rows excluded from ranking loss (no relevant or no irrelevant label).
    pub skipped_ranking_loss: usize,
}

/// Metric names as used on the command line and in reports.
pub const METRIC_NAMES: [&str; 5] = [
    "hamming_loss",
    "ranking_loss",
    "one_error",
    "coverage",
    "average_precision",
];

impl EvalReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "hamming_loss" => Some(self.hamming_loss),
            "ranking_loss" => Some(self.ranking_loss),
            "one_error" => Some(self.one_error),
            "coverage" => Some(self.coverage),
            "average_precision" => Some(self.average_precision),
            _ => None,
        }
    }

    /// Whether larger values are better for `metric`.
    pub fn higher_is_better(metric: &str) -> bool {
        metric == "average_precision"
    }
}

fn check_shapes(a: &Mat, truth: &Mat) -> Result<()> {
    if a.shape() != truth.shape() {
        return Err(PmlError::invalid(format!(
            "shape mismatch: {}x{} vs truth {}x{}",
            a.nrows(),
            a.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    Ok(())
}

/// 1-based rank of every label in row `i`.
fn ranks(scores: &Mat, i: usize) -> Vec<usize> {
    let c = scores.ncols();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| scores[(i, b)].total_cmp(&scores[(i, a)]).then(a.cmp(&b)));
    let mut rank = vec![0; c];
    for (pos, &j) in order.iter().enumerate() {
        rank[j] = pos + 1;
    }
    rank
}

fn relevant(truth: &Mat, i: usize) -> Vec<usize> {
    (0..truth.ncols())
        .filter(|&j| truth[(i, j)] > 0.5)
        .collect()
}

fn mean_or_zero(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn hamming_loss(pred: &Mat, truth: &Mat) -> Result<f64> {
    check_shapes(pred, truth)?;
    let total = pred.nrows() * pred.ncols();
    let wrong = pred
        .iter()
        .zip(truth.iter())
        .filter(|(p, t)| (**p > 0.5) != (**t > 0.5))
        .count();
    Ok(mean_or_zero(wrong as f64, total))
}

pub fn ranking_loss(scores: &Mat, truth: &Mat) -> Result<f64> {
    Ok(ranking_loss_counted(scores, truth)?.0)
}

fn ranking_loss_counted(scores: &Mat, truth: &Mat) -> Result<(f64, usize)> {
    check_shapes(scores, truth)?;
    let c = scores.ncols();
    let mut sum = 0.0;
    let mut used = 0;
    for i in 0..scores.nrows() {
        let rel = relevant(truth, i);
        let irr: Vec<usize> = (0..c).filter(|j| !rel.contains(j)).collect();
        if rel.is_empty() || irr.is_empty() {
            continue;
        }
        let bad = rel
            .iter()
            .flat_map(|&r| irr.iter().map(move |&q| (r, q)))
            .filter(|&(r, q)| scores[(i, r)] <= scores[(i, q)])
            .count();
        sum += bad as f64 / (rel.len() * irr.len()) as f64;
        used += 1;
    }
    Ok((mean_or_zero(sum, used), scores.nrows() - used))
}

pub fn one_error(scores: &Mat, truth: &Mat) -> Result<f64> {
    check_shapes(scores, truth)?;
    let mut miss = 0.0;
    let mut used = 0;
    for i in 0..scores.nrows() {
        let rel = relevant(truth, i);
        if rel.is_empty() {
            continue;
        }
        let rank = ranks(scores, i);
        let top = (0..scores.ncols()).find(|&j| rank[j] == 1).unwrap_or(0);
        if !rel.contains(&top) {
            miss += 1.0;
        }
        used += 1;
    }
    Ok(mean_or_zero(miss, used))
}

/// Normalized by `c`, so the value lies in `[0, (c-1)/c]`.
pub fn coverage(scores: &Mat, truth: &Mat) -> Result<f64> {
    check_shapes(scores, truth)?;
    let c = scores.ncols();
    let mut sum = 0.0;
    let mut used = 0;
    for i in 0..scores.nrows() {
        let rel = relevant(truth, i);
        if rel.is_empty() {
            continue;
        }
        let rank = ranks(scores, i);
        let worst = rel.iter().map(|&j| rank[j]).max().unwrap_or(1);
        sum += (worst - 1) as f64 / c as f64;
        used += 1;
    }
    Ok(mean_or_zero(sum, used))
}

pub fn average_precision(scores: &Mat, truth: &Mat) -> Result<f64> {
    check_shapes(scores, truth)?;
    let mut sum = 0.0;
    let mut used = 0;
    for i in 0..scores.nrows() {
        let rel = relevant(truth, i);
        if rel.is_empty() {
            continue;
        }
        let rank = ranks(scores, i);
        let prec: f64 = rel
            .iter()
            .map(|&y| {
                let above = rel.iter().filter(|&&z| rank[z] <= rank[y]).count();
                above as f64 / rank[y] as f64
            })
            .sum();
        sum += prec / rel.len() as f64;
        used += 1;
    }
    Ok(mean_or_zero(sum, used))
}

/// Entry is 1 iff the score is strictly above the threshold.
pub fn threshold_scores(scores: &Mat, threshold: f64) -> Mat {
    scores.map(|s| if s > threshold { 1.0 } else { 0.0 })
}

pub fn evaluate_all(scores: &Mat, truth: &Mat, threshold: f64) -> Result<EvalReport> {
    check_shapes(scores, truth)?;
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(PmlError::invalid("scores contain non-finite values"));
    }
    let pred = threshold_scores(scores, threshold);
    let (rl, skipped_rl) = ranking_loss_counted(scores, truth)?;
    let skipped_no_relevant = (0..truth.nrows())
        .filter(|&i| relevant(truth, i).is_empty())
        .count();
    Ok(EvalReport {
        hamming_loss: hamming_loss(&pred, truth)?,
        ranking_loss: rl,
        one_error: one_error(scores, truth)?,
        coverage: coverage(scores, truth)?,
        average_precision: average_precision(scores, truth)?,
        n: scores.nrows(),
        c: scores.ncols(),
        skipped_no_relevant,
        skipped_ranking_loss: skipped_rl,
    })
}
