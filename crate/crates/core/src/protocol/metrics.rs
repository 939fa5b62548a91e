use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {s} is NaN")));
    }
    Ok(())
}

/// Twice the Mann–Whitney count: `2·#{pos > neg} + #{pos == neg}`, plus the class sizes.
fn mann_whitney_twice(scores: &[f64], labels: &[u8]) -> (u128, u64, u64) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut twice, mut neg_below, mut n_pos) = (0u128, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_tied, mut neg_tied) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos_tied += 1;
            } else {
                neg_tied += 1;
            }
            j += 1;
        }
        twice += u128::from(pos_tied) * (2 * u128::from(neg_below) + u128::from(neg_tied));
        neg_below += neg_tied;
        n_pos += pos_tied;
        i = j;
    }
    (twice, n_pos, neg_below)
}

/// ROC AUC as `P(s_pos > s_neg) + ½·P(s_pos = s_neg)`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (twice, n_pos, n_neg) = mann_whitney_twice(scores, labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!("AUC needs both classes ({n_pos} positives, {n_neg} negatives)")));
    }
    Ok(twice as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Average precision: mean over positives of the precision at their rank, ranking by
/// descending score with ties kept in input order.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut sum) = (0u64, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    if tp == 0 {
        return Err(Error::UndefinedMetric("PR-AUC needs at least one positive".into()));
    }
    Ok(sum / tp as f64)
}

/// Mean binary cross-entropy.
pub fn nll(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(probs, labels)?;
    if probs.is_empty() {
        return Err(Error::UndefinedMetric("NLL of an empty set".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Numeric(format!("probability {p} outside [0, 1]")));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    Ok(total / probs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

/// Position of `method` in the vanilla→oracle gap: vanilla maps to 0, oracle to 1.
pub fn relative_metric(method: f64, vanilla: f64, oracle: f64, orientation: Orientation) -> Result<f64> {
    if oracle == vanilla {
        return Err(Error::UndefinedMetric("oracle and vanilla coincide; relative metric undefined".into()));
    }
    let r = match orientation {
        Orientation::HigherIsBetter => (method - vanilla) / (oracle - vanilla),
        Orientation::LowerIsBetter => (vanilla - method) / (vanilla - oracle),
    };
    // avoid printing the vanilla anchor as -0
    Ok(r + 0.0)
}
