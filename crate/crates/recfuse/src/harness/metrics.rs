//! Binary-classification metrics: rank-statistic AUC with half-weight ties,
//! clipped mean log loss, and thresholded accuracy.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("labels and scores differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("metric undefined: {0}")]
    Undefined(String),
}

/// Probability that a random positive outranks a random negative; ties count
/// one half. Computed from the rank statistic in O(n log n).
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64, MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), scores.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::Undefined(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    // average ranks over tied score groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1 + j) as f64) / 2.0; // ranks are 1-based
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    let n_neg_f = n_neg as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg_f))
}

/// Mean binary cross entropy with scores clipped into [1e-7, 1 - 1e-7].
pub fn logloss(labels: &[u8], scores: &[f64]) -> Result<f64, MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), scores.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Undefined("logloss of empty input".into()));
    }
    let sum: f64 = labels
        .iter()
        .zip(scores)
        .map(|(&y, &p)| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / labels.len() as f64)
}

/// Fraction of instances where 1[score >= threshold] equals the label.
pub fn accuracy(labels: &[u8], scores: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(labels.len(), scores.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Undefined("accuracy of empty input".into()));
    }
    let correct = labels
        .iter()
        .zip(scores)
        .filter(|(&y, &p)| u8::from(p >= threshold) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Brute-force pairwise AUC, kept as the oracle the fast path is checked
/// against.
pub fn auc_pairwise_oracle(labels: &[u8], scores: &[f64]) -> Result<f64, MetricsError> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::Undefined(
            "AUC needs both classes present".into(),
        ));
    }
    let mut wins = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (n_pos * n_neg) as f64)
}
