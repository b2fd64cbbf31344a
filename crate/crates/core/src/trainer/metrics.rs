use serde::{Deserialize, Serialize};

use crate::error::{I2pError, Result};

/// Detection metrics with fake (label 1) as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(skip)]
    pub scores: Vec<f64>,
}

/// Fraction of samples where `score >= 0.5` agrees with `label == 1`.
pub fn accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, y)| (**s >= 0.5) == (**y == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Mean precision at the rank of each positive. Scores are sorted
/// descending; equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(I2pError::SingleClass("average precision needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

pub fn compute_metrics(scores: &[f64], labels: &[u8]) -> Result<Metrics> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    Ok(Metrics {
        acc: accuracy(scores, labels)?,
        ap: average_precision(scores, labels)?,
        n_pos,
        n_neg: labels.len() - n_pos,
        scores: scores.to_vec(),
    })
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(I2pError::Empty("no scores to evaluate".into()));
    }
    if scores.len() != labels.len() {
        return Err(I2pError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(I2pError::InvalidArgument("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(I2pError::NonFinite("scores".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let ap = average_precision(&[0.9, 0.8, 0.3], &[1, 0, 1]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn separated_scores_are_perfect() {
        let m = compute_metrics(&[0.1, 0.2, 0.7, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!((m.acc, m.ap, m.n_pos, m.n_neg), (1.0, 1.0, 2, 2));
    }

    #[test]
    fn threshold_counts_half_as_fake() {
        let acc = accuracy(&[0.5; 4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(acc, 0.5);
        let acc = accuracy(&[0.5; 4], &[1, 1, 1, 0]).unwrap();
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn ties_keep_input_order() {
        // Positive first among ties ranks above the negative.
        assert_eq!(average_precision(&[0.5, 0.5], &[1, 0]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert!(accuracy(&[], &[]).is_err());
        assert!(average_precision(&[0.3, 0.2], &[0, 0]).is_err());
    }
}
