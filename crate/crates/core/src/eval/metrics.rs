//! Classification metrics: confusion counts, precision/recall/F1 from hard
//! decisions, and rank-based AUC (with tie averaging) from scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics over one evaluation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// True when the set had a single class and AUC defaulted to 0.5.
    pub auc_degenerate: bool,
}

/// AUC as the Mann–Whitney rank statistic with tie averaging. `None` when a
/// class is absent. Exactly equals brute-force pairwise comparison.
pub fn auc_rank(scores: &[(f64, u8)]) -> Option<f64> {
    let n_pos = scores.iter().filter(|(_, y)| *y == 1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, u8)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let ties_pos = sorted[i..j].iter().filter(|(_, y)| *y == 1).count();
        pos_rank_sum += avg_rank * ties_pos as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Independent AUC oracle: average over all (positive, negative) pairs of
/// win=1 / tie=0.5 / loss=0.
pub fn auc_bruteforce(scores: &[(f64, u8)]) -> Option<f64> {
    let positives: Vec<f64> = scores.iter().filter(|(_, y)| *y == 1).map(|(s, _)| *s).collect();
    let negatives: Vec<f64> = scores.iter().filter(|(_, y)| *y == 0).map(|(s, _)| *s).collect();
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for p in &positives {
        for n in &negatives {
            total += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(total / (positives.len() * negatives.len()) as f64)
}

/// Compute all metrics: decisions feed the confusion matrix, scores feed
/// AUC. Both lists describe the same users in the same order.
pub fn compute_metrics(decisions: &[(u8, u8)], scores: &[(f64, u8)]) -> Result<Metrics> {
    if decisions.is_empty() || scores.is_empty() {
        return Err(Error::Empty("no predictions to evaluate".into()));
    }
    if decisions.len() != scores.len() {
        return Err(Error::Ragged(format!(
            "{} decisions but {} scores",
            decisions.len(),
            scores.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for &(pred, label) in decisions {
        match (pred, label) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let (auc, auc_degenerate) = match auc_rank(scores) {
        Some(a) => (a, false),
        None => {
            log::warn!("AUC is undefined on a single-class set; reporting 0.5");
            (0.5, true)
        }
    };
    Ok(Metrics {
        auc,
        f1,
        precision,
        recall,
        tp,
        fp,
        fn_,
        tn,
        auc_degenerate,
    })
}
