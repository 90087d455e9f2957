//! Stratified train/val/test splits and few-shot subsampling.

use rand::seq::SliceRandom;

use super::Corpus;
use crate::error::{Error, Result};
use crate::util::derive_rng;

/// Disjoint user-id sets covering the corpus. Id lists are sorted; the split
/// is a pure function of (corpus, disease, ratios, seed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

fn label_of(corpus: &Corpus, disease: &str, user_idx: usize) -> Result<u8> {
    corpus.users[user_idx].label(disease).ok_or_else(|| {
        Error::Config(format!(
            "user `{}` has no label for disease `{disease}`",
            corpus.users[user_idx].user_id
        ))
    })
}

/// Split users into train/val/test, stratified by the disease label so the
/// positive rate of each part tracks the global rate within one user.
pub fn split_corpus(
    corpus: &Corpus,
    disease: &str,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitSpec> {
    let (rt, rv, rs) = ratios;
    if !(rt > 0.0 && rv >= 0.0 && rs > 0.0) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::BadParameter(format!(
            "split ratios must be positive and sum to 1, got ({rt}, {rv}, {rs})"
        )));
    }
    if corpus.users.len() < 5 {
        return Err(Error::Degenerate(format!(
            "need at least 5 users to split, got {}",
            corpus.users.len()
        )));
    }
    let mut strata: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for idx in 0..corpus.users.len() {
        let y = label_of(corpus, disease, idx)?;
        strata[y as usize].push(idx);
    }
    if strata[0].is_empty() || strata[1].is_empty() {
        return Err(Error::Degenerate(format!(
            "stratum empty for disease `{disease}`: {} positives, {} negatives",
            strata[1].len(),
            strata[0].len()
        )));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (stratum_idx, stratum) in strata.iter().enumerate() {
        let mut ids: Vec<&str> = stratum
            .iter()
            .map(|&i| corpus.users[i].user_id.as_str())
            .collect();
        let mut rng = derive_rng(seed, "split", stratum_idx as u64);
        ids.shuffle(&mut rng);
        let n = ids.len();
        let mut n_train = (n as f64 * rt).round() as usize;
        let mut n_val = (n as f64 * rv).round() as usize;
        // Rounding can overshoot by one on tiny strata; shrink val, then
        // train, so test keeps at least its rounded share.
        while n_train + n_val > n {
            if n_val > 0 {
                n_val -= 1;
            } else {
                n_train -= 1;
            }
        }
        train.extend(ids[..n_train].iter().map(|s| s.to_string()));
        val.extend(ids[n_train..n_train + n_val].iter().map(|s| s.to_string()));
        test.extend(ids[n_train + n_val..].iter().map(|s| s.to_string()));
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train,
        val,
        test,
        seed,
    })
}

/// Pick `n_subjects` users out of `train`: class-balanced for `n ≤ 10`
/// (positives get `n/2`, rounding down), label-proportional for larger `n`,
/// always at least one user of each class. Deterministic given seed.
pub fn fewshot_subset(
    corpus: &Corpus,
    disease: &str,
    train: &[String],
    n_subjects: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if n_subjects < 2 {
        return Err(Error::FewShot(format!(
            "n_subjects must be ≥ 2, got {n_subjects}"
        )));
    }
    if n_subjects > train.len() {
        return Err(Error::FewShot(format!(
            "n_subjects {n_subjects} exceeds train size {}",
            train.len()
        )));
    }
    let mut pos: Vec<&str> = Vec::new();
    let mut neg: Vec<&str> = Vec::new();
    for id in train {
        let user = corpus
            .user(id)
            .ok_or_else(|| Error::Config(format!("train id `{id}` not in corpus")))?;
        let y = user
            .label(disease)
            .ok_or_else(|| Error::Config(format!("user `{id}` has no label for `{disease}`")))?;
        if y == 1 {
            pos.push(id);
        } else {
            neg.push(id);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::FewShot(format!(
            "both classes must be present in train: {} positives, {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    let mut n_pos = if n_subjects <= 10 {
        n_subjects / 2
    } else {
        let frac = pos.len() as f64 / train.len() as f64;
        (n_subjects as f64 * frac).round() as usize
    };
    n_pos = n_pos.clamp(1, n_subjects - 1);
    // Respect availability while keeping the subset size exact.
    if n_pos > pos.len() {
        n_pos = pos.len();
    }
    let mut n_neg = n_subjects - n_pos;
    if n_neg > neg.len() {
        n_neg = neg.len();
        n_pos = n_subjects - n_neg;
    }
    if n_pos > pos.len() || n_pos == 0 || n_neg == 0 {
        return Err(Error::FewShot(format!(
            "cannot draw {n_subjects} subjects with both classes from {} positives and {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng_pos = derive_rng(seed, "fewshot", 0);
    let mut rng_neg = derive_rng(seed, "fewshot", 1);
    pos.shuffle(&mut rng_pos);
    neg.shuffle(&mut rng_neg);
    let mut subset: Vec<String> = pos[..n_pos]
        .iter()
        .chain(neg[..n_neg].iter())
        .map(|s| s.to_string())
        .collect();
    subset.sort_unstable();
    Ok(subset)
}
