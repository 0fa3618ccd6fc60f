//! Ranking metrics for link prediction.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Largest negative pool used for Hits@k.
pub const MAX_NEGATIVE_POOL: usize = 100_000;

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Domain(format!("{name} scores are empty")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation(format!("{name} scores contain NaN")));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ordered correctly, ties counting one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores("positive", pos)?;
    check_scores("negative", neg)?;
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of midranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let positives = all[i..j].iter().filter(|x| x.1).count();
        rank_sum += midrank * positives as f64;
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Percentage of positives scoring strictly above the `k`-th largest negative.
pub fn hits_at_k(pos: &[f64], neg_pool: &[f64], k: usize) -> Result<f64> {
    check_scores("positive", pos)?;
    check_scores("negative", neg_pool)?;
    if k == 0 || k > neg_pool.len() {
        return Err(Error::Domain(format!("k = {k} outside 1..={} negatives", neg_pool.len())));
    }
    let mut sorted = neg_pool.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k - 1];
    let hits = pos.iter().filter(|&&s| s > threshold).count();
    Ok(100.0 * hits as f64 / pos.len() as f64)
}

/// Negative scores used for Hits@k: all of them if at most
/// [`MAX_NEGATIVE_POOL`], otherwise a seeded sample of that size.
pub fn negative_pool(neg: &[f64], seed: u64) -> Vec<f64> {
    if neg.len() <= MAX_NEGATIVE_POOL {
        return neg.to_vec();
    }
    let mut idx: Vec<usize> = (0..neg.len()).collect();
    idx.partial_shuffle(&mut rng::stream(seed, "eval.negative_pool"), MAX_NEGATIVE_POOL);
    idx[..MAX_NEGATIVE_POOL].iter().map(|&i| neg[i]).collect()
}

/// Hits@k reported when a pool is smaller than `k`.
pub fn hits_at_k_or_nan(pos: &[f64], neg_pool: &[f64], k: usize) -> Result<f64> {
    if k > neg_pool.len() {
        return Ok(f64::NAN);
    }
    hits_at_k(pos, neg_pool, k)
}
