//! Ranking evaluation under the sampled leave-one-out protocol: HR@K and
//! NDCG@K over lists of one held-out item plus sampled negatives.
//!
//! Ordering is total and deterministic: descending score, ties broken by
//! ascending item id.

use rayon::prelude::*;

use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{predict, ClientModel};
use crate::rng;

/// 1-based position of the test item under the deterministic sort.
pub fn rank_of_test(scored: &[(u32, f64)], test_item: u32) -> Result<usize> {
    let (_, test_score) = scored
        .iter()
        .find(|(item, _)| *item == test_item)
        .ok_or(Error::TestItemMissing { item: test_item })?;
    let mut rank = 1;
    for &(item, score) in scored {
        if score > *test_score || (score == *test_score && item < test_item) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// 1 iff the test item lands in the top K.
pub fn hit_ratio_at_k(rank: usize, k: usize) -> u32 {
    debug_assert!(rank >= 1 && k >= 1);
    u32::from(rank <= k)
}

/// 1/log2(rank+1) inside the top K, 0 outside; the single-relevant-item
/// ideal DCG is 1.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    debug_assert!(rank >= 1 && k >= 1);
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Score one user's candidate list with that user's model and rank the
/// target (the first candidate).
fn user_metrics(model: &ClientModel, candidates: &[u32], k: usize) -> Result<(u32, f64)> {
    let target = candidates[0];
    let mut scored = Vec::with_capacity(candidates.len());
    for &item in candidates {
        let score = predict(model, item as usize)?;
        if !score.is_finite() {
            return Err(Error::NonFiniteScore { item });
        }
        scored.push((item, score));
    }
    let rank = rank_of_test(&scored, target)?;
    Ok((hit_ratio_at_k(rank, k), ndcg_at_k(rank, k)))
}

/// Mean HR@K and NDCG@K over users, each user scored by its own model on a
/// fixed candidate list whose first entry is the held-out target. Values are
/// reported in 1e-2 units (percent).
pub fn evaluate_with_candidates(
    models: &[ClientModel],
    candidates: &[Vec<u32>],
    k: usize,
) -> Result<(f64, f64)> {
    assert_eq!(models.len(), candidates.len());
    let per_user: Vec<(u32, f64)> = models
        .par_iter()
        .zip(candidates.par_iter())
        .map(|(model, cands)| user_metrics(model, cands, k))
        .collect::<Result<_>>()?;
    let n = per_user.len() as f64;
    let hr = per_user.iter().map(|&(h, _)| h as f64).sum::<f64>() / n;
    let ndcg = per_user.iter().map(|&(_, nd)| nd).sum::<f64>() / n;
    Ok((hr * 100.0, ndcg * 100.0))
}

/// Evaluate every user's model on its test item among `n_negatives` sampled
/// candidates (candidate seeds derive from `(seed, user)`), in 1e-2 units.
pub fn evaluate_all(
    models: &[ClientModel],
    dataset: &SplitDataset,
    k: usize,
    n_negatives: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let candidates = test_candidates(dataset, n_negatives, seed)?;
    evaluate_with_candidates(models, &candidates, k)
}

/// Per-user test candidate lists, fixed for the whole experiment.
pub fn test_candidates(
    dataset: &SplitDataset,
    n_negatives: usize,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    (0..dataset.n_users as u32)
        .map(|u| {
            let mut rng = rng::stream(seed, &[rng::tag::EVAL_TEST, u as u64]);
            dataset.eval_candidates(u, n_negatives, &mut rng)
        })
        .collect()
}

/// Per-user validation candidate lists, fixed for the whole experiment.
pub fn validation_candidates(
    dataset: &SplitDataset,
    n_negatives: usize,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    (0..dataset.n_users as u32)
        .map(|u| {
            let mut rng = rng::stream(seed, &[rng::tag::EVAL_VAL, u as u64]);
            dataset.validation_candidates(u, n_negatives, &mut rng)
        })
        .collect()
}
