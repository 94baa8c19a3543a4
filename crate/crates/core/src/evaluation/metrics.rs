//! Rank-truncated metrics for single-positive binary relevance.
//!
//! A rank is 1-based; `None` means the relevant document was not retrieved.

use crate::error::{Error, Result};

pub const CUTOFF: usize = 10;

fn check(ranks: &[Option<usize>]) -> Result<()> {
    if ranks.iter().any(|r| *r == Some(0)) {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    Ok(())
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn reciprocal_rank_at_10(rank: Option<usize>) -> f64 {
    match rank {
        Some(r) if r <= CUTOFF => 1.0 / r as f64,
        _ => 0.0,
    }
}

pub fn dcg_at_10(rank: Option<usize>) -> f64 {
    match rank {
        Some(r) if r <= CUTOFF => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

pub fn mrr_at_10(ranks: &[Option<usize>]) -> Result<f64> {
    check(ranks)?;
    Ok(mean(ranks.iter().map(|r| reciprocal_rank_at_10(*r)).sum(), ranks.len()))
}

/// With one positive per query the ideal DCG is 1.
pub fn ndcg_at_10(ranks: &[Option<usize>]) -> Result<f64> {
    check(ranks)?;
    Ok(mean(ranks.iter().map(|r| dcg_at_10(*r)).sum(), ranks.len()))
}

pub fn hit_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    let hits = ranks.iter().filter(|r| matches!(r, Some(x) if *x >= 1 && *x <= k)).count();
    mean(hits as f64, ranks.len())
}

/// 1-based rank of `target` when candidates are sorted by descending score
/// with ties broken by ascending id.
pub fn rank_of(scores: &[f64], ids: &[String], target: usize) -> usize {
    let s = scores[target];
    let id = &ids[target];
    1 + scores
        .iter()
        .zip(ids)
        .filter(|(x, i)| **x > s || (**x == s && *i < id))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!((mrr_at_10(&[Some(1), Some(2), Some(11)]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mrr_at_10(&[Some(1); 4]).unwrap(), 1.0);
        assert_eq!(ndcg_at_10(&[Some(1)]).unwrap(), 1.0);
        assert_eq!(ndcg_at_10(&[Some(3)]).unwrap(), 0.5);
        assert_eq!(ndcg_at_10(&[Some(11)]).unwrap(), 0.0);
        assert_eq!(hit_at_k(&[Some(1), Some(4)], 3), 0.5);
        assert_eq!(hit_at_k(&[Some(10)], 10), 1.0);
        assert_eq!(hit_at_k(&[Some(1), Some(2), None], 1), 1.0 / 3.0);
        assert!(mrr_at_10(&[Some(0)]).is_err());
        assert!(ndcg_at_10(&[Some(0)]).is_err());
        assert_eq!(mrr_at_10(&[]).unwrap(), 0.0);
    }

    #[test]
    fn rank_tie_break() {
        let ids: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let scores = [0.5, 0.5, 0.9];
        assert_eq!(rank_of(&scores, &ids, 2), 1);
        assert_eq!(rank_of(&scores, &ids, 1), 2);
        assert_eq!(rank_of(&scores, &ids, 0), 3);
    }
}
