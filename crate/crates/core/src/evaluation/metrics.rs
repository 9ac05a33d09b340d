//! Ranking metrics over binary relevance.

use crate::error::{JnetError, Result};

fn require_relevant(rel: &[bool]) -> Result<()> {
    if rel.iter().any(|&r| r) {
        Ok(())
    } else {
        Err(JnetError::Invalid("ranking has no relevant items".into()))
    }
}

/// NDCG over the full list with gain `rel / log2(rank + 1)`.
pub fn ndcg(ranked: &[bool]) -> Result<f64> {
    require_relevant(ranked)?;
    let discount = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = ranked.iter().enumerate().filter(|(_, &x)| x).map(|(r, _)| discount(r)).sum();
    let ideal: f64 = (0..ranked.iter().filter(|&&x| x).count()).map(discount).sum();
    Ok(dcg / ideal)
}

/// Mean over relevant ranks r of precision at r.
pub fn average_precision(ranked: &[bool]) -> Result<f64> {
    require_relevant(ranked)?;
    let mut hits = 0usize;
    let mut total = 0.0;
    for (r, &x) in ranked.iter().enumerate() {
        if x {
            hits += 1;
            total += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(total / hits as f64)
}

pub fn mean_average_precision(lists: &[Vec<bool>]) -> Result<f64> {
    if lists.is_empty() {
        return Err(JnetError::Invalid("no rankings to average".into()));
    }
    let mut total = 0.0;
    for l in lists {
        total += average_precision(l)?;
    }
    Ok(total / lists.len() as f64)
}

/// Area under the ROC curve (Mann-Whitney, ties count one half). `None`
/// unless both classes are present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of midranks of the positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[start..=end].iter().filter(|&&i| labels[i]).count() as f64;
        start = end + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    // definitional oracles
    fn ndcg_oracle(rel: &[bool]) -> f64 {
        let mut dcg = 0.0;
        for r in 1..=rel.len() {
            if rel[r - 1] {
                dcg += 1.0 / ((r + 1) as f64).log2();
            }
        }
        let mut sorted = rel.to_vec();
        sorted.sort_by(|a, b| b.cmp(a));
        let mut idcg = 0.0;
        for r in 1..=sorted.len() {
            if sorted[r - 1] {
                idcg += 1.0 / ((r + 1) as f64).log2();
            }
        }
        dcg / idcg
    }

    fn ap_oracle(rel: &[bool]) -> f64 {
        let mut precisions = Vec::new();
        for r in 1..=rel.len() {
            if rel[r - 1] {
                let top = rel[..r].iter().filter(|&&x| x).count();
                precisions.push(top as f64 / r as f64);
            }
        }
        precisions.iter().sum::<f64>() / precisions.len() as f64
    }

    fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (a, &la) in labels.iter().enumerate() {
            for (b, &lb) in labels.iter().enumerate() {
                if la && !lb {
                    pairs += 1.0;
                    if scores[a] > scores[b] {
                        wins += 1.0;
                    } else if scores[a] == scores[b] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn spot_values() {
        assert_eq!(ndcg(&[true, true, false]).unwrap(), 1.0);
        assert_eq!(ndcg(&[false, true]).unwrap(), 1.0 / 3f64.log2());
        assert!((ndcg(&[false, true]).unwrap() - 0.6309).abs() < 1e-4);
        assert_eq!(average_precision(&[true, false, true]).unwrap(), (1.0 + 2.0 / 3.0) / 2.0);
        assert!((average_precision(&[true, false, true]).unwrap() - 0.8333).abs() < 1e-4);
        assert_eq!(mean_average_precision(&[vec![true, false], vec![true]]).unwrap(), 1.0);
        assert!(ndcg(&[false, false]).is_err());
        assert!(average_precision(&[]).is_err());
    }

    #[test]
    fn random_rankings_match_oracles() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lists = Vec::new();
        while lists.len() < 1000 {
            let n = rng.random_range(1..30);
            let rel: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            if !rel.iter().any(|&x| x) {
                continue;
            }
            assert!((ndcg(&rel).unwrap() - ndcg_oracle(&rel)).abs() < 1e-12);
            assert!((average_precision(&rel).unwrap() - ap_oracle(&rel)).abs() < 1e-12);
            lists.push(rel);
        }
        let map = lists.iter().map(|l| ap_oracle(l)).sum::<f64>() / 1000.0;
        assert!((mean_average_precision(&lists).unwrap() - map).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pair_count_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 2.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            match auc(&scores, &labels) {
                Some(a) => assert!((a - auc_oracle(&scores, &labels)).abs() < 1e-12),
                None => assert!(labels.iter().all(|&l| l) || labels.iter().all(|&l| !l)),
            }
        }
        assert_eq!(auc(&[1.0, 2.0], &[false, true]), Some(1.0));
        assert_eq!(auc(&[1.0, 1.0], &[false, true]), Some(0.5));
    }

    proptest! {
        #[test]
        fn metrics_lie_in_unit_interval(rel in proptest::collection::vec(any::<bool>(), 1..50)) {
            prop_assume!(rel.iter().any(|&x| x));
            let n = ndcg(&rel).unwrap();
            let a = average_precision(&rel).unwrap();
            prop_assert!((0.0..=1.0 + 1e-15).contains(&n));
            prop_assert!((0.0..=1.0 + 1e-15).contains(&a));
        }
    }
}
