use crate::error::{Error, Result};

/// Probability that a random OOD score exceeds a random ID score, ties
/// counting one half. OOD is the positive class.
///
/// Sorts the pooled scores once and counts, per tie group, the ID scores
/// strictly below it; all sums are exact half-integers.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    let (twice_wins, pairs) = auroc_counts(id_scores, ood_scores)?;
    Ok(twice_wins as f64 / (2 * pairs) as f64)
}

/// `(2 · wins + ties, pairs)` as exact integers.
pub fn auroc_counts(id_scores: &[f64], ood_scores: &[f64]) -> Result<(u128, u128)> {
    check(id_scores, ood_scores)?;
    let mut pooled: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    // `twice_wins` counts 2 per win and 1 per tie to stay in integers.
    let mut twice_wins: u128 = 0;
    let mut id_below: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        let (mut id_here, mut ood_here) = (0u128, 0u128);
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            if pooled[j].1 {
                ood_here += 1;
            } else {
                id_here += 1;
            }
            j += 1;
        }
        twice_wins += ood_here * (2 * id_below + id_here);
        id_below += id_here;
        i = j;
    }
    Ok((twice_wins, (id_scores.len() as u128) * (ood_scores.len() as u128)))
}

/// O(m·n) pair counting, with the same exact rational evaluated the same way.
pub fn auroc_brute_force(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check(id_scores, ood_scores)?;
    let mut twice_wins: u128 = 0;
    for &o in ood_scores {
        for &s in id_scores {
            if o > s {
                twice_wins += 2;
            } else if o == s {
                twice_wins += 1;
            }
        }
    }
    let pairs = (id_scores.len() as u128) * (ood_scores.len() as u128);
    Ok(twice_wins as f64 / (2 * pairs) as f64)
}

fn check(id_scores: &[f64], ood_scores: &[f64]) -> Result<()> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::contract("AUROC needs non-empty ID and OOD score lists"));
    }
    if id_scores.iter().chain(ood_scores).any(|s| !s.is_finite()) {
        return Err(Error::contract("AUROC scores must be finite"));
    }
    Ok(())
}
