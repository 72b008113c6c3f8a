use std::collections::BTreeMap;

use crate::env::HistoryKey;
use crate::error::{invalid, Result};
use crate::math::entropy;
use crate::policy::TabularHistoryPolicy;

/// Mean cross-entropy `−(1/n) Σ log π(a|h)` of a policy on labelled histories.
pub fn cross_entropy(policy: &TabularHistoryPolicy, labels: &[(HistoryKey, usize)]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    -labels.iter().map(|(h, a)| policy.log_prob(h, *a)).sum::<f64>() / labels.len() as f64
}

/// `min_π (1/N) Σ_i ℓ_i(π)` over tabular policies with the given window,
/// where `ℓ_i` is the mean cross-entropy on round `i`. Empty rounds are
/// skipped. The minimum is the weighted entropy of the pooled labels.
pub fn best_in_hindsight(rounds: &[Vec<(HistoryKey, usize)>], num_actions: usize, truncation_window: usize) -> f64 {
    let live: Vec<_> = rounds.iter().filter(|r| !r.is_empty()).collect();
    if live.is_empty() {
        return 0.0;
    }
    let mut weights: BTreeMap<HistoryKey, Vec<f64>> = BTreeMap::new();
    for round in &live {
        let w = 1.0 / (live.len() * round.len()) as f64;
        for (h, a) in round.iter() {
            weights.entry(h.truncated(truncation_window)).or_insert_with(|| vec![0.0; num_actions])[*a] += w;
        }
    }
    weights
        .values()
        .map(|row| {
            let total: f64 = row.iter().sum();
            total * entropy(&row.iter().map(|x| x / total).collect::<Vec<_>>())
        })
        .sum()
}

/// Average regret `(1/N) Σ_i ℓ_i(played_i) − min_π (1/N) Σ_i ℓ_i(π)`.
///
/// `played[i]` is the policy in force when round `i`'s labels arrived, i.e.
/// the policy whose rollouts produced them. All policies must share one
/// truncation window. Empty rounds are skipped.
pub fn measured_regret(rounds: &[Vec<(HistoryKey, usize)>], played: &[&TabularHistoryPolicy]) -> Result<f64> {
    if rounds.len() != played.len() {
        return Err(invalid(format!("{} rounds but {} played policies", rounds.len(), played.len())));
    }
    let Some(first) = played.first() else {
        return Ok(0.0);
    };
    let window = first.truncation_window();
    if played.iter().any(|p| p.truncation_window() != window) {
        return Err(invalid("played policies disagree on the truncation window"));
    }
    let live: Vec<usize> = (0..rounds.len()).filter(|i| !rounds[*i].is_empty()).collect();
    if live.is_empty() {
        return Ok(0.0);
    }
    let online = live.iter().map(|i| cross_entropy(played[*i], &rounds[*i])).sum::<f64>() / live.len() as f64;
    Ok(online - best_in_hindsight(rounds, first.num_actions(), window))
}
