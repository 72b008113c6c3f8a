//! Exhaustive enumeration of histories and their occupancy under an actor.

use std::collections::{BTreeMap, HashMap};

use super::{Actor, HistoryKey, PomdpSpec};
use crate::error::{invalid, LeapError, Result};
use crate::math::{check_distribution, logsumexp};

/// Default cap on the number of enumerated histories.
pub const DEFAULT_HISTORY_CAP: usize = 200_000;

/// All reachable histories at one timestep with their joint law over states.
#[derive(Debug, Clone)]
pub struct OccupancyLayer {
    pub t: usize,
    /// `(h, d)` with `d[s] = P(h_t = h, s_t = s, episode still running)`.
    pub nodes: Vec<(HistoryKey, Vec<f64>)>,
}

impl OccupancyLayer {
    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().map(|(_, d)| d.iter().sum::<f64>()).sum()
    }
}

fn syntactic_count(spec: &PomdpSpec, t: usize) -> Option<usize> {
    let o = spec.num_observations;
    let a = spec.num_actions;
    let mut n = o;
    for _ in 1..t {
        n = n.checked_mul(a)?.checked_mul(o)?;
    }
    Some(n)
}

/// Number of syntactic histories over all steps `1..=horizon`, or `None` on
/// overflow.
pub fn history_tree_size(spec: &PomdpSpec) -> Option<usize> {
    (1..=spec.horizon).try_fold(0usize, |acc, t| acc.checked_add(syntactic_count(spec, t)?))
}

/// Every syntactically valid history of length `t`, in lexicographic order.
pub fn enumerate_histories(spec: &PomdpSpec, t: usize, cap: usize) -> Result<Vec<HistoryKey>> {
    if t == 0 || t > spec.horizon {
        return Err(invalid(format!("t must lie in 1..={}, got {t}", spec.horizon)));
    }
    match syntactic_count(spec, t) {
        Some(n) if n <= cap => {}
        _ => {
            return Err(LeapError::ResourceLimit(format!(
                "{}^{t} · {}^{} histories exceed the cap of {cap}",
                spec.num_observations,
                spec.num_actions,
                t - 1
            )))
        }
    }
    let mut layer: Vec<HistoryKey> = (0..spec.num_observations).map(HistoryKey::initial).collect();
    for _ in 1..t {
        layer = layer
            .iter()
            .flat_map(|h| {
                (0..spec.num_actions).flat_map(move |a| (0..spec.num_observations).map(move |o| h.extended(a, o)))
            })
            .collect();
    }
    Ok(layer)
}

/// Forward pass over the history tree of `actor`, layers `t = 1..=horizon`.
///
/// Zero-probability branches are pruned. Fails once more than `cap` history
/// nodes have been created.
pub fn occupancy_layers(spec: &PomdpSpec, actor: &dyn Actor, cap: usize) -> Result<Vec<OccupancyLayer>> {
    let sup = spec.support();
    let ns = spec.num_states;
    let null = spec.null_action();
    let mut first: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for o in 0..spec.num_observations {
        for s in 0..ns {
            let lp = sup.log_initial[s] + sup.log_obs[s][null][o];
            if lp > f64::NEG_INFINITY {
                first.entry(o).or_insert_with(|| vec![Vec::new(); ns])[s].push(lp);
            }
        }
    }
    let mut current: Vec<(HistoryKey, Vec<f64>)> =
        first.into_iter().map(|(o, terms)| (HistoryKey::initial(o), collapse(&terms))).collect();
    let mut created = current.len();
    let mut layers = Vec::with_capacity(spec.horizon);
    for t in 1..=spec.horizon {
        if created > cap {
            return Err(LeapError::ResourceLimit(format!("history tree exceeds the cap of {cap} nodes")));
        }
        let mut next_nodes = Vec::new();
        if t < spec.horizon {
            for (h, log_d) in &current {
                let mut children: BTreeMap<(usize, usize), Vec<Vec<f64>>> = BTreeMap::new();
                for s in 0..ns {
                    if log_d[s] == f64::NEG_INFINITY {
                        continue;
                    }
                    let dist = actor.action_distribution(h, s)?;
                    check_distribution(&dist, spec.num_actions, "policy output")?;
                    for (a, pa) in dist.iter().enumerate() {
                        if *pa <= 0.0 || sup.terminal[s][a] {
                            continue;
                        }
                        let base = log_d[s] + pa.ln();
                        for &(next, lt) in &sup.next[s][a] {
                            for o in 0..spec.num_observations {
                                let lo = sup.log_obs[next][a][o];
                                if lo > f64::NEG_INFINITY {
                                    children.entry((a, o)).or_insert_with(|| vec![Vec::new(); ns])[next]
                                        .push(base + lt + lo);
                                }
                            }
                        }
                    }
                }
                for ((a, o), terms) in children {
                    next_nodes.push((h.extended(a, o), collapse(&terms)));
                }
            }
            created += next_nodes.len();
        }
        let nodes = std::mem::replace(&mut current, next_nodes)
            .into_iter()
            .map(|(h, ld)| (h, ld.into_iter().map(f64::exp).collect()))
            .collect();
        layers.push(OccupancyLayer { t, nodes });
    }
    Ok(layers)
}

fn collapse(terms: &[Vec<f64>]) -> Vec<f64> {
    terms.iter().map(|t| if t.is_empty() { f64::NEG_INFINITY } else { logsumexp(t) }).collect()
}

/// Every syntactic history of length `t` paired with `P(h_t = h)` under `actor`.
///
/// The probabilities sum to the probability that the episode is still running
/// at `t`, which is 1 when no success pair can end it early.
pub fn history_occupancy(spec: &PomdpSpec, actor: &dyn Actor, t: usize, cap: usize) -> Result<Vec<(HistoryKey, f64)>> {
    let all = enumerate_histories(spec, t, cap)?;
    let layers = occupancy_layers(spec, actor, cap)?;
    let reached: HashMap<&HistoryKey, f64> =
        layers[t - 1].nodes.iter().map(|(h, d)| (h, d.iter().sum::<f64>())).collect();
    Ok(all
        .into_iter()
        .map(|h| {
            let p = reached.get(&h).copied().unwrap_or(0.0);
            (h, p)
        })
        .collect())
}
