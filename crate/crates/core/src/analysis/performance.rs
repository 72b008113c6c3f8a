use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{history_tree_size, occupancy_layers, rollout, Actor, PomdpSpec};
use crate::error::Result;
use crate::expert::PrivilegedExpert;
use crate::math::{check_distribution, mean_se};
use crate::rng::{stream, Component};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalMethod {
    /// Forward enumeration of the history tree; fails past `cap` nodes.
    Exact { cap: usize },
    /// Episode `k` uses stream `(root_seed, Evaluation, k)`.
    MonteCarlo { root_seed: u64, episodes: usize },
}

/// Expected return, success probability and episode length. Standard errors
/// are zero for exact evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub j: f64,
    pub success_rate: f64,
    pub avg_actions: f64,
    pub j_se: f64,
    pub success_se: f64,
    pub avg_actions_se: f64,
    /// Number of sampled episodes, 0 for exact evaluation.
    pub episodes: usize,
}

impl Performance {
    fn exact(j: f64, success_rate: f64, avg_actions: f64) -> Self {
        Performance { j, success_rate, avg_actions, j_se: 0.0, success_se: 0.0, avg_actions_se: 0.0, episodes: 0 }
    }
}

/// Whether exact evaluation of `spec` fits under `cap` history nodes for
/// any policy.
pub fn exact_feasible(spec: &PomdpSpec, cap: usize) -> bool {
    history_tree_size(spec).is_some_and(|n| n <= cap)
}

pub fn evaluate_performance(spec: &PomdpSpec, actor: &dyn Actor, method: EvalMethod) -> Result<Performance> {
    match method {
        EvalMethod::Exact { cap } => evaluate_exact(spec, actor, cap),
        EvalMethod::MonteCarlo { root_seed, episodes } => evaluate_monte_carlo(spec, actor, root_seed, episodes),
    }
}

fn evaluate_exact(spec: &PomdpSpec, actor: &dyn Actor, cap: usize) -> Result<Performance> {
    let layers = occupancy_layers(spec, actor, cap)?;
    let (mut j, mut success, mut actions) = (0.0, 0.0, 0.0);
    for layer in &layers {
        for (h, d) in &layer.nodes {
            for (s, mass) in d.iter().enumerate() {
                if *mass <= 0.0 {
                    continue;
                }
                let dist = actor.action_distribution(h, s)?;
                check_distribution(&dist, spec.num_actions, "policy output")?;
                actions += mass;
                for (a, pa) in dist.iter().enumerate() {
                    j += mass * pa * spec.reward[s][a];
                    if spec.is_terminal(s, a) {
                        success += mass * pa;
                    }
                }
            }
        }
    }
    Ok(Performance::exact(j, success, actions))
}

fn evaluate_monte_carlo(spec: &PomdpSpec, actor: &dyn Actor, root_seed: u64, episodes: usize) -> Result<Performance> {
    let outcomes = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let r = rollout(spec, actor, &mut stream(root_seed, Component::Evaluation, k as u64))?;
            Ok((r.total_reward, r.succeeded as u8 as f64, r.steps.len() as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let column = |f: fn(&(f64, f64, f64)) -> f64| mean_se(&outcomes.iter().map(f).collect::<Vec<_>>());
    let (j, j_se) = column(|o| o.0);
    let (success_rate, success_se) = column(|o| o.1);
    let (avg_actions, avg_actions_se) = column(|o| o.2);
    Ok(Performance { j, success_rate, avg_actions, j_se, success_se, avg_actions_se, episodes })
}

/// Exact performance of a privileged expert acting on the true state.
pub fn privileged_performance(spec: &PomdpSpec, expert: &PrivilegedExpert) -> Performance {
    let ns = spec.num_states;
    let mut alive = spec.initial_dist.clone();
    let (mut j, mut success, mut actions) = (0.0, 0.0, 0.0);
    for t in 1..=spec.horizon {
        let mut next = vec![0.0; ns];
        for (s, mass) in alive.iter().enumerate() {
            if *mass <= 0.0 {
                continue;
            }
            actions += mass;
            for (a, pa) in expert.distribution(t, s).iter().enumerate() {
                if *pa <= 0.0 {
                    continue;
                }
                let w = mass * pa;
                j += w * spec.reward[s][a];
                if spec.is_terminal(s, a) {
                    success += w;
                } else {
                    for (n, p) in next.iter_mut().zip(&spec.transition[s][a]) {
                        *n += w * p;
                    }
                }
            }
        }
        alive = next;
    }
    Performance::exact(j, success, actions)
}

/// Success rate over one episode per validation seed, each drawn from
/// stream `(seed, Validation, 0)`.
pub fn validation_success(spec: &PomdpSpec, actor: &dyn Actor, seeds: &[u64]) -> Result<f64> {
    if seeds.is_empty() {
        return Ok(0.0);
    }
    let wins = seeds
        .par_iter()
        .map(|seed| Ok(rollout(spec, actor, &mut stream(*seed, Component::Validation, 0))?.succeeded as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(wins.iter().sum::<usize>() as f64 / seeds.len() as f64)
}
