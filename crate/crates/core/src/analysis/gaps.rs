use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{belief_update, initial_belief, rollout, Actor, Belief, HistoryKey, PrivilegedRollout};
use crate::error::{invalid, LeapError, Result};
use crate::expert::{ExpertBundle, ExpertKind};
use crate::math::l1;
use crate::rng::{stream, Component};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    Exact,
    LowerBound,
}

impl GapMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            GapMethod::Exact => "exact",
            GapMethod::LowerBound => "lower_bound",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizabilityGap {
    pub value: f64,
    pub method: GapMethod,
}

/// `(J(expert) − J(policy)) / horizon`.
pub fn imitation_gap(j_expert: f64, j_policy: f64, horizon: usize) -> f64 {
    (j_expert - j_policy) / horizon as f64
}

/// Worst-case time-averaged L1 distance between `teacher` and the best
/// full-history policy, maximised over every deterministic history policy.
///
/// The best history policy at `h` is the belief marginal `π^E(·|h)`. The
/// maximisation is a backward pass over the full history tree, so the cost is
/// the number of reachable histories; more than `cap` nodes is an error.
pub fn realizability_gap_exact(bundle: &ExpertBundle, teacher: &ExpertKind, cap: usize) -> Result<f64> {
    let spec = &bundle.spec;
    let null = spec.null_action();
    let mut nodes = 0usize;
    let mut total = 0.0;
    for o in 0..spec.num_observations {
        let joint: Vec<f64> =
            (0..spec.num_states).map(|s| spec.initial_dist[s] * spec.observation_model[s][null][o]).collect();
        total += best_subtree(bundle, teacher, &HistoryKey::initial(o), joint, cap, &mut nodes)?;
    }
    Ok(total / spec.horizon as f64)
}

/// `joint[s] = P(s, h, still running)` along a fixed action path.
fn best_subtree(
    bundle: &ExpertBundle,
    teacher: &ExpertKind,
    h: &HistoryKey,
    joint: Vec<f64>,
    cap: usize,
    nodes: &mut usize,
) -> Result<f64> {
    let z: f64 = joint.iter().sum();
    if z <= 0.0 {
        return Ok(0.0);
    }
    *nodes += 1;
    if *nodes > cap {
        return Err(LeapError::ResourceLimit(format!("history tree exceeds the cap of {cap} nodes")));
    }
    let spec = &bundle.spec;
    let t = h.t();
    let belief = Belief { probs: joint.iter().map(|x| x / z).collect() };
    let centre = bundle.nonprivileged_dist(t, &belief);
    let mut local = 0.0;
    for (s, mass) in joint.iter().enumerate() {
        if *mass > 0.0 {
            local += mass * l1(&bundle.teacher_dist(teacher, t, s, Some(&belief))?, &centre);
        }
    }
    if t == spec.horizon {
        return Ok(local);
    }
    let mut best = 0.0f64;
    for a in 0..spec.num_actions {
        let mut after = vec![0.0; spec.num_states];
        for (s, mass) in joint.iter().enumerate() {
            if *mass > 0.0 && !spec.is_terminal(s, a) {
                for (n, p) in after.iter_mut().zip(&spec.transition[s][a]) {
                    *n += mass * p;
                }
            }
        }
        let mut value = 0.0;
        for o in 0..spec.num_observations {
            let child: Vec<f64> = after.iter().enumerate().map(|(n, m)| m * spec.observation_model[n][a][o]).collect();
            value += best_subtree(bundle, teacher, &h.extended(a, o), child, cap, nodes)?;
        }
        best = best.max(value);
    }
    Ok(local + best)
}

/// Realizability objective of one policy, estimated from `episodes` sampled
/// rollouts on streams `(root_seed, Realizability, k)`.
///
/// With `truncation_window = None` the best class member at `h` is the belief
/// marginal. With a window, it is re-solved per truncated key as the
/// occupancy-weighted mean of the privileged expert over the visits to that key.
pub fn realizability_of_policy(
    bundle: &ExpertBundle,
    teacher: &ExpertKind,
    policy: &dyn Actor,
    truncation_window: Option<usize>,
    root_seed: u64,
    episodes: usize,
) -> Result<f64> {
    if episodes == 0 {
        return Err(invalid("realizability estimate needs at least one episode"));
    }
    let spec = &bundle.spec;
    let visits = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let r = rollout(spec, policy, &mut stream(root_seed, Component::Realizability, k as u64))?;
            let beliefs = beliefs_along(bundle, &r)?;
            r.steps
                .iter()
                .zip(beliefs)
                .map(|(st, b)| {
                    let t = st.history.t();
                    Ok((st.history.clone(), st.state, bundle.teacher_dist(teacher, t, st.state, Some(&b))?, b))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    match truncation_window {
        None => {
            for (h, _, teach, b) in visits.iter().flatten() {
                total += l1(teach, &bundle.nonprivileged_dist(h.t(), b));
            }
        }
        Some(w) => {
            let mut sums: BTreeMap<HistoryKey, (Vec<f64>, f64)> = BTreeMap::new();
            for (h, s, _, _) in visits.iter().flatten() {
                let entry = sums.entry(h.truncated(w)).or_insert_with(|| (vec![0.0; spec.num_actions], 0.0));
                for (acc, p) in entry.0.iter_mut().zip(bundle.privileged_dist(h.t(), *s)) {
                    *acc += p;
                }
                entry.1 += 1.0;
            }
            for (h, _, teach, _) in visits.iter().flatten() {
                let (sum, n) = &sums[&h.truncated(w)];
                let best: Vec<f64> = sum.iter().map(|x| x / n).collect();
                total += l1(teach, &best);
            }
        }
    }
    Ok(total / (episodes as f64 * spec.horizon as f64))
}

/// Maximum of [`realizability_of_policy`] over `policies`. This is a lower
/// bound on the supremum over all policies.
pub fn realizability_gap_lower_bound(
    bundle: &ExpertBundle,
    teacher: &ExpertKind,
    policies: &[&dyn Actor],
    truncation_window: Option<usize>,
    root_seed: u64,
    episodes: usize,
) -> Result<f64> {
    if policies.is_empty() {
        return Err(invalid("lower-bound realizability needs at least one policy"));
    }
    let mut best = 0.0f64;
    for p in policies {
        best = best.max(realizability_of_policy(bundle, teacher, *p, truncation_window, root_seed, episodes)?);
    }
    Ok(best)
}

/// Posterior over states at every step of a rollout.
pub fn beliefs_along(bundle: &ExpertBundle, r: &PrivilegedRollout) -> Result<Vec<Belief>> {
    let spec = &bundle.spec;
    let mut out: Vec<Belief> = Vec::with_capacity(r.steps.len());
    for (k, st) in r.steps.iter().enumerate() {
        let b = match out.last() {
            None => initial_belief(spec, st.history.entries()[0] as usize)?,
            Some(prev) => belief_update(spec, prev, r.steps[k - 1].action, st.history.current_observation())?,
        };
        out.push(b);
    }
    Ok(out)
}
