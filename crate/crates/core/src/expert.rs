//! Teachers: the privileged expert solved on the underlying MDP, its
//! belief-marginalised non-privileged counterpart, the KL-constrained expert
//! between the two, and correction of student rollouts.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    belief_from_history, belief_update, initial_belief, Actor, Belief, HistoryKey, PomdpSpec, PrivilegedRollout,
};
use crate::error::{invalid, LeapError, Result};
use crate::math::{argmax, floor_dist, kl, logsumexp, one_hot, sample_index, softmax};
use crate::rng::{episode_index, stream, Component};

/// Probability floor applied to privileged distributions before they enter a KL.
pub const KL_FLOOR: f64 = 1e-3;

/// Finite-horizon action values of the privileged MDP.
///
/// `q[t][s][a]` and `v[t][s]` are indexed by the 0-based step, so `q[0]` is
/// the first decision. The layer after the horizon is identically zero, and a
/// success pair has no continuation value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
}

impl ValueTables {
    pub fn horizon(&self) -> usize {
        self.v.len()
    }

    /// Largest violation of `v = max_a q`.
    pub fn max_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (qt, vt) in self.q.iter().zip(&self.v) {
            for (qs, vs) in qt.iter().zip(vt) {
                let m = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max((m - vs).abs());
            }
        }
        worst
    }

    /// Largest violation of the Bellman backup
    /// `q[t][s][a] = r(s,a) + Σ_{s'} T(s'|s,a) v[t+1][s']`.
    pub fn backup_residual(&self, spec: &PomdpSpec) -> f64 {
        let h = self.horizon();
        let mut worst = 0.0f64;
        for t in 0..h {
            for s in 0..spec.num_states {
                for a in 0..spec.num_actions {
                    let mut target = spec.reward[s][a];
                    if t + 1 < h && !spec.is_terminal(s, a) {
                        target += spec.transition[s][a].iter().zip(&self.v[t + 1]).map(|(p, v)| p * v).sum::<f64>();
                    }
                    worst = worst.max((self.q[t][s][a] - target).abs());
                }
            }
        }
        worst
    }

    /// `J(π^E)` of the greedy privileged expert: `Σ_s μ(s) v[0][s]`.
    pub fn expected_value(&self, spec: &PomdpSpec) -> f64 {
        spec.initial_dist.iter().zip(&self.v[0]).map(|(p, v)| p * v).sum()
    }
}

/// Backward value iteration on the fully observed MDP.
pub fn solve_privileged(spec: &PomdpSpec) -> ValueTables {
    let (ns, na, h) = (spec.num_states, spec.num_actions, spec.horizon);
    let mut q = vec![vec![vec![0.0; na]; ns]; h];
    let mut v = vec![vec![0.0; ns]; h];
    for t in (0..h).rev() {
        for s in 0..ns {
            for a in 0..na {
                let mut val = spec.reward[s][a];
                if t + 1 < h && !spec.is_terminal(s, a) {
                    val += spec.transition[s][a].iter().zip(&v[t + 1]).map(|(p, v)| p * v).sum::<f64>();
                }
                q[t][s][a] = val;
            }
            v[t][s] = q[t][s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    ValueTables { q, v }
}

/// `π^E(·|t, s)`, stored for every step and state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivilegedExpert {
    pub temperature: f64,
    pub dists: Vec<Vec<Vec<f64>>>,
}

impl PrivilegedExpert {
    /// Distribution at 1-based step `t`.
    pub fn distribution(&self, t: usize, state: usize) -> &[f64] {
        &self.dists[t - 1][state]
    }
}

impl Actor for PrivilegedExpert {
    fn action_distribution(&self, history: &HistoryKey, state: usize) -> Result<Vec<f64>> {
        Ok(self.distribution(history.t(), state).to_vec())
    }
}

/// Greedy (lowest-index ties) at temperature 0, `softmax(q / τ)` otherwise.
pub fn make_privileged_policy(tables: &ValueTables, temperature: f64) -> Result<PrivilegedExpert> {
    if !(temperature >= 0.0) {
        return Err(invalid(format!("temperature must be nonnegative, got {temperature}")));
    }
    let dists = tables
        .q
        .iter()
        .map(|qt| {
            qt.iter()
                .map(|qs| {
                    if temperature == 0.0 {
                        one_hot(qs.len(), argmax(qs))
                    } else {
                        softmax(&qs.iter().map(|x| x / temperature).collect::<Vec<_>>())
                    }
                })
                .collect()
        })
        .collect();
    Ok(PrivilegedExpert { temperature, dists })
}

/// `π^E(a|h) = Σ_s P(s|h) π^E(a|s)`.
#[derive(Debug, Clone)]
pub struct NonPrivilegedExpert {
    spec: Arc<PomdpSpec>,
    privileged: Arc<PrivilegedExpert>,
}

impl NonPrivilegedExpert {
    pub fn distribution(&self, history: &HistoryKey) -> Result<Vec<f64>> {
        let b = belief_from_history(&self.spec, history)?;
        Ok(marginalize(&self.privileged, history.t(), &b))
    }
}

impl Actor for NonPrivilegedExpert {
    fn action_distribution(&self, history: &HistoryKey, _state: usize) -> Result<Vec<f64>> {
        self.distribution(history)
    }
}

pub fn make_nonprivileged_policy(spec: Arc<PomdpSpec>, privileged: Arc<PrivilegedExpert>) -> NonPrivilegedExpert {
    NonPrivilegedExpert { spec, privileged }
}

fn marginalize(privileged: &PrivilegedExpert, t: usize, belief: &Belief) -> Vec<f64> {
    let rows = &privileged.dists[t - 1];
    let mut out = vec![0.0; rows[0].len()];
    for (s, w) in belief.probs.iter().enumerate() {
        if *w > 0.0 {
            for (o, p) in out.iter_mut().zip(&rows[s]) {
                *o += w * p;
            }
        }
    }
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

/// Point `π̃_α ∝ p^{1−α} q^α` on the geometric path from `p` to `q`.
///
/// Zero entries are allowed: for `0 < α < 1` the point lives on the common
/// support, and the endpoints are `p` and `q` themselves.
pub fn geometric_point(p: &[f64], q: &[f64], alpha: f64) -> Vec<f64> {
    if alpha <= 0.0 {
        return p.to_vec();
    }
    if alpha >= 1.0 {
        return q.to_vec();
    }
    let log: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(a, b)| if *a <= 0.0 || *b <= 0.0 { f64::NEG_INFINITY } else { (1.0 - alpha) * a.ln() + alpha * b.ln() })
        .collect();
    let z = logsumexp(&log);
    log.into_iter().map(|x| (x - z).exp()).collect()
}

/// KL projection of the privileged distribution `p` into the ball
/// `KL(· ‖ q) ≤ δ` around the non-privileged distribution `q`.
///
/// When the constraint binds the solution lies on the geometric path between
/// `p` and `q`; `α` is found by bisection so that `KL(π̃_α ‖ q) = δ` to within
/// `1e-8`. If `q` has zeros, every feasible point lives on its support and the
/// path starts from `p` restricted to that support.
pub fn constrained_expert(p: &[f64], q: &[f64], delta: f64) -> Vec<f64> {
    if kl(p, q) <= delta {
        return p.to_vec();
    }
    if delta <= 0.0 {
        return q.to_vec();
    }
    let overlap: f64 = p.iter().zip(q).filter(|(_, b)| **b > 0.0).map(|(a, _)| a).sum();
    if overlap <= 0.0 {
        return q.to_vec();
    }
    let restricted: Vec<f64> = p.iter().zip(q).map(|(a, b)| if *b > 0.0 { a / overlap } else { 0.0 }).collect();
    if kl(&restricted, q) <= delta {
        return restricted;
    }
    // KL(π̃_α ‖ q) falls monotonically on (0, 1] from above δ to 0.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = q.to_vec();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let point = geometric_point(p, q, mid);
        let gap = kl(&point, q) - delta;
        if gap > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best = point;
            if gap > -1e-10 {
                break;
            }
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    best
}

/// Penalty-method approximation of the constrained expert.
///
/// Draws `num_samples` candidates from each of `p` and `q`, weighs each
/// distinct candidate by `exp(ln p(a) + λ ln q(a))`, and samples from the
/// self-normalised weights. With a pool covering every action this samples
/// exactly from `∝ p · q^λ`.
pub fn sampled_penalty_correction<R: Rng + ?Sized>(
    p: &[f64],
    q: &[f64],
    lambda: f64,
    num_samples: usize,
    rng: &mut R,
) -> Result<usize> {
    if num_samples == 0 {
        return Err(invalid("num_samples must be at least 1"));
    }
    let mut pool = BTreeSet::new();
    for _ in 0..num_samples {
        pool.insert(sample_index(p, rng));
        pool.insert(sample_index(q, rng));
    }
    let candidates: Vec<usize> = pool.into_iter().collect();
    let log_w: Vec<f64> = candidates.iter().map(|&a| p[a].ln() + lambda * q[a].ln()).collect();
    let z = logsumexp(&log_w);
    let w: Vec<f64> = log_w.iter().map(|x| (x - z).exp()).collect();
    Ok(candidates[sample_index(&w, rng)])
}

/// Limiting law of [`sampled_penalty_correction`]: `∝ p · q^λ`.
pub fn penalty_law(p: &[f64], q: &[f64], lambda: f64) -> Vec<f64> {
    let log: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.ln() + lambda * b.ln()).collect();
    let z = logsumexp(&log);
    log.into_iter().map(|x| (x - z).exp()).collect()
}

/// Teacher defined directly on `(t, state)`, e.g. a fitted self-teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalExpert {
    pub table: HashMap<(usize, usize), Vec<f64>>,
    /// Returned for pairs missing from `table`; `None` makes such queries an error.
    pub fallback: Option<Vec<f64>>,
}

impl ExternalExpert {
    pub fn distribution(&self, t: usize, state: usize) -> Result<Vec<f64>> {
        match (self.table.get(&(t, state)), &self.fallback) {
            (Some(d), _) => Ok(d.clone()),
            (None, Some(f)) => Ok(f.clone()),
            (None, None) => {
                Err(LeapError::ContractViolation(format!("external expert undefined at step {t}, state {state}")))
            }
        }
    }
}

impl Actor for ExternalExpert {
    fn action_distribution(&self, history: &HistoryKey, state: usize) -> Result<Vec<f64>> {
        self.distribution(history.t(), state)
    }
}

/// Which teacher produces corrections.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertKind {
    Privileged,
    NonPrivileged,
    Constrained { delta: f64 },
    Sampled { lambda: f64, num_samples: usize },
    External(Arc<ExternalExpert>),
}

impl ExpertKind {
    fn needs_belief(&self) -> bool {
        matches!(self, ExpertKind::NonPrivileged | ExpertKind::Constrained { .. } | ExpertKind::Sampled { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    FailedOnly,
    AllSteps,
}

/// The privileged expert, its history-based marginal, and the constrained
/// family between them, all for one environment.
#[derive(Debug, Clone)]
pub struct ExpertBundle {
    pub spec: Arc<PomdpSpec>,
    pub tables: Arc<ValueTables>,
    pub privileged: Arc<PrivilegedExpert>,
    pub expert_temperature: f64,
}

impl ExpertBundle {
    pub fn new(spec: Arc<PomdpSpec>, expert_temperature: f64) -> Result<Self> {
        let tables = solve_privileged(&spec);
        let privileged = make_privileged_policy(&tables, expert_temperature)?;
        Ok(ExpertBundle { spec, tables: Arc::new(tables), privileged: Arc::new(privileged), expert_temperature })
    }

    pub fn nonprivileged(&self) -> NonPrivilegedExpert {
        make_nonprivileged_policy(self.spec.clone(), self.privileged.clone())
    }

    pub fn privileged_dist(&self, t: usize, state: usize) -> &[f64] {
        self.privileged.distribution(t, state)
    }

    pub fn nonprivileged_dist(&self, t: usize, belief: &Belief) -> Vec<f64> {
        marginalize(&self.privileged, t, belief)
    }

    /// `π^E_δ(·|s, h)`. The endpoints return the raw experts: `δ = 0` gives
    /// `π^E(·|h)` and an inactive constraint gives `π^E(·|s)`. Only the
    /// privileged side is floored, so the output always satisfies
    /// `KL(π^E_δ ‖ π^E(·|h)) ≤ δ` against the unfloored marginal.
    pub fn constrained_dist(&self, delta: f64, t: usize, state: usize, belief: &Belief) -> Vec<f64> {
        let p = self.privileged_dist(t, state);
        let q = self.nonprivileged_dist(t, belief);
        if delta <= 0.0 {
            return q;
        }
        if kl(p, &q) <= delta {
            return p.to_vec();
        }
        constrained_expert(&floor_dist(p, KL_FLOOR), &q, delta)
    }

    /// Deterministic teacher law at a decision point. Sampled teachers report
    /// the law their sampler targets.
    pub fn teacher_dist(&self, kind: &ExpertKind, t: usize, state: usize, belief: Option<&Belief>) -> Result<Vec<f64>> {
        let need = || belief.ok_or_else(|| LeapError::ContractViolation("teacher needs a belief".into()));
        Ok(match kind {
            ExpertKind::Privileged => self.privileged_dist(t, state).to_vec(),
            ExpertKind::NonPrivileged => self.nonprivileged_dist(t, need()?),
            ExpertKind::Constrained { delta } => self.constrained_dist(*delta, t, state, need()?),
            ExpertKind::Sampled { lambda, .. } => {
                let pf = floor_dist(self.privileged_dist(t, state), KL_FLOOR);
                let qf = floor_dist(&self.nonprivileged_dist(t, need()?), KL_FLOOR);
                penalty_law(&pf, &qf, *lambda)
            }
            ExpertKind::External(e) => e.distribution(t, state)?,
        })
    }
}

/// One teacher correction of one student step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub history: HistoryKey,
    pub state: usize,
    pub student_action: usize,
    pub corrected_action: usize,
    pub corrected_distribution: Vec<f64>,
    pub iteration: usize,
}

/// Labels student rollouts with teacher actions.
///
/// `FailedOnly` keeps only unsuccessful rollouts; every step of a kept
/// rollout yields one record. Sampled teachers draw from
/// `(root_seed, Correction, iteration, rollout index)` streams and record a
/// one-hot distribution on the drawn action.
pub fn correct_rollouts(
    rollouts: &[PrivilegedRollout],
    expert: &ExpertBundle,
    mode: CorrectionMode,
    kind: &ExpertKind,
    iteration: usize,
    root_seed: u64,
) -> Result<Vec<CorrectionRecord>> {
    let spec = &expert.spec;
    let mut out = Vec::new();
    for (idx, r) in rollouts.iter().enumerate() {
        if mode == CorrectionMode::FailedOnly && r.succeeded {
            continue;
        }
        let mut rng = stream(root_seed, Component::Correction, episode_index(iteration, idx));
        let mut belief: Option<Belief> = None;
        for (k, st) in r.steps.iter().enumerate() {
            if kind.needs_belief() {
                belief = Some(match (k, belief.take()) {
                    (0, _) | (_, None) => initial_belief(spec, st.history.entries()[0] as usize)?,
                    (_, Some(b)) => {
                        let prev = &r.steps[k - 1];
                        belief_update(spec, &b, prev.action, st.history.current_observation())?
                    }
                });
            }
            let t = st.history.t();
            let dist = match kind {
                ExpertKind::Sampled { lambda, num_samples } => {
                    let b = belief.as_ref().expect("belief computed above");
                    let pf = floor_dist(expert.privileged_dist(t, st.state), KL_FLOOR);
                    let qf = floor_dist(&expert.nonprivileged_dist(t, b), KL_FLOOR);
                    let a = sampled_penalty_correction(&pf, &qf, *lambda, *num_samples, &mut rng)?;
                    one_hot(spec.num_actions, a)
                }
                _ => expert.teacher_dist(kind, t, st.state, belief.as_ref())?,
            };
            out.push(CorrectionRecord {
                history: st.history.clone(),
                state: st.state,
                student_action: st.action,
                corrected_action: argmax(&dist),
                corrected_distribution: dist,
                iteration,
            });
        }
    }
    Ok(out)
}

pub fn write_records_jsonl<W: Write>(records: &[CorrectionRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records_jsonl<R: BufRead>(r: R) -> Result<Vec<CorrectionRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
