use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{HistoryKey, PomdpSpec};
use crate::error::Result;
use crate::math::{check_distribution, sample_index};

/// Anything that maps a decision point to an action distribution.
///
/// Student policies look only at the history; privileged experts also read
/// the hidden state. The state is always supplied, and it is up to the
/// implementation not to peek when it should not.
pub trait Actor: Sync {
    fn action_distribution(&self, history: &HistoryKey, state: usize) -> Result<Vec<f64>>;
}

impl<F> Actor for F
where
    F: Fn(&HistoryKey, usize) -> Result<Vec<f64>> + Sync,
{
    fn action_distribution(&self, history: &HistoryKey, state: usize) -> Result<Vec<f64>> {
        self(history, state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub history: HistoryKey,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// One episode with the privileged state recorded next to each history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivilegedRollout {
    pub steps: Vec<RolloutStep>,
    pub total_reward: f64,
    pub succeeded: bool,
}

/// Samples one transition: `s' ~ T(·|s,a)`, `o ~ O(·|s',a)`, `r = R(s,a)`.
pub fn step<R: Rng + ?Sized>(
    spec: &PomdpSpec,
    state: usize,
    action: usize,
    rng: &mut R,
) -> Result<(usize, usize, f64)> {
    spec.check_state(state)?;
    spec.check_action(action)?;
    let next = sample_index(&spec.transition[state][action], rng);
    let obs = sample_index(&spec.observation_model[next][action], rng);
    Ok((next, obs, spec.reward[state][action]))
}

/// Draws the initial state and first observation.
pub fn reset<R: Rng + ?Sized>(spec: &PomdpSpec, rng: &mut R) -> (usize, usize) {
    let s = sample_index(&spec.initial_dist, rng);
    let o = sample_index(&spec.observation_model[s][spec.null_action()], rng);
    (s, o)
}

/// Runs `actor` for one episode of at most `spec.horizon` steps.
pub fn rollout<R: Rng + ?Sized>(spec: &PomdpSpec, actor: &dyn Actor, rng: &mut R) -> Result<PrivilegedRollout> {
    let (mut state, o1) = reset(spec, rng);
    let mut history = HistoryKey::initial(o1);
    let mut steps = Vec::with_capacity(spec.horizon);
    let mut total_reward = 0.0;
    let mut succeeded = false;
    for t in 1..=spec.horizon {
        let dist = actor.action_distribution(&history, state)?;
        check_distribution(&dist, spec.num_actions, "policy output")?;
        let action = sample_index(&dist, rng);
        let (next, obs, reward) = step(spec, state, action, rng)?;
        total_reward += reward;
        steps.push(RolloutStep { history: history.clone(), state, action, reward });
        if spec.is_terminal(state, action) {
            succeeded = true;
            break;
        }
        if t < spec.horizon {
            history.push(action, obs);
        }
        state = next;
    }
    Ok(PrivilegedRollout { steps, total_reward, succeeded })
}
