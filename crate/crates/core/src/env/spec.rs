use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::{is_distribution, DIST_TOL};

/// Complete tabular model of a finite-horizon POMDP.
///
/// `observation_model[s'][a]` is the observation law after landing in `s'`
/// through action `a`. Each row has `num_actions + 1` columns: the extra one,
/// [`PomdpSpec::null_action`], emits the first observation from the initial
/// state.
///
/// A `(state, action)` pair listed in `success_predicate` ends the episode
/// as a success once the action has been taken.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PomdpSpec {
    pub name: String,
    pub num_states: usize,
    pub num_actions: usize,
    pub num_observations: usize,
    pub horizon: usize,
    pub initial_dist: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub observation_model: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub success_predicate: BTreeSet<(usize, usize)>,
    #[serde(skip)]
    support: OnceLock<Support>,
}

/// Sparse view of the dynamics, built on first use.
#[derive(Debug, Clone)]
pub(crate) struct Support {
    /// `next[s][a]` = `(s', ln P(s'|s,a))` over positive-probability successors.
    pub next: Vec<Vec<Vec<(usize, f64)>>>,
    /// `log_obs[s'][a][o]`, with `-inf` for impossible observations.
    pub log_obs: Vec<Vec<Vec<f64>>>,
    pub log_initial: Vec<f64>,
    pub terminal: Vec<Vec<bool>>,
}

impl PomdpSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        horizon: usize,
        initial_dist: Vec<f64>,
        transition: Vec<Vec<Vec<f64>>>,
        observation_model: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        success_predicate: BTreeSet<(usize, usize)>,
    ) -> Result<Self> {
        let num_states = initial_dist.len();
        let num_actions = reward.first().map_or(0, Vec::len);
        let num_observations = observation_model.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let spec = PomdpSpec {
            name: name.into(),
            num_states,
            num_actions,
            num_observations,
            horizon,
            initial_dist,
            transition,
            observation_model,
            reward,
            success_predicate,
            support: OnceLock::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Column of `observation_model` used for the first observation.
    pub fn null_action(&self) -> usize {
        self.num_actions
    }

    pub fn is_terminal(&self, state: usize, action: usize) -> bool {
        self.success_predicate.contains(&(state, action))
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na, no) = (self.num_states, self.num_actions, self.num_observations);
        if ns == 0 || na == 0 || no == 0 {
            return Err(invalid("state, action and observation counts must be positive"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        let dist = |p: &[f64], len: usize, what: String| -> Result<()> {
            if p.len() != len {
                return Err(invalid(format!("{what}: expected {len} entries, got {}", p.len())));
            }
            if !is_distribution(p, DIST_TOL) {
                return Err(invalid(format!("{what}: not a probability vector")));
            }
            Ok(())
        };
        dist(&self.initial_dist, ns, "initial_dist".into())?;
        if self.transition.len() != ns || self.reward.len() != ns || self.observation_model.len() != ns {
            return Err(invalid("table dimensions disagree with num_states"));
        }
        for s in 0..ns {
            if self.transition[s].len() != na || self.reward[s].len() != na {
                return Err(invalid(format!("row {s}: table dimensions disagree with num_actions")));
            }
            for a in 0..na {
                dist(&self.transition[s][a], ns, format!("transition[{s}][{a}]"))?;
                if !self.reward[s][a].is_finite() {
                    return Err(invalid(format!("reward[{s}][{a}] is not finite")));
                }
            }
            if self.observation_model[s].len() != na + 1 {
                return Err(invalid(format!(
                    "observation_model[{s}] needs {} columns (actions plus the null action)",
                    na + 1
                )));
            }
            for a in 0..=na {
                dist(&self.observation_model[s][a], no, format!("observation_model[{s}][{a}]"))?;
            }
        }
        if let Some((s, a)) = self.success_predicate.iter().find(|(s, a)| *s >= ns || *a >= na) {
            return Err(invalid(format!("success_predicate entry ({s}, {a}) out of range")));
        }
        Ok(())
    }

    pub(crate) fn support(&self) -> &Support {
        self.support.get_or_init(|| {
            let next = self
                .transition
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|p| p.iter().enumerate().filter(|(_, x)| **x > 0.0).map(|(s, x)| (s, x.ln())).collect())
                        .collect()
                })
                .collect();
            let log_obs = self
                .observation_model
                .iter()
                .map(|row| row.iter().map(|p| p.iter().map(|x| x.ln()).collect()).collect())
                .collect();
            let terminal =
                (0..self.num_states).map(|s| (0..self.num_actions).map(|a| self.is_terminal(s, a)).collect()).collect();
            Support { next, log_obs, log_initial: self.initial_dist.iter().map(|x| x.ln()).collect(), terminal }
        })
    }

    pub fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.num_states {
            return Err(invalid(format!("state {s} out of range (num_states {})", self.num_states)));
        }
        Ok(())
    }

    pub fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.num_actions {
            return Err(invalid(format!("action {a} out of range (num_actions {})", self.num_actions)));
        }
        Ok(())
    }

    pub fn check_observation(&self, o: usize) -> Result<()> {
        if o >= self.num_observations {
            return Err(invalid(format!("observation {o} out of range (num_observations {})", self.num_observations)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PomdpSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
