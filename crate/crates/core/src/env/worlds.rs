//! Concrete environments.

use std::collections::BTreeSet;

use super::PomdpSpec;
use crate::error::{invalid, Result};

pub mod tiger {
    pub const TIGER_LEFT: usize = 0;
    pub const TIGER_RIGHT: usize = 1;

    pub const LISTEN: usize = 0;
    pub const OPEN_LEFT: usize = 1;
    pub const OPEN_RIGHT: usize = 2;

    pub const HEAR_LEFT: usize = 0;
    pub const HEAR_RIGHT: usize = 1;
    pub const START: usize = 2;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TigerParams {
    pub accuracy: f64,
    pub listen_cost: f64,
    pub correct_reward: f64,
    pub wrong_penalty: f64,
    pub horizon: usize,
}

impl Default for TigerParams {
    fn default() -> Self {
        TigerParams { accuracy: 0.85, listen_cost: -1.0, correct_reward: 10.0, wrong_penalty: -100.0, horizon: 3 }
    }
}

/// The two-door tiger problem.
///
/// Listening keeps the tiger in place and hears it behind the correct door
/// with probability `accuracy`. Opening the safe door ends the episode as a
/// success; opening the tiger's door costs `wrong_penalty` and reshuffles the
/// tiger from the uniform prior. Openings and the first step emit the
/// uninformative `START` observation.
pub fn build_tiger(
    accuracy: f64,
    listen_cost: f64,
    correct_reward: f64,
    wrong_penalty: f64,
    horizon: usize,
) -> Result<PomdpSpec> {
    use tiger::*;
    if !(0.5..=1.0).contains(&accuracy) {
        return Err(invalid(format!("tiger accuracy must lie in [0.5, 1], got {accuracy}")));
    }
    let prior = vec![0.5, 0.5];
    let mut transition = vec![vec![vec![0.0; 2]; 3]; 2];
    let mut obs = vec![vec![vec![0.0; 3]; 4]; 2];
    let mut reward = vec![vec![0.0; 3]; 2];
    for s in 0..2 {
        transition[s][LISTEN][s] = 1.0;
        transition[s][OPEN_LEFT] = prior.clone();
        transition[s][OPEN_RIGHT] = prior.clone();
        let (right, wrong) = if s == TIGER_LEFT { (HEAR_LEFT, HEAR_RIGHT) } else { (HEAR_RIGHT, HEAR_LEFT) };
        obs[s][LISTEN][right] = accuracy;
        obs[s][LISTEN][wrong] += 1.0 - accuracy;
        for a in [OPEN_LEFT, OPEN_RIGHT, 3] {
            obs[s][a][START] = 1.0;
        }
        reward[s][LISTEN] = listen_cost;
    }
    reward[TIGER_LEFT][OPEN_LEFT] = wrong_penalty;
    reward[TIGER_LEFT][OPEN_RIGHT] = correct_reward;
    reward[TIGER_RIGHT][OPEN_RIGHT] = wrong_penalty;
    reward[TIGER_RIGHT][OPEN_LEFT] = correct_reward;
    let success = BTreeSet::from([(TIGER_LEFT, OPEN_RIGHT), (TIGER_RIGHT, OPEN_LEFT)]);
    PomdpSpec::new("tiger", horizon, prior, transition, obs, reward, success)
}

pub fn build_tiger_with(params: TigerParams) -> Result<PomdpSpec> {
    build_tiger(params.accuracy, params.listen_cost, params.correct_reward, params.wrong_penalty, params.horizon)
}

/// Observation indices of the hidden-object world.
pub mod object_world {
    pub const NOTHING_HERE: usize = 0;
    pub const OBJECT_HERE: usize = 1;
    pub const HOLDING: usize = 2;
    pub const AT_ENTRANCE: usize = 3;
}

/// State encoding helpers for [`build_hidden_object_world`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectWorldLayout {
    pub num_locations: usize,
}

impl ObjectWorldLayout {
    /// Agent position used for the entrance, before any `goto`.
    pub fn entrance(&self) -> usize {
        self.num_locations
    }

    pub fn num_states(&self) -> usize {
        self.num_locations * (self.num_locations + 1) * 2
    }

    pub fn state(&self, object: usize, agent: usize, carrying: bool) -> usize {
        (object * (self.num_locations + 1) + agent) * 2 + carrying as usize
    }

    /// `(object location, agent position, carrying)`.
    pub fn decode(&self, state: usize) -> (usize, usize, bool) {
        let carrying = state % 2 == 1;
        let rest = state / 2;
        (rest / (self.num_locations + 1), rest % (self.num_locations + 1), carrying)
    }

    pub fn goto(&self, location: usize) -> usize {
        location
    }

    pub fn pick(&self) -> usize {
        self.num_locations
    }

    pub fn deliver(&self) -> usize {
        self.num_locations + 1
    }
}

/// Search-and-fetch task: an object sits at a hidden location drawn from
/// `prior_weights`; the agent starts at the entrance.
///
/// Actions are `goto i` for every location, `pick`, and `deliver`. Arriving
/// at a location reveals whether the object is there; once picked up the
/// agent observes `HOLDING`. Delivering while holding the object earns
/// `deliver_reward` and ends the episode as a success; every other action
/// costs `move_cost`. The object never moves.
pub fn build_hidden_object_world(
    num_locations: usize,
    prior_weights: &[f64],
    horizon: usize,
    move_cost: f64,
    deliver_reward: f64,
) -> Result<PomdpSpec> {
    build_hidden_object_world_with(&ObjectWorldParams {
        num_locations,
        prior_weights: prior_weights.to_vec(),
        horizon,
        move_cost,
        deliver_reward,
        detection: 1.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectWorldParams {
    pub num_locations: usize,
    pub prior_weights: Vec<f64>,
    pub horizon: usize,
    pub move_cost: f64,
    pub deliver_reward: f64,
    /// Probability of seeing `OBJECT_HERE` when standing at the object;
    /// misses read `NOTHING_HERE`. Picking up always works where the object is.
    pub detection: f64,
}

/// [`build_hidden_object_world`] with a possibly imperfect detector.
pub fn build_hidden_object_world_with(params: &ObjectWorldParams) -> Result<PomdpSpec> {
    use object_world::*;
    let ObjectWorldParams { num_locations, ref prior_weights, horizon, move_cost, deliver_reward, detection } = *params;
    if !(0.0..=1.0).contains(&detection) {
        return Err(invalid(format!("detection probability must lie in [0, 1], got {detection}")));
    }
    if num_locations < 2 {
        return Err(invalid("hidden-object world needs at least two locations"));
    }
    if prior_weights.len() != num_locations {
        return Err(invalid(format!(
            "prior_weights has {} entries for {num_locations} locations",
            prior_weights.len()
        )));
    }
    if prior_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(invalid("prior weights must be finite and nonnegative"));
    }
    let total: f64 = prior_weights.iter().sum();
    if total <= 0.0 {
        return Err(invalid("prior weights must not all be zero"));
    }
    let layout = ObjectWorldLayout { num_locations };
    let ns = layout.num_states();
    let na = num_locations + 2;
    let mut initial = vec![0.0; ns];
    let mut transition = vec![vec![vec![0.0; ns]; na]; ns];
    let mut obs = vec![vec![vec![0.0; 4]; na + 1]; ns];
    let mut reward = vec![vec![-move_cost; na]; ns];
    let mut success = BTreeSet::new();
    for (object, w) in prior_weights.iter().enumerate() {
        initial[layout.state(object, layout.entrance(), false)] = w / total;
    }
    for s in 0..ns {
        let (object, agent, carrying) = layout.decode(s);
        for i in 0..num_locations {
            transition[s][layout.goto(i)][layout.state(object, i, carrying)] = 1.0;
        }
        let picked = carrying || agent == object;
        transition[s][layout.pick()][layout.state(object, agent, picked)] = 1.0;
        transition[s][layout.deliver()][s] = 1.0;
        if carrying {
            reward[s][layout.deliver()] = deliver_reward;
            success.insert((s, layout.deliver()));
        }
        let row: &[(usize, f64)] = if carrying {
            &[(HOLDING, 1.0)]
        } else if agent == object {
            &[(OBJECT_HERE, detection), (NOTHING_HERE, 1.0 - detection)]
        } else if agent == layout.entrance() {
            &[(AT_ENTRANCE, 1.0)]
        } else {
            &[(NOTHING_HERE, 1.0)]
        };
        for a in 0..=na {
            for &(o, p) in row {
                obs[s][a][o] += p;
            }
        }
    }
    PomdpSpec::new(format!("hidden_object_world_{num_locations}"), horizon, initial, transition, obs, reward, success)
}

/// Same dynamics and rewards, but every observation reveals the next state.
pub fn fully_observed(spec: &PomdpSpec) -> Result<PomdpSpec> {
    let ns = spec.num_states;
    let obs = (0..ns)
        .map(|s| {
            (0..=spec.num_actions)
                .map(|_| {
                    let mut row = vec![0.0; ns];
                    row[s] = 1.0;
                    row
                })
                .collect()
        })
        .collect();
    PomdpSpec::new(
        format!("{}_fully_observed", spec.name),
        spec.horizon,
        spec.initial_dist.clone(),
        spec.transition.clone(),
        obs,
        spec.reward.clone(),
        spec.success_predicate.clone(),
    )
}

/// Copy of `spec` with a different horizon.
pub fn with_horizon(spec: &PomdpSpec, horizon: usize) -> Result<PomdpSpec> {
    PomdpSpec::new(
        spec.name.clone(),
        horizon,
        spec.initial_dist.clone(),
        spec.transition.clone(),
        spec.observation_model.clone(),
        spec.reward.clone(),
        spec.success_predicate.clone(),
    )
}
