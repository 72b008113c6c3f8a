//! Finite-horizon tabular POMDPs: model, simulation, filtering, enumeration.

mod belief;
mod enumerate;
mod history;
mod simulate;
mod spec;
pub mod worlds;

pub use belief::{belief_from_history, belief_update, initial_belief, Belief};
pub use enumerate::{
    enumerate_histories, history_occupancy, history_tree_size, occupancy_layers, OccupancyLayer, DEFAULT_HISTORY_CAP,
};
pub use history::HistoryKey;
pub use simulate::{reset, rollout, step, Actor, PrivilegedRollout, RolloutStep};
pub use spec::PomdpSpec;
pub use worlds::{
    build_hidden_object_world, build_hidden_object_world_with, build_tiger, fully_observed, ObjectWorldLayout,
    ObjectWorldParams, TigerParams,
};
