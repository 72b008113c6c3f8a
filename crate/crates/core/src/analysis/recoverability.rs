use serde::{Deserialize, Serialize};

use crate::env::PomdpSpec;
use crate::expert::ValueTables;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Only states that some policy reaches at that step.
    Reachable,
    All,
}

/// `reachable[t][s]`: whether state `s` has positive probability at 0-based
/// step `t` under some action sequence.
pub fn reachable_states(spec: &PomdpSpec) -> Vec<Vec<bool>> {
    let mut layers = Vec::with_capacity(spec.horizon);
    let mut current: Vec<bool> = spec.initial_dist.iter().map(|p| *p > 0.0).collect();
    for _ in 0..spec.horizon {
        let mut next = vec![false; spec.num_states];
        for s in (0..spec.num_states).filter(|s| current[*s]) {
            for a in 0..spec.num_actions {
                if spec.is_terminal(s, a) {
                    continue;
                }
                for (n, p) in spec.transition[s][a].iter().enumerate() {
                    if *p > 0.0 {
                        next[n] = true;
                    }
                }
            }
        }
        layers.push(std::mem::replace(&mut current, next));
    }
    layers
}

/// Largest absolute advantage `|q[t][s][a] − v[t][s]|` over the scope.
pub fn recoverability(spec: &PomdpSpec, tables: &ValueTables, scope: Scope) -> f64 {
    let reach = match scope {
        Scope::Reachable => Some(reachable_states(spec)),
        Scope::All => None,
    };
    let mut worst = 0.0f64;
    for (t, (qt, vt)) in tables.q.iter().zip(&tables.v).enumerate() {
        for (s, (qs, vs)) in qt.iter().zip(vt).enumerate() {
            if reach.as_ref().is_some_and(|r| !r[t][s]) {
                continue;
            }
            for q in qs {
                worst = worst.max((q - vs).abs());
            }
        }
    }
    worst
}
