use serde::{Deserialize, Serialize};

use super::gaps::GapMethod;
use crate::error::{invalid, Result};

/// Slack below which a strict bound check counts as violated.
pub const BOUND_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub j_policy: f64,
    pub j_expert: f64,
    pub horizon: usize,
    pub recoverability: f64,
    pub realizability: f64,
    pub realizability_method: GapMethod,
    pub regret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub slack: f64,
    /// True when the realizability value is exact. A lower-bound value can
    /// only understate the right-hand side's penalty, so a negative slack is
    /// then inconclusive.
    pub strict: bool,
    pub satisfied: bool,
}

/// `J(π)/T − [J(π^E)/T − H (ε + γ)]`.
pub fn theorem1_slack(x: &BoundInputs) -> f64 {
    let t = x.horizon as f64;
    x.j_policy / t - (x.j_expert / t - x.recoverability * (x.realizability + x.regret))
}

pub fn check_theorem_bound(x: &BoundInputs) -> Result<BoundCheck> {
    let all = [x.j_policy, x.j_expert, x.recoverability, x.realizability, x.regret];
    if x.horizon == 0 || all.iter().any(|v| !v.is_finite()) {
        return Err(invalid("bound inputs must be finite with a positive horizon"));
    }
    let slack = theorem1_slack(x);
    Ok(BoundCheck { slack, strict: x.realizability_method == GapMethod::Exact, satisfied: slack >= -BOUND_TOLERANCE })
}

/// Inputs of the bound for a learner trained against the constrained expert
/// with radius `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedBoundInputs {
    pub j_policy: f64,
    pub j_expert: f64,
    pub j_constrained: f64,
    pub horizon: usize,
    /// Recoverability of the constrained expert.
    pub recoverability: f64,
    pub delta: f64,
    pub regret: f64,
    /// Realizability gap of the constrained expert.
    pub realizability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedBoundCheck {
    /// `J(π)/T − [J(π^E)/T − ((J(π^E) − J(π^E_δ))/T + H (√(2δ) + γ))]`.
    pub slack: f64,
    /// `ε(π^E_δ) ≤ √(2δ) + 1e-9`.
    pub realizability_within_radius: bool,
}

pub fn check_constrained_bound(x: &ConstrainedBoundInputs) -> Result<ConstrainedBoundCheck> {
    if x.horizon == 0 || x.delta < 0.0 {
        return Err(invalid("bound inputs need a positive horizon and a nonnegative radius"));
    }
    let t = x.horizon as f64;
    let radius = (2.0 * x.delta).sqrt();
    let rhs = x.j_expert / t - ((x.j_expert - x.j_constrained) / t + x.recoverability * (radius + x.regret));
    Ok(ConstrainedBoundCheck {
        slack: x.j_policy / t - rhs,
        realizability_within_radius: x.realizability <= radius + 1e-9,
    })
}

/// Largest relative error `|analytic − numeric| / max(1, |analytic|)` of a
/// gradient against central differences with the given step.
pub fn grad_check<F>(loss_and_grad: F, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(step > 0.0) {
        return Err(invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let (_, analytic) = loss_and_grad(point);
    if analytic.len() != point.len() {
        return Err(invalid("gradient length differs from the parameter length"));
    }
    let mut worst = 0.0f64;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let up = loss_and_grad(&x).0;
        x[i] = point[i] - step;
        let down = loss_and_grad(&x).0;
        x[i] = point[i];
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max((analytic[i] - numeric).abs() / analytic[i].abs().max(1.0));
    }
    Ok(worst)
}
