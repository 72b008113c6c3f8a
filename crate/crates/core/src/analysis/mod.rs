//! Performance evaluation, gap and coefficient measurements, regret, bound
//! checks, and the per-iteration metrics report.

mod bounds;
mod gaps;
mod performance;
mod recoverability;
mod regret;
mod report;

pub use bounds::{
    check_constrained_bound, check_theorem_bound, grad_check, theorem1_slack, BoundCheck, BoundInputs,
    ConstrainedBoundCheck, ConstrainedBoundInputs, BOUND_TOLERANCE,
};
pub use gaps::{
    beliefs_along, imitation_gap, realizability_gap_exact, realizability_gap_lower_bound, realizability_of_policy,
    GapMethod, RealizabilityGap,
};
pub use performance::{
    evaluate_performance, exact_feasible, privileged_performance, validation_success, EvalMethod, Performance,
};
pub use recoverability::{reachable_states, recoverability, Scope};
pub use regret::{best_in_hindsight, cross_entropy, measured_regret};
pub use report::{MetricsReport, MetricsRow, ReportMetadata, Selection, CSV_COLUMNS};
