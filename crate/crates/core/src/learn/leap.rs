use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{CorrectionDataset, DemoRecord};
use super::trainers::{fit_dpo, fit_kto, fit_sft_labels, KtoExample, KtoWeights, PreferencePair};
use crate::analysis::{
    evaluate_performance, exact_feasible, imitation_gap, measured_regret, privileged_performance,
    realizability_gap_exact, realizability_of_policy, recoverability, validation_success, EvalMethod, GapMethod,
    MetricsReport, MetricsRow, Performance, ReportMetadata, Scope, Selection,
};
use crate::env::{rollout, Actor, PomdpSpec, DEFAULT_HISTORY_CAP};
use crate::error::{invalid, Result};
use crate::expert::{correct_rollouts, CorrectionMode, ExpertBundle, ExpertKind, ExternalExpert};
use crate::math::uniform;
use crate::policy::{PolicySnapshot, TabularHistoryPolicy};
use crate::rng::{episode_index, stream, Component};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UpdateRule {
    /// Closed-form fit on the aggregate of all data so far.
    Sft,
    /// Preference update on the newest corrections against the previous iterate.
    Dpo { beta: f64 },
    /// Unpaired update on the newest corrections against the previous iterate.
    Kto { beta: f64, lambda_d: f64, lambda_u: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherKind {
    Privileged,
    Nonprivileged,
    Constrained {
        delta: f64,
    },
    Sampled {
        lambda: f64,
        num_samples: usize,
    },
    /// A privileged policy fitted to the dataset gathered so far.
    #[serde(rename = "self")]
    SelfTeacher,
}

impl TeacherKind {
    /// The expert used at the next iteration, given the data gathered so far.
    pub fn resolve(&self, dataset: &CorrectionDataset) -> Result<ExpertKind> {
        Ok(match *self {
            TeacherKind::Privileged => ExpertKind::Privileged,
            TeacherKind::Nonprivileged => ExpertKind::NonPrivileged,
            TeacherKind::Constrained { delta } => ExpertKind::Constrained { delta },
            TeacherKind::Sampled { lambda, num_samples } => ExpertKind::Sampled { lambda, num_samples },
            TeacherKind::SelfTeacher => ExpertKind::External(Arc::new(fit_privileged_student(dataset)?)),
        })
    }
}

/// Validation seeds, either listed or as `count` consecutive values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSet {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl SeedSet {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSet::List(v) => v.clone(),
            SeedSet::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeapConfig {
    pub num_iterations: usize,
    pub rollouts_per_iteration: usize,
    #[serde(default = "defaults::num_demos")]
    pub num_demos: usize,
    #[serde(default = "defaults::update_rule")]
    pub update_rule: UpdateRule,
    #[serde(default = "defaults::teacher")]
    pub teacher: TeacherKind,
    #[serde(default = "defaults::mode")]
    pub mode: CorrectionMode,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::optimization_steps")]
    pub optimization_steps: usize,
    #[serde(default = "defaults::truncation_window")]
    pub truncation_window: usize,
    #[serde(default)]
    pub expert_temperature: f64,
    pub root_seed: u64,
    #[serde(default = "defaults::validation_seeds")]
    pub validation_seeds: SeedSet,
}

mod defaults {
    use super::*;

    pub fn num_demos() -> usize {
        50
    }
    pub fn update_rule() -> UpdateRule {
        UpdateRule::Sft
    }
    pub fn teacher() -> TeacherKind {
        TeacherKind::Privileged
    }
    pub fn mode() -> CorrectionMode {
        CorrectionMode::FailedOnly
    }
    pub fn learning_rate() -> f64 {
        0.5
    }
    pub fn optimization_steps() -> usize {
        500
    }
    pub fn truncation_window() -> usize {
        2
    }
    pub fn validation_seeds() -> SeedSet {
        SeedSet::Range { start: 1_000_000, count: 200 }
    }
    pub fn history_cap() -> usize {
        DEFAULT_HISTORY_CAP
    }
    pub fn evaluation_episodes() -> usize {
        1000
    }
    pub fn realizability_episodes() -> usize {
        200
    }
}

impl LeapConfig {
    pub fn new(num_iterations: usize, rollouts_per_iteration: usize, root_seed: u64) -> Self {
        LeapConfig {
            num_iterations,
            rollouts_per_iteration,
            num_demos: defaults::num_demos(),
            update_rule: defaults::update_rule(),
            teacher: defaults::teacher(),
            mode: defaults::mode(),
            learning_rate: defaults::learning_rate(),
            optimization_steps: defaults::optimization_steps(),
            truncation_window: defaults::truncation_window(),
            expert_temperature: 0.0,
            root_seed,
            validation_seeds: defaults::validation_seeds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_iterations", self.num_iterations),
            ("rollouts_per_iteration", self.rollouts_per_iteration),
            ("num_demos", self.num_demos),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.expert_temperature >= 0.0 && self.expert_temperature.is_finite()) {
            return Err(invalid("expert_temperature must be finite and nonnegative"));
        }
        match self.update_rule {
            UpdateRule::Sft => {}
            UpdateRule::Dpo { beta } | UpdateRule::Kto { beta, .. } if !(beta > 0.0) => {
                return Err(invalid(format!("beta must be positive, got {beta}")));
            }
            UpdateRule::Kto { lambda_d, lambda_u, .. } if lambda_d < 0.0 || lambda_u < 0.0 => {
                return Err(invalid("KTO weights must be nonnegative"));
            }
            _ => {}
        }
        match self.teacher {
            TeacherKind::Constrained { delta } if !(delta >= 0.0) => {
                return Err(invalid(format!("delta must be nonnegative, got {delta}")));
            }
            TeacherKind::Sampled { lambda, num_samples } if !(lambda >= 0.0) || num_samples == 0 => {
                return Err(invalid("sampled teacher needs lambda ≥ 0 and num_samples ≥ 1"));
            }
            _ => {}
        }
        if self.validation_seeds.seeds().is_empty() {
            return Err(invalid("validation_seeds must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalChoice {
    /// Exact when the history tree fits under the cap, Monte Carlo otherwise.
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapChoice {
    /// Exact for full-history students whose tree fits under the cap,
    /// lower bound otherwise.
    Auto,
    Exact,
    LowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "defaults::history_cap")]
    pub history_cap: usize,
    #[serde(default = "eval_auto")]
    pub evaluation: EvalChoice,
    #[serde(default = "defaults::evaluation_episodes")]
    pub evaluation_episodes: usize,
    /// Root of the evaluation streams; the run's root seed when absent.
    #[serde(default)]
    pub evaluation_seed: Option<u64>,
    #[serde(default = "gap_auto")]
    pub realizability: GapChoice,
    #[serde(default = "defaults::realizability_episodes")]
    pub realizability_episodes: usize,
}

fn eval_auto() -> EvalChoice {
    EvalChoice::Auto
}

fn gap_auto() -> GapChoice {
    GapChoice::Auto
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            history_cap: defaults::history_cap(),
            evaluation: EvalChoice::Auto,
            evaluation_episodes: defaults::evaluation_episodes(),
            evaluation_seed: None,
            realizability: GapChoice::Auto,
            realizability_episodes: defaults::realizability_episodes(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.evaluation_episodes == 0 || self.realizability_episodes == 0 {
            return Err(invalid("episode counts must be at least 1"));
        }
        Ok(())
    }

    pub fn eval_method(&self, spec: &PomdpSpec, root_seed: u64) -> EvalMethod {
        let exact = match self.evaluation {
            EvalChoice::Auto => exact_feasible(spec, self.history_cap),
            EvalChoice::Exact => true,
            EvalChoice::MonteCarlo => false,
        };
        if exact {
            EvalMethod::Exact { cap: self.history_cap }
        } else {
            EvalMethod::MonteCarlo {
                root_seed: self.evaluation_seed.unwrap_or(root_seed),
                episodes: self.evaluation_episodes,
            }
        }
    }
}

/// Everything a LEAP run produces.
#[derive(Debug, Clone)]
pub struct LeapOutcome {
    /// `π_0, π_1, …, π_N`.
    pub snapshots: Vec<PolicySnapshot>,
    pub report: MetricsReport,
    pub dataset: CorrectionDataset,
    /// Performance of each snapshot, with standard errors when sampled.
    pub performance: Vec<Performance>,
    /// Expected return of the privileged expert.
    pub expert_j: f64,
}

impl LeapOutcome {
    pub fn best(&self) -> &PolicySnapshot {
        &self.snapshots[self.report.selection.best_iteration]
    }
}

/// `num_demos` rollouts of the non-privileged expert acting alone; episode
/// `k` uses stream `(root_seed, Demonstration, k)`.
pub fn collect_demos(bundle: &ExpertBundle, num_demos: usize, root_seed: u64) -> Result<Vec<DemoRecord>> {
    let teacher = bundle.nonprivileged();
    let episodes = (0..num_demos)
        .into_par_iter()
        .map(|k| rollout(&bundle.spec, &teacher, &mut stream(root_seed, Component::Demonstration, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(episodes
        .into_iter()
        .flat_map(|r| r.steps)
        .map(|st| DemoRecord { history: st.history, state: st.state, action: st.action })
        .collect())
}

/// Closed-form supervised fit on demonstrations and all corrections.
pub fn fit_sft(dataset: &CorrectionDataset, truncation_window: usize) -> Result<TabularHistoryPolicy> {
    fit_sft_labels(&dataset.labels(), dataset.num_actions, truncation_window)
}

/// Empirical `(t, state) → action` frequencies of every labelled step;
/// unseen pairs fall back to uniform.
pub fn fit_privileged_student(dataset: &CorrectionDataset) -> Result<ExternalExpert> {
    if dataset.is_empty() {
        return Err(invalid("cannot fit a privileged student to an empty dataset"));
    }
    let n = dataset.num_actions;
    let mut counts: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (t, s, a) in dataset.state_labels() {
        counts.entry((t, s)).or_insert_with(|| vec![0.0; n])[a] += 1.0;
    }
    let table: HashMap<(usize, usize), Vec<f64>> = counts
        .into_iter()
        .map(|(k, c)| {
            let total: f64 = c.iter().sum();
            (k, c.into_iter().map(|x| x / total).collect())
        })
        .collect();
    Ok(ExternalExpert { table, fallback: Some(uniform(n)) })
}

/// Snapshot with the highest validation success; ties go to the earliest.
pub fn select_best(snapshots: &[PolicySnapshot], spec: &PomdpSpec, validation_seeds: &[u64]) -> Result<PolicySnapshot> {
    let scores = snapshots
        .iter()
        .map(|s| validation_success(spec, s.policy.as_ref(), validation_seeds))
        .collect::<Result<Vec<_>>>()?;
    let best = first_argmax(&scores).ok_or_else(|| invalid("no snapshots to select from"))?;
    Ok(snapshots[best].clone())
}

fn first_argmax(xs: &[f64]) -> Option<usize> {
    (0..xs.len()).fold(None, |best, i| match best {
        Some(b) if xs[b] >= xs[i] => Some(b),
        _ => Some(i),
    })
}

/// Runs LEAP with the default analysis settings.
pub fn leap_run(spec: &PomdpSpec, config: &LeapConfig, demos: CorrectionDataset) -> Result<LeapOutcome> {
    leap_run_with(spec, config, &AnalysisConfig::default(), demos)
}

/// Iterative imitation from corrections.
///
/// `π_0` is fitted to the demonstrations. Iteration `i` rolls out `π_{i−1}`,
/// has the teacher correct the rollouts, aggregates the corrections and
/// updates the policy. Every iterate is then evaluated and measured.
pub fn leap_run_with(
    spec: &PomdpSpec,
    config: &LeapConfig,
    analysis: &AnalysisConfig,
    demos: CorrectionDataset,
) -> Result<LeapOutcome> {
    config.validate()?;
    analysis.validate()?;
    if demos.demo_records.is_empty() {
        return Err(invalid("LEAP needs at least one demonstration step"));
    }
    if demos.num_actions != spec.num_actions {
        return Err(invalid("demonstrations disagree with the environment's action count"));
    }
    let spec = Arc::new(spec.clone());
    let bundle = ExpertBundle::new(spec.clone(), config.expert_temperature)?;
    let window = config.truncation_window;
    let mut dataset = demos;
    let mut snapshots = vec![PolicySnapshot::new(0, fit_sft(&dataset, window)?)];
    let mut teachers = Vec::with_capacity(config.num_iterations);
    for i in 1..=config.num_iterations {
        let current = snapshots[i - 1].clone();
        let rollouts = (0..config.rollouts_per_iteration)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(config.root_seed, Component::Rollout, episode_index(i, r));
                rollout(&spec, current.policy.as_ref(), &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let teacher = config.teacher.resolve(&dataset)?;
        let records = correct_rollouts(&rollouts, &bundle, config.mode, &teacher, i, config.root_seed)?;
        dataset.push_iteration(records)?;
        let next = match config.update_rule {
            UpdateRule::Sft => fit_sft(&dataset, window)?,
            UpdateRule::Dpo { beta } => {
                let pairs: Vec<PreferencePair> = dataset
                    .iteration_records(i)
                    .iter()
                    .filter(|r| r.corrected_action != r.student_action)
                    .map(|r| PreferencePair {
                        history: r.history.clone(),
                        preferred: r.corrected_action,
                        dispreferred: r.student_action,
                    })
                    .collect();
                fit_dpo(&current, &pairs, beta, config.learning_rate, config.optimization_steps)?
            }
            UpdateRule::Kto { beta, lambda_d, lambda_u } => {
                let mut examples = Vec::new();
                for r in dataset.iteration_records(i) {
                    examples.push(KtoExample {
                        history: r.history.clone(),
                        action: r.corrected_action,
                        desirable: true,
                    });
                    if r.student_action != r.corrected_action {
                        examples.push(KtoExample {
                            history: r.history.clone(),
                            action: r.student_action,
                            desirable: false,
                        });
                    }
                }
                let w = KtoWeights { beta, lambda_desirable: lambda_d, lambda_undesirable: lambda_u };
                fit_kto(&current, &examples, w, config.learning_rate, config.optimization_steps)?
            }
        };
        snapshots.push(PolicySnapshot::new(i, next));
        teachers.push(teacher);
    }

    let measure = Measurement {
        bundle: &bundle,
        config,
        analysis,
        snapshots: &snapshots,
        teachers: &teachers,
        dataset: &dataset,
    };
    let (report, performance, expert_j) = measure.report()?;
    Ok(LeapOutcome { snapshots, report, dataset, performance, expert_j })
}

struct Measurement<'a> {
    bundle: &'a ExpertBundle,
    config: &'a LeapConfig,
    analysis: &'a AnalysisConfig,
    snapshots: &'a [PolicySnapshot],
    teachers: &'a [ExpertKind],
    dataset: &'a CorrectionDataset,
}

impl Measurement<'_> {
    fn report(&self) -> Result<(MetricsReport, Vec<Performance>, f64)> {
        let spec = self.bundle.spec.as_ref();
        let horizon = spec.horizon;
        let method = self.analysis.eval_method(spec, self.config.root_seed);
        let performance = self
            .snapshots
            .iter()
            .map(|s| evaluate_performance(spec, s.policy.as_ref(), method))
            .collect::<Result<Vec<_>>>()?;
        let expert_j = privileged_performance(spec, &self.bundle.privileged).j;
        let h_all = recoverability(spec, &self.bundle.tables, Scope::All);
        let h_reach = recoverability(spec, &self.bundle.tables, Scope::Reachable);
        let gaps = self.realizability_by_row()?;

        let rounds: Vec<Vec<_>> = (1..self.snapshots.len())
            .map(|i| {
                self.dataset.iteration_records(i).iter().map(|r| (r.history.clone(), r.corrected_action)).collect()
            })
            .collect();
        let played: Vec<&TabularHistoryPolicy> = self.snapshots.iter().map(|s| s.policy.as_ref()).collect();

        let mut rows = Vec::with_capacity(self.snapshots.len());
        for (i, perf) in performance.iter().enumerate() {
            let regret = if i == 0 { 0.0 } else { measured_regret(&rounds[..i], &played[..i])? };
            let (eps, gap_method) = gaps[i];
            let aig = imitation_gap(expert_j, perf.j, horizon);
            rows.push(MetricsRow {
                iteration: i,
                j: perf.j,
                success_rate: perf.success_rate,
                avg_actions: perf.avg_actions,
                imitation_gap: aig,
                realizability_gap: eps,
                realizability_method: gap_method,
                recoverability_reachable: h_reach,
                recoverability_all: h_all,
                measured_regret: regret,
                theorem1_slack: h_all * (eps + regret) - aig,
            });
        }

        let seeds = self.config.validation_seeds.seeds();
        let validation = self
            .snapshots
            .iter()
            .map(|s| validation_success(spec, s.policy.as_ref(), &seeds))
            .collect::<Result<Vec<_>>>()?;
        let best_iteration = 1 + first_argmax(&validation[1..]).expect("at least one iteration");
        let report = MetricsReport {
            metadata: ReportMetadata {
                spec_name: spec.name.clone(),
                config_digest: digest(&(self.config, self.analysis))?,
                root_seed: self.config.root_seed,
            },
            rows,
            selection: Selection { best_iteration, validation_success: validation },
        };
        Ok((report, performance, expert_j))
    }

    /// Realizability gap of the teacher behind each row. Row `i ≥ 1` uses the
    /// teacher of iteration `i`; row 0 uses the first teacher.
    fn realizability_by_row(&self) -> Result<Vec<(f64, GapMethod)>> {
        let spec = self.bundle.spec.as_ref();
        let full_window = self.config.truncation_window + 1 >= spec.horizon;
        let exact = match self.analysis.realizability {
            GapChoice::Auto => full_window && exact_feasible(spec, self.analysis.history_cap),
            GapChoice::Exact if !full_window => {
                return Err(invalid("exact realizability needs a window covering the whole horizon"));
            }
            GapChoice::Exact => true,
            GapChoice::LowerBound => false,
        };
        let varying = matches!(self.config.teacher, TeacherKind::SelfTeacher);
        let slot = |row: usize| if varying { row.max(1) - 1 } else { 0 };
        let mut out = Vec::with_capacity(self.snapshots.len());
        if exact {
            let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
            for row in 0..self.snapshots.len() {
                let k = slot(row);
                let v = match cache.get(&k) {
                    Some(v) => *v,
                    None => {
                        let v = realizability_gap_exact(self.bundle, &self.teachers[k], self.analysis.history_cap)?;
                        cache.insert(k, v);
                        v
                    }
                };
                out.push((v, GapMethod::Exact));
            }
        } else {
            let window = (!full_window).then_some(self.config.truncation_window);
            let seed = self.analysis.evaluation_seed.unwrap_or(self.config.root_seed);
            let mut cache: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for row in 0..self.snapshots.len() {
                let k = slot(row);
                let mut best = 0.0f64;
                for p in 0..=row {
                    let v = match cache.get(&(k, p)) {
                        Some(v) => *v,
                        None => {
                            let actor: &dyn Actor = self.snapshots[p].policy.as_ref();
                            let v = realizability_of_policy(
                                self.bundle,
                                &self.teachers[k],
                                actor,
                                window,
                                seed,
                                self.analysis.realizability_episodes,
                            )?;
                            cache.insert((k, p), v);
                            v
                        }
                    };
                    best = best.max(v);
                }
                out.push((best, GapMethod::LowerBound));
            }
        }
        Ok(out)
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}
