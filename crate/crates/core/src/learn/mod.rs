//! The LEAP loop and the policy updates it drives.

mod dataset;
mod leap;
mod trainers;

pub use dataset::{CorrectionDataset, DemoRecord};
pub use leap::{
    collect_demos, digest, fit_privileged_student, fit_sft, leap_run, leap_run_with, select_best, AnalysisConfig,
    EvalChoice, GapChoice, LeapConfig, LeapOutcome, SeedSet, TeacherKind, UpdateRule,
};
pub use trainers::{
    dpo_loss_and_grad, entropy_floor, fit_dpo, fit_kto, fit_sft_gradient, fit_sft_labels, kto_loss_and_grad,
    kto_reference_shift, sft_loss_and_grad, total_cross_entropy, Gradient, KtoExample, KtoWeights, PreferencePair,
    UNSEEN_LOGIT,
};

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::analysis::{evaluate_performance, grad_check, privileged_performance, EvalMethod};
    use crate::env::{build_tiger, fully_observed, HistoryKey, PomdpSpec};
    use crate::expert::{CorrectionMode, ExpertBundle};
    use crate::policy::{PolicySnapshot, TabularHistoryPolicy};

    fn h0() -> HistoryKey {
        HistoryKey::initial(0)
    }

    fn h1() -> HistoryKey {
        HistoryKey::initial(0).extended(1, 2)
    }

    fn flat(grad: &Gradient, keys: &[HistoryKey], n: usize) -> Vec<f64> {
        keys.iter().flat_map(|k| grad.get(k).cloned().unwrap_or_else(|| vec![0.0; n])).collect()
    }

    fn dataset_for(spec: &PomdpSpec, demos: usize, seed: u64) -> CorrectionDataset {
        let bundle = ExpertBundle::new(Arc::new(spec.clone()), 0.0).unwrap();
        CorrectionDataset::new(spec.num_actions, collect_demos(&bundle, demos, seed).unwrap()).unwrap()
    }

    fn random_policy(n: usize, keys: &[HistoryKey], seed: u64) -> TabularHistoryPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = TabularHistoryPolicy::new(n, 8);
        for k in keys {
            p.set_logits(k.clone(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        }
        p
    }

    #[test]
    fn sft_matches_empirical_frequency() {
        let labels = vec![(h0(), 0), (h0(), 0), (h0(), 1)];
        let p = fit_sft_labels(&labels, 3, 4).unwrap();
        let d = p.action_distribution(&h0());
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(d[2] < 1e-15);
    }

    #[test]
    fn sft_point_mass() {
        let labels = vec![(h1(), 2); 5];
        let d = fit_sft_labels(&labels, 3, 4).unwrap().action_distribution(&h1());
        assert!((d[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sft_reaches_entropy_floor_and_no_perturbation_beats_it() {
        let labels = vec![(h0(), 0), (h0(), 1), (h0(), 1), (h1(), 2), (h1(), 0), (h1(), 2), (h1(), 2)];
        let fit = fit_sft_labels(&labels, 3, 4).unwrap();
        let best = total_cross_entropy(&fit, &labels);
        assert!((best - entropy_floor(&labels, 3, 4)).abs() < 1e-8);
        let keys = vec![h0(), h1()];
        let base = fit.flatten(&keys);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let moved: Vec<f64> = base.iter().map(|x| x + rng.random_range(-0.5..0.5)).collect();
            assert!(total_cross_entropy(&fit.with_flat(&keys, &moved), &labels) >= best - 1e-12);
        }
    }

    #[test]
    fn sft_gradient_descent_agrees_with_closed_form() {
        let labels = vec![(h0(), 0), (h0(), 1), (h0(), 1), (h0(), 2), (h1(), 2), (h1(), 0), (h1(), 2), (h1(), 1)];
        let closed = fit_sft_labels(&labels, 3, 4).unwrap();
        let gd = fit_sft_gradient(&labels, 3, 4, 2.0, 5000).unwrap();
        for h in [h0(), h1()] {
            let (a, b) = (closed.action_distribution(&h), gd.action_distribution(&h));
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-3, "{a:?} vs {b:?}");
            }
        }
        let m = labels.len() as f64;
        let gap = (total_cross_entropy(&gd, &labels) - entropy_floor(&labels, 3, 4)) / m;
        assert!(gap.abs() < 1e-8, "{gap}");
    }

    #[test]
    fn sft_gradient_is_correct() {
        let labels = vec![(h0(), 0), (h0(), 1), (h1(), 2)];
        let keys = vec![h0(), h1()];
        let p = random_policy(3, &keys, 3);
        let err = grad_check(
            |x| {
                let q = p.with_flat(&keys, x);
                let (l, g) = sft_loss_and_grad(&q, &labels);
                (l, flat(&g, &keys, 3))
            },
            &p.flatten(&keys),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    fn pairs() -> Vec<PreferencePair> {
        vec![
            PreferencePair { history: h0(), preferred: 0, dispreferred: 1 },
            PreferencePair { history: h0(), preferred: 2, dispreferred: 1 },
            PreferencePair { history: h1(), preferred: 1, dispreferred: 0 },
        ]
    }

    #[test]
    fn dpo_starts_at_ln2() {
        let p = random_policy(3, &[h0(), h1()], 5);
        let (l, _) = dpo_loss_and_grad(&p, &p, &pairs(), 0.7);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn dpo_gradient_is_correct() {
        let keys = vec![h0(), h1()];
        let reference = random_policy(3, &keys, 6);
        let p = random_policy(3, &keys, 7);
        let err = grad_check(
            |x| {
                let q = p.with_flat(&keys, x);
                let (l, g) = dpo_loss_and_grad(&q, &reference, &pairs(), 1.3);
                (l, flat(&g, &keys, 3))
            },
            &p.flatten(&keys),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn dpo_vanishes_as_beta_shrinks() {
        let keys = vec![h0(), h1()];
        let reference = random_policy(3, &keys, 8);
        let p = random_policy(3, &keys, 9);
        let (l, g) = dpo_loss_and_grad(&p, &reference, &pairs(), 1e-9);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-8);
        assert!(g.values().flatten().all(|x| x.abs() < 1e-8));
        let snapshot = PolicySnapshot::new(0, reference.clone());
        let fitted = fit_dpo(&snapshot, &pairs(), 1e-9, 0.5, 500).unwrap();
        for h in keys {
            let (a, b) = (reference.action_distribution(&h), fitted.action_distribution(&h));
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-6), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn dpo_single_pair_moves_mass_toward_preferred() {
        let reference = PolicySnapshot::new(0, random_policy(3, &[h0()], 10));
        let pair = [PreferencePair { history: h0(), preferred: 2, dispreferred: 0 }];
        let out = fit_dpo(&reference, &pair, 0.5, 0.5, 50).unwrap();
        let (before, after) = (reference.policy.action_distribution(&h0()), out.action_distribution(&h0()));
        assert!(after[2] > before[2]);
        assert!(after[0] < before[0]);
        assert!(fit_dpo(&reference, &pair, 0.0, 0.5, 5).is_err());
    }

    fn kto_examples() -> Vec<KtoExample> {
        vec![
            KtoExample { history: h0(), action: 0, desirable: true },
            KtoExample { history: h0(), action: 1, desirable: false },
            KtoExample { history: h1(), action: 2, desirable: true },
        ]
    }

    #[test]
    fn kto_starts_at_half_lambda() {
        let p = random_policy(3, &[h0(), h1()], 12);
        let w = KtoWeights { beta: 0.4, lambda_desirable: 1.5, lambda_undesirable: 0.8 };
        assert_eq!(kto_reference_shift(&p, &p, &kto_examples()), 0.0);
        let (l, _) = kto_loss_and_grad(&p, &p, &kto_examples(), w, 0.0);
        assert!((l - (1.5 / 2.0 * 2.0 + 0.8 / 2.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kto_gradient_is_correct_with_fixed_shift() {
        let keys = vec![h0(), h1()];
        let reference = random_policy(3, &keys, 13);
        let p = random_policy(3, &keys, 14);
        let w = KtoWeights { beta: 1.1, lambda_desirable: 1.0, lambda_undesirable: 1.7 };
        let z0 = kto_reference_shift(&p, &reference, &kto_examples());
        let err = grad_check(
            |x| {
                let q = p.with_flat(&keys, x);
                let (l, g) = kto_loss_and_grad(&q, &reference, &kto_examples(), w, z0);
                (l, flat(&g, &keys, 3))
            },
            &p.flatten(&keys),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn kto_raises_desirable_and_lowers_undesirable() {
        let reference = PolicySnapshot::new(0, random_policy(3, &[h0(), h1()], 15));
        let w = KtoWeights { beta: 1.0, lambda_desirable: 1.0, lambda_undesirable: 1.0 };
        let out = fit_kto(&reference, &kto_examples(), w, 0.5, 100).unwrap();
        let (b0, a0) = (reference.policy.action_distribution(&h0()), out.action_distribution(&h0()));
        assert!(a0[0] > b0[0] && a0[1] < b0[1]);
        assert!(out.action_distribution(&h1())[2] > reference.policy.action_distribution(&h1())[2]);
    }

    #[test]
    fn updates_ignore_example_order() {
        let labels = vec![(h0(), 0), (h1(), 1), (h0(), 2), (h1(), 1), (h0(), 0)];
        let mut rev = labels.clone();
        rev.reverse();
        let (a, b) =
            (fit_sft_gradient(&labels, 3, 4, 0.7, 40).unwrap(), fit_sft_gradient(&rev, 3, 4, 0.7, 40).unwrap());
        assert_eq!(a, b);

        let reference = PolicySnapshot::new(0, random_policy(3, &[h0(), h1()], 16));
        let mut shuffled = pairs();
        shuffled.rotate_left(1);
        assert_eq!(
            fit_dpo(&reference, &pairs(), 0.8, 0.3, 30).unwrap(),
            fit_dpo(&reference, &shuffled, 0.8, 0.3, 30).unwrap()
        );

        let w = KtoWeights { beta: 1.0, lambda_desirable: 1.0, lambda_undesirable: 2.0 };
        let mut ex = kto_examples();
        ex.reverse();
        assert_eq!(
            fit_kto(&reference, &kto_examples(), w, 0.3, 30).unwrap(),
            fit_kto(&reference, &ex, w, 0.3, 30).unwrap()
        );
    }

    #[test]
    fn privileged_student_counts_state_actions() {
        let spec = build_tiger(0.85, -1.0, 10.0, -100.0, 2).unwrap();
        let data = dataset_for(&spec, 30, 1);
        let student = fit_privileged_student(&data).unwrap();
        for ((t, s), d) in &student.table {
            let n = data.state_labels().iter().filter(|(tt, ss, _)| tt == t && ss == s).count() as f64;
            for (a, p) in d.iter().enumerate() {
                let c = data.state_labels().iter().filter(|x| **x == (*t, *s, a)).count() as f64;
                assert!((p - c / n).abs() < 1e-12);
            }
        }
        assert_eq!(student.fallback.as_deref(), Some(&[1.0 / 3.0; 3][..]));
    }

    fn tiger_config(teacher: TeacherKind) -> LeapConfig {
        LeapConfig { teacher, num_demos: 20, truncation_window: 3, ..LeapConfig::new(2, 16, 42) }
    }

    #[test]
    fn run_produces_one_snapshot_per_iterate_and_is_deterministic() {
        let spec = build_tiger(0.85, -1.0, 10.0, -100.0, 3).unwrap();
        let config = tiger_config(TeacherKind::Constrained { delta: 0.05 });
        let run = || leap_run(&spec, &config, dataset_for(&spec, config.num_demos, config.root_seed)).unwrap();
        let a = run();
        assert_eq!(a.snapshots.len(), 3);
        assert_eq!(a.report.rows.len(), 3);
        assert_eq!(a.dataset.iterations(), 2);
        assert!((1..=2).contains(&a.report.selection.best_iteration));
        let b = run();
        assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert_eq!(x.policy, y.policy);
        }
        for row in &a.report.rows {
            assert!((row.theorem1_slack - row.recomputed_slack()).abs() < 1e-9);
        }
    }

    #[test]
    fn every_update_rule_and_teacher_runs() {
        let spec = build_tiger(0.85, -1.0, 10.0, -100.0, 2).unwrap();
        let rules = [
            UpdateRule::Sft,
            UpdateRule::Dpo { beta: 0.5 },
            UpdateRule::Kto { beta: 0.5, lambda_d: 1.0, lambda_u: 1.0 },
        ];
        let teachers = [
            TeacherKind::Privileged,
            TeacherKind::Nonprivileged,
            TeacherKind::Sampled { lambda: 1.0, num_samples: 4 },
            TeacherKind::SelfTeacher,
        ];
        for rule in rules {
            for teacher in teachers {
                let config = LeapConfig {
                    update_rule: rule,
                    optimization_steps: 30,
                    mode: CorrectionMode::AllSteps,
                    ..tiger_config(teacher)
                };
                let out = leap_run(&spec, &config, dataset_for(&spec, 10, 3)).unwrap();
                assert_eq!(out.snapshots.len(), 3, "{rule:?} {teacher:?}");
            }
        }
    }

    #[test]
    fn fully_observed_student_recovers_expert_return() {
        let spec = fully_observed(&build_tiger(0.85, -1.0, 10.0, -100.0, 3).unwrap()).unwrap();
        let config = LeapConfig { num_demos: 60, ..tiger_config(TeacherKind::Privileged) };
        let out = leap_run(&spec, &config, dataset_for(&spec, config.num_demos, 5)).unwrap();
        let bundle = ExpertBundle::new(Arc::new(spec.clone()), 0.0).unwrap();
        let je = privileged_performance(&spec, &bundle.privileged).j;
        let j1 =
            evaluate_performance(&spec, out.snapshots[1].policy.as_ref(), EvalMethod::Exact { cap: 10_000 }).unwrap().j;
        assert!((j1 - je).abs() < 1e-6, "{j1} vs {je}");
        assert!(out.report.rows[1].realizability_gap.abs() < 1e-12);
    }

    #[test]
    fn select_best_breaks_ties_toward_earliest() {
        let spec = build_tiger(0.85, -1.0, 10.0, -100.0, 2).unwrap();
        let p = random_policy(3, &[], 1);
        let snaps: Vec<_> = (0..3).map(|i| PolicySnapshot::new(i, p.clone())).collect();
        assert_eq!(select_best(&snaps, &spec, &[1, 2, 3, 4]).unwrap().iteration, 0);
        assert!(select_best(&[], &spec, &[1]).is_err());
    }

    #[test]
    fn config_round_trips_and_validates() {
        let config = LeapConfig {
            teacher: TeacherKind::SelfTeacher,
            update_rule: UpdateRule::Kto { beta: 0.1, lambda_d: 1.0, lambda_u: 1.5 },
            ..LeapConfig::new(3, 4, 9)
        };
        let text = serde_json::to_string(&config).unwrap();
        assert!(text.contains("\"self\""));
        assert_eq!(serde_json::from_str::<LeapConfig>(&text).unwrap(), config);
        assert_eq!(SeedSet::Range { start: 5, count: 3 }.seeds(), vec![5, 6, 7]);
        for bad in [
            LeapConfig { num_iterations: 0, ..config.clone() },
            LeapConfig { update_rule: UpdateRule::Dpo { beta: 0.0 }, ..config.clone() },
            LeapConfig { teacher: TeacherKind::Constrained { delta: -0.1 }, ..config.clone() },
            LeapConfig { validation_seeds: SeedSet::List(vec![]), ..config.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn sft_distributions_are_frequencies(actions in proptest::collection::vec(0usize..4, 1..30)) {
            let labels: Vec<_> = actions.iter().map(|a| (h0(), *a)).collect();
            let d = fit_sft_labels(&labels, 4, 2).unwrap().action_distribution(&h0());
            for a in 0..4 {
                let f = actions.iter().filter(|x| **x == a).count() as f64 / actions.len() as f64;
                prop_assert!((d[a] - f).abs() < 1e-12);
            }
        }
    }
}
