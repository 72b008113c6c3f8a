//! Tabular SFT, DPO and KTO updates.
//!
//! Every loss is a mean over its examples. Examples are sorted before any
//! accumulation, so results do not depend on input order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::env::HistoryKey;
use crate::error::{invalid, Result};
use crate::math::{kl, neg_log_sigmoid, sigmoid};
use crate::policy::{PolicySnapshot, TabularHistoryPolicy};

/// Logit given to actions never seen at a key by the closed-form fit.
pub const UNSEEN_LOGIT: f64 = -40.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PreferencePair {
    pub history: HistoryKey,
    pub preferred: usize,
    pub dispreferred: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KtoExample {
    pub history: HistoryKey,
    pub action: usize,
    pub desirable: bool,
}

pub type Gradient = BTreeMap<HistoryKey, Vec<f64>>;

fn add_to(grad: &mut Gradient, key: HistoryKey, n: usize, f: impl Fn(usize) -> f64) {
    let row = grad.entry(key).or_insert_with(|| vec![0.0; n]);
    for (i, g) in row.iter_mut().enumerate() {
        *g += f(i);
    }
}

fn descend(policy: &mut TabularHistoryPolicy, grad: &Gradient, lr: f64) {
    for (key, g) in grad {
        for (l, d) in policy.logits_mut(key).iter_mut().zip(g) {
            *l -= lr * d;
        }
    }
}

fn check_labels(labels: &[(HistoryKey, usize)], num_actions: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(invalid("cannot fit a policy to an empty dataset"));
    }
    if labels.iter().any(|(_, a)| *a >= num_actions) {
        return Err(invalid("label action out of range"));
    }
    Ok(())
}

/// Mean cross-entropy and its gradient with respect to the touched keys.
pub fn sft_loss_and_grad(policy: &TabularHistoryPolicy, labels: &[(HistoryKey, usize)]) -> (f64, Gradient) {
    let m = labels.len().max(1) as f64;
    let n = policy.num_actions();
    let mut sorted: Vec<_> = labels.iter().map(|(h, a)| (policy.key(h), *a)).collect();
    sorted.sort();
    let mut loss = 0.0;
    let mut grad = Gradient::new();
    for (key, a) in sorted {
        let p = policy.distribution_for_key(&key);
        loss -= policy.log_prob_for_key(&key, a);
        add_to(&mut grad, key, n, |i| (p[i] - (i == a) as u8 as f64) / m);
    }
    (loss / m, grad)
}

/// Total cross-entropy `−Σ log π(a|h)`, the quantity the closed-form fit minimises.
pub fn total_cross_entropy(policy: &TabularHistoryPolicy, labels: &[(HistoryKey, usize)]) -> f64 {
    let mut sorted: Vec<_> = labels.iter().map(|(h, a)| (policy.key(h), *a)).collect();
    sorted.sort();
    -sorted.iter().map(|(k, a)| policy.log_prob_for_key(k, *a)).sum::<f64>()
}

/// `Σ_h n_h H(empirical_h)`: the least total cross-entropy any tabular
/// policy with this window can reach.
pub fn entropy_floor(labels: &[(HistoryKey, usize)], num_actions: usize, truncation_window: usize) -> f64 {
    let mut counts: BTreeMap<HistoryKey, Vec<f64>> = BTreeMap::new();
    for (h, a) in labels {
        counts.entry(h.truncated(truncation_window)).or_insert_with(|| vec![0.0; num_actions])[*a] += 1.0;
    }
    counts
        .values()
        .map(|c| {
            let n: f64 = c.iter().sum();
            -c.iter().filter(|x| **x > 0.0).map(|x| x * (x / n).ln()).sum::<f64>()
        })
        .sum()
}

/// Closed-form fit: each key's distribution is the empirical action frequency.
pub fn fit_sft_labels(
    labels: &[(HistoryKey, usize)],
    num_actions: usize,
    truncation_window: usize,
) -> Result<TabularHistoryPolicy> {
    check_labels(labels, num_actions)?;
    let mut counts: BTreeMap<HistoryKey, Vec<f64>> = BTreeMap::new();
    for (h, a) in labels {
        counts.entry(h.truncated(truncation_window)).or_insert_with(|| vec![0.0; num_actions])[*a] += 1.0;
    }
    let mut policy = TabularHistoryPolicy::new(num_actions, truncation_window);
    for (key, c) in counts {
        let n: f64 = c.iter().sum();
        let logits = c.iter().map(|x| if *x > 0.0 { (x / n).ln() } else { UNSEEN_LOGIT }).collect();
        policy.set_logits(key, logits)?;
    }
    Ok(policy)
}

/// Full-batch gradient descent on the mean cross-entropy from zero logits.
pub fn fit_sft_gradient(
    labels: &[(HistoryKey, usize)],
    num_actions: usize,
    truncation_window: usize,
    lr: f64,
    steps: usize,
) -> Result<TabularHistoryPolicy> {
    check_labels(labels, num_actions)?;
    let mut policy = TabularHistoryPolicy::new(num_actions, truncation_window);
    for _ in 0..steps {
        let (_, g) = sft_loss_and_grad(&policy, labels);
        descend(&mut policy, &g, lr);
    }
    Ok(policy)
}

fn canonical_pairs(reference: &TabularHistoryPolicy, pairs: &[PreferencePair]) -> Vec<PreferencePair> {
    let mut sorted: Vec<_> =
        pairs.iter().map(|p| PreferencePair { history: reference.key(&p.history), ..p.clone() }).collect();
    sorted.sort();
    sorted
}

/// Mean `−log σ(β[(log π(a_w) − log π_ref(a_w)) − (log π(a_l) − log π_ref(a_l))])`.
pub fn dpo_loss_and_grad(
    policy: &TabularHistoryPolicy,
    reference: &TabularHistoryPolicy,
    pairs: &[PreferencePair],
    beta: f64,
) -> (f64, Gradient) {
    let m = pairs.len().max(1) as f64;
    let n = policy.num_actions();
    let mut loss = 0.0;
    let mut grad = Gradient::new();
    for p in canonical_pairs(policy, pairs) {
        let k = &p.history;
        let margin = (policy.log_prob_for_key(k, p.preferred) - reference.log_prob_for_key(k, p.preferred))
            - (policy.log_prob_for_key(k, p.dispreferred) - reference.log_prob_for_key(k, p.dispreferred));
        let z = beta * margin;
        loss += neg_log_sigmoid(z);
        let scale = -(1.0 - sigmoid(z)) * beta / m;
        add_to(&mut grad, p.history.clone(), n, |i| {
            scale * ((i == p.preferred) as u8 as f64 - (i == p.dispreferred) as u8 as f64)
        });
    }
    (loss / m, grad)
}

pub fn fit_dpo(
    reference: &PolicySnapshot,
    pairs: &[PreferencePair],
    beta: f64,
    lr: f64,
    steps: usize,
) -> Result<TabularHistoryPolicy> {
    if !(beta > 0.0) {
        return Err(invalid(format!("beta must be positive, got {beta}")));
    }
    let n = reference.policy.num_actions();
    if let Some(p) = pairs.iter().find(|p| p.preferred == p.dispreferred || p.preferred >= n || p.dispreferred >= n) {
        return Err(invalid(format!("invalid preference pair {p:?}")));
    }
    let base = reference.policy.as_ref();
    let mut policy = base.clone();
    for _ in 0..steps {
        let (_, g) = dpo_loss_and_grad(&policy, base, pairs, beta);
        descend(&mut policy, &g, lr);
    }
    Ok(policy)
}

/// `z₀ = mean over the distinct keys of KL(π(·|k) ‖ π_ref(·|k))`.
pub fn kto_reference_shift(
    policy: &TabularHistoryPolicy,
    reference: &TabularHistoryPolicy,
    examples: &[KtoExample],
) -> f64 {
    let keys: BTreeSet<HistoryKey> = examples.iter().map(|e| policy.key(&e.history)).collect();
    if keys.is_empty() {
        return 0.0;
    }
    keys.iter().map(|k| kl(&policy.distribution_for_key(k), &reference.distribution_for_key(k))).sum::<f64>()
        / keys.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KtoWeights {
    pub beta: f64,
    pub lambda_desirable: f64,
    pub lambda_undesirable: f64,
}

/// Mean unpaired loss with the reference shift `z0` held fixed:
/// desirable `λ_D (1 − σ(β(r − z0)))`, undesirable `λ_U (1 − σ(β(z0 − r)))`,
/// where `r = log π(a|h) − log π_ref(a|h)`.
pub fn kto_loss_and_grad(
    policy: &TabularHistoryPolicy,
    reference: &TabularHistoryPolicy,
    examples: &[KtoExample],
    w: KtoWeights,
    z0: f64,
) -> (f64, Gradient) {
    let m = examples.len().max(1) as f64;
    let n = policy.num_actions();
    let mut sorted: Vec<_> =
        examples.iter().map(|e| KtoExample { history: policy.key(&e.history), ..e.clone() }).collect();
    sorted.sort();
    let mut loss = 0.0;
    let mut grad = Gradient::new();
    for e in sorted {
        let k = &e.history;
        let r = policy.log_prob_for_key(k, e.action) - reference.log_prob_for_key(k, e.action);
        // d(term)/dr
        let slope = if e.desirable {
            let s = sigmoid(w.beta * (r - z0));
            loss += w.lambda_desirable * (1.0 - s);
            -w.lambda_desirable * w.beta * s * (1.0 - s)
        } else {
            let s = sigmoid(w.beta * (z0 - r));
            loss += w.lambda_undesirable * (1.0 - s);
            w.lambda_undesirable * w.beta * s * (1.0 - s)
        };
        let p = policy.distribution_for_key(k);
        add_to(&mut grad, e.history.clone(), n, |i| slope * ((i == e.action) as u8 as f64 - p[i]) / m);
    }
    (loss / m, grad)
}

pub fn fit_kto(
    reference: &PolicySnapshot,
    examples: &[KtoExample],
    weights: KtoWeights,
    lr: f64,
    steps: usize,
) -> Result<TabularHistoryPolicy> {
    if !(weights.beta > 0.0) {
        return Err(invalid(format!("beta must be positive, got {}", weights.beta)));
    }
    if examples.iter().any(|e| e.action >= reference.policy.num_actions()) {
        return Err(invalid("example action out of range"));
    }
    let base = reference.policy.as_ref();
    let mut policy = base.clone();
    for _ in 0..steps {
        let z0 = kto_reference_shift(&policy, base, examples);
        let (_, g) = kto_loss_and_grad(&policy, base, examples, weights, z0);
        descend(&mut policy, &g, lr);
    }
    Ok(policy)
}
