//! Off-policy value estimation from logged bandit feedback.
//!
//! Estimators target a [`DeterministicPolicy`]; an event "matches" when the
//! policy picks the logged action in the logged context.
//!
//! | estimator | per-event term |
//! |-----------|----------------|
//! | replay    | `r_i` over matched events only |
//! | IPS       | `1{match} · w_i · r_i`, `w_i = min(1/p_i, clip)` |
//! | DM        | `q(c_i, π(c_i))` |
//! | DR        | `q(c_i, π(c_i)) + 1{match} · w_i · (r_i − q(c_i, a_i))` |
//!
//! Standard errors are the sample standard deviation of the terms over
//! `sqrt(n)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::DeterministicPolicy;
use crate::env::State;
use crate::ids::ItemId;
use crate::linalg::{dot, Cholesky};

/// Ridge strength used when fitting reward models.
pub const RIDGE_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpeError {
    #[error("no logged decisions")]
    NoData,

    #[error("target policy matches no logged action")]
    NoMatches,

    #[error("event {index} has no propensity")]
    MissingPropensity { index: usize },

    #[error("event {index} has propensity {value}, outside (0, 1]")]
    InvalidPropensity { index: usize, value: f64 },

    #[error("clip must be positive and finite, got {0}")]
    InvalidClip(f64),

    #[error("target policy made no choice for event {index}")]
    PolicyAbstained { index: usize },

    #[error("cannot fit reward model: {0}")]
    ModelFit(String),
}

/// One logged single-item decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDecision {
    pub context: State,
    pub action: ItemId,
    pub reward: f64,
    pub propensity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Replay,
    Ips,
    Dm,
    Dr,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Replay => "replay",
            Estimator::Ips => "ips",
            Estimator::Dm => "dm",
            Estimator::Dr => "dr",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replay" => Ok(Estimator::Replay),
            "ips" => Ok(Estimator::Ips),
            "dm" => Ok(Estimator::Dm),
            "dr" => Ok(Estimator::Dr),
            other => Err(format!("unknown estimator `{other}` (expected replay, ips, dm or dr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub estimator: Estimator,
    pub value: f64,
    pub standard_error: f64,
    /// Number of logged events used.
    pub n: usize,
    pub matched_count: usize,
    /// Weight cap, when clipping was requested. Clipping biases the
    /// estimate.
    pub clip: Option<f64>,
    pub flags: Vec<String>,
}

fn mean_and_se(terms: &[f64]) -> (f64, f64) {
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    if terms.len() < 2 {
        return (mean, 0.0);
    }
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn matches<P: DeterministicPolicy + ?Sized>(policy: &P, d: &LoggedDecision) -> bool {
    policy.decide(&d.context).as_ref() == Some(&d.action)
}

fn check_clip(clip: Option<f64>) -> Result<(), OpeError> {
    match clip {
        Some(c) if !(c.is_finite() && c > 0.0) => Err(OpeError::InvalidClip(c)),
        _ => Ok(()),
    }
}

fn importance_weight(index: usize, d: &LoggedDecision, clip: Option<f64>) -> Result<f64, OpeError> {
    let p = d.propensity.ok_or(OpeError::MissingPropensity { index })?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(OpeError::InvalidPropensity { index, value: p });
    }
    let w = 1.0 / p;
    Ok(clip.map_or(w, |c| w.min(c)))
}

fn clip_flags(clip: Option<f64>) -> Vec<String> {
    clip.map(|_| vec!["clipped".to_string()]).unwrap_or_default()
}

// ── Replay ──────────────────────────────────────────────────────────────

/// Indices of events where the policy agrees with the logged action.
pub fn matched_events<P: DeterministicPolicy + ?Sized>(log: &[LoggedDecision], policy: &P) -> Vec<usize> {
    log.iter()
        .enumerate()
        .filter(|(_, d)| matches(policy, d))
        .map(|(i, _)| i)
        .collect()
}

/// Mean reward over matched events. Unbiased only when logging was uniform
/// over the candidates, which the caller asserts; the estimate carries an
/// `assumes_uniform_logging` flag.
pub fn replay_evaluate<P: DeterministicPolicy + ?Sized>(
    log: &[LoggedDecision],
    policy: &P,
) -> Result<ValueEstimate, OpeError> {
    if log.is_empty() {
        return Err(OpeError::NoData);
    }
    let rewards: Vec<f64> = matched_events(log, policy).into_iter().map(|i| log[i].reward).collect();
    if rewards.is_empty() {
        return Err(OpeError::NoMatches);
    }
    let (value, standard_error) = mean_and_se(&rewards);
    Ok(ValueEstimate {
        estimator: Estimator::Replay,
        value,
        standard_error,
        n: log.len(),
        matched_count: rewards.len(),
        clip: None,
        flags: vec!["assumes_uniform_logging".into()],
    })
}

// ── IPS ─────────────────────────────────────────────────────────────────

pub fn ips_terms<P: DeterministicPolicy + ?Sized>(
    log: &[LoggedDecision],
    policy: &P,
    clip: Option<f64>,
) -> Result<Vec<f64>, OpeError> {
    check_clip(clip)?;
    log.iter()
        .enumerate()
        .map(|(i, d)| {
            let w = importance_weight(i, d, clip)?;
            Ok(if matches(policy, d) { w * d.reward } else { 0.0 })
        })
        .collect()
}

pub fn ips_estimate<P: DeterministicPolicy + ?Sized>(
    log: &[LoggedDecision],
    policy: &P,
    clip: Option<f64>,
) -> Result<ValueEstimate, OpeError> {
    if log.is_empty() {
        return Err(OpeError::NoData);
    }
    let terms = ips_terms(log, policy, clip)?;
    let (value, standard_error) = mean_and_se(&terms);
    Ok(ValueEstimate {
        estimator: Estimator::Ips,
        value,
        standard_error,
        n: log.len(),
        matched_count: matched_events(log, policy).len(),
        clip,
        flags: clip_flags(clip),
    })
}

// ── Reward models ───────────────────────────────────────────────────────

/// Predicted reward of `action` in `context`.
pub trait RewardModel {
    fn predict(&self, context: &State, action: &ItemId) -> f64;

    /// Fitting procedure, recorded in reports.
    fn tag(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel(pub f64);

impl RewardModel for ConstantModel {
    fn predict(&self, _: &State, _: &ItemId) -> f64 {
        self.0
    }

    fn tag(&self) -> String {
        format!("constant({})", self.0)
    }
}

/// Table lookup keyed by (user id, action); unknown pairs predict 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableModel {
    pub values: BTreeMap<(String, ItemId), f64>,
}

impl RewardModel for TableModel {
    fn predict(&self, context: &State, action: &ItemId) -> f64 {
        self.values
            .get(&(context.user.to_string(), action.clone()))
            .copied()
            .unwrap_or(0.0)
    }

    fn tag(&self) -> String {
        "table".into()
    }
}

/// Ridge regression on `context features ⊕ one-hot(action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeRewardModel {
    lambda: f64,
    context_dim: usize,
    actions: Vec<ItemId>,
    weights: Vec<f64>,
}

impl RidgeRewardModel {
    /// Closed form: `w = (XᵀX + λI)⁻¹ Xᵀy`.
    pub fn fit(log: &[LoggedDecision], lambda: f64) -> Result<Self, OpeError> {
        if log.is_empty() {
            return Err(OpeError::NoData);
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(OpeError::ModelFit(format!("lambda must be positive, got {lambda}")));
        }
        let context_dim = log[0].context.features.len();
        if let Some(i) = log.iter().position(|d| d.context.features.len() != context_dim) {
            return Err(OpeError::ModelFit(format!(
                "event {i} has {} features, expected {context_dim}",
                log[i].context.features.len()
            )));
        }
        let mut actions: Vec<ItemId> = log.iter().map(|d| d.action.clone()).collect();
        actions.sort();
        actions.dedup();
        let mut model = Self {
            lambda,
            context_dim,
            actions,
            weights: Vec::new(),
        };
        let p = model.width();
        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        for d in log {
            let x = model.design_row(&d.context, &d.action);
            for i in 0..p {
                if x[i] == 0.0 {
                    continue;
                }
                for j in 0..p {
                    gram[i * p + j] += x[i] * x[j];
                }
                rhs[i] += x[i] * d.reward;
            }
        }
        for i in 0..p {
            gram[i * p + i] += lambda;
        }
        let chol = Cholesky::factor(&gram, p)
            .ok_or_else(|| OpeError::ModelFit("regularized gram matrix is not positive definite".into()))?;
        model.weights = chol.solve(&rhs);
        Ok(model)
    }

    fn width(&self) -> usize {
        self.context_dim + self.actions.len()
    }

    fn design_row(&self, context: &State, action: &ItemId) -> Vec<f64> {
        let mut row = vec![0.0; self.width()];
        for (slot, v) in row.iter_mut().zip(&context.features) {
            *slot = *v;
        }
        if let Ok(a) = self.actions.binary_search(action) {
            row[self.context_dim + a] = 1.0;
        }
        row
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl RewardModel for RidgeRewardModel {
    fn predict(&self, context: &State, action: &ItemId) -> f64 {
        dot(&self.design_row(context, action), &self.weights)
    }

    fn tag(&self) -> String {
        format!("ridge(lambda={})", self.lambda)
    }
}

// ── DM and DR ───────────────────────────────────────────────────────────

fn target_action<P: DeterministicPolicy + ?Sized>(
    index: usize,
    d: &LoggedDecision,
    policy: &P,
) -> Result<ItemId, OpeError> {
    policy.decide(&d.context).ok_or(OpeError::PolicyAbstained { index })
}

pub fn direct_method<M: RewardModel + ?Sized, P: DeterministicPolicy + ?Sized>(
    log: &[LoggedDecision],
    model: &M,
    policy: &P,
) -> Result<ValueEstimate, OpeError> {
    if log.is_empty() {
        return Err(OpeError::NoData);
    }
    let terms = log
        .iter()
        .enumerate()
        .map(|(i, d)| Ok(model.predict(&d.context, &target_action(i, d, policy)?)))
        .collect::<Result<Vec<f64>, OpeError>>()?;
    let (value, standard_error) = mean_and_se(&terms);
    Ok(ValueEstimate {
        estimator: Estimator::Dm,
        value,
        standard_error,
        n: log.len(),
        matched_count: matched_events(log, policy).len(),
        clip: None,
        flags: vec![format!("model={}", model.tag())],
    })
}

pub fn dr_terms<M: RewardModel + ?Sized, P: DeterministicPolicy + ?Sized>(
    log: &[LoggedDecision],
    model: &M,
    policy: &P,
    clip: Option<f64>,
) -> Result<Vec<f64>, OpeError> {
    check_clip(clip)?;
    log.iter()
        .enumerate()
        .map(|(i, d)| {
            let w = importance_weight(i, d, clip)?;
            let chosen = target_action(i, d, policy)?;
            let baseline = model.predict(&d.context, &chosen);
            let correction = if chosen == d.action {
                w * (d.reward - model.predict(&d.context, &d.action))
            } else {
                0.0
            };
            Ok(baseline + correction)
        })
        .collect()
}

pub fn doubly_robust<M: RewardModel + ?Sized, P: DeterministicPolicy + ?Sized>(
    log: &[LoggedDecision],
    model: &M,
    policy: &P,
    clip: Option<f64>,
) -> Result<ValueEstimate, OpeError> {
    if log.is_empty() {
        return Err(OpeError::NoData);
    }
    let terms = dr_terms(log, model, policy, clip)?;
    let (value, standard_error) = mean_and_se(&terms);
    let mut flags = clip_flags(clip);
    flags.push(format!("model={}", model.tag()));
    Ok(ValueEstimate {
        estimator: Estimator::Dr,
        value,
        standard_error,
        n: log.len(),
        matched_count: matched_events(log, policy).len(),
        clip,
        flags,
    })
}

// ── Overlap ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub n: usize,
    pub matched_count: usize,
    pub match_rate: f64,
    /// Smallest logged propensity among matched events that carry one.
    pub min_propensity_on_matches: Option<f64>,
    /// No logged action agrees with the policy; estimates are unsupported.
    pub infeasible: bool,
}

pub fn overlap_report<P: DeterministicPolicy + ?Sized>(log: &[LoggedDecision], policy: &P) -> OverlapReport {
    let matched = matched_events(log, policy);
    let min_propensity_on_matches = matched
        .iter()
        .filter_map(|&i| log[i].propensity)
        .reduce(f64::min);
    OverlapReport {
        n: log.len(),
        matched_count: matched.len(),
        match_rate: if log.is_empty() {
            0.0
        } else {
            matched.len() as f64 / log.len() as f64
        },
        min_propensity_on_matches,
        infeasible: matched.is_empty(),
    }
}
