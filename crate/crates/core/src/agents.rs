//! Reference policies: uniform random, epsilon-greedy and disjoint LinUCB.
//!
//! Ties are broken by lexicographic item id everywhere, and all randomness
//! comes from the stream handed to [`Policy::act`].

use std::collections::BTreeMap;

use thiserror::Error;

use crate::env::{Action, State};
use crate::ids::ItemId;
use crate::linalg::{dot, Cholesky};
use crate::rng::Xoshiro256StarStar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("state has no candidate items")]
    EmptyCandidates,

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown policy `{0}` (expected random, epsilon-greedy or linucb)")]
    UnknownPolicy(String),

    #[error("design matrix for item `{0}` lost positive definiteness")]
    NotPositiveDefinite(ItemId),
}

/// An agent acting in an environment.
pub trait Policy: Send {
    fn name(&self) -> &str;

    /// Hyperparameters recorded alongside results.
    fn hyperparameters(&self) -> BTreeMap<String, f64>;

    /// Chooses `min(k, |candidates|)` distinct candidates.
    fn act(&mut self, state: &State, rng: &mut Xoshiro256StarStar) -> Result<Action, AgentError>;

    /// Folds the observed reward for `action` taken in `state` into the
    /// policy. Learning agents update on the first slot.
    fn update(&mut self, state: &State, action: &Action, reward: f64) -> Result<(), AgentError>;
}

/// A policy that maps a context to one item without randomness; the target
/// of the off-policy estimators.
pub trait DeterministicPolicy {
    fn decide(&self, context: &State) -> Option<ItemId>;
}

/// Wraps a closure as a [`DeterministicPolicy`].
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&State) -> Option<ItemId>> DeterministicPolicy for FnPolicy<F> {
    fn decide(&self, context: &State) -> Option<ItemId> {
        (self.0)(context)
    }
}

/// Always recommends the same item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstantPolicy(pub ItemId);

impl DeterministicPolicy for ConstantPolicy {
    fn decide(&self, _context: &State) -> Option<ItemId> {
        Some(self.0.clone())
    }
}

fn candidates_of(state: &State) -> Result<Vec<ItemId>, AgentError> {
    if state.candidates.is_empty() {
        return Err(AgentError::EmptyCandidates);
    }
    Ok(state.candidates.iter().cloned().collect())
}

/// Top `k` items by descending score, ties broken by ascending id.
fn top_k(mut scored: Vec<(f64, ItemId)>, k: usize) -> Vec<ItemId> {
    scored.sort_by(|(sa, ia), (sb, ib)| sb.total_cmp(sa).then_with(|| ia.cmp(ib)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

fn slate(items: Vec<ItemId>) -> Action {
    Action::new(items).expect("distinct non-empty candidates")
}

fn check_slate_k(slate_k: usize) -> Result<(), AgentError> {
    if slate_k == 0 {
        return Err(AgentError::InvalidParameter("slate size must be at least 1".into()));
    }
    Ok(())
}

// ── Random ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    slate_k: usize,
}

impl RandomPolicy {
    pub fn new(slate_k: usize) -> Result<Self, AgentError> {
        check_slate_k(slate_k)?;
        Ok(Self { slate_k })
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn hyperparameters(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("slate_k".to_string(), self.slate_k as f64)])
    }

    fn act(&mut self, state: &State, rng: &mut Xoshiro256StarStar) -> Result<Action, AgentError> {
        let items = candidates_of(state)?;
        Ok(slate(rng.sample_distinct(&items, self.slate_k)))
    }

    fn update(&mut self, _: &State, _: &Action, _: f64) -> Result<(), AgentError> {
        Ok(())
    }
}

// ── Epsilon-greedy ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct EpsilonGreedy {
    epsilon: f64,
    slate_k: usize,
    /// Running mean reward and count per item; unseen items count as 0.
    estimates: BTreeMap<ItemId, (f64, u64)>,
}

impl EpsilonGreedy {
    pub fn new(epsilon: f64, slate_k: usize) -> Result<Self, AgentError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(AgentError::InvalidParameter(format!("epsilon must be in [0, 1], got {epsilon}")));
        }
        check_slate_k(slate_k)?;
        Ok(Self {
            epsilon,
            slate_k,
            estimates: BTreeMap::new(),
        })
    }

    /// Seeds the running means, e.g. from a previous run.
    pub fn with_estimates(mut self, estimates: impl IntoIterator<Item = (ItemId, f64)>) -> Self {
        self.estimates = estimates.into_iter().map(|(i, v)| (i, (v, 0))).collect();
        self
    }

    pub fn estimate(&self, item: &ItemId) -> f64 {
        self.estimates.get(item).map_or(0.0, |(m, _)| *m)
    }

    fn greedy(&self, items: Vec<ItemId>) -> Vec<ItemId> {
        let scored = items.into_iter().map(|i| (self.estimate(&i), i)).collect();
        top_k(scored, self.slate_k)
    }
}

impl Policy for EpsilonGreedy {
    fn name(&self) -> &str {
        "epsilon-greedy"
    }

    fn hyperparameters(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("epsilon".to_string(), self.epsilon),
            ("slate_k".to_string(), self.slate_k as f64),
        ])
    }

    fn act(&mut self, state: &State, rng: &mut Xoshiro256StarStar) -> Result<Action, AgentError> {
        let items = candidates_of(state)?;
        // One draw per decision, explored or not.
        let explore = rng.bernoulli(self.epsilon);
        Ok(slate(if explore {
            rng.sample_distinct(&items, self.slate_k)
        } else {
            self.greedy(items)
        }))
    }

    fn update(&mut self, _: &State, action: &Action, reward: f64) -> Result<(), AgentError> {
        let (mean, count) = self.estimates.entry(action.first().clone()).or_insert((0.0, 0));
        *count += 1;
        *mean += (reward - *mean) / *count as f64;
        Ok(())
    }
}

impl DeterministicPolicy for EpsilonGreedy {
    /// The greedy choice, ignoring exploration.
    fn decide(&self, context: &State) -> Option<ItemId> {
        let items: Vec<ItemId> = context.candidates.iter().cloned().collect();
        self.greedy(items).into_iter().next()
    }
}

// ── LinUCB ──────────────────────────────────────────────────────────────

/// Per-item ridge statistics: `A = I + Σ x xᵀ`, `b = Σ r x`.
#[derive(Debug, Clone)]
struct Arm {
    a: Vec<f64>,
    b: Vec<f64>,
    chol: Cholesky,
}

impl Arm {
    fn fresh(d: usize) -> Self {
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = 1.0;
        }
        let chol = Cholesky::factor(&a, d).expect("identity is positive definite");
        Self { a, b: vec![0.0; d], chol }
    }
}

/// Disjoint LinUCB: `score_i(x) = xᵀθ_i + α √(xᵀ A_i⁻¹ x)`, `θ_i = A_i⁻¹ b_i`.
///
/// The Cholesky factor of each `A_i` is recomputed after every update, so
/// scores come from a fresh factorization rather than an accumulated
/// inverse.
#[derive(Debug, Clone)]
pub struct LinUcb {
    alpha: f64,
    dimension: usize,
    slate_k: usize,
    arms: BTreeMap<ItemId, Arm>,
}

impl LinUcb {
    pub fn new(alpha: f64, dimension: usize, slate_k: usize) -> Result<Self, AgentError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(AgentError::InvalidParameter(format!("alpha must be non-negative, got {alpha}")));
        }
        if dimension == 0 {
            return Err(AgentError::InvalidParameter("dimension must be at least 1".into()));
        }
        check_slate_k(slate_k)?;
        Ok(Self {
            alpha,
            dimension,
            slate_k,
            arms: BTreeMap::new(),
        })
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), AgentError> {
        if x.len() != self.dimension {
            return Err(AgentError::DimensionMismatch {
                expected: self.dimension,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `(A_i, b_i)` for an item that has been updated at least once.
    pub fn arm(&self, item: &ItemId) -> Option<(&[f64], &[f64])> {
        self.arms.get(item).map(|a| (a.a.as_slice(), a.b.as_slice()))
    }

    pub fn theta(&self, item: &ItemId) -> Vec<f64> {
        match self.arms.get(item) {
            Some(arm) => arm.chol.solve(&arm.b),
            None => vec![0.0; self.dimension],
        }
    }

    /// Upper confidence score of `item` at features `x`.
    pub fn score(&self, item: &ItemId, x: &[f64]) -> Result<f64, AgentError> {
        self.check_dim(x)?;
        Ok(match self.arms.get(item) {
            Some(arm) => {
                let theta = arm.chol.solve(&arm.b);
                dot(x, &theta) + self.alpha * arm.chol.inverse_quadratic_form(x).sqrt()
            }
            // A = I, b = 0.
            None => self.alpha * dot(x, x).sqrt(),
        })
    }

    fn ranked(&self, state: &State) -> Result<Vec<ItemId>, AgentError> {
        self.check_dim(&state.features)?;
        let scored = candidates_of(state)?
            .into_iter()
            .map(|i| self.score(&i, &state.features).map(|s| (s, i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(top_k(scored, self.slate_k))
    }
}

impl Policy for LinUcb {
    fn name(&self) -> &str {
        "linucb"
    }

    fn hyperparameters(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("alpha".to_string(), self.alpha),
            ("dimension".to_string(), self.dimension as f64),
            ("slate_k".to_string(), self.slate_k as f64),
        ])
    }

    fn act(&mut self, state: &State, _rng: &mut Xoshiro256StarStar) -> Result<Action, AgentError> {
        Ok(slate(self.ranked(state)?))
    }

    fn update(&mut self, state: &State, action: &Action, reward: f64) -> Result<(), AgentError> {
        let x = &state.features;
        self.check_dim(x)?;
        let d = self.dimension;
        let item = action.first().clone();
        let arm = self.arms.entry(item.clone()).or_insert_with(|| Arm::fresh(d));
        for i in 0..d {
            for j in 0..d {
                arm.a[i * d + j] += x[i] * x[j];
            }
            arm.b[i] += reward * x[i];
        }
        arm.chol = Cholesky::factor(&arm.a, d).ok_or(AgentError::NotPositiveDefinite(item))?;
        Ok(())
    }
}

impl DeterministicPolicy for LinUcb {
    fn decide(&self, context: &State) -> Option<ItemId> {
        self.ranked(context).ok()?.into_iter().next()
    }
}

// ── Factory ─────────────────────────────────────────────────────────────

/// Builds a reference policy by name from `key=value` parameters.
///
/// - `random`: no parameters
/// - `epsilon-greedy`: `epsilon` (default 0.1)
/// - `linucb`: `alpha` (default 1.0)
pub fn make_policy(
    name: &str,
    params: &BTreeMap<String, String>,
    dimension: usize,
    slate_k: usize,
) -> Result<Box<dyn Policy>, AgentError> {
    let allowed: &[&str] = match name {
        "random" => &[],
        "epsilon-greedy" => &["epsilon"],
        "linucb" => &["alpha"],
        other => return Err(AgentError::UnknownPolicy(other.to_string())),
    };
    if let Some(key) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(AgentError::InvalidParameter(format!("`{name}` does not take `{key}`")));
    }
    let number = |key: &str, default: f64| -> Result<f64, AgentError> {
        match params.get(key) {
            None => Ok(default),
            Some(raw) => crate::data::parse_decimal(raw)
                .ok_or_else(|| AgentError::InvalidParameter(format!("`{key}` must be a number, got `{raw}`"))),
        }
    };
    Ok(match name {
        "random" => Box::new(RandomPolicy::new(slate_k)?),
        "epsilon-greedy" => Box::new(EpsilonGreedy::new(number("epsilon", 0.1)?, slate_k)?),
        _ => Box::new(LinUcb::new(number("alpha", 1.0)?, dimension, slate_k)?),
    })
}

/// Parses `k=v,k=v` parameter lists.
pub fn parse_params(s: &str) -> Result<BTreeMap<String, String>, AgentError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| AgentError::InvalidParameter(format!("expected key=value, got `{p}`")))
        })
        .collect()
}
