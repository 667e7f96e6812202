//! The environment interface.
//!
//! An [`Environment`] composes three independent parts:
//!
//! - a [`Simulator`], which turns an action into a [`RawOutcome`] (who arrives
//!   next, what feedback the recommendation elicited),
//! - a [`RewardFunction`], which abstracts a bounded scalar from that outcome,
//! - a [`StateRepresentation`], which turns the same outcome into the
//!   [`State`] the agent observes.
//!
//! `step(a)` is exactly `x = sim.transition(a)` followed by
//! `(rf.apply(x), sr.apply(x))`; nothing else couples the parts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ItemId, UserId};

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("state representation requires context key `{key}` which the simulator never emits")]
    SchemaMismatch { key: String },

    #[error("invalid reward bounds [{min}, {max}]: {reason}")]
    InvalidBounds { min: f64, max: f64, reason: String },

    #[error("slate size must be at least 1")]
    InvalidSlateSize,

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("episode finished; call reset before stepping again")]
    EpisodeFinished,

    #[error("environment has not been reset")]
    NotReset,

    #[error("reward function emitted {value}, outside declared bounds [{min}, {max}]")]
    RewardOutOfBounds { value: f64, min: f64, max: f64 },
}

// ── Values ──────────────────────────────────────────────────────────────

/// Scalar context value carried by logged events and raw outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextValue {
    Number(f64),
    Text(String),
}

impl ContextValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            ContextValue::Number(v) => Some(*v),
            ContextValue::Text(_) => None,
        }
    }
}

pub type Context = BTreeMap<String, ContextValue>;

/// An ordered slate of distinct items.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ItemId>", into = "Vec<ItemId>")]
pub struct Action {
    slate: Vec<ItemId>,
}

impl Action {
    pub fn new(slate: Vec<ItemId>) -> Result<Self, EnvError> {
        if slate.is_empty() {
            return Err(EnvError::InvalidAction("empty slate".into()));
        }
        let mut seen = BTreeSet::new();
        for item in &slate {
            if !seen.insert(item) {
                return Err(EnvError::InvalidAction(format!(
                    "item `{item}` appears more than once in the slate"
                )));
            }
        }
        Ok(Self { slate })
    }

    pub fn single(item: ItemId) -> Self {
        Self { slate: vec![item] }
    }

    pub fn slate(&self) -> &[ItemId] {
        &self.slate
    }

    pub fn first(&self) -> &ItemId {
        &self.slate[0]
    }

    pub fn len(&self) -> usize {
        self.slate.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|`-joined item ids, the form used in trajectory files.
    pub fn joined(&self) -> String {
        self.slate
            .iter()
            .map(ItemId::as_str)
            .collect::<Vec<_>>()
            .join("|")
    }
}

impl TryFrom<Vec<ItemId>> for Action {
    type Error = EnvError;
    fn try_from(value: Vec<ItemId>) -> Result<Self, Self::Error> {
        Action::new(value)
    }
}

impl From<Action> for Vec<ItemId> {
    fn from(a: Action) -> Self {
        a.slate
    }
}

/// Everything observed after an action is applied to the simulated world.
///
/// `user`, `context` and `candidates` describe the *next* decision point;
/// `feedback` holds the previous user's per-slot reaction to `action_taken`
/// (`None` marks a missing value). The outcome produced by `reset` has no
/// action and no feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawOutcome {
    pub step_index: u64,
    pub user: UserId,
    pub action_taken: Option<Action>,
    pub feedback: Vec<Option<f64>>,
    pub context: Context,
    pub candidates: BTreeSet<ItemId>,
    pub terminal: bool,
}

/// What the agent sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub features: Vec<f64>,
    pub user: UserId,
    pub candidates: BTreeSet<ItemId>,
    pub clock: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reward(pub f64);

impl Reward {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Closed reward interval `[min, max]` with `min < max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct RewardBounds {
    min: f64,
    max: f64,
}

impl RewardBounds {
    pub fn new(min: f64, max: f64) -> Result<Self, EnvError> {
        let invalid = |reason: &str| EnvError::InvalidBounds {
            min,
            max,
            reason: reason.to_string(),
        };
        if !min.is_finite() || !max.is_finite() {
            return Err(invalid("bounds must be finite"));
        }
        if min >= max {
            return Err(invalid("lower bound must be below upper bound"));
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v <= self.max
    }

    pub fn contains_bounds(&self, other: &RewardBounds) -> bool {
        self.min <= other.min && other.max <= self.max
    }
}

impl TryFrom<[f64; 2]> for RewardBounds {
    type Error = EnvError;
    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        RewardBounds::new(v[0], v[1])
    }
}

impl From<RewardBounds> for [f64; 2] {
    fn from(b: RewardBounds) -> Self {
        [b.min, b.max]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: Reward,
    pub next_state: State,
    pub done: bool,
    /// The simulator output both components were applied to.
    pub raw: RawOutcome,
}

// ── Component traits ────────────────────────────────────────────────────

/// World dynamics. Implementations draw randomness only from streams derived
/// from the seed passed to `reset`.
pub trait Simulator: Send {
    /// Restarts the episode and returns the outcome describing the first
    /// decision point (step 0).
    fn reset(&mut self, seed: u64) -> RawOutcome;

    fn transition(&mut self, action: &Action) -> Result<RawOutcome, EnvError>;

    /// Every context key this simulator may place in a [`RawOutcome`].
    fn context_keys(&self) -> BTreeSet<String>;
}

/// A reward value together with whether clamping into bounds was needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardOutcome {
    pub reward: Reward,
    pub clamped: bool,
}

/// Pure mapping from raw outcome to bounded reward.
pub trait RewardFunction: Send + Sync {
    fn bounds(&self) -> RewardBounds;

    fn evaluate(&self, x: &RawOutcome) -> RewardOutcome;

    fn apply(&self, x: &RawOutcome) -> Reward {
        self.evaluate(x).reward
    }
}

/// A state together with the number of feature values clamped while
/// producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct StateOutcome {
    pub state: State,
    pub clamped: usize,
}

/// Pure mapping from raw outcome to agent-visible state.
pub trait StateRepresentation: Send + Sync {
    fn dimension(&self) -> usize;

    /// Context keys this representation reads.
    fn required_context_keys(&self) -> BTreeSet<String>;

    fn represent(&self, x: &RawOutcome) -> StateOutcome;

    fn apply(&self, x: &RawOutcome) -> State {
        self.represent(x).state
    }
}

// ── Environment ─────────────────────────────────────────────────────────

/// Counters for clamping that happened while stepping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvDiagnostics {
    pub steps: u64,
    pub reward_clamps: u64,
    pub feature_clamps: u64,
}

/// A steppable task environment.
#[derive(Debug, Clone)]
pub struct Environment<S, R, F> {
    simulator: S,
    reward_fn: R,
    state_repr: F,
    bounds: RewardBounds,
    slate_k: usize,
    current: Option<State>,
    done: bool,
    diagnostics: EnvDiagnostics,
}

impl<S: Simulator, R: RewardFunction, F: StateRepresentation> Environment<S, R, F> {
    /// Composes the three components.
    ///
    /// Fails if the state representation reads a context key the simulator
    /// never emits, if the bounds are not ordered, or if the reward
    /// function's own bounds escape them.
    pub fn compose(
        simulator: S,
        reward_fn: R,
        state_repr: F,
        bounds: [f64; 2],
        slate_k: usize,
    ) -> Result<Self, EnvError> {
        let bounds = RewardBounds::new(bounds[0], bounds[1])?;
        let rf_bounds = reward_fn.bounds();
        if !bounds.contains_bounds(&rf_bounds) {
            return Err(EnvError::InvalidBounds {
                min: bounds.min(),
                max: bounds.max(),
                reason: format!(
                    "reward function bounds [{}, {}] are not contained in the environment bounds",
                    rf_bounds.min(),
                    rf_bounds.max()
                ),
            });
        }
        if slate_k == 0 {
            return Err(EnvError::InvalidSlateSize);
        }
        let emitted = simulator.context_keys();
        if let Some(key) = state_repr
            .required_context_keys()
            .into_iter()
            .find(|k| !emitted.contains(k))
        {
            return Err(EnvError::SchemaMismatch { key });
        }
        Ok(Self {
            simulator,
            reward_fn,
            state_repr,
            bounds,
            slate_k,
            current: None,
            done: false,
            diagnostics: EnvDiagnostics::default(),
        })
    }

    pub fn reset(&mut self, seed: u64) -> State {
        let x = self.simulator.reset(seed);
        let out = self.state_repr.represent(&x);
        self.diagnostics.feature_clamps += out.clamped as u64;
        self.done = x.terminal;
        self.current = Some(out.state.clone());
        out.state
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let current = self.current.as_ref().ok_or(EnvError::NotReset)?;
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        self.check_action(current, action)?;
        let prev_clock = current.clock;

        let raw = self.simulator.transition(action)?;
        let reward = self.reward_fn.evaluate(&raw);
        if !self.bounds.contains(reward.reward.0) {
            return Err(EnvError::RewardOutOfBounds {
                value: reward.reward.0,
                min: self.bounds.min(),
                max: self.bounds.max(),
            });
        }
        let next = self.state_repr.represent(&raw);
        debug_assert_eq!(next.state.clock, prev_clock + 1);
        debug_assert_eq!(next.state.features.len(), self.state_repr.dimension());

        self.diagnostics.steps += 1;
        self.diagnostics.reward_clamps += u64::from(reward.clamped);
        self.diagnostics.feature_clamps += next.clamped as u64;
        self.done = raw.terminal;
        self.current = Some(next.state.clone());
        Ok(StepResult {
            reward: reward.reward,
            next_state: next.state,
            done: raw.terminal,
            raw,
        })
    }

    /// Slate length the next action must have: `min(k, |candidates|)`.
    pub fn required_slate_len(&self) -> Option<usize> {
        self.current
            .as_ref()
            .map(|s| self.slate_k.min(s.candidates.len()))
    }

    fn check_action(&self, state: &State, action: &Action) -> Result<(), EnvError> {
        let expected = self.slate_k.min(state.candidates.len());
        if action.len() != expected {
            return Err(EnvError::InvalidAction(format!(
                "slate has {} items, expected {expected}",
                action.len()
            )));
        }
        if let Some(item) = action
            .slate()
            .iter()
            .find(|i| !state.candidates.contains(*i))
        {
            return Err(EnvError::InvalidAction(format!(
                "item `{item}` is not in the candidate set"
            )));
        }
        Ok(())
    }

    pub fn current_state(&self) -> Option<&State> {
        self.current.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn bounds(&self) -> RewardBounds {
        self.bounds
    }

    pub fn slate_k(&self) -> usize {
        self.slate_k
    }

    pub fn state_dimension(&self) -> usize {
        self.state_repr.dimension()
    }

    pub fn diagnostics(&self) -> EnvDiagnostics {
        self.diagnostics
    }

    pub fn simulator(&self) -> &S {
        &self.simulator
    }

    pub fn reward_fn(&self) -> &R {
        &self.reward_fn
    }

    pub fn state_repr(&self) -> &F {
        &self.state_repr
    }
}
