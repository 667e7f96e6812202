//! Dataset-backed simulator.
//!
//! World dynamics are replayed from an [`InteractionLog`] under an explicit
//! set of [`DesignAssumptions`]: who arrives next ([`ArrivalModel`]), what an
//! unobserved user-item pair yields ([`FeedbackModel`]), which items are
//! offered ([`CandidatePolicy`]) and how long an episode may run.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{mean, InteractionLog};
use crate::env::{Action, EnvError, RawOutcome, Simulator};
use crate::ids::{ItemId, UserId};
use crate::rng::Xoshiro256StarStar;

/// Label of the arrival stream derived from the reset seed.
pub const ARRIVAL_STREAM: &str = "simulator.arrival";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulatorError {
    #[error("interaction log is empty")]
    EmptyLog,

    #[error("invalid design assumptions: {0}")]
    InvalidAssumptions(String),

    #[error("frozen imputation table does not match the feedback model: {0}")]
    ImputationMismatch(String),
}

// ── Design assumptions ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    /// Users arrive exactly in log order, one arrival per event.
    SequentialReplay,
    /// Users sampled in proportion to their event counts.
    EmpiricalFrequency,
    /// Users sampled uniformly.
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationLevel {
    Global,
    User,
    Item,
}

/// What an unobserved (user, item) pair yields. Observed pairs always yield
/// their logged value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackModel {
    LookupSkip,
    LookupDefault { value: f64 },
    /// Mean feedback at the chosen level, assuming data missing at random.
    ImputeMar { level: ImputationLevel },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePolicy {
    AllItems,
    /// Items already recommended to a user this episode are withdrawn for
    /// that user.
    ExcludeConsumed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignAssumptions {
    pub arrival: ArrivalModel,
    pub feedback: FeedbackModel,
    pub candidate_policy: CandidatePolicy,
    pub episode_length_max: u64,
}

impl DesignAssumptions {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        if self.episode_length_max == 0 {
            return Err(SimulatorError::InvalidAssumptions(
                "episode_length_max must be at least 1".into(),
            ));
        }
        if let FeedbackModel::LookupDefault { value } = self.feedback {
            if !value.is_finite() {
                return Err(SimulatorError::InvalidAssumptions(
                    "default feedback must be finite".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Imputation means frozen at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputationTable {
    pub level: ImputationLevel,
    pub global_mean: f64,
    /// Per-user or per-item means; empty for the global level.
    pub means: BTreeMap<String, f64>,
}

impl ImputationTable {
    pub fn fit(log: &InteractionLog, level: ImputationLevel) -> Result<Self, SimulatorError> {
        let global_mean = log.mean_feedback().ok_or(SimulatorError::EmptyLog)?;
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for e in log.events() {
            let key = match level {
                ImputationLevel::Global => continue,
                ImputationLevel::User => e.user.as_str(),
                ImputationLevel::Item => e.item.as_str(),
            };
            groups.entry(key).or_default().push(e.feedback);
        }
        let means = groups
            .into_iter()
            .filter_map(|(k, vs)| mean(vs.into_iter()).map(|m| (k.to_string(), m)))
            .collect();
        Ok(Self {
            level,
            global_mean,
            means,
        })
    }

    /// Level mean, falling back to the global mean for unseen keys.
    pub fn value(&self, user: &UserId, item: &ItemId) -> f64 {
        let key = match self.level {
            ImputationLevel::Global => return self.global_mean,
            ImputationLevel::User => user.as_str(),
            ImputationLevel::Item => item.as_str(),
        };
        self.means.get(key).copied().unwrap_or(self.global_mean)
    }
}

// ── Simulator ───────────────────────────────────────────────────────────

/// Immutable per-log tables shared between replicas.
#[derive(Debug)]
struct Tables {
    log: Arc<InteractionLog>,
    /// Last logged feedback per (user, item).
    observed: HashMap<UserId, HashMap<ItemId, f64>>,
    users: Vec<UserId>,
    events_by_user: Vec<Vec<usize>>,
    user_of_event: Vec<usize>,
}

impl Tables {
    fn new(log: Arc<InteractionLog>) -> Self {
        let users: Vec<UserId> = log.users().iter().cloned().collect();
        let mut observed: HashMap<UserId, HashMap<ItemId, f64>> = HashMap::new();
        let mut events_by_user = vec![Vec::new(); users.len()];
        let mut user_of_event = Vec::with_capacity(log.len());
        for (idx, e) in log.events().iter().enumerate() {
            observed
                .entry(e.user.clone())
                .or_default()
                .insert(e.item.clone(), e.feedback);
            let u = users.binary_search(&e.user).expect("user indexed");
            events_by_user[u].push(idx);
            user_of_event.push(u);
        }
        Self {
            log,
            observed,
            users,
            events_by_user,
            user_of_event,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogSimulator {
    tables: Arc<Tables>,
    assumptions: DesignAssumptions,
    imputation: Option<ImputationTable>,
    rng: Xoshiro256StarStar,
    started: bool,
    cursor: usize,
    clock: u64,
    /// Event index describing the current decision point.
    current: usize,
    consumed: HashMap<usize, BTreeSet<ItemId>>,
    terminal: bool,
}

/// Builds a simulator, fitting imputation means when the feedback model
/// needs them.
pub fn build_simulator(
    log: impl Into<Arc<InteractionLog>>,
    assumptions: DesignAssumptions,
) -> Result<LogSimulator, SimulatorError> {
    let log = log.into();
    if log.is_empty() {
        return Err(SimulatorError::EmptyLog);
    }
    let imputation = match assumptions.feedback {
        FeedbackModel::ImputeMar { level } => Some(ImputationTable::fit(&log, level)?),
        _ => None,
    };
    LogSimulator::with_imputation(log, assumptions, imputation)
}

impl LogSimulator {
    /// Builds a simulator from previously frozen imputation means.
    pub fn with_imputation(
        log: impl Into<Arc<InteractionLog>>,
        assumptions: DesignAssumptions,
        imputation: Option<ImputationTable>,
    ) -> Result<Self, SimulatorError> {
        let log = log.into();
        if log.is_empty() {
            return Err(SimulatorError::EmptyLog);
        }
        assumptions.validate()?;
        match (&assumptions.feedback, &imputation) {
            (FeedbackModel::ImputeMar { level }, Some(t)) if t.level != *level => {
                return Err(SimulatorError::ImputationMismatch(format!(
                    "model level {level:?}, table level {:?}",
                    t.level
                )))
            }
            (FeedbackModel::ImputeMar { .. }, None) => {
                return Err(SimulatorError::ImputationMismatch("missing table".into()))
            }
            (FeedbackModel::LookupSkip | FeedbackModel::LookupDefault { .. }, Some(_)) => {
                return Err(SimulatorError::ImputationMismatch(
                    "table given for a lookup model".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            tables: Arc::new(Tables::new(log)),
            assumptions,
            imputation,
            rng: Xoshiro256StarStar::stream(0, ARRIVAL_STREAM),
            started: false,
            cursor: 0,
            clock: 0,
            current: 0,
            consumed: HashMap::new(),
            terminal: false,
        })
    }

    pub fn assumptions(&self) -> &DesignAssumptions {
        &self.assumptions
    }

    pub fn imputation(&self) -> Option<&ImputationTable> {
        self.imputation.as_ref()
    }

    pub fn log(&self) -> &InteractionLog {
        &self.tables.log
    }

    /// Feedback the current-user model yields for `item`; `None` is missing.
    pub fn feedback_for(&self, user: &UserId, item: &ItemId) -> Option<f64> {
        if let Some(v) = self
            .tables
            .observed
            .get(user)
            .and_then(|row| row.get(item))
        {
            return Some(*v);
        }
        match self.assumptions.feedback {
            FeedbackModel::LookupSkip => None,
            FeedbackModel::LookupDefault { value } => Some(value),
            FeedbackModel::ImputeMar { .. } => self
                .imputation
                .as_ref()
                .map(|t| t.value(user, item)),
        }
    }

    fn candidates(&self, user: usize) -> BTreeSet<ItemId> {
        let items = self.tables.log.items();
        match (self.assumptions.candidate_policy, self.consumed.get(&user)) {
            (CandidatePolicy::ExcludeConsumed, Some(used)) => items.difference(used).cloned().collect(),
            _ => items.clone(),
        }
    }

    fn exhausted(&self, user: usize) -> bool {
        match self.assumptions.candidate_policy {
            CandidatePolicy::AllItems => false,
            CandidatePolicy::ExcludeConsumed => self
                .consumed
                .get(&user)
                .is_some_and(|used| used.len() >= self.tables.log.items().len()),
        }
    }

    fn all_exhausted(&self) -> bool {
        (0..self.tables.users.len()).all(|u| self.exhausted(u))
    }

    /// Next arrival as an event index, skipping users with no candidates.
    fn next_arrival(&mut self) -> Option<usize> {
        let n = self.tables.log.len();
        match self.assumptions.arrival {
            ArrivalModel::SequentialReplay => {
                while self.cursor < n {
                    let e = self.cursor;
                    self.cursor += 1;
                    if !self.exhausted(self.tables.user_of_event[e]) {
                        return Some(e);
                    }
                }
                None
            }
            ArrivalModel::EmpiricalFrequency => {
                if self.all_exhausted() {
                    return None;
                }
                loop {
                    let e = self.rng.index(n);
                    if !self.exhausted(self.tables.user_of_event[e]) {
                        return Some(e);
                    }
                }
            }
            ArrivalModel::UniformRandom => {
                if self.all_exhausted() {
                    return None;
                }
                loop {
                    let u = self.rng.index(self.tables.users.len());
                    if !self.exhausted(u) {
                        let events = &self.tables.events_by_user[u];
                        return Some(events[self.rng.index(events.len())]);
                    }
                }
            }
        }
    }

    fn outcome_at(&self, event: usize, action: Option<&Action>, feedback: Vec<Option<f64>>) -> RawOutcome {
        let e = &self.tables.log.events()[event];
        RawOutcome {
            step_index: self.clock,
            user: e.user.clone(),
            action_taken: action.cloned(),
            feedback,
            context: e.context.clone(),
            candidates: self.candidates(self.tables.user_of_event[event]),
            terminal: false,
        }
    }
}

impl Simulator for LogSimulator {
    fn reset(&mut self, seed: u64) -> RawOutcome {
        self.rng = Xoshiro256StarStar::stream(seed, ARRIVAL_STREAM);
        self.started = true;
        self.cursor = 0;
        self.clock = 0;
        self.consumed.clear();
        self.terminal = false;
        // Nothing is consumed yet, so a non-empty log always has an arrival.
        self.current = self.next_arrival().expect("non-empty log");
        self.outcome_at(self.current, None, Vec::new())
    }

    fn transition(&mut self, action: &Action) -> Result<RawOutcome, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.terminal {
            return Err(EnvError::EpisodeFinished);
        }
        let user_idx = self.tables.user_of_event[self.current];
        let user = self.tables.users[user_idx].clone();
        let candidates = self.candidates(user_idx);
        if let Some(item) = action.slate().iter().find(|i| !candidates.contains(*i)) {
            return Err(EnvError::InvalidAction(format!(
                "item `{item}` is not a candidate for user `{user}`"
            )));
        }

        let feedback = action
            .slate()
            .iter()
            .map(|item| self.feedback_for(&user, item))
            .collect();
        if self.assumptions.candidate_policy == CandidatePolicy::ExcludeConsumed {
            self.consumed
                .entry(user_idx)
                .or_default()
                .extend(action.slate().iter().cloned());
        }
        self.clock += 1;

        let next = if self.clock >= self.assumptions.episode_length_max {
            None
        } else {
            self.next_arrival()
        };
        Ok(match next {
            Some(e) => {
                self.current = e;
                self.outcome_at(e, Some(action), feedback)
            }
            None => {
                self.terminal = true;
                RawOutcome {
                    step_index: self.clock,
                    user,
                    action_taken: Some(action.clone()),
                    feedback,
                    context: Default::default(),
                    candidates: BTreeSet::new(),
                    terminal: true,
                }
            }
        })
    }

    fn context_keys(&self) -> BTreeSet<String> {
        self.tables.log.context_keys()
    }
}
