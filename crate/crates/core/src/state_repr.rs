//! Feature pipeline from raw outcome to agent state.
//!
//! A [`StatePipelineSpec`] lists stages; [`build_state_repr`] fits the
//! data-dependent ones on a log and freezes their statistics into
//! [`FittedStage`]s. The frozen form is what manifests carry, so a pipeline
//! can be rebuilt without refitting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::InteractionLog;
use crate::env::{Context, ContextValue, RawOutcome, State, StateOutcome, StateRepresentation};
use crate::ids::UserId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateReprError {
    #[error("state pipeline produces no features")]
    EmptyPipeline,

    #[error("stage `{0}` must be fitted on a non-empty log")]
    EmptyLog(&'static str),

    #[error("invalid stage: {0}")]
    InvalidStage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureStage {
    /// One-hot over the log's users in sorted order.
    UserIdOneHot,
    /// The user's mean logged feedback.
    UserProfileMean,
    /// A numeric context value, or `missing_default` when absent or not
    /// numeric.
    ContextKey { name: String, missing_default: f64 },
    /// Step index divided by `denominator`.
    ClockScaled { denominator: f64 },
    /// Min-max scaling of every preceding dimension, fitted on the log.
    Normalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatePipelineSpec {
    pub stages: Vec<FeatureStage>,
}

/// A stage with its statistics frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case", deny_unknown_fields)]
pub enum FittedStage {
    UserIdOneHot { users: Vec<UserId> },
    UserProfileMean { means: BTreeMap<UserId, f64> },
    ContextKey { name: String, missing_default: f64 },
    ClockScaled { denominator: f64 },
    Normalize { mins: Vec<f64>, maxs: Vec<f64> },
}

impl FittedStage {
    /// Stage tag as it appears in manifests.
    pub fn name(&self) -> &'static str {
        match self {
            FittedStage::UserIdOneHot { .. } => "user_id_one_hot",
            FittedStage::UserProfileMean { .. } => "user_profile_mean",
            FittedStage::ContextKey { .. } => "context_key",
            FittedStage::ClockScaled { .. } => "clock_scaled",
            FittedStage::Normalize { .. } => "normalize",
        }
    }

    /// Dimensions appended by this stage. Normalize rescales in place.
    pub fn added_dimension(&self) -> usize {
        match self {
            FittedStage::UserIdOneHot { users } => users.len(),
            FittedStage::Normalize { .. } => 0,
            _ => 1,
        }
    }
}

/// Serialized pipeline: fitted stages in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenPipeline {
    pub stages: Vec<FittedStage>,
}

/// A compiled, immutable pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePipeline {
    stages: Vec<FittedStage>,
    dimension: usize,
}

pub fn build_state_repr(spec: &StatePipelineSpec, log: &InteractionLog) -> Result<FeaturePipeline, StateReprError> {
    if spec.stages.is_empty() {
        return Err(StateReprError::EmptyPipeline);
    }
    let mut fitted: Vec<FittedStage> = Vec::with_capacity(spec.stages.len());
    for stage in &spec.stages {
        let next = match stage {
            FeatureStage::UserIdOneHot => {
                require_events(log, "user_id_one_hot")?;
                FittedStage::UserIdOneHot {
                    users: log.users().iter().cloned().collect(),
                }
            }
            FeatureStage::UserProfileMean => {
                require_events(log, "user_profile_mean")?;
                let mut sums: BTreeMap<UserId, (f64, usize)> = BTreeMap::new();
                for e in log.events() {
                    let s = sums.entry(e.user.clone()).or_insert((0.0, 0));
                    s.0 += e.feedback;
                    s.1 += 1;
                }
                FittedStage::UserProfileMean {
                    means: sums.into_iter().map(|(u, (s, n))| (u, s / n as f64)).collect(),
                }
            }
            FeatureStage::ContextKey { name, missing_default } => FittedStage::ContextKey {
                name: name.clone(),
                missing_default: *missing_default,
            },
            FeatureStage::ClockScaled { denominator } => FittedStage::ClockScaled {
                denominator: *denominator,
            },
            FeatureStage::Normalize => {
                require_events(log, "normalize")?;
                let partial = FeaturePipeline {
                    dimension: fitted.iter().map(FittedStage::added_dimension).sum(),
                    stages: fitted.clone(),
                };
                let mut mins = vec![f64::INFINITY; partial.dimension];
                let mut maxs = vec![f64::NEG_INFINITY; partial.dimension];
                for (i, e) in log.events().iter().enumerate() {
                    let (features, _) = partial.features(&e.user, &e.context, i as u64);
                    for (d, v) in features.into_iter().enumerate() {
                        mins[d] = mins[d].min(v);
                        maxs[d] = maxs[d].max(v);
                    }
                }
                FittedStage::Normalize { mins, maxs }
            }
        };
        fitted.push(next);
    }
    FeaturePipeline::from_frozen(FrozenPipeline { stages: fitted })
}

fn require_events(log: &InteractionLog, stage: &'static str) -> Result<(), StateReprError> {
    if log.is_empty() {
        Err(StateReprError::EmptyLog(stage))
    } else {
        Ok(())
    }
}

impl FeaturePipeline {
    /// Rebuilds a pipeline from frozen stages, checking their consistency.
    pub fn from_frozen(frozen: FrozenPipeline) -> Result<Self, StateReprError> {
        let mut dimension = 0usize;
        for stage in &frozen.stages {
            match stage {
                FittedStage::UserIdOneHot { users } => {
                    if users.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(StateReprError::InvalidStage(
                            "one-hot users must be sorted and unique".into(),
                        ));
                    }
                }
                FittedStage::UserProfileMean { means } => {
                    if means.values().any(|m| !m.is_finite()) {
                        return Err(StateReprError::InvalidStage("profile means must be finite".into()));
                    }
                }
                FittedStage::ContextKey { name, missing_default } => {
                    if name.is_empty() || !missing_default.is_finite() {
                        return Err(StateReprError::InvalidStage(
                            "context key needs a name and a finite default".into(),
                        ));
                    }
                }
                FittedStage::ClockScaled { denominator } => {
                    if !(denominator.is_finite() && *denominator > 0.0) {
                        return Err(StateReprError::InvalidStage(format!(
                            "clock denominator must be positive, got {denominator}"
                        )));
                    }
                }
                FittedStage::Normalize { mins, maxs } => {
                    if mins.len() != dimension || maxs.len() != dimension {
                        return Err(StateReprError::InvalidStage(format!(
                            "normalize tables have {}/{} entries for {dimension} preceding dimensions",
                            mins.len(),
                            maxs.len()
                        )));
                    }
                    if mins.iter().chain(maxs).any(|v| !v.is_finite()) {
                        return Err(StateReprError::InvalidStage("normalize tables must be finite".into()));
                    }
                }
            }
            dimension += stage.added_dimension();
        }
        if dimension == 0 {
            return Err(StateReprError::EmptyPipeline);
        }
        Ok(Self {
            stages: frozen.stages,
            dimension,
        })
    }

    pub fn frozen(&self) -> FrozenPipeline {
        FrozenPipeline {
            stages: self.stages.clone(),
        }
    }

    pub fn stages(&self) -> &[FittedStage] {
        &self.stages
    }

    /// Feature vector plus the number of clamped values.
    fn features(&self, user: &UserId, context: &Context, clock: u64) -> (Vec<f64>, usize) {
        let mut out = Vec::with_capacity(self.dimension);
        let mut clamped = 0;
        for stage in &self.stages {
            match stage {
                FittedStage::UserIdOneHot { users } => {
                    let hot = users.binary_search(user).ok();
                    out.extend((0..users.len()).map(|i| if Some(i) == hot { 1.0 } else { 0.0 }));
                }
                FittedStage::UserProfileMean { means } => {
                    out.push(means.get(user).copied().unwrap_or(0.0));
                }
                FittedStage::ContextKey { name, missing_default } => {
                    out.push(
                        context
                            .get(name)
                            .and_then(ContextValue::as_number)
                            .unwrap_or(*missing_default),
                    );
                }
                FittedStage::ClockScaled { denominator } => out.push(clock as f64 / denominator),
                FittedStage::Normalize { mins, maxs } => {
                    for ((v, lo), hi) in out.iter_mut().zip(mins).zip(maxs) {
                        let scaled = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
                        let bounded = scaled.clamp(0.0, 1.0);
                        if bounded != scaled {
                            clamped += 1;
                        }
                        *v = bounded;
                    }
                }
            }
        }
        (out, clamped)
    }
}

impl StateRepresentation for FeaturePipeline {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn required_context_keys(&self) -> BTreeSet<String> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                FittedStage::ContextKey { name, .. } => Some(name.clone()),
                _ => None,
            })
            .collect()
    }

    fn represent(&self, x: &RawOutcome) -> StateOutcome {
        let (features, clamped) = self.features(&x.user, &x.context, x.step_index);
        StateOutcome {
            state: State {
                features,
                user: x.user.clone(),
                candidates: x.candidates.clone(),
                clock: x.step_index,
            },
            clamped,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_interaction_log, CsvSchema};

    fn log(csv: &str) -> InteractionLog {
        parse_interaction_log(csv.as_bytes(), &CsvSchema::default()).unwrap()
    }

    fn outcome(user: &str, context: Context, step: u64) -> RawOutcome {
        RawOutcome {
            step_index: step,
            user: UserId::new(user).unwrap(),
            action_taken: None,
            feedback: vec![],
            context,
            candidates: Default::default(),
            terminal: false,
        }
    }

    const LOG: &str = "user_id,item_id,feedback,timestamp,hour\nb,x,2,1,10\na,x,2,2,20\nb,y,4,3,5\n";

    fn spec(stages: Vec<FeatureStage>) -> StatePipelineSpec {
        StatePipelineSpec { stages }
    }

    #[test]
    fn one_hot_uses_sorted_user_order() {
        let sr = build_state_repr(&spec(vec![FeatureStage::UserIdOneHot]), &log(LOG)).unwrap();
        assert_eq!(sr.dimension(), 2);
        assert_eq!(sr.apply(&outcome("a", Context::new(), 0)).features, vec![1.0, 0.0]);
        assert_eq!(sr.apply(&outcome("b", Context::new(), 0)).features, vec![0.0, 1.0]);
    }

    #[test]
    fn cold_start_user_maps_to_zeros() {
        let sr = build_state_repr(
            &spec(vec![FeatureStage::UserIdOneHot, FeatureStage::UserProfileMean]),
            &log(LOG),
        )
        .unwrap();
        assert_eq!(sr.apply(&outcome("zed", Context::new(), 0)).features, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn profile_mean_is_frozen_per_user() {
        let sr = build_state_repr(&spec(vec![FeatureStage::UserProfileMean]), &log(LOG)).unwrap();
        assert_eq!(sr.apply(&outcome("b", Context::new(), 0)).features, vec![3.0]);
    }

    #[test]
    fn stage_dimensions_add_up() {
        let sr = build_state_repr(
            &spec(vec![
                FeatureStage::UserIdOneHot,
                FeatureStage::ContextKey { name: "hour".into(), missing_default: 0.0 },
            ]),
            &log(LOG),
        )
        .unwrap();
        assert_eq!(sr.dimension(), 3);
        assert_eq!(sr.required_context_keys(), BTreeSet::from(["hour".to_string()]));
    }

    #[test]
    fn missing_context_key_takes_default() {
        let sr = build_state_repr(
            &spec(vec![FeatureStage::ContextKey { name: "hour".into(), missing_default: 0.0 }]),
            &log(LOG),
        )
        .unwrap();
        assert_eq!(sr.apply(&outcome("a", Context::new(), 0)).features, vec![0.0]);
        let ctx = Context::from([("hour".to_string(), ContextValue::Text("noon".into()))]);
        assert_eq!(sr.apply(&outcome("a", ctx, 0)).features, vec![0.0]);
    }

    #[test]
    fn apply_is_pure() {
        let sr = build_state_repr(
            &spec(vec![FeatureStage::UserIdOneHot, FeatureStage::ClockScaled { denominator: 10.0 }]),
            &log(LOG),
        )
        .unwrap();
        let x = outcome("a", Context::new(), 3);
        assert_eq!(sr.apply(&x), sr.apply(&x));
        assert_eq!(sr.apply(&x).features, vec![1.0, 0.0, 0.3]);
    }

    #[test]
    fn normalize_fits_on_log_and_clamps_at_runtime() {
        let sr = build_state_repr(
            &spec(vec![
                FeatureStage::ContextKey { name: "hour".into(), missing_default: 0.0 },
                FeatureStage::Normalize,
            ]),
            &log(LOG),
        )
        .unwrap();
        assert_eq!(sr.dimension(), 1);
        let at = |h: f64| {
            sr.represent(&outcome("a", Context::from([("hour".to_string(), ContextValue::Number(h))]), 0))
        };
        assert_eq!(at(5.0).state.features, vec![0.0]);
        assert_eq!(at(20.0).state.features, vec![1.0]);
        assert_eq!(at(12.5).state.features, vec![0.5]);
        let out = at(40.0);
        assert_eq!((out.state.features[0], out.clamped), (1.0, 1));
    }

    #[test]
    fn empty_pipelines_are_rejected() {
        assert_eq!(build_state_repr(&spec(vec![]), &log(LOG)).unwrap_err(), StateReprError::EmptyPipeline);
        assert_eq!(
            build_state_repr(&spec(vec![FeatureStage::Normalize]), &log(LOG)).unwrap_err(),
            StateReprError::EmptyPipeline
        );
    }

    #[test]
    fn fit_stages_need_events() {
        let empty = log("user_id,item_id,feedback,timestamp\n");
        assert!(matches!(
            build_state_repr(&spec(vec![FeatureStage::UserIdOneHot]), &empty),
            Err(StateReprError::EmptyLog(_))
        ));
        // Context keys unknown to the log are fine at build time.
        assert!(build_state_repr(
            &spec(vec![FeatureStage::ContextKey { name: "weather".into(), missing_default: 1.0 }]),
            &empty
        )
        .is_ok());
    }

    #[test]
    fn invalid_clock_denominator() {
        assert!(matches!(
            build_state_repr(&spec(vec![FeatureStage::ClockScaled { denominator: 0.0 }]), &log(LOG)),
            Err(StateReprError::InvalidStage(_))
        ));
    }

    #[test]
    fn frozen_form_round_trips_without_refit() {
        let sr = build_state_repr(
            &spec(vec![FeatureStage::UserIdOneHot, FeatureStage::UserProfileMean, FeatureStage::Normalize]),
            &log(LOG),
        )
        .unwrap();
        let json = serde_json::to_string(&sr.frozen()).unwrap();
        let back = FeaturePipeline::from_frozen(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, sr);
    }
}
