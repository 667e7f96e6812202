//! Reproducible recommender-system task environments.
//!
//! An [`Environment`] composes a [`Simulator`], a [`RewardFunction`] and a
//! [`StateRepresentation`]. Dataset-backed environments are described by
//! [`manifest::EnvironmentManifest`] files that freeze every fitted
//! statistic, so a manifest plus a seed reproduces a trajectory exactly.

pub mod agents;
pub mod canonical;
pub mod data;
pub mod env;
pub mod ids;
pub mod linalg;
pub mod manifest;
pub mod offpolicy;
pub mod reward;
pub mod rng;
pub mod rollout;
pub mod simulator;
pub mod state_repr;

pub use env::{
    Action, Context, ContextValue, EnvError, Environment, RawOutcome, Reward, RewardBounds, RewardFunction,
    Simulator, State, StateRepresentation, StepResult,
};
pub use ids::{ItemId, UserId};
pub use rng::Xoshiro256StarStar;
