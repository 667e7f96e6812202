//! Running a policy against an environment and fingerprinting the result.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, Policy};
use crate::canonical::{sha256_hex, to_canonical_string};
use crate::env::{Action, EnvError, Environment, RewardFunction, Simulator, State, StateRepresentation};
use crate::rng::{derive_seed, Xoshiro256StarStar};

/// Version of the transcript serialization hashed by fingerprints.
pub const TRANSCRIPT_FORMAT_VERSION: u32 = 1;

/// Label of the policy stream derived from the run seed.
pub const POLICY_STREAM: &str = "policy";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// State the action was chosen in.
    pub state: State,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.reward)
    }

    /// Left-to-right sum of rewards.
    pub fn cumulative_reward(&self) -> f64 {
        self.rewards().fold(0.0, |acc, r| acc + r)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprint(&self) -> TrajectoryFingerprint {
        #[derive(Serialize)]
        struct Canonical<'a> {
            format_version: u32,
            transcript: &'a [TranscriptEntry],
        }
        let body = to_canonical_string(&Canonical {
            format_version: TRANSCRIPT_FORMAT_VERSION,
            transcript: &self.entries,
        })
        .expect("transcripts serialize");
        TrajectoryFingerprint(sha256_hex(body.as_bytes()))
    }
}

/// SHA-256 (lowercase hex) of a transcript's canonical JSON.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajectoryFingerprint(pub String);

impl std::fmt::Display for TrajectoryFingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Seed for the `episode`-th reset of a run (episode 0 uses the run seed).
pub fn episode_seed(seed: u64, episode: u64) -> u64 {
    if episode == 0 {
        seed
    } else {
        derive_seed(seed, &format!("episode.{episode}"))
    }
}

/// Runs `policy` for `steps` decisions, resetting whenever an episode ends.
/// The policy draws from the `policy` stream of `seed`.
pub fn run_policy<S, R, F>(
    env: &mut Environment<S, R, F>,
    policy: &mut dyn Policy,
    seed: u64,
    steps: u64,
) -> Result<Transcript, RolloutError>
where
    S: Simulator,
    R: RewardFunction,
    F: StateRepresentation,
{
    let mut rng = Xoshiro256StarStar::stream(seed, POLICY_STREAM);
    let mut transcript = Transcript::default();
    if steps == 0 {
        return Ok(transcript);
    }
    let mut episode = 0;
    let mut state = env.reset(episode_seed(seed, episode));
    for _ in 0..steps {
        if env.is_done() {
            episode += 1;
            state = env.reset(episode_seed(seed, episode));
        }
        let action = policy.act(&state, &mut rng)?;
        let result = env.step(&action)?;
        policy.update(&state, &action, result.reward.value())?;
        transcript.entries.push(TranscriptEntry {
            state,
            action,
            reward: result.reward.value(),
            done: result.done,
        });
        state = result.next_state;
    }
    Ok(transcript)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_transcript_fingerprint_is_constant() {
        let a = Transcript::default().fingerprint();
        assert_eq!(a, Transcript::default().fingerprint());
        assert_eq!(
            a.0,
            sha256_hex(br#"{"format_version":1,"transcript":[]}"#)
        );
    }

    #[test]
    fn episode_zero_uses_run_seed() {
        assert_eq!(episode_seed(7, 0), 7);
        assert_ne!(episode_seed(7, 1), episode_seed(7, 2));
    }
}
