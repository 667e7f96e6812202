//! Environment manifests: everything needed to rebuild an environment
//! bit-for-bit, in canonical JSON.
//!
//! A manifest references its dataset by path and SHA-256 and stores every
//! fitted statistic (imputation means, feature tables) so that rebuilding
//! never refits. Files use the `.rsenv.json` extension.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::{AgentError, Policy};
use crate::canonical::{sha256_hex, to_canonical_string};
use crate::data::{parse_interaction_log, CsvSchema, DataError, InteractionLog};
use crate::env::{EnvError, Environment};
use crate::reward::{make_reward_fn, InvalidSpec, RewardFn, RewardSpec};
use crate::rng::PRNG_NAME;
use crate::rollout::{run_policy, RolloutError, TrajectoryFingerprint, Transcript};
use crate::simulator::{
    DesignAssumptions, FeedbackModel, ImputationTable, LogSimulator, SimulatorError,
};
use crate::state_repr::{build_state_repr, FeaturePipeline, FrozenPipeline, StatePipelineSpec, StateReprError};

pub const FORMAT_VERSION: u64 = 1;
pub const MANIFEST_EXTENSION: &str = ".rsenv.json";

/// Environment assembled from a manifest.
pub type DatasetEnvironment = Environment<LogSimulator, RewardFn, FeaturePipeline>;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest is not valid JSON: {0}")]
    Json(String),

    #[error("manifest schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("unsupported manifest format_version {0} (supported: {FORMAT_VERSION})")]
    VersionUnsupported(String),

    #[error("dataset {path} has sha256 {actual}, manifest expects {expected}")]
    HashMismatch {
        path: String,
        expected: String,
        actual: String,
    },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Simulator(#[from] SimulatorError),

    #[error(transparent)]
    Reward(#[from] InvalidSpec),

    #[error(transparent)]
    State(#[from] StateReprError),

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

impl From<AgentError> for ManifestError {
    fn from(e: AgentError) -> Self {
        ManifestError::Rollout(RolloutError::Agent(e))
    }
}

fn schema_error(path: &str, message: impl Into<String>) -> ManifestError {
    ManifestError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> ManifestError {
    ManifestError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    /// Lowercase hex SHA-256 of the file bytes.
    pub sha256: String,
    /// Column mapping; `feedback_range` is always declared in a manifest.
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentManifest {
    pub format_version: u64,
    pub dataset: DatasetRef,
    pub assumptions: DesignAssumptions,
    /// Frozen means for `impute_mar`; `null` for lookup models.
    #[serde(deserialize_with = "Option::deserialize")]
    pub imputation: Option<ImputationTable>,
    pub reward: RewardSpec,
    pub state: FrozenPipeline,
    pub bounds: [f64; 2],
    pub seed: u64,
    pub slate_k: u64,
    pub prng: String,
}

/// Unfitted description of an environment; [`create_manifest`] fits and
/// freezes it against the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecipe {
    pub dataset_path: String,
    pub schema: CsvSchema,
    pub assumptions: DesignAssumptions,
    pub reward: RewardSpec,
    pub state: StatePipelineSpec,
    pub bounds: [f64; 2],
    pub seed: u64,
    pub slate_k: u64,
}

fn resolve(base_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn read_dataset(base_dir: &Path, dataset: &DatasetRef) -> Result<Vec<u8>, ManifestError> {
    let path = resolve(base_dir, &dataset.path);
    std::fs::read(&path).map_err(|e| io_error(&path, e))
}

/// Fits a recipe on its dataset and freezes the result.
pub fn create_manifest(recipe: &ManifestRecipe, base_dir: &Path) -> Result<EnvironmentManifest, ManifestError> {
    let path = resolve(base_dir, &recipe.dataset_path);
    let bytes = std::fs::read(&path).map_err(|e| io_error(&path, e))?;
    let log = parse_interaction_log(&bytes, &recipe.schema)?;
    let mut schema = recipe.schema.clone();
    schema.feedback_range = Some(log.feedback_range());

    let imputation = match recipe.assumptions.feedback {
        FeedbackModel::ImputeMar { level } => Some(ImputationTable::fit(&log, level)?),
        _ => None,
    };
    let state = build_state_repr(&recipe.state, &log)?.frozen();
    let manifest = EnvironmentManifest {
        format_version: FORMAT_VERSION,
        dataset: DatasetRef {
            path: recipe.dataset_path.clone(),
            sha256: sha256_hex(&bytes),
            schema,
        },
        assumptions: recipe.assumptions.clone(),
        imputation,
        reward: recipe.reward.clone(),
        state,
        bounds: recipe.bounds,
        seed: recipe.seed,
        slate_k: recipe.slate_k,
        prng: PRNG_NAME.to_string(),
    };
    // Surface component errors now rather than at first use.
    assemble(&manifest, log)?;
    Ok(manifest)
}

impl EnvironmentManifest {
    /// Structural checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ManifestError::VersionUnsupported(self.format_version.to_string()));
        }
        if self.prng != PRNG_NAME {
            return Err(schema_error("prng", format!("expected `{PRNG_NAME}`, got `{}`", self.prng)));
        }
        let sha = &self.dataset.sha256;
        if sha.len() != 64 || !sha.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            return Err(schema_error("dataset.sha256", "expected 64 lowercase hex digits"));
        }
        if self.dataset.schema.feedback_range.is_none() {
            return Err(schema_error("dataset.schema.feedback_range", "must be declared"));
        }
        if self.slate_k == 0 {
            return Err(schema_error("slate_k", "must be at least 1"));
        }
        if let Some(path) = first_non_finite(self) {
            return Err(schema_error(&path, "reals must be finite"));
        }
        Ok(())
    }

    /// Canonical JSON bytes.
    pub fn to_canonical_bytes(&self) -> Result<Vec<u8>, ManifestError> {
        self.validate()?;
        to_canonical_string(self)
            .map(String::into_bytes)
            .map_err(|e| ManifestError::Json(e.to_string()))
    }

    /// SHA-256 of the canonical bytes.
    pub fn hash(&self) -> Result<String, ManifestError> {
        Ok(sha256_hex(&self.to_canonical_bytes()?))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// serde_json writes non-finite floats as `null`, so they are caught here
/// before serialization.
fn first_non_finite(m: &EnvironmentManifest) -> Option<String> {
    let mut reals: Vec<(&str, f64)> = vec![("bounds", m.bounds[0]), ("bounds", m.bounds[1])];
    if let Some([lo, hi]) = m.dataset.schema.feedback_range {
        reals.push(("dataset.schema.feedback_range", lo));
        reals.push(("dataset.schema.feedback_range", hi));
    }
    reals.push(("reward.bounds", m.reward.bounds[0]));
    reals.push(("reward.bounds", m.reward.bounds[1]));
    if let FeedbackModel::LookupDefault { value } = m.assumptions.feedback {
        reals.push(("assumptions.feedback.value", value));
    }
    if let Some(t) = &m.imputation {
        reals.push(("imputation.global_mean", t.global_mean));
        reals.extend(t.means.values().map(|v| ("imputation.means", *v)));
    }
    match &m.reward.kind {
        crate::reward::RewardKind::BinaryClick { threshold } => reals.push(("reward.kind.threshold", *threshold)),
        crate::reward::RewardKind::Revenue { prices } => {
            reals.extend(prices.values().map(|v| ("reward.kind.prices", *v)))
        }
        _ => {}
    }
    reals.into_iter().find(|(_, v)| !v.is_finite()).map(|(p, _)| p.to_string())
}

pub fn save_manifest(m: &EnvironmentManifest, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let bytes = m.to_canonical_bytes()?;
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// Parses and validates manifest bytes without touching the dataset.
pub fn parse_manifest(bytes: &[u8]) -> Result<EnvironmentManifest, ManifestError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| ManifestError::Json(e.to_string()))?;
    match value.get("format_version") {
        None => return Err(schema_error("format_version", "missing field")),
        Some(v) if v.as_u64() != Some(FORMAT_VERSION) => {
            return Err(ManifestError::VersionUnsupported(v.to_string()))
        }
        _ => {}
    }
    let manifest: EnvironmentManifest = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        schema_error(&path, e.into_inner().to_string())
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads a manifest and checks the dataset hash. Relative dataset paths
/// resolve against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<EnvironmentManifest, ManifestError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    let manifest = parse_manifest(&bytes)?;
    verify_dataset(&manifest, &base_dir_of(path))?;
    Ok(manifest)
}

pub fn base_dir_of(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn check_hash(m: &EnvironmentManifest, bytes: &[u8]) -> Result<(), ManifestError> {
    let actual = sha256_hex(bytes);
    if actual != m.dataset.sha256 {
        return Err(ManifestError::HashMismatch {
            path: m.dataset.path.clone(),
            expected: m.dataset.sha256.clone(),
            actual,
        });
    }
    Ok(())
}

pub fn verify_dataset(m: &EnvironmentManifest, base_dir: &Path) -> Result<(), ManifestError> {
    check_hash(m, &read_dataset(base_dir, &m.dataset)?)
}

/// Loads the hash-verified dataset a manifest refers to.
pub fn load_dataset(m: &EnvironmentManifest, base_dir: &Path) -> Result<InteractionLog, ManifestError> {
    let bytes = read_dataset(base_dir, &m.dataset)?;
    check_hash(m, &bytes)?;
    Ok(parse_interaction_log(&bytes, &m.dataset.schema)?)
}

fn assemble(m: &EnvironmentManifest, log: InteractionLog) -> Result<DatasetEnvironment, ManifestError> {
    m.validate()?;
    let feedback_range = m
        .dataset
        .schema
        .feedback_range
        .expect("validated manifests declare the range");
    let simulator = LogSimulator::with_imputation(log, m.assumptions.clone(), m.imputation.clone())?;
    let reward = make_reward_fn(m.reward.clone(), feedback_range)?;
    let state = FeaturePipeline::from_frozen(m.state.clone())?;
    Ok(Environment::compose(simulator, reward, state, m.bounds, m.slate_k as usize)?)
}

/// Instantiates the environment a manifest describes.
pub fn build_environment(m: &EnvironmentManifest, base_dir: &Path) -> Result<DatasetEnvironment, ManifestError> {
    let log = load_dataset(m, base_dir)?;
    assemble(m, log)
}

/// Runs `policy` for `steps` decisions from the manifest seed.
pub fn run_manifest(
    m: &EnvironmentManifest,
    base_dir: &Path,
    policy: &mut dyn Policy,
    steps: u64,
) -> Result<Transcript, ManifestError> {
    let mut env = build_environment(m, base_dir)?;
    Ok(run_policy(&mut env, policy, m.seed, steps)?)
}

pub fn fingerprint_trajectory(
    m: &EnvironmentManifest,
    base_dir: &Path,
    policy: &mut dyn Policy,
    steps: u64,
) -> Result<TrajectoryFingerprint, ManifestError> {
    Ok(run_manifest(m, base_dir, policy, steps)?.fingerprint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::RandomPolicy;
    use crate::reward::{MissingPolicy, RewardKind};
    use crate::simulator::{ArrivalModel, CandidatePolicy};
    use crate::state_repr::FeatureStage;

    const CSV: &str = "user_id,item_id,feedback,timestamp,hour\na,x,5,1,9\na,y,1,2,10\nb,x,3,3,11\nb,z,4,4,12\n";

    fn recipe() -> ManifestRecipe {
        ManifestRecipe {
            dataset_path: "log.csv".into(),
            schema: CsvSchema::default(),
            assumptions: DesignAssumptions {
                arrival: ArrivalModel::UniformRandom,
                feedback: FeedbackModel::ImputeMar {
                    level: crate::simulator::ImputationLevel::User,
                },
                candidate_policy: CandidatePolicy::AllItems,
                episode_length_max: 5,
            },
            reward: RewardSpec {
                kind: RewardKind::Rating,
                missing_policy: MissingPolicy::TreatAsZero,
                bounds: [0.0, 1.0],
                normalize: true,
            },
            state: StatePipelineSpec {
                stages: vec![
                    FeatureStage::UserIdOneHot,
                    FeatureStage::ContextKey { name: "hour".into(), missing_default: 0.0 },
                    FeatureStage::Normalize,
                ],
            },
            bounds: [0.0, 1.0],
            seed: 3,
            slate_k: 1,
        }
    }

    fn setup() -> (tempfile::TempDir, EnvironmentManifest) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("log.csv"), CSV).unwrap();
        let m = create_manifest(&recipe(), dir.path()).unwrap();
        (dir, m)
    }

    #[test]
    fn create_freezes_statistics() {
        let (_dir, m) = setup();
        assert_eq!(m.dataset.schema.feedback_range, Some([1.0, 5.0]));
        assert_eq!(m.imputation.as_ref().unwrap().means["a"], 3.0);
        assert_eq!(m.prng, "xoshiro256**");
        assert_eq!(m.dataset.sha256, sha256_hex(CSV.as_bytes()));
    }

    #[test]
    fn save_load_round_trip_is_byte_stable() {
        let (dir, m) = setup();
        let path = dir.path().join("env.rsenv.json");
        save_manifest(&m, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded, m);
        save_manifest(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        assert!(!first.contains(&b' ') || !String::from_utf8_lossy(&first).contains(": "));
    }

    #[test]
    fn seed_changes_bytes_and_hash() {
        let (_dir, m) = setup();
        let other = m.with_seed(4);
        assert_ne!(m.to_canonical_bytes().unwrap(), other.to_canonical_bytes().unwrap());
        assert_ne!(m.hash().unwrap(), other.hash().unwrap());
    }

    #[test]
    fn tampered_dataset_is_rejected() {
        let (dir, m) = setup();
        let path = dir.path().join("env.rsenv.json");
        save_manifest(&m, &path).unwrap();
        std::fs::write(dir.path().join("log.csv"), CSV.replace("a,x,5", "a,x,4")).unwrap();
        assert!(matches!(load_manifest(&path), Err(ManifestError::HashMismatch { .. })));
        assert!(matches!(build_environment(&m, dir.path()), Err(ManifestError::HashMismatch { .. })));
    }

    #[test]
    fn unknown_versions_and_missing_fields_are_rejected() {
        let (_dir, m) = setup();
        let mut v: Value = serde_json::to_value(&m).unwrap();
        v["format_version"] = Value::from(2);
        assert!(matches!(
            parse_manifest(v.to_string().as_bytes()),
            Err(ManifestError::VersionUnsupported(_))
        ));
        let mut v: Value = serde_json::to_value(&m).unwrap();
        v["assumptions"].as_object_mut().unwrap().remove("episode_length_max");
        match parse_manifest(v.to_string().as_bytes()) {
            Err(ManifestError::Schema { path, .. }) => assert!(path.starts_with("assumptions"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
        let mut v: Value = serde_json::to_value(&m).unwrap();
        v.as_object_mut().unwrap().remove("imputation");
        match parse_manifest(v.to_string().as_bytes()) {
            Err(ManifestError::Schema { message, .. }) => assert!(message.contains("imputation"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn built_environment_equals_manual_composition() {
        let (dir, m) = setup();
        let from_manifest = fingerprint_trajectory(&m, dir.path(), &mut RandomPolicy::new(1).unwrap(), 30).unwrap();

        let log = parse_interaction_log(CSV.as_bytes(), &m.dataset.schema).unwrap();
        let sim = crate::simulator::build_simulator(log.clone(), m.assumptions.clone()).unwrap();
        let rf = make_reward_fn(m.reward.clone(), [1.0, 5.0]).unwrap();
        let sr = build_state_repr(&recipe().state, &log).unwrap();
        let mut env = Environment::compose(sim, rf, sr, m.bounds, 1).unwrap();
        let manual = run_policy(&mut env, &mut RandomPolicy::new(1).unwrap(), m.seed, 30).unwrap();
        assert_eq!(manual.fingerprint(), from_manifest);
    }

    #[test]
    fn schema_mismatch_surfaces_at_creation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("log.csv"), CSV).unwrap();
        let mut r = recipe();
        r.state.stages.push(FeatureStage::ContextKey { name: "weather".into(), missing_default: 0.0 });
        assert!(matches!(
            create_manifest(&r, dir.path()),
            Err(ManifestError::Env(EnvError::SchemaMismatch { .. }))
        ));
    }
}
