//! Fixtures shared by the CLI test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use recenv::data::{format_real, CsvSchema};
use recenv::manifest::{create_manifest, save_manifest, EnvironmentManifest, ManifestRecipe};
use recenv::offpolicy::LoggedDecision;
use recenv::reward::{MissingPolicy, RewardKind, RewardSpec};
use recenv::simulator::{ArrivalModel, CandidatePolicy, DesignAssumptions, FeedbackModel, ImputationLevel};
use recenv::state_repr::{FeatureStage, StatePipelineSpec};
use recenv::{ItemId, State, UserId, Xoshiro256StarStar};

// ── Small dataset-backed fixture ────────────────────────────────────────

/// 5 users, 10 items, 50 events.
pub fn small_log_csv() -> String {
    let mut s = String::from("user_id,item_id,feedback,timestamp,hour\n");
    for j in 0..50u32 {
        let user = (j * 3 / 2) % 5;
        let item = (j * 7) % 10;
        let feedback = 1 + (j * 7 + j / 10) % 5;
        writeln!(s, "u{user},i{item},{feedback},{},{}", 1000 + j, j % 24).unwrap();
    }
    s
}

pub fn small_recipe(dataset_path: &str) -> ManifestRecipe {
    ManifestRecipe {
        dataset_path: dataset_path.to_string(),
        schema: CsvSchema::default(),
        assumptions: DesignAssumptions {
            arrival: ArrivalModel::UniformRandom,
            feedback: FeedbackModel::ImputeMar {
                level: ImputationLevel::User,
            },
            candidate_policy: CandidatePolicy::AllItems,
            episode_length_max: 25,
        },
        reward: RewardSpec {
            kind: RewardKind::Rating,
            missing_policy: MissingPolicy::TreatAsMin,
            bounds: [0.0, 1.0],
            normalize: true,
        },
        state: StatePipelineSpec {
            stages: vec![
                FeatureStage::UserIdOneHot,
                FeatureStage::ContextKey {
                    name: "hour".into(),
                    missing_default: 0.0,
                },
                FeatureStage::Normalize,
            ],
        },
        bounds: [0.0, 1.0],
        seed: 7,
        slate_k: 1,
    }
}

/// Writes `csv` and a manifest built from `recipe` into `dir`; returns the
/// manifest path.
pub fn write_manifest(dir: &Path, name: &str, csv: &str, recipe: &ManifestRecipe) -> PathBuf {
    std::fs::write(dir.join(&recipe.dataset_path), csv).unwrap();
    let manifest = create_manifest(recipe, dir).unwrap();
    let path = dir.join(format!("{name}.rsenv.json"));
    save_manifest(&manifest, &path).unwrap();
    path
}

pub fn small_manifest(dir: &Path) -> PathBuf {
    write_manifest(dir, "small", &small_log_csv(), &small_recipe("small.csv"))
}

// ── Randomized manifests ────────────────────────────────────────────────

fn pick<T: Clone>(rng: &mut Xoshiro256StarStar, options: &[T]) -> T {
    options[rng.index(options.len())].clone()
}

/// A random valid recipe over a random log written to `dir/data-{tag}.csv`.
pub fn random_recipe(rng: &mut Xoshiro256StarStar, dir: &Path, tag: usize) -> ManifestRecipe {
    let n_users = 2 + rng.index(5);
    let n_items = 2 + rng.index(7);
    let n_events = 5 + rng.index(36);
    let with_hour = rng.bernoulli(0.5);
    let scale = rng.index(3);
    let (lo, hi) = if scale == 0 { (1.0, 5.0) } else { (0.0, 1.0) };

    let mut csv = String::from("user_id,item_id,feedback,timestamp");
    if with_hour {
        csv.push_str(",hour");
    }
    csv.push('\n');
    for j in 0..n_events {
        let feedback = match j {
            0 => lo,
            1 => hi,
            _ => match scale {
                0 => (1 + rng.index(5)) as f64,
                1 => rng.below(1001) as f64 / 1000.0,
                _ => rng.index(2) as f64,
            },
        };
        write!(
            csv,
            "user{},item{},{},{}",
            rng.index(n_users),
            rng.index(n_items),
            format_real(feedback),
            rng.below(100)
        )
        .unwrap();
        if with_hour {
            write!(csv, ",{}", rng.index(24)).unwrap();
        }
        csv.push('\n');
    }
    let dataset_path = format!("data-{tag}.csv");
    std::fs::write(dir.join(&dataset_path), csv).unwrap();

    let mut schema = CsvSchema::default();
    if rng.bernoulli(0.5) {
        schema.feedback_range = Some([lo, hi]);
    }
    let feedback = match rng.index(3) {
        0 => FeedbackModel::LookupSkip,
        1 => FeedbackModel::LookupDefault {
            value: lo - 1.0 + (hi - lo + 2.0) * rng.below(1001) as f64 / 1000.0,
        },
        _ => FeedbackModel::ImputeMar {
            level: pick(rng, &[ImputationLevel::Global, ImputationLevel::User, ImputationLevel::Item]),
        },
    };
    let assumptions = DesignAssumptions {
        arrival: pick(
            rng,
            &[ArrivalModel::SequentialReplay, ArrivalModel::EmpiricalFrequency, ArrivalModel::UniformRandom],
        ),
        feedback,
        candidate_policy: pick(rng, &[CandidatePolicy::AllItems, CandidatePolicy::ExcludeConsumed]),
        episode_length_max: 1 + rng.below(30),
    };
    let kind = match rng.index(5) {
        0 => RewardKind::Rating,
        1 => RewardKind::BinaryClick {
            threshold: lo + (hi - lo) * rng.below(1001) as f64 / 1000.0,
        },
        2 => RewardKind::SlateSum,
        3 => RewardKind::SlateDcg,
        _ => {
            let mut prices = BTreeMap::new();
            for i in 0..n_items {
                if rng.bernoulli(0.5) {
                    prices.insert(ItemId::new(format!("item{i}")).unwrap(), rng.below(2001) as f64 / 100.0);
                }
            }
            RewardKind::Revenue { prices }
        }
    };
    let reward_bounds = pick(rng, &[[0.0, 1.0], [-1.0, 1.0], [0.0, 10.0], [-5.0, -2.0]]);
    let reward = RewardSpec {
        kind,
        missing_policy: pick(rng, &[MissingPolicy::TreatAsZero, MissingPolicy::TreatAsMin]),
        bounds: reward_bounds,
        normalize: rng.bernoulli(0.5),
    };

    let mut stages = Vec::new();
    if rng.bernoulli(0.7) {
        stages.push(FeatureStage::UserIdOneHot);
    }
    if rng.bernoulli(0.5) {
        stages.push(FeatureStage::UserProfileMean);
    }
    if with_hour && rng.bernoulli(0.5) {
        stages.push(FeatureStage::ContextKey {
            name: "hour".into(),
            missing_default: 0.0,
        });
    }
    if rng.bernoulli(0.5) {
        stages.push(FeatureStage::ClockScaled {
            denominator: (1 + rng.index(50)) as f64,
        });
    }
    if stages.is_empty() {
        stages.push(FeatureStage::UserIdOneHot);
    }
    if rng.bernoulli(0.5) {
        stages.push(FeatureStage::Normalize);
    }
    let bounds = if rng.bernoulli(0.5) {
        reward_bounds
    } else {
        [reward_bounds[0] - 1.0, reward_bounds[1] + 1.0]
    };
    ManifestRecipe {
        dataset_path,
        schema,
        assumptions,
        reward,
        state: StatePipelineSpec { stages },
        bounds,
        seed: rng.next_u64(),
        slate_k: 1 + rng.below(3),
    }
}

pub fn random_manifest(rng: &mut Xoshiro256StarStar, dir: &Path, tag: usize) -> (ManifestRecipe, EnvironmentManifest) {
    let recipe = random_recipe(rng, dir, tag);
    let manifest = create_manifest(&recipe, dir)
        .unwrap_or_else(|e| panic!("random recipe {tag} rejected: {e}\n{recipe:?}"));
    (recipe, manifest)
}

// ── Synthetic tabular bandit ────────────────────────────────────────────

/// Bernoulli click probabilities, `MU[context][action]`.
pub const MU: [[f64; 5]; 5] = [
    [0.10, 0.30, 0.50, 0.70, 0.20],
    [0.60, 0.20, 0.40, 0.10, 0.80],
    [0.30, 0.90, 0.20, 0.50, 0.40],
    [0.70, 0.40, 0.60, 0.30, 0.10],
    [0.20, 0.50, 0.10, 0.80, 0.60],
];

/// The evaluated target policy: context -> action.
pub const TARGET: [usize; 5] = [3, 4, 1, 0, 2];

pub fn context_id(c: usize) -> UserId {
    UserId::new(format!("c{c}")).unwrap()
}

pub fn action_id(a: usize) -> ItemId {
    ItemId::new(format!("a{a}")).unwrap()
}

/// Exact value of `TARGET` under uniformly drawn contexts.
pub fn true_target_value() -> f64 {
    (0..5).map(|c| MU[c][TARGET[c]]).sum::<f64>() / 5.0
}

/// `n` events: uniform contexts, uniform logging (propensity 0.2),
/// Bernoulli rewards. Features are the context one-hot.
pub fn synthetic_log(seed: u64, n: usize) -> Vec<LoggedDecision> {
    let mut rng = Xoshiro256StarStar::stream(seed, "synthetic.log");
    let candidates: BTreeSet<ItemId> = (0..5).map(action_id).collect();
    (0..n)
        .map(|i| {
            let c = rng.index(5);
            let a = rng.index(5);
            let reward = if rng.bernoulli(MU[c][a]) { 1.0 } else { 0.0 };
            let mut features = vec![0.0; 5];
            features[c] = 1.0;
            LoggedDecision {
                context: State {
                    features,
                    user: context_id(c),
                    candidates: candidates.clone(),
                    clock: i as u64,
                },
                action: action_id(a),
                reward,
                propensity: Some(0.2),
            }
        })
        .collect()
}

/// Context index recovered from the one-hot features.
pub fn context_of(state: &State) -> usize {
    state.features.iter().position(|&v| v == 1.0).expect("one-hot context")
}
