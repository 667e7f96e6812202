//! End-to-end scenarios across manifests, environments and policies.

use std::fmt::Write as _;
use std::path::Path;

use recenv::agents::{EpsilonGreedy, LinUcb, Policy, RandomPolicy};
use recenv::data::CsvSchema;
use recenv::manifest::{
    build_environment, create_manifest, load_manifest, parse_manifest, run_manifest, save_manifest,
    EnvironmentManifest, ManifestError, ManifestRecipe,
};
use recenv::reward::{MissingPolicy, RewardKind, RewardSpec};
use recenv::simulator::{ArrivalModel, CandidatePolicy, DesignAssumptions, FeedbackModel, ImputationLevel};
use recenv::state_repr::{FeatureStage, StatePipelineSpec};
use recenv::{Action, ItemId};

fn log_csv() -> String {
    let mut s = String::from("user_id,item_id,feedback,timestamp,hour\n");
    for j in 0..60u32 {
        let user = if j % 5 < 3 { 0 } else { 1 + j % 4 };
        writeln!(s, "u{user},i{},{},{},{}", (j * 7) % 8, 1 + (j * 3) % 5, 100 + j, j % 24).unwrap();
    }
    s
}

fn recipe(arrival: ArrivalModel) -> ManifestRecipe {
    ManifestRecipe {
        dataset_path: "log.csv".into(),
        schema: CsvSchema::default(),
        assumptions: DesignAssumptions {
            arrival,
            feedback: FeedbackModel::ImputeMar {
                level: ImputationLevel::Item,
            },
            candidate_policy: CandidatePolicy::ExcludeConsumed,
            episode_length_max: 6,
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
                FeatureStage::UserProfileMean,
                FeatureStage::ContextKey {
                    name: "hour".into(),
                    missing_default: 0.0,
                },
                FeatureStage::Normalize,
            ],
        },
        bounds: [0.0, 1.0],
        seed: 2024,
        slate_k: 2,
    }
}

fn manifest_in(dir: &Path, arrival: ArrivalModel) -> EnvironmentManifest {
    std::fs::write(dir.join("log.csv"), log_csv()).unwrap();
    create_manifest(&recipe(arrival), dir).unwrap()
}

fn policies() -> Vec<(&'static str, fn() -> Box<dyn Policy>)> {
    vec![
        ("random", || Box::new(RandomPolicy::new(2).unwrap())),
        ("epsilon-greedy", || Box::new(EpsilonGreedy::new(0.2, 2).unwrap())),
        ("linucb", || Box::new(LinUcb::new(0.5, 7, 2).unwrap())),
    ]
}

// ── Reproducibility ─────────────────────────────────────────────────────

#[test]
fn rebuilding_from_a_manifest_reproduces_the_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_in(dir.path(), ArrivalModel::UniformRandom);
    let path = dir.path().join("env.rsenv.json");
    save_manifest(&m, &path).unwrap();
    let reloaded = load_manifest(&path).unwrap();
    assert_eq!(reloaded, m);
    for (name, make) in policies() {
        let a = run_manifest(&m, dir.path(), make().as_mut(), 100).unwrap();
        let b = run_manifest(&reloaded, dir.path(), make().as_mut(), 100).unwrap();
        assert_eq!(a.len(), 100, "{name}");
        assert_eq!(a, b, "{name}");
        assert_eq!(a.fingerprint(), b.fingerprint(), "{name}");
    }
}

#[test]
fn threads_reproduce_sequential_runs() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_in(dir.path(), ArrivalModel::EmpiricalFrequency);
    let seeds: Vec<u64> = (0..8).collect();
    let sequential: Vec<_> = seeds
        .iter()
        .map(|&s| run_manifest(&m.with_seed(s), dir.path(), &mut RandomPolicy::new(2).unwrap(), 80).unwrap())
        .collect();
    let parallel: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&s| {
                let m = &m;
                let base = dir.path();
                scope.spawn(move || run_manifest(&m.with_seed(s), base, &mut RandomPolicy::new(2).unwrap(), 80).unwrap())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(sequential, parallel);
}

#[test]
fn arrival_assumption_changes_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let empirical = manifest_in(dir.path(), ArrivalModel::EmpiricalFrequency);
    let uniform = manifest_in(dir.path(), ArrivalModel::UniformRandom);
    assert_ne!(empirical.hash().unwrap(), uniform.hash().unwrap());
    let a = run_manifest(&empirical, dir.path(), &mut RandomPolicy::new(2).unwrap(), 100).unwrap();
    let b = run_manifest(&uniform, dir.path(), &mut RandomPolicy::new(2).unwrap(), 100).unwrap();
    assert_ne!(a.fingerprint(), b.fingerprint());
}

#[test]
fn different_seeds_give_different_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_in(dir.path(), ArrivalModel::UniformRandom);
    let a = run_manifest(&m.with_seed(1), dir.path(), &mut RandomPolicy::new(2).unwrap(), 100).unwrap();
    let b = run_manifest(&m.with_seed(2), dir.path(), &mut RandomPolicy::new(2).unwrap(), 100).unwrap();
    assert_ne!(a, b);
}

// ── Episodes ────────────────────────────────────────────────────────────

#[test]
fn episodes_end_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_in(dir.path(), ArrivalModel::UniformRandom);
    let mut env = build_environment(&m, dir.path()).unwrap();
    let mut policy = RandomPolicy::new(2).unwrap();
    let mut rng = recenv::Xoshiro256StarStar::stream(5, "policy");
    let mut state = env.reset(5);
    let mut steps = 0;
    let mut shown: std::collections::BTreeMap<_, Vec<ItemId>> = Default::default();
    while !env.is_done() {
        let action = policy.act(&state, &mut rng).unwrap();
        shown.entry(state.user.clone()).or_default().extend(action.slate().iter().cloned());
        let result = env.step(&action).unwrap();
        // Items already shown to the arriving user this episode are excluded.
        if !result.done {
            for i in shown.get(&result.next_state.user).into_iter().flatten() {
                assert!(!result.next_state.candidates.contains(i));
            }
        }
        state = result.next_state;
        steps += 1;
    }
    assert_eq!(steps, 6);
    assert!(env.step(&Action::single(ItemId::new("i0").unwrap())).is_err());
    let fresh = env.reset(6);
    assert_eq!(fresh.clock, 0);
    assert_eq!(fresh.candidates.len(), 8);
    assert!(!env.is_done());
}

#[test]
fn top_rating_earns_the_upper_bound() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("log.csv"), "user_id,item_id,feedback,timestamp\nu0,i0,5,1\nu0,i1,1,2\n").unwrap();
    let mut r = recipe(ArrivalModel::SequentialReplay);
    r.assumptions.feedback = FeedbackModel::LookupSkip;
    r.assumptions.candidate_policy = CandidatePolicy::AllItems;
    r.slate_k = 1;
    r.state.stages = vec![FeatureStage::UserIdOneHot];
    let m = create_manifest(&r, dir.path()).unwrap();
    let mut env = build_environment(&m, dir.path()).unwrap();
    env.reset(0);
    let top = env.step(&Action::single(ItemId::new("i0").unwrap())).unwrap();
    assert_eq!(top.reward.value(), 1.0);
    let bottom = env.step(&Action::single(ItemId::new("i1").unwrap())).unwrap();
    assert_eq!(bottom.reward.value(), 0.0);
}

// ── Manifest integrity ──────────────────────────────────────────────────

#[test]
fn every_top_level_field_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_in(dir.path(), ArrivalModel::UniformRandom);
    let value: serde_json::Value = serde_json::from_slice(&m.to_canonical_bytes().unwrap()).unwrap();
    let fields: Vec<String> = value.as_object().unwrap().keys().cloned().collect();
    assert!(fields.len() >= 10);
    for field in fields {
        let mut broken = value.clone();
        broken.as_object_mut().unwrap().remove(&field);
        let bytes = serde_json::to_vec(&broken).unwrap();
        match parse_manifest(&bytes) {
            Err(ManifestError::Schema { .. }) | Err(ManifestError::VersionUnsupported(_)) => {}
            other => panic!("removing `{field}` gave {other:?}"),
        }
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_in(dir.path(), ArrivalModel::UniformRandom);
    let mut value: serde_json::Value = serde_json::from_slice(&m.to_canonical_bytes().unwrap()).unwrap();
    value["surprise"] = serde_json::json!(1);
    assert!(matches!(
        parse_manifest(&serde_json::to_vec(&value).unwrap()),
        Err(ManifestError::Schema { .. })
    ));
}

#[test]
fn edited_dataset_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_in(dir.path(), ArrivalModel::UniformRandom);
    let path = dir.path().join("env.rsenv.json");
    save_manifest(&m, &path).unwrap();
    let mut csv = log_csv();
    csv.push_str("u0,i0,3,999,1\n");
    std::fs::write(dir.path().join("log.csv"), csv).unwrap();
    assert!(matches!(load_manifest(&path), Err(ManifestError::HashMismatch { .. })));
    assert!(matches!(
        build_environment(&m, dir.path()),
        Err(ManifestError::HashMismatch { .. })
    ));
}
