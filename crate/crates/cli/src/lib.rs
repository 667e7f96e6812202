//! The `recenv` experiment runner.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | i/o failure writing outputs |
//! | 2 | data error (parse errors, hash mismatch, missing propensities) |
//! | 3 | usage error |
//! | 4 | unknown policy |
//! | 5 | reports from different manifests compared without `--allow-mixed` |

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use recenv::agents::{
    make_policy, parse_params, AgentError, ConstantPolicy, DeterministicPolicy, EpsilonGreedy, LinUcb, Policy,
};
use recenv::canonical::to_canonical_string;
use recenv::data::{format_real, parse_interaction_log, validate, CsvSchema, DataError, InteractionLog};
use recenv::manifest::{
    base_dir_of, build_environment, create_manifest, load_manifest, save_manifest, EnvironmentManifest,
    ManifestError, ManifestRecipe,
};
use recenv::offpolicy::{
    direct_method, doubly_robust, ips_estimate, overlap_report, replay_evaluate, ConstantModel, Estimator,
    LoggedDecision, OpeError, RewardModel, RidgeRewardModel, ValueEstimate, RIDGE_LAMBDA,
};
use recenv::rollout::{run_policy, RolloutError, Transcript};
use recenv::{Action, ContextValue, ItemId, State, UserId};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_USAGE: i32 = 3;
pub const EXIT_UNKNOWN_POLICY: i32 = 4;
pub const EXIT_MIXED: i32 = 5;

// ── Arguments ───────────────────────────────────────────────────────────

#[derive(Debug, Parser)]
#[command(name = "recenv", version, about = "Reproducible recommender-system task environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an interaction log and print summary statistics.
    ValidateData {
        #[arg(long)]
        input: PathBuf,
        /// Column mapping, e.g. `user_id=uid,item_id=movie,feedback_min=1,feedback_max=5`.
        #[arg(long, default_value = "")]
        schema: String,
    },
    /// Fit a recipe against its dataset and write a manifest.
    InitManifest {
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a policy in the environment a manifest describes.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value = "")]
        params: String,
        #[arg(long)]
        steps: u64,
        /// Seed, or comma-separated seeds run in parallel. Defaults to the
        /// manifest seed.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a target policy's value from logged bandit feedback.
    EvaluateOffpolicy {
        #[arg(long)]
        log: PathBuf,
        /// `constant` (item=ID), `table` (USER=ITEM,...), `greedy`, or `linucb` (alpha=A).
        #[arg(long)]
        policy: String,
        #[arg(long, default_value = "")]
        params: String,
        #[arg(long, value_delimiter = ',', default_value = "replay,ips,dm,dr")]
        estimators: Vec<String>,
        #[arg(long)]
        clip: Option<f64>,
        /// Reward model for dm/dr: `ridge` or `constant=V`.
        #[arg(long, default_value = "ridge")]
        model: String,
        #[arg(long, default_value = "")]
        schema: String,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate run reports found under a directory.
    Compare {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_mixed: bool,
    },
}

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::InvalidSchema(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        let code = match e {
            AgentError::UnknownPolicy(_) => EXIT_UNKNOWN_POLICY,
            AgentError::InvalidParameter(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Rollout(RolloutError::Agent(a)) => a.into(),
            other => CliError::new(EXIT_DATA, other.to_string()),
        }
    }
}

impl From<RolloutError> for CliError {
    fn from(e: RolloutError) -> Self {
        ManifestError::Rollout(e).into()
    }
}

// ── Entry point ─────────────────────────────────────────────────────────

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::ValidateData { input, schema } => validate_data(&input, &schema, stdout),
        Command::InitManifest { recipe, out } => init_manifest(&recipe, &out, stdout),
        Command::Run {
            manifest,
            policy,
            params,
            steps,
            seed,
            out,
        } => run(&manifest, &policy, &params, steps, &seed, &out, stdout),
        Command::EvaluateOffpolicy {
            log,
            policy,
            params,
            estimators,
            clip,
            model,
            schema,
            out,
        } => {
            let csv = evaluate_offpolicy(&log, &policy, &params, &estimators, clip, &model, &schema)?;
            match out {
                Some(path) => write_file(&path, csv.as_bytes()),
                None => stdout.write_all(csv.as_bytes()).map_err(|e| CliError::new(EXIT_IO, e.to_string())),
            }
        }
        Command::Compare {
            reports,
            out,
            allow_mixed,
        } => compare(&reports, &out, allow_mixed, stdout),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn print(stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::new(EXIT_IO, e.to_string()))
}

fn read_log(path: &Path, schema: &str) -> Result<InteractionLog, CliError> {
    let schema: CsvSchema = schema.parse()?;
    let bytes = std::fs::read(path).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))?;
    Ok(parse_interaction_log(&bytes, &schema)?)
}

// ── validate-data / init-manifest ───────────────────────────────────────

fn validate_data(input: &Path, schema: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    let log = read_log(input, schema)?;
    print(stdout, &validate(&log).to_string())
}

fn init_manifest(recipe_path: &Path, out: &Path, stdout: &mut dyn Write) -> Result<(), CliError> {
    let bytes = std::fs::read(recipe_path).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", recipe_path.display())))?;
    let recipe: ManifestRecipe = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", recipe_path.display())))?;
    let manifest = create_manifest(&recipe, &base_dir_of(recipe_path))?;
    save_manifest(&manifest, out)?;
    print(stdout, &format!("{}\n", manifest.hash()?))
}

// ── run ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescription {
    pub name: String,
    pub hyperparameters: BTreeMap<String, f64>,
}

/// Summary of one run, written as canonical JSON to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// SHA-256 of the manifest as loaded (before any seed override).
    pub manifest_hash: String,
    pub policy: PolicyDescription,
    pub seed: u64,
    pub steps: u64,
    /// Left-to-right sum of `reward_trajectory`.
    pub cumulative_reward: f64,
    pub mean_reward: f64,
    pub reward_trajectory: Vec<f64>,
    pub fingerprint: String,
}

impl RunReport {
    fn new(manifest_hash: String, policy: PolicyDescription, seed: u64, steps: u64, transcript: &Transcript) -> Self {
        let cumulative_reward = transcript.cumulative_reward();
        Self {
            manifest_hash,
            policy,
            seed,
            steps,
            cumulative_reward,
            mean_reward: if transcript.is_empty() {
                0.0
            } else {
                cumulative_reward / transcript.len() as f64
            },
            reward_trajectory: transcript.rewards().collect(),
            fingerprint: transcript.fingerprint().0,
        }
    }
}

/// Everything one run writes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub report_json: String,
    pub trajectory_csv: String,
    pub reward_curve_svg: String,
}

pub fn trajectory_csv(transcript: &Transcript) -> String {
    let mut out = String::from("step,reward,user,action\n");
    for (i, e) in transcript.entries.iter().enumerate() {
        let mut row = csv::Writer::from_writer(Vec::new());
        row.write_record([
            (i + 1).to_string(),
            format_real(e.reward),
            e.state.user.to_string(),
            e.action.joined(),
        ])
        .expect("writing to memory");
        out.push_str(&String::from_utf8(row.into_inner().expect("flush to memory")).expect("utf-8 fields"));
    }
    out
}

/// Line plot of the running mean reward against the step number.
pub fn reward_curve_svg(rewards: &[f64], bounds: [f64; 2]) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 360.0;
    const MARGIN: f64 = 40.0;
    let [lo, hi] = bounds;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let n = rewards.len();
    let mut points = String::new();
    let mut sum = 0.0;
    for (i, r) in rewards.iter().enumerate() {
        sum += r;
        let mean = sum / (i + 1) as f64;
        let x = if n > 1 {
            MARGIN + plot_w * i as f64 / (n - 1) as f64
        } else {
            MARGIN
        };
        let y = HEIGHT - MARGIN - plot_h * ((mean - lo) / (hi - lo)).clamp(0.0, 1.0);
        if i > 0 {
            points.push(' ');
        }
        let _ = write!(points, "{x:.3},{y:.3}");
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">step (1..{n})</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="12" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {})">cumulative mean reward [{}, {}]</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        format_real(lo),
        format_real(hi)
    );
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{points}"/>"#);
    svg.push_str("</svg>\n");
    svg
}

/// Runs one seed of a manifest in memory.
pub fn run_once(
    manifest: &EnvironmentManifest,
    base_dir: &Path,
    policy_name: &str,
    params: &BTreeMap<String, String>,
    steps: u64,
    seed: u64,
) -> Result<RunArtifacts, CliError> {
    let manifest_hash = manifest.hash()?;
    let seeded = manifest.with_seed(seed);
    let mut env = build_environment(&seeded, base_dir)?;
    let mut policy = make_policy(policy_name, params, env.state_dimension(), seeded.slate_k as usize)?;
    let description = PolicyDescription {
        name: policy.name().to_string(),
        hyperparameters: policy.hyperparameters(),
    };
    let transcript = run_policy(&mut env, policy.as_mut(), seed, steps)?;
    let report = RunReport::new(manifest_hash, description, seed, steps, &transcript);
    let report_json = to_canonical_string(&report).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
    Ok(RunArtifacts {
        reward_curve_svg: reward_curve_svg(&report.reward_trajectory, manifest.bounds),
        trajectory_csv: trajectory_csv(&transcript),
        report_json,
        report,
    })
}

fn write_artifacts(dir: &Path, artifacts: &RunArtifacts) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_file(&dir.join("report.json"), artifacts.report_json.as_bytes())?;
    write_file(&dir.join("trajectory.csv"), artifacts.trajectory_csv.as_bytes())?;
    write_file(&dir.join("reward_curve.svg"), artifacts.reward_curve_svg.as_bytes())
}

fn run(
    manifest_path: &Path,
    policy: &str,
    params: &str,
    steps: u64,
    seeds: &[u64],
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let params = parse_params(params)?;
    let manifest = load_manifest(manifest_path)?;
    let base_dir = base_dir_of(manifest_path);
    let seeds: Vec<u64> = if seeds.is_empty() { vec![manifest.seed] } else { seeds.to_vec() };

    // Each seed gets its own environment; outputs are written afterwards in
    // seed order.
    let results: Vec<Result<RunArtifacts, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let (manifest, base_dir, params) = (&manifest, &base_dir, &params);
                scope.spawn(move || run_once(manifest, base_dir, policy, params, steps, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run worker panicked"))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    if let [single] = results.as_slice() {
        write_artifacts(out, single)?;
        return print(stdout, &format!("{}\n", single.report.fingerprint));
    }
    for (seed, artifacts) in seeds.iter().zip(&results) {
        write_artifacts(&out.join(format!("seed-{seed}")), artifacts)?;
        print(stdout, &format!("{seed} {}\n", artifacts.report.fingerprint))?;
    }
    Ok(())
}

// ── evaluate-offpolicy ──────────────────────────────────────────────────

/// Turns an interaction log into logged decisions. Context features are the
/// numeric context columns in name order (missing values read as 0); the
/// candidate set is every item in the log.
pub fn logged_decisions(log: &InteractionLog) -> Vec<LoggedDecision> {
    let keys: Vec<String> = log.context_keys().into_iter().collect();
    let candidates: BTreeSet<ItemId> = log.items().clone();
    log.events()
        .iter()
        .enumerate()
        .map(|(i, e)| LoggedDecision {
            context: State {
                features: keys
                    .iter()
                    .map(|k| e.context.get(k).and_then(ContextValue::as_number).unwrap_or(0.0))
                    .collect(),
                user: e.user.clone(),
                candidates: candidates.clone(),
                clock: i as u64,
            },
            action: e.item.clone(),
            reward: e.feedback,
            propensity: e.propensity,
        })
        .collect()
}

/// Maps each user to a fixed item.
struct TablePolicy(BTreeMap<UserId, ItemId>);

impl DeterministicPolicy for TablePolicy {
    fn decide(&self, context: &State) -> Option<ItemId> {
        self.0.get(&context.user).cloned()
    }
}

fn id_param<T: TryFrom<String>>(key: &str, raw: &str) -> Result<T, CliError> {
    T::try_from(raw.to_string()).map_err(|_| CliError::new(EXIT_USAGE, format!("`{key}` needs a non-empty id")))
}

/// Builds a deterministic target policy for off-policy evaluation.
pub fn target_policy(
    name: &str,
    params: &BTreeMap<String, String>,
    log: &[LoggedDecision],
) -> Result<Box<dyn DeterministicPolicy>, CliError> {
    let only = |allowed: &[&str]| -> Result<(), CliError> {
        match params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(CliError::new(EXIT_USAGE, format!("`{name}` does not take `{k}`"))),
            None => Ok(()),
        }
    };
    match name {
        "constant" => {
            only(&["item"])?;
            let raw = params
                .get("item")
                .ok_or_else(|| CliError::new(EXIT_USAGE, "`constant` needs item=ID"))?;
            Ok(Box::new(ConstantPolicy(id_param("item", raw)?)))
        }
        "table" => {
            let mut table = BTreeMap::new();
            for (user, item) in params {
                table.insert(id_param::<UserId>(user, user)?, id_param::<ItemId>(user, item)?);
            }
            Ok(Box::new(TablePolicy(table)))
        }
        "greedy" => {
            only(&[])?;
            let mut sums: BTreeMap<ItemId, (f64, f64)> = BTreeMap::new();
            for d in log {
                let entry = sums.entry(d.action.clone()).or_insert((0.0, 0.0));
                entry.0 += d.reward;
                entry.1 += 1.0;
            }
            let policy = EpsilonGreedy::new(0.0, 1)?.with_estimates(sums.into_iter().map(|(i, (s, n))| (i, s / n)));
            Ok(Box::new(policy))
        }
        "linucb" => {
            only(&["alpha"])?;
            let alpha = match params.get("alpha") {
                None => 1.0,
                Some(raw) => recenv::data::parse_decimal(raw)
                    .ok_or_else(|| CliError::new(EXIT_USAGE, format!("`alpha` must be a number, got `{raw}`")))?,
            };
            let dimension = log.first().map_or(0, |d| d.context.features.len());
            let mut policy = LinUcb::new(alpha, dimension, 1)?;
            for d in log {
                policy.update(&d.context, &Action::single(d.action.clone()), d.reward)?;
            }
            Ok(Box::new(policy))
        }
        other => Err(CliError::new(
            EXIT_UNKNOWN_POLICY,
            format!("unknown target policy `{other}` (expected constant, table, greedy or linucb)"),
        )),
    }
}

fn reward_model(spec: &str, log: &[LoggedDecision]) -> Result<Box<dyn RewardModel>, CliError> {
    if spec == "ridge" {
        return RidgeRewardModel::fit(log, RIDGE_LAMBDA)
            .map(|m| Box::new(m) as Box<dyn RewardModel>)
            .map_err(|e| CliError::new(EXIT_DATA, e.to_string()));
    }
    match spec.split_once('=') {
        Some(("constant", v)) => recenv::data::parse_decimal(v)
            .map(|v| Box::new(ConstantModel(v)) as Box<dyn RewardModel>)
            .ok_or_else(|| CliError::new(EXIT_USAGE, format!("constant model needs a number, got `{v}`"))),
        _ => Err(CliError::new(
            EXIT_USAGE,
            format!("unknown reward model `{spec}` (expected ridge or constant=V)"),
        )),
    }
}

fn estimate_row(out: &mut csv::Writer<Vec<u8>>, e: &ValueEstimate) {
    out.write_record([
        e.estimator.name().to_string(),
        format_real(e.value),
        format_real(e.standard_error),
        e.n.to_string(),
        e.matched_count.to_string(),
        e.clip.map(format_real).unwrap_or_default(),
        e.flags.join("|"),
    ])
    .expect("writing to memory");
}

/// Runs the requested estimators and renders the CSV table, overlap row
/// last.
pub fn evaluate_offpolicy(
    log_path: &Path,
    policy: &str,
    params: &str,
    estimators: &[String],
    clip: Option<f64>,
    model: &str,
    schema: &str,
) -> Result<String, CliError> {
    let estimators = estimators
        .iter()
        .map(|s| s.parse::<Estimator>().map_err(|e| CliError::new(EXIT_USAGE, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let params = parse_params(params)?;
    let log = logged_decisions(&read_log(log_path, schema)?);
    let target = target_policy(policy, &params, &log)?;
    let target = target.as_ref();
    let model = if estimators.iter().any(|e| matches!(e, Estimator::Dm | Estimator::Dr)) {
        Some(reward_model(model, &log)?)
    } else {
        None
    };

    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["estimator", "value", "standard_error", "n", "matched_count", "clip", "flags"])
        .expect("writing to memory");
    for estimator in estimators {
        let result = match estimator {
            Estimator::Replay => replay_evaluate(&log, target),
            Estimator::Ips => ips_estimate(&log, target, clip),
            Estimator::Dm => direct_method(&log, model.as_deref().expect("fitted above"), target),
            Estimator::Dr => doubly_robust(&log, model.as_deref().expect("fitted above"), target, clip),
        };
        match result {
            Ok(estimate) => estimate_row(&mut out, &estimate),
            Err(OpeError::NoMatches) => out
                .write_record([
                    estimator.name(),
                    "",
                    "",
                    &log.len().to_string(),
                    "0",
                    &clip.map(format_real).unwrap_or_default(),
                    "infeasible",
                ])
                .expect("writing to memory"),
            Err(OpeError::InvalidClip(c)) => {
                return Err(CliError::new(EXIT_USAGE, OpeError::InvalidClip(c).to_string()))
            }
            Err(e) => return Err(CliError::new(EXIT_DATA, e.to_string())),
        }
    }
    let overlap = overlap_report(&log, target);
    let mut flags = Vec::new();
    if overlap.infeasible {
        flags.push("infeasible".to_string());
    }
    if let Some(p) = overlap.min_propensity_on_matches {
        flags.push(format!("min_propensity={}", format_real(p)));
    }
    out.write_record([
        "overlap".to_string(),
        format_real(overlap.match_rate),
        String::new(),
        overlap.n.to_string(),
        overlap.matched_count.to_string(),
        String::new(),
        flags.join("|"),
    ])
    .expect("writing to memory");
    Ok(String::from_utf8(out.into_inner().expect("flush to memory")).expect("utf-8 fields"))
}

// ── compare ─────────────────────────────────────────────────────────────

fn find_reports(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::new(EXIT_DATA, e.to_string()))?.path();
        if path.is_dir() {
            find_reports(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == "report.json") {
            found.push(path);
        }
    }
    Ok(())
}

fn compare(dir: &Path, out: &Path, allow_mixed: bool, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut paths = Vec::new();
    find_reports(dir, &mut paths)?;
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::new(EXIT_DATA, format!("no report.json under {}", dir.display())));
    }
    let mut reports = Vec::new();
    for path in &paths {
        let bytes = std::fs::read(path).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))?;
        let report: RunReport = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))?;
        reports.push(report);
    }
    let hashes: BTreeSet<&str> = reports.iter().map(|r| r.manifest_hash.as_str()).collect();
    let mixed = hashes.len() > 1;
    if mixed && !allow_mixed {
        return Err(CliError::new(
            EXIT_MIXED,
            format!(
                "reports come from {} different manifests; pass --allow-mixed to compare them anyway",
                hashes.len()
            ),
        ));
    }
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record([
        "report",
        "manifest_hash",
        "policy",
        "hyperparameters",
        "seed",
        "steps",
        "cumulative_reward",
        "mean_reward",
        "fingerprint",
        "mixed_group",
    ])
    .expect("writing to memory");
    for (path, r) in paths.iter().zip(&reports) {
        let rel = path.strip_prefix(dir).unwrap_or(path);
        let hyper = r
            .policy
            .hyperparameters
            .iter()
            .map(|(k, v)| format!("{k}={}", format_real(*v)))
            .collect::<Vec<_>>()
            .join(";");
        csv.write_record([
            rel.display().to_string(),
            r.manifest_hash.clone(),
            r.policy.name.clone(),
            hyper,
            r.seed.to_string(),
            r.steps.to_string(),
            format_real(r.cumulative_reward),
            format_real(r.mean_reward),
            r.fingerprint.clone(),
            if mixed { "mixed".to_string() } else { String::new() },
        ])
        .expect("writing to memory");
    }
    let bytes = csv.into_inner().expect("flush to memory");
    write_file(out, &bytes)?;
    if mixed {
        print(stdout, "warning: rows come from different manifests (mixed_group=mixed)\n")?;
    }
    Ok(())
}
