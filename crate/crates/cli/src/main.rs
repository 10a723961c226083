use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use exposure_core::estimators::{risk, true_risk};
use exposure_core::evaluation::{evaluate_universe, MetricReport, Target};
use exposure_core::feedback::{feedback_with_trained_model, run_trajectory, FeedbackConfig, FeedbackMode, PipelineConfig};
use exposure_core::graph::{random_split, write_edges, SplitFractions};
use exposure_core::models::{pair_estimates, Checkpoint};
use exposure_core::synthesis::{generate_world, sample_observed, sample_outcomes, GroundTruthWorld, SyntheticSpec};
use exposure_core::training::{train_from, TrainData, TrainEstimator};
use exposure_core::validation::{run_validation, ClosedForms};
use exposure_core::{rng_from_seed, Error, ErrorKind, Estimator, Graph, LossKind, LossSpec, TrainConfig};

#[derive(Parser)]
#[command(name = "exposure", version, about = "Link recommendation under exposure bias")]
struct Cli {
    /// JSON config for the subcommand, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a semi-synthetic world and sample an observed graph from it.
    Generate,
    /// Train the link and propensity models.
    Train(TrainArgs),
    /// Estimate the risk of a checkpoint with one or more estimators.
    EstimateRisk(RiskArgs),
    /// Classification and ranking metrics of a checkpoint.
    Evaluate(EvalArgs),
    /// Simulate a feedback loop.
    Feedback(FeedbackArgs),
    /// Run the oracle checks and write a pass/fail report.
    Validate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train(_) => "train",
            Command::EstimateRisk(_) => "estimate-risk",
            Command::Evaluate(_) => "evaluate",
            Command::Feedback(_) => "feedback",
            Command::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Split {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TrainEstimatorArg {
    None,
    Mle,
    W,
    Pu,
    Ap,
}

#[derive(clap::Args, Clone, Debug, Default, Serialize, Deserialize)]
struct DataArgs {
    /// Directory with nodes.jsonl and edges.tsv (and the truth files for worlds).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Restrict to one part of the random 70/10/20 node split.
    #[arg(long, value_enum)]
    split: Option<Split>,
    #[arg(long)]
    split_seed: Option<u64>,
}

impl DataArgs {
    fn fill(&mut self, from: DataArgs) {
        self.data = self.data.take().or(from.data);
        self.split = self.split.or(from.split);
        self.split_seed = self.split_seed.or(from.split_seed);
    }
}

#[derive(clap::Args, Clone, Debug, Default, Serialize, Deserialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    estimator: Option<TrainEstimatorArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda_l: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
}

#[derive(clap::Args, Clone, Debug, Default, Serialize, Deserialize)]
struct RiskArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated subset of naive,w,pu,ap.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Scale of the zero-one loss.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    Log,
    ZeroOne,
}

#[derive(clap::Args, Clone, Debug, Default, Serialize, Deserialize)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Score against observed links or against links sampled from the true `y`.
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TargetArg {
    Observed,
    True,
}

#[derive(clap::Args, Clone, Debug, Default, Serialize, Deserialize)]
struct FeedbackArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Naive,
    Corrected,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    command: String,
    version: String,
    seed: u64,
    config: Value,
    args: Value,
    started_at: u64,
    finished_at: u64,
    wall_clock_secs: f64,
    outputs: Vec<String>,
}

/// Marks errors in configuration (exit code 2).
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Marks a validation report with failing checks (exit code 4).
#[derive(Debug)]
struct ChecksFailed(Vec<String>);

impl std::fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "failing checks: {}", self.0.join(", "))
    }
}

impl std::error::Error for ChecksFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<ChecksFailed>().is_some() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

/// What `--config` resolved to.
enum Loaded {
    None,
    Config(Value),
    Manifest(Manifest),
}

fn load_config(path: Option<&Path>, command: &str) -> anyhow::Result<Loaded> {
    let Some(path) = path else {
        return Ok(Loaded::None);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| config_error(format!("config {} is not valid JSON: {e}", path.display())))?;
    let is_manifest = ["command", "config", "args", "version"]
        .iter()
        .all(|k| value.get(k).is_some());
    if !is_manifest {
        return Ok(Loaded::Config(value));
    }
    let manifest: Manifest = serde_json::from_value(value)
        .map_err(|e| config_error(format!("manifest {} is malformed: {e}", path.display())))?;
    if manifest.command != command {
        return Err(config_error(format!(
            "manifest {} records `{}`, not `{command}`",
            path.display(),
            manifest.command
        )));
    }
    Ok(Loaded::Manifest(manifest))
}

fn parse_config<T: serde::de::DeserializeOwned>(value: Value, what: &str) -> anyhow::Result<T> {
    serde_json::from_value(value).map_err(|e| config_error(format!("invalid {what} config: {e}")))
}

/// Typed config plus the stored arguments of a replayed manifest.
fn resolve<T: serde::de::DeserializeOwned, A: serde::de::DeserializeOwned + Default>(
    loaded: Loaded,
    what: &str,
) -> anyhow::Result<(Option<T>, A, Option<u64>)> {
    match loaded {
        Loaded::None => Ok((None, A::default(), None)),
        Loaded::Config(v) => Ok((Some(parse_config(v, what)?), A::default(), None)),
        Loaded::Manifest(m) => {
            let args = match m.args {
                Value::Null => A::default(),
                v => serde_json::from_value(v).map_err(|e| config_error(format!("manifest arguments: {e}")))?,
            };
            Ok((Some(parse_config(m.config, what)?), args, Some(m.seed)))
        }
    }
}

struct Run {
    out: PathBuf,
    outputs: Vec<String>,
}

impl Run {
    fn new(out: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            out: out.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

fn load_graph(dir: &Path) -> anyhow::Result<(Graph, Option<GroundTruthWorld>)> {
    if !dir.is_dir() {
        return Err(Error::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
        }
        .into());
    }
    let world = if dir.join("truth.json").exists() {
        Some(GroundTruthWorld::load(dir)?)
    } else {
        None
    };
    let mut g = Graph::load(dir.join("nodes.jsonl"), dir.join("edges.tsv"))?;
    if let Some(w) = &world {
        g = g.with_categories(w.categories())?;
    }
    Ok((g, world))
}

/// The selected node ids (in original numbering) and the induced graph.
fn select(g: &Graph, data: &DataArgs) -> anyhow::Result<(Graph, Vec<usize>)> {
    let split = data.split.unwrap_or(Split::All);
    if split == Split::All {
        return Ok((g.clone(), (0..g.n()).collect()));
    }
    let mut rng = rng_from_seed(data.split_seed.unwrap_or(0));
    let parts = random_split(g.n(), SplitFractions::default(), &mut rng)?;
    let ids = match split {
        Split::Train => parts.train,
        Split::Validation => parts.validation,
        Split::Test => parts.test,
        Split::All => unreachable!(),
    };
    Ok((g.induced_subgraph(&ids)?.with_categories(g.categories())?, ids))
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| config_error(format!("--{flag} is required")))
}

struct Outcome {
    seed: u64,
    config: Value,
    args: Value,
}

fn cmd_generate(cli: &Cli, loaded: Loaded, run: &mut Run) -> anyhow::Result<Outcome> {
    let (spec, (), stored_seed) = resolve::<SyntheticSpec, ()>(loaded, "generate")?;
    let mut spec = spec.unwrap_or_else(|| SyntheticSpec::new(500, 2, 0));
    if let Some(s) = cli.seed.or(stored_seed) {
        spec.seed = s;
    }
    let world = generate_world(&spec)?;
    let g = sample_observed(&world, &mut rng_from_seed(spec.seed.wrapping_add(1)))?;
    world.save(&run.out)?;
    for name in ["nodes.jsonl", "pi.csv", "truth.json"] {
        run.outputs.push(name.into());
    }
    let edges = run.path("edges.tsv");
    write_edges(&edges, g.edges())?;
    println!("generated {} nodes, {} categories, {} observed edges", g.n(), world.categories(), g.edge_count());
    Ok(Outcome {
        seed: spec.seed,
        config: serde_json::to_value(&spec)?,
        args: Value::Null,
    })
}

fn cmd_train(cli: &Cli, args: &TrainArgs, loaded: Loaded, run: &mut Run) -> anyhow::Result<Outcome> {
    let (cfg, stored, stored_seed) = resolve::<TrainConfig, TrainArgs>(loaded, "train")?;
    let mut args = args.clone();
    args.data.fill(stored.data);
    let mut cfg = cfg.unwrap_or_default();
    match args.estimator {
        Some(TrainEstimatorArg::Mle) => {
            cfg.estimator = None;
            cfg.lambda_r = 0.0;
        }
        Some(TrainEstimatorArg::None) => cfg.estimator = Some(TrainEstimator::None),
        Some(TrainEstimatorArg::W) => cfg.estimator = Some(TrainEstimator::W),
        Some(TrainEstimatorArg::Pu) => cfg.estimator = Some(TrainEstimator::Pu),
        Some(TrainEstimatorArg::Ap) => cfg.estimator = Some(TrainEstimator::Ap),
        None => {}
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lambda_l {
        cfg.lambda_l = v;
    }
    if let Some(v) = args.lambda_r {
        cfg.lambda_r = v;
    }
    if let Some(v) = args.negatives {
        cfg.negatives_per_positive = v;
    }
    if let Some(s) = cli.seed.or(stored_seed) {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (g, _) = load_graph(require(&args.data.data, "data")?)?;
    let (train_graph, _) = select(&g, &args.data)?;
    let report = train_from(TrainData::new(&train_graph), &cfg, None)?;
    let ckpt = Checkpoint::new(&report.link, &report.propensity);
    let path = run.path("checkpoint.json");
    ckpt.save(&path)?;
    run.write_json("report.json", &report)?;
    println!(
        "trained {} epochs on {} edges; final loss {:.6}",
        report.epochs_run,
        train_graph.edge_count(),
        report.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    let stored_args = TrainArgs {
        data: args.data.clone(),
        ..Default::default()
    };
    Ok(Outcome {
        seed: cfg.seed,
        config: serde_json::to_value(&cfg)?,
        args: serde_json::to_value(stored_args)?,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RiskConfig {
    estimators: Vec<Estimator>,
    loss: LossSpec,
}

#[derive(Serialize)]
struct RiskRow {
    estimator: Estimator,
    value: f64,
    /// Estimate minus the true risk, when the truth is known.
    error: Option<f64>,
}

#[derive(Serialize)]
struct RiskTable {
    n_pairs: usize,
    loss: LossSpec,
    true_risk: Option<f64>,
    estimates: Vec<RiskRow>,
}

fn cmd_estimate_risk(cli: &Cli, args: &RiskArgs, loaded: Loaded, run: &mut Run) -> anyhow::Result<Outcome> {
    let (cfg, stored, stored_seed) = resolve::<RiskConfig, RiskArgs>(loaded, "estimate-risk")?;
    let mut args = args.clone();
    args.data.fill(stored.data);
    args.checkpoint = args.checkpoint.or(stored.checkpoint);
    let mut cfg = cfg.unwrap_or(RiskConfig {
        estimators: Estimator::OBSERVABLE.to_vec(),
        loss: LossSpec::log(),
    });
    if let Some(list) = args.estimators.clone() {
        cfg.estimators = list;
    }
    match args.loss {
        Some(LossArg::Log) => cfg.loss = LossSpec::log(),
        Some(LossArg::ZeroOne) => cfg.loss = LossSpec::zero_one(args.delta.unwrap_or(1.0)),
        None => {
            if let (Some(d), LossKind::ZeroOne) = (args.delta, cfg.loss.kind) {
                cfg.loss.delta = d;
            }
        }
    }
    if cfg.estimators.is_empty() {
        return Err(config_error("estimators: the estimator list is empty"));
    }
    if cfg.estimators.contains(&Estimator::True) {
        return Err(config_error("estimators: `true` is reported automatically when the truth is known"));
    }
    let (g, world) = load_graph(require(&args.data.data, "data")?)?;
    let (sub, ids) = select(&g, &args.data)?;
    let (link, prop) = Checkpoint::load(require(&args.checkpoint, "checkpoint")?)?.into_models()?;
    let est = pair_estimates(&sub, &link, Some(&prop))?;
    let o = sub.label_vector();
    let truth = match &world {
        Some(w) => Some(true_risk(&w.ground_truth_on(&ids)?, &est, &cfg.loss)?.value),
        None => None,
    };
    let mut rows = Vec::new();
    for &which in &cfg.estimators {
        let value = risk(which, &o, &est, &cfg.loss, false)?.value;
        rows.push(RiskRow {
            estimator: which,
            value,
            error: truth.map(|t| value - t),
        });
        println!("{:>5}: {value:.6}", which.to_string());
    }
    if let Some(t) = truth {
        println!(" true: {t:.6}");
    }
    run.write_json(
        "risk.json",
        &RiskTable {
            n_pairs: est.len(),
            loss: cfg.loss,
            true_risk: truth,
            estimates: rows,
        },
    )?;
    let stored_args = RiskArgs {
        data: args.data.clone(),
        checkpoint: args.checkpoint.clone(),
        ..Default::default()
    };
    Ok(Outcome {
        seed: cli.seed.or(stored_seed).unwrap_or(0),
        config: serde_json::to_value(&cfg)?,
        args: serde_json::to_value(stored_args)?,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    k: usize,
    target: Target,
}

fn cmd_evaluate(cli: &Cli, args: &EvalArgs, loaded: Loaded, run: &mut Run) -> anyhow::Result<Outcome> {
    let (cfg, stored, stored_seed) = resolve::<EvalConfig, EvalArgs>(loaded, "evaluate")?;
    let mut args = args.clone();
    args.data.fill(stored.data);
    args.checkpoint = args.checkpoint.or(stored.checkpoint);
    let mut cfg = cfg.unwrap_or(EvalConfig {
        k: 100,
        target: Target::Observed,
    });
    if let Some(k) = args.k {
        cfg.k = k;
    }
    match args.target {
        Some(TargetArg::Observed) => cfg.target = Target::Observed,
        Some(TargetArg::True) => cfg.target = Target::True,
        None => {}
    }
    let seed = cli.seed.or(stored_seed).unwrap_or(0);
    let (g, world) = load_graph(require(&args.data.data, "data")?)?;
    let (sub, ids) = select(&g, &args.data)?;
    let (link, _) = Checkpoint::load(require(&args.checkpoint, "checkpoint")?)?.into_models()?;
    let scores = exposure_core::models::link_probabilities(&sub, &link)?;
    let labels = match cfg.target {
        Target::Observed => sub.label_vector(),
        Target::True => {
            let world = world.ok_or_else(|| config_error("target: `true` needs a world directory with truth.json"))?;
            let mut truth = world.ground_truth_on(&ids)?;
            truth.pi.iter_mut().for_each(|p| *p = 1.0);
            sample_outcomes(&truth, &mut rng_from_seed(seed))
        }
    };
    let categories: Vec<usize> = (0..sub.n()).map(|i| sub.category(i)).collect();
    let report = evaluate_universe(sub.n(), &scores, &labels, &categories, cfg.k, cfg.target)?;
    run.write_json("metrics.json", &report)?;
    let csv = run.path("metrics.csv");
    std::fs::write(&csv, format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row()))?;
    println!("{}\n{}", MetricReport::CSV_HEADER, report.csv_row());
    let stored_args = EvalArgs {
        data: args.data.clone(),
        checkpoint: args.checkpoint.clone(),
        ..Default::default()
    };
    Ok(Outcome {
        seed,
        config: serde_json::to_value(&cfg)?,
        args: serde_json::to_value(stored_args)?,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FeedbackJob {
    Process(FeedbackConfig),
    Pipeline(PipelineConfig),
}

fn cmd_feedback(cli: &Cli, args: &FeedbackArgs, loaded: Loaded, run: &mut Run) -> anyhow::Result<Outcome> {
    let (job, _, stored_seed) = resolve::<FeedbackJob, FeedbackArgs>(loaded, "feedback")?;
    let mut job = job.unwrap_or_else(|| FeedbackJob::Process(FeedbackConfig::naive(vec![0.8, 0.4], 100_000, 5, 0)));
    let seed_override = cli.seed.or(stored_seed);
    let seed = match &mut job {
        FeedbackJob::Process(cfg) => {
            if let Some(t) = args.steps {
                cfg.steps = t;
            }
            match args.mode {
                Some(ModeArg::Naive) => cfg.mode = FeedbackMode::Naive,
                Some(ModeArg::Corrected) => cfg.mode = FeedbackMode::Corrected,
                None => {}
            }
            if let Some(s) = seed_override {
                cfg.seed = s;
            }
            let traj = run_trajectory(cfg)?;
            let csv = run.path("trajectory.csv");
            traj.write_csv(&csv)?;
            run.write_json("trajectory.json", &traj)?;
            let last = traj.states.last().expect("initial state");
            println!("kappa after {} steps: {:?}", last.t, last.kappa);
            cfg.seed
        }
        FeedbackJob::Pipeline(cfg) => {
            if let Some(t) = args.steps {
                cfg.iterations = t;
            }
            if args.mode.is_some() {
                return Err(config_error("mode: the trained-model pipeline is selected by `pipeline`"));
            }
            if let Some(s) = seed_override {
                cfg.seed = s;
            }
            let report = feedback_with_trained_model(cfg)?;
            let csv = run.path("pipeline.csv");
            report.write_csv(&csv)?;
            run.write_json("pipeline.json", &report)?;
            println!("same-category share by iteration: {:?}", report.overall);
            cfg.seed
        }
    };
    Ok(Outcome {
        seed,
        config: serde_json::to_value(&job)?,
        args: Value::Null,
    })
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ValidateConfig {
    #[serde(default)]
    seed: u64,
}

fn cmd_validate(cli: &Cli, loaded: Loaded, run: &mut Run) -> anyhow::Result<Outcome> {
    let (cfg, (), stored_seed) = resolve::<ValidateConfig, ()>(loaded, "validate")?;
    let mut cfg = cfg.unwrap_or_default();
    if let Some(s) = cli.seed.or(stored_seed) {
        cfg.seed = s;
    }
    let report = run_validation(cfg.seed, &ClosedForms::default())?;
    run.write_json("validation.json", &report)?;
    for c in &report.checks {
        println!("{} {:<20} {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.detail);
    }
    let outcome = Outcome {
        seed: cfg.seed,
        config: serde_json::to_value(&cfg)?,
        args: Value::Null,
    };
    if !report.passed {
        let failed = report.checks.iter().filter(|c| !c.passed).map(|c| c.id.clone()).collect();
        write_manifest(cli, run, &outcome, unix_now(), Instant::now())?;
        return Err(ChecksFailed(failed).into());
    }
    Ok(outcome)
}

fn write_manifest(cli: &Cli, run: &mut Run, outcome: &Outcome, started_at: u64, clock: Instant) -> anyhow::Result<()> {
    let mut outputs = run.outputs.clone();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        command: cli.command.name().into(),
        version: version(),
        seed: outcome.seed,
        config: outcome.config.clone(),
        args: outcome.args.clone(),
        started_at,
        finished_at: unix_now(),
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        outputs,
    };
    let path = run.out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(config_error("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let started_at = unix_now();
    let clock = Instant::now();
    let loaded = load_config(cli.config.as_deref(), cli.command.name())?;
    let mut out = Run::new(&cli.out)?;
    let outcome = match &cli.command {
        Command::Generate => cmd_generate(cli, loaded, &mut out)?,
        Command::Train(a) => cmd_train(cli, a, loaded, &mut out)?,
        Command::EstimateRisk(a) => cmd_estimate_risk(cli, a, loaded, &mut out)?,
        Command::Evaluate(a) => cmd_evaluate(cli, a, loaded, &mut out)?,
        Command::Feedback(a) => cmd_feedback(cli, a, loaded, &mut out)?,
        Command::Validate => cmd_validate(cli, loaded, &mut out)?,
    };
    write_manifest(cli, &mut out, &outcome, started_at, clock)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
