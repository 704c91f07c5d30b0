//! The `structkan` command line.
//!
//! Exit codes: 0 success, 2 user or input error, 3 numerical failure.
//! Every file a subcommand writes goes under its `--out` directory, next
//! to a `manifest.json` that lists the resolved configuration, SHA-256
//! digests of the input files and the outputs written.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::experiments::{
    decomposability_score, derive_seed, fig1_svg, gen_dataset, parse_expr, parse_expr_with, run_fig1,
    ExperimentError, ExperimentSpec, ExprTree, Partition, UniformBox, DEFAULT_TRAIN_SAMPLES,
    DEFAULT_VAL_SAMPLES, DEFAULT_VARIABLES, STREAM_TRAIN, STREAM_VALIDATION, Z_MATCHED, Z_MISMATCHED,
};
use crate::representability::{counting_series, vitushkin_violates, CountingError, Smoothness, SmoothnessSpec};
use crate::topology::{NetworkDocument, NodeKind, TopologyError};
use crate::training::{train_boosted, train_smooth, Engine, EngineConfig, Parameters, Split, TrainError};

/// Environment variable capping worker threads; 0 or unset means automatic.
pub const THREADS_ENV: &str = "STRUCTKAN_THREADS";
const DEFAULT_MAX_P: u64 = 50;
const DEFAULT_PROBES: usize = 64;

const PRECEDENCE_HELP: &str = "\
Settings resolve in this order: command-line flags, then values from the \
--config JSON file, then built-in defaults.

Exit codes: 0 success, 2 user or input error, 3 numerical failure.
STRUCTKAN_THREADS caps worker threads (0 = automatic).";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CountingError> for CliError {
    fn from(e: CountingError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } | TrainError::NanOutput { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Train(t) => t.into(),
            ExperimentError::DegenerateGradient => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "structkan", version, about = "Structure-informed nested-function networks", after_help = PRECEDENCE_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a topology file against the structural rules.
    Validate(ValidateArgs),
    /// Smoothness ratio test and derivative-counting series for a topology.
    Analyze(AnalyzeArgs),
    /// Train a topology on a target expression.
    Train(TrainArgs),
    /// Reproduction experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Gradient-direction test of whether an expression splits over a partition.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Train the nested pair topology on a matched and a mismatched target.
    Fig1(Fig1Args),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Topology JSON file.
    #[arg(long)]
    pub topology: PathBuf,
    /// Also write the report and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub topology: PathBuf,
    /// Smoothness order of the target class (integer or "inf").
    #[arg(long, default_value = "inf")]
    pub k: String,
    /// Input dimension of the target class [default: topology input dimension].
    #[arg(long)]
    pub n: Option<u64>,
    /// Smoothness order of the node functions (integer or "inf").
    #[arg(long, default_value = "2")]
    pub k_prime: String,
    /// Inputs per nonlinear node [default: largest nonlinear node arity].
    #[arg(long)]
    pub n_prime: Option<u64>,
    /// Largest derivative order in the counting series.
    #[arg(long, default_value_t = DEFAULT_MAX_P)]
    pub max_p: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum EngineArg {
    Smooth,
    Boosted,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Smooth => Engine::Smooth,
            EngineArg::Boosted => Engine::Boosted,
        }
    }
}

/// Training settings shared by `train` and `experiment fig1`.
#[derive(Debug, Args, Default)]
pub struct TrainingFlags {
    /// JSON file with any of the settings below (snake_case keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Adam step (smooth) or shrinkage (boosted).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub tree_depth: Option<usize>,
    #[arg(long)]
    pub min_leaf_count: Option<usize>,
    /// Sensitivity probe as a fraction of the node output's standard deviation.
    #[arg(long)]
    pub fd_epsilon: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub val_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub topology: PathBuf,
    /// Target expression, e.g. "x1^2*x2 + y1*y2^2".
    #[arg(long)]
    pub target: String,
    /// [default: boosted if the topology has black-box nodes, else smooth]
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    #[command(flatten)]
    pub flags: TrainingFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Fig1Args {
    #[command(flatten)]
    pub flags: TrainingFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub expr: String,
    /// Two blocks of variable names, e.g. "x1,x2|y1,y2".
    #[arg(long)]
    pub partition: String,
    #[arg(long, default_value_t = DEFAULT_PROBES)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the result and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    engine: Option<Engine>,
    seed: Option<u64>,
    rounds: Option<usize>,
    learning_rate: Option<f64>,
    tree_depth: Option<usize>,
    min_leaf_count: Option<usize>,
    fd_epsilon: Option<f64>,
    batch_size: Option<usize>,
    train_samples: Option<usize>,
    val_samples: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
struct ResolvedTraining {
    engine: EngineConfig,
    train_samples: usize,
    val_samples: usize,
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

/// What a run read, resolved and wrote.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    subcommand: String,
    config: Value,
    seed: Option<u64>,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    duration_seconds: f64,
}

/// Collects input digests and writes outputs under one directory.
struct Run {
    subcommand: &'static str,
    started: Instant,
    out: Option<PathBuf>,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl Run {
    fn new(subcommand: &'static str, out: Option<&Path>) -> Result<Self, CliError> {
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        Ok(Self {
            subcommand,
            started: Instant::now(),
            out: out.map(Path::to_path_buf),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn read(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{} is not UTF-8", path.display())))
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let Some(dir) = &self.out else { return Ok(()) };
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, config: Value, seed: Option<u64>) -> Result<(), CliError> {
        if self.out.is_none() {
            return Ok(());
        }
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            config,
            seed,
            inputs: std::mem::take(&mut self.inputs),
            outputs: self.outputs.clone(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = pretty(&manifest);
        self.write("manifest.json", &text)
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

fn resolve_training(
    flags: &TrainingFlags,
    engine_flag: Option<Engine>,
    default_engine: Engine,
    run: &mut Run,
) -> Result<ResolvedTraining, CliError> {
    let file: ConfigFile = match &flags.config {
        Some(path) => {
            let text = run.read(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    let engine = engine_flag.or(file.engine).unwrap_or(default_engine);
    let d = EngineConfig::for_engine(engine);
    let cfg = EngineConfig {
        engine,
        seed: flags.seed.or(file.seed).unwrap_or(d.seed),
        rounds: flags.rounds.or(file.rounds).unwrap_or(d.rounds),
        learning_rate: flags.learning_rate.or(file.learning_rate).unwrap_or(d.learning_rate),
        tree_depth: flags.tree_depth.or(file.tree_depth).unwrap_or(d.tree_depth),
        min_leaf_count: flags.min_leaf_count.or(file.min_leaf_count).unwrap_or(d.min_leaf_count),
        fd_epsilon: flags.fd_epsilon.or(file.fd_epsilon).unwrap_or(d.fd_epsilon),
        batch_size: flags.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
    };
    cfg.check()?;
    Ok(ResolvedTraining {
        engine: cfg,
        train_samples: flags.train_samples.or(file.train_samples).unwrap_or(DEFAULT_TRAIN_SAMPLES),
        val_samples: flags.val_samples.or(file.val_samples).unwrap_or(DEFAULT_VAL_SAMPLES),
    })
}

fn git_describe() -> &'static str {
    option_env!("STRUCTKAN_GIT_DESCRIBE").unwrap_or("unknown")
}

/// Variable names for an `n`-input topology: the experiment names for four
/// inputs, `x1..xn` otherwise.
fn variable_names(n: usize) -> Vec<String> {
    if n == DEFAULT_VARIABLES.len() {
        DEFAULT_VARIABLES.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("x{i}")).collect()
    }
}

fn load_topology(run: &mut Run, path: &Path) -> Result<NetworkDocument, CliError> {
    let text = run.read(path)?;
    Ok(NetworkDocument::from_json(&text)?)
}

fn cmd_validate(args: &ValidateArgs) -> Result<String, CliError> {
    let mut run = Run::new("validate", args.out.as_deref())?;
    let doc = load_topology(&mut run, &args.topology)?;
    let report = doc.topology.validate();
    let is_tree = if report.is_ok() {
        Some(crate::topology::is_tree(&doc.topology)?)
    } else {
        None
    };
    let body = pretty(&json!({
        "valid": report.is_ok(),
        "node_count": doc.topology.nodes.len(),
        "input_dim": doc.topology.input_dim,
        "is_tree": is_tree,
        "violations": report.violations,
    }));
    run.write("validation.json", &body)?;
    run.finish(json!({ "topology": args.topology.display().to_string() }), None)?;
    if report.is_ok() {
        Ok(body)
    } else {
        Err(CliError::Input(format!("{body}{}", TopologyError::Invalid(report))))
    }
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<String, CliError> {
    let mut run = Run::new("analyze", Some(&args.out))?;
    let doc = load_topology(&mut run, &args.topology)?;
    let topology = doc.topology.into_valid()?;
    let k: Smoothness = args.k.parse()?;
    let k_prime: Smoothness = args.k_prime.parse()?;
    let n = args.n.unwrap_or(topology.input_dim() as u64);
    let nonlinear_arity = (0..topology.node_count())
        .filter(|&id| matches!(topology.kind(id), NodeKind::Univariate | NodeKind::BlackBox { .. }))
        .map(|id| topology.inputs_of(id).len() as u64)
        .max()
        .unwrap_or(1);
    let n_prime = args.n_prime.unwrap_or(nonlinear_arity);
    let spec = SmoothnessSpec { k, n, k_prime, n_prime };
    let violates = vitushkin_violates(&spec)?;
    let m = topology.univariate_count() as u64;

    let mut csv = String::from("p,N_p,deriv_dim_exact,paper_bound,representable_all\n");
    let (p_star, series_note) = if m == 0 {
        (None, Some("no univariate nodes; counting series skipped"))
    } else if n < 3 {
        (None, Some("counting series needs n >= 3"))
    } else {
        let series = counting_series(m, n, args.max_p)?;
        for r in &series {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.p, r.n_p_bound, r.deriv_dim_exact, r.pairwise_lower_bound, r.representable_all
            ));
        }
        (series.iter().find(|r| !r.representable_all).map(|r| r.p), None)
    };
    let verdict = if violates { "violates" } else { "satisfies" };
    let summary = json!({
        "m": m,
        "n": n,
        "k": k,
        "k_prime": k_prime,
        "n_prime": n_prime,
        "ratio_condition_violated": violates,
        "verdict": verdict,
        "max_p": args.max_p,
        "p_star": p_star,
        "note": series_note,
    });
    run.write("counting.csv", &csv)?;
    run.write("summary.json", &pretty(&summary))?;
    run.finish(
        json!({ "k": k, "n": n, "k_prime": k_prime, "n_prime": n_prime, "max_p": args.max_p }),
        None,
    )?;
    let p_text = p_star.map_or("none".to_string(), |p| p.to_string());
    Ok(format!(
        "p* = {p_text}\nverdict: {verdict} the ratio condition k'/n' <= k/n (k={k}, n={n}, k'={k_prime}, n'={n_prime})\n"
    ))
}

fn cmd_train(args: &TrainArgs) -> Result<String, CliError> {
    let mut run = Run::new("train", Some(&args.out))?;
    let doc = load_topology(&mut run, &args.topology)?;
    let topology = doc.topology.clone().into_valid()?;
    // Without an explicit choice, ensembles imply the boosted engine.
    let has_ensembles = (0..topology.node_count()).any(|id| matches!(topology.kind(id), NodeKind::BlackBox { .. }));
    let default_engine = if has_ensembles { Engine::Boosted } else { Engine::Smooth };
    let resolved = resolve_training(&args.flags, args.engine.map(Engine::from), default_engine, &mut run)?;
    let cfg = resolved.engine;
    let names = variable_names(topology.input_dim());
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let target = parse_expr_with(&args.target, &name_refs).map_err(|e| CliError::Input(e.to_string()))?;
    let (train, val) = datasets(&target, &resolved)?;

    let started = Instant::now();
    let result = match cfg.engine {
        Engine::Boosted => train_boosted(&topology, &train, &val, &cfg),
        Engine::Smooth => train_smooth(&topology, Parameters::new(doc.params.clone()), &train, &val, &cfg),
    };
    let (params, trace) = match result {
        Ok(r) => r,
        Err(TrainError::Diverged { round, initial, loss, trace }) => {
            run.write("trace.csv", &trace.to_csv())?;
            let err = TrainError::Diverged { round, initial, loss, trace };
            run.finish(serde_json::to_value(&resolved).expect("config serializes"), Some(cfg.seed))?;
            return Err(err.into());
        }
        Err(e) => return Err(e.into()),
    };
    let wall = started.elapsed().as_secs_f64();
    run.write("trace.csv", &trace.to_csv())?;
    let model = NetworkDocument {
        topology: doc.topology,
        params: params.into_inner(),
    };
    run.write("model.json", &model.to_json())?;
    run.write(
        "trace.json",
        &pretty(&json!({
            "seed": cfg.seed,
            "config": resolved,
            "config_digest": trace.config_digest,
            "target": args.target,
            "git_describe": git_describe(),
            "wall_time_seconds": wall,
        })),
    )?;
    run.finish(serde_json::to_value(&resolved).expect("config serializes"), Some(cfg.seed))?;
    Ok(format!(
        "final val_rmse_norm = {}\n",
        trace.final_val().map_or("n/a".into(), |v| v.to_string())
    ))
}

fn datasets(target: &ExprTree, resolved: &ResolvedTraining) -> Result<(crate::training::Dataset, crate::training::Dataset), CliError> {
    let dist = UniformBox::symmetric(target.dim(), 1.0);
    let seed = resolved.engine.seed;
    for n in [resolved.train_samples, resolved.val_samples] {
        if n < 2 {
            return Err(CliError::Input(format!("need at least 2 samples, got {n}")));
        }
    }
    let train = gen_dataset(target, resolved.train_samples, &dist, derive_seed(seed, STREAM_TRAIN), Split::Train)?;
    let val = gen_dataset(target, resolved.val_samples, &dist, derive_seed(seed, STREAM_VALIDATION), Split::Validation)?;
    Ok((train, val))
}

fn cmd_fig1(args: &Fig1Args) -> Result<String, CliError> {
    let mut run = Run::new("experiment fig1", Some(&args.out))?;
    let resolved = resolve_training(&args.flags, None, Engine::Boosted, &mut run)?;
    if resolved.engine.engine != Engine::Boosted {
        return Err(CliError::Input("experiment fig1 uses the boosted engine".into()));
    }
    let seed = resolved.engine.seed;
    let mut matched = ExperimentSpec::fig1_default(Z_MATCHED, seed)?;
    matched.config = resolved.engine;
    matched.train_samples = resolved.train_samples;
    matched.val_samples = resolved.val_samples;
    let mismatched = matched.with_target(Z_MISMATCHED)?;
    let result = run_fig1(&matched, &mismatched)?;
    run.write("trace_z.csv", &result.matched.to_csv())?;
    run.write("trace_zprime.csv", &result.mismatched.to_csv())?;
    let summary = pretty(&result.summary);
    run.write("summary.json", &summary)?;
    run.write("fig1.svg", &fig1_svg(&result))?;
    run.finish(serde_json::to_value(&resolved).expect("config serializes"), Some(seed))?;
    Ok(summary)
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<String, CliError> {
    let mut run = Run::new("decompose", args.out.as_deref())?;
    let expr = parse_expr(&args.expr).map_err(|e| CliError::Input(e.to_string()))?;
    let partition = Partition::parse(&args.partition, &expr)?;
    let score = decomposability_score(&expr, &partition, args.probes, args.seed)?;
    let body = pretty(&json!({
        "expr": args.expr,
        "partition": args.partition,
        "probes": args.probes,
        "seed": args.seed,
        "score": score.score,
        "verdict": score.verdict(),
        "blocks": score.blocks,
    }));
    run.write("decompose.json", &body)?;
    run.finish(
        json!({ "expr": args.expr, "partition": args.partition, "probes": args.probes }),
        Some(args.seed),
    )?;
    Ok(body)
}

/// Runs a parsed command and returns what it prints on success.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Train(a) => cmd_train(a),
        Command::Experiment(ExperimentCommand::Fig1(a)) => cmd_fig1(a),
        Command::Decompose(a) => cmd_decompose(a),
    }
}

fn thread_cap() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'"))),
        _ => Ok(0),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match thread_cap() {
        Ok(n) => crate::par::init_threads(n),
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    }
    match std::panic::catch_unwind(|| execute(&cli)) {
        Ok(Ok(text)) => {
            print!("{text}");
            0
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => {
            eprintln!("error: internal failure");
            3
        }
    }
}
