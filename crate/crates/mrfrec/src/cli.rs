//! Batch command-line driver.
//!
//! One process per invocation: `ingest`, `split`, `train`, `evaluate`,
//! `predict`, `rank`, `export-graph`. Configuration is a flat `key=value`
//! file overlaid by repeatable `--set key=value` flags (flag beats file beats
//! default); unknown keys are rejected before any work starts. All randomness
//! flows from the single `seed` key, and every output file starts with `#`
//! comment lines echoing the effective configuration.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training abort.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::data::{
    chronological_split, filter_infrequent, parse_ratings, write_ratings, DataError,
    RatingDataset, RatingsFormat, SplitBundle,
};
use crate::harness::{
    compute_metrics, extract_graph, run_experiment, write_graph, write_metrics_table,
    ExperimentConfig, GraphKind, HarnessError, MetricsRecord, ModelSpec, ScoredPrediction,
};
use crate::inference::{self, PredictionRecord, RankCriterion};
use crate::learning::{train, TrainConfig, TrainError};
use crate::model::checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
use crate::model::{ModelParams, ModelScope, Parameterization};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Failures grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(format!("checkpoint: {e}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::BadSpec(s) => CliError::Usage(format!("unknown model spec `{s}`")),
            HarnessError::Train(t) => t.into(),
            HarnessError::Rsvd(r) => CliError::Runtime(r.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Every key the flat configuration understands.
const KNOWN_KEYS: &[&str] = &[
    // data protocol
    "separator", "k", "minRatings", "validPerUser", "testPerUser",
    // MRF model and training
    "scheme", "scope", "method", "lambda1", "lambda2", "etaBias", "etaPair", "batch", "epsilon",
    "cdSteps", "itemCap", "userCap", "stage1MinEpochs", "patience", "maxEpochs", "smoothing",
    // RSVD
    "rsvdF", "rsvdLambda", "rsvdLambdaGrid", "rsvdEta", "rsvdEtaVar", "rsvdBatch",
    "rsvdPatience", "rsvdMaxEpochs",
    // k-NN
    "simFloor", "maxNeighbors",
    // inference and export
    "criterion", "top", "threshold", "kind",
    // global
    "seed", "threads",
    // paths
    "input", "output", "outDir", "train", "valid", "test", "checkpoint", "log", "metricsOut",
    "dump",
];

/// Merged configuration: file entries overridden by `--set` pairs overridden
/// by explicit command-line flags (the handlers fold flags in last).
#[derive(Debug, Default, Clone)]
pub struct Settings {
    map: std::collections::BTreeMap<String, String>,
}

impl Settings {
    pub fn insert(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::Usage(format!("unknown configuration key `{key}`")));
        }
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Parse one `key=value` line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got `{pair}`")))?;
        self.insert(key.trim(), value.trim())
    }

    /// Load a flat configuration file (UTF-8 `key=value` lines, `#` comments).
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let file = File::open(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CliError::Data(e.to_string()))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            self.set_pair(trimmed).map_err(|e| {
                CliError::Usage(format!("{} line {}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    /// Record a resolved effective value (handlers fold defaults back in so
    /// that echoed headers describe the full configuration, not only the
    /// explicitly set part).
    fn put(&mut self, key: &str, value: impl fmt::Display) {
        debug_assert!(KNOWN_KEYS.contains(&key), "unknown key {key}");
        self.map.insert(key.to_string(), value.to_string());
    }

    /// `key=value` lines of the effective configuration, sorted by key.
    pub fn echo(&self) -> Vec<String> {
        self.map.iter().map(|(k, v)| format!("{k}={v}")).collect()
    }
}

fn fold_train_config(settings: &mut Settings, c: &TrainConfig) {
    settings.put("method", c.method);
    settings.put("lambda1", c.lambda1);
    settings.put("lambda2", c.lambda2);
    settings.put("etaBias", c.eta_bias);
    settings.put("etaPair", c.eta_pair);
    settings.put("batch", c.batch);
    settings.put("epsilon", c.epsilon);
    settings.put("cdSteps", c.cd_steps);
    settings.put("itemCap", c.item_cap.map_or("none".to_string(), |v| v.to_string()));
    settings.put("userCap", c.user_cap.map_or("none".to_string(), |v| v.to_string()));
    settings.put("stage1MinEpochs", c.stage1_min_epochs);
    settings.put("patience", c.patience);
    settings.put("maxEpochs", c.max_epochs);
    settings.put("seed", c.seed);
    settings.put("smoothing", c.smoothing);
}

fn parse_val<T: FromStr>(s: &Settings, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    match s.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|e| CliError::Usage(format!("bad value {raw:?} for {key}: {e}"))),
    }
}

fn parse_cap(s: &Settings, key: &str) -> Result<Option<usize>, CliError> {
    match s.get(key) {
        None => Ok(None),
        Some("none") | Some("") => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("bad value {raw:?} for {key}: {e}"))),
    }
}

fn train_config(s: &Settings) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let config = TrainConfig {
        method: parse_val(s, "method", d.method)?,
        lambda1: parse_val(s, "lambda1", d.lambda1)?,
        lambda2: parse_val(s, "lambda2", d.lambda2)?,
        eta_bias: parse_val(s, "etaBias", d.eta_bias)?,
        eta_pair: parse_val(s, "etaPair", d.eta_pair)?,
        batch: parse_val(s, "batch", d.batch)?,
        epsilon: parse_val(s, "epsilon", d.epsilon)?,
        cd_steps: parse_val(s, "cdSteps", d.cd_steps)?,
        item_cap: parse_cap(s, "itemCap")?,
        user_cap: parse_cap(s, "userCap")?,
        stage1_min_epochs: parse_val(s, "stage1MinEpochs", d.stage1_min_epochs)?,
        patience: parse_val(s, "patience", d.patience)?,
        max_epochs: parse_val(s, "maxEpochs", d.max_epochs)?,
        seed: parse_val(s, "seed", d.seed)?,
        smoothing: parse_val(s, "smoothing", d.smoothing)?,
    };
    config.validate()?;
    Ok(config)
}

fn experiment_config(s: &Settings) -> Result<ExperimentConfig, CliError> {
    let d = ExperimentConfig::default();
    let rsvd = crate::baselines::RsvdConfig {
        f: parse_val(s, "rsvdF", d.rsvd.f)?,
        lambda: parse_val(s, "rsvdLambda", d.rsvd.lambda)?,
        eta: parse_val(s, "rsvdEta", d.rsvd.eta)?,
        eta_var: parse_val(s, "rsvdEtaVar", d.rsvd.eta_var)?,
        batch: parse_val(s, "rsvdBatch", d.rsvd.batch)?,
        patience: parse_val(s, "rsvdPatience", d.rsvd.patience)?,
        max_epochs: parse_val(s, "rsvdMaxEpochs", d.rsvd.max_epochs)?,
        seed: parse_val(s, "seed", d.rsvd.seed)?,
        smoothing: parse_val(s, "smoothing", d.rsvd.smoothing)?,
    };
    let grid = match s.get("rsvdLambdaGrid") {
        None => d.rsvd_lambda_grid,
        Some(raw) => raw
            .split(',')
            .map(|tok| {
                tok.trim().parse().map_err(|e| {
                    CliError::Usage(format!("bad value {tok:?} in rsvdLambdaGrid: {e}"))
                })
            })
            .collect::<Result<Vec<f64>, CliError>>()?,
    };
    Ok(ExperimentConfig {
        train: train_config(s)?,
        rsvd,
        rsvd_lambda_grid: grid,
        knn_sim_floor: parse_val(s, "simFloor", d.knn_sim_floor)?,
        knn_max_neighbors: parse_val(s, "maxNeighbors", d.knn_max_neighbors)?,
    })
}

#[derive(Parser, Debug)]
#[command(
    name = "mrfrec",
    version,
    about = "Markov-random-field collaborative filtering: train, evaluate, export"
)]
pub struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable, beats the file).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master random seed (shorthand for --set seed=...).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse raw ratings, drop infrequent users, write the working format.
    Ingest(IngestArgs),
    /// Chronologically split a dataset into train/validation/test files.
    Split(SplitArgs),
    /// Train an MRF, write a checkpoint and an epoch log.
    Train(TrainArgs),
    /// Fit model specs on a split and report test metrics.
    Evaluate(EvaluateArgs),
    /// Score evaluation cells with a trained checkpoint.
    Predict(PredictArgs),
    /// Rank a user's unseen items.
    Rank(RankArgs),
    /// Export learned interaction weights as an edge list.
    ExportGraph(ExportGraphArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw ratings file (`user<SEP>item<SEP>rating<SEP>timestamp` lines).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Destination for the tab-separated working format.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Raw field separator (default `::`).
    #[arg(long)]
    pub separator: Option<String>,
    /// Drop users with fewer ratings than this (default 30).
    #[arg(long)]
    pub min_ratings: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Ingested dataset (working format).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory receiving train.tsv, validation.tsv and test.tsv.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Held-out validation ratings per user (default 5).
    #[arg(long)]
    pub valid_per_user: Option<usize>,
    /// Held-out test ratings per user (default 10).
    #[arg(long)]
    pub test_per_user: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training split (working format).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation split; omit to monitor the training objective.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Potential family: linear, gauss or smooth (default smooth).
    #[arg(long)]
    pub scheme: Option<String>,
    /// Interaction scope: user, item or joint (default joint).
    #[arg(long)]
    pub scope: Option<String>,
    /// Gradient estimator: pl or cd.
    #[arg(long)]
    pub method: Option<String>,
    /// Checkpoint destination.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Epoch log destination (optional).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Model spec token (repeatable): item-mean, weighted, knn, rsvd, or
    /// mrf.<scope>.<scheme>.<method>.
    #[arg(long = "spec")]
    pub specs: Vec<String>,
    /// Score an existing checkpoint instead of fitting a spec.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Metrics table destination (stdout always gets a copy).
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Per-cell prediction dump (single spec only).
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Observed ratings the conditionals condition on (usually the train split).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Cells to score, with truths (working format).
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Instead of --eval: score every unseen item of this user.
    #[arg(long)]
    pub user: Option<u32>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub user: u32,
    /// Ranking criterion: energy or free-energy (default free-energy).
    #[arg(long)]
    pub criterion: Option<String>,
    /// Keep only the best N items.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportGraphArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Which weight family to export: item or user (default item).
    #[arg(long)]
    pub kind: Option<String>,
    /// Keep edges with |weight| at or above this (default 0: all stored).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parse `args` and execute; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut settings = Settings::default();
    if let Some(path) = &cli.config {
        settings.load_file(path)?;
    }
    for pair in &cli.set {
        settings.set_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        settings.insert("seed", &seed.to_string())?;
    }
    if let Some(threads) = cli.threads {
        settings.insert("threads", &threads.to_string())?;
    }
    if let Some(raw) = settings.get("threads") {
        let threads: usize = raw
            .parse()
            .map_err(|e| CliError::Usage(format!("bad value {raw:?} for threads: {e}")))?;
        // A second pool in the same process is not possible; keep the first.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, settings),
        Command::Split(args) => cmd_split(args, settings),
        Command::Train(args) => cmd_train(args, settings),
        Command::Evaluate(args) => cmd_evaluate(args, settings),
        Command::Predict(args) => cmd_predict(args, settings),
        Command::Rank(args) => cmd_rank(args, settings),
        Command::ExportGraph(args) => cmd_export_graph(args, settings),
    }
}

fn fold_path(
    settings: &mut Settings,
    key: &str,
    flag: Option<PathBuf>,
) -> Result<(), CliError> {
    if let Some(p) = flag {
        settings.insert(key, &p.to_string_lossy())?;
    }
    Ok(())
}

fn need_path(settings: &Settings, key: &str) -> Result<PathBuf, CliError> {
    settings
        .get(key)
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage(format!("missing required path `{key}` (flag or config)")))
}

fn need_input(settings: &Settings, key: &str) -> Result<PathBuf, CliError> {
    let path = need_path(settings, key)?;
    if !path.is_file() {
        return Err(CliError::Data(format!("{}: no such file", path.display())));
    }
    Ok(path)
}

fn open_out(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn working_format(settings: &Settings) -> Result<RatingsFormat, CliError> {
    Ok(RatingsFormat { separator: "\t".to_string(), k: parse_val(settings, "k", 5u8)? })
}

fn load_dataset(settings: &Settings, path: &Path) -> Result<RatingDataset, CliError> {
    let file =
        File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_ratings(BufReader::new(file), &working_format(settings)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn empty_dataset(settings: &Settings) -> Result<RatingDataset, CliError> {
    Ok(RatingDataset::from_triples(parse_val(settings, "k", 5u8)?, Vec::new())
        .expect("empty dataset is valid"))
}

fn echo_header(command: &str, settings: &Settings) -> Vec<String> {
    let mut lines = vec![format!("mrfrec {command}")];
    lines.extend(settings.echo());
    lines
}

fn cmd_ingest(args: IngestArgs, mut settings: Settings) -> Result<(), CliError> {
    fold_path(&mut settings, "input", args.input)?;
    fold_path(&mut settings, "output", args.output)?;
    if let Some(sep) = args.separator {
        settings.insert("separator", &sep)?;
    }
    if let Some(m) = args.min_ratings {
        settings.insert("minRatings", &m.to_string())?;
    }
    let input = need_input(&settings, "input")?;
    let output = need_path(&settings, "output")?;
    let min_ratings: usize = parse_val(&settings, "minRatings", 30)?;
    let format = RatingsFormat {
        separator: settings.get("separator").unwrap_or("::").to_string(),
        k: parse_val(&settings, "k", 5u8)?,
    };
    settings.put("separator", &format.separator);
    settings.put("k", format.k);
    settings.put("minRatings", min_ratings);
    let file =
        File::open(&input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let raw = parse_ratings(BufReader::new(file), &format)
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    if raw.is_empty() {
        return Err(CliError::Data(format!("{}: no ratings parsed", input.display())));
    }
    let filtered = filter_infrequent(&raw, min_ratings);
    if filtered.is_empty() {
        return Err(CliError::Data(format!(
            "{}: every user has fewer than {min_ratings} ratings",
            input.display()
        )));
    }
    write_ratings(&filtered, open_out(&output)?, &echo_header("ingest", &settings))?;
    print!("{}", filtered.stats().to_tsv());
    Ok(())
}

fn cmd_split(args: SplitArgs, mut settings: Settings) -> Result<(), CliError> {
    fold_path(&mut settings, "input", args.input)?;
    fold_path(&mut settings, "outDir", args.out_dir)?;
    if let Some(v) = args.valid_per_user {
        settings.insert("validPerUser", &v.to_string())?;
    }
    if let Some(t) = args.test_per_user {
        settings.insert("testPerUser", &t.to_string())?;
    }
    let input = need_input(&settings, "input")?;
    let out_dir = need_path(&settings, "outDir")?;
    let n_valid: usize = parse_val(&settings, "validPerUser", 5)?;
    let n_test: usize = parse_val(&settings, "testPerUser", 10)?;
    settings.put("k", parse_val(&settings, "k", 5u8)?);
    settings.put("validPerUser", n_valid);
    settings.put("testPerUser", n_test);
    let data = load_dataset(&settings, &input)?;
    let split = chronological_split(&data, n_valid, n_test)?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
    let header = echo_header("split", &settings);
    for (name, part) in [
        ("train.tsv", &split.train),
        ("validation.tsv", &split.validation),
        ("test.tsv", &split.test),
    ] {
        write_ratings(part, open_out(&out_dir.join(name))?, &header)?;
    }
    println!(
        "train\t{}\nvalidation\t{}\ntest\t{}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, mut settings: Settings) -> Result<(), CliError> {
    fold_path(&mut settings, "train", args.train)?;
    fold_path(&mut settings, "valid", args.valid)?;
    fold_path(&mut settings, "checkpoint", args.checkpoint)?;
    fold_path(&mut settings, "log", args.log)?;
    if let Some(s) = args.scheme {
        settings.insert("scheme", &s)?;
    }
    if let Some(s) = args.scope {
        settings.insert("scope", &s)?;
    }
    if let Some(m) = args.method {
        settings.insert("method", &m)?;
    }
    let train_path = need_input(&settings, "train")?;
    let checkpoint_path = need_path(&settings, "checkpoint")?;
    let scheme: Parameterization =
        parse_val(&settings, "scheme", Parameterization::Smoothness)?;
    let scope: ModelScope = parse_val(&settings, "scope", ModelScope::Joint)?;
    let config = train_config(&settings)?;
    settings.put("scheme", scheme.token());
    settings.put("scope", scope.token());
    settings.put("k", parse_val(&settings, "k", 5u8)?);
    fold_train_config(&mut settings, &config);
    let train_data = load_dataset(&settings, &train_path)?;
    let valid_data = match settings.get("valid") {
        Some(path) => load_dataset(&settings, Path::new(path))?,
        None => empty_dataset(&settings)?,
    };
    let header = echo_header("train", &settings);
    let write_log = |log_text: String| -> Result<(), CliError> {
        if let Some(path) = settings.get("log") {
            let mut w = open_out(Path::new(path))?;
            w.write_all(log_text.as_bytes())?;
        }
        Ok(())
    };
    match train(&train_data, &valid_data, scheme, scope, &config) {
        Ok(outcome) => {
            write_checkpoint(&outcome.params, open_out(&checkpoint_path)?, &header)?;
            write_log(outcome.log.to_tsv(&header))?;
            if let Some(last) = outcome.log.epochs.last() {
                println!(
                    "epochs\t{}\nitemEdges\t{}\nuserEdges\t{}",
                    last.epoch, last.item_edges, last.user_edges
                );
            }
            Ok(())
        }
        Err(TrainError::Diverged { epoch, valid_pl, initial, log }) => {
            // Keep the partial log around for postmortems.
            write_log(log.to_tsv(&header))?;
            Err(CliError::Runtime(format!(
                "training diverged at epoch {epoch}: validation PL {valid_pl} exceeds 10x initial {initial}"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

/// Score a trained checkpoint on every cell of `eval` given `evidence`.
fn score_checkpoint(
    params: &ModelParams,
    evidence: &RatingDataset,
    eval: &RatingDataset,
) -> Result<(MetricsRecord, Vec<ScoredPrediction>), CliError> {
    if eval.is_empty() {
        return Err(CliError::Data("evaluation split is empty".to_string()));
    }
    let predictions: Vec<ScoredPrediction> = eval
        .triples()
        .iter()
        .map(|t| {
            let p = inference::predict(params, evidence, t.user, t.item);
            ScoredPrediction {
                user: t.user,
                item: t.item,
                truth: t.rating,
                expected: p.expected_rating,
                map: p.map_rating,
                loglik: Some(inference::score_loglik(params, evidence, t.user, t.item, t.rating)),
            }
        })
        .collect();
    let record = compute_metrics(&predictions)?;
    Ok((record, predictions))
}

fn dump_predictions(
    path: &Path,
    header: &[String],
    predictions: &[ScoredPrediction],
) -> Result<(), CliError> {
    let mut w = open_out(path)?;
    for c in header {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "user\titem\ttruth\tmap\texpected\tloglik")?;
    for p in predictions {
        let ll = p.loglik.map_or("NA".to_string(), |v| format!("{v:.6}"));
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{:.6}\t{}",
            p.user, p.item, p.truth, p.map, p.expected, ll
        )?;
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, mut settings: Settings) -> Result<(), CliError> {
    fold_path(&mut settings, "train", args.train)?;
    fold_path(&mut settings, "valid", args.valid)?;
    fold_path(&mut settings, "test", args.test)?;
    fold_path(&mut settings, "checkpoint", args.checkpoint.clone())?;
    fold_path(&mut settings, "metricsOut", args.metrics_out)?;
    fold_path(&mut settings, "dump", args.dump)?;
    let train_path = need_input(&settings, "train")?;
    let test_path = need_input(&settings, "test")?;
    let train_data = load_dataset(&settings, &train_path)?;
    let test_data = load_dataset(&settings, &test_path)?;
    let valid_data = match settings.get("valid") {
        Some(path) => load_dataset(&settings, Path::new(path))?,
        None => empty_dataset(&settings)?,
    };
    settings.put("k", parse_val(&settings, "k", 5u8)?);
    if !args.specs.is_empty() {
        let config = experiment_config(&settings)?;
        fold_train_config(&mut settings, &config.train);
        settings.put("rsvdF", config.rsvd.f);
        settings.put("rsvdLambda", config.rsvd.lambda);
        settings.put("rsvdEta", config.rsvd.eta);
        settings.put("rsvdEtaVar", config.rsvd.eta_var);
        settings.put("rsvdBatch", config.rsvd.batch);
        settings.put("rsvdPatience", config.rsvd.patience);
        settings.put("rsvdMaxEpochs", config.rsvd.max_epochs);
        let grid: Vec<String> =
            config.rsvd_lambda_grid.iter().map(f64::to_string).collect();
        settings.put("rsvdLambdaGrid", grid.join(","));
        settings.put("simFloor", config.knn_sim_floor);
        settings.put("maxNeighbors", config.knn_max_neighbors);
    }
    let header = echo_header("evaluate", &settings);

    let mut rows: Vec<(String, MetricsRecord)> = Vec::new();
    let mut dumped: Option<Vec<ScoredPrediction>> = None;
    if args.specs.is_empty() {
        let checkpoint = need_input(&settings, "checkpoint").map_err(|_| {
            CliError::Usage("evaluate needs --spec tokens or a --checkpoint".to_string())
        })?;
        let file = File::open(&checkpoint)
            .map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
        let params = read_checkpoint(BufReader::new(file))?;
        let (record, predictions) = score_checkpoint(&params, &train_data, &test_data)?;
        let label = format!(
            "mrf.{}.{}(checkpoint)",
            params.scope().token(),
            params.parameterization().token()
        );
        rows.push((label, record));
        dumped = Some(predictions);
    } else {
        let config = experiment_config(&settings)?;
        let split = SplitBundle {
            train: train_data,
            validation: valid_data,
            test: test_data,
        };
        if args.specs.len() > 1 && settings.get("dump").is_some() {
            return Err(CliError::Usage("--dump requires a single --spec".to_string()));
        }
        for raw in &args.specs {
            let spec: ModelSpec = raw.parse()?;
            let (record, predictions) = run_experiment(&split, &spec, &config)?;
            rows.push((spec.to_string(), record));
            dumped = Some(predictions);
        }
    }
    let mut table = Vec::new();
    write_metrics_table(&rows, &mut table, &header)?;
    print!("{}", String::from_utf8_lossy(&table));
    if let Some(path) = settings.get("metricsOut") {
        let mut w = open_out(Path::new(path))?;
        w.write_all(&table)?;
    }
    if let (Some(path), Some(predictions)) = (settings.get("dump"), dumped) {
        dump_predictions(Path::new(path), &header, &predictions)?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs, mut settings: Settings) -> Result<(), CliError> {
    fold_path(&mut settings, "checkpoint", args.checkpoint)?;
    fold_path(&mut settings, "train", args.data)?;
    fold_path(&mut settings, "test", args.eval)?;
    fold_path(&mut settings, "output", args.output)?;
    let checkpoint = need_input(&settings, "checkpoint")?;
    let data_path = need_input(&settings, "train")?;
    let output = need_path(&settings, "output")?;
    settings.put("k", parse_val(&settings, "k", 5u8)?);
    let file = File::open(&checkpoint)
        .map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    let params = read_checkpoint(BufReader::new(file))?;
    let evidence = load_dataset(&settings, &data_path)?;
    let records: Vec<PredictionRecord> = match (args.user, settings.get("test")) {
        (Some(user), _) => inference::unseen_items(&evidence, user)
            .into_iter()
            .map(|item| PredictionRecord::evaluate(&params, &evidence, user, item, None))
            .collect(),
        (None, Some(path)) => {
            let eval = load_dataset(&settings, Path::new(path))?;
            eval.triples()
                .iter()
                .map(|t| {
                    PredictionRecord::evaluate(&params, &evidence, t.user, t.item, Some(t.rating))
                })
                .collect()
        }
        (None, None) => {
            return Err(CliError::Usage("predict needs --eval or --user".to_string()));
        }
    };
    let header = echo_header("predict", &settings);
    inference::write_predictions(&mut open_out(&output)?, &header, &records)?;
    println!("predictions\t{}", records.len());
    Ok(())
}

fn cmd_rank(args: RankArgs, mut settings: Settings) -> Result<(), CliError> {
    fold_path(&mut settings, "checkpoint", args.checkpoint)?;
    fold_path(&mut settings, "train", args.data)?;
    fold_path(&mut settings, "output", args.output)?;
    if let Some(c) = args.criterion {
        settings.insert("criterion", &c)?;
    }
    if let Some(t) = args.top {
        settings.insert("top", &t.to_string())?;
    }
    let checkpoint = need_input(&settings, "checkpoint")?;
    let data_path = need_input(&settings, "train")?;
    let output = need_path(&settings, "output")?;
    let criterion: RankCriterion =
        parse_val(&settings, "criterion", RankCriterion::FreeEnergy)?;
    settings.put("criterion", criterion);
    let file = File::open(&checkpoint)
        .map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    let params = read_checkpoint(BufReader::new(file))?;
    let evidence = load_dataset(&settings, &data_path)?;
    let candidates = inference::unseen_items(&evidence, args.user);
    let mut ranked = inference::rank(&params, &evidence, args.user, &candidates, criterion);
    if let Some(top) = settings.get("top") {
        let top: usize = top
            .parse()
            .map_err(|e| CliError::Usage(format!("bad value {top:?} for top: {e}")))?;
        ranked.truncate(top);
    }
    let header = echo_header("rank", &settings);
    inference::write_rankings(&mut open_out(&output)?, &header, args.user, criterion, &ranked)?;
    println!("ranked\t{}", ranked.len());
    Ok(())
}

fn cmd_export_graph(args: ExportGraphArgs, mut settings: Settings) -> Result<(), CliError> {
    fold_path(&mut settings, "checkpoint", args.checkpoint)?;
    fold_path(&mut settings, "output", args.output)?;
    if let Some(k) = args.kind {
        settings.insert("kind", &k)?;
    }
    if let Some(t) = args.threshold {
        settings.insert("threshold", &t.to_string())?;
    }
    let checkpoint = need_input(&settings, "checkpoint")?;
    let output = need_path(&settings, "output")?;
    let kind: GraphKind = parse_val(&settings, "kind", GraphKind::Item)?;
    let threshold: f64 = parse_val(&settings, "threshold", 0.0)?;
    if threshold < 0.0 {
        return Err(CliError::Usage("threshold must be >= 0".to_string()));
    }
    settings.put("kind", kind.token());
    settings.put("threshold", threshold);
    let file = File::open(&checkpoint)
        .map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    let params = read_checkpoint(BufReader::new(file))?;
    let graph = extract_graph(&params, kind, threshold);
    write_graph(&graph, open_out(&output)?, &echo_header("export-graph", &settings))?;
    println!("edges\t{}\nsparsity\t{:.6}", graph.edges.len(), graph.sparsity);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::TrainMethod;

    #[test]
    fn unknown_keys_are_rejected() {
        let mut s = Settings::default();
        assert!(s.set_pair("lambda1=0.5").is_ok());
        let err = s.set_pair("lambdaOne=0.5").unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
        assert!(s.set_pair("no-equals-sign").is_err());
    }

    #[test]
    fn later_values_override_earlier_ones() {
        let mut s = Settings::default();
        s.set_pair("lambda1=0.5").unwrap();
        s.set_pair("lambda1=0.25").unwrap();
        assert_eq!(s.get("lambda1"), Some("0.25"));
        let c = train_config(&s).unwrap();
        assert_eq!(c.lambda1, 0.25);
    }

    #[test]
    fn config_file_parsing_skips_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# experiment\nlambda1=0.01\n\nmethod=cd\n").unwrap();
        let mut s = Settings::default();
        s.load_file(&path).unwrap();
        assert_eq!(s.get("lambda1"), Some("0.01"));
        let c = train_config(&s).unwrap();
        assert_eq!(c.method, TrainMethod::Cd);
        assert_eq!(c.lambda1, 0.01);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let mut s = Settings::default();
        s.set_pair("batch=minus-two").unwrap();
        assert!(matches!(train_config(&s), Err(CliError::Usage(_))));
        let mut s = Settings::default();
        s.set_pair("batch=0").unwrap();
        assert!(train_config(&s).is_err());
    }

    #[test]
    fn caps_accept_none_and_numbers() {
        let mut s = Settings::default();
        s.set_pair("itemCap=none").unwrap();
        s.set_pair("userCap=250").unwrap();
        let c = train_config(&s).unwrap();
        assert_eq!(c.item_cap, None);
        assert_eq!(c.user_cap, Some(250));
    }

    #[test]
    fn lambda_grid_parses_csv() {
        let mut s = Settings::default();
        s.set_pair("rsvdLambdaGrid=0.5, 1, 2").unwrap();
        let c = experiment_config(&s).unwrap();
        assert_eq!(c.rsvd_lambda_grid, vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn echo_lists_effective_pairs_sorted() {
        let mut s = Settings::default();
        s.set_pair("seed=9").unwrap();
        s.set_pair("lambda1=0.001").unwrap();
        assert_eq!(s.echo(), vec!["lambda1=0.001".to_string(), "seed=9".to_string()]);
    }
}
