//! Command-line pipeline: prepare, train, evaluate, recommend, explain,
//! gradcheck.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure. Training settings come from an optional flat
//! `key = value` config file whose keys are the flag names with dashes
//! replaced by underscores; flags override file values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    build_sequences, load_samples, parse_interactions, split, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::explain::{explain_prediction, export_assignments};
use crate::model::{
    checkpoint, encode, forward, score_all, AblationFlags, ForwardOpts, Hyper, ModelParams,
};
use crate::training::{train, EpochLog, GradCheckDims, TrainConfig};
use crate::tsg::{build_graph, SECONDS_PER_DAY};

#[derive(Parser)]
#[command(
    name = "hgnn",
    version,
    about = "Timespan-aware hierarchical graph attention recommender",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn an interaction CSV into windowed sample files and a vocabulary.
    Prepare(PrepareArgs),
    /// Train a model and write the best checkpoint plus an epoch log.
    Train(Box<TrainArgs>),
    /// Rank every test target and print Hit/RR metrics as JSON.
    Evaluate(EvaluateArgs),
    /// Score the whole catalog against one interaction history.
    Recommend(RecommendArgs),
    /// Decompose one prediction over preference factors as JSON.
    Explain(ExplainArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Interaction CSV with header user_id,item_id,timestamp[,genres].
    #[arg(long)]
    data: PathBuf,
    /// Output directory for train.tsv, val.tsv, test.tsv, vocab.tsv.
    #[arg(long)]
    out: PathBuf,
    /// Sliding-window length N (at least 2).
    #[arg(long, default_value_t = 12)]
    window: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value config file; keys are these flag names with
    /// dashes replaced by underscores.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint output path; the epoch log goes beside it as
    /// <out>.log.csv.
    #[arg(long)]
    out: PathBuf,

    /// Training sample file from `prepare`.
    #[arg(long)]
    train_samples: Option<PathBuf>,
    /// Validation sample file; omit to train without early stopping.
    #[arg(long)]
    val_samples: Option<PathBuf>,
    /// Vocabulary file from `prepare`.
    #[arg(long)]
    vocab: Option<PathBuf>,

    /// Node embedding width d.
    #[arg(long)]
    d: Option<usize>,
    /// Per-head width d' of the attention layers.
    #[arg(long)]
    d_head: Option<usize>,
    /// Attention head count H.
    #[arg(long)]
    heads: Option<usize>,
    /// Preference factor count K.
    #[arg(long)]
    factors: Option<usize>,
    /// Mixing weight between embedding affinity and edge weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Timespan unit in days.
    #[arg(long)]
    mu_days: Option<f64>,
    /// Edge-issue bound T in days.
    #[arg(long)]
    t_days: Option<f64>,

    /// Adam learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sampled negatives per positive.
    #[arg(long)]
    negatives: Option<usize>,
    /// Entropy-regularizer weight (0 disables the regularizer).
    #[arg(long)]
    lambda_ent: Option<f64>,
    /// L2 weight on parameters and touched embedding rows.
    #[arg(long)]
    lambda_l2: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all hardware threads.
    #[arg(long)]
    threads: Option<usize>,

    /// Skip the first attention layer (propagation ablation).
    #[arg(long)]
    no_gat1: bool,
    /// Skip clustering; every node becomes its own factor.
    #[arg(long)]
    no_gat2: bool,
    /// Ignore timespans: binary edges and no temporal score term.
    #[arg(long)]
    no_timespan: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sample file to rank (typically test.tsv).
    #[arg(long)]
    samples: PathBuf,
    /// Comma-separated ranking cutoffs.
    #[arg(long, default_value = "5,10")]
    cutoffs: String,
    /// Edge-issue bound T in days (not stored in the checkpoint).
    #[arg(long, default_value_t = 7.0)]
    t_days: f64,
    /// Worker threads; 0 uses all hardware threads.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    no_gat1: bool,
    #[arg(long)]
    no_gat2: bool,
    #[arg(long)]
    no_timespan: bool,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Single-user interaction CSV forming the history window.
    #[arg(long)]
    history: PathBuf,
    /// Vocabulary file mapping item keys to checkpoint rows.
    #[arg(long)]
    vocab: PathBuf,
    /// Recommendation timestamp in seconds.
    #[arg(long)]
    now: i64,
    /// How many items to print.
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, default_value_t = 7.0)]
    t_days: f64,
    #[arg(long)]
    no_gat1: bool,
    #[arg(long)]
    no_gat2: bool,
    #[arg(long)]
    no_timespan: bool,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sample file holding the window to explain.
    #[arg(long)]
    samples: PathBuf,
    /// Index of the sample within the file.
    #[arg(long, default_value_t = 0)]
    sample_id: usize,
    /// Vocabulary file carrying genre metadata.
    #[arg(long)]
    genres: PathBuf,
    #[arg(long, default_value_t = 7.0)]
    t_days: f64,
    /// Also write every sample's soft assignments and refined embeddings
    /// to this CSV.
    #[arg(long)]
    export_assignments: Option<PathBuf>,
    /// Also write the explained window's adjacency matrix to this CSV.
    #[arg(long)]
    dump_adjacency: Option<PathBuf>,
    #[arg(long)]
    no_gat1: bool,
    #[arg(long)]
    no_gat2: bool,
    #[arg(long)]
    no_timespan: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Problem size as N=..,d=..,H=..,K=.. with optional dh=.. per-head
    /// width (default d/2).
    #[arg(long, default_value = "N=4,d=4,H=2,K=3")]
    dims: String,
    #[arg(long, default_value_t = 0.8)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda_ent: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda_l2: f64,
    #[arg(long)]
    no_gat1: bool,
    #[arg(long)]
    no_gat2: bool,
    #[arg(long)]
    no_timespan: bool,
}

/// Prints one line to stdout, treating a closed pipe (e.g. `| head`) as
/// success rather than a panic.
fn emit(line: std::fmt::Arguments<'_>) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_fmt(format_args!("{line}\n")) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Error::Io(e)),
    }
}

macro_rules! outln {
    ($($arg:tt)*) => {
        emit(format_args!($($arg)*))?
    };
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(*a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Recommend(a) => cmd_recommend(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn flags(no_gat1: bool, no_gat2: bool, no_timespan: bool) -> AblationFlags {
    AblationFlags {
        no_gat1,
        no_gat2,
        no_timespan,
        no_entropy: false,
    }
}

fn init_thread_pool(threads: usize) -> Result<()> {
    if threads == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

/// Loads a sample file, treating a zero-length file (an empty split) as an
/// empty set instead of an error.
fn load_samples_or_empty(path: &Path) -> Result<Vec<crate::data::IndexedSample>> {
    if std::fs::metadata(path)?.len() == 0 {
        return Ok(Vec::new());
    }
    load_samples(path)
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    if a.window < 2 {
        return Err(Error::Config(format!(
            "--window must be at least 2, got {}",
            a.window
        )));
    }
    let file = File::open(&a.data)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", a.data.display())))?;
    let interactions = parse_interactions(BufReader::new(file))?;
    let vocab = Vocabulary::from_interactions(&interactions);
    let per_user = build_sequences(&interactions, a.window)?;
    let sets = split(&per_user, &vocab)?;

    std::fs::create_dir_all(&a.out)?;
    vocab.save(&a.out.join("vocab.tsv"))?;
    crate::data::save_samples(&a.out.join("train.tsv"), &sets.train)?;
    crate::data::save_samples(&a.out.join("val.tsv"), &sets.validation)?;
    crate::data::save_samples(&a.out.join("test.tsv"), &sets.test)?;

    let total = sets.train.len() + sets.validation.len() + sets.test.len();
    outln!("items={}", vocab.len());
    outln!("users={}", per_user.len());
    outln!("samples={total}");
    outln!("train={}", sets.train.len());
    outln!("val={}", sets.validation.len());
    outln!("test={}", sets.test.len());
    Ok(())
}

/// Merged view of config-file values and flag overrides for `train`.
#[derive(Debug, Clone)]
struct RunConfig {
    train_samples: Option<PathBuf>,
    val_samples: Option<PathBuf>,
    vocab: Option<PathBuf>,
    d: usize,
    d_head: usize,
    heads: usize,
    factors: usize,
    gamma: f64,
    mu_days: f64,
    t_days: f64,
    learning_rate: f64,
    batch_size: usize,
    negatives: usize,
    lambda_ent: f64,
    lambda_l2: f64,
    max_epochs: usize,
    patience: usize,
    seed: u64,
    threads: usize,
    no_gat1: bool,
    no_gat2: bool,
    no_timespan: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_samples: None,
            val_samples: None,
            vocab: None,
            d: 64,
            d_head: 32,
            heads: 2,
            factors: 5,
            gamma: 0.8,
            mu_days: 1.0,
            t_days: 7.0,
            learning_rate: 0.001,
            batch_size: 1024,
            negatives: 1,
            lambda_ent: 1e-4,
            lambda_l2: 1e-4,
            max_epochs: 500,
            patience: 10,
            seed: 42,
            threads: 0,
            no_gat1: false,
            no_gat2: false,
            no_timespan: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Config(format!(
            "bad value for `{key}`: expected true/false, got `{other}`"
        ))),
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "train_samples" => self.train_samples = Some(PathBuf::from(value)),
            "val_samples" => self.val_samples = Some(PathBuf::from(value)),
            "vocab" => self.vocab = Some(PathBuf::from(value)),
            "d" => self.d = parse_value(key, value)?,
            "d_head" => self.d_head = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "factors" => self.factors = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "mu_days" => self.mu_days = parse_value(key, value)?,
            "t_days" => self.t_days = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "negatives" => self.negatives = parse_value(key, value)?,
            "lambda_ent" => self.lambda_ent = parse_value(key, value)?,
            "lambda_l2" => self.lambda_l2 = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "threads" => self.threads = parse_value(key, value)?,
            "no_gat1" => self.no_gat1 = parse_bool(key, value)?,
            "no_gat2" => self.no_gat2 = parse_bool(key, value)?,
            "no_timespan" => self.no_timespan = parse_bool(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn apply_flags(&mut self, a: &TrainArgs) {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = a.$field.clone() {
                    self.$field = v.into();
                }
            };
        }
        if let Some(p) = &a.train_samples {
            self.train_samples = Some(p.clone());
        }
        if let Some(p) = &a.val_samples {
            self.val_samples = Some(p.clone());
        }
        if let Some(p) = &a.vocab {
            self.vocab = Some(p.clone());
        }
        take!(d);
        take!(d_head);
        take!(heads);
        take!(factors);
        take!(gamma);
        take!(mu_days);
        take!(t_days);
        take!(learning_rate);
        take!(batch_size);
        take!(negatives);
        take!(lambda_ent);
        take!(lambda_l2);
        take!(max_epochs);
        take!(patience);
        take!(seed);
        take!(threads);
        self.no_gat1 |= a.no_gat1;
        self.no_gat2 |= a.no_gat2;
        self.no_timespan |= a.no_timespan;
    }

    fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            hyper: Hyper {
                d: self.d,
                d_head: self.d_head,
                heads: self.heads,
                factors: self.factors,
                gamma: self.gamma,
                mu: self.mu_days * SECONDS_PER_DAY,
            },
            t_bound: self.t_days * SECONDS_PER_DAY,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            lambda_entropy: self.lambda_ent,
            lambda_l2: self.lambda_l2,
            negatives_per_positive: self.negatives,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            flags: flags(self.no_gat1, self.no_gat2, self.no_timespan),
            adam: Default::default(),
        }
    }
}

fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.csv")
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", EpochLog::CSV_HEADER)?;
    for entry in log {
        writeln!(w, "{}", entry.to_csv_row())?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut rc = RunConfig::default();
    if let Some(path) = &a.config {
        rc.apply_file(path)?;
    }
    rc.apply_flags(&a);

    let train_path = rc
        .train_samples
        .clone()
        .ok_or_else(|| Error::Config("--train-samples (or config train_samples) required".into()))?;
    let vocab_path = rc
        .vocab
        .clone()
        .ok_or_else(|| Error::Config("--vocab (or config vocab) required".into()))?;

    let config = rc.to_train_config();
    config.validate()?;
    init_thread_pool(rc.threads)?;

    let vocab = Vocabulary::load(&vocab_path)?;
    let train_set = load_samples_or_empty(&train_path)?;
    let val_set = match &rc.val_samples {
        Some(p) => load_samples_or_empty(p)?,
        None => Vec::new(),
    };

    let outcome = train(&train_set, &val_set, vocab.len(), &config)?;
    checkpoint::save(&outcome.params, &a.out)?;
    write_log(&log_path(&a.out), &outcome.log)?;

    outln!("checkpoint={}", a.out.display());
    outln!("log={}", log_path(&a.out).display());
    outln!("epochs={}", outcome.log.len());
    match outcome.best_epoch {
        Some(e) => outln!("best_epoch={e}"),
        None => outln!("best_epoch=none"),
    }
    if let Some(last) = outcome.log.last() {
        outln!("final_train_loss={}", last.train_loss);
    }
    Ok(())
}

fn parse_cutoffs(text: &str) -> Result<Vec<usize>> {
    let cutoffs: Vec<usize> = text
        .split(',')
        .map(|part| parse_value("cutoffs", part.trim()))
        .collect::<Result<_>>()?;
    if cutoffs.is_empty() || cutoffs.iter().any(|&k| k == 0) {
        return Err(Error::Config("cutoffs must be positive integers".into()));
    }
    Ok(cutoffs)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cutoffs = parse_cutoffs(&a.cutoffs)?;
    if !(a.t_days > 0.0) {
        return Err(Error::Config(format!(
            "--t-days must be positive, got {}",
            a.t_days
        )));
    }
    init_thread_pool(a.threads)?;
    let params = checkpoint::load(&a.checkpoint)?;
    let samples = load_samples(&a.samples)?;
    let opts = ForwardOpts {
        t_bound: a.t_days * SECONDS_PER_DAY,
        flags: flags(a.no_gat1, a.no_gat2, a.no_timespan),
    };
    let report = evaluate(&params, &opts, &samples, &cutoffs)?;
    outln!("{}", report.to_json());
    Ok(())
}

/// History rows sorted by time and mapped to vocabulary indices.
fn indexed_history(
    history: &Path,
    vocab: &Vocabulary,
    params: &ModelParams,
) -> Result<(Vec<usize>, Vec<i64>)> {
    if vocab.len() != params.vocab_size() {
        return Err(Error::Data(format!(
            "vocabulary has {} items but the checkpoint embeds {}",
            vocab.len(),
            params.vocab_size()
        )));
    }
    let file = File::open(history)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", history.display())))?;
    let mut interactions = parse_interactions(BufReader::new(file))?;
    let users: std::collections::BTreeSet<&str> =
        interactions.iter().map(|it| it.user_id.as_str()).collect();
    if users.len() > 1 {
        return Err(Error::Data(format!(
            "history must belong to a single user, found {}",
            users.len()
        )));
    }
    interactions.sort_by_key(|it| it.timestamp);
    if interactions.len() < 2 {
        return Err(Error::Data(format!(
            "history needs at least 2 interactions, got {}",
            interactions.len()
        )));
    }
    let mut items = Vec::with_capacity(interactions.len());
    let mut times = Vec::with_capacity(interactions.len());
    for it in &interactions {
        let idx = vocab.index_of(&it.item_id).ok_or_else(|| {
            Error::Data(format!("item `{}` missing from vocabulary", it.item_id))
        })?;
        items.push(idx);
        times.push(it.timestamp);
    }
    Ok((items, times))
}

fn cmd_recommend(a: RecommendArgs) -> Result<()> {
    if a.top == 0 {
        return Err(Error::Config("--top must be at least 1".into()));
    }
    if !(a.t_days > 0.0) {
        return Err(Error::Config(format!(
            "--t-days must be positive, got {}",
            a.t_days
        )));
    }
    let params = checkpoint::load(&a.checkpoint)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let (items, times) = indexed_history(&a.history, &vocab, &params)?;
    let opts = ForwardOpts {
        t_bound: a.t_days * SECONDS_PER_DAY,
        flags: flags(a.no_gat1, a.no_gat2, a.no_timespan),
    };
    let enc = encode(&items, &times, &params, &opts)?;
    let scores = score_all(&enc, a.now, &params, &opts);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&x, &y| {
        scores[y]
            .partial_cmp(&scores[x])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    for (rank, &idx) in order.iter().take(a.top).enumerate() {
        let key = vocab
            .item_key(idx)
            .ok_or_else(|| Error::Data(format!("item index {idx} missing from vocabulary")))?;
        outln!("{}\t{}\t{}", rank + 1, key, scores[idx]);
    }
    Ok(())
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    if !(a.t_days > 0.0) {
        return Err(Error::Config(format!(
            "--t-days must be positive, got {}",
            a.t_days
        )));
    }
    let params = checkpoint::load(&a.checkpoint)?;
    let vocab = Vocabulary::load(&a.genres)?;
    if vocab.len() != params.vocab_size() {
        return Err(Error::Data(format!(
            "vocabulary has {} items but the checkpoint embeds {}",
            vocab.len(),
            params.vocab_size()
        )));
    }
    let samples = load_samples(&a.samples)?;
    let sample = samples.get(a.sample_id).ok_or_else(|| {
        Error::Config(format!(
            "--sample-id {} out of range, file holds {} samples",
            a.sample_id,
            samples.len()
        ))
    })?;
    let opts = ForwardOpts {
        t_bound: a.t_days * SECONDS_PER_DAY,
        flags: flags(a.no_gat1, a.no_gat2, a.no_timespan),
    };

    if let Some(path) = &a.export_assignments {
        let mut traces = Vec::with_capacity(samples.len());
        for s in &samples {
            traces.push(encode(&s.items, &s.times, &params, &opts)?);
        }
        let file = File::create(path)?;
        export_assignments(&traces, &vocab, BufWriter::new(file))?;
    }
    if let Some(path) = &a.dump_adjacency {
        let graph = build_graph(
            &sample.items,
            &sample.times,
            opts.t_bound,
            params.hyper.mu,
            opts.flags.no_timespan,
        )?;
        let file = File::create(path)?;
        graph.write_adjacency_csv(BufWriter::new(file))?;
    }

    // Explain the model's own top prediction at the query time.
    let enc = encode(&sample.items, &sample.times, &params, &opts)?;
    let scores = score_all(&enc, sample.target_time, &params, &opts);
    let mut predicted = 0usize;
    let mut best = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        if s > best {
            best = s;
            predicted = i;
        }
    }
    let trace = forward(
        &sample.items,
        &sample.times,
        predicted,
        sample.target_time,
        &params,
        &opts,
    )?;
    let explanation = explain_prediction(&trace, &vocab)?;
    let json = serde_json::to_string_pretty(&explanation)
        .map_err(|e| Error::Data(format!("cannot serialize explanation: {e}")))?;
    outln!("{json}");
    Ok(())
}

fn parse_dims(text: &str) -> Result<GradCheckDims> {
    let mut dims = GradCheckDims::default();
    let mut d_head: Option<usize> = None;
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, value) = part.split_once('=').ok_or_else(|| {
            Error::Config(format!("bad --dims entry `{part}`, expected key=value"))
        })?;
        let value: usize = parse_value(key, value.trim())?;
        match key.trim() {
            "N" => dims.window = value,
            "d" => dims.d = value,
            "H" => dims.heads = value,
            "K" => dims.factors = value,
            "dh" => d_head = Some(value),
            other => {
                return Err(Error::Config(format!(
                    "unknown --dims key `{other}` (expected N, d, H, K, dh)"
                )));
            }
        }
    }
    dims.d_head = d_head.unwrap_or_else(|| (dims.d / 2).max(1));
    Ok(dims)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let dims = parse_dims(&a.dims)?;
    let report = crate::training::grad_check(
        &dims,
        a.gamma,
        a.lambda_ent,
        a.lambda_l2,
        a.seed,
        flags(a.no_gat1, a.no_gat2, a.no_timespan),
    )?;
    outln!(
        "checked {} entries, max relative error {:e} ({})",
        report.entries_checked, report.max_rel_err, report.worst
    );
    if report.passed() {
        outln!("gradient check passed");
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max relative error {:e} at {}",
            report.max_rel_err, report.worst
        )))
    }
}
