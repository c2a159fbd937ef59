//! `sgil`: prepare datasets, train, evaluate, inject noise and run sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use sgil::data::{
    bucket_by_sparsity, inject_noise, load_dataset, read_snapshot, split, write_snapshot,
    EvalSplit, InteractionStore, SnapshotManifest, SocialGraph, SplitConfig,
};
use sgil::evaluator::{
    evaluate, grid_csv, noise_sweep, noise_sweep_csv, sensitivity_grid, EvalReport,
};
use sgil::objectives::rule_based_filter;
use sgil::trainer::{
    Checkpoint, EpochRecord, LossCsv, StepRecord, TrainConfig, TrainObserver, Trainer,
};

use run::{dataset_fingerprint, output_dir, sha256_hex, RunRecorder};

const LOSS_LOG: &str = "loss.csv";
const EPOCH_LOG: &str = "epochs.csv";
const EPOCH_HEADER: &str = "epoch,steps,mean_total,metric,best_metric,best_epoch,improved\n";
const CONFIG_FILE: &str = "config.txt";
const LAST_DIR: &str = "last";
const BEST_DIR: &str = "best";

#[derive(Parser)]
#[command(
    name = "sgil",
    version,
    about = "Social-graph invariant learning for recommendation"
)]
struct Cli {
    /// Worker threads for evaluation; 1 gives fully deterministic scheduling.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load raw interaction and social files, split them, and write a dataset snapshot.
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint with full ranking.
    Evaluate(EvaluateArgs),
    /// Write a copy of a dataset with fake social relations added.
    InjectNoise(InjectArgs),
    /// Write a copy of a dataset keeping only relations between users with similar histories.
    Filter(FilterArgs),
    /// Train a grid of (K, beta) settings or a range of noise ratios.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Interaction file: `user item [rating]` per line.
    #[arg(long, value_name = "FILE")]
    interactions: PathBuf,
    /// Social file: `src dst [weight]` per line.
    #[arg(long, value_name = "FILE")]
    social: PathBuf,
    /// Output directory for the snapshot.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.0)]
    val_frac: f64,
    /// Drop interactions rated below this value.
    #[arg(long)]
    rating_threshold: Option<f64>,
    /// Add the reverse of every relation.
    #[arg(long)]
    symmetrize: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Number of environments.
    #[arg(long)]
    k: Option<usize>,
    /// Weight of the variance penalty.
    #[arg(long)]
    beta: Option<f64>,
    /// no-env-gen, no-invariance or no-exploration; repeatable.
    #[arg(long, value_name = "NAME")]
    ablation: Vec<String>,
    /// Seed for initialization, shuffling and environment noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of epochs.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Run directory for logs, checkpoints and the report.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from `<out>/last` with its stored configuration.
    #[arg(long, conflicts_with_all = ["config", "set", "k", "beta", "ablation", "seed"])]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Validation,
}

impl From<SplitArg> for EvalSplit {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Test => EvalSplit::Test,
            SplitArg::Validation => EvalSplit::Validation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint directory, e.g. `run1/best`.
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    cutoffs: Vec<usize>,
    /// Add low / medium / high sparsity rows.
    #[arg(long)]
    buckets: bool,
    /// Also write report.json and report.txt here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Format printed on stdout.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Fake relations as a multiple of the existing relation count.
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    /// Minimum Jaccard similarity of the two users' train items.
    #[arg(long)]
    threshold: f64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["grid", "noise_ratios"])))]
struct SweepArgs {
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Grid axes such as `k=1..5 beta=0,0.05,0.1,0.15,0.2`.
    #[arg(long, num_args = 1.., value_name = "AXIS")]
    grid: Vec<String>,
    /// Comma-separated noise ratios; trains backbone and full model at each.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    noise_ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
}

/// A mistake in how the program was invoked.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

/// 2 usage, 3 data, 4 numerical.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<sgil::Error>() {
            return match e {
                sgil::Error::Config(_) | sgil::Error::Argument(_) => 2,
                sgil::Error::NonFinite { .. } => 4,
                _ => 3,
            };
        }
    }
    3
}

/// The error chain joined with `: `, skipping causes already quoted by an outer message.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool configured once");
    }
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::InjectNoise(a) => inject(a),
        Command::Filter(a) => filter(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let loaded = load_dataset(&a.interactions, &a.social, a.rating_threshold)?;
    let social = if a.symmetrize {
        loaded.social.symmetrized()
    } else {
        loaded.social
    };
    let cfg = SplitConfig {
        train_frac: a.train_frac,
        val_frac: a.val_frac,
        seed: a.seed,
    };
    let store = split(&loaded.interactions, &cfg)?;
    let mut rec = RunRecorder::start("prepare", &output_dir(&a.out))?;
    for f in write_snapshot(
        rec.dir(),
        &store,
        &social,
        &loaded.ids,
        &cfg,
        a.rating_threshold,
        a.symmetrize,
    )? {
        rec.produced(f);
    }
    let stats = serde_json::to_string_pretty(&loaded.stats)? + "\n";
    rec.write("load_stats.json", &stats)?;
    let fingerprint = dataset_fingerprint(rec.dir())?;
    let settings = format!(
        "rating_threshold = {:?}\nseed = {}\nsymmetrize = {}\ntrain_frac = {}\nval_frac = {}\n",
        a.rating_threshold, a.seed, a.symmetrize, a.train_frac, a.val_frac
    );
    println!(
        "{} users, {} items, {} train / {} validation / {} test, {} relations",
        store.num_users,
        store.num_items,
        store.train.len(),
        store.validation.len(),
        store.test.len(),
        social.len()
    );
    println!("fingerprint {fingerprint}");
    let inputs = BTreeMap::from([
        ("interactions".to_string(), path_string(&a.interactions)),
        ("social".to_string(), path_string(&a.social)),
    ]);
    rec.finish(
        sha256_hex(settings.as_bytes()),
        Some(fingerprint),
        BTreeMap::from([("split".to_string(), a.seed)]),
        inputs,
    )
}

fn load_snapshot(
    dir: &Path,
) -> Result<(
    InteractionStore,
    SocialGraph,
    sgil::data::IdMap,
    SnapshotManifest,
)> {
    read_snapshot(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn build_config(a: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            TrainConfig::from_text(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(b) = a.beta {
        cfg.beta = b;
    }
    for name in &a.ablation {
        cfg.set("ablation", name)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Streams the loss and epoch logs and keeps `last/` and `best/` checkpoints current.
struct RunLog {
    loss: LossCsv<BufWriter<File>>,
    epochs: BufWriter<File>,
    dir: PathBuf,
}

impl TrainObserver for RunLog {
    fn on_step(&mut self, record: &StepRecord) -> sgil::Result<()> {
        self.loss.write(record)
    }

    fn on_epoch(&mut self, r: &EpochRecord, trainer: &Trainer) -> sgil::Result<()> {
        let io = |e| sgil::Error::Io {
            path: self.dir.join(EPOCH_LOG),
            source: e,
        };
        let line = format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.steps, r.mean_total, r.metric, r.best_metric, r.best_epoch, r.improved
        );
        self.epochs.write_all(line.as_bytes()).map_err(io)?;
        self.epochs.flush().map_err(io)?;
        self.loss.on_epoch(r, trainer)?;
        let ckpt = trainer.checkpoint();
        ckpt.save(&self.dir.join(LAST_DIR))?;
        if r.improved {
            ckpt.into_best().save(&self.dir.join(BEST_DIR))?;
        }
        eprintln!(
            "epoch {:>3}  loss {:.6}  ndcg@{} {:.6}  best {:.6} (epoch {})",
            r.epoch,
            r.mean_total,
            trainer.config().monitor_cutoff,
            r.metric,
            r.best_metric,
            r.best_epoch
        );
        Ok(())
    }
}

/// Keeps the header and the rows whose first column is below `limit`.
fn truncate_log(path: &Path, limit: u64) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut kept = String::new();
    for (n, line) in text.lines().enumerate() {
        let keep = n == 0
            || line
                .split(',')
                .next()
                .and_then(|v| v.parse::<u64>().ok())
                .is_some_and(|v| v < limit);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).with_context(|| format!("writing {}", path.display()))
}

fn open_append(path: &Path) -> Result<BufWriter<File>> {
    let f = OpenOptions::new()
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn train(a: TrainArgs) -> Result<()> {
    let (store, social, _, _) = load_snapshot(&a.dataset)?;
    let fingerprint = dataset_fingerprint(&a.dataset)?;
    let mut rec = RunRecorder::start("train", &output_dir(&a.out))?;
    let dir = rec.dir().to_path_buf();

    let mut trainer = if a.resume {
        let mut ckpt = Checkpoint::load(&dir.join(LAST_DIR))?;
        if let Some(e) = a.config.epochs {
            ckpt.config.max_epochs = e;
        }
        let t = Trainer::from_checkpoint(ckpt, store.clone(), social)?;
        truncate_log(&dir.join(LOSS_LOG), t.state().step + 1)?;
        truncate_log(&dir.join(EPOCH_LOG), t.state().epoch as u64)?;
        t
    } else {
        Trainer::new(build_config(&a.config)?, store.clone(), social)?
    };
    let config = trainer.config().clone();
    rec.write(CONFIG_FILE, &config.canonical_text())?;

    let k = config.effective_k();
    let mut log = if a.resume {
        RunLog {
            loss: LossCsv::resume(open_append(&dir.join(LOSS_LOG))?, k),
            epochs: open_append(&dir.join(EPOCH_LOG))?,
            dir: dir.clone(),
        }
    } else {
        let mut epochs = create(&dir.join(EPOCH_LOG))?;
        epochs.write_all(EPOCH_HEADER.as_bytes())?;
        RunLog {
            loss: LossCsv::new(create(&dir.join(LOSS_LOG))?, k),
            epochs,
            dir: dir.clone(),
        }
    };
    rec.produced(LOSS_LOG);
    rec.produced(EPOCH_LOG);

    if let Err(e) = trainer.fit(&mut log) {
        drop(log);
        if matches!(e, sgil::Error::NonFinite { .. }) {
            let saved = trainer.checkpoint().save(&dir.join(LAST_DIR))?;
            eprintln!(
                "last good state saved to {}",
                saved[0].parent().unwrap_or(&dir).display()
            );
        }
        return Err(e.into());
    }
    drop(log);
    let last = trainer.checkpoint();
    for f in last.save(&dir.join(LAST_DIR))? {
        rec.produced(f);
    }
    for f in last.into_best().save(&dir.join(BEST_DIR))? {
        rec.produced(f);
    }

    let buckets = bucket_by_sparsity(&store);
    let mut report = trainer.evaluate_best(EvalSplit::Test, Some(&buckets))?;
    report.config = config.to_map();
    write_report(&mut rec, &report)?;
    print!("{}", report.to_text());

    let inputs = BTreeMap::from([("dataset".to_string(), path_string(&a.dataset))]);
    rec.finish(
        sha256_hex(config.canonical_text().as_bytes()),
        Some(fingerprint),
        BTreeMap::from([("train".to_string(), config.seed)]),
        inputs,
    )
}

fn write_report(rec: &mut RunRecorder, report: &EvalReport) -> Result<()> {
    rec.write("report.json", &report.to_json())?;
    rec.write("report.txt", &report.to_text())?;
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    if a.cutoffs.is_empty() || a.cutoffs.contains(&0) {
        return Err(usage("--cutoffs must be positive integers"));
    }
    let (store, social, _, _) = load_snapshot(&a.dataset)?;
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let config = ckpt.config.clone();
    let trainer = Trainer::from_checkpoint(ckpt, store.clone(), social)?;
    let (u, v) = trainer.embeddings(trainer.params())?;
    let buckets = a.buckets.then(|| bucket_by_sparsity(&store));
    let mut report = evaluate(&u, &v, &store, a.split.into(), &a.cutoffs, buckets.as_ref())?;
    report.config = config.to_map();
    match a.format {
        Format::Json => print!("{}", report.to_json()),
        Format::Text => print!("{}", report.to_text()),
    }
    if let Some(out) = &a.out {
        let mut rec = RunRecorder::start("evaluate", &output_dir(out))?;
        write_report(&mut rec, &report)?;
        let inputs = BTreeMap::from([
            ("checkpoint".to_string(), path_string(&a.checkpoint)),
            ("dataset".to_string(), path_string(&a.dataset)),
        ]);
        rec.finish(
            sha256_hex(config.canonical_text().as_bytes()),
            Some(dataset_fingerprint(&a.dataset)?),
            BTreeMap::from([("train".to_string(), config.seed)]),
            inputs,
        )?;
    }
    Ok(())
}

/// Writes `dataset` with its social graph replaced, plus extra files.
fn derived_snapshot(
    command: &str,
    dataset: &Path,
    out: &Path,
    social: impl FnOnce(&InteractionStore, &SocialGraph) -> Result<(SocialGraph, Vec<(String, String)>)>,
    settings: String,
    seeds: BTreeMap<String, u64>,
) -> Result<()> {
    let (store, base, ids, manifest) = load_snapshot(dataset)?;
    let (graph, extra) = social(&store, &base)?;
    let mut rec = RunRecorder::start(command, &output_dir(out))?;
    let files = write_snapshot(
        rec.dir(),
        &store,
        &graph,
        &ids,
        &manifest.split,
        manifest.rating_threshold,
        manifest.symmetrized,
    )?;
    for f in files {
        rec.produced(f);
    }
    for (name, body) in extra {
        rec.write(&name, &body)?;
    }
    println!("{} relations -> {}", base.len(), graph.len());
    let fingerprint = dataset_fingerprint(rec.dir())?;
    let inputs = BTreeMap::from([("dataset".to_string(), path_string(dataset))]);
    rec.finish(
        sha256_hex(settings.as_bytes()),
        Some(fingerprint),
        seeds,
        inputs,
    )
}

fn inject(a: InjectArgs) -> Result<()> {
    let settings = format!("ratio = {}\nseed = {}\n", a.ratio, a.seed);
    derived_snapshot(
        "inject-noise",
        &a.dataset,
        &a.out,
        |_, social| {
            let noisy = inject_noise(social, a.ratio, a.seed)?;
            let audit: String = noisy
                .injected
                .iter()
                .map(|(s, d)| format!("{s}\t{d}\n"))
                .collect();
            Ok((noisy.graph, vec![("injected.txt".to_string(), audit)]))
        },
        settings,
        BTreeMap::from([("inject".to_string(), a.seed)]),
    )
}

fn filter(a: FilterArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage(format!(
            "--threshold {} must lie in [0, 1]",
            a.threshold
        )));
    }
    let settings = format!("threshold = {}\n", a.threshold);
    derived_snapshot(
        "filter",
        &a.dataset,
        &a.out,
        |store, social| Ok((rule_based_filter(social, store, a.threshold), Vec::new())),
        settings,
        BTreeMap::new(),
    )
}

const DEFAULT_KS: [usize; 5] = [1, 2, 3, 4, 5];
const DEFAULT_BETAS: [f64; 5] = [0.0, 0.05, 0.1, 0.15, 0.2];

/// Parses `k=1..5` / `k=1,2,4` and `beta=0,0.1` axes.
fn parse_grid(axes: &[String]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut ks = DEFAULT_KS.to_vec();
    let mut betas = DEFAULT_BETAS.to_vec();
    for axis in axes {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| usage(format!("grid axis `{axis}` must look like key=values")))?;
        let bad = || usage(format!("cannot parse grid axis `{axis}`"));
        match key.trim() {
            "k" => {
                ks = if let Some((lo, hi)) = values.split_once("..") {
                    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
                    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
                    (lo..=hi).collect()
                } else {
                    values
                        .split(',')
                        .map(|v| v.trim().parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad())?
                }
            }
            "beta" => {
                betas = values
                    .split(',')
                    .map(|v| v.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?
            }
            other => {
                return Err(usage(format!(
                    "unknown grid axis `{other}` (expected k or beta)"
                )))
            }
        }
    }
    if ks.is_empty() || betas.is_empty() {
        return Err(usage("grid axes must not be empty"));
    }
    Ok((ks, betas))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (store, social, _, _) = load_snapshot(&a.dataset)?;
    let config = build_config(&a.config)?;
    let mut rec = RunRecorder::start("sweep", &output_dir(&a.out))?;
    let mut seeds = BTreeMap::from([("train".to_string(), config.seed)]);
    let settings = if a.noise_ratios.is_empty() {
        let (ks, betas) = parse_grid(&a.grid)?;
        let cells = sensitivity_grid(&config, &store, &social, &ks, &betas)?;
        let csv = grid_csv(&cells);
        rec.write("grid.csv", &csv)?;
        print!("{csv}");
        format!("grid = {ks:?} x {betas:?}\n")
    } else {
        if a.noise_ratios.iter().any(|r| !(*r >= 0.0)) {
            return Err(usage("noise ratios must be >= 0"));
        }
        let rows = noise_sweep(&config, &store, &social, &a.noise_ratios, a.noise_seed)?;
        let csv = noise_sweep_csv(&rows);
        rec.write("noise.csv", &csv)?;
        print!("{csv}");
        seeds.insert("inject".to_string(), a.noise_seed);
        format!("noise_ratios = {:?}\n", a.noise_ratios)
    };
    rec.write(CONFIG_FILE, &config.canonical_text())?;
    let hash = sha256_hex((config.canonical_text() + &settings).as_bytes());
    let inputs = BTreeMap::from([("dataset".to_string(), path_string(&a.dataset))]);
    rec.finish(hash, Some(dataset_fingerprint(&a.dataset)?), seeds, inputs)
}
