//! The `graphref` command line: dataset generation, training and analyses.
//!
//! Configuration is layered as defaults, then an optional TOML file whose
//! keys are the [`TrainConfig`] field names, then command-line flags. The
//! effective configuration is written to every run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, PermutationReport, RobustnessMatrix, SymbolUsageReport};
use crate::checkpoint;
use crate::dataset::{make_dataset, Dataset, SamplingMode, SplitMode};
use crate::error::{Error, Result};
use crate::gnn::Activation;
use crate::rng::{self, Stream};
use crate::tensor::Pooling;
use crate::training::{train_with, EvalReport, MetricsWriter, TrainConfig};
use crate::world::{GraphCache, World};
use crate::Agents;

#[derive(Debug, Parser)]
#[command(name = "graphref", version, about = "Graph referential game: generate data, train agents, analyse protocols")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset file.
    GenData(GenDataArgs),
    /// Train a sender/receiver pair on a dataset.
    Train(TrainArgs),
    /// Analyse trained agents.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 10_000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `episode` or `holdout_targets(F)`.
    #[arg(long, default_value = "episode")]
    pub mode: SplitMode,
    /// `uniform` or `k_diff(D)`.
    #[arg(long, default_value = "uniform")]
    pub sampling: SamplingMode,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags that override the config file. Unset flags leave it alone.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub embedding_width: Option<usize>,
    #[arg(long)]
    pub gcn_layers: Option<usize>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub output_activation: Option<Activation>,
    #[arg(long)]
    pub pooling: Option<Pooling>,
    #[arg(long)]
    pub eval_cadence: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(
            vocab => vocab_size,
            seed => seed,
            epochs => epochs,
            batch_size => batch_size,
            learning_rate => learning_rate,
            temperature => temperature,
            hidden_width => hidden_width,
            embedding_width => embedding_width,
            gcn_layers => gcn_layers,
            activation => activation,
            output_activation => output_activation,
            pooling => pooling,
            eval_cadence => eval_cadence,
            patience => patience
        );
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with `TrainConfig` keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Parent of the per-run directory `<config-hash>-seed<seed>`.
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for the report files.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Distinct symbols the sender uses on the test split.
    Usage(CheckpointArgs),
    /// Accuracy when the transmitted symbol is replaced by every other one.
    Robustness(CheckpointArgs),
    /// Receiver correctness under shuffled candidate orders.
    Permutation {
        #[command(flatten)]
        args: CheckpointArgs,
        #[arg(long, default_value_t = 5)]
        permutations: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a |V| × K grid over several seeds and tabulate the results.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `vocab=5,10,25,50 k=2,4,9`
    #[arg(long, num_args = 1.., required = true)]
    pub grid: Vec<String>,
    /// Number of seeds; runs use seeds 1..=N.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value = "sweeps")]
    pub out: PathBuf,
}

/// Provenance record written next to every artifact set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Seconds since the Unix epoch. The only non-reproducible field.
    pub created: u64,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub dataset_hash: Option<String>,
    pub artifacts: Vec<String>,
    pub status: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config,
            seeds,
            dataset_hash: None,
            artifacts: Vec::new(),
            status: "ok".into(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Defaults, then the TOML file, then flags. `p`, `t`, `k`, `n_episodes`,
/// `sampling` and `split_mode` come from `dataset` when one is given; a
/// config file that sets them differently is rejected.
pub fn resolve_config(file: Option<&Path>, overrides: &Overrides, dataset: Option<&Dataset>) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut explicit = toml::Table::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        explicit = text
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    overrides.apply(&mut config);
    if let Some(ds) = dataset {
        let from_data = TrainConfig {
            p: ds.world.properties(),
            t: ds.world.types(),
            k: ds.k,
            n_episodes: ds.episodes.len(),
            sampling: ds.sampling,
            split_mode: ds.split_mode,
            ..config.clone()
        };
        let shared = ["p", "t", "k", "n_episodes", "sampling", "split_mode"];
        let file_value = toml::Table::try_from(&config).expect("config serialises");
        let data_value = toml::Table::try_from(&from_data).expect("config serialises");
        for key in shared {
            if explicit.contains_key(key) && file_value[key] != data_value[key] {
                return Err(Error::Incompatible(format!(
                    "config sets {key} = {} but the dataset has {}",
                    file_value[key], data_value[key]
                )));
            }
        }
        config = from_data;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train_cmd(&a).map(|_| ()),
        Command::Analyze(a) => analyze(a),
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let world = World::new(a.p, a.t)?;
    let ds = make_dataset(world, a.k, a.episodes, a.seed, a.sampling, a.mode)?;
    ds.save(&a.out)?;
    let mut manifest = RunManifest::new(
        "gen-data",
        serde_json::json!({
            "p": a.p, "t": a.t, "k": a.k, "episodes": a.episodes,
            "sampling": a.sampling, "split_mode": a.mode,
        }),
        vec![a.seed],
    );
    manifest.dataset_hash = Some(ds.content_hash());
    manifest.artifacts.push(a.out.display().to_string());
    manifest.save(&sibling(&a.out, "manifest.json"))?;
    println!(
        "world p={} t={}: {} objects; K={}; split train/validation/test = {}/{}/{}{}",
        a.p,
        a.t,
        world.size(),
        a.k,
        ds.sizes.train,
        ds.sizes.validation,
        ds.sizes.test,
        if ds.heldout.is_empty() {
            String::new()
        } else {
            format!("; {} held-out targets", ds.heldout.len())
        }
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

/// Runs training and returns the run directory.
pub fn train_cmd(a: &TrainArgs) -> Result<PathBuf> {
    let ds = Dataset::load(&a.data)?;
    let config = resolve_config(a.config.as_deref(), &a.overrides, Some(&ds))?;
    let dir = a.out_dir.join(format!("{}-seed{}", config.hash(), config.seed));
    create_dir(&dir)?;
    write(&dir.join("config.toml"), toml::to_string(&config).expect("config serialises"))?;

    let mut manifest = RunManifest::new("train", serde_json::to_value(&config)?, vec![config.seed, ds.seed]);
    manifest.dataset_hash = Some(ds.content_hash());
    manifest.artifacts = ["config.toml", "metrics.csv", "checkpoint.txt", "predictions.csv"]
        .map(String::from)
        .to_vec();

    let mut metrics = MetricsWriter::create(&dir.join("metrics.csv"))?;
    let outcome = train_with(&config, &ds, |m| {
        if m.split != "train" {
            println!("epoch {:>3} {:<10} accuracy {:.3} loss {:.4} symbols {}", m.epoch, m.split, m.accuracy, m.loss, m.distinct_symbols);
        }
        metrics.append(m)
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(Error::Divergence { epoch, last_good }) => {
            checkpoint::save(&last_good, &dir.join("checkpoint.txt"))?;
            manifest.status = format!("diverged at epoch {epoch}");
            manifest.artifacts.pop();
            manifest.save(&dir.join("manifest.json"))?;
            return Err(Error::Divergence { epoch, last_good });
        }
        Err(e) => return Err(e),
    };
    checkpoint::save(&outcome.agents, &dir.join("checkpoint.txt"))?;
    write_predictions(&dir.join("predictions.csv"), &ds, &outcome.test)?;
    manifest.status = format!("best epoch {} of {}", outcome.best_epoch, outcome.epochs_run);
    manifest.save(&dir.join("manifest.json"))?;
    println!(
        "test accuracy {:.4}, {} distinct symbols (best epoch {}); run directory {}",
        outcome.test.accuracy,
        outcome.test.distinct_symbols,
        outcome.best_epoch,
        dir.display()
    );
    Ok(dir)
}

#[derive(Serialize)]
struct PredictionRow {
    episode: usize,
    target: String,
    symbol: usize,
    chosen: usize,
    target_position: usize,
    correct: bool,
    loss: f64,
}

fn write_predictions(path: &Path, ds: &Dataset, report: &EvalReport) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for (i, (p, e)) in report.predictions.iter().zip(ds.test()).enumerate() {
        w.serialize(PredictionRow {
            episode: i,
            target: e.target.to_string(),
            symbol: p.symbol,
            chosen: p.chosen,
            target_position: p.target_position,
            correct: p.correct,
            loss: p.loss,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and dataset and checks they describe the same world.
pub fn load_pair(ckpt: &Path, data: &Path) -> Result<(Agents, Dataset)> {
    let agents = checkpoint::load(ckpt)?;
    let ds = Dataset::load(data)?;
    let c = &agents.config;
    if (c.properties, c.types) != (ds.world.properties(), ds.world.types()) {
        return Err(Error::Incompatible(format!(
            "checkpoint is for p={}, t={} but the dataset has p={}, t={}",
            c.properties,
            c.types,
            ds.world.properties(),
            ds.world.types()
        )));
    }
    Ok((agents, ds))
}

/// `<config-hash>-seed<seed>` from the manifest next to the checkpoint, or
/// a digest of the checkpoint itself when there is none.
fn run_key(ckpt: &Path) -> Result<String> {
    let manifest = ckpt.with_file_name("manifest.json");
    if let Ok(m) = RunManifest::load(&manifest) {
        if let Ok(config) = serde_json::from_value::<TrainConfig>(m.config) {
            return Ok(format!("{}-seed{}", config.hash(), config.seed));
        }
    }
    use sha2::{Digest, Sha256};
    let text = std::fs::read(ckpt).map_err(|e| Error::io(ckpt, e))?;
    Ok(format!("ckpt{}", &crate::dataset::hex(&Sha256::digest(&text))[..12]))
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Usage(a) => {
            let (agents, ds) = load_pair(&a.ckpt, &a.data)?;
            let report = analysis::symbol_usage(&agents, &GraphCache::new(ds.world)?, ds.test())?;
            let stem = format!("usage-{}", run_key(&a.ckpt)?);
            save_report(&a.out, &stem, &report.to_csv()?, &report)?;
            print_usage(&report);
        }
        AnalyzeCommand::Robustness(a) => {
            let (agents, ds) = load_pair(&a.ckpt, &a.data)?;
            let m = analysis::robustness_matrix(&agents, &GraphCache::new(ds.world)?, ds.test())?;
            let stem = format!("robustness-{}", run_key(&a.ckpt)?);
            save_report(&a.out, &stem, &m.to_csv()?, &m)?;
            print_robustness(&m);
        }
        AnalyzeCommand::Permutation { args: a, permutations, seed } => {
            let (agents, ds) = load_pair(&a.ckpt, &a.data)?;
            let mut rng = rng::stream(seed, Stream::Analysis);
            let r = analysis::permutation_test(&agents, &GraphCache::new(ds.world)?, ds.test(), permutations, &mut rng)?;
            let stem = format!("permutation-{}", run_key(&a.ckpt)?);
            save_report(&a.out, &stem, &permutation_csv(&r)?, &r)?;
            println!(
                "{} episodes x {} shuffles: agreement {:.4}, accuracy {:.4} (unshuffled {:.4})",
                r.episodes, r.permutations, r.agreement_rate, r.permuted_accuracy, r.base_accuracy
            );
        }
        AnalyzeCommand::Sweep(a) => sweep_cmd(&a).map(|_| ())?,
    }
    Ok(())
}

fn save_report(dir: &Path, stem: &str, csv: &str, summary: &impl Serialize) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join(format!("{stem}.csv")), csv)?;
    write(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(summary)?)?;
    println!("wrote {}", dir.join(format!("{stem}.{{csv,json}}")).display());
    Ok(())
}

fn print_usage(r: &SymbolUsageReport) {
    println!("{} of {} symbols used ({:.1}%)", r.distinct_count, r.vocab, r.percent_of_vocab);
}

fn print_robustness(m: &RobustnessMatrix) {
    for (s, row) in m.entries.iter().enumerate() {
        match row {
            Some(r) => {
                let cells: Vec<String> = r.iter().map(|v| format!("{v:.2}")).collect();
                println!("{s:>3} (n={:>4}) {}", m.support[s], cells.join(" "));
            }
            None => println!("{s:>3} (n=   0) undefined"),
        }
    }
    let bad = m.diagonal_violations(true);
    println!(
        "{} defined rows, {} without a strict diagonal maximum",
        m.defined_rows().count(),
        bad.len()
    );
}

fn permutation_csv(r: &PermutationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rotation", "accuracy"])?;
    for (i, a) in r.rotation_accuracy.iter().enumerate() {
        w.write_record([i.to_string(), a.to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
}

/// Parses `["vocab=5,10", "k=2,4"]`.
pub fn parse_grid(items: &[String]) -> Result<(Vec<usize>, Vec<usize>)> {
    let (mut vocabs, mut ks) = (None, None);
    for item in items {
        let (key, values) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid entry `{item}` is not key=values")))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("grid entry `{item}`: {e}")))?;
        match key {
            "vocab" => vocabs = Some(values),
            "k" => ks = Some(values),
            other => return Err(Error::Config(format!("unknown grid axis `{other}`"))),
        }
    }
    match (vocabs, ks) {
        (Some(v), Some(k)) if !v.is_empty() && !k.is_empty() => Ok((v, k)),
        _ => Err(Error::Config("grid needs both vocab=... and k=...".into())),
    }
}

/// Runs a sweep and returns its output directory.
pub fn sweep_cmd(a: &SweepArgs) -> Result<PathBuf> {
    let (vocabs, ks) = parse_grid(&a.grid)?;
    if a.seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let base = resolve_config(a.config.as_deref(), &a.overrides, None)?;
    let seeds: Vec<u64> = (1..=a.seeds).collect();
    let dir = a.out.join(format!("sweep-{}-seeds{}", base.hash(), a.seeds));
    let report = analysis::sweep(&base, &vocabs, &ks, &seeds)?;
    report.save(&dir)?;
    let mut manifest = RunManifest::new("analyze sweep", serde_json::to_value(&base)?, seeds);
    manifest.artifacts = ["runs.csv", "cells.csv", "table.md", "summary.json"].map(String::from).to_vec();
    if !report.failures.is_empty() {
        manifest.status = format!("{} runs failed", report.failures.len());
    }
    manifest.save(&dir.join("manifest.json"))?;
    println!("Distinct symbols\n\n{}", report.usage_table());
    println!("Test accuracy\n\n{}", report.accuracy_table());
    for f in &report.failures {
        eprintln!("missing: |V|={} K={} seed={}: {}", f.vocab, f.k, f.seed, f.reason);
    }
    for (v, k) in report.missing_cells() {
        eprintln!("missing cell: |V|={v} K={k}");
    }
    println!("wrote {}", dir.display());
    Ok(dir)
}

/// Parses `args`, runs the command and maps errors to exit codes.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
