//! Subcommand surface of the `hipan` binary.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hipan_core::hierarchy::{gen_synthetic, load_tree, select_prime, SyntheticKind};
use hipan_core::metrics::{accuracy_report, calibration_report, diagnose};
use hipan_core::model::{describe_ball, HipanModel};
use hipan_core::padic::{format_digits, parse_digits};
use hipan_core::vapo::{EpochRecord, Trainer};
use hipan_core::{CodecParams, EncodedDataset};
use serde::Serialize;

use crate::config::{config_hash, Curriculum, OptimizerKind, RunConfig};
use crate::error::{io_error, CliError, CliResult};
use crate::formats::{
    export_tree_for_viz, load_dataset, write_json, write_text, Checkpoint, CheckpointHeader,
    DatasetFile, ModelState, RngState, CHECKPOINT_FORMAT, FORMAT_VERSION,
};
use crate::report::write_report;

#[derive(Debug, Parser)]
#[command(
    name = "hipan",
    version,
    about = "p-adic hierarchy codes and digit-head models"
)]
pub struct Cli {
    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true, env = "HIPAN_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a tab-separated edge list into a dataset file.
    Ingest(IngestArgs),
    /// Write a synthetic tree as an edge list.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Accuracy and calibration of a checkpoint.
    Eval(EvalArgs),
    /// Full diagnostics report with plot TSVs.
    Diagnose(DiagnoseArgs),
    /// Summarize the ball under a digit prefix.
    Inspect(InspectArgs),
    /// Nested JSON tree with leaf codes.
    ExportViz(ExportVizArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, env = "HIPAN_TREE")]
    pub tree: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Prime base; defaults to the smallest prime above the branching factor.
    #[arg(long, env = "HIPAN_P")]
    pub p: Option<u32>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    Complete,
    Random,
    Ragged,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "complete")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 3)]
    pub branching: usize,
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    #[arg(long, env = "HIPAN_SEED")]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "HIPAN_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long, env = "HIPAN_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, env = "HIPAN_SEED")]
    pub seed: Option<u64>,
    #[arg(long, value_enum, env = "HIPAN_OPTIMIZER")]
    pub optimizer: Option<OptimizerKind>,
    /// Fine-tune learning rate.
    #[arg(long, env = "HIPAN_LR")]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_lr: Option<f64>,
    #[arg(long)]
    pub step_decay: bool,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub curriculum: Option<Curriculum>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Number of conditional digit heads.
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub leak: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this many epochs (counted over the whole plan) are done.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = "HIPAN_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = "HIPAN_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long, env = "HIPAN_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Leaf pairs sampled for the rank correlation.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, env = "HIPAN_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, env = "HIPAN_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Digits such as "0-2-1"; empty for the whole tree.
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    pub prefix: String,
}

#[derive(Debug, Args)]
pub struct ExportVizArgs {
    #[arg(long, env = "HIPAN_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(cfg, a),
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Diagnose(a) => cmd_diagnose(cfg, a),
        Command::Inspect(a) => cmd_inspect(cfg, a),
        Command::ExportViz(a) => cmd_export_viz(cfg, a),
    }
}

fn dataset_path(flag: Option<PathBuf>, cfg: &RunConfig) -> CliResult<PathBuf> {
    flag.or_else(|| cfg.data.dataset.clone())
        .ok_or_else(|| CliError::Usage("no dataset given (--dataset or [data].dataset)".into()))
}

fn cmd_ingest(mut cfg: RunConfig, a: IngestArgs) -> CliResult<()> {
    let path = a
        .tree
        .or_else(|| cfg.data.tree.clone())
        .ok_or_else(|| CliError::Usage("no tree given (--tree or [data].tree)".into()))?;
    if a.p.is_some() {
        cfg.codec.p = a.p;
    }
    let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let tree = load_tree(&text).map_err(|e| io_error(&path, e))?;
    let auto = select_prime(&tree);
    let codec = match cfg.codec.p {
        Some(p) => CodecParams::new(p, auto.k)?,
        None => auto,
    };
    let data = EncodedDataset::with_codec(&tree, codec)?;
    let file = DatasetFile::new(&tree, &data);
    write_json(&a.out, &file)?;
    let s = &file.summary;
    println!("leaves\t{}", s.leaves);
    println!("K\t{}", s.k);
    println!("B_max\t{}", s.b_max);
    println!("p\t{}", s.p);
    for (depth, hist) in &s.branching {
        let parts: Vec<String> = hist.iter().map(|(c, n)| format!("{c}:{n}")).collect();
        println!("branching[{depth}]\t{}", parts.join(" "));
    }
    Ok(())
}

fn cmd_synth(cfg: RunConfig, a: SynthArgs) -> CliResult<()> {
    let kind = match a.kind {
        SynthKind::Complete => SyntheticKind::Complete,
        SynthKind::Random => SyntheticKind::Random,
        SynthKind::Ragged => SyntheticKind::Ragged,
    };
    let tree = gen_synthetic(kind, a.branching, a.depth, a.seed.unwrap_or(cfg.seed))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let text = tree.to_edge_list();
    match a.out {
        Some(path) => write_text(&path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct LogHeader<'a> {
    event: &'static str,
    config_hash: &'a str,
    parameter_count: u64,
    model: &'a hipan_core::model::ModelConfig,
    optimizer: &'a hipan_core::vapo::Optimizer,
    plan: &'a hipan_core::vapo::TrainPlan,
}

#[derive(Serialize)]
struct LogLine<'a> {
    event: &'static str,
    #[serde(flatten)]
    record: &'a EpochRecord,
    wall_ms: u64,
}

fn apply_train_overrides(cfg: &mut RunConfig, a: &TrainArgs) {
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.optimizer {
        cfg.optimizer.kind = v;
    }
    if let Some(v) = a.lr {
        cfg.optimizer.lr = v;
    }
    if let Some(v) = a.warmup_lr {
        cfg.optimizer.warmup_lr = v;
    }
    if a.step_decay {
        cfg.optimizer.step_decay = true;
    }
    if let Some(v) = a.patience {
        cfg.optimizer.patience = v;
    }
    if let Some(v) = a.curriculum {
        cfg.plan.curriculum = v;
    }
    if let Some(v) = a.batch_size {
        cfg.plan.batch_size = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.plan.checkpoint_every = v;
    }
    if let Some(v) = a.heads {
        cfg.codec.heads = Some(v);
    }
    if let Some(v) = a.leak {
        cfg.model.leak = v;
    }
    if let Some(v) = a.temperature {
        cfg.model.temperature = v;
    }
    if let Some(v) = &a.out_dir {
        cfg.output.dir = v.clone();
    }
}

fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-e{epoch:04}.json")
}

fn now_secs() -> Option<u64> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> CliResult<()> {
    apply_train_overrides(&mut cfg, &a);
    let dataset = dataset_path(a.dataset.clone(), &cfg)?;
    let (tree, data) = load_dataset(&dataset)?;
    let model_cfg = cfg.model_config(data.codec)?;
    let optimizer = cfg.optimizer()?;
    let plan = cfg.plan()?;
    let hash = config_hash(&model_cfg, &optimizer, &plan, cfg.seed);
    let out_dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| io_error(&out_dir, e))?;

    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.header.config_hash != hash {
                return Err(CliError::Data(format!(
                    "{}: config hash {} does not match this run ({hash}); refusing to resume",
                    path.display(),
                    ck.header.config_hash
                )));
            }
            Trainer::resume(
                ck.model()?,
                &tree,
                &data,
                plan.clone(),
                optimizer,
                ck.trainer,
            )?
        }
        None => {
            let model = HipanModel::new(model_cfg, cfg.seed)?;
            Trainer::new(model, &tree, &data, plan.clone(), optimizer)?
        }
    };
    let params = trainer.model().parameter_count();
    println!("parameters\t{params}");
    println!("config_hash\t{hash}");

    let log_path = out_dir.join("train.log.jsonl");
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| io_error(&log_path, e))?;
    let mut write_line = |line: String| -> CliResult<()> {
        writeln!(log, "{line}").map_err(|e| io_error(&log_path, e))
    };
    if a.resume.is_none() {
        let header = LogHeader {
            event: "start",
            config_hash: &hash,
            parameter_count: params,
            model: &model_cfg,
            optimizer: &optimizer,
            plan: &plan,
        };
        write_line(serde_json::to_string(&header).expect("header serializes"))?;
    }

    let save = |trainer: &Trainer, path: &Path| -> CliResult<()> {
        let ck = Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                version: FORMAT_VERSION,
                config_hash: hash.clone(),
                timestamp: now_secs(),
            },
            model: ModelState {
                config: *trainer.model().config(),
                params: trainer.model().params().to_vec(),
            },
            optimizer,
            plan: plan.clone(),
            trainer: trainer.state().clone(),
            rng: RngState {
                seed: plan.seed,
                init_seed: cfg.seed,
                next_epoch: trainer.state().cursor.global_epoch,
            },
        };
        ck.save(path)
    };

    let start = Instant::now();
    let mut last: Option<EpochRecord> = None;
    let mut last_saved = None;
    loop {
        let done = trainer.state().cursor.global_epoch;
        if a.stop_after.is_some_and(|s| done >= s) {
            break;
        }
        let epoch_start = Instant::now();
        let Some(rec) = trainer.step_epoch()? else {
            break;
        };
        let line = LogLine {
            event: "epoch",
            record: &rec,
            wall_ms: epoch_start.elapsed().as_millis() as u64,
        };
        write_line(serde_json::to_string(&line).expect("log line serializes"))?;
        if trainer.checkpoint_due() {
            save(&trainer, &out_dir.join(checkpoint_name(rec.epoch)))?;
            last_saved = Some(rec.epoch);
        }
        last = Some(rec);
    }
    let epochs = trainer.state().cursor.global_epoch;
    if trainer.is_finished() {
        let path = out_dir.join("final.json");
        save(&trainer, &path)?;
        println!("checkpoint\t{}", path.display());
    } else {
        let path = out_dir.join(checkpoint_name(epochs));
        if last_saved != Some(epochs) {
            save(&trainer, &path)?;
        }
        println!("checkpoint\t{}", path.display());
    }
    println!("epochs\t{epochs}");
    println!("wall_clock_s\t{:.3}", start.elapsed().as_secs_f64());
    let acc = match last {
        Some(r) => (r.leaf_acc, r.root_acc),
        None => {
            let r = accuracy_report(trainer.model(), &data, &tree)?;
            (r.leaf_acc, r.root_acc)
        }
    };
    println!("leaf_acc\t{}", acc.0);
    println!("root_acc\t{}", acc.1);
    Ok(())
}

fn load_pair(
    checkpoint: &Path,
    dataset: &Path,
) -> CliResult<(Checkpoint, hipan_core::TreeSpec, EncodedDataset)> {
    let ck = Checkpoint::load(checkpoint)?;
    let (tree, data) = load_dataset(dataset)?;
    if ck.model.config.codec != data.codec {
        return Err(CliError::Data(format!(
            "codec mismatch: checkpoint (p={}, K={}) vs dataset (p={}, K={})",
            ck.model.config.codec.p, ck.model.config.codec.k, data.codec.p, data.codec.k
        )));
    }
    Ok((ck, tree, data))
}

#[derive(Serialize)]
struct EvalReport {
    leaf_acc: f64,
    root_acc: f64,
    per_digit_acc: Vec<f64>,
    ece: f64,
    brier: f64,
}

fn cmd_eval(cfg: RunConfig, a: EvalArgs) -> CliResult<()> {
    let dataset = dataset_path(a.dataset, &cfg)?;
    let (ck, tree, data) = load_pair(&a.checkpoint, &dataset)?;
    let model = ck.model()?;
    let bins = a.bins.unwrap_or(cfg.metrics.ece_bins);
    let acc = accuracy_report(&model, &data, &tree)?;
    let cal = calibration_report(&model, &data, &tree, bins)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let report = EvalReport {
        leaf_acc: acc.leaf_acc,
        root_acc: acc.root_acc,
        per_digit_acc: acc.per_digit_acc,
        ece: cal.ece,
        brier: cal.brier,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    if let Some(out) = a.out {
        write_json(&out, &report)?;
    }
    Ok(())
}

fn cmd_diagnose(mut cfg: RunConfig, a: DiagnoseArgs) -> CliResult<()> {
    if let Some(v) = a.pairs {
        cfg.metrics.spearman_pairs = v;
    }
    if let Some(v) = a.bins {
        cfg.metrics.ece_bins = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let opts = cfg.diagnostics()?;
    let dataset = dataset_path(a.dataset, &cfg)?;
    let (ck, tree, data) = load_pair(&a.checkpoint, &dataset)?;
    let model = ck.model()?;
    let report = diagnose(&model, &data, &tree, &opts)?;
    let dir = a.out_dir.unwrap_or(cfg.output.dir);
    for path in write_report(&dir, &report, &tree, &data)? {
        println!("wrote\t{}", path.display());
    }
    println!("leaf_acc\t{}", report.leaf_acc);
    println!("root_acc\t{}", report.root_acc);
    println!("spearman_rho\t{}", report.spearman_rho);
    println!("triangle_violations\t{}", report.triangle_violations);
    Ok(())
}

fn cmd_inspect(cfg: RunConfig, a: InspectArgs) -> CliResult<()> {
    let prefix = parse_digits(&a.prefix).map_err(|e| CliError::Usage(e.to_string()))?;
    let dataset = dataset_path(a.dataset, &cfg)?;
    let (tree, data) = load_dataset(&dataset)?;
    if let Some(d) = prefix.iter().find(|&&d| d >= data.codec.p) {
        return Err(CliError::Usage(format!(
            "digit {d} out of range for p = {}",
            data.codec.p
        )));
    }
    let ball = describe_ball(&data, &tree, &prefix).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("prefix\t{}", format_digits(&prefix));
    println!("depth\t{}", ball.depth);
    println!("members\t{}", ball.members.len());
    match ball.subtree_root {
        Some(id) => println!("subtree_root\t{}", tree.name(id)),
        None => println!("subtree_root\t-"),
    }
    for &leaf in ball.members.iter().take(20) {
        println!("  {}", tree.name(leaf));
    }
    if ball.members.len() > 20 {
        println!("  ... {} more", ball.members.len() - 20);
    }
    Ok(())
}

fn cmd_export_viz(cfg: RunConfig, a: ExportVizArgs) -> CliResult<()> {
    let dataset = dataset_path(a.dataset, &cfg)?;
    let (tree, data) = load_dataset(&dataset)?;
    write_json(&a.out, &export_tree_for_viz(&tree, &data))
}
