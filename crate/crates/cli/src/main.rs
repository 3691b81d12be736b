//! `memcomputer` — generate corpora, train and evaluate models, verify
//! gradients, and inspect trained checkpoints.
//!
//! Every command is driven by one JSON config (see `config.rs`); flags
//! override file values, and `MEMCOMPUTER_SEED` overrides the seeds last.
//! Exit codes: 0 success, 1 usage, 2 runtime failure, 3 verification
//! failure.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use memcomputer_core::CoreError;

mod commands;
mod config;

use commands::{GradcheckSpec, InspectSpec};
use config::{RunConfig, TaskKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Verification(_) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    /// Unidirectional, full memory unit with temporal linkage.
    Dnc,
    /// Unidirectional, content-based memory unit.
    Rsdnc,
    /// Bidirectional controller pair, full memory unit.
    Bdnc,
    /// Bidirectional controller pair, content-based memory unit.
    Brsdnc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Original,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Params,
    Statesize,
    Influence,
    All,
}

#[derive(Parser)]
#[command(
    name = "memcomputer",
    version,
    about = "Differentiable neural computers with a content-based memory unit",
    after_help = "The MEMCOMPUTER_SEED environment variable overrides the \
                  generator and training seeds from the config."
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: train/val JSONL plus a vocabulary file.
    Gen(GenArgs),
    /// Train a model, writing metrics and checkpoints into the run directory.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Compare analytic gradients against central differences on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Report on a checkpoint: parameter count, state sizes, memory influence,
    /// and per-step gate traces.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    task: Option<TaskKind>,
    /// Training samples to generate.
    #[arg(long)]
    n: Option<usize>,
    /// Validation samples to generate.
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Story mode for the induction task.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Output directory (defaults to paths.data_dir from the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    /// Corpus directory holding train.jsonl, val.jsonl, vocab.json.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    run_dir: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Drop training samples longer than this many steps.
    #[arg(long)]
    max_len: Option<usize>,
    /// Bypass dropout keep probability (1 disables dropout).
    #[arg(long)]
    keep_prob: Option<f64>,
    /// Layer normalization in the controllers and interface.
    #[arg(long)]
    layer_norm: Option<bool>,
    /// Controller hidden width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Memory locations N.
    #[arg(long)]
    locations: Option<usize>,
    /// Memory word width W.
    #[arg(long)]
    width: Option<usize>,
    /// Read heads R.
    #[arg(long)]
    heads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    ckpt: Option<PathBuf>,
    /// A JSONL file, or a corpus directory (its val.jsonl is used).
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "rsdnc")]
    arch: Arch,
    #[arg(long, default_value_t = 4)]
    locations: usize,
    #[arg(long, default_value_t = 4)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 4)]
    seq_len: usize,
    #[arg(long, default_value_t = 4)]
    io_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Check every stride-th coordinate of each parameter block.
    #[arg(long, default_value_t = 7)]
    stride: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, value_name = "CKPT")]
    ckpt: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    report: ReportKind,
    /// Write per-step gate traces (CSV and JSON) for one sample.
    #[arg(long)]
    trace: bool,
    /// Corpus for influence and trace reports: a JSONL file or directory.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Which sample of the corpus to trace.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Trace output directory (defaults to <run>/traces next to the
    /// checkpoint).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Sequence length for the state-size report.
    #[arg(long, default_value_t = 100)]
    seq_len: usize,
}

fn base_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_env_seed(cfg: &mut RunConfig) -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("MEMCOMPUTER_SEED") {
        let seed: u64 = raw
            .parse()
            .map_err(|_| CliError::Usage(format!("MEMCOMPUTER_SEED must be an integer, got {raw:?}")))?;
        cfg.generator.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(())
}

fn merge_gen(cfg: &mut RunConfig, a: &GenArgs) {
    let g = &mut cfg.generator;
    if let Some(task) = a.task {
        g.task = task;
    }
    if let Some(n) = a.n {
        g.n_train = n;
    }
    if let Some(n) = a.n_val {
        g.n_val = n;
    }
    if let Some(seed) = a.seed {
        g.seed = seed;
    }
    if let Some(mode) = a.mode {
        g.induction.mode = match mode {
            Mode::Original => memcomputer_core::tasks::InductionMode::Original,
            Mode::Augmented => memcomputer_core::tasks::InductionMode::Augmented,
        };
    }
    if let Some(out) = &a.out {
        cfg.paths.data_dir = Some(out.clone());
    }
}

fn merge_train(cfg: &mut RunConfig, a: &TrainArgs) {
    if let Some(hidden) = a.hidden {
        cfg.model.controller.widths = vec![hidden];
        if let Some(bw) = &mut cfg.model.backward_controller {
            bw.widths = vec![hidden];
        }
    }
    if let Some(n) = a.locations {
        cfg.model.mu.locations = n;
    }
    if let Some(w) = a.width {
        cfg.model.mu.width = w;
    }
    if let Some(r) = a.heads {
        cfg.model.mu.read_heads = r;
    }
    if let Some(arch) = a.arch {
        cfg.model = commands::arch_model_config(arch, &cfg.model);
    }
    if let Some(keep) = a.keep_prob {
        cfg.model.keep_prob = keep;
    }
    if let Some(ln) = a.layer_norm {
        cfg.model.controller.layer_norm = ln;
        if let Some(bw) = &mut cfg.model.backward_controller {
            bw.layer_norm = ln;
        }
    }
    let t = &mut cfg.train;
    if let Some(v) = a.steps {
        t.steps = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.eval_every {
        t.eval_every = v;
    }
    if let Some(v) = a.max_len {
        t.max_len = v;
    }
    if let Some(d) = &a.data {
        cfg.paths.data_dir = Some(d.clone());
    }
    if let Some(d) = &a.run_dir {
        cfg.paths.run_dir = Some(d.clone());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => {
            let mut cfg = base_config(cli.config.as_ref())?;
            merge_gen(&mut cfg, a);
            apply_env_seed(&mut cfg)?;
            let out = cfg.paths.data_dir.clone().ok_or_else(|| {
                CliError::Usage("gen needs a target: pass --out or set paths.data_dir".into())
            })?;
            commands::cmd_gen(&cfg, &out)
        }
        Command::Train(a) => {
            let mut cfg = base_config(cli.config.as_ref())?;
            merge_train(&mut cfg, a);
            apply_env_seed(&mut cfg)?;
            commands::cmd_train(cfg, a.resume.as_deref())
        }
        Command::Eval(a) => {
            let cfg = base_config(cli.config.as_ref())?;
            let ckpt = a
                .ckpt
                .clone()
                .or(cfg.paths.checkpoint.clone())
                .ok_or_else(|| {
                    CliError::Usage("eval needs --ckpt or paths.checkpoint".into())
                })?;
            let data = a
                .data
                .clone()
                .or(cfg.paths.data_dir.clone())
                .ok_or_else(|| CliError::Usage("eval needs --data or paths.data_dir".into()))?;
            commands::cmd_eval(&ckpt, &data)
        }
        Command::Gradcheck(a) => commands::cmd_gradcheck(&GradcheckSpec {
            arch: a.arch,
            locations: a.locations,
            width: a.width,
            heads: a.heads,
            hidden: a.hidden,
            seq_len: a.seq_len,
            io_size: a.io_size,
            seed: a.seed,
            eps: a.eps,
            tol: a.tol,
            stride: a.stride,
        }),
        Command::Inspect(a) => {
            let cfg = base_config(cli.config.as_ref())?;
            let ckpt = a
                .ckpt
                .clone()
                .or(cfg.paths.checkpoint.clone())
                .ok_or_else(|| {
                    CliError::Usage("inspect needs --ckpt or paths.checkpoint".into())
                })?;
            let data = a.data.clone().or(cfg.paths.data_dir.clone());
            commands::cmd_inspect(&InspectSpec {
                ckpt,
                report: a.report,
                trace: a.trace,
                data,
                sample: a.sample,
                out: a.out.clone(),
                seq_len: a.seq_len,
            })
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
