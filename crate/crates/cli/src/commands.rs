//! The five subcommand bodies. Each takes an already-merged [`RunConfig`]
//! plus whatever extra arguments the subcommand carries.

use std::fs;
use std::path::{Path, PathBuf};

use memcomputer_core::checkpoint::{self, Checkpoint};
use memcomputer_core::controller::ControllerConfig;
use memcomputer_core::gradcheck::finite_diff_check;
use memcomputer_core::introspect::{
    export_traces, memory_influence, record_traces, state_size_report, TraceFormat,
};
use memcomputer_core::memory::{MuConfig, MuVariant};
use memcomputer_core::model::{count_parameters, masked_loss};
use memcomputer_core::tasks::{
    copy_vocab, gen_copy, gen_induction, gen_qa, induction_vocab, qa_vocab, read_jsonl,
    read_vocab, write_jsonl, write_vocab, Sample, Vocabulary,
};
use memcomputer_core::training::{evaluate, train, TrainState};
use memcomputer_core::{Architecture, Model, ModelConfig, RunMode, SeedRng};

use crate::config::{RunConfig, TaskKind};
use crate::{Arch, CliError, ReportKind};

fn task_vocab(task: TaskKind) -> Vocabulary {
    match task {
        TaskKind::Copy => copy_vocab(),
        TaskKind::Induction16 => induction_vocab(),
        TaskKind::Qa => qa_vocab(),
    }
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    let g = &cfg.generator;
    let vocab = task_vocab(g.task);
    // independent streams so changing one split's size leaves the other alone
    let mut rngs = [SeedRng::new(g.seed).derive(1), SeedRng::new(g.seed).derive(2)];
    let mut gen_split = |count: usize, which: usize| -> Result<Vec<Sample>, CliError> {
        let rng = &mut rngs[which];
        (0..count)
            .map(|_| {
                let s = match g.task {
                    TaskKind::Copy => gen_copy(&g.copy, &vocab, rng),
                    TaskKind::Induction16 => gen_induction(&g.induction, &vocab, rng),
                    TaskKind::Qa => gen_qa(&g.qa, &vocab, rng),
                }?;
                Ok(s)
            })
            .collect()
    };
    let train_set = gen_split(g.n_train, 0)?;
    let val_set = gen_split(g.n_val, 1)?;

    write_jsonl(&out.join("train.jsonl"), &train_set)?;
    write_jsonl(&out.join("val.jsonl"), &val_set)?;
    write_vocab(&out.join("vocab.json"), &vocab)?;
    cfg.save(&out.join("config.json"))?;
    println!(
        "wrote {} train / {} val samples to {} ({} vocabulary tokens)",
        train_set.len(),
        val_set.len(),
        out.display(),
        vocab.len()
    );
    Ok(())
}

fn load_model(ckpt: &Checkpoint) -> Result<(Model, Vocabulary), CliError> {
    let vocab = Vocabulary::try_from(ckpt.meta.vocab.clone())?;
    let mut model = Model::new(ckpt.meta.config.clone(), &mut SeedRng::new(0))?;
    ckpt.restore_params(&mut model)?;
    Ok((model, vocab))
}

pub fn cmd_train(mut cfg: RunConfig, resume: Option<&Path>) -> Result<(), CliError> {
    let data = cfg.paths.data_dir.clone().ok_or_else(|| {
        CliError::Usage("train needs a corpus: pass --data or set paths.data_dir".into())
    })?;
    let run_dir = cfg.paths.run_dir.clone().ok_or_else(|| {
        CliError::Usage("train needs a run directory: pass --run-dir or set paths.run_dir".into())
    })?;
    let vocab = read_vocab(&data.join("vocab.json"))?;
    let train_set = read_jsonl(&data.join("train.jsonl"))?;
    let val_set = read_jsonl(&data.join("val.jsonl"))?;
    cfg.model.input_size = vocab.len();
    cfg.model.output_size = vocab.len();

    let (mut model, state) = match resume {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            if ckpt.meta.vocab.as_slice() != vocab.tokens() {
                return Err(CliError::Runtime(
                    "checkpoint vocabulary does not match the corpus".into(),
                ));
            }
            // the stored config wins: resuming must continue the same model
            cfg.model = ckpt.meta.config.clone();
            let mut model = Model::new(cfg.model.clone(), &mut SeedRng::new(cfg.train.seed))?;
            ckpt.restore_params(&mut model)?;
            let state = TrainState::from_checkpoint(&ckpt, &model)?;
            (model, Some(state))
        }
        None => {
            let model = Model::new(cfg.model.clone(), &mut SeedRng::new(cfg.train.seed))?;
            (model, None)
        }
    };

    fs::create_dir_all(&run_dir)?;
    cfg.save(&run_dir.join("config.json"))?;
    println!(
        "training on {} samples ({} parameters, seed {})",
        train_set.len(),
        count_parameters(model.config())?,
        cfg.train.seed
    );
    let (report, _) = train(
        &mut model,
        &train_set,
        &val_set,
        &vocab,
        &cfg.train,
        Some(&run_dir),
        state,
    )?;
    let last_val = report.metrics.iter().rev().find(|r| r.split == "val");
    match last_val {
        Some(row) => println!(
            "step {}: val loss {:.6} wer {:.6} accuracy {:.6}",
            row.step,
            row.loss.unwrap_or(f64::NAN),
            row.wer.unwrap_or(f64::NAN),
            row.accuracy.unwrap_or(f64::NAN),
        ),
        None => println!("step {}: no validation pass ran", report.final_step),
    }
    println!("artifacts in {}", run_dir.display());
    Ok(())
}

pub fn cmd_eval(ckpt_path: &Path, data: &Path) -> Result<(), CliError> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let (model, vocab) = load_model(&ckpt)?;
    let file = if data.is_dir() { data.join("val.jsonl") } else { data.to_path_buf() };
    let samples = read_jsonl(&file)?;
    let (loss, wer, acc) = evaluate(&model, &samples, &vocab)?;
    println!(
        "loss {loss:.6} wer {wer:.6} accuracy {acc:.6} ({} samples)",
        samples.len()
    );
    Ok(())
}

pub struct GradcheckSpec {
    pub arch: Arch,
    pub locations: usize,
    pub width: usize,
    pub heads: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub io_size: usize,
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    pub stride: usize,
}

pub fn arch_model_config(arch: Arch, base: &ModelConfig) -> ModelConfig {
    let mut cfg = base.clone();
    let (variant, bi) = match arch {
        Arch::Dnc => (MuVariant::Dnc, false),
        Arch::Rsdnc => (MuVariant::Cbmu, false),
        Arch::Bdnc => (MuVariant::Dnc, true),
        Arch::Brsdnc => (MuVariant::Cbmu, true),
    };
    cfg.mu.variant = variant;
    if bi {
        cfg.architecture = Architecture::Bidirectional;
        if cfg.backward_controller.is_none() {
            cfg.backward_controller = Some(cfg.controller.clone());
        }
    } else {
        cfg.architecture = Architecture::Unidirectional;
        cfg.backward_controller = None;
    }
    cfg
}

pub fn cmd_gradcheck(spec: &GradcheckSpec) -> Result<(), CliError> {
    if spec.locations > 8 || spec.width > 8 || spec.hidden > 16 || spec.seq_len > 6 {
        return Err(CliError::Usage(
            "gradcheck is restricted to tiny models: locations <= 8, width <= 8, \
             hidden <= 16, seq-len <= 6"
                .into(),
        ));
    }
    let base = ModelConfig {
        input_size: spec.io_size,
        output_size: spec.io_size,
        architecture: Architecture::Unidirectional,
        controller: ControllerConfig::lstm(spec.hidden),
        backward_controller: None,
        mu: MuConfig::new(spec.locations, spec.width, spec.heads, MuVariant::Cbmu),
        keep_prob: 1.0,
        output_bias: true,
    };
    let cfg = arch_model_config(spec.arch, &base);
    let mut rng = SeedRng::new(spec.seed);
    let model = Model::new(cfg, &mut rng)?;

    let inputs: Vec<Vec<f64>> = (0..spec.seq_len)
        .map(|_| (0..spec.io_size).map(|_| rng.uniform_sym(0.8)).collect())
        .collect();
    let mut targets: Vec<Option<usize>> = (0..spec.seq_len)
        .map(|t| (t % 2 == 1).then_some(t % spec.io_size))
        .collect();
    if spec.seq_len == 1 {
        targets[0] = Some(0);
    }

    let mut params = model.params().clone();
    let report = finite_diff_check(&mut params, spec.eps, spec.stride, |tape, bound| {
        let out = model.forward(tape, bound, &inputs, RunMode::Eval, &mut SeedRng::new(0), false);
        masked_loss(tape, &out.logits, &targets).expect("loss over fixed targets")
    });
    print!("{}", report.summary());
    if report.passed(spec.tol) {
        println!("PASS (tolerance {:e})", spec.tol);
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "max relative error {:.3e} exceeds {:e}",
            report.max_rel_err, spec.tol
        )))
    }
}

pub struct InspectSpec {
    pub ckpt: PathBuf,
    pub report: ReportKind,
    pub trace: bool,
    pub data: Option<PathBuf>,
    pub sample: usize,
    pub out: Option<PathBuf>,
    pub seq_len: usize,
}

fn load_sample(spec: &InspectSpec) -> Result<Sample, CliError> {
    let data = spec.data.as_ref().ok_or_else(|| {
        CliError::Usage("this report reads a corpus: pass --data <file.jsonl>".into())
    })?;
    let file = if data.is_dir() { data.join("val.jsonl") } else { data.clone() };
    let samples = read_jsonl(&file)?;
    samples.into_iter().nth(spec.sample).ok_or_else(|| {
        CliError::Usage(format!("--sample {} is out of range", spec.sample))
    })
}

/// Default trace directory: `<run>/traces` when the checkpoint sits in the
/// usual `<run>/ckpt-N/model.ckpt` spot, the working directory otherwise.
fn trace_dir(spec: &InspectSpec) -> PathBuf {
    if let Some(out) = &spec.out {
        return out.clone();
    }
    spec.ckpt
        .parent()
        .and_then(|p| p.parent())
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."))
        .join("traces")
}

pub fn cmd_inspect(spec: &InspectSpec) -> Result<(), CliError> {
    let ckpt = checkpoint::load(&spec.ckpt)?;
    let config = &ckpt.meta.config;
    let all = spec.report == ReportKind::All;

    if all || spec.report == ReportKind::Params {
        println!("parameters: {}", count_parameters(config)?);
    }
    if all || spec.report == ReportKind::Statesize {
        let r = state_size_report(config, spec.seq_len, 1);
        println!(
            "state per step: dnc {} floats, cbmu {} floats, reduction {:.1}%",
            r.per_step_dnc,
            r.per_step_cbmu,
            100.0 * r.reduction
        );
        println!(
            "memory-unit state (dnc): {} floats, linkage mechanism {} ({:.0}%)",
            r.mu_state_dnc(),
            r.linkage_mechanism(),
            100.0 * r.linkage_share()
        );
        let n = config.mu.locations;
        let overhead = r.per_step_dnc - r.per_step_cbmu;
        println!(
            "linkage overhead: {} floats/step (N\u{b2}+N+3R = {})",
            overhead,
            n * n + n + 3 * config.mu.read_heads
        );
        println!(
            "over {} steps: dnc {} vs cbmu {} floats retained",
            spec.seq_len, r.total_dnc, r.total_cbmu
        );
    }
    if all && spec.data.is_some() || spec.report == ReportKind::Influence {
        let (model, vocab) = load_model(&ckpt)?;
        let sample = load_sample(spec)?;
        let rep = memory_influence(&model, &sample, &vocab)?;
        println!(
            "memory influence: mean {:.1}% over {} steps, answer agreement {:.0}%",
            rep.mean_pct,
            rep.per_step.len(),
            100.0 * rep.agreement
        );
    }
    if spec.trace {
        let (model, vocab) = load_model(&ckpt)?;
        let sample = load_sample(spec)?;
        let traces = record_traces(&model, &sample, &vocab)?;
        let dir = trace_dir(spec);
        fs::create_dir_all(&dir)?;
        let csv = dir.join(format!("trace-{}.csv", spec.sample));
        let json = dir.join(format!("trace-{}.json", spec.sample));
        export_traces(&traces, &csv, TraceFormat::Csv)?;
        export_traces(&traces, &json, TraceFormat::Json)?;
        println!("wrote {} ({} rows) and {}", csv.display(), traces.len(), json.display());
    }
    Ok(())
}
