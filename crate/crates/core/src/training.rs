//! RMSprop training loop: batching with padding and length limits,
//! gradient clipping, periodic evaluation, checkpointing, and the
//! pretrain-then-finetune schedule.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::error::{CoreError, Result};
use crate::model::{masked_loss, Model, RunMode};
use crate::params::ParamSet;
use crate::rng::SeedRng;
use crate::tasks::{encode, metrics, Sample, Vocabulary};
use crate::tensor::Tape;

/// RMSprop with momentum. Accumulators mirror the parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Rmsprop {
    pub acc: Vec<Vec<f64>>,
    pub mom: Vec<Vec<f64>>,
    pub step: u64,
}

impl Rmsprop {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            acc: zeros.clone(),
            mom: zeros,
            step: 0,
        }
    }

    /// Drop curvature estimates but keep the step count; used at the
    /// fine-tune boundary.
    pub fn reset(&mut self) {
        for block in self.acc.iter_mut().chain(self.mom.iter_mut()) {
            block.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn from_blocks(acc: Vec<Vec<f64>>, mom: Vec<Vec<f64>>, step: u64) -> Self {
        Self { acc, mom, step }
    }
}

/// One update: `acc <- decay*acc + (1-decay)*g^2`,
/// `mom <- momentum*mom + lr*g/sqrt(acc+eps)`, `theta <- theta - mom`.
/// A non-finite gradient aborts before touching anything.
pub fn rmsprop_step(
    params: &mut ParamSet,
    grads: &[Vec<f64>],
    state: &mut Rmsprop,
    lr: f64,
    momentum: f64,
    decay: f64,
    eps: f64,
) -> Result<()> {
    assert_eq!(grads.len(), params.len(), "gradient block count mismatch");
    for (p, g) in params.iter().zip(grads) {
        assert_eq!(g.len(), p.data.len(), "gradient length mismatch in {}", p.name);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NanGradient(p.name.clone()));
        }
    }
    for (((p, g), acc), mom) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.acc)
        .zip(&mut state.mom)
    {
        for i in 0..g.len() {
            acc[i] = decay * acc[i] + (1.0 - decay) * g[i] * g[i];
            mom[i] = momentum * mom[i] + lr * g[i] / (acc[i] + eps).sqrt();
            p.data[i] -= mom[i];
        }
    }
    state.step += 1;
    Ok(())
}

/// Scale all blocks down so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|b| b.iter()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for b in grads.iter_mut() {
            b.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    /// Zero rows after the sample (default).
    End,
    /// Zero rows before the sample, so content occupies the suffix.
    Front,
}

/// One padded sequence of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<Option<usize>>,
}

/// Shuffle by seed, drop overlong samples, group, and zero-pad each batch
/// to its longest member. Padded steps carry no targets.
pub fn make_batches(
    samples: &[Sample],
    vocab: &Vocabulary,
    batch_size: usize,
    max_len: usize,
    pad: PadMode,
    seed: u64,
) -> Result<Vec<Vec<Lane>>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut keep: Vec<&Sample> = samples.iter().filter(|s| s.tokens.len() <= max_len).collect();
    let mut rng = SeedRng::new(seed);
    rng.shuffle(&mut keep);

    let mut batches = Vec::new();
    for group in keep.chunks(batch_size) {
        let width = group.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
        let mut lanes = Vec::with_capacity(group.len());
        for s in group {
            let enc = encode(s, vocab)?;
            let pad_rows = width - enc.rows.len();
            let mut rows = Vec::with_capacity(width);
            let mut targets = Vec::with_capacity(width);
            if pad == PadMode::Front {
                rows.extend(std::iter::repeat(vec![0.0; vocab.len()]).take(pad_rows));
                targets.extend(std::iter::repeat(None).take(pad_rows));
            }
            rows.extend(enc.rows);
            targets.extend(enc.targets);
            if pad == PadMode::End {
                rows.extend(std::iter::repeat(vec![0.0; vocab.len()]).take(pad_rows));
                targets.extend(std::iter::repeat(None).take(pad_rows));
            }
            lanes.push(Lane { rows, targets });
        }
        batches.push(lanes);
    }
    Ok(batches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub eps: f64,
    pub max_len: usize,
    pub pad: PadMode,
    /// Total optimizer steps.
    pub steps: u64,
    /// Validate, log, and checkpoint every this many steps.
    pub eval_every: u64,
    pub seed: u64,
    /// Global-norm gradient clip; `None` disables.
    pub clip_norm: Option<f64>,
    /// Real wall-clock values in the metrics log instead of zeros; off by
    /// default so identical runs produce identical bytes.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 3e-5,
            momentum: 0.9,
            decay: 0.9,
            eps: 1e-10,
            max_len: 800,
            pad: PadMode::End,
            steps: 1000,
            eval_every: 100,
            seed: 0,
            clip_norm: Some(10.0),
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(CoreError::Config("learning rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.steps == 0 || self.eval_every == 0 {
            return Err(CoreError::Config(
                "batch size, steps, and eval cadence must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub split: &'static str,
    pub loss: Option<f64>,
    pub wer: Option<f64>,
    pub accuracy: Option<f64>,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "step,split,loss,wer,accuracy,wall_ms";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.split,
            opt(self.loss),
            opt(self.wer),
            opt(self.accuracy),
            self.wall_ms
        )
    }
}

/// Mutable training context that must survive a resume.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub opt: Rmsprop,
    pub rng: SeedRng,
    pub next_step: u64,
}

impl TrainState {
    pub fn fresh(model: &Model, cfg: &TrainConfig) -> Self {
        Self {
            opt: Rmsprop::new(model.params()),
            rng: SeedRng::new(cfg.seed).derive(1),
            next_step: 0,
        }
    }

    /// Rebuild from a checkpoint written by [`train`].
    pub fn from_checkpoint(ckpt: &Checkpoint, model: &Model) -> Result<Self> {
        let opt = match ckpt.optimizer_blocks() {
            Some((acc, mom)) => {
                if acc.len() != model.params().len() {
                    return Err(CoreError::Checkpoint(
                        "optimizer blocks do not match the model".into(),
                    ));
                }
                Rmsprop::from_blocks(acc, mom, ckpt.meta.step)
            }
            None => Rmsprop::new(model.params()),
        };
        Ok(Self {
            opt,
            rng: ckpt.training_rng(),
            next_step: ckpt.meta.step,
        })
    }
}

pub struct TrainReport {
    pub metrics: Vec<MetricsRow>,
    pub final_step: u64,
    pub final_wer: Option<f64>,
}

/// Pooled scores over a whole split: mean masked loss, word error rate
/// over all requested words, fraction of fully-correct samples.
pub fn evaluate(model: &Model, samples: &[Sample], vocab: &Vocabulary) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Err(CoreError::Config("empty evaluation split".into()));
    }
    let mut loss_sum = 0.0;
    let mut asked = 0usize;
    let mut wrong = 0usize;
    let mut correct = Vec::with_capacity(samples.len());
    let mut unused = SeedRng::new(0);
    for s in samples {
        let enc = encode(s, vocab)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let out = model.forward(&mut tape, &bound, &enc.rows, RunMode::Eval, &mut unused, false);
        let loss = masked_loss(&mut tape, &out.logits, &enc.targets)?;
        loss_sum += tape.value_scalar(loss);
        let rows: Vec<Vec<f64>> = out.logits.iter().map(|&y| tape.data(y).to_vec()).collect();
        let sample_wer = metrics::wer(&rows, &enc.targets)?;
        let n_asked = enc.targets.iter().flatten().count();
        asked += n_asked;
        wrong += (sample_wer * n_asked as f64).round() as usize;
        correct.push(sample_wer == 0.0);
    }
    Ok((
        loss_sum / samples.len() as f64,
        wrong as f64 / asked as f64,
        metrics::accuracy(&correct)?,
    ))
}

fn append_metrics(path: &Path, rows: &[MetricsRow], new_file: bool) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if new_file {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{}", r.to_csv())?;
    }
    Ok(())
}

fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(format!("ckpt-{step}")).join("model.ckpt")
}

/// Forward-backward over one batch; returns (mean loss, mean gradients).
fn batch_gradients(
    model: &Model,
    lanes: &[Lane],
    rng: &mut SeedRng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut total: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| vec![0.0; p.data.len()])
        .collect();
    let mut loss_sum = 0.0;
    for lane in lanes {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let out = model.forward(&mut tape, &bound, &lane.rows, RunMode::Train, rng, false);
        let loss = masked_loss(&mut tape, &out.logits, &lane.targets)?;
        loss_sum += tape.value_scalar(loss);
        tape.backward(loss);
        for (acc, g) in total.iter_mut().zip(model.params().grads(&tape, &bound)) {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
    }
    let scale = 1.0 / lanes.len() as f64;
    for b in &mut total {
        b.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss_sum * scale, total))
}

/// Run (or continue) the training loop until `cfg.steps` updates have been
/// applied. Writes `metrics.csv` and `ckpt-*/model.ckpt` under `run_dir`
/// when given. A non-finite loss aborts; checkpoints already on disk stay.
pub fn train(
    model: &mut Model,
    train_set: &[Sample],
    val_set: &[Sample],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
    state: Option<TrainState>,
) -> Result<(TrainReport, TrainState)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::Config("empty training split".into()));
    }
    // a run that handed us a mid-stream state appends to its own log;
    // anything starting from step 0 gets a fresh file
    let resumed = state.as_ref().map_or(false, |s| s.next_step > 0);
    let mut state = match state {
        Some(s) => s,
        None => TrainState::fresh(model, cfg),
    };
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir)?;
    }
    let metrics_path = run_dir.map(|d| d.join("metrics.csv"));
    if let Some(path) = &metrics_path {
        if !resumed && path.exists() {
            fs::remove_file(path)?;
        }
    }
    let mut metrics_started = resumed;

    let kept = train_set
        .iter()
        .filter(|s| s.tokens.len() <= cfg.max_len)
        .count();
    if kept == 0 {
        return Err(CoreError::Config(
            "no training samples within the length limit".into(),
        ));
    }
    let per_epoch = (kept + cfg.batch_size - 1) / cfg.batch_size;

    let started = Instant::now();
    let wall = |cfg: &TrainConfig| {
        if cfg.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        }
    };

    let mut report = TrainReport {
        metrics: Vec::new(),
        final_step: state.next_step,
        final_wer: None,
    };

    // the batch stream is a pure function of (seed, epoch, index), so a
    // resumed run replays exactly the sequence it would have seen
    let mut cached: Option<(u64, Vec<Vec<Lane>>)> = None;
    while state.next_step < cfg.steps {
        let s = state.next_step;
        let epoch = s / per_epoch as u64;
        let idx = (s % per_epoch as u64) as usize;
        if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let seed = SeedRng::new(cfg.seed).derive(2 + epoch).seed();
            let b = make_batches(train_set, vocab, cfg.batch_size, cfg.max_len, cfg.pad, seed)?;
            cached = Some((epoch, b));
        }
        let lanes = &cached.as_ref().unwrap().1[idx];

        let (loss, mut grads) = batch_gradients(model, lanes, &mut state.rng)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { step: s + 1 });
        }
        if let Some(max_norm) = cfg.clip_norm {
            clip_global_norm(&mut grads, max_norm);
        }
        rmsprop_step(
            model.params_mut(),
            &grads,
            &mut state.opt,
            cfg.lr,
            cfg.momentum,
            cfg.decay,
            cfg.eps,
        )?;
        state.next_step = s + 1;

        let mut rows = vec![MetricsRow {
            step: state.next_step,
            split: "train",
            loss: Some(loss),
            wer: None,
            accuracy: None,
            wall_ms: wall(cfg),
        }];
        if state.next_step % cfg.eval_every == 0 || state.next_step == cfg.steps {
            if !val_set.is_empty() {
                let (vloss, vwer, vacc) = evaluate(model, val_set, vocab)?;
                report.final_wer = Some(vwer);
                rows.push(MetricsRow {
                    step: state.next_step,
                    split: "val",
                    loss: Some(vloss),
                    wer: Some(vwer),
                    accuracy: Some(vacc),
                    wall_ms: wall(cfg),
                });
            }
            if let Some(dir) = run_dir {
                let path = checkpoint_path(dir, state.next_step);
                fs::create_dir_all(path.parent().unwrap())?;
                let ckpt = Checkpoint::capture(
                    model,
                    vocab.tokens().to_vec(),
                    state.next_step,
                    &state.rng,
                    Some((&state.opt.acc, &state.opt.mom)),
                );
                checkpoint::save(&path, &ckpt)?;
            }
        }
        if let Some(path) = &metrics_path {
            append_metrics(path, &rows, !metrics_started)?;
            metrics_started = true;
        }
        report.metrics.extend(rows);
        report.final_step = state.next_step;
    }
    Ok((report, state))
}

/// Two-phase schedule: train on `a`, reset the optimizer accumulators,
/// keep the parameters, continue on `b`. Both corpora must share the
/// vocabulary.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_finetune(
    model: &mut Model,
    a_train: &[Sample],
    a_val: &[Sample],
    b_train: &[Sample],
    b_val: &[Sample],
    vocab_a: &Vocabulary,
    vocab_b: &Vocabulary,
    cfg_a: &TrainConfig,
    cfg_b: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<(TrainReport, TrainReport)> {
    if vocab_a != vocab_b {
        return Err(CoreError::VocabMismatch);
    }
    let dir_a = run_dir.map(|d| d.join("pretrain"));
    let dir_b = run_dir.map(|d| d.join("finetune"));
    let (report_a, state_a) = train(model, a_train, a_val, vocab_a, cfg_a, dir_a.as_deref(), None)?;
    let mut opt = state_a.opt;
    opt.reset();
    opt.step = 0;
    let state_b = TrainState {
        opt,
        rng: SeedRng::new(cfg_b.seed).derive(1),
        next_step: 0,
    };
    let (report_b, _) = train(
        model,
        b_train,
        b_val,
        vocab_b,
        cfg_b,
        dir_b.as_deref(),
        Some(state_b),
    )?;
    Ok((report_a, report_b))
}
