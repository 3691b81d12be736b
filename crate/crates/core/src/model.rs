//! Model assembly: controller(s) + memory unit + output layer, in
//! unidirectional and bidirectional arrangements, with bypass dropout on the
//! controller-to-output path, masked cross-entropy, and candidate-restricted
//! prediction.

use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig};
use crate::error::{CoreError, Result};
use crate::memory::{InterfaceSignals, MemoryUnit, MuConfig, MuVariant};
use crate::params::{Bound, ParamId, ParamSet};
use crate::rng::SeedRng;
use crate::tensor::{dropout_mask, Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Unidirectional,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input one-hot width X.
    pub input_size: usize,
    /// Output vocabulary width Y.
    pub output_size: usize,
    pub architecture: Architecture,
    pub controller: ControllerConfig,
    /// Required for (and only for) the bidirectional architecture.
    pub backward_controller: Option<ControllerConfig>,
    pub mu: MuConfig,
    /// Bypass dropout keep probability (1.0 disables it).
    pub keep_prob: f64,
    /// One trainable output bias shared by both architectures.
    pub output_bias: bool,
}

impl Default for ModelConfig {
    /// A small unidirectional rsDNC sized for the built-in copy task.
    fn default() -> Self {
        Self {
            input_size: 5,
            output_size: 5,
            architecture: Architecture::Unidirectional,
            controller: ControllerConfig::lstm(64),
            backward_controller: None,
            mu: MuConfig::new(16, 16, 2, MuVariant::Cbmu),
            keep_prob: 0.9,
            output_bias: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.output_size == 0 {
            return Err(CoreError::Config("input/output width must be positive".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(CoreError::Config(format!(
                "keep_prob must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        match (self.architecture, &self.backward_controller) {
            (Architecture::Bidirectional, None) => Err(CoreError::Config(
                "bidirectional architecture needs a backward controller".into(),
            )),
            (Architecture::Unidirectional, Some(_)) => Err(CoreError::Config(
                "backward controller given for a unidirectional model".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
struct OutputParams {
    w_h: ParamId,
    w_bwh: Option<ParamId>,
    w_mu: ParamId,
    bias: Option<ParamId>,
}

/// A fully registered model: configuration plus parameter storage.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    fw: Controller,
    bw: Option<Controller>,
    mu: MemoryUnit,
    out: OutputParams,
}

/// Tape handles recorded at one timestep, for introspection. Holding ids is
/// cheap; the values live on the tape.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub signals: InterfaceSignals,
    /// Controller outputs contributing to this step's output: `[h]` or
    /// `[h_fw, h_bw]`.
    pub h: Vec<TensorId>,
    pub mu: TensorId,
    /// `W_h . h` per branch, post-dropout (identity in eval mode).
    pub bypass_terms: Vec<TensorId>,
    /// `W_mu . mu`.
    pub memory_term: TensorId,
    pub bias: Option<TensorId>,
    pub logits: TensorId,
    pub write_w: TensorId,
    pub usage: TensorId,
}

pub struct ForwardOutput {
    pub logits: Vec<TensorId>,
    /// Present when trace collection was requested.
    pub records: Vec<StepRecord>,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut SeedRng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let p = config.mu.read_size();
        let fw_input = match config.architecture {
            Architecture::Unidirectional | Architecture::Bidirectional => config.input_size + p,
        };
        let fw = Controller::register("fw", fw_input, &config.controller, &mut params, rng);
        let bw = config.backward_controller.as_ref().map(|bc| {
            Controller::register("bw", config.input_size, bc, &mut params, rng)
        });
        let c_in = fw.config().output_width()
            + bw.as_ref().map_or(0, |b| b.config().output_width());
        // interface normalization follows the controller's switch so the
        // no-normalization ablation flips everything at once
        let mu = MemoryUnit::register(
            "mu",
            c_in,
            config.mu,
            config.controller.layer_norm,
            &mut params,
            rng,
        );
        let y = config.output_size;
        let out = match config.architecture {
            Architecture::Unidirectional => OutputParams {
                w_h: params.glorot("out.w_h", y, fw.config().output_width(), rng),
                w_bwh: None,
                w_mu: params.glorot("out.w_mu", y, p, rng),
                bias: config.output_bias.then(|| params.filled("out.b", y, 0.0)),
            },
            Architecture::Bidirectional => OutputParams {
                w_h: params.glorot("out.w_fwh", y, fw.config().output_width(), rng),
                w_bwh: Some(params.glorot(
                    "out.w_bwh",
                    y,
                    bw.as_ref().unwrap().config().output_width(),
                    rng,
                )),
                w_mu: params.glorot("out.w_mu", y, p, rng),
                bias: config.output_bias.then(|| params.filled("out.b", y, 0.0)),
            },
        };
        Ok(Self {
            config,
            params,
            fw,
            bw,
            mu,
            out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    /// Run the whole sequence and return per-step output logits.
    /// `mask_rng` is consulted only in train mode (for dropout masks);
    /// eval-mode forwards are rng-free.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &[Vec<f64>],
        mode: RunMode,
        mask_rng: &mut SeedRng,
        collect: bool,
    ) -> ForwardOutput {
        assert!(!inputs.is_empty(), "empty input sequence");
        for row in inputs {
            assert_eq!(row.len(), self.config.input_size, "input width mismatch");
        }
        match self.config.architecture {
            Architecture::Unidirectional => {
                self.forward_uni(tape, bound, inputs, mode, mask_rng, collect)
            }
            Architecture::Bidirectional => {
                self.forward_bi(tape, bound, inputs, mode, mask_rng, collect)
            }
        }
    }

    fn forward_uni(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &[Vec<f64>],
        mode: RunMode,
        mask_rng: &mut SeedRng,
        collect: bool,
    ) -> ForwardOutput {
        let p = self.config.mu.read_size();
        let mut ctrl_state = self.fw.init_state(tape);
        let mut mu_state = self.mu.init_state(tape);
        let mut mu_vec = tape.zeros(vec![p]);
        let mut logits = Vec::with_capacity(inputs.len());
        let mut records = Vec::new();
        for row in inputs {
            let x = tape.constant(row.clone(), vec![self.config.input_size]);
            let joint = tape.concat(&[x, mu_vec]);
            let (h, next_ctrl) = self.fw.step(tape, joint, &ctrl_state, bound);
            let (mu, next_mu, signals) = self.mu.step(tape, h, &mu_state, bound);
            let (y, bypass_terms, memory_term, bias) =
                self.output_step(tape, bound, &[h], mu, mode, mask_rng);
            if collect {
                records.push(StepRecord {
                    signals,
                    h: vec![h],
                    mu,
                    bypass_terms,
                    memory_term,
                    bias,
                    logits: y,
                    write_w: next_mu.write_w,
                    usage: next_mu.usage,
                });
            }
            logits.push(y);
            ctrl_state = next_ctrl;
            mu_state = next_mu;
            mu_vec = mu;
        }
        ForwardOutput { logits, records }
    }

    fn forward_bi(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &[Vec<f64>],
        mode: RunMode,
        mask_rng: &mut SeedRng,
        collect: bool,
    ) -> ForwardOutput {
        let bw = self.bw.as_ref().expect("validated");
        let t_len = inputs.len();
        let p = self.config.mu.read_size();

        // phase 1: the backward controller unfolds independently, last step
        // first, seeing only the raw inputs
        let mut h_bw_rev = Vec::with_capacity(t_len);
        let mut bw_state = bw.init_state(tape);
        for row in inputs.iter().rev() {
            let x = tape.constant(row.clone(), vec![self.config.input_size]);
            let (h, next) = bw.step(tape, x, &bw_state, bound);
            h_bw_rev.push(h);
            bw_state = next;
        }
        let h_bw: Vec<TensorId> = h_bw_rev.into_iter().rev().collect();

        // phase 2: forward controller and memory see the usual recurrences
        let mut ctrl_state = self.fw.init_state(tape);
        let mut mu_state = self.mu.init_state(tape);
        let mut mu_vec = tape.zeros(vec![p]);
        let mut logits = Vec::with_capacity(t_len);
        let mut records = Vec::new();
        for (t, row) in inputs.iter().enumerate() {
            let x = tape.constant(row.clone(), vec![self.config.input_size]);
            let joint = tape.concat(&[x, mu_vec]);
            let (h_fw, next_ctrl) = self.fw.step(tape, joint, &ctrl_state, bound);
            let mu_in = tape.concat(&[h_fw, h_bw[t]]);
            let (mu, next_mu, signals) = self.mu.step(tape, mu_in, &mu_state, bound);
            let (y, bypass_terms, memory_term, bias) =
                self.output_step(tape, bound, &[h_fw, h_bw[t]], mu, mode, mask_rng);
            if collect {
                records.push(StepRecord {
                    signals,
                    h: vec![h_fw, h_bw[t]],
                    mu,
                    bypass_terms,
                    memory_term,
                    bias,
                    logits: y,
                    write_w: next_mu.write_w,
                    usage: next_mu.usage,
                });
            }
            logits.push(y);
            ctrl_state = next_ctrl;
            mu_state = next_mu;
            mu_vec = mu;
        }
        ForwardOutput { logits, records }
    }

    /// `y = sum_b W_b . dropout(h_b) + W_mu . mu (+ bias)`; each branch
    /// draws its own mask.
    fn output_step(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        hs: &[TensorId],
        mu: TensorId,
        mode: RunMode,
        mask_rng: &mut SeedRng,
    ) -> (TensorId, Vec<TensorId>, TensorId, Option<TensorId>) {
        let weights = match self.out.w_bwh {
            Some(w_bwh) => vec![self.out.w_h, w_bwh],
            None => vec![self.out.w_h],
        };
        assert_eq!(hs.len(), weights.len());
        let mut bypass_terms = Vec::with_capacity(hs.len());
        let mut acc: Option<TensorId> = None;
        for (&h, &w) in hs.iter().zip(&weights) {
            let dropped = match mode {
                RunMode::Train if self.config.keep_prob < 1.0 => {
                    let mask =
                        dropout_mask(tape.data(h).len(), self.config.keep_prob, mask_rng);
                    tape.mul_const(h, mask)
                }
                _ => h,
            };
            let term = tape.matvec(bound.id(w), dropped);
            bypass_terms.push(term);
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
        let memory_term = tape.matvec(bound.id(self.out.w_mu), mu);
        let mut y = tape.add(acc.expect("at least one branch"), memory_term);
        let bias = self.out.bias.map(|b| bound.id(b));
        if let Some(b) = bias {
            y = tape.add(y, b);
        }
        (y, bypass_terms, memory_term, bias)
    }
}

/// Mean cross-entropy over the answer-requested steps. `targets[t]` is
/// `Some(class)` exactly where an answer is requested; other steps are
/// ignored and contribute zero gradient.
pub fn masked_loss(
    tape: &mut Tape,
    logits: &[TensorId],
    targets: &[Option<usize>],
) -> Result<TensorId> {
    assert_eq!(logits.len(), targets.len(), "sequence length mismatch");
    let losses: Vec<TensorId> = logits
        .iter()
        .zip(targets)
        .filter_map(|(&y, t)| t.map(|t| tape.nll_loss(y, t)))
        .collect();
    if losses.is_empty() {
        return Err(CoreError::Config(
            "masked loss needs at least one answer step".into(),
        ));
    }
    let cat = tape.concat(&losses);
    Ok(tape.mean(cat))
}

/// Softmax over the candidate subset only; everything else gets exactly
/// zero probability.
pub fn candidate_masked_predict(logits: &[f64], candidates: &[usize]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(CoreError::Config("empty candidate set".into()));
    }
    let max = candidates
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for &i in candidates {
        let e = (logits[i] - max).exp();
        out[i] = e;
        sum += e;
    }
    for &i in candidates {
        out[i] /= sum;
    }
    Ok(out)
}

/// Exact trainable-scalar count for a configuration.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    let mut rng = SeedRng::new(0);
    Ok(Model::new(config.clone(), &mut rng)?.params().total_len())
}
