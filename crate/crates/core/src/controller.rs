//! Recurrent controller: a layer-normalized LSTM stack, plus a dense
//! feedforward alternative.
//!
//! Gates are computed jointly: one fused weight matrix per layer maps the
//! concatenated `[input; h_prev]` to the `4C` pre-activation, which is layer
//! normalized (one joint norm by default, per-gate behind a flag) and then
//! split into input/forget/output/candidate slices in that order.

use serde::{Deserialize, Serialize};

use crate::params::{Bound, ParamId, ParamSet};
use crate::rng::SeedRng;
use crate::tensor::{Tape, TensorId};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Lstm,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Hidden width per layer, bottom to top.
    pub widths: Vec<usize>,
    /// Normalize pre-activations (gain/bias are registered either way only
    /// when this is on).
    pub layer_norm: bool,
    /// One norm per gate slice instead of one over the whole pre-activation.
    pub per_gate_ln: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self::lstm(64)
    }
}

impl ControllerConfig {
    pub fn lstm(width: usize) -> Self {
        Self {
            kind: ControllerKind::Lstm,
            widths: vec![width],
            layer_norm: true,
            per_gate_ln: false,
        }
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("controller needs at least one layer")
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    w: ParamId,
    b: ParamId,
    ln_gain: Option<ParamId>,
    ln_bias: Option<ParamId>,
    in_len: usize,
    width: usize,
}

/// Registered parameter handles for one controller stack.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    layers: Vec<LayerParams>,
}

/// Per-layer hidden and cell tensors, owned by the current tape.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub h: Vec<TensorId>,
    pub c: Vec<TensorId>,
}

impl Controller {
    /// Register all blocks under `prefix` (e.g. `fw` -> `fw.l0.w`).
    /// `input_len` is the width of the bottom layer's external input.
    pub fn register(
        prefix: &str,
        input_len: usize,
        config: &ControllerConfig,
        params: &mut ParamSet,
        rng: &mut SeedRng,
    ) -> Self {
        assert!(!config.widths.is_empty(), "controller needs at least one layer");
        let mut layers = Vec::with_capacity(config.widths.len());
        let mut in_len = input_len;
        for (l, &width) in config.widths.iter().enumerate() {
            let gates = match config.kind {
                ControllerKind::Lstm => 4 * width,
                ControllerKind::Dense => width,
            };
            let cols = match config.kind {
                ControllerKind::Lstm => in_len + width,
                ControllerKind::Dense => in_len,
            };
            let w = params.glorot(&format!("{prefix}.l{l}.w"), gates, cols, rng);
            let mut bias = vec![0.0; gates];
            if config.kind == ControllerKind::Lstm {
                // forget-gate slice starts open so early gradients pass
                // through the cell path
                bias[width..2 * width].fill(1.0);
            }
            let b = params.add(&format!("{prefix}.l{l}.b"), vec![gates], bias);
            let (ln_gain, ln_bias) = if config.layer_norm {
                (
                    Some(params.filled(&format!("{prefix}.l{l}.ln_g"), gates, 1.0)),
                    Some(params.filled(&format!("{prefix}.l{l}.ln_b"), gates, 0.0)),
                )
            } else {
                (None, None)
            };
            layers.push(LayerParams {
                w,
                b,
                ln_gain,
                ln_bias,
                in_len,
                width,
            });
            in_len = width;
        }
        Self {
            config: config.clone(),
            layers,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    /// All-zero hidden and cell vectors on the given tape.
    pub fn init_state(&self, tape: &mut Tape) -> ControllerState {
        let h = self
            .layers
            .iter()
            .map(|l| tape.zeros(vec![l.width]))
            .collect();
        let c = self
            .layers
            .iter()
            .map(|l| tape.zeros(vec![l.width]))
            .collect();
        ControllerState { h, c }
    }

    /// One timestep through every layer, bottom up. Returns the top-layer
    /// hidden vector and the successor state.
    pub fn step(
        &self,
        tape: &mut Tape,
        input: TensorId,
        state: &ControllerState,
        bound: &Bound,
    ) -> (TensorId, ControllerState) {
        assert_eq!(
            tape.data(input).len(),
            self.layers[0].in_len,
            "controller input width mismatch"
        );
        let mut h_out = Vec::with_capacity(self.layers.len());
        let mut c_out = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for (l, layer) in self.layers.iter().enumerate() {
            let (h, c) = match self.config.kind {
                ControllerKind::Lstm => {
                    self.lstm_layer(tape, layer, x, state.h[l], state.c[l], bound)
                }
                ControllerKind::Dense => {
                    let h = self.dense_layer(tape, layer, x, bound);
                    (h, state.c[l])
                }
            };
            h_out.push(h);
            c_out.push(c);
            x = h;
        }
        (x, ControllerState { h: h_out, c: c_out })
    }

    fn lstm_layer(
        &self,
        tape: &mut Tape,
        layer: &LayerParams,
        x: TensorId,
        h_prev: TensorId,
        c_prev: TensorId,
        bound: &Bound,
    ) -> (TensorId, TensorId) {
        let width = layer.width;
        let joint = tape.concat(&[x, h_prev]);
        let wz = tape.matvec(bound.id(layer.w), joint);
        let z = tape.add(wz, bound.id(layer.b));
        let z = self.normalize(tape, layer, z, bound);
        let i = tape.slice(z, 0, width);
        let f = tape.slice(z, width, width);
        let o = tape.slice(z, 2 * width, width);
        let g = tape.slice(z, 3 * width, width);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let o = tape.sigmoid(o);
        let g = tape.tanh(g);
        let keep = tape.mul(f, c_prev);
        let write = tape.mul(i, g);
        let c = tape.add(keep, write);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        (h, c)
    }

    fn dense_layer(
        &self,
        tape: &mut Tape,
        layer: &LayerParams,
        x: TensorId,
        bound: &Bound,
    ) -> TensorId {
        let wz = tape.matvec(bound.id(layer.w), x);
        let z = tape.add(wz, bound.id(layer.b));
        let z = self.normalize(tape, layer, z, bound);
        tape.tanh(z)
    }

    fn normalize(
        &self,
        tape: &mut Tape,
        layer: &LayerParams,
        z: TensorId,
        bound: &Bound,
    ) -> TensorId {
        let (Some(gain), Some(bias)) = (layer.ln_gain, layer.ln_bias) else {
            return z;
        };
        let gain = bound.id(gain);
        let bias = bound.id(bias);
        if !self.config.per_gate_ln || self.config.kind == ControllerKind::Dense {
            return tape.layer_norm(z, gain, bias, LN_EPS);
        }
        let width = layer.width;
        let parts: Vec<TensorId> = (0..4)
            .map(|k| {
                let zs = tape.slice(z, k * width, width);
                let gs = tape.slice(gain, k * width, width);
                let bs = tape.slice(bias, k * width, width);
                tape.layer_norm(zs, gs, bs, LN_EPS)
            })
            .collect();
        tape.concat(&parts)
    }
}
