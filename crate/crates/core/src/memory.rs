//! External memory: interface projection and split, content addressing, the
//! write path (usage, allocation, erase/add), temporal linkage, and two read
//! variants — the full DNC with linkage-based forward/backward reads, and the
//! slim content-based unit (CBMU) that reads by content only.

use serde::{Deserialize, Serialize};

use crate::controller::LN_EPS;
use crate::params::{Bound, ParamId, ParamSet};
use crate::rng::SeedRng;
use crate::tensor::{Tape, TensorId};

pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuVariant {
    Dnc,
    Cbmu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MuConfig {
    /// Memory locations N.
    pub locations: usize,
    /// Word width W.
    pub width: usize,
    /// Read heads R.
    pub read_heads: usize,
    pub variant: MuVariant,
}

impl Default for MuConfig {
    fn default() -> Self {
        Self::new(16, 16, 2, MuVariant::Cbmu)
    }
}

impl MuConfig {
    pub fn new(locations: usize, width: usize, read_heads: usize, variant: MuVariant) -> Self {
        assert!(locations >= 1 && width >= 1 && read_heads >= 1);
        Self {
            locations,
            width,
            read_heads,
            variant,
        }
    }

    /// Width of the concatenated read vectors fed back to the controller
    /// and output layer.
    pub fn read_size(&self) -> usize {
        self.read_heads * self.width
    }

    /// Interface vector length: R read keys (W each) + R read strengths +
    /// write key (W) + write strength + erase (W) + write vector (W) +
    /// R free gates + allocation gate + write gate, plus 3 read-mode logits
    /// per head for the DNC variant.
    pub fn interface_len(&self) -> usize {
        let (r, w) = (self.read_heads, self.width);
        let base = r * w + r + w + 1 + w + w + r + 1 + 1;
        match self.variant {
            MuVariant::Dnc => base + 3 * r,
            MuVariant::Cbmu => base,
        }
    }
}

/// Split control signals, post-nonlinearity, as tape tensors.
#[derive(Debug, Clone)]
pub struct InterfaceSignals {
    pub read_keys: Vec<TensorId>,      // R x [W]
    pub read_strengths: Vec<TensorId>, // R x [1], >= 1
    pub write_key: TensorId,           // [W]
    pub write_strength: TensorId,      // [1], >= 1
    pub erase: TensorId,               // [W], in (0,1)
    pub write_vec: TensorId,           // [W]
    pub free_gates: Vec<TensorId>,     // R x [1], in (0,1)
    pub alloc_gate: TensorId,          // [1], in (0,1)
    pub write_gate: TensorId,          // [1], in (0,1)
    pub read_modes: Option<Vec<TensorId>>, // R x [3] on the simplex (DNC)
}

/// Recurrent memory state as tape tensors. CBMU carries no linkage or
/// precedence.
#[derive(Debug, Clone)]
pub struct MemoryState {
    pub memory: TensorId,         // [N, W]
    pub usage: TensorId,          // [N]
    pub write_w: TensorId,        // [N]
    pub read_w: Vec<TensorId>,    // R x [N]
    pub read_vecs: Vec<TensorId>, // R x [W]
    pub linkage: Option<TensorId>, // [N, N]
    pub precedence: Option<TensorId>, // [N]
}

/// Registered parameter handles: the interface projection and its norm.
#[derive(Debug, Clone)]
pub struct MemoryUnit {
    config: MuConfig,
    w_xi: ParamId,
    ln_gain: Option<ParamId>,
    ln_bias: Option<ParamId>,
}

impl MemoryUnit {
    pub fn register(
        prefix: &str,
        c_in: usize,
        config: MuConfig,
        layer_norm: bool,
        params: &mut ParamSet,
        rng: &mut SeedRng,
    ) -> Self {
        let xi = config.interface_len();
        let w_xi = params.glorot(&format!("{prefix}.w_xi"), xi, c_in, rng);
        let (ln_gain, ln_bias) = if layer_norm {
            (
                Some(params.filled(&format!("{prefix}.ln_g"), xi, 1.0)),
                Some(params.filled(&format!("{prefix}.ln_b"), xi, 0.0)),
            )
        } else {
            (None, None)
        };
        Self {
            config,
            w_xi,
            ln_gain,
            ln_bias,
        }
    }

    pub fn config(&self) -> &MuConfig {
        &self.config
    }

    /// All-zero initial state; the cosine epsilon keeps the first-step
    /// addressing over the zero matrix well defined.
    pub fn init_state(&self, tape: &mut Tape) -> MemoryState {
        let (n, w, r) = (self.config.locations, self.config.width, self.config.read_heads);
        let dnc = self.config.variant == MuVariant::Dnc;
        MemoryState {
            memory: tape.zeros(vec![n, w]),
            usage: tape.zeros(vec![n]),
            write_w: tape.zeros(vec![n]),
            read_w: (0..r).map(|_| tape.zeros(vec![n])).collect(),
            read_vecs: (0..r).map(|_| tape.zeros(vec![w])).collect(),
            linkage: dnc.then(|| tape.zeros(vec![n, n])),
            precedence: dnc.then(|| tape.zeros(vec![n])),
        }
    }

    /// `xi = layer_norm(W_xi . h)` — one joint norm over the whole interface
    /// vector.
    pub fn project_interface(&self, tape: &mut Tape, h: TensorId, bound: &Bound) -> TensorId {
        let raw = tape.matvec(bound.id(self.w_xi), h);
        match (self.ln_gain, self.ln_bias) {
            (Some(g), Some(b)) => {
                let (g, b) = (bound.id(g), bound.id(b));
                tape.layer_norm(raw, g, b, LN_EPS)
            }
            _ => raw,
        }
    }

    /// Slice `xi` in the fixed order and apply the signal nonlinearities
    /// (oneplus for strengths, sigmoid for erase and gates, per-head softmax
    /// for read modes).
    pub fn split_interface(&self, tape: &mut Tape, xi: TensorId) -> InterfaceSignals {
        let (n_xi, r, w) = (
            self.config.interface_len(),
            self.config.read_heads,
            self.config.width,
        );
        assert_eq!(tape.data(xi).len(), n_xi, "interface length mismatch");
        let mut off = 0;
        let mut take = |tape: &mut Tape, len: usize| {
            let s = tape.slice(xi, off, len);
            off += len;
            s
        };

        let read_keys: Vec<TensorId> = (0..r).map(|_| take(tape, w)).collect();
        let rs_raw = take(tape, r);
        let write_key = take(tape, w);
        let ws_raw = take(tape, 1);
        let erase_raw = take(tape, w);
        let write_vec = take(tape, w);
        let free_raw = take(tape, r);
        let ga_raw = take(tape, 1);
        let gw_raw = take(tape, 1);
        let modes_raw = match self.config.variant {
            MuVariant::Dnc => Some(take(tape, 3 * r)),
            MuVariant::Cbmu => None,
        };
        debug_assert_eq!(off, n_xi);

        let read_strengths_all = tape.oneplus(rs_raw);
        let read_strengths = (0..r).map(|i| tape.slice(read_strengths_all, i, 1)).collect();
        let write_strength = tape.oneplus(ws_raw);
        let erase = tape.sigmoid(erase_raw);
        let free_all = tape.sigmoid(free_raw);
        let free_gates = (0..r).map(|i| tape.slice(free_all, i, 1)).collect();
        let alloc_gate = tape.sigmoid(ga_raw);
        let write_gate = tape.sigmoid(gw_raw);
        let read_modes = modes_raw.map(|m| {
            let sm = tape.softmax_chunks(m, 3);
            (0..r).map(|i| tape.slice(sm, 3 * i, 3)).collect()
        });

        InterfaceSignals {
            read_keys,
            read_strengths,
            write_key,
            write_strength,
            erase,
            write_vec,
            free_gates,
            alloc_gate,
            write_gate,
            read_modes,
        }
    }

    /// One full memory step from already-split signals. Pipeline: retention
    /// and usage, allocation, write content weighting (against the previous
    /// memory), write weighting, erase/add update, linkage update (DNC),
    /// read content weightings (against the new memory), read weightings,
    /// read vectors. Returns the concatenated read vectors and the successor
    /// state.
    pub fn advance(
        &self,
        tape: &mut Tape,
        sig: &InterfaceSignals,
        state: &MemoryState,
    ) -> (TensorId, MemoryState) {
        let (_psi, usage) = retention_usage(
            tape,
            &sig.free_gates,
            &state.read_w,
            state.usage,
            state.write_w,
        );
        let alloc = tape.allocation(usage);
        let c_w = content_weighting(tape, state.memory, sig.write_key, sig.write_strength);
        let write_w = write_weighting(tape, sig.write_gate, sig.alloc_gate, alloc, c_w);
        let memory = memory_update(tape, state.memory, write_w, sig.erase, sig.write_vec);

        let (linkage, precedence) = match (state.linkage, state.precedence) {
            (Some(l), Some(p)) => {
                let (l2, p2) = linkage_update(tape, l, p, write_w);
                (Some(l2), Some(p2))
            }
            _ => (None, None),
        };

        let c_r: Vec<TensorId> = sig
            .read_keys
            .iter()
            .zip(&sig.read_strengths)
            .map(|(&k, &b)| content_weighting(tape, memory, k, b))
            .collect();

        let read_w = match (self.config.variant, &sig.read_modes, linkage) {
            (MuVariant::Dnc, Some(modes), Some(l)) => {
                read_weightings_dnc(tape, l, &state.read_w, &c_r, modes)
            }
            (MuVariant::Cbmu, _, _) => c_r.clone(),
            _ => unreachable!("DNC advance requires read modes and linkage"),
        };

        let (read_vecs, mu) = read_vectors(tape, memory, &read_w);

        (
            mu,
            MemoryState {
                memory,
                usage,
                write_w,
                read_w,
                read_vecs,
                linkage,
                precedence,
            },
        )
    }

    /// Project, split, advance.
    pub fn step(
        &self,
        tape: &mut Tape,
        h_in: TensorId,
        state: &MemoryState,
        bound: &Bound,
    ) -> (TensorId, MemoryState, InterfaceSignals) {
        let xi = self.project_interface(tape, h_in, bound);
        let sig = self.split_interface(tape, xi);
        let (mu, next) = self.advance(tape, &sig, state);
        (mu, next, sig)
    }
}

// ── addressing primitives ───────────────────────────────────────────

/// `softmax_j( beta * cos(M[j], key) )`.
pub fn content_weighting(tape: &mut Tape, memory: TensorId, key: TensorId, beta: TensorId) -> TensorId {
    let sims = tape.cosine_rows(memory, key, COSINE_EPS);
    let scaled = tape.scale_t(sims, beta);
    tape.softmax(scaled)
}

/// Memory-retention vector and updated usage:
/// `psi = prod_i (1 - f_i * w_r_prev_i)`,
/// `u = (u_prev + w_w_prev - u_prev o w_w_prev) o psi`.
pub fn retention_usage(
    tape: &mut Tape,
    free_gates: &[TensorId],
    read_w_prev: &[TensorId],
    usage_prev: TensorId,
    write_w_prev: TensorId,
) -> (TensorId, TensorId) {
    assert_eq!(free_gates.len(), read_w_prev.len());
    let mut psi: Option<TensorId> = None;
    for (&f, &w) in free_gates.iter().zip(read_w_prev) {
        let fw = tape.scale_t(w, f);
        let keep = tape.one_minus(fw);
        psi = Some(match psi {
            Some(p) => tape.mul(p, keep),
            None => keep,
        });
    }
    let psi = psi.expect("at least one read head");
    let add = tape.add(usage_prev, write_w_prev);
    let overlap = tape.mul(usage_prev, write_w_prev);
    let u_pre = tape.sub(add, overlap);
    let usage = tape.mul(u_pre, psi);
    (psi, usage)
}

/// `w_w = g_w * (g_a * a + (1 - g_a) * c_w)`.
pub fn write_weighting(
    tape: &mut Tape,
    write_gate: TensorId,
    alloc_gate: TensorId,
    alloc: TensorId,
    c_w: TensorId,
) -> TensorId {
    let by_alloc = tape.scale_t(alloc, alloc_gate);
    let inv_gate = tape.one_minus(alloc_gate);
    let by_content = tape.scale_t(c_w, inv_gate);
    let mix = tape.add(by_alloc, by_content);
    tape.scale_t(mix, write_gate)
}

/// `M' = M o (1 - w_w e^T) + w_w v^T`.
pub fn memory_update(
    tape: &mut Tape,
    memory: TensorId,
    write_w: TensorId,
    erase: TensorId,
    write_vec: TensorId,
) -> TensorId {
    let erase_outer = tape.outer(write_w, erase);
    let keep = tape.one_minus(erase_outer);
    let kept = tape.mul(memory, keep);
    let added = tape.outer(write_w, write_vec);
    tape.add(kept, added)
}

/// `L'[i,j] = (1 - w[i] - w[j]) L[i,j] + w[i] p[j]` off the diagonal,
/// `L'[i,i] = 0`; `p' = (1 - sum w) p + w`.
pub fn linkage_update(
    tape: &mut Tape,
    linkage: TensorId,
    precedence: TensorId,
    write_w: TensorId,
) -> (TensorId, TensorId) {
    let n = tape.shape(write_w)[0];
    let ones = tape.constant(vec![1.0; n], vec![n]);
    let w_rows = tape.outer(write_w, ones); // [i,j] = w[i]
    let w_cols = tape.broadcast_rows(write_w, n); // [i,j] = w[j]
    let w_sum = tape.add(w_rows, w_cols);
    let coeff = tape.one_minus(w_sum);
    let scaled = tape.mul(coeff, linkage);
    let new_links = tape.outer(write_w, precedence);
    let raw = tape.add(scaled, new_links);
    let mut diag_mask = vec![1.0; n * n];
    for i in 0..n {
        diag_mask[i * n + i] = 0.0;
    }
    let l_next = tape.mul_const(raw, diag_mask);

    let total = tape.sum(write_w);
    let retain = tape.one_minus(total);
    let p_scaled = tape.scale_t(precedence, retain);
    let p_next = tape.add(p_scaled, write_w);
    (l_next, p_next)
}

/// Per head: forward `L . w_prev`, backward `L^T . w_prev`, mixed by the
/// mode weights in `[backward, content, forward]` order.
pub fn read_weightings_dnc(
    tape: &mut Tape,
    linkage: TensorId,
    read_w_prev: &[TensorId],
    content: &[TensorId],
    modes: &[TensorId],
) -> Vec<TensorId> {
    let lt = tape.transpose(linkage);
    read_w_prev
        .iter()
        .zip(content)
        .zip(modes)
        .map(|((&w_prev, &c), &pi)| {
            let fwd = tape.matvec(linkage, w_prev);
            let bwd = tape.matvec(lt, w_prev);
            let pi_b = tape.slice(pi, 0, 1);
            let pi_c = tape.slice(pi, 1, 1);
            let pi_f = tape.slice(pi, 2, 1);
            let t_b = tape.scale_t(bwd, pi_b);
            let t_c = tape.scale_t(c, pi_c);
            let t_f = tape.scale_t(fwd, pi_f);
            let partial = tape.add(t_b, t_c);
            tape.add(partial, t_f)
        })
        .collect()
}

/// `r_i = M^T w_i`; returns the per-head vectors and their concatenation.
pub fn read_vectors(
    tape: &mut Tape,
    memory: TensorId,
    read_w: &[TensorId],
) -> (Vec<TensorId>, TensorId) {
    let vecs: Vec<TensorId> = read_w.iter().map(|&w| tape.vecmat(w, memory)).collect();
    let mu = tape.concat(&vecs);
    (vecs, mu)
}

#[cfg(test)]
mod tests;
