//! Forward builders and backward rules for every tape operation.

use super::{grad_buf, Node, Op, Tape, TensorId};
use crate::rng::SeedRng;

// ── numeric helpers ─────────────────────────────────────────────────

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow: `max(x, 0) + ln(1 + exp(-|x|))`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

/// Bernoulli mask with inverted-dropout scaling: each entry is
/// `1/keep_prob` with probability `keep_prob`, else `0`, so the masked
/// signal keeps its expectation. Deterministic given the rng state.
pub fn dropout_mask(len: usize, keep_prob: f64, rng: &mut SeedRng) -> Vec<f64> {
    assert!(
        keep_prob > 0.0 && keep_prob <= 1.0,
        "keep_prob must be in (0, 1], got {keep_prob}"
    );
    if keep_prob == 1.0 {
        return vec![1.0; len];
    }
    let scale = 1.0 / keep_prob;
    (0..len)
        .map(|_| if rng.uniform() < keep_prob { scale } else { 0.0 })
        .collect()
}

// ── forward builders ────────────────────────────────────────────────

impl Tape {
    fn binary_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> TensorId {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "elementwise op on mismatched shapes"
        );
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(data, shape, needs, op)
    }

    fn unary(&mut self, a: TensorId, op: Op, f: impl Fn(f64) -> f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(data, shape, needs, op)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_elementwise(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Multiply every element of `a` by the one-element tensor `s`.
    pub fn scale_t(&mut self, a: TensorId, s: TensorId) -> TensorId {
        assert_eq!(self.data(s).len(), 1, "scale_t needs a one-element scalar");
        let sv = self.data(s)[0];
        let data: Vec<f64> = self.data(a).iter().map(|&x| x * sv).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(s);
        self.push(data, shape, needs, Op::ScaleT { a, s })
    }

    pub fn add_c(&mut self, a: TensorId, c: f64) -> TensorId {
        self.unary(a, Op::AddC { a }, |x| x + c)
    }

    pub fn scale_c(&mut self, a: TensorId, c: f64) -> TensorId {
        self.unary(a, Op::ScaleC { a, c }, |x| x * c)
    }

    pub fn sub_from_c(&mut self, c: f64, a: TensorId) -> TensorId {
        self.unary(a, Op::SubFromC { a }, |x| c - x)
    }

    pub fn one_minus(&mut self, a: TensorId) -> TensorId {
        self.sub_from_c(1.0, a)
    }

    /// Elementwise product with a fixed buffer (dropout masks, diagonal
    /// masks). The buffer is a constant: no gradient flows into it.
    pub fn mul_const(&mut self, a: TensorId, mask: Vec<f64>) -> TensorId {
        assert_eq!(self.data(a).len(), mask.len(), "mask length mismatch");
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(data, shape, needs, Op::MulConst { a, mask })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// `1 + ln(1 + exp(x))`; output is everywhere at least 1. The standard
    /// strength nonlinearity.
    pub fn oneplus(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Oneplus(a), |x| 1.0 + softplus(x))
    }

    /// Softmax over the whole vector.
    pub fn softmax(&mut self, a: TensorId) -> TensorId {
        let chunk = self.data(a).len();
        self.softmax_chunks(a, chunk)
    }

    /// Softmax applied independently to consecutive chunks of `chunk`
    /// elements (rows of a matrix, per-head mode triples).
    pub fn softmax_chunks(&mut self, a: TensorId, chunk: usize) -> TensorId {
        let n = self.data(a).len();
        assert!(chunk >= 1 && n % chunk == 0, "chunk {chunk} must divide {n}");
        let mut data = vec![0.0; n];
        for (src, dst) in self.data(a).chunks(chunk).zip(data.chunks_mut(chunk)) {
            softmax_into(src, dst);
        }
        // borrow of self.data ends before push
        let src = data;
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(src, shape, needs, Op::Softmax { a, chunk })
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`,
    /// computed as `logsumexp(logits) - logits[target]`.
    pub fn nll_loss(&mut self, logits: TensorId, target: usize) -> TensorId {
        let z = self.data(logits);
        assert!(target < z.len(), "target {target} out of range {}", z.len());
        let max = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        let needs = self.needs(logits);
        self.push(vec![loss], vec![1], needs, Op::NllLoss { logits, target })
    }

    /// `[r, c] · [c] -> [r]`.
    pub fn matvec(&mut self, m: TensorId, v: TensorId) -> TensorId {
        let (r, c) = self.mat_dims(m);
        assert_eq!(self.data(v).len(), c, "matvec dimension mismatch");
        let md = self.data(m);
        let vd = self.data(v);
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &md[i * c..(i + 1) * c];
            out[i] = row.iter().zip(vd).map(|(&a, &b)| a * b).sum();
        }
        let needs = self.needs(m) || self.needs(v);
        self.push(out, vec![r], needs, Op::MatVec { m, v })
    }

    /// `v^T M` for `v: [r]`, `M: [r, c] -> [c]`.
    pub fn vecmat(&mut self, v: TensorId, m: TensorId) -> TensorId {
        let (r, c) = self.mat_dims(m);
        assert_eq!(self.data(v).len(), r, "vecmat dimension mismatch");
        let md = self.data(m);
        let vd = self.data(v);
        let mut out = vec![0.0; c];
        for i in 0..r {
            let vi = vd[i];
            if vi != 0.0 {
                for j in 0..c {
                    out[j] += vi * md[i * c + j];
                }
            }
        }
        let needs = self.needs(m) || self.needs(v);
        self.push(out, vec![c], needs, Op::VecMat { v, m })
    }

    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = self.mat_dims(a);
        let (k2, n) = self.mat_dims(b);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                if av != 0.0 {
                    for j in 0..n {
                        out[i * n + j] += av * bd[p * n + j];
                    }
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, vec![m, n], needs, Op::MatMul { a, b })
    }

    /// Outer product `[r] x [c] -> [r, c]`.
    pub fn outer(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let r = self.vec_len(a);
        let c = self.vec_len(b);
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = ad[i] * bd[j];
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, vec![r, c], needs, Op::Outer { a, b })
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.mat_dims(a);
        let ad = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ad[i * c + j];
            }
        }
        let needs = self.needs(a);
        self.push(out, vec![c, r], needs, Op::Transpose(a))
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let n = self.vec_len(a);
        assert_eq!(n, self.vec_len(b), "dot length mismatch");
        let s: f64 = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).sum();
        let needs = self.needs(a) || self.needs(b);
        self.push(vec![s], vec![1], needs, Op::Dot(a, b))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.data(a).iter().sum();
        let needs = self.needs(a);
        self.push(vec![s], vec![1], needs, Op::Sum(a))
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.data(a).len();
        let s: f64 = self.data(a).iter().sum::<f64>() / n as f64;
        let needs = self.needs(a);
        self.push(vec![s], vec![1], needs, Op::Mean(a))
    }

    /// Concatenate vectors in order.
    pub fn concat(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let mut data = Vec::new();
        let mut needs = false;
        for &p in parts {
            data.extend_from_slice(self.data(p));
            needs |= self.needs(p);
        }
        let len = data.len();
        self.push(data, vec![len], needs, Op::Concat { parts: parts.to_vec() })
    }

    /// Contiguous sub-vector `[offset, offset + len)`.
    pub fn slice(&mut self, a: TensorId, offset: usize, len: usize) -> TensorId {
        let n = self.data(a).len();
        assert!(offset + len <= n, "slice {offset}+{len} out of range {n}");
        let data = self.data(a)[offset..offset + len].to_vec();
        let needs = self.needs(a);
        self.push(data, vec![len], needs, Op::Slice { a, offset, len })
    }

    /// Tile vector `v` into `rows` identical matrix rows (broadcast over the
    /// leading axis).
    pub fn broadcast_rows(&mut self, v: TensorId, rows: usize) -> TensorId {
        let c = self.vec_len(v);
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(self.data(v));
        }
        let needs = self.needs(v);
        self.push(data, vec![rows, c], needs, Op::BroadcastRows { v, rows })
    }

    /// `gain * (x - mean) / sqrt(var + eps) + bias` with the biased
    /// (population) variance over the whole vector.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> TensorId {
        let n = self.vec_len(x);
        assert_eq!(n, self.vec_len(gain), "layer_norm gain length mismatch");
        assert_eq!(n, self.vec_len(bias), "layer_norm bias length mismatch");
        let xd = self.data(x);
        let mean = xd.iter().sum::<f64>() / n as f64;
        let var = xd.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let gd = self.data(gain);
        let bd = self.data(bias);
        let data: Vec<f64> = (0..n)
            .map(|i| gd[i] * (xd[i] - mean) * inv_std + bd[i])
            .collect();
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(data, vec![n], needs, Op::LayerNorm { x, gain, bias, eps })
    }

    /// Cosine similarity between each row of `m` and `k`:
    /// `dot(row, k) / (|row| * |k| + eps)`.
    pub fn cosine_rows(&mut self, m: TensorId, k: TensorId, eps: f64) -> TensorId {
        let (r, c) = self.mat_dims(m);
        assert_eq!(c, self.vec_len(k), "cosine key width mismatch");
        assert!(eps > 0.0, "cosine eps must be positive");
        let md = self.data(m);
        let kd = self.data(k);
        let nk = kd.iter().map(|&v| v * v).sum::<f64>().sqrt();
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &md[i * c..(i + 1) * c];
            let s: f64 = row.iter().zip(kd).map(|(&a, &b)| a * b).sum();
            let nm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
            out[i] = s / (nm * nk + eps);
        }
        let needs = self.needs(m) || self.needs(k);
        self.push(out, vec![r], needs, Op::CosineRows { m, k, eps })
    }

    /// Allocation weighting from a usage vector: with `phi` the indices of
    /// `u` sorted ascending (ties by lower index first),
    /// `a[phi_j] = (1 - u[phi_j]) * prod_{l<j} u[phi_l]`.
    pub fn allocation(&mut self, u: TensorId) -> TensorId {
        let n = self.vec_len(u);
        let ud = self.data(u);
        let phi = sorted_indices(ud);
        let mut out = vec![0.0; n];
        let mut prod = 1.0;
        for &idx in &phi {
            out[idx] = (1.0 - ud[idx]) * prod;
            prod *= ud[idx];
        }
        let needs = self.needs(u);
        self.push(out, vec![n], needs, Op::Allocation { u })
    }

    fn mat_dims(&self, id: TensorId) -> (usize, usize) {
        let s = self.shape(id);
        assert_eq!(s.len(), 2, "expected a matrix, got shape {s:?}");
        (s[0], s[1])
    }

    fn vec_len(&self, id: TensorId) -> usize {
        let s = self.shape(id);
        assert_eq!(s.len(), 1, "expected a vector, got shape {s:?}");
        s[0]
    }
}

/// Stable ascending argsort, ties broken by lower index.
fn sorted_indices(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

// ── backward rules ──────────────────────────────────────────────────

fn add_into(nodes: &mut [Node], id: TensorId, contrib: &[f64]) {
    let node = &mut nodes[id];
    if !node.needs_grad {
        return;
    }
    let g = grad_buf(node);
    debug_assert_eq!(g.len(), contrib.len());
    for (gi, &ci) in g.iter_mut().zip(contrib) {
        *gi += ci;
    }
}

fn add_into_range(nodes: &mut [Node], id: TensorId, offset: usize, contrib: &[f64]) {
    let node = &mut nodes[id];
    if !node.needs_grad {
        return;
    }
    let g = grad_buf(node);
    for (gi, &ci) in g[offset..offset + contrib.len()].iter_mut().zip(contrib) {
        *gi += ci;
    }
}

fn add_scalar_into(nodes: &mut [Node], id: TensorId, contrib: f64) {
    add_into(nodes, id, &[contrib]);
}

pub(crate) fn propagate(node: &Node, g: &[f64], inputs: &mut [Node]) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_into(inputs, *a, g);
            add_into(inputs, *b, g);
        }
        Op::Sub(a, b) => {
            add_into(inputs, *a, g);
            let neg: Vec<f64> = g.iter().map(|&v| -v).collect();
            add_into(inputs, *b, &neg);
        }
        Op::Mul(a, b) => {
            if inputs[*a].needs_grad {
                let c: Vec<f64> = g.iter().zip(&inputs[*b].data).map(|(&gv, &bv)| gv * bv).collect();
                add_into(inputs, *a, &c);
            }
            if inputs[*b].needs_grad {
                let c: Vec<f64> = g.iter().zip(&inputs[*a].data).map(|(&gv, &av)| gv * av).collect();
                add_into(inputs, *b, &c);
            }
        }
        Op::Div(a, b) => {
            if inputs[*a].needs_grad {
                let c: Vec<f64> = g.iter().zip(&inputs[*b].data).map(|(&gv, &bv)| gv / bv).collect();
                add_into(inputs, *a, &c);
            }
            if inputs[*b].needs_grad {
                let c: Vec<f64> = g
                    .iter()
                    .zip(&node.data)
                    .zip(&inputs[*b].data)
                    .map(|((&gv, &y), &bv)| -gv * y / bv)
                    .collect();
                add_into(inputs, *b, &c);
            }
        }
        Op::ScaleT { a, s } => {
            let sv = inputs[*s].data[0];
            if inputs[*a].needs_grad {
                let c: Vec<f64> = g.iter().map(|&gv| gv * sv).collect();
                add_into(inputs, *a, &c);
            }
            if inputs[*s].needs_grad {
                let c: f64 = g.iter().zip(&inputs[*a].data).map(|(&gv, &av)| gv * av).sum();
                add_scalar_into(inputs, *s, c);
            }
        }
        Op::AddC { a } => add_into(inputs, *a, g),
        Op::ScaleC { a, c } => {
            let contrib: Vec<f64> = g.iter().map(|&gv| gv * c).collect();
            add_into(inputs, *a, &contrib);
        }
        Op::SubFromC { a } => {
            let contrib: Vec<f64> = g.iter().map(|&gv| -gv).collect();
            add_into(inputs, *a, &contrib);
        }
        Op::MulConst { a, mask } => {
            let contrib: Vec<f64> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
            add_into(inputs, *a, &contrib);
        }
        Op::Sigmoid(a) => {
            let c: Vec<f64> = g
                .iter()
                .zip(&node.data)
                .map(|(&gv, &y)| gv * y * (1.0 - y))
                .collect();
            add_into(inputs, *a, &c);
        }
        Op::Tanh(a) => {
            let c: Vec<f64> = g
                .iter()
                .zip(&node.data)
                .map(|(&gv, &y)| gv * (1.0 - y * y))
                .collect();
            add_into(inputs, *a, &c);
        }
        Op::Exp(a) => {
            let c: Vec<f64> = g.iter().zip(&node.data).map(|(&gv, &y)| gv * y).collect();
            add_into(inputs, *a, &c);
        }
        Op::Ln(a) => {
            let c: Vec<f64> = g
                .iter()
                .zip(&inputs[*a].data)
                .map(|(&gv, &x)| gv / x)
                .collect();
            add_into(inputs, *a, &c);
        }
        Op::Sqrt(a) => {
            let c: Vec<f64> = g
                .iter()
                .zip(&node.data)
                .map(|(&gv, &y)| gv / (2.0 * y))
                .collect();
            add_into(inputs, *a, &c);
        }
        Op::Oneplus(a) => {
            let c: Vec<f64> = g
                .iter()
                .zip(&inputs[*a].data)
                .map(|(&gv, &x)| gv * sigmoid(x))
                .collect();
            add_into(inputs, *a, &c);
        }
        Op::Softmax { a, chunk } => {
            let mut contrib = vec![0.0; g.len()];
            for ((gc, yc), cc) in g
                .chunks(*chunk)
                .zip(node.data.chunks(*chunk))
                .zip(contrib.chunks_mut(*chunk))
            {
                let s: f64 = gc.iter().zip(yc).map(|(&gv, &yv)| gv * yv).sum();
                for ((c, &gv), &yv) in cc.iter_mut().zip(gc).zip(yc) {
                    *c = yv * (gv - s);
                }
            }
            add_into(inputs, *a, &contrib);
        }
        Op::NllLoss { logits, target } => {
            let g0 = g[0];
            let z = &inputs[*logits].data;
            let mut sm = vec![0.0; z.len()];
            softmax_into(z, &mut sm);
            sm[*target] -= 1.0;
            for v in sm.iter_mut() {
                *v *= g0;
            }
            add_into(inputs, *logits, &sm);
        }
        Op::MatVec { m, v } => {
            let (r, c) = (inputs[*m].shape[0], inputs[*m].shape[1]);
            if inputs[*m].needs_grad {
                let vd = &inputs[*v].data;
                let mut contrib = vec![0.0; r * c];
                for i in 0..r {
                    let gi = g[i];
                    if gi != 0.0 {
                        for j in 0..c {
                            contrib[i * c + j] = gi * vd[j];
                        }
                    }
                }
                add_into(inputs, *m, &contrib);
            }
            if inputs[*v].needs_grad {
                let md = &inputs[*m].data;
                let mut contrib = vec![0.0; c];
                for i in 0..r {
                    let gi = g[i];
                    if gi != 0.0 {
                        for j in 0..c {
                            contrib[j] += gi * md[i * c + j];
                        }
                    }
                }
                add_into(inputs, *v, &contrib);
            }
        }
        Op::VecMat { v, m } => {
            let (r, c) = (inputs[*m].shape[0], inputs[*m].shape[1]);
            if inputs[*v].needs_grad {
                let md = &inputs[*m].data;
                let mut contrib = vec![0.0; r];
                for i in 0..r {
                    contrib[i] = md[i * c..(i + 1) * c]
                        .iter()
                        .zip(g)
                        .map(|(&mv, &gv)| mv * gv)
                        .sum();
                }
                add_into(inputs, *v, &contrib);
            }
            if inputs[*m].needs_grad {
                let vd = &inputs[*v].data;
                let mut contrib = vec![0.0; r * c];
                for i in 0..r {
                    let vi = vd[i];
                    if vi != 0.0 {
                        for j in 0..c {
                            contrib[i * c + j] = vi * g[j];
                        }
                    }
                }
                add_into(inputs, *m, &contrib);
            }
        }
        Op::MatMul { a, b } => {
            let (m, k) = (inputs[*a].shape[0], inputs[*a].shape[1]);
            let n = inputs[*b].shape[1];
            if inputs[*a].needs_grad {
                // dA = G B^T
                let bd = &inputs[*b].data;
                let mut contrib = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bd[p * n + j];
                        }
                        contrib[i * k + p] = s;
                    }
                }
                add_into(inputs, *a, &contrib);
            }
            if inputs[*b].needs_grad {
                // dB = A^T G
                let ad = &inputs[*a].data;
                let mut contrib = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let av = ad[i * k + p];
                        if av != 0.0 {
                            for j in 0..n {
                                contrib[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                }
                add_into(inputs, *b, &contrib);
            }
        }
        Op::Outer { a, b } => {
            let r = inputs[*a].data.len();
            let c = inputs[*b].data.len();
            if inputs[*a].needs_grad {
                let bd = &inputs[*b].data;
                let mut contrib = vec![0.0; r];
                for i in 0..r {
                    contrib[i] = g[i * c..(i + 1) * c]
                        .iter()
                        .zip(bd)
                        .map(|(&gv, &bv)| gv * bv)
                        .sum();
                }
                add_into(inputs, *a, &contrib);
            }
            if inputs[*b].needs_grad {
                let ad = &inputs[*a].data;
                let mut contrib = vec![0.0; c];
                for i in 0..r {
                    let av = ad[i];
                    if av != 0.0 {
                        for j in 0..c {
                            contrib[j] += av * g[i * c + j];
                        }
                    }
                }
                add_into(inputs, *b, &contrib);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (inputs[*a].shape[0], inputs[*a].shape[1]);
            let mut contrib = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    contrib[i * c + j] = g[j * r + i];
                }
            }
            add_into(inputs, *a, &contrib);
        }
        Op::Dot(a, b) => {
            let g0 = g[0];
            if inputs[*a].needs_grad {
                let c: Vec<f64> = inputs[*b].data.iter().map(|&bv| g0 * bv).collect();
                add_into(inputs, *a, &c);
            }
            if inputs[*b].needs_grad {
                let c: Vec<f64> = inputs[*a].data.iter().map(|&av| g0 * av).collect();
                add_into(inputs, *b, &c);
            }
        }
        Op::Sum(a) => {
            let g0 = g[0];
            let contrib = vec![g0; inputs[*a].data.len()];
            add_into(inputs, *a, &contrib);
        }
        Op::Mean(a) => {
            let n = inputs[*a].data.len();
            let contrib = vec![g[0] / n as f64; n];
            add_into(inputs, *a, &contrib);
        }
        Op::Concat { parts } => {
            let mut offset = 0;
            for &p in parts {
                let len = inputs[p].data.len();
                if inputs[p].needs_grad {
                    let contrib = &g[offset..offset + len];
                    add_into(inputs, p, contrib);
                }
                offset += len;
            }
        }
        Op::Slice { a, offset, len } => {
            debug_assert_eq!(g.len(), *len);
            add_into_range(inputs, *a, *offset, g);
        }
        Op::BroadcastRows { v, rows } => {
            let c = inputs[*v].data.len();
            let mut contrib = vec![0.0; c];
            for r in 0..*rows {
                for j in 0..c {
                    contrib[j] += g[r * c + j];
                }
            }
            add_into(inputs, *v, &contrib);
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let xd = &inputs[*x].data;
            let n = xd.len();
            let nf = n as f64;
            let mean = xd.iter().sum::<f64>() / nf;
            let var = xd.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
            let inv_std = 1.0 / (var + eps).sqrt();
            let xhat: Vec<f64> = xd.iter().map(|&v| (v - mean) * inv_std).collect();
            if inputs[*bias].needs_grad {
                add_into(inputs, *bias, g);
            }
            if inputs[*gain].needs_grad {
                let c: Vec<f64> = g.iter().zip(&xhat).map(|(&gv, &h)| gv * h).collect();
                add_into(inputs, *gain, &c);
            }
            if inputs[*x].needs_grad {
                let gaind = &inputs[*gain].data;
                let gg: Vec<f64> = g.iter().zip(gaind).map(|(&gv, &ga)| gv * ga).collect();
                let mean_gg = gg.iter().sum::<f64>() / nf;
                let mean_gg_xhat = gg.iter().zip(&xhat).map(|(&a, &h)| a * h).sum::<f64>() / nf;
                let c: Vec<f64> = gg
                    .iter()
                    .zip(&xhat)
                    .map(|(&a, &h)| (a - mean_gg - h * mean_gg_xhat) * inv_std)
                    .collect();
                add_into(inputs, *x, &c);
            }
        }
        Op::CosineRows { m, k, eps } => {
            let (r, c) = (inputs[*m].shape[0], inputs[*m].shape[1]);
            let md = &inputs[*m].data;
            let kd = &inputs[*k].data;
            let nk = kd.iter().map(|&v| v * v).sum::<f64>().sqrt();
            let mut m_contrib = vec![0.0; r * c];
            let mut k_contrib = vec![0.0; c];
            for i in 0..r {
                let gi = g[i];
                if gi == 0.0 {
                    continue;
                }
                let row = &md[i * c..(i + 1) * c];
                let s: f64 = row.iter().zip(kd).map(|(&a, &b)| a * b).sum();
                let nm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
                let d = nm * nk + eps;
                // d cos / d row = k/d - s*nk*row/(nm*d^2); the second term
                // vanishes as row -> 0 (s -> 0), so guard the division.
                let row_coef = if nm > 0.0 { s * nk / (nm * d * d) } else { 0.0 };
                for j in 0..c {
                    m_contrib[i * c + j] += gi * (kd[j] / d - row_coef * row[j]);
                }
                let k_coef = if nk > 0.0 { s * nm / (nk * d * d) } else { 0.0 };
                for j in 0..c {
                    k_contrib[j] += gi * (row[j] / d - k_coef * kd[j]);
                }
            }
            add_into(inputs, *m, &m_contrib);
            add_into(inputs, *k, &k_contrib);
        }
        Op::Allocation { u } => {
            let ud = &inputs[*u].data;
            let n = ud.len();
            let phi = sorted_indices(ud);
            // prefix[j] = prod_{l<j} u[phi_l]
            let mut prefix = vec![1.0; n + 1];
            for j in 0..n {
                prefix[j + 1] = prefix[j] * ud[phi[j]];
            }
            let mut contrib = vec![0.0; n];
            for l in 0..n {
                // direct term of a[phi_l]
                let mut acc = -g[phi[l]] * prefix[l];
                // terms of a[phi_j] for j > l through the running product,
                // skipping factor u[phi_l]
                let mut q = prefix[l];
                for j in (l + 1)..n {
                    acc += g[phi[j]] * (1.0 - ud[phi[j]]) * q;
                    q *= ud[phi[j]];
                }
                contrib[phi[l]] = acc;
            }
            add_into(inputs, *u, &contrib);
        }
    }
}
