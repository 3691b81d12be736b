//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every tensor created during one forward pass. Operations
//! append a node holding the result plus the recipe to push gradients back to
//! its inputs; [`Tape::backward`] replays the nodes in reverse. Inputs always
//! have a smaller node index than their outputs, so one reverse sweep is a
//! valid topological order.
//!
//! Tensors are rank 0..=2 conceptually but always carry an explicit shape:
//! `[1]` scalars, `[n]` vectors, `[rows, cols]` row-major matrices. Data is
//! immutable after creation; gradients accumulate additively across fan-out.

mod ops;

pub use ops::dropout_mask;
#[cfg(test)]
pub(crate) use ops::sigmoid;

/// Index of a tensor on its tape.
pub type TensorId = usize;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    /// Elementwise product with a one-element tensor.
    ScaleT { a: TensorId, s: TensorId },
    AddC { a: TensorId },
    ScaleC { a: TensorId, c: f64 },
    /// `c - a` elementwise.
    SubFromC { a: TensorId },
    /// Elementwise product with a constant (non-differentiated) buffer.
    MulConst { a: TensorId, mask: Vec<f64> },
    Sigmoid(TensorId),
    Tanh(TensorId),
    Exp(TensorId),
    Ln(TensorId),
    Sqrt(TensorId),
    /// `1 + softplus(x)`.
    Oneplus(TensorId),
    /// Softmax over consecutive chunks of `chunk` elements.
    Softmax { a: TensorId, chunk: usize },
    /// `logsumexp(logits) - logits[target]`.
    NllLoss { logits: TensorId, target: usize },
    MatVec { m: TensorId, v: TensorId },
    /// Row vector times matrix: `v^T M`.
    VecMat { v: TensorId, m: TensorId },
    MatMul { a: TensorId, b: TensorId },
    Outer { a: TensorId, b: TensorId },
    Transpose(TensorId),
    Dot(TensorId, TensorId),
    Sum(TensorId),
    Mean(TensorId),
    Concat { parts: Vec<TensorId> },
    Slice { a: TensorId, offset: usize, len: usize },
    /// Tile a vector into `rows` identical matrix rows.
    BroadcastRows { v: TensorId, rows: usize },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
    /// Cosine similarity between each matrix row and a key vector.
    CosineRows { m: TensorId, k: TensorId, eps: f64 },
    /// Least-used-first allocation weighting; the sort permutation is
    /// treated as a constant during differentiation.
    Allocation { u: TensorId },
}

#[derive(Debug)]
struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Records a computation graph and runs reverse-mode differentiation over it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that participates in differentiation (a parameter or anything
    /// that should collect gradient).
    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>) -> TensorId {
        self.input(data, shape, true)
    }

    /// Input treated as fixed data: no gradient is stored for it.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> TensorId {
        self.input(data, shape, false)
    }

    fn input(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(data, shape, requires_grad, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.constant(vec![value], vec![1])
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> TensorId {
        let n = shape.iter().product();
        self.constant(vec![0.0; n], shape)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id].shape
    }

    /// Gradient of the last `backward` call, if this tensor was on a
    /// differentiated path.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    pub fn value_scalar(&self, id: TensorId) -> f64 {
        assert_eq!(self.nodes[id].data.len(), 1, "tensor {id} is not a scalar");
        self.nodes[id].data[0]
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, needs_grad: bool, op: Op) -> TensorId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
            needs_grad,
            op,
        });
        id
    }

    pub(crate) fn needs(&self, id: TensorId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Populate `grad` on every `requires_grad` tensor reachable from a
    /// scalar loss. Seeds the loss gradient with `1.0`; repeated calls
    /// accumulate.
    pub fn backward(&mut self, loss: TensorId) {
        assert_eq!(
            self.nodes[loss].data.len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.nodes[loss].shape
        );
        grad_buf(&mut self.nodes[loss])[0] += 1.0;
        for i in (0..=loss).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let (inputs, out) = self.nodes.split_at_mut(i);
            let node = &out[0];
            let g = node.grad.as_ref().expect("grad present");
            ops::propagate(node, g, inputs);
        }
    }
}

fn grad_buf(node: &mut Node) -> &mut Vec<f64> {
    let n = node.data.len();
    node.grad.get_or_insert_with(|| vec![0.0; n])
}

#[cfg(test)]
mod tests;
