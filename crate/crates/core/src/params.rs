//! Named, flat parameter storage shared by the model, the optimizer, the
//! checkpoint format and the finite-difference checker.
//!
//! A [`ParamSet`] owns every trainable array as a `(name, shape, data)`
//! triple in registration order. Each forward pass binds the whole set onto a
//! fresh tape with [`ParamSet::bind`]; after `backward` the per-block
//! gradients are read back with [`ParamSet::grads`]. Registration order is
//! the canonical order everywhere (optimizer slots, checkpoints, reports), so
//! it must be deterministic.

use crate::rng::SeedRng;
use crate::tensor::{Tape, TensorId};

/// Index of a parameter block within its [`ParamSet`].
pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a block with explicit contents.
    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "parameter {name}: data length {} does not match shape {shape:?}",
            data.len()
        );
        assert!(
            self.by_name(name).is_none(),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name: name.to_string(),
            shape,
            data,
        });
        self.params.len() - 1
    }

    /// Register a `[rows, cols]` weight drawn from
    /// `U(-sqrt(6/(rows+cols)), sqrt(6/(rows+cols)))`.
    pub fn glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut SeedRng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_sym(bound)).collect();
        self.add(name, vec![rows, cols], data)
    }

    /// Register a vector filled with one value (biases, gains).
    pub fn filled(&mut self, name: &str, len: usize, value: f64) -> ParamId {
        self.add(name, vec![len], vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters across all blocks.
    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Create one gradient-collecting leaf per block, in registration order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|p| tape.leaf(p.data.clone(), p.shape.clone()))
            .collect();
        Bound { ids }
    }

    /// Per-block gradients after a backward pass; blocks the loss never
    /// touched come back as zeros.
    pub fn grads(&self, tape: &Tape, bound: &Bound) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .zip(&bound.ids)
            .map(|(p, &id)| match tape.grad(id) {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.data.len()],
            })
            .collect()
    }
}

/// Tape locations of one bound [`ParamSet`], aligned with block ids.
pub struct Bound {
    ids: Vec<TensorId>,
}

impl Bound {
    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bound_scales_with_fan() {
        let mut rng = SeedRng::new(3);
        let mut ps = ParamSet::new();
        let id = ps.glorot("w", 20, 30, &mut rng);
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(ps.get(id).data.iter().all(|v| v.abs() <= bound));
        // not degenerate: values spread over the interval
        let spread = ps.get(id).data.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(spread > 0.5 * bound);
    }

    #[test]
    fn bind_and_grads_roundtrip() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", vec![2], vec![3.0, -1.0]);
        let b = ps.add("b", vec![1], vec![0.5]);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape);
        let prod = tape.mul(bound.id(w), bound.id(w));
        let s = tape.sum(prod);
        let loss = tape.add(s, bound.id(b));
        tape.backward(loss);
        let grads = ps.grads(&tape, &bound);
        assert_eq!(grads[0], vec![6.0, -2.0]);
        assert_eq!(grads[1], vec![1.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.add("w", vec![1], vec![0.0]);
        ps.add("w", vec![1], vec![0.0]);
    }
}
