//! Shared builders for the benchmark targets.

use memcomputer_core::controller::ControllerConfig;
use memcomputer_core::memory::{MuConfig, MuVariant};
use memcomputer_core::{Architecture, Model, ModelConfig, SeedRng};

/// The copy-scale model used by the step benchmarks.
pub fn bench_model(variant: MuVariant) -> Model {
    let cfg = ModelConfig {
        input_size: 8,
        output_size: 8,
        architecture: Architecture::Unidirectional,
        controller: ControllerConfig::lstm(64),
        backward_controller: None,
        mu: MuConfig::new(16, 16, 2, variant),
        keep_prob: 1.0,
        output_bias: true,
    };
    Model::new(cfg, &mut SeedRng::new(17)).expect("valid benchmark config")
}

pub fn random_rows(rng: &mut SeedRng, steps: usize, width: usize) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|_| (0..width).map(|_| rng.uniform_sym(0.8)).collect())
        .collect()
}
