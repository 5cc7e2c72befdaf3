//! Differentiable computation for dense networks: a reverse-mode graph that
//! supports double backward, fully connected networks, Adam, and seeded
//! Gaussian sampling.

mod adam;
pub mod gradcheck;
mod graph;
mod net;
pub mod serial;

pub use adam::{AdamConfig, AdamState};
pub use graph::{block_softmax, Graph, Matrix, Var};
pub use net::{
    forward, input_gradient_norm, Activation, BoundParams, DenseNet, DenseNetSpec, ForwardPass,
    Layer, OutputHead, Parameters,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Deterministic RNG used throughout the crate.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// I.i.d. standard normal draws, filled row by row.
pub fn sample_standard_normal(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    standard_normal_with(rows, cols, &mut rng)
}

pub fn standard_normal_with<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}
