//! Shared fixtures for the benchmarks.

use bundlenas_core::genome::{reference_genome, Activation, NetworkGenome, ReferenceVariant};
use bundlenas_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference backbone C with every width divided by `divisor`.
pub fn scaled_reference(divisor: usize) -> NetworkGenome {
    let mut g = reference_genome(ReferenceVariant::C, Activation::Relu6);
    g.fv1 = g.fv1.iter().map(|w| (w / divisor).max(1)).collect();
    g
}

/// Seeded uniform tensor in `[-1, 1)`.
pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}
