//! Deterministic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srd_core::models::{build_generator, GeneratorSpec, Model};
use srd_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform `[-1, 1)` tensor.
pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| r.gen_range(-1.0..1.0)).collect(), shape).expect("shape matches data")
}

pub fn generator(spec: GeneratorSpec, seed: u64) -> Model {
    build_generator(spec, &mut rng(seed)).expect("valid bench spec")
}
