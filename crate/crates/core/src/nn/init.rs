//! Seeded weight initialization.
//!
//! Conv and dense weights draw uniformly from ±sqrt(6/(fan_in+fan_out));
//! biases stay zero. All draws come from a caller-provided seeded generator
//! in a fixed order, so initialization is reproducible.

use super::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed (splitmix64 step).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fill a tensor uniformly in ±bound.
pub fn init_uniform(t: &mut Tensor, bound: f64, rng: &mut impl Rng) {
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform init for a conv weight of shape `[k, C_in, C_out]`.
pub fn init_conv_weight(t: &mut Tensor, rng: &mut impl Rng) {
    let shape = t.shape().to_vec();
    assert_eq!(shape.len(), 3);
    let (k, c_in, c_out) = (shape[0], shape[1], shape[2]);
    init_uniform(t, glorot_bound(k * c_in, k * c_out), rng);
}

/// Glorot-uniform init for a dense weight of shape `[F_in, F_out]`.
pub fn init_dense_weight(t: &mut Tensor, rng: &mut impl Rng) {
    let shape = t.shape().to_vec();
    assert_eq!(shape.len(), 2);
    init_uniform(t, glorot_bound(shape[0], shape[1]), rng);
}
