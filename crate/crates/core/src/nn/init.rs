//! Deterministic weight initialisers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(data, shape).expect("shape matches data")
}

/// He/Kaiming uniform for relu networks: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    uniform(rng, shape, (6.0 / fan_in.max(1) as f64).sqrt())
}

/// Glorot/Xavier uniform: b = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, shape, (6.0 / (fan_in + fan_out).max(1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bounds_and_determinism() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let x = kaiming_uniform(&mut a, &[8, 3, 3, 3], 27);
        assert_eq!(x, kaiming_uniform(&mut b, &[8, 3, 3, 3], 27));
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(x.data().iter().all(|v| v.abs() <= bound));
        let y = xavier_uniform(&mut a, &[64, 64], 64, 64);
        assert!(y.data().iter().all(|v| v.abs() <= (6.0f64 / 128.0).sqrt()));
    }
}
