use rand::Rng;

use crate::error::{NnError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Inverted-dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    rate: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidRate(rate));
    }
    let n: usize = shape.iter().product();
    if rate == 0.0 {
        return Ok(Tensor::full(shape.to_vec(), T::one()));
    }
    let keep = T::of_f64(1.0 / (1.0 - rate));
    let data = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Tensor<f32> = dropout_mask(&[4, 5], 0.0, &mut rng).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_rate_has_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: Tensor<f64> = dropout_mask(&[100_000], 0.5, &mut rng).unwrap();
        let mean = m.data().iter().sum::<f64>() / m.len() as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn same_seed_same_mask() {
        let a: Tensor<f32> =
            dropout_mask(&[64], 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b: Tensor<f32> =
            dropout_mask(&[64], 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_mask::<f32, _>(&[2], 1.0, &mut rng).is_err());
        assert!(dropout_mask::<f32, _>(&[2], -0.1, &mut rng).is_err());
    }
}
