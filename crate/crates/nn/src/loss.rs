use crate::error::{NnError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Clamp applied to predictions before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

/// Mean binary cross-entropy over every element, with its gradient with
/// respect to the (clamped) predictions.
pub fn bce_loss<T: Real>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if predictions.shape() != targets.shape() {
        return Err(NnError::Mismatch {
            left: predictions.shape().to_vec(),
            right: targets.shape().to_vec(),
        });
    }
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &t) in predictions.data().iter().zip(targets.data()) {
        let p = p.as_f64().clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        let t = t.as_f64();
        total += t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        grad.push(T::of_f64((p - t) / (p * (1.0 - p)) / n));
    }
    Ok((
        -total / n,
        Tensor::new(predictions.shape().to_vec(), grad)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability_costs_ln2() {
        let p = Tensor::<f64>::full(vec![1], 0.5);
        let t = Tensor::<f64>::full(vec![1], 1.0);
        let (loss, _) = bce_loss(&p, &t).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let p = Tensor::<f64>::from_f64(vec![4], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let (loss, _) = bce_loss(&p, &p).unwrap();
        assert!(loss >= 0.0);
        assert!(loss <= -(1.0 - BCE_EPSILON).ln() + 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = Tensor::<f32>::zeros(vec![2]);
        let t = Tensor::<f32>::zeros(vec![3]);
        assert!(bce_loss(&p, &t).is_err());
    }
}
