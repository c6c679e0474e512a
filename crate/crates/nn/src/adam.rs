use crate::error::{NnError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Optimizer state for bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments shaped like `params`, with the default betas and epsilon.
    pub fn new(params: &[Tensor<T>], learning_rate: f64) -> Self {
        let zeros: Vec<_> = params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update of `params` in place.
///
/// Gradients are validated up front, so a non-finite gradient leaves both
/// parameters and state untouched.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(NnError::Parameters(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[index].shape() {
            return Err(NnError::Mismatch {
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(NnError::NonFiniteGradient { index });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            let gi = gi.as_f64();
            let m_new = b1 * mi.as_f64() + (1.0 - b1) * gi;
            let v_new = b2 * vi.as_f64() + (1.0 - b2) * gi * gi;
            *mi = T::of_f64(m_new);
            *vi = T::of_f64(v_new);
            let m_hat = m_new / c1;
            let v_hat = v_new / c2;
            *w = T::of_f64(w.as_f64() - lr * m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::full(vec![1], v)
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = vec![scalar(0.3)];
        let mut state = AdamState::new(&params, 0.01);
        state.first_moment[0] = scalar(0.5);
        state.second_moment[0] = scalar(0.25);
        adam_step(&mut params, &[scalar(0.0)], &mut state).unwrap();
        // m = 0.45, v ~ 0.24975: the update is not zero because moments
        // carry history; with fresh moments it is.
        assert!(state.first_moment[0].data()[0] < 0.5);
        assert!(state.second_moment[0].data()[0] < 0.25);

        let mut fresh = vec![scalar(0.3)];
        let mut fresh_state = AdamState::new(&fresh, 0.01);
        adam_step(&mut fresh, &[scalar(0.0)], &mut fresh_state).unwrap();
        assert_eq!(fresh[0].data()[0], 0.3);
        assert_eq!(fresh_state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02] {
            let mut params = vec![scalar(1.0)];
            let mut state = AdamState::new(&params, 0.001);
            adam_step(&mut params, &[scalar(g)], &mut state).unwrap();
            let delta = params[0].data()[0] - 1.0;
            assert!((delta + 0.001 * f64::signum(g)).abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut params = vec![scalar(1.0), scalar(2.0)];
        let mut state = AdamState::new(&params, 0.1);
        let err = adam_step(&mut params, &[scalar(0.0), scalar(f64::NAN)], &mut state);
        assert_eq!(err, Err(NnError::NonFiniteGradient { index: 1 }));
        assert_eq!(state.step_count, 0);
        assert_eq!(params[1].data()[0], 2.0);
    }
}
