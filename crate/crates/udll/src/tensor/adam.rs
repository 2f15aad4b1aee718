//! Bias-corrected Adam with per-parameter state.

use super::Tensor;
use crate::error::UdllError;
use crate::Result;

/// A trainable value paired with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Tensor,
    pub gradient: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let gradient = Tensor::zeros(value.shape());
        Parameter { value, gradient }
    }

    pub fn zero_grad(&mut self) {
        self.gradient.data_mut().fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Optimizer state for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    first_moment: Tensor,
    second_moment: Tensor,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shape: &[usize], learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        AdamState {
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update in place. `label` names the parameter in
/// diagnostics.
pub fn adam_step(label: &str, param: &mut Parameter, state: &mut AdamState) -> Result<()> {
    if param.value.shape() != param.gradient.shape()
        || state.first_moment.shape() != param.value.shape()
    {
        return Err(UdllError::Shape {
            op: "adam_step",
            detail: format!(
                "{label}: value {:?}, gradient {:?}, moments {:?}",
                param.value.shape(),
                param.gradient.shape(),
                state.first_moment.shape()
            ),
        });
    }
    if !param.gradient.all_finite() {
        return Err(UdllError::NonFinite(format!("gradient of {label}")));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    let vals = param.value.data_mut();
    let grads = param.gradient.data();
    let ms = state.first_moment.data_mut();
    let vs = state.second_moment.data_mut();
    for i in 0..vals.len() {
        let g = grads[i];
        ms[i] = b1 * ms[i] + (1.0 - b1) * g;
        vs[i] = b2 * vs[i] + (1.0 - b2) * g * g;
        let m_hat = ms[i] / bc1;
        let v_hat = vs[i] / bc2;
        vals[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_noop_on_value() {
        let mut p = Parameter::new(Tensor::filled(&[3], 1.5));
        let mut s = AdamState::new(&[3], 0.01);
        for _ in 0..5 {
            adam_step("p", &mut p, &mut s).unwrap();
        }
        assert_eq!(s.step_count(), 5);
        assert!(p.value.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with m_hat = v_hat = 1 the first update is exactly -lr/(1+eps)
        let mut p = Parameter::new(Tensor::zeros(&[1]));
        p.gradient.data_mut()[0] = 1.0;
        let mut s = AdamState::new(&[1], 0.001);
        adam_step("p", &mut p, &mut s).unwrap();
        assert!((p.value.data()[0] - (-0.001)).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = Parameter::new(Tensor::zeros(&[2]));
        p.gradient.data_mut()[1] = f64::NAN;
        let mut s = AdamState::new(&[2], 0.001);
        let err = adam_step("encoder.0.kernel", &mut p, &mut s).unwrap_err();
        assert!(err.to_string().contains("encoder.0.kernel"));
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // f(x) = x^2, grad = 2x, from x = 1 with lr 0.1
        let mut p = Parameter::new(Tensor::filled(&[1], 1.0));
        let mut s = AdamState::new(&[1], 0.1);
        let mut trace = Vec::new();
        for _ in 0..100 {
            p.gradient.data_mut()[0] = 2.0 * p.value.data()[0];
            adam_step("x", &mut p, &mut s).unwrap();
            trace.push(p.value.data()[0].abs());
        }
        assert!(trace[99] < 0.05, "final |x| = {}", trace[99]);
        // momentum makes |x| oscillate, so "decreasing" means the envelope:
        // the peak over each late window shrinks strictly
        let peak = |w: &[f64]| w.iter().cloned().fold(0.0_f64, f64::max);
        assert!(peak(&trace[75..100]) < peak(&trace[50..75]));
        assert!(peak(&trace[50..75]) < peak(&trace[25..50]));
    }
}
