//! Trainable parameters and the Adam update.

use rand::Rng;

use super::tensor::{Scalar, Tensor, TensorError};

/// A named leaf tensor with a persistent gradient buffer. The gradient is
/// zero-initialized, accumulates across [`Tensor::backward`] calls, and is
/// cleared by [`adam_step`] or [`Parameter::zero_grad`].
pub struct Parameter<S: Scalar> {
    tensor: Tensor<S>,
    name: String,
}

impl<S: Scalar> Parameter<S> {
    pub fn from_values(name: &str, shape: &[usize], values: &[S]) -> Self {
        Parameter {
            tensor: Tensor::leaf_with_grad(shape, values.to_vec()),
            name: name.to_string(),
        }
    }

    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Parameter {
            tensor: Tensor::leaf_with_grad(shape, vec![S::zero(); shape.iter().product()]),
            name: name.to_string(),
        }
    }

    pub fn ones(name: &str, shape: &[usize]) -> Self {
        Parameter {
            tensor: Tensor::leaf_with_grad(shape, vec![S::one(); shape.iter().product()]),
            name: name.to_string(),
        }
    }

    /// Normal-initialized parameter; draws are made in `f64` so a seed gives
    /// the same values regardless of the element type.
    pub fn normal(name: &str, shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let t = Tensor::<S>::randn(shape, std, rng);
        Parameter {
            tensor: Tensor::leaf_with_grad(shape, t.to_vec()),
            name: name.to_string(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    /// Handle for use in forward computations. The underlying node is shared,
    /// so every graph built from it reports gradients into the same buffer.
    pub fn tensor(&self) -> &Tensor<S> {
        &self.tensor
    }

    pub fn values(&self) -> Vec<S> {
        self.tensor.to_vec()
    }

    pub fn grad(&self) -> Vec<S> {
        self.tensor.grad_vec()
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad_buf();
    }

    /// Overwrites the stored values. Shapes must match; used when restoring
    /// the best snapshot after early stopping and when loading checkpoints.
    pub fn load_values(&self, values: &[S]) {
        self.tensor.write_data(values);
    }

    pub fn value_at(&self, index: usize) -> S {
        self.tensor.at(index)
    }

    pub fn set_value_at(&self, index: usize, value: S) {
        self.tensor.set_at(index, value);
    }
}

/// Per-parameter Adam accumulators plus the update hyperparameters.
pub struct AdamState<S: Scalar> {
    first_moment: Vec<S>,
    second_moment: Vec<S>,
    shape: Vec<usize>,
    step_count: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(param: &Parameter<S>, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![S::zero(); param.numel()],
            second_moment: vec![S::zero(); param.numel()],
            shape: param.shape().to_vec(),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One Adam update with bias correction:
///
/// ```text
/// m <- b1*m + (1-b1)*g        m_hat = m / (1 - b1^t)
/// v <- b2*v + (1-b2)*g^2      v_hat = v / (1 - b2^t)
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// ```
///
/// The parameter's gradient is zeroed afterwards and the step counter
/// advances, so callers can run backward/step in a plain loop.
pub fn adam_step<S: Scalar>(param: &Parameter<S>, state: &mut AdamState<S>) -> Result<(), TensorError> {
    if state.shape != param.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            left: state.shape.clone(),
            right: param.shape().to_vec(),
        });
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let grad = param.grad();
    for i in 0..grad.len() {
        let g = grad[i].to_f64();
        let m = state.beta1 * state.first_moment[i].to_f64() + (1.0 - state.beta1) * g;
        let v = state.beta2 * state.second_moment[i].to_f64() + (1.0 - state.beta2) * g * g;
        state.first_moment[i] = S::from_f64(m);
        state.second_moment[i] = S::from_f64(v);
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        let updated =
            param.value_at(i).to_f64() - state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        param.set_value_at(i, S::from_f64(updated));
    }
    param.zero_grad();
    Ok(())
}
