use crate::error::TensorError;
use crate::tensor::Tensor;

/// First/second moment estimates for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len()],
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25
        // step = 1e-3 * 0.5 / (0.5 + 1e-8)
        let mut params = vec![Tensor::scalar(1.0)];
        let grads = vec![Tensor::scalar(0.5)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        let expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
        assert!((params[0].data()[0] - 0.999).abs() < 1e-10);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut params = vec![Tensor::row(vec![0.3, -2.0, 7.5])];
        let before = params.clone();
        let grads = vec![Tensor::zeros(&[1, 3])];
        let mut state = AdamState::new(&params);
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, 1e-2).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut params = vec![Tensor::row(vec![0.3, -2.0])];
        let before = params.clone();
        let grads = vec![Tensor::row(vec![1.0, -4.0])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.0).unwrap();
        adam_step(&mut params, &grads, &mut state, 0.0).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.t, 2);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut params = vec![Tensor::zeros(&[2, 2])];
        let grads = vec![Tensor::zeros(&[4])];
        let mut state = AdamState::new(&params);
        assert!(adam_step(&mut params, &grads, &mut state, 1e-3).is_err());
    }
}
