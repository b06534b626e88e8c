//! AdamW with decoupled weight decay.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update of every parameter from its stored gradient.
pub fn adamw_step(params: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(TensorError::Contract(format!(
            "optimizer tracks {} parameters, got {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    let grads: Vec<Vec<f64>> = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = p
                .grad()
                .ok_or_else(|| TensorError::Contract(format!("parameter {i} has no gradient")))?;
            if g.len() != state.first_moment[i].len() {
                return Err(TensorError::Contract(format!("moment shape mismatch for parameter {i}")));
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
        p.update_data(|w| {
            for j in 0..w.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] = w[j] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_decays() {
        let p = Tensor::from_vec(vec![1.0, -2.0, 3.0], &[3]).unwrap().into_param();
        *p.grad_lock() = Some(vec![0.0; 3]);
        let mut st = OptimizerState::new(std::slice::from_ref(&p), 0.01, 0.1);
        adamw_step(std::slice::from_ref(&p), &mut st).unwrap();
        let f = 1.0 - 0.01 * 0.1;
        assert_eq!(p.to_vec(), vec![1.0 * f, -2.0 * f, 3.0 * f]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_is_normalised_gradient() {
        let p = Tensor::from_vec(vec![0.5, 0.5], &[2]).unwrap().into_param();
        *p.grad_lock() = Some(vec![2.0, -0.25]);
        let mut st = OptimizerState::new(std::slice::from_ref(&p), 0.1, 0.0);
        adamw_step(std::slice::from_ref(&p), &mut st).unwrap();
        let w = p.to_vec();
        assert!((w[0] - (0.5 - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-12);
        assert!((w[1] - (0.5 + 0.1 * 0.25 / (0.25 + 1e-8))).abs() < 1e-12);
    }

    /// Plain scalar AdamW written out independently of the tensor path.
    fn scalar_reference(steps: usize, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn converges_on_quadratic() {
        let w = Tensor::from_vec(vec![0.0], &[1]).unwrap().into_param();
        let mut st = OptimizerState::new(std::slice::from_ref(&w), 0.1, 0.0);
        for _ in 0..100 {
            w.zero_grad();
            w.add_scalar(-3.0).square().sum_all().backward().unwrap();
            adamw_step(std::slice::from_ref(&w), &mut st).unwrap();
        }
        let got = w.item();
        assert!((got - 3.0).abs() < 0.1, "w = {got}");
        assert!((got - scalar_reference(100, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let p = Tensor::from_vec(vec![1.0], &[1]).unwrap().into_param();
        let mut st = OptimizerState::new(std::slice::from_ref(&p), 0.1, 0.0);
        assert!(matches!(adamw_step(&[p], &mut st), Err(TensorError::Contract(_))));
    }
}
