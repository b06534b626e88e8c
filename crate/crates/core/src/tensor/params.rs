//! Named parameter registry.

use super::{Result, Tensor, TensorError};

/// FNV-1a, used to derive per-name seeds that do not depend on creation order.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy)]
pub enum ParamInit {
    Zeros,
    Full(f64),
    /// Gaussian with the given standard deviation.
    Normal(f64),
}

/// Ordered list of named parameter leaves. Order is creation order and is
/// what the optimizer and checkpoint files follow.
#[derive(Debug, Clone)]
pub struct ParamStore {
    seed: u64,
    params: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { seed, params: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: ParamInit) -> Result<Tensor> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(TensorError::Contract(format!("duplicate parameter name {name}")));
        }
        let t = match init {
            ParamInit::Zeros => Tensor::zeros(shape)?,
            ParamInit::Full(v) => Tensor::full(shape, v)?,
            ParamInit::Normal(std) => {
                let seed = self.seed ^ stable_hash(name.as_bytes());
                Tensor::seeded_gaussian(seed, shape)?.scale(std)
            }
        }
        .into_param();
        self.params.push((name.to_string(), t.clone()));
        Ok(t)
    }

    pub fn param_from_vec(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let t = self.param(name, shape, ParamInit::Zeros)?;
        t.set_data(&values)?;
        Ok(t)
    }

    pub fn named(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn reset_grads(&self) {
        for (_, t) in &self.params {
            t.zero_grad();
        }
    }

    /// Backward from `loss`, then give every parameter the graph did not reach
    /// an all-zero gradient.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        loss.backward()?;
        for (_, t) in &self.params {
            let mut g = t.grad_lock();
            if g.is_none() {
                *g = Some(vec![0.0; t.numel()]);
            }
        }
        Ok(())
    }

    /// Copy of every parameter's values, for snapshots.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|(_, t)| t.to_vec()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(TensorError::Contract("snapshot does not match parameter list".into()));
        }
        for ((_, t), v) in self.params.iter().zip(snapshot) {
            t.set_data(v)?;
        }
        Ok(())
    }
}
