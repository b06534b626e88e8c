//! Small building blocks shared by the SSM and model modules.

use crate::tensor::params::{ParamInit, ParamStore};
use crate::tensor::{Result, Tensor};

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let weight = store.param(
            &format!("{name}.weight"),
            &[d_in, d_out],
            ParamInit::Normal(1.0 / (d_in as f64).sqrt()),
        )?;
        let bias = if bias {
            Some(store.param(&format!("{name}.bias"), &[d_out], ParamInit::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// Zero weight and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.param(&format!("{name}.weight"), &[d_in, d_out], ParamInit::Zeros)?,
            bias: Some(store.param(&format!("{name}.bias"), &[d_out], ParamInit::Zeros)?),
        })
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

/// Two-layer perceptron with a SiLU hidden activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_hidden: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.fc1"), d_in, d_hidden, true)?,
            out: Linear::new(store, &format!("{name}.fc2"), d_hidden, d_out, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.out.forward(&self.hidden.forward(x)?.silu())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.hidden.weight, &self.out.weight];
        v.extend(self.hidden.bias.iter());
        v.extend(self.out.bias.iter());
        v
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&format!("{name}.gamma"), &[width], ParamInit::Full(1.0))?,
            beta: store.param(&format!("{name}.beta"), &[width], ParamInit::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, 1e-5)
    }
}
