//! Mamba feature enhancement: agreement-gated channel amplification.

use crate::nn::Linear;
use crate::tensor::params::ParamStore;
use crate::tensor::{Result, Tensor};

#[derive(Debug, Clone)]
pub struct Mfe {
    pub p: Linear,
    pub q: Linear,
}

impl Mfe {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            p: Linear::new(store, &format!("{name}.p"), d, d, true)?,
            q: Linear::new(store, &format!("{name}.q"), d, d, true)?,
        })
    }

    /// `e = sigmoid(P(f_a * f_v) + Q(f_mix))`; the `Q` term is dropped when
    /// no mixed feature exists.
    pub fn enhancement(&self, f_a: &Tensor, f_v: &Tensor, f_mix: Option<&Tensor>) -> Result<Tensor> {
        let mut z = self.p.forward(&f_a.mul(f_v)?)?;
        if let Some(mix) = f_mix {
            z = z.add(&self.q.forward(mix)?)?;
        }
        Ok(z.sigmoid())
    }

    /// `f_m * (1 + e)` for both modalities.
    pub fn forward(&self, f_a: &Tensor, f_v: &Tensor, f_mix: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let factor = self.enhancement(f_a, f_v, f_mix)?.add_scalar(1.0);
        Ok((f_a.mul(&factor)?, f_v.mul(&factor)?))
    }
}
