//! Hybrid attention tail: one self- and one cross-attention layer shared by
//! both modalities.

use crate::nn::Linear;
use crate::tensor::params::ParamStore;
use crate::tensor::{Result, Tensor};

/// Single-head scaled dot-product attention with learned Q, K, V maps.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, true)?,
            k: Linear::new(store, &format!("{name}.k"), d, d, true)?,
            v: Linear::new(store, &format!("{name}.v"), d, d, true)?,
        })
    }

    /// Returns the attended values `[T, d]` and the weights `[T_q, T_kv]`
    /// (rows sum to 1).
    pub fn attend(&self, query: &Tensor, context: &Tensor) -> Result<(Tensor, Tensor)> {
        let d = self.q.d_out() as f64;
        let q = self.q.forward(query)?;
        let k = self.k.forward(context)?;
        let v = self.v.forward(context)?;
        let weights = q.matmul(&k.transpose()?)?.scale(1.0 / d.sqrt()).softmax(1)?;
        Ok((weights.matmul(&v)?, weights))
    }
}

#[derive(Debug, Clone)]
pub struct HanTail {
    pub self_attn: Attention,
    pub cross_attn: Attention,
}

/// `g_a`, `g_v` and the four attention maps `[self_a, self_v, cross_a, cross_v]`.
#[derive(Debug, Clone)]
pub struct HanOutput {
    pub g_a: Tensor,
    pub g_v: Tensor,
    pub attention: [Tensor; 4],
}

impl HanTail {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            self_attn: Attention::new(store, &format!("{name}.self"), d)?,
            cross_attn: Attention::new(store, &format!("{name}.cross"), d)?,
        })
    }

    pub fn forward(&self, f_a: &Tensor, f_v: &Tensor) -> Result<HanOutput> {
        let (sa, wsa) = self.self_attn.attend(f_a, f_a)?;
        let (sv, wsv) = self.self_attn.attend(f_v, f_v)?;
        let (ca, wca) = self.cross_attn.attend(f_a, f_v)?;
        let (cv, wcv) = self.cross_attn.attend(f_v, f_a)?;
        Ok(HanOutput {
            g_a: f_a.add(&sa)?.add(&ca)?,
            g_v: f_v.add(&sv)?.add(&cv)?,
            attention: [wsa, wsv, wca, wcv],
        })
    }
}
