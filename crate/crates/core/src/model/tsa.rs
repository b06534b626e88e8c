//! Temporal-spatial attention: channel weights from pooled-over-time
//! vectors, then temporal weights from pooled-over-channel maps.

use crate::nn::Linear;
use crate::ssm::{MambaBlock, MambaConfig, ScanKernel};
use crate::tensor::params::ParamStore;
use crate::tensor::{PoolKind, Result, Tensor};

#[derive(Debug, Clone)]
pub struct Tsa {
    /// Shared between the average- and max-pooled vectors.
    pub channel: MambaBlock,
    pub temporal: MambaBlock,
    pub temporal_out: Linear,
}

impl Tsa {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, d_state: usize, kernel: ScanKernel) -> Result<Self> {
        let mut ch = MambaConfig::new(d);
        ch.d_state = d_state;
        ch.kernel = kernel;
        let mut tm = MambaConfig::new(2);
        tm.d_state = d_state;
        tm.kernel = kernel;
        Ok(Self {
            channel: MambaBlock::new(store, &format!("{name}.channel"), ch)?,
            temporal: MambaBlock::new(store, &format!("{name}.temporal"), tm)?,
            temporal_out: Linear::new(store, &format!("{name}.temporal_out"), 2, 1, true)?,
        })
    }

    /// `W = sigmoid(M(avg_t f) + M(max_t f))`, shape `[1, d]`.
    pub fn channel_weights(&self, f: &Tensor) -> Result<Tensor> {
        let avg = self.channel.forward(&f.pool(0, PoolKind::Avg)?)?;
        let max = self.channel.forward(&f.pool(0, PoolKind::Max)?)?;
        Ok(avg.add(&max)?.sigmoid())
    }

    /// `S = sigmoid(Linear(M([avg_d f ; max_d f])))`, shape `[T, 1]`.
    pub fn temporal_weights(&self, f: &Tensor) -> Result<Tensor> {
        let maps = Tensor::concat(&[&f.pool(1, PoolKind::Avg)?, &f.pool(1, PoolKind::Max)?], 1)?;
        Ok(self.temporal_out.forward(&self.temporal.forward(&maps)?)?.sigmoid())
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        let refined = f.mul(&self.channel_weights(f)?)?;
        refined.mul(&self.temporal_weights(&refined)?)
    }
}
