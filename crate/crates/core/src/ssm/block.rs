use crate::nn::{LayerNorm, Linear};
use crate::tensor::params::{ParamInit, ParamStore};
use crate::tensor::{Result, Tensor};

use super::{ScanKernel, SsmParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MambaConfig {
    pub d_model: usize,
    pub expand: usize,
    pub d_state: usize,
    pub conv_kernel: usize,
    pub kernel: ScanKernel,
}

impl MambaConfig {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            expand: 2,
            d_state: 16,
            conv_kernel: 4,
            kernel: ScanKernel::Sequential,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn dt_rank(&self) -> usize {
        self.d_model.div_ceil(16)
    }
}

/// Causal depthwise convolution with its own weights.
#[derive(Debug, Clone)]
pub struct CausalConv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub kernel_size: usize,
}

impl CausalConv {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, kernel_size: usize) -> Result<Self> {
        Ok(Self {
            weight: store.param(
                &format!("{name}.weight"),
                &[channels, kernel_size],
                ParamInit::Normal(1.0 / (kernel_size as f64).sqrt()),
            )?,
            bias: store.param(&format!("{name}.bias"), &[channels], ParamInit::Zeros)?,
            kernel_size,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv1d_depthwise(self.kernel_size, &self.weight, &self.bias)
    }
}

/// `x -> LN -> [conv -> silu -> scan] * silu(gate) -> out_proj -> + x`.
#[derive(Debug, Clone)]
pub struct MambaBlock {
    pub config: MambaConfig,
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub conv: CausalConv,
    pub ssm: SsmParams,
    pub out_proj: Linear,
}

impl MambaBlock {
    pub fn new(store: &mut ParamStore, name: &str, config: MambaConfig) -> Result<Self> {
        let di = config.d_inner();
        let mut ssm = SsmParams::new(store, &format!("{name}.ssm"), di, config.d_state, config.dt_rank())?;
        ssm.kernel = config.kernel;
        Ok(Self {
            config,
            norm: LayerNorm::new(store, &format!("{name}.norm"), config.d_model)?,
            in_proj: Linear::new(store, &format!("{name}.in_proj"), config.d_model, 2 * di, true)?,
            conv: CausalConv::new(store, &format!("{name}.conv"), di, config.conv_kernel)?,
            ssm,
            out_proj: Linear::new(store, &format!("{name}.out_proj"), di, config.d_model, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let di = self.config.d_inner();
        let xz = self.in_proj.forward(&self.norm.forward(x)?)?;
        let u = self.conv.forward(&xz.narrow(1, 0, di)?)?.silu();
        let gate = xz.narrow(1, di, di)?.silu();
        let y = self.ssm.scan(&u)?.mul(&gate)?;
        self.out_proj.forward(&y)?.add(x)
    }
}
