//! Adaptive mamba fusion: forward, backward and dynamic scans per modality
//! with `B` partially shared across modalities, then a mixed feature.

use crate::nn::{LayerNorm, Linear};
use crate::ssm::{selective_scan_dynamic, CausalConv, Modality, ScanKernel, SharedMatrixHandle, SsmParams};
use crate::tensor::params::{ParamInit, ParamStore};
use crate::tensor::{Result, Tensor};

pub const BRANCHES: [&str; 3] = ["fwd", "bwd", "dyn"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmfDims {
    pub d_model: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub dt_rank: usize,
    pub conv_kernel: usize,
    pub segments: usize,
    pub kernel: ScanKernel,
}

/// One modality's three-branch block.
#[derive(Debug, Clone)]
pub struct AmfStream {
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub convs: [CausalConv; 3],
    pub ssms: [SsmParams; 3],
    pub start_logits: Tensor,
    pub out_proj: Linear,
}

impl AmfStream {
    fn new(store: &mut ParamStore, name: &str, dims: &AmfDims, handles: &[SharedMatrixHandle; 3], m: Modality) -> Result<Self> {
        let di = dims.d_inner;
        let mut convs = Vec::with_capacity(3);
        let mut ssms = Vec::with_capacity(3);
        for (b, h) in BRANCHES.iter().zip(handles) {
            convs.push(CausalConv::new(store, &format!("{name}.{b}.conv"), di, dims.conv_kernel)?);
            let mut ssm = SsmParams::new(store, &format!("{name}.{b}.ssm"), di, dims.d_state, dims.dt_rank)?;
            ssm.kernel = dims.kernel;
            ssms.push(ssm.with_shared(h.clone(), m));
        }
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dims.d_model)?,
            in_proj: Linear::new(store, &format!("{name}.in_proj"), dims.d_model, 2 * di, true)?,
            convs: convs.try_into().unwrap(),
            ssms: ssms.try_into().unwrap(),
            start_logits: store.param(&format!("{name}.start_logits"), &[dims.segments], ParamInit::Zeros)?,
            out_proj: Linear::new(store, &format!("{name}.out_proj"), di, dims.d_model, true)?,
        })
    }

    /// Branch outputs `(forward, backward, dynamic)` and the gate, all
    /// `[T, d_inner]`.
    pub fn branches(&self, x: &Tensor) -> Result<([Tensor; 3], Tensor)> {
        let di = self.ssms[0].d_inner();
        let xz = self.in_proj.forward(&self.norm.forward(x)?)?;
        let u = xz.narrow(1, 0, di)?;
        let gate = xz.narrow(1, di, di)?.silu();

        let uf = self.convs[0].forward(&u)?.silu();
        let yf = self.ssms[0].scan(&uf)?;

        let ub = self.convs[1].forward(&u.reverse(0)?)?.silu();
        let yb = self.ssms[1].scan(&ub)?.reverse(0)?;

        let ud = self.convs[2].forward(&u)?.silu();
        let yd = selective_scan_dynamic(&ud, &self.ssms[2], &self.start_logits)?;
        Ok(([yf, yb, yd], gate))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let ([yf, yb, yd], gate) = self.branches(x)?;
        let y = yf.add(&yb)?.add(&yd)?.mul(&gate)?;
        self.out_proj.forward(&y)?.add(x)
    }
}

#[derive(Debug, Clone)]
pub struct Amf {
    pub handles: [SharedMatrixHandle; 3],
    pub audio: AmfStream,
    pub visual: AmfStream,
    pub mix: Linear,
}

/// Outputs `(f_amf_a, f_amf_v, f_mix)`.
pub type AmfOutput = (Tensor, Tensor, Tensor);

impl Amf {
    pub fn new(store: &mut ParamStore, name: &str, dims: AmfDims) -> Result<Self> {
        let handles: Vec<SharedMatrixHandle> = BRANCHES
            .iter()
            .map(|b| SharedMatrixHandle::new(store, &format!("{name}.shared.{b}"), dims.d_inner, dims.d_state))
            .collect::<Result<_>>()?;
        let handles: [SharedMatrixHandle; 3] = handles.try_into().unwrap();
        Ok(Self {
            audio: AmfStream::new(store, &format!("{name}.a"), &dims, &handles, Modality::Audio)?,
            visual: AmfStream::new(store, &format!("{name}.v"), &dims, &handles, Modality::Visual)?,
            mix: Linear::new(store, &format!("{name}.mix"), 2 * dims.d_model, dims.d_model, true)?,
            handles,
        })
    }

    /// Turns every shared path on or off (off is the `alpha -> -inf` limit).
    pub fn set_sharing(&mut self, enabled: bool) {
        for h in &mut self.handles {
            h.enabled = enabled;
        }
        for stream in [&mut self.audio, &mut self.visual] {
            for ssm in &mut stream.ssms {
                if let Some((h, _)) = &mut ssm.shared {
                    h.enabled = enabled;
                }
            }
        }
    }

    pub fn forward(&self, f_a: &Tensor, f_v: &Tensor) -> Result<AmfOutput> {
        let a = self.audio.forward(f_a)?;
        let v = self.visual.forward(f_v)?;
        let mix = self.mix.forward(&Tensor::concat(&[&a, &v], 1)?)?;
        Ok((a, v, mix))
    }
}
