//! Selective state-space scans and the Mamba block built on them.

mod block;
pub mod kernel;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::Linear;
use crate::tensor::params::{stable_hash, ParamInit, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

pub use block::{CausalConv, MambaBlock, MambaConfig};
pub use kernel::{discretize, ScanKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub fn index(self) -> usize {
        match self {
            Modality::Audio => 0,
            Modality::Visual => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Audio => "a",
            Modality::Visual => "v",
        }
    }
}

/// A `B` projection shared by the audio and visual scans, plus one
/// pre-sigmoid mixing scalar per modality.
///
/// Effective projection for modality `m`:
/// `B_m(x) = (1 - sigmoid(alpha_m)) B_private(x) + sigmoid(alpha_m) B_shared(x)`.
/// With `enabled == false` the shared path is cut out of the graph entirely,
/// which is the `alpha -> -inf` limit.
#[derive(Debug, Clone)]
pub struct SharedMatrixHandle {
    pub b_shared: Linear,
    pub alpha: [Tensor; 2],
    pub enabled: bool,
}

impl SharedMatrixHandle {
    pub fn new(store: &mut ParamStore, name: &str, d_inner: usize, d_state: usize) -> Result<Self> {
        Ok(Self {
            b_shared: Linear::new(store, &format!("{name}.b_shared"), d_inner, d_state, false)?,
            alpha: [
                store.param(&format!("{name}.alpha_a"), &[1], ParamInit::Zeros)?,
                store.param(&format!("{name}.alpha_v"), &[1], ParamInit::Zeros)?,
            ],
            enabled: true,
        })
    }
}

/// Input-dependent scan coefficients for one sequence.
#[derive(Debug, Clone)]
pub struct Selective {
    pub delta: Tensor,
    pub b: Tensor,
    pub c: Tensor,
}

/// Parameters of one selective-scan branch. `A = -exp(a_log)` is diagonal
/// per channel; `delta = softplus(dt_up(dt_down(x)))`.
#[derive(Debug, Clone)]
pub struct SsmParams {
    pub a_log: Tensor,
    pub b_proj: Linear,
    pub shared: Option<(SharedMatrixHandle, Modality)>,
    pub c_proj: Linear,
    pub dt_down: Linear,
    pub dt_up: Linear,
    pub d_skip: Tensor,
    pub kernel: ScanKernel,
}

impl SsmParams {
    pub fn new(store: &mut ParamStore, name: &str, d_inner: usize, d_state: usize, dt_rank: usize) -> Result<Self> {
        let a_log_init: Vec<f64> = (0..d_inner)
            .flat_map(|_| (1..=d_state).map(|s| (s as f64).ln()))
            .collect();
        let a_log = store.param_from_vec(&format!("{name}.a_log"), &[d_inner, d_state], a_log_init)?;

        let dt_down = Linear::new(store, &format!("{name}.dt_down"), d_inner, dt_rank, false)?;
        let dt_up = Linear::new(store, &format!("{name}.dt_up"), dt_rank, d_inner, true)?;
        // Bias so that softplus(bias) is log-uniform in [1e-3, 1e-1].
        let mut rng = ChaCha8Rng::seed_from_u64(store.seed() ^ stable_hash(format!("{name}.dt_bias").as_bytes()));
        let bias: Vec<f64> = (0..d_inner)
            .map(|_| {
                let dt: f64 = (rng.gen_range(0.001f64.ln()..0.1f64.ln())).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        dt_up.bias.as_ref().expect("dt_up has bias").set_data(&bias)?;

        Ok(Self {
            a_log,
            b_proj: Linear::new(store, &format!("{name}.b_proj"), d_inner, d_state, false)?,
            shared: None,
            c_proj: Linear::new(store, &format!("{name}.c_proj"), d_inner, d_state, false)?,
            dt_down,
            dt_up,
            d_skip: store.param(&format!("{name}.d_skip"), &[d_inner], ParamInit::Full(1.0))?,
            kernel: ScanKernel::Sequential,
        })
    }

    pub fn with_shared(mut self, handle: SharedMatrixHandle, modality: Modality) -> Self {
        self.shared = Some((handle, modality));
        self
    }

    pub fn d_inner(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn d_state(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Effective `B` coefficients for `x`, applying the shared mixing rule.
    pub fn b_coeffs(&self, x: &Tensor) -> Result<Tensor> {
        let private = self.b_proj.forward(x)?;
        match &self.shared {
            Some((h, m)) if h.enabled => {
                let s = h.alpha[m.index()].sigmoid();
                let keep = s.neg().add_scalar(1.0);
                private.mul(&keep)?.add(&h.b_shared.forward(x)?.mul(&s)?)
            }
            _ => Ok(private),
        }
    }

    pub fn selective(&self, x: &Tensor) -> Result<Selective> {
        if x.rank() != 2 || x.shape()[1] != self.d_inner() {
            return Err(TensorError::ShapeMismatch {
                op: "ssm",
                lhs: x.shape().to_vec(),
                rhs: vec![self.d_inner()],
            });
        }
        Ok(Selective {
            delta: self.dt_up.forward(&self.dt_down.forward(x)?)?.softplus(),
            b: self.b_coeffs(x)?,
            c: self.c_proj.forward(x)?,
        })
    }

    fn scan_with(&self, x: &Tensor, sel: &Selective, kernel: ScanKernel) -> Result<Tensor> {
        kernel::selective_scan_op(x, &sel.delta, &self.a_log, &sel.b, &sel.c, &self.d_skip, kernel)
    }

    /// Forward scan using this branch's configured kernel.
    pub fn scan(&self, x: &Tensor) -> Result<Tensor> {
        self.scan_with(x, &self.selective(x)?, self.kernel)
    }
}

/// Ground-truth forward scan, one step at a time.
pub fn selective_scan_sequential(x: &Tensor, params: &SsmParams) -> Result<Tensor> {
    params.scan_with(x, &params.selective(x)?, ScanKernel::Sequential)
}

/// Forward scan evaluated with the associative prefix scan.
pub fn selective_scan_parallel(x: &Tensor, params: &SsmParams) -> Result<Tensor> {
    params.scan_with(x, &params.selective(x)?, ScanKernel::Parallel)
}

/// Scan over the reversed segment order; output is flipped back to the
/// original orientation.
pub fn selective_scan_backward(x: &Tensor, params: &SsmParams) -> Result<Tensor> {
    params.scan(&x.reverse(0)?)?.reverse(0)
}

/// Soft mixture over all cyclic start positions:
/// `sum_s softmax(start_logits)_s * rotate_back(scan(rotate(x, s)), s)`.
pub fn selective_scan_dynamic(x: &Tensor, params: &SsmParams, start_logits: &Tensor) -> Result<Tensor> {
    let t_len = x.shape()[0];
    if start_logits.shape() != [t_len] {
        return Err(TensorError::ShapeMismatch {
            op: "selective_scan_dynamic",
            lhs: x.shape().to_vec(),
            rhs: start_logits.shape().to_vec(),
        });
    }
    let weights = start_logits.softmax(0)?;
    let sel = params.selective(x)?;
    kernel::cyclic_scan_mixture_op(x, &sel.delta, &params.a_log, &sel.b, &sel.c, &params.d_skip, &weights, params.kernel)
}
