//! Central finite-difference gradient checks.
//!
//! The numeric side only ever evaluates the closure's forward value, so it is
//! independent of every backward implementation it checks.

use super::{Result, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// Probe at most this many entries per tensor (evenly spaced). `None`
    /// probes every entry.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            max_entries: None,
        }
    }
}

impl GradCheckConfig {
    pub fn strict(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub probed: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(move |t| t.max_rel_err > self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn probe_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n => (0..m).map(|i| i * n / m + (n / m) / 2).collect(),
        _ => (0..n).collect(),
    }
}

pub fn check_gradients<F>(params: &[Tensor], loss: F, cfg: &GradCheckConfig) -> Result<GradReport>
where
    F: FnMut() -> Result<Tensor>,
{
    let named: Vec<(String, Tensor)> = params
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("param{i}"), p.clone()))
        .collect();
    check_gradients_named(&named, loss, cfg)
}

/// Compares backward-pass gradients of `loss` against central differences
/// for every (or a spaced sample of) entry of each named tensor.
pub fn check_gradients_named<F>(params: &[(String, Tensor)], mut loss: F, cfg: &GradCheckConfig) -> Result<GradReport>
where
    F: FnMut() -> Result<Tensor>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut tensors = Vec::with_capacity(params.len());
    for ((name, p), grad) in params.iter().zip(&analytic) {
        let original = p.to_vec();
        let mut check = TensorCheck {
            name: name.clone(),
            probed: 0,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in probe_indices(original.len(), cfg.max_entries) {
            let mut probe = original.clone();
            probe[i] = original[i] + cfg.step;
            p.set_data(&probe)?;
            let plus = loss()?.item();
            probe[i] = original[i] - cfg.step;
            p.set_data(&probe)?;
            let minus = loss()?.item();
            p.set_data(&original)?;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(grad[i], numeric, cfg.floor);
            check.probed += 1;
            if err > check.max_rel_err || check.probed == 1 {
                check.max_rel_err = err;
                check.worst_index = i;
                check.analytic = grad[i];
                check.numeric = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradReport {
        tolerance: cfg.tolerance,
        tensors,
    })
}
