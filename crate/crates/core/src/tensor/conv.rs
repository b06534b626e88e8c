use super::{Result, Tensor, TensorError};

impl Tensor {
    /// Causal depthwise 1-D convolution over the time axis of `[T, D]`.
    ///
    /// `weight` is `[D, k]`, `bias` is `[D]`. The input is left-padded with
    /// `k - 1` zeros so `out[t]` only sees `x[..=t]`; tap `k - 1` multiplies
    /// the current step.
    pub fn conv1d_depthwise(&self, kernel_size: usize, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        if kernel_size < 1 {
            return Err(TensorError::Config("conv1d kernel size must be >= 1".into()));
        }
        if self.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_depthwise",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let (t_len, d) = (self.shape()[0], self.shape()[1]);
        let k = kernel_size;
        if weight.shape() != [d, k] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_depthwise",
                lhs: vec![d, k],
                rhs: weight.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; t_len * d];
        {
            let x = self.data();
            let w = weight.data();
            let b = bias.data();
            for t in 0..t_len {
                for c in 0..d {
                    let mut acc = b[c];
                    for j in 0..k {
                        // input position t - (k - 1) + j
                        if let Some(src) = (t + j).checked_sub(k - 1) {
                            acc += w[c * k + j] * x[src * d + c];
                        }
                    }
                    out[t * d + c] = acc;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![t_len, d],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |p: &[Tensor], _: &[f64], g: &[f64]| {
                let x = p[0].data();
                let w = p[1].data();
                let mut gx = vec![0.0; t_len * d];
                let mut gw = vec![0.0; d * k];
                let mut gb = vec![0.0; d];
                for t in 0..t_len {
                    for c in 0..d {
                        let go = g[t * d + c];
                        gb[c] += go;
                        for j in 0..k {
                            if let Some(src) = (t + j).checked_sub(k - 1) {
                                gw[c * k + j] += go * x[src * d + c];
                                gx[src * d + c] += go * w[c * k + j];
                            }
                        }
                    }
                }
                vec![
                    p[0].requires_grad().then_some(gx),
                    p[1].requires_grad().then_some(gw),
                    p[2].requires_grad().then_some(gb),
                ]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheckConfig};

    /// Direct summation with explicit zero padding.
    fn naive(x: &[f64], t_len: usize, d: usize, w: &[f64], b: &[f64], k: usize) -> Vec<f64> {
        let mut padded = vec![0.0; (t_len + k - 1) * d];
        padded[(k - 1) * d..].copy_from_slice(x);
        let mut out = vec![0.0; t_len * d];
        for t in 0..t_len {
            for c in 0..d {
                out[t * d + c] = b[c] + (0..k).map(|j| w[c * k + j] * padded[(t + j) * d + c]).sum::<f64>();
            }
        }
        out
    }

    #[test]
    fn kernel_one_is_identity() {
        let x = Tensor::seeded_gaussian(1, &[5, 3]).unwrap();
        let w = Tensor::full(&[3, 1], 1.0).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        assert_eq!(x.conv1d_depthwise(1, &w, &b).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn current_tap_is_identity() {
        let x = Tensor::seeded_gaussian(2, &[6, 2]).unwrap();
        let w = Tensor::from_vec(vec![0.0, 1.0, 0.0, 1.0], &[2, 2]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert_eq!(x.conv1d_depthwise(2, &w, &b).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn zero_kernel_size_is_config_error() {
        let x = Tensor::zeros(&[2, 2]).unwrap();
        let w = Tensor::zeros(&[2, 1]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert!(matches!(x.conv1d_depthwise(0, &w, &b), Err(TensorError::Config(_))));
    }

    #[test]
    fn matches_naive_summation() {
        let (t_len, d, k) = (9, 5, 4);
        let x = Tensor::seeded_gaussian(3, &[t_len, d]).unwrap();
        let w = Tensor::seeded_gaussian(4, &[d, k]).unwrap();
        let b = Tensor::seeded_gaussian(5, &[d]).unwrap();
        let got = x.conv1d_depthwise(k, &w, &b).unwrap().to_vec();
        let want = naive(&x.to_vec(), t_len, d, &w.to_vec(), &b.to_vec(), k);
        for (g, e) in got.iter().zip(&want) {
            assert!((g - e).abs() < 1e-10);
        }
    }

    #[test]
    fn causal() {
        let x = Tensor::seeded_gaussian(6, &[8, 2]).unwrap();
        let w = Tensor::seeded_gaussian(7, &[2, 4]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        let base = x.conv1d_depthwise(4, &w, &b).unwrap().to_vec();
        let mut pert = x.to_vec();
        pert[5 * 2] += 1.0;
        let px = Tensor::from_vec(pert, &[8, 2]).unwrap();
        let out = px.conv1d_depthwise(4, &w, &b).unwrap().to_vec();
        assert_eq!(&out[..10], &base[..10]);
        assert_ne!(out[10], base[10]);
    }

    #[test]
    fn gradients() {
        let x = Tensor::seeded_gaussian(8, &[6, 3]).unwrap().into_param();
        let w = Tensor::seeded_gaussian(9, &[3, 4]).unwrap().into_param();
        let b = Tensor::seeded_gaussian(10, &[3]).unwrap().into_param();
        let r = check_gradients(
            &[x.clone(), w.clone(), b.clone()],
            || Ok(x.conv1d_depthwise(4, &w, &b)?.tanh().sum_all()),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
