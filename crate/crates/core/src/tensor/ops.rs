use std::sync::Arc;

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy)]
enum Unary {
    Sigmoid,
    Silu,
    Softplus,
    Exp,
    Ln,
    Tanh,
    Relu,
    Neg,
    Sqrt,
    Square,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Unary {
    fn forward(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Neg => -x,
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
        }
    }

    /// dy/dx given input x and output y.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Softplus => sigmoid(x),
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Neg => -1.0,
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
        }
    }
}

/// Trailing-dimension broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For each flat index of `out`, the flat index into a tensor of shape `src`
/// broadcast to `out`.
fn broadcast_index_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let n: usize = out.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += strides[d];
            if idx[d] < out[d] {
                break;
            }
            flat -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

pub(crate) fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(TensorError::InvalidAxis {
            op,
            axis,
            rank: t.rank(),
        });
    }
    Ok(())
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: BinOp, name: &'static str) -> Result<Tensor> {
        let out_shape = broadcast_shape(name, self.shape(), other.shape())?;
        let n: usize = out_shape.iter().product();
        let ia = (self.shape() != out_shape.as_slice()).then(|| Arc::new(broadcast_index_map(self.shape(), &out_shape)));
        let ib = (other.shape() != out_shape.as_slice()).then(|| Arc::new(broadcast_index_map(other.shape(), &out_shape)));
        let out = {
            let ad = self.data();
            let bd = other.data();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let x = ad[ia.as_ref().map_or(i, |m| m[i])];
                let y = bd[ib.as_ref().map_or(i, |m| m[i])];
                out.push(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                });
            }
            out
        };
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), other.clone()],
            move |p: &[Tensor], _out: &[f64], g: &[f64]| {
                let ad = p[0].data();
                let bd = p[1].data();
                let ga = p[0].requires_grad().then(|| {
                    let mut ga = vec![0.0; ad.len()];
                    for (i, gi) in g.iter().enumerate() {
                        let ja = ia.as_ref().map_or(i, |m| m[i]);
                        let d = match op {
                            BinOp::Add | BinOp::Sub => 1.0,
                            BinOp::Mul => bd[ib.as_ref().map_or(i, |m| m[i])],
                            BinOp::Div => 1.0 / bd[ib.as_ref().map_or(i, |m| m[i])],
                        };
                        ga[ja] += gi * d;
                    }
                    ga
                });
                let gb = p[1].requires_grad().then(|| {
                    let mut gb = vec![0.0; bd.len()];
                    for (i, gi) in g.iter().enumerate() {
                        let jb = ib.as_ref().map_or(i, |m| m[i]);
                        let d = match op {
                            BinOp::Add => 1.0,
                            BinOp::Sub => -1.0,
                            BinOp::Mul => ad[ia.as_ref().map_or(i, |m| m[i])],
                            BinOp::Div => {
                                let x = ad[ia.as_ref().map_or(i, |m| m[i])];
                                let y = bd[jb];
                                -x / (y * y)
                            }
                        };
                        gb[jb] += gi * d;
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Add, "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Div, "div")
    }

    fn unary(&self, op: Unary) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| op.forward(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |p: &[Tensor], y: &[f64], g: &[f64]| {
                let x = p[0].data();
                vec![Some(
                    x.iter()
                        .zip(y)
                        .zip(g)
                        .map(|((&x, &y), &g)| g * op.derivative(x, y))
                        .collect(),
                )]
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Unary::Sigmoid)
    }

    pub fn silu(&self) -> Tensor {
        self.unary(Unary::Silu)
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Unary::Softplus)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(Unary::Ln)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Unary::Tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Unary::Relu)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Unary::Neg)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(Unary::Sqrt)
    }

    pub fn square(&self) -> Tensor {
        self.unary(Unary::Square)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out = self.data().iter().map(|x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |_: &[Tensor], _: &[f64], g: &[f64]| {
            vec![Some(g.iter().map(|g| g * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out = self.data().iter().map(|x| x + c).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], |_: &[Tensor], _: &[f64], g: &[f64]| {
            vec![Some(g.to_vec())]
        })
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let out = self.data().iter().map(|x| x.clamp(lo, hi)).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |p: &[Tensor], _: &[f64], g: &[f64]| {
            let x = p[0].data();
            vec![Some(
                x.iter()
                    .zip(g)
                    .map(|(&x, &g)| if (lo..=hi).contains(&x) { g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let out = {
            let a = self.data();
            let b = other.data();
            matmul_raw(&a, &b, m, k, n)
        };
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            move |p: &[Tensor], _: &[f64], g: &[f64]| {
                let a = p[0].data();
                let b = p[1].data();
                // dA = G B^T, dB = A^T G
                let ga = p[0].requires_grad().then(|| {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &b[kk * n..(kk + 1) * n];
                            ga[i * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    ga
                });
                let gb = p[1].requires_grad().then(|| {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let aik = a[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[kk * n..(kk + 1) * n];
                            for (d, gv) in dst.iter_mut().zip(grow) {
                                *d += aik * gv;
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    pub fn sum_all(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], move |_: &[Tensor], _: &[f64], g: &[f64]| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("sum_axis", self, axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        {
            let d = self.data();
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        out[o * inner + i] += d[(o * len + k) * inner + i];
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Ok(Tensor::from_op(shape, out, vec![self.clone()], move |_: &[Tensor], _: &[f64], g: &[f64]| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        gx[(o * len + k) * inner + i] = g[o * inner + i];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Average or max pooling along `axis`; the axis is kept with size 1.
    /// Max routes the gradient to the first maximal element.
    pub fn pool(&self, axis: usize, kind: PoolKind) -> Result<Tensor> {
        check_axis("pool", self, axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        {
            let d = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| d[(o * len + k) * inner + i];
                    match kind {
                        PoolKind::Avg => {
                            out[o * inner + i] = (0..len).map(at).sum::<f64>() / len as f64;
                        }
                        PoolKind::Max => {
                            let mut best = 0;
                            for k in 1..len {
                                if at(k) > at(best) {
                                    best = k;
                                }
                            }
                            argmax[o * inner + i] = best;
                            out[o * inner + i] = at(best);
                        }
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Ok(Tensor::from_op(shape, out, vec![self.clone()], move |_: &[Tensor], _: &[f64], g: &[f64]| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let gi = g[o * inner + i];
                    match kind {
                        PoolKind::Avg => {
                            for k in 0..len {
                                gx[(o * len + k) * inner + i] = gi / len as f64;
                            }
                        }
                        PoolKind::Max => {
                            gx[(o * len + argmax[o * inner + i]) * inner + i] = gi;
                        }
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", self, axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut out = vec![0.0; self.numel()];
        {
            let d = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let ix = |k: usize| (o * len + k) * inner + i;
                    let mx = (0..len).map(|k| d[ix(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for k in 0..len {
                        let e = (d[ix(k)] - mx).exp();
                        out[ix(k)] = e;
                        z += e;
                    }
                    for k in 0..len {
                        out[ix(k)] /= z;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |_: &[Tensor], y: &[f64], g: &[f64]| {
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let ix = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[ix(k)] * y[ix(k)]).sum();
                        for k in 0..len {
                            gx[ix(k)] = y[ix(k)] * (g[ix(k)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`
    /// (both shaped like the last axis).
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let width = *self.shape().last().expect("rank >= 1");
        if gamma.numel() != width || beta.numel() != width {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = self.numel() / width;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; self.numel()];
        {
            let d = self.data();
            let gm = gamma.data();
            let bt = beta.data();
            for r in 0..rows {
                let row = &d[r * width..(r + 1) * width];
                let mean = row.iter().sum::<f64>() / width as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / width as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..width {
                    let xh = (row[j] - mean) * is;
                    xhat[r * width + j] = xh;
                    out[r * width + j] = gm[j] * xh + bt[j];
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |p: &[Tensor], _: &[f64], g: &[f64]| {
                let gm = p[1].data();
                let mut gx = vec![0.0; g.len()];
                let mut ggamma = vec![0.0; width];
                let mut gbeta = vec![0.0; width];
                for r in 0..rows {
                    let gr = &g[r * width..(r + 1) * width];
                    let xr = &xhat[r * width..(r + 1) * width];
                    let mut mean_gxh = 0.0;
                    let mut mean_gxh_xh = 0.0;
                    for j in 0..width {
                        let gxh = gr[j] * gm[j];
                        mean_gxh += gxh;
                        mean_gxh_xh += gxh * xr[j];
                        ggamma[j] += gr[j] * xr[j];
                        gbeta[j] += gr[j];
                    }
                    mean_gxh /= width as f64;
                    mean_gxh_xh /= width as f64;
                    for j in 0..width {
                        let gxh = gr[j] * gm[j];
                        gx[r * width + j] = inv_std[r] * (gxh - mean_gxh - xr[j] * mean_gxh_xh);
                    }
                }
                vec![
                    p[0].requires_grad().then_some(gx),
                    p[1].requires_grad().then_some(ggamma),
                    p[2].requires_grad().then_some(gbeta),
                ]
            },
        ))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheckConfig};

    fn t(v: &[f64], s: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), s).unwrap()
    }

    #[test]
    fn matmul_identity_and_worked_case() {
        let a = Tensor::seeded_gaussian(3, &[3, 4]).unwrap();
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 5] = 1.0;
        }
        let i4 = t(&eye, &[4, 4]);
        assert_eq!(a.matmul(&i4).unwrap().to_vec(), a.to_vec());

        let m = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let ones = t(&[1.0, 1.0], &[2, 1]);
        let r = m.matmul(&ones).unwrap();
        assert_eq!(r.shape(), &[2, 1]);
        assert_eq!(r.to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[2, 3]).unwrap();
        assert!(matches!(a.matmul(&b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let a = Tensor::seeded_gaussian(11, &[3, 4]).unwrap().into_param();
        let b = Tensor::seeded_gaussian(12, &[4, 2]).unwrap().into_param();
        let report = check_gradients(
            &[a.clone(), b.clone()],
            || Ok(a.matmul(&b)?.sum_all()),
            &GradCheckConfig::strict(1e-6),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn analytic_activation_values() {
        let z = t(&[0.0], &[1]);
        assert_eq!(z.sigmoid().item(), 0.5);
        assert_eq!(z.silu().item(), 0.0);
        assert!((z.softplus().item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_derivative_at_one() {
        let x = t(&[1.0], &[1]).into_param();
        let report = check_gradients(std::slice::from_ref(&x), || Ok(x.sigmoid().sum_all()), &GradCheckConfig::strict(1e-6)).unwrap();
        assert!(report.passed(), "{report:?}");
        let s = sigmoid(1.0);
        let g = x.grad().unwrap()[0];
        assert!((g - s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn broadcast_rules() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        assert_eq!(a.add(&Tensor::zeros(&[3]).unwrap()).unwrap().shape(), &[2, 3]);
        assert_eq!(a.add(&Tensor::zeros(&[2, 1]).unwrap()).unwrap().shape(), &[2, 3]);
        assert!(a.add(&Tensor::zeros(&[2]).unwrap()).is_err());
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let col = t(&[10.0, 20.0], &[2, 1]);
        assert_eq!(x.mul(&col).unwrap().to_vec(), vec![10.0, 20.0, 30.0, 80.0, 100.0, 120.0]);
    }

    #[test]
    fn elementwise_gradients() {
        let a = Tensor::seeded_gaussian(21, &[3, 4]).unwrap().into_param();
        let b = Tensor::seeded_gaussian(22, &[4]).unwrap().into_param();
        let c = Tensor::seeded_gaussian(23, &[3, 1]).unwrap().into_param();
        let cfg = GradCheckConfig::default();
        let report = check_gradients(
            &[a.clone(), b.clone(), c.clone()],
            || {
                let s = a.add(&b)?.mul(&c)?.sub(&a.tanh())?;
                let u = s.silu().add(&a.softplus())?.add(&b.exp().sigmoid())?;
                let w = u.div(&c.square().add_scalar(1.0))?;
                Ok(w.add(&a.scale(0.3).neg())?.add(&c.square().add_scalar(0.5).sqrt().ln())?.sum_all())
            },
            &cfg,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let a = Tensor::from_vec(vec![-1.2, 0.7, 2.0, -0.3], &[4]).unwrap().into_param();
        let r = check_gradients(std::slice::from_ref(&a), || Ok(a.relu().square().sum_all()), &GradCheckConfig::default()).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn pool_values_and_gradients() {
        let x = t(&[1.0, 3.0], &[2]).into_param();
        assert_eq!(x.pool(0, PoolKind::Avg).unwrap().item(), 2.0);
        assert_eq!(x.pool(0, PoolKind::Max).unwrap().item(), 3.0);

        x.pool(0, PoolKind::Avg).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.5, 0.5]);

        let tie = t(&[2.0, 2.0], &[2]).into_param();
        tie.pool(0, PoolKind::Max).unwrap().sum_all().backward().unwrap();
        assert_eq!(tie.grad().unwrap(), vec![1.0, 0.0]);

        assert!(matches!(x.pool(1, PoolKind::Avg), Err(TensorError::InvalidAxis { .. })));
    }

    #[test]
    fn pool_keeps_axis() {
        let x = Tensor::seeded_gaussian(5, &[4, 3]).unwrap();
        assert_eq!(x.pool(0, PoolKind::Max).unwrap().shape(), &[1, 3]);
        assert_eq!(x.pool(1, PoolKind::Avg).unwrap().shape(), &[4, 1]);
    }

    #[test]
    fn reductions_softmax_layernorm_gradients() {
        let x = Tensor::seeded_gaussian(31, &[3, 5]).unwrap().into_param();
        let w = Tensor::seeded_gaussian(32, &[3, 5]).unwrap();
        let gamma = Tensor::seeded_gaussian(33, &[5]).unwrap().into_param();
        let beta = Tensor::seeded_gaussian(34, &[5]).unwrap().into_param();
        let report = check_gradients(
            &[x.clone(), gamma.clone(), beta.clone()],
            || {
                let a = x.softmax(1)?.mul(&w)?.sum_all();
                let b = x.softmax(0)?.mul(&w)?.sum_axis(0)?.square().sum_all();
                let c = x.layer_norm(&gamma, &beta, 1e-5)?.mul(&w)?.sum_all();
                let d = x.pool(0, PoolKind::Max)?.add(&x.pool(1, PoolKind::Avg)?.sum_axis(0)?)?.sum_all();
                a.add(&b)?.add(&c)?.add(&d)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::seeded_gaussian(4, &[6, 7]).unwrap();
        let s = x.softmax(1).unwrap();
        for r in 0..6 {
            let sum: f64 = s.data()[r * 7..(r + 1) * 7].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let x = t(&[-2.0, 0.5, 3.0], &[3]).into_param();
        x.clamp(0.0, 1.0).sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn disconnected_parameter_is_untouched_by_backward() {
        let x = t(&[1.0], &[1]).into_param();
        let unused = t(&[1.0, 2.0], &[2]).into_param();
        x.square().sum_all().backward().unwrap();
        assert!(unused.grad().is_none());
    }
}
