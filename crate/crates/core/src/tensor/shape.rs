use std::sync::Arc;

use super::ops::{axis_split, check_axis};
use super::{Result, Tensor, TensorError};

impl Tensor {
    /// Gather along `axis`: `out[.., k, ..] = self[.., src[k], ..]`.
    /// The backward pass scatters through the same index map.
    fn gather_axis(&self, axis: usize, src: Vec<usize>) -> Tensor {
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let new_len = src.len();
        let mut out = Vec::with_capacity(outer * new_len * inner);
        {
            let d = self.data();
            for o in 0..outer {
                for &k in &src {
                    let base = (o * len + k) * inner;
                    out.extend_from_slice(&d[base..base + inner]);
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = new_len;
        let src = Arc::new(src);
        Tensor::from_op(shape, out, vec![self.clone()], move |_: &[Tensor], _: &[f64], g: &[f64]| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for (j, &k) in src.iter().enumerate() {
                    let from = (o * new_len + j) * inner;
                    let to = (o * len + k) * inner;
                    for i in 0..inner {
                        gx[to + i] += g[from + i];
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn reverse(&self, axis: usize) -> Result<Tensor> {
        check_axis("reverse", self, axis)?;
        let len = self.shape()[axis];
        Ok(self.gather_axis(axis, (0..len).rev().collect()))
    }

    /// Cyclic shift: `out[t] = self[(t + offset) mod len]` along `axis`.
    pub fn rotate(&self, axis: usize, offset: usize) -> Result<Tensor> {
        check_axis("rotate", self, axis)?;
        let len = self.shape()[axis];
        Ok(self.gather_axis(axis, (0..len).map(|t| (t + offset) % len).collect()))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("narrow", self, axis)?;
        if len == 0 || start + len > self.shape()[axis] {
            return Err(TensorError::ShapeMismatch {
                op: "narrow",
                lhs: self.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        Ok(self.gather_axis(axis, (start..start + len).collect()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape(shape.to_vec()));
        }
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |_: &[Tensor], _: &[f64], g: &[f64]| vec![Some(g.to_vec())],
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let mut out = vec![0.0; r * c];
        {
            let d = self.data();
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
        }
        Ok(Tensor::from_op(vec![c, r], out, vec![self.clone()], move |_: &[Tensor], _: &[f64], g: &[f64]| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        check_axis("concat", first, axis)?;
        for p in &parts[1..] {
            let ok = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let (outer, _, inner) = axis_split(first.shape(), axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        {
            let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (g, &len) in guards.iter().zip(&extents) {
                    out.extend_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(Tensor::from_op(shape, out, parents, move |p: &[Tensor], _: &[f64], g: &[f64]| {
            let mut grads: Vec<Vec<f64>> = extents.iter().map(|&len| Vec::with_capacity(outer * len * inner)).collect();
            let mut cursor = 0;
            for _ in 0..outer {
                for (gp, &len) in grads.iter_mut().zip(&extents) {
                    gp.extend_from_slice(&g[cursor..cursor + len * inner]);
                    cursor += len * inner;
                }
            }
            grads
                .into_iter()
                .zip(p)
                .map(|(gp, t)| t.requires_grad().then_some(gp))
                .collect()
        }))
    }
}
