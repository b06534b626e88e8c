//! Raw selective-scan kernels and the differentiable fused scan op.
//!
//! Layouts: `x`, `delta`: `[T, Di]`; `a_log`: `[Di, N]`; `b`, `c`: `[T, N]`;
//! `d_skip`: `[Di]`. Hidden states are stored `[T, Di, N]`.

use rayon::prelude::*;

use crate::tensor::{Result, Tensor, TensorError};

/// Which recurrence evaluator to use. Both produce the same values up to
/// floating-point reassociation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanKernel {
    #[default]
    Sequential,
    Parallel,
}

/// An affine map `h -> a h + b`.
pub type Affine = (f64, f64);

/// Apply `earlier` then `later`: `(a1, b1)` then `(a2, b2)` gives
/// `(a1 a2, a2 b1 + b2)`.
#[inline]
pub fn combine(earlier: Affine, later: Affine) -> Affine {
    (earlier.0 * later.0, later.0 * earlier.1 + later.1)
}

/// `h_t = a_t h_{t-1} + b_t` from `h_{-1} = 0`, one step at a time.
pub fn recurrence_sequential(steps: &[Affine]) -> Vec<f64> {
    let mut h = 0.0;
    steps
        .iter()
        .map(|&(a, b)| {
            h = a * h + b;
            h
        })
        .collect()
}

/// Same recurrence via a work-efficient (up-sweep / down-sweep) prefix scan
/// over the affine maps.
pub fn recurrence_parallel(steps: &[Affine]) -> Vec<f64> {
    let n = steps.len();
    if n == 0 {
        return Vec::new();
    }
    let size = n.next_power_of_two();
    let mut tree: Vec<Affine> = steps.to_vec();
    tree.resize(size, (1.0, 0.0));

    let mut stride = 1;
    while stride < size {
        for k in (2 * stride - 1..size).step_by(2 * stride) {
            tree[k] = combine(tree[k - stride], tree[k]);
        }
        stride *= 2;
    }
    tree[size - 1] = (1.0, 0.0);
    let mut stride = size / 2;
    while stride >= 1 {
        for k in (2 * stride - 1..size).step_by(2 * stride) {
            let left = tree[k - stride];
            tree[k - stride] = tree[k];
            tree[k] = combine(tree[k], left);
        }
        stride /= 2;
    }
    // tree now holds the exclusive prefix; fold in each element for the inclusive value.
    (0..n).map(|i| combine(tree[i], steps[i]).1).collect()
}

/// Zero-order hold for `A`, Euler for `B`: `A_bar = exp(delta * A)`,
/// `B_bar = delta * B`, with `A = -exp(a_log)`.
///
/// Returns `(A_bar, B_bar)`, both `[T, Di, N]`.
pub fn discretize(delta: &Tensor, a_log: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let (t_len, di) = dims2(delta, "discretize")?;
    let n = a_log.shape()[a_log.rank() - 1];
    if a_log.shape() != [di, n] || b.shape() != [t_len, n] {
        return Err(TensorError::ShapeMismatch {
            op: "discretize",
            lhs: a_log.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let dl = delta.data();
    if let Some(bad) = dl.iter().find(|v| **v <= 0.0) {
        return Err(TensorError::Contract(format!("discretization step must be > 0, got {bad}")));
    }
    let al = a_log.data();
    let bd = b.data();
    let mut a_bar = Vec::with_capacity(t_len * di * n);
    let mut b_bar = Vec::with_capacity(t_len * di * n);
    for t in 0..t_len {
        for i in 0..di {
            let dt = dl[t * di + i];
            for s in 0..n {
                a_bar.push((dt * -al[i * n + s].exp()).exp());
                b_bar.push(dt * bd[t * n + s]);
            }
        }
    }
    Ok((
        Tensor::from_vec(a_bar, &[t_len, di, n])?,
        Tensor::from_vec(b_bar, &[t_len, di, n])?,
    ))
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

struct ScanDims {
    t: usize,
    di: usize,
    n: usize,
}

/// Original time indices visited by a scan that starts at `start` and wraps.
fn cyclic_order(t_len: usize, start: usize) -> Vec<usize> {
    (0..t_len).map(|k| (start + k) % t_len).collect()
}

/// Runs `h = a_t h + b_t` independently for every (i, s) channel, visiting
/// time steps in `order` (or its reverse). `a`, `b` and the result are laid
/// out `[T, Di, N]` in original time.
fn run_channels(a: &[f64], b: &[f64], dims: &ScanDims, order: &[usize], kernel: ScanKernel, reverse: bool) -> Vec<f64> {
    let ScanDims { t: t_len, di, n } = *dims;
    let width = di * n;
    let mut h = vec![0.0; t_len * width];
    let visit: Vec<usize> = if reverse {
        order.iter().rev().copied().collect()
    } else {
        order.to_vec()
    };
    match kernel {
        ScanKernel::Sequential => {
            let mut state = vec![0.0; width];
            for &t in &visit {
                let base = t * width;
                let (ar, br) = (&a[base..base + width], &b[base..base + width]);
                for j in 0..width {
                    state[j] = ar[j] * state[j] + br[j];
                }
                h[base..base + width].copy_from_slice(&state);
            }
        }
        ScanKernel::Parallel => {
            let cols: Vec<Vec<f64>> = (0..width)
                .into_par_iter()
                .map(|j| {
                    let steps: Vec<Affine> = visit.iter().map(|&t| (a[t * width + j], b[t * width + j])).collect();
                    recurrence_parallel(&steps)
                })
                .collect();
            for (j, col) in cols.iter().enumerate() {
                for (k, v) in col.iter().enumerate() {
                    h[visit[k] * width + j] = *v;
                }
            }
        }
    }
    h
}

/// Differentiable selective scan:
/// `h_t = A_bar_t * h_{t-1} + B_bar_t x_t`, `y_t = C_t . h_t + d_skip * x_t`.
pub fn selective_scan_op(
    x: &Tensor,
    delta: &Tensor,
    a_log: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d_skip: &Tensor,
    kernel: ScanKernel,
) -> Result<Tensor> {
    fused_scan(x, delta, a_log, b, c, d_skip, None, kernel)
}

/// Mixture over all cyclic start positions, `sum_s w_s y^(s)`, where
/// `y^(s)` is the scan that starts at segment `s` and wraps around, reported
/// in original time. `weights: [T]`. The coefficients are discretised once
/// and shared by every start.
pub fn cyclic_scan_mixture_op(
    x: &Tensor,
    delta: &Tensor,
    a_log: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d_skip: &Tensor,
    weights: &Tensor,
    kernel: ScanKernel,
) -> Result<Tensor> {
    if weights.shape() != [x.shape()[0]] {
        return Err(TensorError::ShapeMismatch {
            op: "cyclic_scan_mixture",
            lhs: x.shape().to_vec(),
            rhs: weights.shape().to_vec(),
        });
    }
    fused_scan(x, delta, a_log, b, c, d_skip, Some(weights), kernel)
}

#[allow(clippy::too_many_arguments)]
fn fused_scan(
    x: &Tensor,
    delta: &Tensor,
    a_log: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d_skip: &Tensor,
    weights: Option<&Tensor>,
    kernel: ScanKernel,
) -> Result<Tensor> {
    let (t_len, di) = dims2(x, "selective_scan")?;
    let n = a_log.shape()[a_log.rank() - 1];
    if delta.shape() != x.shape()
        || a_log.shape() != [di, n]
        || b.shape() != [t_len, n]
        || c.shape() != [t_len, n]
        || d_skip.shape() != [di]
    {
        return Err(TensorError::ShapeMismatch {
            op: "selective_scan",
            lhs: x.shape().to_vec(),
            rhs: c.shape().to_vec(),
        });
    }
    let dims = ScanDims { t: t_len, di, n };
    let width = di * n;
    let (starts, w): (Vec<usize>, Vec<f64>) = match weights {
        Some(wt) => ((0..t_len).collect(), wt.to_vec()),
        None => (vec![0], vec![1.0]),
    };

    let a_cont: Vec<f64> = a_log.data().iter().map(|v| -v.exp()).collect();
    let mut a_bar = vec![0.0; t_len * width];
    let mut bx = vec![0.0; t_len * width];
    {
        let dl = delta.data();
        if let Some(bad) = dl.iter().find(|v| **v <= 0.0) {
            return Err(TensorError::Contract(format!("discretization step must be > 0, got {bad}")));
        }
        let xd = x.data();
        let bd = b.data();
        for t in 0..t_len {
            for i in 0..di {
                let dt = dl[t * di + i];
                let dtx = dt * xd[t * di + i];
                let k0 = (t * di + i) * n;
                for s in 0..n {
                    a_bar[k0 + s] = (dt * a_cont[i * n + s]).exp();
                    bx[k0 + s] = dtx * bd[t * n + s];
                }
            }
        }
    }

    let orders: Vec<Vec<usize>> = starts.iter().map(|&s| cyclic_order(t_len, s)).collect();
    let mut hs = Vec::with_capacity(starts.len());
    let mut ys = Vec::with_capacity(starts.len());
    let mut y = vec![0.0; t_len * di];
    {
        let xd = x.data();
        let cd = c.data();
        let dd = d_skip.data();
        for (order, &wk) in orders.iter().zip(&w) {
            let h = run_channels(&a_bar, &bx, &dims, order, kernel, false);
            let mut ys_k = vec![0.0; t_len * di];
            for t in 0..t_len {
                let crow = &cd[t * n..(t + 1) * n];
                for i in 0..di {
                    let hrow = &h[(t * di + i) * n..(t * di + i + 1) * n];
                    let v = crow.iter().zip(hrow).map(|(c, h)| c * h).sum::<f64>() + dd[i] * xd[t * di + i];
                    ys_k[t * di + i] = v;
                    y[t * di + i] += wk * v;
                }
            }
            hs.push(h);
            if weights.is_some() {
                ys.push(ys_k);
            }
        }
    }

    let mut parents = vec![x.clone(), delta.clone(), a_log.clone(), b.clone(), c.clone(), d_skip.clone()];
    parents.extend(weights.cloned());
    Ok(Tensor::from_op(
        vec![t_len, di],
        y,
        parents,
        move |p: &[Tensor], _: &[f64], gy: &[f64]| {
            let xd = p[0].data();
            let dl = p[1].data();
            let bd = p[3].data();
            let cd = p[4].data();
            let dd = p[5].data();

            let mut gx = vec![0.0; t_len * di];
            let mut gdelta = vec![0.0; t_len * di];
            let mut ga_log = vec![0.0; di * n];
            let mut gb = vec![0.0; t_len * n];
            let mut gc = vec![0.0; t_len * n];
            let mut gd = vec![0.0; di];
            let mut shifted_a = vec![0.0; t_len * width];
            let mut drive = vec![0.0; t_len * width];

            for (k, order) in orders.iter().enumerate() {
                let wk = w[k];
                let h = &hs[k];
                // Adjoint of h along the visiting order:
                // gh_t = g_t C_t + A_bar_next(t) gh_next(t).
                for (pos, &t) in order.iter().enumerate() {
                    let dst = &mut shifted_a[t * width..(t + 1) * width];
                    match order.get(pos + 1) {
                        Some(&nt) => dst.copy_from_slice(&a_bar[nt * width..(nt + 1) * width]),
                        None => dst.fill(0.0),
                    }
                    for i in 0..di {
                        let g = wk * gy[t * di + i];
                        for s in 0..n {
                            drive[(t * di + i) * n + s] = g * cd[t * n + s];
                        }
                    }
                }
                let gh = run_channels(&shifted_a, &drive, &dims, order, kernel, true);

                for (pos, &t) in order.iter().enumerate() {
                    let prev = if pos > 0 { Some(order[pos - 1]) } else { None };
                    for i in 0..di {
                        let ti = t * di + i;
                        let xv = xd[ti];
                        let dt = dl[ti];
                        let g = wk * gy[ti];
                        gd[i] += g * xv;
                        let mut acc_x = g * dd[i];
                        let mut acc_dt = 0.0;
                        for s in 0..n {
                            let kk = ti * n + s;
                            let a_c = a_cont[i * n + s];
                            let h_prev = prev.map_or(0.0, |pt| h[(pt * di + i) * n + s]);
                            let ghk = gh[kk];
                            gc[t * n + s] += g * h[kk];
                            acc_x += ghk * dt * bd[t * n + s];
                            gb[t * n + s] += ghk * dt * xv;
                            let dh_da_bar = ghk * h_prev * a_bar[kk];
                            acc_dt += ghk * bd[t * n + s] * xv + dh_da_bar * a_c;
                            // d/d a_log of exp(dt * -exp(a_log)) = A_bar * dt * A
                            ga_log[i * n + s] += dh_da_bar * dt * a_c;
                        }
                        gx[ti] += acc_x;
                        gdelta[ti] += acc_dt;
                    }
                }
            }
            let mut grads = vec![
                p[0].requires_grad().then_some(gx),
                p[1].requires_grad().then_some(gdelta),
                p[2].requires_grad().then_some(ga_log),
                p[3].requires_grad().then_some(gb),
                p[4].requires_grad().then_some(gc),
                p[5].requires_grad().then_some(gd),
            ];
            if let Some(wt) = p.get(6) {
                grads.push(wt.requires_grad().then(|| {
                    ys.iter()
                        .map(|yk| yk.iter().zip(gy).map(|(a, b)| a * b).sum())
                        .collect()
                }));
            }
            grads
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheckConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_pair(rng: &mut ChaCha8Rng) -> Affine {
        (rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn discretize_limits() {
        let a_log = Tensor::from_vec(vec![0.0], &[1, 1]).unwrap(); // A = -1
        let b = Tensor::from_vec(vec![3.0], &[1, 1]).unwrap();
        let half = Tensor::from_vec(vec![std::f64::consts::LN_2], &[1, 1]).unwrap();
        let (a_bar, _) = discretize(&half, &a_log, &b).unwrap();
        assert!((a_bar.item() - 0.5).abs() < 1e-15);

        let tiny = Tensor::from_vec(vec![1e-12], &[1, 1]).unwrap();
        let (a_bar, b_bar) = discretize(&tiny, &a_log, &b).unwrap();
        assert!((a_bar.item() - 1.0).abs() < 1e-11);
        assert!(b_bar.item().abs() < 1e-11);

        let zero = Tensor::from_vec(vec![0.0], &[1, 1]).unwrap();
        assert!(matches!(discretize(&zero, &a_log, &b), Err(TensorError::Contract(_))));
    }

    #[test]
    fn discretize_matches_direct_formula() {
        let (t, di, n) = (3, 4, 5);
        let delta = Tensor::seeded_gaussian(1, &[t, di]).unwrap().softplus();
        let a_log = Tensor::seeded_gaussian(2, &[di, n]).unwrap();
        let b = Tensor::seeded_gaussian(3, &[t, n]).unwrap();
        let (a_bar, b_bar) = discretize(&delta, &a_log, &b).unwrap();
        for tt in 0..t {
            for i in 0..di {
                for s in 0..n {
                    let dt = delta.get(&[tt, i]);
                    let a = -(a_log.get(&[i, s]).exp());
                    assert!((a_bar.get(&[tt, i, s]) - (dt * a).exp()).abs() < 1e-12);
                    assert!((b_bar.get(&[tt, i, s]) - dt * b.get(&[tt, s])).abs() < 1e-12);
                    assert!(a_bar.get(&[tt, i, s]) < 1.0);
                }
            }
        }
    }

    #[test]
    fn combine_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (p, q, r) = (rand_pair(&mut rng), rand_pair(&mut rng), rand_pair(&mut rng));
            let left = combine(combine(p, q), r);
            let right = combine(p, combine(q, r));
            assert!((left.0 - right.0).abs() < 1e-12 && (left.1 - right.1).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn parallel_recurrence_matches_sequential(len in 1usize..70, seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let steps: Vec<Affine> = (0..len).map(|_| rand_pair(&mut rng)).collect();
            let a = recurrence_sequential(&steps);
            let b = recurrence_parallel(&steps);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_step_is_exact() {
        let steps = [(0.3, 1.7)];
        assert_eq!(recurrence_parallel(&steps), recurrence_sequential(&steps));
    }

    fn scan_inputs(seed: u64, t: usize, di: usize, n: usize) -> [Tensor; 6] {
        [
            Tensor::seeded_gaussian(seed, &[t, di]).unwrap(),
            Tensor::seeded_gaussian(seed + 1, &[t, di]).unwrap().softplus(),
            Tensor::seeded_gaussian(seed + 2, &[di, n]).unwrap().scale(0.5),
            Tensor::seeded_gaussian(seed + 3, &[t, n]).unwrap(),
            Tensor::seeded_gaussian(seed + 4, &[t, n]).unwrap(),
            Tensor::seeded_gaussian(seed + 5, &[di]).unwrap(),
        ]
    }

    #[test]
    fn fused_op_gradients_both_kernels() {
        for kernel in [ScanKernel::Sequential, ScanKernel::Parallel] {
            let ins: Vec<Tensor> = scan_inputs(40, 5, 3, 4).into_iter().map(Tensor::into_param).collect();
            let w = Tensor::seeded_gaussian(99, &[5, 3]).unwrap();
            let r = check_gradients(
                &ins,
                || {
                    let y = selective_scan_op(&ins[0], &ins[1], &ins[2], &ins[3], &ins[4], &ins[5], kernel)?;
                    Ok(y.mul(&w)?.sum_all())
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(r.passed(), "{kernel:?}: {r:?}");
        }
    }

    #[test]
    fn mixture_op_gradients_both_kernels() {
        for kernel in [ScanKernel::Sequential, ScanKernel::Parallel] {
            let mut ins: Vec<Tensor> = scan_inputs(50, 4, 3, 2).into_iter().map(Tensor::into_param).collect();
            ins.push(Tensor::seeded_gaussian(51, &[4]).unwrap().softmax(0).unwrap().into_param());
            let w = Tensor::seeded_gaussian(98, &[4, 3]).unwrap();
            let r = check_gradients(
                &ins,
                || {
                    let y = cyclic_scan_mixture_op(&ins[0], &ins[1], &ins[2], &ins[3], &ins[4], &ins[5], &ins[6], kernel)?;
                    Ok(y.mul(&w)?.sum_all())
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(r.passed(), "{kernel:?}: {r:?}");
        }
    }

    #[test]
    fn kernels_agree_on_op() {
        let ins = scan_inputs(7, 33, 6, 5);
        let seq = selective_scan_op(&ins[0], &ins[1], &ins[2], &ins[3], &ins[4], &ins[5], ScanKernel::Sequential).unwrap();
        let par = selective_scan_op(&ins[0], &ins[1], &ins[2], &ins[3], &ins[4], &ins[5], ScanKernel::Parallel).unwrap();
        for (a, b) in seq.to_vec().iter().zip(par.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
