//! Self-check suites behind `scan-check` and `grad-check`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{LabelMatrix, VideoRecord};
use crate::model::{AvMamba, ModelConfig};
use crate::ssm::{
    selective_scan_backward, selective_scan_dynamic, selective_scan_parallel, selective_scan_sequential, MambaBlock,
    MambaConfig, ScanKernel, SsmParams,
};
use crate::tensor::gradcheck::{check_gradients_named, GradCheckConfig, GradReport};
use crate::tensor::params::ParamStore;
use crate::tensor::{PoolKind, Result, Tensor};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Shifts every entry of every parameter by `scale` standard normals.
pub fn perturb_params(store: &ParamStore, seed: u64, scale: f64) -> Result<()> {
    for (i, (_, p)) in store.named().iter().enumerate() {
        let noise = Tensor::seeded_gaussian(seed.wrapping_add(i as u64), p.shape())?.to_vec();
        let v: Vec<f64> = p.to_vec().iter().zip(noise).map(|(a, n)| a + scale * n).collect();
        p.set_data(&v)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanCase {
    pub t: usize,
    pub d: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ScanCheckReport {
    pub cases: usize,
    /// Parallel prefix scan against the step-by-step recurrence.
    pub parallel_vs_sequential: f64,
    /// Backward scan against reversed forward on reversed input.
    pub backward_vs_reversed: f64,
    /// Dynamic scan with a one-hot start against the forward scan.
    pub one_hot_vs_forward: f64,
    /// Dynamic scan against the term-by-term mixture.
    pub mixture_vs_terms: f64,
    pub worst_case: Option<ScanCase>,
    pub seconds: f64,
}

impl ScanCheckReport {
    pub fn passed(&self, parallel_tol: f64, mixture_tol: f64) -> bool {
        self.parallel_vs_sequential < parallel_tol
            && self.backward_vs_reversed == 0.0
            && self.one_hot_vs_forward == 0.0
            && self.mixture_vs_terms < mixture_tol
    }
}

/// `sum_s softmax(logits)_s * unrotate(forward(rotate(x, s)), s)`, one full
/// forward scan per start.
pub fn mixture_reference(x: &Tensor, params: &SsmParams, logits: &[f64]) -> Result<Vec<f64>> {
    let t_len = x.shape()[0];
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    let mut out = vec![0.0; x.numel()];
    for (s, l) in logits.iter().enumerate() {
        let w = (l - mx).exp() / z;
        let y = selective_scan_sequential(&x.rotate(0, s)?, params)?.rotate(0, (t_len - s) % t_len)?;
        for (o, v) in out.iter_mut().zip(y.to_vec()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Random shapes with `T in 1..=64`, `D in 1..=16`, `N in 1..=16`.
pub fn scan_oracle_suite(seed: u64, cases: usize) -> Result<ScanCheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ScanCheckReport {
        cases,
        ..ScanCheckReport::default()
    };
    let mut worst = 0.0;
    for _ in 0..cases {
        let case = ScanCase {
            t: rng.gen_range(1..=64),
            d: rng.gen_range(1..=16),
            n: rng.gen_range(1..=16),
        };
        let case_seed: u64 = rng.gen();
        let mut store = ParamStore::new(case_seed);
        let params = SsmParams::new(&mut store, "ssm", case.d, case.n, case.d.div_ceil(4))?;
        perturb_params(&store, case_seed ^ 0x5eed, 0.1)?;
        let x = Tensor::seeded_gaussian(case_seed.wrapping_add(1), &[case.t, case.d])?;

        let seq = selective_scan_sequential(&x, &params)?;
        let par = selective_scan_parallel(&x, &params)?;
        let dev = max_abs_diff(&par.to_vec(), &seq.to_vec());
        if dev > worst || report.worst_case.is_none() {
            worst = dev;
            report.worst_case = Some(case);
        }
        report.parallel_vs_sequential = report.parallel_vs_sequential.max(dev);

        let back = selective_scan_backward(&x, &params)?;
        let manual = selective_scan_sequential(&x.reverse(0)?, &params)?.reverse(0)?;
        report.backward_vs_reversed = report.backward_vs_reversed.max(max_abs_diff(&back.to_vec(), &manual.to_vec()));

        let hot: usize = rng.gen_range(0..case.t);
        let mut one_hot = vec![f64::NEG_INFINITY; case.t];
        one_hot[hot] = 0.0;
        let dynm = selective_scan_dynamic(&x, &params, &Tensor::from_vec(one_hot, &[case.t])?)?;
        let rotated = selective_scan_sequential(&x.rotate(0, hot)?, &params)?.rotate(0, (case.t - hot) % case.t)?;
        report.one_hot_vs_forward = report.one_hot_vs_forward.max(max_abs_diff(&dynm.to_vec(), &rotated.to_vec()));

        let logits = Tensor::seeded_gaussian(case_seed.wrapping_add(2), &[case.t])?;
        let mix = selective_scan_dynamic(&x, &params, &logits)?;
        let oracle = mixture_reference(&x, &params, &logits.to_vec())?;
        report.mixture_vs_terms = report.mixture_vs_terms.max(max_abs_diff(&mix.to_vec(), &oracle));
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub report: GradReport,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct GradSuiteReport {
    pub entries: Vec<GradCheckEntry>,
    pub seconds: f64,
}

impl GradSuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.report.passed())
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.report.max_rel_err()).fold(0.0, f64::max)
    }
}

/// Tiny configuration used by the full-model gradient check.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        segments: 4,
        d_model: 8,
        classes: 3,
        d_state: 4,
        text_dim: 6,
        d_audio: 5,
        d_visual: 7,
        ..ModelConfig::default()
    }
}

/// A record with mixed positive, negative and null pseudo-labels.
pub fn tiny_record(cfg: &ModelConfig, seed: u64) -> Result<VideoRecord> {
    let (t, c) = (cfg.segments, cfg.classes);
    let mut pa = LabelMatrix::zeros(t, c);
    let mut pv = LabelMatrix::zeros(t, c);
    for s in 0..t {
        pa.set(s, (s + 1) % c, true);
        if s % 2 == 0 {
            pv.set(s, s % c, true);
        }
    }
    pv.set_null(t - 1);
    Ok(VideoRecord {
        video_id: format!("tiny{seed}"),
        audio: Tensor::seeded_gaussian(seed, &[t, cfg.d_audio])?,
        visual: Tensor::seeded_gaussian(seed.wrapping_add(100), &[t, cfg.d_visual])?,
        video_label: (0..c).map(|k| k % 2 == 0 || k == 1).collect(),
        pseudo_a: pa,
        pseudo_v: pv,
        discard: false,
        audio_path: None,
        visual_path: None,
    })
}

fn leaf(seed: u64, shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::seeded_gaussian(seed, shape)?.into_param())
}

fn named(tensors: &[(&str, &Tensor)]) -> Vec<(String, Tensor)> {
    tensors.iter().map(|(n, t)| (n.to_string(), (*t).clone())).collect()
}

/// Finite-difference checks over every differentiable op, the scan variants
/// on both kernels, a Mamba block and the full tiny model.
pub fn gradient_suite(seed: u64, tolerance: f64) -> Result<GradSuiteReport> {
    let start = Instant::now();
    let cfg = GradCheckConfig::strict(tolerance);
    let mut entries = Vec::new();
    let mut run = |name: &str, params: Vec<(String, Tensor)>, f: &mut dyn FnMut() -> Result<Tensor>| -> Result<()> {
        let t0 = Instant::now();
        let report = check_gradients_named(&params, f, &cfg)?;
        entries.push(GradCheckEntry {
            name: name.to_string(),
            report,
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(())
    };

    let a = leaf(seed, &[3, 4])?;
    let b = leaf(seed + 1, &[4])?;
    let c = leaf(seed + 2, &[3, 1])?;
    let w = Tensor::seeded_gaussian(seed + 3, &[3, 4])?;
    let pos = Tensor::from_vec(
        Tensor::seeded_gaussian(seed + 4, &[3, 4])?.to_vec().iter().map(|v| v.abs() + 0.5).collect(),
        &[3, 4],
    )?
    .into_param();
    // Entries kept at least 0.2 from the relu / clamp kinks.
    let kinked = Tensor::from_vec(
        Tensor::seeded_gaussian(seed + 5, &[3, 4])?
            .to_vec()
            .iter()
            .map(|v| if v.abs() < 0.2 { v.signum() * 0.2 + v } else { *v })
            .collect(),
        &[3, 4],
    )?
    .into_param();

    let abc = named(&[("a", &a), ("b", &b), ("c", &c)]);
    run("add", abc.clone(), &mut || a.add(&b)?.mul(&w)?.sum_all().add(&a.add(&c)?.square().sum_all()))?;
    run("sub", abc.clone(), &mut || a.sub(&b)?.mul(&w)?.sum_all().add(&c.sub(&a)?.square().sum_all()))?;
    run("mul", abc.clone(), &mut || a.mul(&b)?.mul(&c)?.mul(&w)?.sum_all().add(&a.mul(&a)?.sum_all()))?;
    run("div", named(&[("a", &a), ("pos", &pos)]), &mut || Ok(a.div(&pos)?.mul(&w)?.sum_all()))?;
    let unary: [(&str, fn(&Tensor) -> Tensor); 9] = [
        ("sigmoid", Tensor::sigmoid),
        ("silu", Tensor::silu),
        ("softplus", Tensor::softplus),
        ("exp", Tensor::exp),
        ("tanh", Tensor::tanh),
        ("neg", Tensor::neg),
        ("square", Tensor::square),
        ("scale", |t| t.scale(-1.7)),
        ("add_scalar", |t| t.add_scalar(0.3)),
    ];
    for (name, f) in unary {
        run(name, named(&[("a", &a)]), &mut || Ok(f(&a).mul(&w)?.sum_all()))?;
    }
    run("ln", named(&[("pos", &pos)]), &mut || Ok(pos.ln().mul(&w)?.sum_all()))?;
    run("sqrt", named(&[("pos", &pos)]), &mut || Ok(pos.sqrt().mul(&w)?.sum_all()))?;
    run("relu", named(&[("x", &kinked)]), &mut || Ok(kinked.relu().mul(&w)?.sum_all()))?;
    run("clamp", named(&[("x", &kinked)]), &mut || Ok(kinked.clamp(-0.9, 0.9).mul(&w)?.sum_all()))?;

    let m1 = leaf(seed + 6, &[3, 5])?;
    let m2 = leaf(seed + 7, &[5, 4])?;
    run("matmul", named(&[("lhs", &m1), ("rhs", &m2)]), &mut || Ok(m1.matmul(&m2)?.mul(&w)?.sum_all()))?;
    run("sum_all", named(&[("a", &a)]), &mut || Ok(a.mul(&w)?.sum_all().square()))?;
    run("mean_all", named(&[("a", &a)]), &mut || Ok(a.mul(&w)?.mean_all().square()))?;
    run("sum_axis", named(&[("a", &a)]), &mut || {
        a.sum_axis(0)?.square().sum_all().add(&a.sum_axis(1)?.square().sum_all())
    })?;
    run("pool", named(&[("a", &a)]), &mut || {
        let mx = a.pool(0, PoolKind::Max)?.square().sum_all();
        mx.add(&a.pool(1, PoolKind::Avg)?.square().sum_all())
    })?;
    run("softmax", named(&[("a", &a)]), &mut || {
        a.softmax(1)?.mul(&w)?.sum_all().add(&a.softmax(0)?.mul(&w)?.square().sum_all())
    })?;
    let gamma = leaf(seed + 8, &[4])?;
    let beta = leaf(seed + 9, &[4])?;
    run("layer_norm", named(&[("x", &a), ("gamma", &gamma), ("beta", &beta)]), &mut || {
        Ok(a.layer_norm(&gamma, &beta, 1e-5)?.mul(&w)?.sum_all())
    })?;
    let cw = leaf(seed + 10, &[4, 3])?;
    let cb = leaf(seed + 11, &[4])?;
    let seq = leaf(seed + 12, &[5, 4])?;
    let w54 = Tensor::seeded_gaussian(seed + 13, &[5, 4])?;
    run("conv1d_depthwise", named(&[("x", &seq), ("weight", &cw), ("bias", &cb)]), &mut || {
        Ok(seq.conv1d_depthwise(3, &cw, &cb)?.mul(&w54)?.sum_all())
    })?;
    run("shape_ops", named(&[("x", &seq), ("a", &a)]), &mut || {
        let r = seq.reverse(0)?.mul(&w54)?.sum_all();
        let o = seq.rotate(0, 2)?.mul(&w54)?.square().sum_all();
        let n = seq.narrow(0, 1, 3)?.transpose()?.reshape(&[12])?.mul(&a.reshape(&[12])?)?.sum_all();
        let cat = Tensor::concat(&[&seq, &a], 0)?.square().sum_all();
        r.add(&o)?.add(&n)?.add(&cat)
    })?;

    for kernel in [ScanKernel::Sequential, ScanKernel::Parallel] {
        let mut store = ParamStore::new(seed + 20);
        let mut p = SsmParams::new(&mut store, "ssm", 3, 4, 2)?;
        p.kernel = kernel;
        let x = leaf(seed + 21, &[5, 3])?;
        let logits = leaf(seed + 22, &[5])?;
        let wy = Tensor::seeded_gaussian(seed + 23, &[5, 3])?;
        let mut params = store.named().to_vec();
        params.push(("x".into(), x.clone()));
        params.push(("start_logits".into(), logits.clone()));
        let label = format!("selective_scan_{kernel:?}").to_lowercase();
        run(&label, params, &mut || {
            let f = p.scan(&x)?;
            let b = selective_scan_backward(&x, &p)?;
            let d = selective_scan_dynamic(&x, &p, &logits)?;
            f.add(&b)?.add(&d)?.mul(&wy)?.sum_all().add(&f.square().sum_all())
        })?;
    }

    let mut store = ParamStore::new(seed + 30);
    let block = MambaBlock::new(&mut store, "block", MambaConfig::new(4))?;
    perturb_params(&store, seed + 31, 0.1)?;
    let x = leaf(seed + 32, &[5, 4])?;
    let mut params = store.named().to_vec();
    params.push(("x".into(), x.clone()));
    run("mamba_block", params, &mut || Ok(block.forward(&x)?.mul(&w54)?.sum_all()))?;

    let mcfg = tiny_model_config();
    let model = AvMamba::new(mcfg.clone(), seed + 40)?;
    perturb_params(&model.store, seed + 41, 0.05)?;
    let record = tiny_record(&mcfg, seed + 42)?;
    let input = model.input_for(&record);
    run("full_model", model.store.named().to_vec(), &mut || {
        model.loss(&model.forward(&input)?, &record)
    })?;

    Ok(GradSuiteReport {
        entries,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_suite_small_run_passes() {
        let r = scan_oracle_suite(3, 5).unwrap();
        assert_eq!(r.cases, 5);
        assert!(r.passed(1e-9, 1e-12), "{r:?}");
        assert!(r.worst_case.is_some());
    }

    #[test]
    fn single_step_mixture_is_forward() {
        let mut store = ParamStore::new(8);
        let p = SsmParams::new(&mut store, "ssm", 2, 3, 1).unwrap();
        let x = Tensor::seeded_gaussian(9, &[1, 2]).unwrap();
        let got = mixture_reference(&x, &p, &[0.4]).unwrap();
        assert_eq!(got, selective_scan_sequential(&x, &p).unwrap().to_vec());
    }

    #[test]
    fn tiny_record_matches_config() {
        let cfg = tiny_model_config();
        let r = tiny_record(&cfg, 1).unwrap();
        assert_eq!(r.audio.shape(), &[4, 5]);
        assert_eq!(r.visual.shape(), &[4, 7]);
        assert!(r.pseudo_v.is_null(3));
    }
}
