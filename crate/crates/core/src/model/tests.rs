use super::*;
use crate::data::LabelMatrix;
use crate::tensor::gradcheck::{check_gradients_named, GradCheckConfig};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain row-major `x W + b` with `x: [rows, in]`.
fn lin(x: &[f64], rows: usize, l: &Linear) -> Vec<f64> {
    let w = l.weight.to_vec();
    let (din, dout) = (l.d_in(), l.d_out());
    let b = l.bias.as_ref().map(Tensor::to_vec);
    let mut y = vec![0.0; rows * dout];
    for r in 0..rows {
        for o in 0..dout {
            let mut acc = b.as_ref().map_or(0.0, |b| b[o]);
            for i in 0..din {
                acc += x[r * din + i] * w[i * dout + o];
            }
            y[r * dout + o] = acc;
        }
    }
    y
}

fn randomize(store: &ParamStore, seed: u64, scale: f64) {
    for (i, (_, p)) in store.named().iter().enumerate() {
        let noise = Tensor::seeded_gaussian(seed.wrapping_add(i as u64), p.shape()).unwrap().to_vec();
        let v: Vec<f64> = p.to_vec().iter().zip(noise).map(|(a, n)| a + scale * n).collect();
        p.set_data(&v).unwrap();
    }
}

fn gauss(seed: u64, shape: &[usize]) -> Tensor {
    Tensor::seeded_gaussian(seed, shape).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- TSA

fn tsa(d: usize) -> (ParamStore, Tsa) {
    let mut s = ParamStore::new(3);
    let t = Tsa::new(&mut s, "tsa", d, 4, ScanKernel::Sequential).unwrap();
    (s, t)
}

#[test]
fn tsa_zero_input_gives_zero() {
    let (_, t) = tsa(4);
    let out = t.forward(&Tensor::zeros(&[3, 4]).unwrap()).unwrap();
    assert!(out.to_vec().iter().all(|v| *v == 0.0));
}

#[test]
fn tsa_weights_in_unit_interval_and_output_bounded() {
    let (s, t) = tsa(6);
    randomize(&s, 10, 0.5);
    let f = gauss(1, &[5, 6]).scale(3.0);
    let w = t.channel_weights(&f).unwrap();
    assert_eq!(w.shape(), &[1, 6]);
    let refined = f.mul(&w).unwrap();
    let sw = t.temporal_weights(&refined).unwrap();
    assert_eq!(sw.shape(), &[5, 1]);
    for v in w.to_vec().into_iter().chain(sw.to_vec()) {
        assert!(v > 0.0 && v < 1.0, "{v}");
    }
    let out = t.forward(&f).unwrap().to_vec();
    for (o, x) in out.iter().zip(f.to_vec()) {
        assert!(o.abs() <= x.abs());
    }
}

#[test]
fn tsa_matches_manual_channel_then_temporal() {
    let (s, t) = tsa(4);
    randomize(&s, 20, 0.3);
    let f = gauss(2, &[3, 4]);
    let w = t.channel_weights(&f).unwrap().to_vec();
    let fv = f.to_vec();
    let mut refined = vec![0.0; 12];
    for r in 0..3 {
        for c in 0..4 {
            refined[r * 4 + c] = fv[r * 4 + c] * w[c];
        }
    }
    let sw = t
        .temporal_weights(&Tensor::from_vec(refined.clone(), &[3, 4]).unwrap())
        .unwrap()
        .to_vec();
    let mut manual = vec![0.0; 12];
    for r in 0..3 {
        for c in 0..4 {
            manual[r * 4 + c] = refined[r * 4 + c] * sw[r];
        }
    }
    assert!(max_abs_diff(&t.forward(&f).unwrap().to_vec(), &manual) < 1e-12);
}

// ---------------------------------------------------------------- AMF

fn amf(t: usize, d: usize) -> (ParamStore, Amf) {
    let mut s = ParamStore::new(5);
    let a = Amf::new(
        &mut s,
        "amf",
        AmfDims {
            d_model: d,
            d_inner: 2 * d,
            d_state: 4,
            dt_rank: 1,
            conv_kernel: 3,
            segments: t,
            kernel: ScanKernel::Sequential,
        },
    )
    .unwrap();
    (s, a)
}

#[test]
fn amf_shapes() {
    let (_, a) = amf(5, 6);
    let (x, y, m) = a.forward(&gauss(1, &[5, 6]), &gauss(2, &[5, 6])).unwrap();
    for o in [x, y, m] {
        assert_eq!(o.shape(), &[5, 6]);
    }
}

#[test]
fn amf_hard_off_ignores_shared_parameters() {
    let (_, mut a) = amf(4, 3);
    a.set_sharing(false);
    let (fa, fv) = (gauss(1, &[4, 3]), gauss(2, &[4, 3]));
    let (a0, v0, _) = a.forward(&fa, &fv).unwrap();
    for h in &a.handles {
        let w = &h.b_shared.weight;
        let bumped: Vec<f64> = w.to_vec().iter().map(|x| x + 0.7).collect();
        w.set_data(&bumped).unwrap();
        h.alpha[0].set_data(&[3.0]).unwrap();
    }
    let (a1, v1, _) = a.forward(&fa, &fv).unwrap();
    assert_eq!(a0.to_vec(), a1.to_vec());
    assert_eq!(v0.to_vec(), v1.to_vec());
}

#[test]
fn amf_shared_gradient_is_sum_of_modalities() {
    let (store, a) = amf(4, 3);
    let (fa, fv) = (gauss(1, &[4, 3]), gauss(2, &[4, 3]));
    let shared: Vec<Tensor> = a.handles.iter().map(|h| h.b_shared.weight.clone()).collect();
    let grads = |which: u8| -> Vec<Vec<f64>> {
        store.reset_grads();
        let (x, y, _) = a.forward(&fa, &fv).unwrap();
        let loss = match which {
            0 => x.square().sum_all(),
            1 => y.square().sum_all(),
            _ => x.square().sum_all().add(&y.square().sum_all()).unwrap(),
        };
        loss.backward().unwrap();
        shared.iter().map(|p| p.grad().unwrap()).collect()
    };
    let (ga, gv, gs) = (grads(0), grads(1), grads(2));
    for k in 0..3 {
        assert!(ga[k].iter().any(|g| *g != 0.0), "branch {k} audio-only grad is zero");
        let summed: Vec<f64> = ga[k].iter().zip(&gv[k]).map(|(x, y)| x + y).collect();
        assert!(max_abs_diff(&summed, &gs[k]) < 1e-10);
    }
}

// ---------------------------------------------------------------- MFE

#[test]
fn mfe_zero_and_range() {
    let mut s = ParamStore::new(1);
    let m = Mfe::new(&mut s, "mfe", 3).unwrap();
    let z = Tensor::zeros(&[2, 3]).unwrap();
    let (a, v) = m.forward(&z, &z, Some(&z)).unwrap();
    assert!(a.to_vec().iter().chain(v.to_vec().iter()).all(|x| *x == 0.0));
    assert!(m.enhancement(&z, &z, Some(&z)).unwrap().to_vec().iter().all(|e| *e == 0.5));

    randomize(&s, 4, 2.0);
    let e = m
        .enhancement(&gauss(1, &[6, 3]).scale(4.0), &gauss(2, &[6, 3]), Some(&gauss(3, &[6, 3])))
        .unwrap();
    for x in e.add_scalar(1.0).to_vec() {
        assert!(x > 1.0 && x < 2.0);
    }
}

#[test]
fn mfe_matches_hand_formula() {
    let mut s = ParamStore::new(2);
    let m = Mfe::new(&mut s, "mfe", 3).unwrap();
    randomize(&s, 7, 0.5);
    let (fa, fv, fm) = (gauss(1, &[2, 3]), gauss(2, &[2, 3]), gauss(3, &[2, 3]));
    let (oa, ov) = m.forward(&fa, &fv, Some(&fm)).unwrap();
    let (a, v) = (fa.to_vec(), fv.to_vec());
    let prod: Vec<f64> = a.iter().zip(&v).map(|(x, y)| x * y).collect();
    let p = lin(&prod, 2, &m.p);
    let q = lin(&fm.to_vec(), 2, &m.q);
    let e: Vec<f64> = p.iter().zip(&q).map(|(x, y)| sig(x + y)).collect();
    let want_a: Vec<f64> = a.iter().zip(&e).map(|(x, e)| x * (1.0 + e)).collect();
    let want_v: Vec<f64> = v.iter().zip(&e).map(|(x, e)| x * (1.0 + e)).collect();
    assert!(max_abs_diff(&oa.to_vec(), &want_a) < 1e-12);
    assert!(max_abs_diff(&ov.to_vec(), &want_v) < 1e-12);
}

// ---------------------------------------------------------------- PLSIM

#[test]
fn text_embedder_conventions() {
    let e = TextEmbedder::new(Vocabulary::llp(25), 16, 9);
    let e2 = TextEmbedder::new(Vocabulary::llp(25), 16, 9);
    assert_eq!(e.vector(Modality::Visual, "Dog").unwrap(), e2.vector(Modality::Visual, "Dog").unwrap());
    let norm: f64 = e.vector(Modality::Audio, "Speech").unwrap().iter().map(|x| x * x).sum();
    assert!((norm - 1.0).abs() < 1e-12);
    assert_ne!(e.vector(Modality::Audio, "Dog").unwrap(), e.vector(Modality::Visual, "Dog").unwrap());
    assert_eq!(TextEmbedder::prompt(Modality::Visual, "Frying_(food)"), "A photo of Frying (food)");
    assert_eq!(TextEmbedder::prompt(Modality::Audio, "Dog"), "this is a sound of Dog");

    let sets = vec![vec![], vec!["Dog".to_string(), "Speech".to_string()]];
    let t = e.embed_sets(&sets, Modality::Audio).unwrap().to_vec();
    assert!(t[..16].iter().all(|x| *x == 0.0));
    let (dog, sp) = (e.vector(Modality::Audio, "Dog").unwrap(), e.vector(Modality::Audio, "Speech").unwrap());
    for k in 0..16 {
        assert_eq!(t[16 + k], (dog[k] + sp[k]) / 2.0);
    }
    assert!(e.embed_sets(&[vec!["Kazoo".into()]], Modality::Audio).is_err());

    let mut m = LabelMatrix::zeros(2, 25);
    m.set(1, 3, true);
    m.set(1, 0, true);
    assert_eq!(e.embed(&m, Modality::Audio).to_vec(), t);
}

#[test]
fn plsim_fuse_identity_double_and_hand_formula() {
    let f = gauss(1, &[3, 4]);
    let z = Tensor::zeros(&[3, 4]).unwrap();
    assert_eq!(plsim_fuse(&f, &z, &z).unwrap().to_vec(), f.to_vec());
    let one = Tensor::full(&[3, 4], 1.0).unwrap();
    let doubled: Vec<f64> = f.to_vec().iter().map(|x| 2.0 * x).collect();
    assert_eq!(plsim_fuse(&f, &one, &z).unwrap().to_vec(), doubled);

    let (sc, bi) = (gauss(2, &[3, 4]), gauss(3, &[3, 4]));
    let want: Vec<f64> = f
        .to_vec()
        .iter()
        .zip(sc.to_vec())
        .zip(bi.to_vec())
        .map(|((x, s), b)| x * s + b + x)
        .collect();
    assert!(max_abs_diff(&plsim_fuse(&f, &sc, &bi).unwrap().to_vec(), &want) < 1e-12);
}

#[test]
fn plsim_uses_four_distinct_mlps() {
    let mut s = ParamStore::new(1);
    let p = Plsim::new(&mut s, "plsim", 5, 4).unwrap();
    let sp = p.semantic_params(&gauss(1, &[2, 5]), &gauss(1, &[2, 5])).unwrap();
    let outs = [sp.gamma1.to_vec(), sp.gamma2.to_vec(), sp.rho1.to_vec(), sp.rho2.to_vec()];
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(outs[i], outs[j]);
        }
    }
}

// ---------------------------------------------------------------- HAN

#[test]
fn han_rows_sum_to_one_and_single_segment() {
    let mut s = ParamStore::new(4);
    let h = HanTail::new(&mut s, "han", 5).unwrap();
    let out = h.forward(&gauss(1, &[6, 5]), &gauss(2, &[6, 5])).unwrap();
    for w in &out.attention {
        for r in w.sum_axis(1).unwrap().to_vec() {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }
    let f = gauss(3, &[1, 5]);
    let (y, w) = h.self_attn.attend(&f, &f).unwrap();
    assert_eq!(w.to_vec(), vec![1.0]);
    assert!(max_abs_diff(&y.to_vec(), &lin(&f.to_vec(), 1, &h.self_attn.v)) < 1e-15);
    let g = h.forward(&f, &gauss(4, &[1, 5])).unwrap();
    assert_eq!(g.g_a.shape(), &[1, 5]);
}

fn attend_by_hand(att: &han::Attention, q_in: &[f64], kv_in: &[f64], t: usize, d: usize) -> Vec<f64> {
    let q = lin(q_in, t, &att.q);
    let k = lin(kv_in, t, &att.k);
    let v = lin(kv_in, t, &att.v);
    let mut out = vec![0.0; t * d];
    for i in 0..t {
        let scores: Vec<f64> = (0..t)
            .map(|j| (0..d).map(|c| q[i * d + c] * k[j * d + c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for j in 0..t {
            let w = (scores[j] - m).exp() / z;
            for c in 0..d {
                out[i * d + c] += w * v[j * d + c];
            }
        }
    }
    out
}

#[test]
fn han_matches_two_segment_hand_computation() {
    let mut s = ParamStore::new(8);
    let h = HanTail::new(&mut s, "han", 3).unwrap();
    randomize(&s, 2, 0.3);
    let (fa, fv) = (gauss(5, &[2, 3]), gauss(6, &[2, 3]));
    let out = h.forward(&fa, &fv).unwrap();
    let (a, v) = (fa.to_vec(), fv.to_vec());
    let sa = attend_by_hand(&h.self_attn, &a, &a, 2, 3);
    let ca = attend_by_hand(&h.cross_attn, &a, &v, 2, 3);
    let sv = attend_by_hand(&h.self_attn, &v, &v, 2, 3);
    let cv = attend_by_hand(&h.cross_attn, &v, &a, 2, 3);
    let ga: Vec<f64> = (0..6).map(|i| a[i] + sa[i] + ca[i]).collect();
    let gv: Vec<f64> = (0..6).map(|i| v[i] + sv[i] + cv[i]).collect();
    assert!(max_abs_diff(&out.g_a.to_vec(), &ga) < 1e-10);
    assert!(max_abs_diff(&out.g_v.to_vec(), &gv) < 1e-10);
}

// ---------------------------------------------------------------- MMIL

#[test]
fn mmil_uniform_attention_gives_temporal_mean() {
    let mut s = ParamStore::new(2);
    let h = MmilHead::new(&mut s, "head", 4, 3).unwrap();
    for l in [&h.frame_att, &h.modality_att] {
        l.weight.set_data(&[0.0; 12]).unwrap();
    }
    let g = gauss(1, &[5, 4]);
    let out = h.forward(&g, &g).unwrap();
    let p = out.seg_prob_a.to_vec();
    for c in 0..3 {
        let mean = (0..5).map(|t| p[t * 3 + c]).sum::<f64>() / 5.0;
        assert!((out.video_prob.to_vec()[c] - mean).abs() < 1e-12);
    }
}

#[test]
fn mmil_matches_hand_weighted_sum() {
    let mut s = ParamStore::new(3);
    let h = MmilHead::new(&mut s, "head", 3, 2).unwrap();
    randomize(&s, 9, 0.5);
    let (ga, gv) = (gauss(1, &[3, 3]), gauss(2, &[3, 3]));
    let out = h.forward(&ga, &gv).unwrap();
    let (t, c) = (3, 2);
    let per_mod = |g: &Tensor| {
        let p: Vec<f64> = lin(&g.to_vec(), t, &h.classifier).into_iter().map(sig).collect();
        let fl = lin(&g.to_vec(), t, &h.frame_att);
        let ml = lin(&g.to_vec(), t, &h.modality_att);
        let mut pooled = vec![0.0; c];
        let mut logit = vec![0.0; c];
        for k in 0..c {
            let z: f64 = (0..t).map(|i| fl[i * c + k].exp()).sum();
            for i in 0..t {
                let w = fl[i * c + k].exp() / z;
                pooled[k] += w * p[i * c + k];
                logit[k] += w * ml[i * c + k];
            }
        }
        (pooled, logit)
    };
    let (pa, la) = per_mod(&ga);
    let (pv, lv) = per_mod(&gv);
    let vp = out.video_prob.to_vec();
    for k in 0..c {
        let wa = la[k].exp() / (la[k].exp() + lv[k].exp());
        let want = wa * pa[k] + (1.0 - wa) * pv[k];
        assert!((vp[k] - want).abs() < 1e-10);
        assert!(vp[k] > 0.0 && vp[k] < 1.0);
    }
}

// ---------------------------------------------------------------- loss

fn outputs_with(video: Vec<f64>, seg_a: Vec<f64>, seg_v: Vec<f64>, t: usize, c: usize) -> ModelOutputs {
    let z = Tensor::zeros(&[t, c]).unwrap();
    let f = Tensor::zeros(&[t, 1]).unwrap();
    ModelOutputs {
        seg_prob_a: Tensor::from_vec(seg_a, &[t, c]).unwrap(),
        seg_prob_v: Tensor::from_vec(seg_v, &[t, c]).unwrap(),
        video_prob: Tensor::from_vec(video, &[c]).unwrap(),
        frame_weights: [z.clone(), z.clone()],
        modality_weights: Tensor::zeros(&[2, c]).unwrap(),
        attention: [z.clone(), z.clone(), z.clone(), z.clone()],
        stages: StageFeatures {
            input_a: f.clone(),
            input_v: f.clone(),
            tsa_out_a: f.clone(),
            tsa_out_v: f.clone(),
            amf_out_a: f.clone(),
            amf_out_v: f.clone(),
            amf_mix: None,
            mfe_out_a: f.clone(),
            mfe_out_v: f.clone(),
            plsim_out_a: f.clone(),
            plsim_out_v: f,
        },
    }
}

fn bce_ref(p: &[f64], y: &[f64], rows: Option<(&[bool], usize)>) -> f64 {
    let eps = 1e-7;
    let mut sum = 0.0;
    let mut n = 0.0;
    for i in 0..p.len() {
        if let Some((null, c)) = rows {
            if null[i / c] {
                continue;
            }
        }
        let q = p[i].clamp(eps, 1.0 - eps);
        sum -= y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln();
        n += 1.0;
    }
    if n == 0.0 {
        0.0
    } else {
        sum / n
    }
}

#[test]
fn loss_saturated_and_lambda_zero() {
    let ya = LabelMatrix::from_rows(&[vec![true, false], vec![false, false]]);
    let yv = LabelMatrix::from_rows(&[vec![false, true], vec![false, true]]);
    let video = Tensor::from_vec(vec![1.0, 1.0], &[2]).unwrap();
    let out = outputs_with(vec![1.0, 1.0], ya.to_tensor().to_vec(), yv.to_tensor().to_vec(), 2, 2);
    let l = compute_loss(&out, &video, &ya, &yv, 1.0, 1.0).unwrap().item();
    assert!(l <= 3.0 * -(1.0f64 - 1e-7).ln() + 1e-15, "{l}");

    let out = outputs_with(vec![0.3, 0.8], vec![0.5; 4], vec![0.1; 4], 2, 2);
    let l0 = compute_loss(&out, &video, &ya, &yv, 0.0, 0.0).unwrap().item();
    assert!((l0 - bce_ref(&[0.3, 0.8], &[1.0, 1.0], None)).abs() < 1e-15);
}

#[test]
fn loss_matches_reference_with_null_masking() {
    let (t, c) = (3, 4);
    let p = |seed| -> Vec<f64> { gauss(seed, &[t * c]).to_vec().into_iter().map(sig).collect() };
    let (pa, pv) = (p(1), p(2));
    let vp: Vec<f64> = gauss(3, &[c]).to_vec().into_iter().map(sig).collect();
    let mut ya = LabelMatrix::zeros(t, c);
    ya.set(0, 1, true);
    ya.set(2, 3, true);
    let mut yv = LabelMatrix::zeros(t, c);
    yv.set(1, 0, true);
    yv.set_null(2);
    let vl = vec![1.0, 0.0, 1.0, 1.0];
    let out = outputs_with(vp.clone(), pa.clone(), pv.clone(), t, c);
    let got = compute_loss(&out, &Tensor::from_vec(vl.clone(), &[c]).unwrap(), &ya, &yv, 0.7, 1.3)
        .unwrap()
        .item();
    let nulls = [false, false, true];
    let want = bce_ref(&vp, &vl, None)
        + 0.7 * bce_ref(&pa, &ya.to_tensor().to_vec(), None)
        + 1.3 * bce_ref(&pv, &yv.to_tensor().to_vec(), Some((&nulls, c)));
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    let bad = Tensor::from_vec(vec![0.5, 0.0, 1.0, 1.0], &[c]).unwrap();
    assert!(matches!(
        compute_loss(&out, &bad, &ya, &yv, 1.0, 1.0),
        Err(TensorError::Contract(_))
    ));
}

// ---------------------------------------------------------------- full model

fn tiny() -> ModelConfig {
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

fn tiny_record(cfg: &ModelConfig, seed: u64) -> VideoRecord {
    let mut pa = LabelMatrix::zeros(cfg.segments, cfg.classes);
    pa.set(0, 1, true);
    pa.set(1, 1, true);
    let mut pv = LabelMatrix::zeros(cfg.segments, cfg.classes);
    pv.set(2, 0, true);
    pv.set(2, 2, true);
    pv.set_null(3);
    VideoRecord {
        video_id: format!("v{seed}"),
        audio: gauss(seed, &[cfg.segments, cfg.d_audio]),
        visual: gauss(seed + 100, &[cfg.segments, cfg.d_visual]),
        video_label: vec![true, true, false],
        pseudo_a: pa,
        pseudo_v: pv,
        discard: false,
        audio_path: None,
        visual_path: None,
    }
}

#[test]
fn model_shapes_probabilities_and_stages() {
    let cfg = tiny();
    let m = AvMamba::new(cfg.clone(), 1).unwrap();
    let out = m.forward(&m.input_for(&tiny_record(&cfg, 1))).unwrap();
    assert_eq!(out.seg_prob_a.shape(), &[4, 3]);
    assert_eq!(out.seg_prob_v.shape(), &[4, 3]);
    assert_eq!(out.video_prob.shape(), &[3]);
    for p in [&out.seg_prob_a, &out.seg_prob_v, &out.video_prob] {
        assert!(p.to_vec().iter().all(|x| *x > 0.0 && *x < 1.0));
    }
    for (name, s) in out.stages.all() {
        assert_eq!(s.shape(), &[4, 8], "{name}");
    }
    for w in out.frame_weights.iter().chain([&out.modality_weights]) {
        for col in w.sum_axis(0).unwrap().to_vec() {
            assert!((col - 1.0).abs() < 1e-9);
        }
    }
    for w in &out.attention {
        for row in w.sum_axis(1).unwrap().to_vec() {
            assert!((row - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn model_rejects_wrong_feature_width() {
    let cfg = tiny();
    let m = AvMamba::new(cfg.clone(), 1).unwrap();
    let mut r = tiny_record(&cfg, 1);
    r.audio = gauss(1, &[4, 6]);
    assert!(matches!(
        m.forward(&m.input_for(&r)),
        Err(TensorError::ShapeMismatch { op: "audio", .. })
    ));
}

#[test]
fn batch_permutation_permutes_outputs() {
    let cfg = tiny();
    let m = AvMamba::new(cfg.clone(), 2).unwrap();
    let batch: Vec<VideoRecord> = (0..4).map(|i| tiny_record(&cfg, i)).collect();
    let rev: Vec<VideoRecord> = batch.iter().rev().cloned().collect();
    let a = m.model_forward(&batch).unwrap();
    let b = m.model_forward(&rev).unwrap();
    for i in 0..4 {
        assert_eq!(a[i].video_prob.to_vec(), b[3 - i].video_prob.to_vec());
        assert_eq!(a[i].seg_prob_v.to_vec(), b[3 - i].seg_prob_v.to_vec());
    }
}

#[test]
fn zeroed_plsim_equals_plsim_ablated_model() {
    let cfg = tiny();
    let full = AvMamba::new(cfg.clone(), 4).unwrap();
    let ablated = AvMamba::new(ModelConfig { use_plsim: false, ..cfg.clone() }, 4).unwrap();
    for t in full.plsim.as_ref().unwrap().tensors() {
        t.set_data(&vec![0.0; t.numel()]).unwrap();
    }
    let r = tiny_record(&cfg, 3);
    let a = full.forward(&full.input_for(&r)).unwrap();
    let b = ablated.forward(&ablated.input_for(&r)).unwrap();
    assert_eq!(a.video_prob.to_vec(), b.video_prob.to_vec());
    assert_eq!(a.seg_prob_a.to_vec(), b.seg_prob_a.to_vec());
    assert_eq!(a.seg_prob_v.to_vec(), b.seg_prob_v.to_vec());
}

#[test]
fn baseline_census_is_input_han_head() {
    let m = AvMamba::new(tiny().baseline(), 1).unwrap();
    for (name, _) in m.store.named() {
        assert!(
            ["input.", "han.", "head."].iter().any(|p| name.starts_with(p)),
            "{name}"
        );
    }
    let full = AvMamba::new(tiny(), 1).unwrap();
    for prefix in ["tsa.", "amf.", "mfe.", "plsim."] {
        assert!(full.store.named().iter().any(|(n, _)| n.starts_with(prefix)));
    }
}

#[test]
fn paper_scale_parameter_count_in_band() {
    let m = AvMamba::new(ModelConfig::paper_scale(), 0).unwrap();
    let n = m.param_count();
    assert!((3_800_000..=15_200_000).contains(&n), "{n}");
}

#[test]
fn tiny_model_gradient_check() {
    let cfg = tiny();
    let m = AvMamba::new(cfg.clone(), 6).unwrap();
    let r = tiny_record(&cfg, 4);
    let input = m.input_for(&r);
    let named: Vec<(String, Tensor)> = m.store.named().to_vec();
    let gc = GradCheckConfig {
        tolerance: 1e-3,
        max_entries: Some(6),
        ..GradCheckConfig::default()
    };
    let report = check_gradients_named(&named, || m.loss(&m.forward(&input)?, &r), &gc).unwrap();
    let bad: Vec<_> = report.failures().collect();
    assert!(bad.is_empty(), "{bad:#?}");
    assert_eq!(report.tensors.len(), m.store.len());
}
