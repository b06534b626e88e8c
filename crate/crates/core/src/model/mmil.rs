//! Multimodal multiple-instance pooling head.

use crate::nn::Linear;
use crate::tensor::params::ParamStore;
use crate::tensor::{Result, Tensor};

/// Segment probabilities are held this far inside (0, 1).
pub const PROB_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MmilHead {
    /// Shared segment classifier.
    pub classifier: Linear,
    /// Per-class temporal attention logits; zero at init, so pooling starts uniform.
    pub frame_att: Linear,
    /// Per-class modality attention logits, pooled over time.
    pub modality_att: Linear,
}

#[derive(Debug, Clone)]
pub struct MmilOutput {
    pub seg_prob_a: Tensor,
    pub seg_prob_v: Tensor,
    pub video_prob: Tensor,
    /// `[T, C]` per modality; columns sum to 1.
    pub frame_weights: [Tensor; 2],
    /// `[2, C]`; columns sum to 1.
    pub modality_weights: Tensor,
}

impl MmilHead {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, classes: usize) -> Result<Self> {
        Ok(Self {
            classifier: Linear::new(store, &format!("{name}.classifier"), d, classes, true)?,
            frame_att: Linear::zeros(store, &format!("{name}.frame_att"), d, classes)?,
            modality_att: Linear::zeros(store, &format!("{name}.modality_att"), d, classes)?,
        })
    }

    /// `video_prob_c = sum_m w_mod[m,c] sum_t w_time_m[t,c] seg_prob_m[t,c]`,
    /// with `w_time_m = softmax_t(frame_att(g_m))` and
    /// `w_mod = softmax_m(sum_t w_time_m * modality_att(g_m))`.
    pub fn forward(&self, g_a: &Tensor, g_v: &Tensor) -> Result<MmilOutput> {
        let mut seg = Vec::with_capacity(2);
        let mut frame = Vec::with_capacity(2);
        let mut pooled = Vec::with_capacity(2);
        let mut mod_logits = Vec::with_capacity(2);
        for g in [g_a, g_v] {
            let p = self.classifier.forward(g)?.sigmoid().clamp(PROB_MARGIN, 1.0 - PROB_MARGIN);
            let w = self.frame_att.forward(g)?.softmax(0)?;
            pooled.push(w.mul(&p)?.sum_axis(0)?);
            mod_logits.push(w.mul(&self.modality_att.forward(g)?)?.sum_axis(0)?);
            seg.push(p);
            frame.push(w);
        }
        let w_mod = Tensor::concat(&[&mod_logits[0], &mod_logits[1]], 0)?.softmax(0)?;
        let video = w_mod
            .narrow(0, 0, 1)?
            .mul(&pooled[0])?
            .add(&w_mod.narrow(0, 1, 1)?.mul(&pooled[1])?)?;
        let c = video.numel();
        let [fa, fv]: [Tensor; 2] = frame.try_into().unwrap();
        let [pa, pv]: [Tensor; 2] = seg.try_into().unwrap();
        Ok(MmilOutput {
            seg_prob_a: pa,
            seg_prob_v: pv,
            video_prob: video.reshape(&[c])?,
            frame_weights: [fa, fv],
            modality_weights: w_mod,
        })
    }
}
