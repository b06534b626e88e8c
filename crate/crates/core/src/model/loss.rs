//! Clamped binary cross-entropy over video and segment predictions.

use super::ModelOutputs;
use crate::data::LabelMatrix;
use crate::tensor::{Result, Tensor, TensorError};

pub const EPS: f64 = 1e-7;

/// Element-mean BCE of `prob` against `{0,1}` targets. With a `[T, 1]`
/// `mask`, rows with mask 0 are excluded and the mean runs over the rest;
/// an all-masked input contributes 0.
pub fn bce(prob: &Tensor, target: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    if prob.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "bce",
            lhs: prob.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if target.data().iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(TensorError::Contract("bce targets must be 0 or 1".into()));
    }
    let p = prob.clamp(EPS, 1.0 - EPS);
    let one_minus_y = target.neg().add_scalar(1.0);
    let terms = target
        .mul(&p.ln())?
        .add(&one_minus_y.mul(&p.neg().add_scalar(1.0).ln())?)?
        .neg();
    match mask {
        None => Ok(terms.mean_all()),
        Some(m) => {
            let kept = m.data().iter().sum::<f64>();
            if kept == 0.0 {
                return Ok(Tensor::scalar(0.0));
            }
            let cols = prob.numel() / m.numel();
            Ok(terms.mul(m)?.sum_all().scale(1.0 / (kept * cols as f64)))
        }
    }
}

/// `BCE(video) + lambda_a BCE(seg_a, pseudo_a) + lambda_v BCE(seg_v, pseudo_v)`,
/// with unannotated segments masked out of the pseudo-label terms.
pub fn compute_loss(
    outputs: &ModelOutputs,
    video_label: &Tensor,
    pseudo_a: &LabelMatrix,
    pseudo_v: &LabelMatrix,
    lambda_a: f64,
    lambda_v: f64,
) -> Result<Tensor> {
    let mut loss = bce(&outputs.video_prob, video_label, None)?;
    let terms = [
        (lambda_a, &outputs.seg_prob_a, pseudo_a),
        (lambda_v, &outputs.seg_prob_v, pseudo_v),
    ];
    for (lambda, prob, labels) in terms {
        if lambda != 0.0 {
            let mask = labels.has_null().then(|| labels.annotated_mask());
            let term = bce(prob, &labels.to_tensor(), mask.as_ref())?;
            loss = loss.add(&term.scale(lambda))?;
        }
    }
    Ok(loss)
}
