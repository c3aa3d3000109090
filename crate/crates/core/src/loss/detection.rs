use super::{LossError, LossWeights, TargetMaps};
use crate::autodiff::{Graph, Tensor, Var};
use crate::model::HeadOutputs;

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

fn check_shape(g: &Graph, v: Var, t: &Tensor, what: &str) -> Result<(), LossError> {
    if g.shape(v) != t.shape() {
        return Err(LossError::Contract(format!("{what}: prediction {:?} vs target {:?}", g.shape(v), t.shape())));
    }
    Ok(())
}

fn complement(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| 1.0 - v).collect()).expect("same shape")
}

/// Focal loss summed over all cells, written with softplus so that
/// `(1-p)^γ = exp(-γ sp(x))` and `-ln p = sp(-x)` stay stable.
pub fn focal_loss(g: &mut Graph, logits: Var, labels: &Tensor) -> Result<Var, LossError> {
    check_shape(g, logits, labels, "focal")?;
    let sp_pos = g.softplus(logits)?;
    let neg_x = g.neg(logits);
    let sp_neg = g.softplus(neg_x)?;

    let m = g.scale(sp_pos, -FOCAL_GAMMA);
    let modulate = g.exp(m)?;
    let pos = g.mul(modulate, sp_neg)?;
    let pos = g.scale(pos, FOCAL_ALPHA);

    let m = g.scale(sp_neg, -FOCAL_GAMMA);
    let modulate = g.exp(m)?;
    let neg = g.mul(modulate, sp_pos)?;
    let neg = g.scale(neg, 1.0 - FOCAL_ALPHA);

    let y = g.constant(labels.clone());
    let not_y = g.constant(complement(labels));
    let a = g.mul(y, pos)?;
    let b = g.mul(not_y, neg)?;
    let all = g.add(a, b)?;
    Ok(g.sum(all))
}

/// Binary cross-entropy of quality logits against centerness, at positives.
pub fn quality_bce(g: &mut Graph, logits: Var, quality: &Tensor, labels: &Tensor) -> Result<Var, LossError> {
    check_shape(g, logits, quality, "quality")?;
    check_shape(g, logits, labels, "quality labels")?;
    let sp_pos = g.softplus(logits)?;
    let neg_x = g.neg(logits);
    let sp_neg = g.softplus(neg_x)?;
    let q = g.constant(quality.clone());
    let not_q = g.constant(complement(quality));
    let a = g.mul(q, sp_neg)?;
    let b = g.mul(not_q, sp_pos)?;
    let per_cell = g.add(a, b)?;
    let mask = g.constant(labels.clone());
    let masked = g.mul(mask, per_cell)?;
    Ok(g.sum(masked))
}

/// `-ln IoU` between boxes decoded from predicted and target distances,
/// summed over positives. Both boxes share the cell point, so only the
/// four distances matter.
pub fn iou_loss(g: &mut Graph, offsets: Var, reg: &Tensor, labels: &Tensor) -> Result<Var, LossError> {
    check_shape(g, offsets, reg, "iou")?;
    let s = g.shape(offsets).to_vec();
    if labels.shape() != [1, s[1], s[2]] {
        return Err(LossError::Contract(format!("iou mask {:?} vs offsets {s:?}", labels.shape())));
    }
    let target = g.constant(reg.clone());
    let mut p = Vec::with_capacity(4);
    let mut t = Vec::with_capacity(4);
    for c in 0..4 {
        p.push(g.slice(offsets, c, 1)?);
        t.push(g.slice(target, c, 1)?);
    }
    let (l, tp, r, b) = (0, 1, 2, 3);
    let pw = g.add(p[l], p[r])?;
    let ph = g.add(p[tp], p[b])?;
    let pred_area = g.mul(pw, ph)?;
    let tw = g.add(t[l], t[r])?;
    let th = g.add(t[tp], t[b])?;
    let target_area = g.mul(tw, th)?;
    let mut mins = Vec::with_capacity(4);
    for c in 0..4 {
        mins.push(g.minimum(p[c], t[c])?);
    }
    let iw = g.add(mins[l], mins[r])?;
    let ih = g.add(mins[tp], mins[b])?;
    let inter = g.mul(iw, ih)?;
    let areas = g.add(pred_area, target_area)?;
    let union = g.sub(areas, inter)?;
    let iou = g.div(inter, union)?;
    let log_iou = g.log(iou)?;
    let mask = g.constant(labels.clone());
    let masked = g.mul(mask, log_iou)?;
    let s = g.sum(masked);
    Ok(g.neg(s))
}

/// Detection loss of one sample with its unnormalized parts.
#[derive(Clone, Copy, Debug)]
pub struct CrTerms {
    pub loss: Var,
    pub focal: Var,
    pub quality: Var,
    pub iou: Var,
    pub n_pos: usize,
    /// Set when there were no positives and only the focal term counts.
    pub no_positives: bool,
}

/// `(focal + λ1·quality + λ2·iou) / N_pos`, or the bare focal sum when
/// no cell is positive.
pub fn cr_loss(
    g: &mut Graph,
    head: &HeadOutputs,
    targets: &TargetMaps,
    weights: &LossWeights,
) -> Result<CrTerms, LossError> {
    let focal = focal_loss(g, head.cls_logits, &targets.labels)?;
    let quality = quality_bce(g, head.quality_logits, &targets.quality, &targets.labels)?;
    let iou = iou_loss(g, head.reg_offsets, &targets.reg, &targets.labels)?;
    if targets.n_pos == 0 {
        return Ok(CrTerms { loss: focal, focal, quality, iou, n_pos: 0, no_positives: true });
    }
    let q = g.scale(quality, weights.lambda1);
    let r = g.scale(iou, weights.lambda2);
    let sum = g.add(focal, q)?;
    let sum = g.add(sum, r)?;
    let loss = g.scale(sum, 1.0 / targets.n_pos as f64);
    Ok(CrTerms { loss, focal, quality, iou, n_pos: targets.n_pos, no_positives: false })
}
