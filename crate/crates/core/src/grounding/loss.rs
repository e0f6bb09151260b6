//! Box and contrastive losses with hand-derived gradients, and their
//! weighted composition.

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aabb, iou_matrix, rotation_matrix};
use crate::metrics::{match_pairs, Matching};
use crate::scene::Box3D;

/// Weight of the normalized center distance in [`loss_iou`].
pub const CENTER_WEIGHT: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.07;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_text: f64,
    pub lambda_det: f64,
    pub lambda_iou: f64,
    pub lambda_contrast: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_text: 1.0,
            lambda_det: 1.0,
            lambda_iou: 1.0,
            lambda_contrast: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            lambda_text: 0.0,
            lambda_det: 0.0,
            lambda_iou: 0.0,
            lambda_contrast: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_text, self.lambda_det, self.lambda_iou, self.lambda_contrast];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invariant(format!("loss weights must be non-negative, got {all:?}")));
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Heaviside step with value 1/2 at 0: the mean of the one-sided derivatives
/// of `min`/`max` where both arguments coincide.
fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Derivatives of `Rz(yaw) Ry(pitch) Rx(roll)` with respect to each angle.
fn rotation_derivatives(euler: [f64; 3]) -> [Matrix3<f64>; 3] {
    let [yaw, pitch, roll] = euler;
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    let drz = Matrix3::new(-sy, -cy, 0.0, cy, -sy, 0.0, 0.0, 0.0, 0.0);
    let dry = Matrix3::new(-sp, 0.0, cp, 0.0, 0.0, 0.0, -cp, 0.0, -sp);
    let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sr, -cr, 0.0, cr, -sr);
    [drz * ry * rx, rz * dry * rx, rz * ry * drx]
}

/// Loss value and gradient with respect to the nine box parameters
/// `[center, size, euler]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxLoss {
    pub loss: f64,
    pub grad: [f64; 9],
}

/// `(1 - IoU of the axis-aligned hulls) + 0.5 * |dc| / |gt diagonal|`.
pub fn loss_iou(pred: &[f64; 9], gt: &Box3D) -> f64 {
    loss_iou_grad(pred, gt).loss
}

/// [`loss_iou`] with its analytic gradient. At kinks, coincident hull faces
/// take the mean of the one-sided derivatives, and zero rotation entries and
/// coincident centers use `sign(0) = 0`.
pub fn loss_iou_grad(pred: &[f64; 9], gt: &Box3D) -> BoxLoss {
    let c = [pred[0], pred[1], pred[2]];
    let s = [pred[3], pred[4], pred[5]];
    let euler = [pred[6], pred[7], pred[8]];
    let r = rotation_matrix(euler);
    let dr = rotation_derivatives(euler);

    // hull half extents e_j = sum_k |R_jk| s_k / 2
    let e: [f64; 3] = std::array::from_fn(|j| (0..3).map(|k| r[(j, k)].abs() * s[k] / 2.0).sum());
    let (glo, ghi) = aabb(gt);
    let lo: [f64; 3] = std::array::from_fn(|j| c[j] - e[j]);
    let hi: [f64; 3] = std::array::from_fn(|j| c[j] + e[j]);
    let overlap: [f64; 3] = std::array::from_fn(|j| (hi[j].min(ghi[j]) - lo[j].max(glo[j])).max(0.0));
    let inter: f64 = overlap.iter().product();
    let vp: f64 = e.iter().map(|x| 2.0 * x).product();
    let vg: f64 = (0..3).map(|j| ghi[j] - glo[j]).product();
    let union = vp + vg - inter;
    let iou = inter / union;

    let gc = gt.center();
    let dc: [f64; 3] = std::array::from_fn(|j| c[j] - gc[j]);
    let dist = dc.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diag = gt.size().iter().map(|x| x * x).sum::<f64>().sqrt();
    let loss = 1.0 - iou + CENTER_WEIGHT * dist / diag;

    // d(-IoU)/dI and d(-IoU)/dVp
    let d_inter = -(union + inter) / (union * union);
    let d_vp = inter / (union * union);

    let mut d_c = [0.0; 3];
    let mut d_e = [0.0; 3];
    for j in 0..3 {
        if overlap[j] > 0.0 {
            let others: f64 = (0..3).filter(|&i| i != j).map(|i| overlap[i]).product();
            let d_hi = others * step(ghi[j] - hi[j]);
            let d_lo = -others * step(lo[j] - glo[j]);
            d_c[j] += d_inter * (d_hi + d_lo);
            d_e[j] += d_inter * (d_hi - d_lo);
        }
        let others_vp: f64 = (0..3).filter(|&i| i != j).map(|i| 2.0 * e[i]).product();
        d_e[j] += d_vp * 2.0 * others_vp;
        if dist > 0.0 {
            d_c[j] += CENTER_WEIGHT * dc[j] / (dist * diag);
        }
    }

    let mut grad = [0.0; 9];
    grad[..3].copy_from_slice(&d_c);
    for k in 0..3 {
        grad[3 + k] = (0..3).map(|j| d_e[j] * r[(j, k)].abs() / 2.0).sum();
    }
    for (a, dra) in dr.iter().enumerate() {
        grad[6 + a] = (0..3)
            .map(|j| d_e[j] * (0..3).map(|k| sign(r[(j, k)]) * dra[(j, k)] * s[k] / 2.0).sum::<f64>())
            .sum();
    }
    BoxLoss { loss, grad }
}

/// InfoNCE value and gradients with respect to every input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastLoss {
    pub loss: f64,
    pub d_matched: Vec<DVector<f64>>,
    pub d_unmatched: Vec<DVector<f64>>,
    pub d_h: DVector<f64>,
}

fn cosine_and_grads(a: &DVector<f64>, h: &DVector<f64>) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let na = a.norm();
    let nh = h.norm();
    if na == 0.0 || nh == 0.0 {
        return Err(Error::Invariant("cosine similarity of a zero vector".into()));
    }
    let cos = a.dot(h) / (na * nh);
    let da = h / (na * nh) - a * (cos / (na * na));
    let dh = a / (na * nh) - h * (cos / (nh * nh));
    Ok((cos, da, dh))
}

/// Mean over matched features of
/// `-log(exp(cos(m, h) / tau) / sum over the pool of exp(cos(p, h) / tau))`.
pub fn loss_contrast(matched: &[DVector<f64>], h: &DVector<f64>, unmatched: &[DVector<f64>], tau: f64) -> Result<f64> {
    loss_contrast_grad(matched, h, unmatched, tau).map(|c| c.loss)
}

pub fn loss_contrast_grad(matched: &[DVector<f64>], h: &DVector<f64>, unmatched: &[DVector<f64>], tau: f64) -> Result<ContrastLoss> {
    if matched.is_empty() || unmatched.is_empty() {
        return Err(Error::Invariant("contrastive loss needs matched and unmatched features".into()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Invariant(format!("temperature must be positive, got {tau}")));
    }
    let pool: Vec<&DVector<f64>> = matched.iter().chain(unmatched).collect();
    if let Some(bad) = pool.iter().find(|p| p.len() != h.len()) {
        return Err(Error::DimensionMismatch {
            what: "contrastive feature width",
            expected: h.len(),
            got: bad.len(),
        });
    }
    let parts = pool.iter().map(|p| cosine_and_grads(p, h)).collect::<Result<Vec<_>>>()?;
    let logits: Vec<f64> = parts.iter().map(|(c, _, _)| c / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_z = max + sum.ln();
    let m = matched.len() as f64;
    let loss = logits[..matched.len()].iter().map(|l| log_z - l).sum::<f64>() / m;

    let mut d_h = DVector::zeros(h.len());
    let mut d_pool = Vec::with_capacity(pool.len());
    for (p, (_, da, dh)) in parts.iter().enumerate() {
        let mut d_logit = exps[p] / sum;
        if p < matched.len() {
            d_logit -= 1.0 / m;
        }
        let d_cos = d_logit / tau;
        d_pool.push(da * d_cos);
        d_h += dh * d_cos;
    }
    let d_unmatched = d_pool.split_off(matched.len());
    Ok(ContrastLoss {
        loss,
        d_matched: d_pool,
        d_unmatched,
        d_h,
    })
}

/// Predicted boxes with their query features, ground truth and `h_loc`.
#[derive(Debug, Clone, Copy)]
pub struct Detections<'a> {
    pub boxes: &'a [Box3D],
    pub features: &'a [DVector<f64>],
    pub gt: &'a [Box3D],
    pub h: &'a DVector<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub text: f64,
    /// Mean box loss over matched pairs.
    pub iou: f64,
    pub contrast: f64,
    pub total: f64,
    pub matched: usize,
}

/// `l_text * w_text + w_det * (w_iou * L_iou + w_contrast * L_contrast)`.
///
/// Predictions are assigned one-to-one to ground truth by maximum total IoU.
/// The contrastive term is zero when either the matched or the unmatched pool
/// is empty.
pub fn total_loss(l_text: f64, det: &Detections<'_>, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    if !(l_text.is_finite() && l_text >= 0.0) {
        return Err(Error::Invariant(format!("text loss must be non-negative, got {l_text}")));
    }
    if det.boxes.len() != det.features.len() {
        return Err(Error::DimensionMismatch {
            what: "features per predicted box",
            expected: det.boxes.len(),
            got: det.features.len(),
        });
    }
    let ious = iou_matrix(det.boxes, det.gt);
    let pairs = match_pairs(&ious, &vec![1.0; det.boxes.len()], 0.0, Matching::Hungarian);
    let iou = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|&(i, j)| loss_iou(&det.boxes[i].params(), &det.gt[j])).sum::<f64>() / pairs.len() as f64
    };
    let matched: Vec<DVector<f64>> = pairs.iter().map(|&(i, _)| det.features[i].clone()).collect();
    let unmatched: Vec<DVector<f64>> = (0..det.boxes.len())
        .filter(|i| !pairs.iter().any(|(p, _)| p == i))
        .map(|i| det.features[i].clone())
        .collect();
    let contrast = if matched.is_empty() || unmatched.is_empty() {
        0.0
    } else {
        loss_contrast(&matched, det.h, &unmatched, det.tau)?
    };
    let total = weights.lambda_text * l_text + weights.lambda_det * (weights.lambda_iou * iou + weights.lambda_contrast * contrast);
    Ok(LossBreakdown {
        text: l_text,
        iou,
        contrast,
        total,
        matched: pairs.len(),
    })
}
