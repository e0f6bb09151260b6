//! Plain gradient descent on [`loss_iou`](super::loss_iou).
//!
//! The loss has a kink at the optimum, so a constant step ends in a small
//! orbit around it; the best iterate is reported alongside the last one.

use serde::{Deserialize, Serialize};

use super::loss::loss_iou_grad;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::scene::Box3D;

/// Sizes are kept at or above this value (m) between steps.
pub const MIN_FIT_SIZE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Loss of every iterate, the initial one included (`steps + 1` values).
    pub losses: Vec<f64>,
    /// Oriented IoU of every iterate with the target.
    pub ious: Vec<f64>,
    pub final_box: Box3D,
    /// Iterate with the lowest loss.
    pub best_step: usize,
    pub best_box: Box3D,
}

impl FitResult {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one loss")
    }

    pub fn final_iou(&self) -> f64 {
        *self.ious.last().expect("at least one iterate")
    }

    /// First step whose iterate reaches `threshold` IoU.
    pub fn first_step_reaching(&self, threshold: f64) -> Option<usize> {
        self.ious.iter().position(|&v| v >= threshold)
    }
}

pub fn fit_box(initial: &[f64; 9], target: &Box3D, steps: usize, lr: f64) -> Result<FitResult> {
    if steps == 0 {
        return Err(Error::Invariant("fit_box needs at least one step".into()));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Invariant(format!("learning rate must be positive, got {lr}")));
    }
    Box3D::from_params(initial)?;
    let mut p = *initial;
    let mut losses = Vec::with_capacity(steps + 1);
    let mut ious = Vec::with_capacity(steps + 1);
    let mut best = (0, f64::INFINITY, Box3D::from_params(initial)?);
    let mut first = None;
    for step in 0..=steps {
        let l = loss_iou_grad(&p, target);
        let initial_loss = *first.get_or_insert(l.loss);
        if !l.loss.is_finite() || (initial_loss > 0.0 && l.loss > 10.0 * initial_loss) {
            return Err(Error::Divergence {
                step,
                loss: l.loss,
                initial: initial_loss,
            });
        }
        let current = Box3D::from_params(&p)?;
        losses.push(l.loss);
        ious.push(iou(&current, target));
        if l.loss < best.1 {
            best = (step, l.loss, current);
        }
        if step == steps {
            break;
        }
        for (x, g) in p.iter_mut().zip(l.grad) {
            *x -= lr * g;
        }
        for s in &mut p[3..6] {
            *s = s.max(MIN_FIT_SIZE);
        }
    }
    Ok(FitResult {
        losses,
        ious,
        final_box: Box3D::from_params(&p)?,
        best_step: best.0,
        best_box: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_at_target_stays_put() {
        let t = Box3D::axis_aligned([0.0; 3], [1.0; 3]).unwrap();
        let r = fit_box(&t.params(), &t, 10, 0.05).unwrap();
        assert!(r.losses.iter().all(|l| *l == 0.0));
        assert_eq!(r.final_box, t);
    }

    #[test]
    fn offset_cube_converges() {
        let t = Box3D::axis_aligned([0.0; 3], [1.0; 3]).unwrap();
        let init = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let r = fit_box(&init, &t, 500, 0.05).unwrap();
        assert!(r.first_step_reaching(0.95).is_some());
        assert!(iou(&r.best_box, &t) >= 0.95);
        assert_eq!(r.losses.len(), 501);
        assert_eq!(r.ious.len(), 501);
    }

    #[test]
    fn rejects_bad_arguments() {
        let t = Box3D::axis_aligned([0.0; 3], [1.0; 3]).unwrap();
        assert!(fit_box(&t.params(), &t, 0, 0.05).is_err());
        assert!(fit_box(&t.params(), &t, 5, -1.0).is_err());
    }
}
