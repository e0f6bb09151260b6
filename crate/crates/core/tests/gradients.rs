use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rground_core::geometry::{aabb, rotation_matrix};
use rground_core::grounding::{loss_contrast, loss_contrast_grad, loss_iou, loss_iou_grad};
use rground_core::Box3D;

const EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;
/// Points closer than this to a kink of the loss are redrawn.
const KINK_MARGIN: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Distance from `p` to the nearest non-differentiable configuration: a zero
/// rotation entry, coincident hull faces, touching hulls or coincident centers.
fn kink_distance(p: &[f64; 9], gt: &Box3D) -> f64 {
    let r = rotation_matrix([p[6], p[7], p[8]]);
    let mut d = r.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    let pred = Box3D::new([p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], p[8]]).unwrap();
    let (lo, hi) = aabb(&pred);
    let (glo, ghi) = aabb(gt);
    for k in 0..3 {
        for v in [hi[k] - ghi[k], lo[k] - glo[k], hi[k] - glo[k], ghi[k] - lo[k]] {
            d = d.min(v.abs());
        }
    }
    let gc = gt.center();
    let dc = ((p[0] - gc[0]).powi(2) + (p[1] - gc[1]).powi(2) + (p[2] - gc[2]).powi(2)).sqrt();
    d.min(dc)
}

#[test]
fn iou_loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut checked = 0;
    while checked < 50 {
        let gt = Box3D::new(
            [0.0; 3].map(|_: f64| rng.random_range(-1.0..1.0)),
            [0.0; 3].map(|_: f64| rng.random_range(0.3..2.0)),
            [rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        )
        .unwrap();
        let c = gt.center();
        let mut p = [0.0; 9];
        for k in 0..3 {
            p[k] = c[k] + rng.random_range(-0.4..0.4);
            p[3 + k] = rng.random_range(0.3..2.0);
        }
        p[6] = rng.random_range(-3.0..3.0);
        p[7] = rng.random_range(-1.2..1.2);
        p[8] = rng.random_range(-3.0..3.0);
        if kink_distance(&p, &gt) < KINK_MARGIN {
            continue;
        }
        let g = loss_iou_grad(&p, &gt);
        assert_eq!(g.loss, loss_iou(&p, &gt));
        for i in 0..9 {
            let (mut up, mut down) = (p, p);
            up[i] += EPS;
            down[i] -= EPS;
            let num = (loss_iou(&up, &gt) - loss_iou(&down, &gt)) / (2.0 * EPS);
            assert!(rel_err(g.grad[i], num) < REL_TOL, "param {i}: analytic {} numeric {num} at {p:?}", g.grad[i]);
        }
        checked += 1;
    }
}

fn randn(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[test]
fn contrastive_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    for _ in 0..50 {
        let d = rng.random_range(4..24);
        let matched: Vec<DVector<f64>> = (0..rng.random_range(1..4)).map(|_| randn(d, &mut rng)).collect();
        let unmatched: Vec<DVector<f64>> = (0..rng.random_range(1..6)).map(|_| randn(d, &mut rng)).collect();
        let h = randn(d, &mut rng);
        let tau = rng.random_range(0.05..1.0);
        let g = loss_contrast_grad(&matched, &h, &unmatched, tau).unwrap();
        let f = |m: &[DVector<f64>], h: &DVector<f64>, u: &[DVector<f64>]| loss_contrast(m, h, u, tau).unwrap();
        for k in 0..d {
            let (mut up, mut down) = (h.clone(), h.clone());
            up[k] += EPS;
            down[k] -= EPS;
            let num = (f(&matched, &up, &unmatched) - f(&matched, &down, &unmatched)) / (2.0 * EPS);
            assert!(rel_err(g.d_h[k], num) < REL_TOL, "d_h[{k}]");
        }
        for (v, grads, is_matched) in [(&matched, &g.d_matched, true), (&unmatched, &g.d_unmatched, false)] {
            for (i, gi) in grads.iter().enumerate() {
                for k in 0..d {
                    let shift = |delta: f64| {
                        let mut vv = v.clone();
                        vv[i][k] += delta;
                        if is_matched {
                            f(&vv, &h, &unmatched)
                        } else {
                            f(&matched, &h, &vv)
                        }
                    };
                    let num = (shift(EPS) - shift(-EPS)) / (2.0 * EPS);
                    assert!(rel_err(gi[k], num) < REL_TOL, "vector {i} component {k}");
                }
            }
        }
    }
}
