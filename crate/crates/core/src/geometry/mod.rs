//! Exact oriented-box geometry.
//!
//! Intersection volume is computed by clipping the polytope of one box with
//! the six half-spaces of the other and summing centroid-fan tetrahedra.

mod polytope;
pub mod relations;

use nalgebra::{Matrix3, Vector3};

pub use polytope::{ConvexPolytope, HalfSpace, CLIP_TOLERANCE};
pub use relations::{center_distance, contains, farthest, is_above, is_near, nearest, ABOVE_CONTACT_TOLERANCE};

use crate::scene::Box3D;

/// Intersections below this volume (m^3) are reported as empty.
pub const MIN_VOLUME: f64 = 1e-12;

/// Which IoU the metric layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    #[default]
    Oriented,
    /// IoU of the axis-aligned hulls.
    AxisAligned,
}

/// Rotation for intrinsic yaw (z) -> pitch (y) -> roll (x): `Rz * Ry * Rx`.
pub fn rotation_matrix(euler: [f64; 3]) -> Matrix3<f64> {
    let [yaw, pitch, roll] = euler;
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// The eight corners, `center + R * (s ⊙ size / 2)` where bit `k` of the
/// corner index selects the positive sign on axis `k`.
pub fn corners(b: &Box3D) -> [Vector3<f64>; 8] {
    let r = rotation_matrix(b.euler());
    let c = Vector3::from(b.center());
    let h = Vector3::from(b.size()) * 0.5;
    std::array::from_fn(|i| {
        let local = Vector3::new(
            if i & 1 != 0 { h.x } else { -h.x },
            if i & 2 != 0 { h.y } else { -h.y },
            if i & 4 != 0 { h.z } else { -h.z },
        );
        c + r * local
    })
}

/// The six half-spaces whose intersection is the box.
pub fn half_spaces(b: &Box3D) -> [HalfSpace; 6] {
    let r = rotation_matrix(b.euler());
    let c = Vector3::from(b.center());
    let s = b.size();
    std::array::from_fn(|i| {
        let axis = i / 2;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let n: Vector3<f64> = r.column(axis).into_owned() * sign;
        HalfSpace::new_unchecked(n, n.dot(&c) + s[axis] / 2.0)
    })
}

/// Axis-aligned hull as `(min, max)`.
pub fn aabb(b: &Box3D) -> ([f64; 3], [f64; 3]) {
    let r = rotation_matrix(b.euler());
    let c = b.center();
    let s = b.size();
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for i in 0..3 {
        let ext: f64 = (0..3).map(|j| r[(i, j)].abs() * s[j] / 2.0).sum();
        lo[i] = c[i] - ext;
        hi[i] = c[i] + ext;
    }
    (lo, hi)
}

/// The axis-aligned hull as a box.
pub fn aabb_box(b: &Box3D) -> Box3D {
    let (lo, hi) = aabb(b);
    let center = std::array::from_fn(|i| (lo[i] + hi[i]) / 2.0);
    let size = std::array::from_fn(|i| hi[i] - lo[i]);
    Box3D::axis_aligned(center, size).expect("hull of a valid box is valid")
}

pub fn intersection_volume(a: &Box3D, b: &Box3D) -> f64 {
    let (alo, ahi) = aabb(a);
    let (blo, bhi) = aabb(b);
    if (0..3).any(|k| ahi[k] < blo[k] - CLIP_TOLERANCE || bhi[k] < alo[k] - CLIP_TOLERANCE) {
        return 0.0;
    }
    let mut poly = ConvexPolytope::from_box(a);
    for hs in half_spaces(b) {
        poly = poly.clip(&hs);
        if poly.is_empty() {
            return 0.0;
        }
    }
    let v = poly.volume();
    if v < MIN_VOLUME {
        0.0
    } else {
        v
    }
}

fn ratio(inter: f64, va: f64, vb: f64) -> f64 {
    let union = va + vb - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Oriented 3D IoU.
pub fn iou(a: &Box3D, b: &Box3D) -> f64 {
    ratio(intersection_volume(a, b), a.volume(), b.volume())
}

/// Interval-arithmetic overlap of two axis-aligned extents.
pub fn aabb_intersection_volume(a: ([f64; 3], [f64; 3]), b: ([f64; 3], [f64; 3])) -> f64 {
    (0..3)
        .map(|k| (a.1[k].min(b.1[k]) - a.0[k].max(b.0[k])).max(0.0))
        .product()
}

/// IoU of the axis-aligned hulls.
pub fn iou_aabb(a: &Box3D, b: &Box3D) -> f64 {
    let (ha, hb) = (aabb(a), aabb(b));
    let vol = |h: ([f64; 3], [f64; 3])| (0..3).map(|k| h.1[k] - h.0[k]).product::<f64>();
    let inter = aabb_intersection_volume(ha, hb);
    let inter = if inter < MIN_VOLUME { 0.0 } else { inter };
    ratio(inter, vol(ha), vol(hb))
}

pub fn iou_with_mode(a: &Box3D, b: &Box3D, mode: IouMode) -> f64 {
    match mode {
        IouMode::Oriented => iou(a, b),
        IouMode::AxisAligned => iou_aabb(a, b),
    }
}

/// Row `i`, column `j` holds `iou(preds[i], gts[j])`.
pub fn iou_matrix(preds: &[Box3D], gts: &[Box3D]) -> Vec<Vec<f64>> {
    iou_matrix_with_mode(preds, gts, IouMode::Oriented)
}

pub fn iou_matrix_with_mode(preds: &[Box3D], gts: &[Box3D], mode: IouMode) -> Vec<Vec<f64>> {
    preds
        .iter()
        .map(|p| gts.iter().map(|g| iou_with_mode(p, g, mode)).collect())
        .collect()
}

/// Whether `p` lies inside the box (tolerance in meters).
pub fn point_in_box(b: &Box3D, p: &Vector3<f64>, tol: f64) -> bool {
    let r = rotation_matrix(b.euler());
    let local = r.transpose() * (p - Vector3::from(b.center()));
    let s = b.size();
    (0..3).all(|k| local[k].abs() <= s[k] / 2.0 + tol)
}
