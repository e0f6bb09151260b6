//! Spatial relations between annotated objects.

use nalgebra::Vector3;

use super::{aabb, corners, point_in_box};
use crate::scene::{AnnotatedObject, Box3D, Scene};

/// Vertical slack (m) under which an object still counts as resting on or
/// above another.
pub const ABOVE_CONTACT_TOLERANCE: f64 = 0.05;

/// Distances equal within this margin (m) are ties.
pub const DISTANCE_TIE_TOLERANCE: f64 = 1e-9;

pub fn center_distance(a: &Box3D, b: &Box3D) -> f64 {
    (Vector3::from(a.center()) - Vector3::from(b.center())).norm()
}

/// Closest other object to `anchor` by center distance, optionally limited to
/// one category. Near-ties go to the lowest object id.
pub fn nearest<'s>(anchor: &AnnotatedObject, scene: &'s Scene, category: Option<&str>) -> Option<&'s AnnotatedObject> {
    rank_by_distance(anchor, scene, category, false)
}

/// Farthest other object, same conventions as [`nearest`].
pub fn farthest<'s>(anchor: &AnnotatedObject, scene: &'s Scene, category: Option<&str>) -> Option<&'s AnnotatedObject> {
    rank_by_distance(anchor, scene, category, true)
}

fn rank_by_distance<'s>(
    anchor: &AnnotatedObject,
    scene: &'s Scene,
    category: Option<&str>,
    farthest: bool,
) -> Option<&'s AnnotatedObject> {
    let candidates: Vec<(f64, &AnnotatedObject)> = scene
        .objects
        .iter()
        .filter(|o| o.object_id != anchor.object_id)
        .filter(|o| category.is_none_or(|c| o.category == c))
        .map(|o| {
            let d = center_distance(&anchor.bbox, &o.bbox);
            (if farthest { -d } else { d }, o)
        })
        .collect();
    let best = candidates.iter().map(|(d, _)| *d).min_by(f64::total_cmp)?;
    candidates
        .into_iter()
        .filter(|(d, _)| *d <= best + DISTANCE_TIE_TOLERANCE)
        .map(|(_, o)| o)
        .min_by_key(|o| o.object_id)
}

/// Signed clearances used by [`is_above`]: `[vertical, overlap_x, overlap_y]`.
/// `a` is above `b` when all three are positive.
pub fn above_clearances(a: &Box3D, b: &Box3D) -> [f64; 3] {
    let (alo, ahi) = aabb(a);
    let (blo, bhi) = aabb(b);
    [
        alo[2] - bhi[2] + ABOVE_CONTACT_TOLERANCE,
        ahi[0].min(bhi[0]) - alo[0].max(blo[0]),
        ahi[1].min(bhi[1]) - alo[1].max(blo[1]),
    ]
}

/// `a` sits above `b`: its bottom is no lower than `b`'s top (up to the
/// contact tolerance) and their horizontal footprints overlap.
pub fn is_above(a: &Box3D, b: &Box3D) -> bool {
    above_clearances(a, b).iter().all(|&c| c > 0.0)
}

pub fn is_near(a: &Box3D, b: &Box3D, radius: f64) -> bool {
    center_distance(a, b) <= radius
}

/// Every corner of `inner` lies within `outer`.
pub fn contains(outer: &Box3D, inner: &Box3D) -> bool {
    corners(inner).iter().all(|p| point_in_box(outer, p, 1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: u32, cat: &str, c: [f64; 3]) -> AnnotatedObject {
        AnnotatedObject::new(id, cat, Box3D::axis_aligned(c, [0.5; 3]).unwrap())
    }

    #[test]
    fn nearest_with_filter() {
        let scene = Scene::new(
            "s",
            vec![
                obj(0, "stove", [0.0, 0.0, 0.5]),
                obj(1, "trash_can", [3.0, 0.0, 0.3]),
                obj(2, "chair", [1.0, 0.0, 0.3]),
            ],
            None,
        )
        .unwrap();
        let stove = &scene.objects[0];
        assert_eq!(nearest(stove, &scene, Some("trash_can")).unwrap().object_id, 1);
        assert_eq!(nearest(stove, &scene, None).unwrap().object_id, 2);
        assert!(nearest(stove, &scene, Some("bed")).is_none());
        assert_eq!(farthest(stove, &scene, None).unwrap().object_id, 1);
    }

    #[test]
    fn nearest_tie_goes_to_lowest_id() {
        let scene = Scene::new(
            "s",
            vec![
                obj(5, "bin", [1.0, 0.0, 0.0]),
                obj(0, "stove", [0.0, 0.0, 0.0]),
                obj(2, "bin", [-1.0, 0.0, 0.0]),
            ],
            None,
        )
        .unwrap();
        let stove = scene.object(0).unwrap();
        assert_eq!(nearest(stove, &scene, Some("bin")).unwrap().object_id, 2);
    }

    #[test]
    fn above_same_footprint() {
        let hi = Box3D::axis_aligned([0.0, 0.0, 2.0], [1.0; 3]).unwrap();
        let lo = Box3D::axis_aligned([0.0, 0.0, 0.0], [1.0; 3]).unwrap();
        assert!(is_above(&hi, &lo));
        assert!(!is_above(&lo, &hi));
        let side = Box3D::axis_aligned([3.0, 0.0, 2.0], [1.0; 3]).unwrap();
        assert!(!is_above(&side, &lo));
        // resting contact
        let resting = Box3D::axis_aligned([0.0, 0.0, 1.0], [1.0; 3]).unwrap();
        assert!(is_above(&resting, &lo));
    }

    #[test]
    fn near_and_contains() {
        let a = Box3D::axis_aligned([0.0; 3], [4.0; 3]).unwrap();
        let b = Box3D::new([0.5, 0.0, 0.0], [1.0; 3], [0.7, 0.0, 0.0]).unwrap();
        assert!(contains(&a, &b));
        assert!(!contains(&b, &a));
        assert!(is_near(&a, &b, 0.5));
        assert!(!is_near(&a, &b, 0.49));
    }
}
