use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scene::Box3D;

/// On-plane classification tolerance for clipping, in meters.
pub const CLIP_TOLERANCE: f64 = 1e-9;

/// The closed half-space `normal · x <= offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    normal: Vector3<f64>,
    offset: f64,
}

impl HalfSpace {
    /// `normal` must be unit length within 1e-12.
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self> {
        if !offset.is_finite() || (normal.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!(
                "half-space normal must be unit length, got |n| = {}",
                normal.norm()
            )));
        }
        Ok(HalfSpace { normal, offset })
    }

    pub(crate) fn new_unchecked(normal: Vector3<f64>, offset: f64) -> Self {
        HalfSpace { normal, offset }
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Positive outside, negative inside.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Convex polytope as a vertex list and outward-oriented face loops.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexPolytope {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<Vec<usize>>,
}

// Face loops of the corner ordering in `geometry::corners`, counter-clockwise
// seen from outside.
const BOX_FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

impl ConvexPolytope {
    pub fn from_box(b: &Box3D) -> Self {
        ConvexPolytope {
            vertices: super::corners(b).to_vec(),
            faces: BOX_FACES.iter().map(|f| f.to_vec()).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Clip by a half-space (one 3D Sutherland–Hodgman pass): every face loop
    /// is clipped, and the new on-plane vertices are closed with a cap face.
    pub fn clip(&self, hs: &HalfSpace) -> ConvexPolytope {
        if self.is_empty() {
            return ConvexPolytope::default();
        }
        let tol = CLIP_TOLERANCE;
        let dist: Vec<f64> = self.vertices.iter().map(|v| hs.signed_distance(v)).collect();
        if dist.iter().all(|&d| d <= tol) {
            return self.clone();
        }
        // Nothing strictly inside: at most a flat sliver on the plane.
        if dist.iter().all(|&d| d >= -tol) {
            return ConvexPolytope::default();
        }

        let mut vertices: Vec<Vector3<f64>> = Vec::with_capacity(self.vertices.len() + 8);
        let mut on_plane: Vec<bool> = Vec::with_capacity(self.vertices.len() + 8);
        // old index -> new index for kept vertices
        let mut remap = vec![usize::MAX; self.vertices.len()];
        for (i, v) in self.vertices.iter().enumerate() {
            if dist[i] <= tol {
                remap[i] = vertices.len();
                vertices.push(*v);
                on_plane.push(dist[i] >= -tol);
            }
        }
        let mut edge_points: Vec<((usize, usize), usize)> = Vec::new();

        let mut faces: Vec<Vec<usize>> = Vec::with_capacity(self.faces.len() + 1);
        for face in &self.faces {
            let mut out: Vec<usize> = Vec::with_capacity(face.len() + 2);
            let n = face.len();
            for k in 0..n {
                let s = face[k];
                let e = face[(k + 1) % n];
                let s_in = dist[s] <= tol;
                let e_in = dist[e] <= tol;
                if e_in {
                    if !s_in {
                        out.push(self.crossing(s, e, &dist, &remap, &mut vertices, &mut on_plane, &mut edge_points));
                    }
                    out.push(remap[e]);
                } else if s_in {
                    out.push(self.crossing(s, e, &dist, &remap, &mut vertices, &mut on_plane, &mut edge_points));
                }
            }
            out.dedup();
            while out.len() > 1 && out.first() == out.last() {
                out.pop();
            }
            if out.len() >= 3 {
                faces.push(out);
            }
        }

        let has_plane_face = faces.iter().any(|f| f.iter().all(|&i| on_plane[i]));
        if !has_plane_face {
            let mut used = vec![false; vertices.len()];
            for f in &faces {
                for &i in f {
                    used[i] = true;
                }
            }
            let cap: Vec<usize> = (0..vertices.len()).filter(|&i| used[i] && on_plane[i]).collect();
            if cap.len() >= 3 {
                faces.push(order_around(&cap, &vertices, &hs.normal));
            }
        }
        if faces.len() < 4 {
            return ConvexPolytope::default();
        }
        ConvexPolytope { vertices, faces }.compact()
    }

    #[allow(clippy::too_many_arguments)]
    fn crossing(
        &self,
        s: usize,
        e: usize,
        dist: &[f64],
        remap: &[usize],
        vertices: &mut Vec<Vector3<f64>>,
        on_plane: &mut Vec<bool>,
        cache: &mut Vec<((usize, usize), usize)>,
    ) -> usize {
        // An inside endpoint that already sits on the plane is the crossing.
        let inside = if dist[s] <= CLIP_TOLERANCE { s } else { e };
        if dist[inside] >= -CLIP_TOLERANCE {
            return remap[inside];
        }
        let key = (s.min(e), s.max(e));
        if let Some(&(_, idx)) = cache.iter().find(|(k, _)| *k == key) {
            return idx;
        }
        let (a, b) = key;
        let t = dist[a] / (dist[a] - dist[b]);
        let p = self.vertices[a] + (self.vertices[b] - self.vertices[a]) * t;
        let idx = vertices.len();
        vertices.push(p);
        on_plane.push(true);
        cache.push((key, idx));
        idx
    }

    /// Drop unreferenced vertices.
    fn compact(self) -> ConvexPolytope {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::with_capacity(self.vertices.len());
        let faces = self
            .faces
            .into_iter()
            .map(|f| {
                f.into_iter()
                    .map(|i| {
                        if remap[i] == usize::MAX {
                            remap[i] = vertices.len();
                            vertices.push(self.vertices[i]);
                        }
                        remap[i]
                    })
                    .collect()
            })
            .collect();
        ConvexPolytope { vertices, faces }
    }

    fn reference_point(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.vertices.iter().sum();
        sum / self.vertices.len() as f64
    }

    /// Volume from the fan of tetrahedra between the vertex centroid and
    /// each face triangle. Never negative.
    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let r = self.reference_point();
        let mut six_v = 0.0;
        for f in &self.faces {
            let a = self.vertices[f[0]] - r;
            for w in f[1..].windows(2) {
                let b = self.vertices[w[0]] - r;
                let c = self.vertices[w[1]] - r;
                six_v += Matrix3::from_columns(&[a, b, c]).determinant();
            }
        }
        (six_v / 6.0).max(0.0)
    }

    /// Newell normal of a face (not normalized).
    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let f = &self.faces[face];
        let mut n = Vector3::zeros();
        for k in 0..f.len() {
            let p = self.vertices[f[k]];
            let q = self.vertices[f[(k + 1) % f.len()]];
            n += p.cross(&q);
        }
        n
    }

    /// Check convexity, planarity and outward orientation within `tol`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let r = if self.is_empty() { return Ok(()) } else { self.reference_point() };
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_normal(fi);
            let norm = n.norm();
            if norm == 0.0 {
                continue;
            }
            let n = n / norm;
            let p0 = self.vertices[f[0]];
            if n.dot(&(p0 - r)) < -tol {
                return Err(Error::Invariant(format!("face {fi} is inward-oriented")));
            }
            for &i in f {
                if n.dot(&(self.vertices[i] - p0)).abs() > tol {
                    return Err(Error::Invariant(format!("face {fi} is not planar")));
                }
            }
            for v in &self.vertices {
                if n.dot(&(v - p0)) > tol {
                    return Err(Error::Invariant(format!("vertex in front of face {fi}")));
                }
            }
        }
        Ok(())
    }
}

/// Order coplanar points counter-clockwise about `normal`.
fn order_around(idx: &[usize], vertices: &[Vector3<f64>], normal: &Vector3<f64>) -> Vec<usize> {
    let centroid: Vector3<f64> = idx.iter().map(|&i| vertices[i]).sum::<Vector3<f64>>() / idx.len() as f64;
    let helper = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    let mut keyed: Vec<(f64, usize)> = idx
        .iter()
        .map(|&i| {
            let d = vertices[i] - centroid;
            (d.dot(&v).atan2(d.dot(&u)), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::half_spaces;

    fn unit() -> Box3D {
        Box3D::axis_aligned([0.0; 3], [1.0; 3]).unwrap()
    }

    #[test]
    fn box_polytope_is_outward_and_convex() {
        let b = Box3D::new([1.0, -2.0, 0.5], [1.0, 2.0, 3.0], [0.4, -1.0, 2.0]).unwrap();
        let p = ConvexPolytope::from_box(&b);
        p.check_invariants(1e-9).unwrap();
        assert!((p.volume() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn clip_in_half() {
        let p = ConvexPolytope::from_box(&unit());
        let hs = HalfSpace::new(Vector3::x(), 0.0).unwrap();
        let c = p.clip(&hs);
        c.check_invariants(1e-9).unwrap();
        assert_eq!(c.faces.len(), 6);
        assert!((c.volume() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clip_off_a_corner() {
        let p = ConvexPolytope::from_box(&unit());
        let n = Vector3::new(1.0, 1.0, 1.0).normalize();
        // plane through (0.5,0.5,0) (0.5,0,0.5) (0,0.5,0.5): n·x = 1/sqrt(3)
        let hs = HalfSpace::new(n, 1.0 / 3f64.sqrt()).unwrap();
        let c = p.clip(&hs);
        c.check_invariants(1e-9).unwrap();
        assert_eq!(c.faces.len(), 7);
        let corner = 0.5f64.powi(3) / 6.0;
        assert!((c.volume() - (1.0 - corner)).abs() < 1e-12);
    }

    #[test]
    fn clip_through_vertices() {
        // Plane x + y = 0 passes through two vertical edges.
        let p = ConvexPolytope::from_box(&unit());
        let hs = HalfSpace::new(Vector3::new(1.0, 1.0, 0.0).normalize(), 0.0).unwrap();
        let c = p.clip(&hs);
        c.check_invariants(1e-9).unwrap();
        assert!((c.volume() - 0.5).abs() < 1e-12);
        assert_eq!(c.faces.len(), 5);
    }

    #[test]
    fn clip_away_everything_or_nothing() {
        let p = ConvexPolytope::from_box(&unit());
        assert!(p.clip(&HalfSpace::new(Vector3::x(), -2.0).unwrap()).is_empty());
        // Touching a face from outside leaves only a flat sliver.
        assert!(p.clip(&HalfSpace::new(Vector3::x(), -0.5).unwrap()).is_empty());
        assert_eq!(p.clip(&HalfSpace::new(Vector3::x(), 0.5).unwrap()), p);
    }

    #[test]
    fn box_half_spaces_contain_own_corners() {
        let b = Box3D::new([0.3, 0.2, 0.1], [1.0, 2.0, 0.5], [1.0, 0.2, -0.4]).unwrap();
        for hs in half_spaces(&b) {
            for c in crate::geometry::corners(&b) {
                assert!(hs.signed_distance(&c) <= 1e-12);
            }
            assert!((hs.normal().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_unit_normal() {
        assert!(HalfSpace::new(Vector3::new(2.0, 0.0, 0.0), 1.0).is_err());
    }
}
