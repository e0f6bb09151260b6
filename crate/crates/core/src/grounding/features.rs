//! Deterministic scene featurization standing in for a frozen point-cloud
//! encoder.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::scene_seed;
use crate::error::{Error, Result};
use crate::scene::Scene;

/// Hash salt for category embeddings. Chosen so that the shipped categories
/// are pairwise well separated at d = 64.
pub const CATEGORY_SALT: u32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub d: usize,
    /// Jittered duplicate rows per object.
    pub jitter_copies: usize,
    /// Standard deviation (m) of the duplicate positions.
    pub jitter_sigma: f64,
}

impl FeatureConfig {
    pub fn new(d: usize) -> Self {
        FeatureConfig {
            d,
            jitter_copies: 3,
            jitter_sigma: 0.05,
        }
    }
}

/// Per-row scene features with their seed positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFeatures {
    /// N x d.
    pub features: DMatrix<f64>,
    pub positions: Vec<[f64; 3]>,
    /// Object each row was derived from.
    pub object_ids: Vec<u32>,
    pub scene_id: String,
}

impl SceneFeatures {
    pub fn new(features: DMatrix<f64>, positions: Vec<[f64; 3]>, object_ids: Vec<u32>, scene_id: impl Into<String>) -> Result<Self> {
        let fs = SceneFeatures {
            features,
            positions,
            object_ids,
            scene_id: scene_id.into(),
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if n == 0 {
            return Err(Error::Invariant("scene features need at least one row".into()));
        }
        if self.positions.len() != n {
            return Err(Error::DimensionMismatch {
                what: "positions per feature row",
                expected: n,
                got: self.positions.len(),
            });
        }
        if self.object_ids.len() != n {
            return Err(Error::DimensionMismatch {
                what: "object ids per feature row",
                expected: n,
                got: self.object_ids.len(),
            });
        }
        if self.features.iter().any(|v| !v.is_finite()) || self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("scene features must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Reorder rows: row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> SceneFeatures {
        SceneFeatures {
            features: self.features.select_rows(perm),
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            object_ids: perm.iter().map(|&i| self.object_ids[i]).collect(),
            scene_id: self.scene_id.clone(),
        }
    }
}

/// The `<LOC>` embedding handed from the reasoner to the grounder.
#[derive(Debug, Clone, PartialEq)]
pub struct LocEmbedding {
    pub vector: DVector<f64>,
}

impl LocEmbedding {
    pub fn new(vector: DVector<f64>) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("loc embedding must be finite".into()));
        }
        Ok(LocEmbedding { vector })
    }

    pub fn zeros(d: usize) -> Self {
        LocEmbedding {
            vector: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Number of frequencies per coordinate for width `d`.
pub fn frequency_count(d: usize) -> usize {
    (d / 32).max(1)
}

/// `sin`/`cos` of each coordinate at octave-spaced frequencies; length `6 * f`.
pub fn positional_encoding(p: [f64; 3], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * frequencies);
    for x in p {
        for k in 0..frequencies {
            let w = PI / 4.0 * f64::from(1u32 << k.min(30));
            out.push((w * x).sin());
            out.push((w * x).cos());
        }
    }
    out
}

/// Unit-norm Gaussian vector seeded by a hash of the category name.
pub fn category_embedding(category: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(CATEGORY_SALT.to_le_bytes());
    h.update(category.as_bytes());
    let seed: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn feature_row(center: [f64; 3], category: &str, d: usize) -> Vec<f64> {
    let mut row = positional_encoding(center, frequency_count(d));
    let rest = d.saturating_sub(row.len());
    row.extend(category_embedding(category, rest));
    row.truncate(d);
    row
}

/// One row per object followed by its jittered duplicates.
pub fn featurize_scene(scene: &Scene, d: usize, seed: u64) -> Result<SceneFeatures> {
    featurize_scene_with(scene, &FeatureConfig::new(d), seed)
}

pub fn featurize_scene_with(scene: &Scene, cfg: &FeatureConfig, seed: u64) -> Result<SceneFeatures> {
    if cfg.d < 8 {
        return Err(Error::Invariant(format!("feature width must be at least 8, got {}", cfg.d)));
    }
    if scene.objects.is_empty() {
        return Err(Error::Invariant(format!("scene {} has no objects to featurize", scene.scene_id)));
    }
    let jitter = Normal::new(0.0, cfg.jitter_sigma.max(0.0)).map_err(|e| Error::Invariant(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(seed, &scene.scene_id));
    let mut rows = Vec::new();
    let mut positions = Vec::new();
    let mut ids = Vec::new();
    for o in &scene.objects {
        let c = o.bbox.center();
        for copy in 0..=cfg.jitter_copies {
            let p = if copy == 0 { c } else { c.map(|x| x + jitter.sample(&mut rng)) };
            rows.extend(feature_row(p, &o.category, cfg.d));
            positions.push(p);
            ids.push(o.object_id);
        }
    }
    let n = positions.len();
    SceneFeatures::new(DMatrix::from_row_slice(n, cfg.d, &rows), positions, ids, scene.scene_id.clone())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::AffordanceTable;
    use crate::scene::{AnnotatedObject, Box3D};

    fn two() -> Scene {
        Scene::new(
            "two",
            vec![
                AnnotatedObject::new(0, "lamp", Box3D::axis_aligned([1.0, 1.0, 0.5], [0.3; 3]).unwrap()),
                AnnotatedObject::new(1, "bed", Box3D::axis_aligned([3.0, 1.0, 0.3], [2.0, 1.6, 0.5]).unwrap()),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn row_count_and_determinism() {
        let cfg = FeatureConfig {
            jitter_copies: 0,
            ..FeatureConfig::new(16)
        };
        assert_eq!(featurize_scene_with(&two(), &cfg, 1).unwrap().len(), 2);
        let a = featurize_scene(&two(), 32, 5).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, featurize_scene(&two(), 32, 5).unwrap());
        assert!(featurize_scene(&two(), 4, 5).is_err());
    }

    #[test]
    fn shipped_categories_are_separated() {
        let t = AffordanceTable::builtin();
        let d = 64;
        let dim = d - 6 * frequency_count(d);
        let embs: Vec<Vec<f64>> = t.categories.keys().map(|c| category_embedding(c, dim)).collect();
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                assert!(cosine(&embs[i], &embs[j]) < 0.5);
            }
        }
    }
}
