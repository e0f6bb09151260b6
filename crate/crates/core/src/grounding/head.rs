//! Relevance scoring, query selection, the query decoder and the box/score
//! head.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{LocEmbedding, SceneFeatures};
use crate::error::{Error, Result};
use crate::scene::{Box3D, GroundedBox};

/// Bound (m) on the predicted center offset from the query's seed position.
pub const MAX_CENTER_OFFSET: f64 = 2.0;
pub const SIZE_RANGE: [f64; 2] = [0.01, 10.0];
const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub d: usize,
    pub k_queries: usize,
    /// Number of decoder layers.
    pub layers: usize,
    pub ffn_hidden: usize,
}

impl HeadConfig {
    pub fn new(d: usize) -> Self {
        HeadConfig {
            d,
            k_queries: 256,
            layers: 2,
            ffn_hidden: 2 * d,
        }
    }
}

/// Row-major matrix with its shape, for JSON.
#[derive(Serialize, Deserialize)]
struct Shaped {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

mod shaped_matrix {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let data = (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect();
        Shaped {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let sh = Shaped::deserialize(d)?;
        if sh.rows * sh.cols != sh.data.len() {
            return Err(serde::de::Error::custom(format!(
                "matrix {}x{} carries {} values",
                sh.rows,
                sh.cols,
                sh.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(sh.rows, sh.cols, &sh.data))
    }
}

mod shaped_vector {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        Shaped {
            rows: v.len(),
            cols: 1,
            data: v.iter().copied().collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        let sh = Shaped::deserialize(d)?;
        if sh.cols != 1 || sh.rows != sh.data.len() {
            return Err(serde::de::Error::custom("vector must be a single column"));
        }
        Ok(DVector::from_vec(sh.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    #[serde(with = "shaped_matrix")]
    pub weight: DMatrix<f64>,
    #[serde(with = "shaped_vector")]
    pub bias: DVector<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Linear {
            weight: DMatrix::zeros(out, inp),
            bias: DVector::zeros(out),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x + &self.bias
    }
}

/// One decoder layer: text cross-attention, scene cross-attention and a
/// feed-forward block, each with a residual connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayer {
    /// Output projection of the text attention value.
    #[serde(with = "shaped_matrix")]
    pub text_out: DMatrix<f64>,
    #[serde(with = "shaped_matrix")]
    pub scene_q: DMatrix<f64>,
    #[serde(with = "shaped_matrix")]
    pub scene_k: DMatrix<f64>,
    #[serde(with = "shaped_matrix")]
    pub scene_v: DMatrix<f64>,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingHead {
    pub config: HeadConfig,
    #[serde(with = "shaped_matrix")]
    pub w_q: DMatrix<f64>,
    #[serde(with = "shaped_matrix")]
    pub w_k: DMatrix<f64>,
    /// Value projection of `h_loc`, shared by every layer's text attention.
    #[serde(with = "shaped_matrix")]
    pub w_v: DMatrix<f64>,
    pub decoder_layers: Vec<DecoderLayer>,
    /// 8 outputs: center offset (3), log size (3), yaw as (cos, sin).
    pub box_head: Linear,
    pub score_head: Linear,
}

impl GroundingHead {
    pub fn zeros(config: HeadConfig) -> Self {
        let d = config.d;
        let z = || DMatrix::zeros(d, d);
        GroundingHead {
            config,
            w_q: z(),
            w_k: z(),
            w_v: z(),
            decoder_layers: (0..config.layers)
                .map(|_| DecoderLayer {
                    text_out: z(),
                    scene_q: z(),
                    scene_k: z(),
                    scene_v: z(),
                    ffn_in: Linear::zeros(config.ffn_hidden, d),
                    ffn_out: Linear::zeros(d, config.ffn_hidden),
                })
                .collect(),
            box_head: Linear::zeros(8, d),
            score_head: Linear::zeros(1, d),
        }
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    pub fn random(config: HeadConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = Self::zeros(config);
        let mut fill = |m: &mut DMatrix<f64>| {
            let normal = Normal::new(0.0, 1.0 / (m.ncols() as f64).sqrt()).expect("positive std");
            m.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        };
        fill(&mut head.w_q);
        fill(&mut head.w_k);
        fill(&mut head.w_v);
        for l in &mut head.decoder_layers {
            fill(&mut l.text_out);
            fill(&mut l.scene_q);
            fill(&mut l.scene_k);
            fill(&mut l.scene_v);
            fill(&mut l.ffn_in.weight);
            fill(&mut l.ffn_out.weight);
        }
        fill(&mut head.box_head.weight);
        fill(&mut head.score_head.weight);
        head
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.config;
        if c.d == 0 || c.k_queries == 0 {
            return Err(Error::Invariant("head width and query count must be positive".into()));
        }
        if self.decoder_layers.len() != c.layers {
            return Err(Error::DimensionMismatch {
                what: "decoder layers",
                expected: c.layers,
                got: self.decoder_layers.len(),
            });
        }
        let mut shapes: Vec<(&'static str, &DMatrix<f64>, usize, usize)> = vec![
            ("w_q", &self.w_q, c.d, c.d),
            ("w_k", &self.w_k, c.d, c.d),
            ("w_v", &self.w_v, c.d, c.d),
            ("box_head", &self.box_head.weight, 8, c.d),
            ("score_head", &self.score_head.weight, 1, c.d),
        ];
        for l in &self.decoder_layers {
            shapes.push(("text_out", &l.text_out, c.d, c.d));
            shapes.push(("scene_q", &l.scene_q, c.d, c.d));
            shapes.push(("scene_k", &l.scene_k, c.d, c.d));
            shapes.push(("scene_v", &l.scene_v, c.d, c.d));
            shapes.push(("ffn_in", &l.ffn_in.weight, c.ffn_hidden, c.d));
            shapes.push(("ffn_out", &l.ffn_out.weight, c.d, c.ffn_hidden));
        }
        for (what, m, r, k) in shapes {
            if m.nrows() != r || m.ncols() != k {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: r * k,
                    got: m.nrows() * m.ncols(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!("{what} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("head serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let head: GroundingHead = serde_json::from_str(text).map_err(|e| Error::parse(None, Some(e.line()), e.to_string()))?;
        head.validate()?;
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { location, message } => Error::parse(Some(path.to_path_buf()), location.line, message),
            other => other,
        })
    }
}

fn check_dims(fs: &SceneFeatures, h: &LocEmbedding, head: &GroundingHead) -> Result<()> {
    let d = head.config.d;
    if fs.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "scene feature width",
            expected: d,
            got: fs.dim(),
        });
    }
    if h.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "loc embedding width",
            expected: d,
            got: h.dim(),
        });
    }
    Ok(())
}

/// Scaled dot-product logits `(W_q f_i) . (W_k h) / sqrt(d)` per scene row.
pub fn relevance_scores(fs: &SceneFeatures, h: &LocEmbedding, head: &GroundingHead) -> Result<Vec<f64>> {
    check_dims(fs, h, head)?;
    let key = &head.w_k * &h.vector;
    // (F W_q^T) key == F (W_q^T key)
    let proj = head.w_q.transpose() * key;
    let scale = (head.config.d as f64).sqrt();
    Ok((&fs.features * proj).iter().map(|s| s / scale).collect())
}

/// Selected object queries.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    /// k x d.
    pub features: DMatrix<f64>,
    pub positions: Vec<[f64; 3]>,
    /// Scene rows the queries came from, by descending score.
    pub indices: Vec<usize>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn permuted(&self, perm: &[usize]) -> QuerySet {
        QuerySet {
            features: self.features.select_rows(perm),
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            indices: perm.iter().map(|&i| self.indices[i]).collect(),
        }
    }
}

/// Indices of the `k` largest scores, highest first, ties to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let k = k.min(scores.len());
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.truncate(k);
    idx.sort_by(cmp);
    idx
}

pub fn select_queries(scores: &[f64], fs: &SceneFeatures, k: usize) -> Result<QuerySet> {
    if k == 0 {
        return Err(Error::Invariant("query count must be at least 1".into()));
    }
    if scores.len() != fs.len() {
        return Err(Error::DimensionMismatch {
            what: "scores per scene row",
            expected: fs.len(),
            got: scores.len(),
        });
    }
    let indices = top_k_indices(scores, k);
    Ok(QuerySet {
        features: fs.features.select_rows(&indices),
        positions: indices.iter().map(|&i| fs.positions[i]).collect(),
        indices,
    })
}

/// Numerically stable softmax of each row in place.
pub fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|x| *x = (*x - max).exp());
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= sum);
    }
}

/// Decoded queries plus the scene attention weights (k x N) of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub queries: DMatrix<f64>,
    pub attention: Vec<DMatrix<f64>>,
}

pub fn decode(q: &QuerySet, h: &LocEmbedding, fs: &SceneFeatures, head: &GroundingHead) -> Result<DMatrix<f64>> {
    decode_with_attention(q, h, fs, head).map(|d| d.queries)
}

pub fn decode_with_attention(q: &QuerySet, h: &LocEmbedding, fs: &SceneFeatures, head: &GroundingHead) -> Result<Decoded> {
    check_dims(fs, h, head)?;
    if q.features.ncols() != head.config.d {
        return Err(Error::DimensionMismatch {
            what: "query width",
            expected: head.config.d,
            got: q.features.ncols(),
        });
    }
    let scale = (head.config.d as f64).sqrt();
    let value = &head.w_v * &h.vector;
    let mut x = q.features.clone();
    let mut attention = Vec::with_capacity(head.decoder_layers.len());
    for layer in &head.decoder_layers {
        // A single key gets softmax weight 1, so the block adds its value.
        let text = (&layer.text_out * &value).transpose();
        for mut row in x.row_iter_mut() {
            row += &text;
        }
        let queries = &x * layer.scene_q.transpose();
        let keys = &fs.features * layer.scene_k.transpose();
        let values = &fs.features * layer.scene_v.transpose();
        let mut weights = (queries * keys.transpose()) / scale;
        softmax_rows(&mut weights);
        x += &weights * values;
        let mut hidden = &x * layer.ffn_in.weight.transpose();
        for mut row in hidden.row_iter_mut() {
            row += layer.ffn_in.bias.transpose();
            row.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let mut ff = hidden * layer.ffn_out.weight.transpose();
        for mut row in ff.row_iter_mut() {
            row += layer.ffn_out.bias.transpose();
        }
        x += ff;
        attention.push(weights);
    }
    Ok(Decoded { queries: x, attention })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One box per decoded query, in query order.
pub fn predict_boxes(decoded: &DMatrix<f64>, positions: &[[f64; 3]], head: &GroundingHead) -> Result<Vec<GroundedBox>> {
    if decoded.nrows() != positions.len() {
        return Err(Error::DimensionMismatch {
            what: "positions per decoded query",
            expected: decoded.nrows(),
            got: positions.len(),
        });
    }
    let [lo, hi] = SIZE_RANGE;
    decoded
        .row_iter()
        .zip(positions)
        .map(|(row, pos)| {
            let x = row.transpose();
            let o = head.box_head.apply(&x);
            let center = std::array::from_fn(|i| pos[i] + MAX_CENTER_OFFSET * o[i].tanh());
            let size = std::array::from_fn(|i| o[3 + i].exp().clamp(lo, hi));
            let yaw = o[7].atan2(o[6]);
            let logit = head.score_head.apply(&x)[0].clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            GroundedBox::new(Box3D::new(center, size, [yaw, 0.0, 0.0])?, sigmoid(logit), None)
        })
        .collect()
}

/// Full forward pass: score, select `min(k_queries, N)` queries, decode and
/// predict.
pub fn ground(fs: &SceneFeatures, h: &LocEmbedding, head: &GroundingHead) -> Result<Vec<GroundedBox>> {
    let scores = relevance_scores(fs, h, head)?;
    let q = select_queries(&scores, fs, head.config.k_queries.min(fs.len()))?;
    let decoded = decode(&q, h, fs, head)?;
    predict_boxes(&decoded, &q.positions, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_features(n: usize, d: usize, seed: u64) -> SceneFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pos = (0..n).map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), 0.5]).collect();
        SceneFeatures::new(DMatrix::from_row_slice(n, d, &data), pos, (0..n as u32).collect(), "r").unwrap()
    }

    #[test]
    fn zero_loc_gives_zero_scores() {
        let head = GroundingHead::random(HeadConfig::new(8), 1);
        let fs = random_features(5, 8, 2);
        let s = relevance_scores(&fs, &LocEmbedding::zeros(8), &head).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn select_examples() {
        assert_eq!(top_k_indices(&[0.1, 0.9, 0.5], 2), vec![1, 2]);
        assert_eq!(top_k_indices(&[0.1, 0.9, 0.5], 3), vec![1, 2, 0]);
        assert_eq!(top_k_indices(&[0.1, 0.9, 0.5], 10), vec![1, 2, 0]);
        assert_eq!(top_k_indices(&[1.0, 1.0, 1.0, 2.0], 2), vec![3, 0]);
    }

    #[test]
    fn zero_layers_is_identity() {
        let cfg = HeadConfig {
            layers: 0,
            ..HeadConfig::new(8)
        };
        let head = GroundingHead::random(cfg, 3);
        let fs = random_features(6, 8, 4);
        let h = LocEmbedding::new(DVector::from_element(8, 0.3)).unwrap();
        let q = select_queries(&relevance_scores(&fs, &h, &head).unwrap(), &fs, 3).unwrap();
        assert_eq!(decode(&q, &h, &fs, &head).unwrap(), q.features);
    }

    #[test]
    fn zero_head_prediction() {
        let head = GroundingHead::zeros(HeadConfig::new(8));
        let fs = random_features(3, 8, 5);
        let boxes = ground(&fs, &LocEmbedding::zeros(8), &head).unwrap();
        assert_eq!(boxes.len(), 3);
        for b in &boxes {
            assert_eq!(b.bbox.size(), [1.0; 3]);
            assert_eq!(b.confidence, 0.5);
            assert!(fs.positions.contains(&b.bbox.center()));
        }
    }

    #[test]
    fn json_round_trip() {
        let head = GroundingHead::random(HeadConfig::new(8), 9);
        let back = GroundingHead::from_json(&head.to_json()).unwrap();
        assert_eq!(head, back);
        let mut bad = head.clone();
        bad.w_q = DMatrix::zeros(3, 8);
        assert!(GroundingHead::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let head = GroundingHead::random(HeadConfig::new(8), 1);
        let fs = random_features(4, 8, 2);
        assert!(matches!(
            relevance_scores(&fs, &LocEmbedding::zeros(9), &head),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
