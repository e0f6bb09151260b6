//! Scene, dataset and prediction value types.
//!
//! Units are meters and radians throughout. A [`Box3D`] is a 9-DoF oriented
//! box whose Euler angles are applied intrinsically yaw (z), then pitch (y),
//! then roll (x); all-zero angles give an axis-aligned box.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::templates::OutputDirective;

/// Oriented 3D bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct Box3D {
    center: [f64; 3],
    size: [f64; 3],
    euler: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    center: [f64; 3],
    size: [f64; 3],
    #[serde(default)]
    euler: [f64; 3],
}

impl TryFrom<RawBox> for Box3D {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        Box3D::new(raw.center, raw.size, raw.euler)
    }
}

/// Map an angle into (-pi, pi]. Values already in range are returned unchanged,
/// which keeps normalization idempotent bit-for-bit.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let two_pi = 2.0 * PI;
    let mut r = a.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    if r <= -PI {
        r = PI;
    }
    r
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], euler: [f64; 3]) -> Result<Self> {
        if center.iter().chain(euler.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "box has non-finite center or angle: center {center:?}, euler {euler:?}"
            )));
        }
        if size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Invariant(format!(
                "box size components must be finite and > 0, got {size:?}"
            )));
        }
        Ok(Box3D {
            center,
            size,
            euler: euler.map(normalize_angle),
        })
    }

    pub fn axis_aligned(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        Self::new(center, size, [0.0; 3])
    }

    /// Build from the flat parameter layout `[cx, cy, cz, w, l, h, yaw, pitch, roll]`.
    pub fn from_params(p: &[f64; 9]) -> Result<Self> {
        Self::new([p[0], p[1], p[2]], [p[3], p[4], p[5]], [p[6], p[7], p[8]])
    }

    pub fn params(&self) -> [f64; 9] {
        let (c, s, e) = (self.center, self.size, self.euler);
        [c[0], c[1], c[2], s[0], s[1], s[2], e[0], e[1], e[2]]
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn size(&self) -> [f64; 3] {
        self.size
    }

    /// `[yaw, pitch, roll]` in (-pi, pi].
    pub fn euler(&self) -> [f64; 3] {
        self.euler
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.euler == [0.0; 3]
    }

    /// Re-run angle normalization. Construction already normalizes, so this
    /// is the identity on any value obtained through the public API.
    pub fn normalized(&self) -> Self {
        Box3D {
            euler: self.euler.map(normalize_angle),
            ..*self
        }
    }

    pub fn with_center(&self, center: [f64; 3]) -> Result<Self> {
        Self::new(center, self.size, self.euler)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    #[serde(rename = "id")]
    pub object_id: u32,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: Box3D,
}

impl AnnotatedObject {
    pub fn new(object_id: u32, category: impl Into<String>, bbox: Box3D) -> Self {
        AnnotatedObject {
            object_id,
            category: category.into(),
            bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_bounds: Option<Box3D>,
    pub objects: Vec<AnnotatedObject>,
}

impl Scene {
    /// Construct and validate.
    pub fn new(
        scene_id: impl Into<String>,
        objects: Vec<AnnotatedObject>,
        room_bounds: Option<Box3D>,
    ) -> Result<Self> {
        let scene = Scene {
            scene_id: scene_id.into(),
            room_bounds,
            objects,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene_id.is_empty() {
            return Err(Error::Invariant("scene_id is empty".into()));
        }
        let mut seen = HashSet::new();
        for obj in &self.objects {
            if !seen.insert(obj.object_id) {
                return Err(Error::Invariant(format!("duplicate object_id {}", obj.object_id)));
            }
            if obj.category.is_empty() {
                return Err(Error::Invariant(format!(
                    "object_id {} has an empty category",
                    obj.object_id
                )));
            }
        }
        if let Some(room) = &self.room_bounds {
            if !room.is_axis_aligned() {
                return Err(Error::Invariant("room_bounds must be axis-aligned".into()));
            }
            let (c, s) = (room.center(), room.size());
            for obj in &self.objects {
                let p = obj.bbox.center();
                let inside = (0..3).all(|k| (p[k] - c[k]).abs() <= s[k] / 2.0 + 1e-9);
                if !inside {
                    return Err(Error::Invariant(format!(
                        "object_id {} center {p:?} lies outside room_bounds",
                        obj.object_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn object(&self, id: u32) -> Option<&AnnotatedObject> {
        self.objects.iter().find(|o| o.object_id == id)
    }

    pub fn objects_of<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a AnnotatedObject> + 'a {
        self.objects.iter().filter(move |o| o.category == category)
    }

    /// Category counts, the location-free view handed to reasoners.
    pub fn summary(&self) -> SceneSummary {
        let mut counts = BTreeMap::new();
        for o in &self.objects {
            *counts.entry(o.category.clone()).or_insert(0usize) += 1;
        }
        SceneSummary {
            scene_id: self.scene_id.clone(),
            categories: counts,
        }
    }
}

/// What a reasoner is told about a scene without localization: which
/// categories exist and how many instances of each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene_id: String,
    pub categories: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningType {
    Spatial,
    Functional,
    Logical,
    Emotional,
    Safety,
}

impl ReasoningType {
    /// Report column order.
    pub const ALL: [ReasoningType; 5] = [
        ReasoningType::Spatial,
        ReasoningType::Functional,
        ReasoningType::Logical,
        ReasoningType::Emotional,
        ReasoningType::Safety,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningType::Spatial => "spatial",
            ReasoningType::Functional => "functional",
            ReasoningType::Logical => "logical",
            ReasoningType::Emotional => "emotional",
            ReasoningType::Safety => "safety",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ReasoningType::Spatial => "Spatial",
            ReasoningType::Functional => "Functional",
            ReasoningType::Logical => "Logical",
            ReasoningType::Emotional => "Emotional",
            ReasoningType::Safety => "Safety",
        }
    }
}

impl fmt::Display for ReasoningType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ReasoningType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReasoningType::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Invariant(format!("unknown reasoning type {s:?}")))
    }
}

/// Question-answer-location record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QALRecord {
    pub record_id: String,
    pub scene_id: String,
    pub question: String,
    pub reasoning_type: ReasoningType,
    pub answer_text: String,
    pub target_object_ids: Vec<u32>,
    /// One of the three output-type strings in [`OutputDirective`]; kept as
    /// free text so that validation can report a wrong string instead of the
    /// loader refusing the line.
    pub output_directive: String,
}

impl QALRecord {
    pub fn directive(&self) -> Option<OutputDirective> {
        OutputDirective::parse(&self.output_directive)
    }

    /// Check that every target resolves in `scene`.
    pub fn resolve<'s>(&self, scene: &'s Scene) -> Result<Vec<&'s AnnotatedObject>> {
        self.target_object_ids
            .iter()
            .map(|&id| {
                scene.object(id).ok_or_else(|| Error::UnresolvedObject {
                    record_id: self.record_id.clone(),
                    scene_id: scene.scene_id.clone(),
                    object_id: id,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGroundedBox")]
pub struct GroundedBox {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Deserialize)]
struct RawGroundedBox {
    #[serde(rename = "box")]
    bbox: Box3D,
    confidence: f64,
    #[serde(default)]
    label: Option<String>,
}

impl TryFrom<RawGroundedBox> for GroundedBox {
    type Error = Error;

    fn try_from(raw: RawGroundedBox) -> Result<Self> {
        GroundedBox::new(raw.bbox, raw.confidence, raw.label)
    }
}

impl GroundedBox {
    pub fn new(bbox: Box3D, confidence: f64, label: Option<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Invariant(format!(
                "confidence must lie in [0, 1], got {confidence}"
            )));
        }
        Ok(GroundedBox {
            bbox,
            confidence,
            label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub record_id: String,
    pub boxes: Vec<GroundedBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
}

impl PredictionSet {
    pub fn new(record_id: impl Into<String>, mut boxes: Vec<GroundedBox>, answer_text: Option<String>) -> Self {
        sort_by_confidence(&mut boxes);
        PredictionSet {
            record_id: record_id.into(),
            boxes,
            answer_text,
        }
    }

    pub fn empty(record_id: impl Into<String>) -> Self {
        Self::new(record_id, Vec::new(), None)
    }

    /// Copy with boxes in descending confidence (stable for ties).
    pub fn canonical(&self) -> PredictionSet {
        let mut out = self.clone();
        sort_by_confidence(&mut out.boxes);
        out
    }
}

fn sort_by_confidence(boxes: &mut [GroundedBox]) {
    boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(center: [f64; 3]) -> Box3D {
        Box3D::axis_aligned(center, [1.0; 3]).unwrap()
    }

    #[test]
    fn rejects_non_positive_size() {
        assert!(Box3D::new([0.0; 3], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(Box3D::new([0.0; 3], [1.0, -2.0, 1.0], [0.0; 3]).is_err());
        assert!(Box3D::new([0.0; 3], [1.0, f64::NAN, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn angles_land_in_half_open_interval() {
        for a in [-PI, PI, 3.0 * PI, -3.0 * PI, 7.5, -7.5, 0.0, 1e-300, 100.0 * PI] {
            let n = normalize_angle(a);
            assert!(n > -PI && n <= PI, "{a} -> {n}");
            assert_eq!(normalize_angle(n), n);
        }
        assert_eq!(normalize_angle(-PI), PI);
    }

    #[test]
    fn duplicate_ids_are_named() {
        let objs = vec![
            AnnotatedObject::new(3, "chair", unit([0.0; 3])),
            AnnotatedObject::new(3, "table", unit([2.0, 0.0, 0.0])),
        ];
        let err = Scene::new("s", objs, None).unwrap_err();
        assert!(err.to_string().contains("duplicate object_id 3"), "{err}");
    }

    #[test]
    fn room_bounds_contain_centers() {
        let room = Box3D::axis_aligned([0.0; 3], [4.0, 4.0, 3.0]).unwrap();
        let objs = vec![AnnotatedObject::new(7, "lamp", unit([3.0, 0.0, 0.0]))];
        let err = Scene::new("s", objs, Some(room)).unwrap_err();
        assert!(err.to_string().contains("object_id 7"), "{err}");
    }

    #[test]
    fn confidence_range_enforced_on_parse() {
        let bad = r#"{"box":{"center":[0,0,0],"size":[1,1,1],"euler":[0,0,0]},"confidence":1.5}"#;
        assert!(serde_json::from_str::<GroundedBox>(bad).is_err());
        let ok = r#"{"box":{"center":[0,0,0],"size":[1,1,1],"euler":[0,0,0]},"confidence":0.5}"#;
        assert!(serde_json::from_str::<GroundedBox>(ok).is_ok());
    }

    #[test]
    fn box_json_normalizes_angles() {
        let b: Box3D = serde_json::from_str(r#"{"center":[0,0,0],"size":[1,1,1],"euler":[7.0,0,0]}"#).unwrap();
        assert!((b.euler()[0] - (7.0 - 2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn prediction_boxes_sorted() {
        let b = unit([0.0; 3]);
        let p = PredictionSet::new(
            "r",
            vec![
                GroundedBox::new(b, 0.2, None).unwrap(),
                GroundedBox::new(b, 0.9, None).unwrap(),
            ],
            None,
        );
        assert_eq!(p.boxes[0].confidence, 0.9);
    }

    #[test]
    fn reasoning_type_names_are_stable() {
        let names: Vec<String> = ReasoningType::ALL
            .iter()
            .map(|t| serde_json::to_string(t).unwrap())
            .collect();
        assert_eq!(
            names,
            ["\"spatial\"", "\"functional\"", "\"logical\"", "\"emotional\"", "\"safety\""]
        );
    }
}
