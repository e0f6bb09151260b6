//! Acc@kIoU for flexible-cardinality predictions.
//!
//! A record scores the fraction of its target boxes recovered by a one-to-one
//! matching at IoU >= k; the overall accuracy is the mean over records. False
//! positives are not penalized by this score; the report carries box-level
//! counts so precision can be derived.

mod matching;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use matching::{match_pairs, min_cost_assignment, Matching};

use crate::error::{Error, Result};
use crate::geometry::{iou_matrix_with_mode, IouMode};
use crate::io::SceneStore;
use crate::scene::{Box3D, GroundedBox, PredictionSet, QALRecord, ReasoningType, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_iou: f64,
    pub iou_mode: IouMode,
    pub matching: Matching,
    pub confidence_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_iou: 0.25,
            iou_mode: IouMode::Oriented,
            matching: Matching::Hungarian,
            confidence_floor: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn with_k(k_iou: f64) -> Result<Self> {
        let cfg = EvalConfig {
            k_iou,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_iou > 0.0 && self.k_iou < 1.0) {
            return Err(Error::Invariant(format!("k_iou must lie in (0, 1), got {}", self.k_iou)));
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(Error::Invariant(format!(
                "confidence_floor must lie in [0, 1], got {}",
                self.confidence_floor
            )));
        }
        Ok(())
    }
}

/// Matches between predictions and ground-truth boxes under `cfg`. Indices
/// refer to the input slices; predictions under the confidence floor never
/// match.
pub fn match_boxes(preds: &[GroundedBox], gts: &[Box3D], cfg: &EvalConfig) -> Vec<(usize, usize)> {
    let kept: Vec<usize> = (0..preds.len())
        .filter(|&i| preds[i].confidence >= cfg.confidence_floor)
        .collect();
    let boxes: Vec<Box3D> = kept.iter().map(|&i| preds[i].bbox).collect();
    let conf: Vec<f64> = kept.iter().map(|&i| preds[i].confidence).collect();
    let ious = iou_matrix_with_mode(&boxes, gts, cfg.iou_mode);
    match_pairs(&ious, &conf, cfg.k_iou, cfg.matching)
        .into_iter()
        .map(|(i, j)| (kept[i], j))
        .collect()
}

/// Per-record outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordScore {
    pub accuracy: f64,
    pub targets: usize,
    pub predictions: usize,
    pub matched: usize,
}

pub fn score_record(preds: &PredictionSet, record: &QALRecord, scene: &Scene, cfg: &EvalConfig) -> Result<RecordScore> {
    let gts: Vec<Box3D> = record.resolve(scene)?.iter().map(|o| o.bbox).collect();
    let predictions = preds
        .boxes
        .iter()
        .filter(|b| b.confidence >= cfg.confidence_floor)
        .count();
    let matched = match_boxes(&preds.boxes, &gts, cfg).len();
    let accuracy = if gts.is_empty() {
        // Text-only records: correct iff no boxes were emitted.
        if predictions == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        matched as f64 / gts.len() as f64
    };
    Ok(RecordScore {
        accuracy,
        targets: gts.len(),
        predictions,
        matched,
    })
}

/// Fraction of the record's targets recovered at IoU >= k.
pub fn record_accuracy(preds: &PredictionSet, record: &QALRecord, scene: &Scene, cfg: &EvalConfig) -> Result<f64> {
    Ok(score_record(preds, record, scene, cfg)?.accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_acc: f64,
    /// Only types with at least one record appear.
    pub per_type_acc: BTreeMap<ReasoningType, f64>,
    pub per_type_counts: BTreeMap<ReasoningType, usize>,
    pub strict_record_acc: f64,
    pub total_records: usize,
    pub total_targets: usize,
    pub total_predictions: usize,
    pub total_matched: usize,
    pub config: EvalConfig,
}

impl EvalReport {
    /// Matched predictions over all kept predictions.
    pub fn box_precision(&self) -> Option<f64> {
        (self.total_predictions > 0).then(|| self.total_matched as f64 / self.total_predictions as f64)
    }

    /// Aligned text table: one column per reasoning type, then Overall.
    pub fn to_table(&self) -> String {
        let mut header = format!("{:<14}", "");
        let mut acc = format!("{:<14}", format!("Acc@{}", self.config.k_iou));
        let mut counts = format!("{:<14}", "Records");
        for t in ReasoningType::ALL {
            let _ = write!(header, "{:>12}", t.title());
            let cell = match self.per_type_acc.get(&t) {
                Some(a) => format!("{:.2}", a * 100.0),
                None => "-".to_string(),
            };
            let _ = write!(acc, "{cell:>12}");
            let _ = write!(counts, "{:>12}", self.per_type_counts.get(&t).copied().unwrap_or(0));
        }
        let _ = write!(header, "{:>12}", "Overall");
        let _ = write!(acc, "{:>12}", format!("{:.2}", self.overall_acc * 100.0));
        let _ = write!(counts, "{:>12}", self.total_records);
        let strict = format!("{:<14}{:>12}", "Strict", format!("{:.2}", self.strict_record_acc * 100.0));
        format!("{header}\n{acc}\n{counts}\n{strict}\n")
    }
}

/// Score every record (missing predictions score 0) and aggregate.
pub fn evaluate(records: &[QALRecord], scenes: &SceneStore, preds: &[PredictionSet], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut by_id: HashMap<&str, &PredictionSet> = HashMap::with_capacity(preds.len());
    let known: HashMap<&str, ()> = records.iter().map(|r| (r.record_id.as_str(), ())).collect();
    for p in preds {
        if !known.contains_key(p.record_id.as_str()) {
            return Err(Error::UnknownRecord(p.record_id.clone()));
        }
        if by_id.insert(p.record_id.as_str(), p).is_some() {
            return Err(Error::Invariant(format!("duplicate predictions for record {}", p.record_id)));
        }
    }
    let empty = PredictionSet::empty("");
    let scores: Vec<(ReasoningType, RecordScore)> = records
        .par_iter()
        .map(|r| {
            let scene = scenes
                .get(&r.scene_id)
                .ok_or_else(|| Error::MissingScene(r.scene_id.clone()))?;
            let p = by_id.get(r.record_id.as_str()).copied().unwrap_or(&empty);
            Ok((r.reasoning_type, score_record(p, r, scene, cfg)?))
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(&scores, *cfg))
}

fn aggregate(scores: &[(ReasoningType, RecordScore)], config: EvalConfig) -> EvalReport {
    let mut sums: BTreeMap<ReasoningType, f64> = BTreeMap::new();
    let mut per_type_counts: BTreeMap<ReasoningType, usize> = ReasoningType::ALL.iter().map(|&t| (t, 0)).collect();
    let (mut total, mut strict) = (0.0, 0usize);
    let (mut targets, mut predictions, mut matched) = (0, 0, 0);
    for (t, s) in scores {
        *sums.entry(*t).or_insert(0.0) += s.accuracy;
        *per_type_counts.get_mut(t).expect("all types present") += 1;
        total += s.accuracy;
        if s.accuracy == 1.0 {
            strict += 1;
        }
        targets += s.targets;
        predictions += s.predictions;
        matched += s.matched;
    }
    let n = scores.len();
    let mean = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / count as f64 };
    EvalReport {
        overall_acc: mean(total, n),
        per_type_acc: sums.into_iter().map(|(t, s)| (t, mean(s, per_type_counts[&t]))).collect(),
        per_type_counts,
        strict_record_acc: mean(strict as f64, n),
        total_records: n,
        total_targets: targets,
        total_predictions: predictions,
        total_matched: matched,
        config,
    }
}

/// Copy of `b` translated along `direction` so that its IoU with `b` equals
/// `target` (to 1e-12), found by bisection on the offset.
pub fn shift_to_iou(b: &Box3D, target: f64, direction: [f64; 3]) -> Result<Box3D> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Invariant(format!("target IoU must lie in (0, 1), got {target}")));
    }
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Invariant("shift direction must be a non-zero vector".into()));
    }
    let u = direction.map(|x| x / norm);
    let c = b.center();
    let at = |t: f64| b.with_center([c[0] + t * u[0], c[1] + t * u[1], c[2] + t * u[2]]);
    let (mut lo, mut hi) = (0.0, b.size().iter().sum::<f64>());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if crate::geometry::iou(b, &at(mid)?) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    at(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::AnnotatedObject;
    use crate::templates::OutputDirective;

    fn scene() -> Scene {
        Scene::new(
            "s0",
            vec![
                AnnotatedObject::new(0, "lamp", Box3D::axis_aligned([0.0, 0.0, 0.5], [1.0; 3]).unwrap()),
                AnnotatedObject::new(1, "lamp", Box3D::axis_aligned([3.0, 0.0, 0.5], [1.0; 3]).unwrap()),
            ],
            None,
        )
        .unwrap()
    }

    fn record(targets: Vec<u32>) -> QALRecord {
        QALRecord {
            record_id: "r0".into(),
            scene_id: "s0".into(),
            question: "The room is dark, what can I turn on?".into(),
            reasoning_type: ReasoningType::Functional,
            answer_text: "The lamps.".into(),
            target_object_ids: targets,
            output_directive: OutputDirective::TextAndBox.as_str().into(),
        }
    }

    fn gb(b: Box3D) -> GroundedBox {
        GroundedBox::new(b, 1.0, None).unwrap()
    }

    #[test]
    fn perfect_and_empty() {
        let s = scene();
        let r = record(vec![0, 1]);
        let cfg = EvalConfig::default();
        let perfect = PredictionSet::new("r0", s.objects.iter().map(|o| gb(o.bbox)).collect(), None);
        assert_eq!(record_accuracy(&perfect, &r, &s, &cfg).unwrap(), 1.0);
        assert_eq!(record_accuracy(&PredictionSet::empty("r0"), &r, &s, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn half_covered_at_iou_point_three() {
        let s = scene();
        let r = record(vec![0, 1]);
        // unit cubes offset along x by t have IoU (1-t)/(1+t); t = 7/13 gives 0.3
        let t = 7.0 / 13.0;
        let shifted = Box3D::axis_aligned([t, 0.0, 0.5], [1.0; 3]).unwrap();
        assert!((crate::geometry::iou(&shifted, &s.objects[0].bbox) - 0.3).abs() < 1e-12);
        let p = PredictionSet::new("r0", vec![gb(shifted)], None);
        assert_eq!(record_accuracy(&p, &r, &s, &EvalConfig::default()).unwrap(), 0.5);
        assert_eq!(record_accuracy(&p, &r, &s, &EvalConfig::with_k(0.5).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn unresolved_target_errors() {
        let s = scene();
        let err = record_accuracy(&PredictionSet::empty("r0"), &record(vec![9]), &s, &EvalConfig::default());
        assert!(matches!(err, Err(Error::UnresolvedObject { object_id: 9, .. })));
    }

    #[test]
    fn confidence_floor_drops_predictions() {
        let s = scene();
        let r = record(vec![0]);
        let p = PredictionSet::new("r0", vec![GroundedBox::new(s.objects[0].bbox, 0.2, None).unwrap()], None);
        let cfg = EvalConfig {
            confidence_floor: 0.5,
            ..Default::default()
        };
        assert_eq!(record_accuracy(&p, &r, &s, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn config_bounds() {
        assert!(EvalConfig::with_k(0.0).is_err());
        assert!(EvalConfig::with_k(1.0).is_err());
        assert!(EvalConfig::with_k(0.25).is_ok());
    }

    #[test]
    fn evaluate_rejects_unknown_record() {
        let store = SceneStore::from_scenes([scene()]).unwrap();
        let err = evaluate(&[record(vec![0])], &store, &[PredictionSet::empty("zzz")], &EvalConfig::default());
        assert!(matches!(err, Err(Error::UnknownRecord(_))));
    }

    #[test]
    fn missing_predictions_score_zero() {
        let store = SceneStore::from_scenes([scene()]).unwrap();
        let rep = evaluate(&[record(vec![0])], &store, &[], &EvalConfig::default()).unwrap();
        assert_eq!(rep.overall_acc, 0.0);
        assert_eq!(rep.per_type_counts[&ReasoningType::Functional], 1);
        assert_eq!(rep.per_type_counts.values().sum::<usize>(), 1);
        assert!(rep.to_table().contains("Functional"));
    }
}
