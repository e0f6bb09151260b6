//! Structural checks on question-answer-location records.

use std::collections::BTreeSet;

use crate::scene::{QALRecord, Scene};


/// Violations of `record` against `scene`; empty when the record is valid.
pub fn validate_record(record: &QALRecord, scene: &Scene) -> Vec<String> {
    let mut out = Vec::new();
    if record.record_id.trim().is_empty() {
        out.push("empty record_id".to_string());
    }
    if record.scene_id != scene.scene_id {
        out.push(format!("record names scene {} but was checked against {}", record.scene_id, scene.scene_id));
    }
    if record.question.trim().is_empty() {
        out.push("empty question".to_string());
    }
    let mut seen = BTreeSet::new();
    for &id in &record.target_object_ids {
        if scene.object(id).is_none() {
            out.push(format!("unresolved id {id}"));
        }
        if !seen.insert(id) {
            out.push(format!("duplicate target id {id}"));
        }
    }
    match record.directive() {
        None => out.push(format!("unknown output directive {:?}", record.output_directive)),
        Some(d) if d.requires_boxes() && record.target_object_ids.is_empty() => {
            out.push("box-output record has no target objects".to_string());
        }
        Some(_) => {}
    }
    out
}
