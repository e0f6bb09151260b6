//! Rule-based question-answer-location generators, one per reasoning type.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::affordance::{display_name, fill, join_names, AffordanceTable, CuratedQuestion, HeightRule, QuestionTemplates};
use super::synth::scene_seed;
use crate::error::{Error, Result};
use crate::geometry::relations::{above_clearances, DISTANCE_TIE_TOLERANCE};
use crate::geometry::{center_distance, farthest, nearest};
use crate::scene::{AnnotatedObject, QALRecord, ReasoningType, Scene};
use crate::templates::OutputDirective;

/// Per-type counts of the manually verified validation split.
pub const VALIDATION_COUNTS: [(ReasoningType, usize); 5] = [
    (ReasoningType::Spatial, 342),
    (ReasoningType::Functional, 287),
    (ReasoningType::Logical, 581),
    (ReasoningType::Emotional, 211),
    (ReasoningType::Safety, 53),
];

/// Size of the full dataset (training plus validation pairs).
pub const FULL_SIZE_TOTAL: usize = 12929;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub counts: BTreeMap<ReasoningType, usize>,
    pub seed: u64,
    #[serde(default)]
    pub templates: QuestionTemplates,
    /// Counts follow the validation-split ratio scaled to the full size.
    #[serde(default)]
    pub full_size_preset: bool,
    /// Center height (m) at or above which a mounted object is out of a
    /// child's reach.
    pub out_of_reach_height: f64,
    /// Relation instances that flip under perturbations of this size (m) are
    /// not turned into questions.
    pub ambiguity_margin: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            counts: ReasoningType::ALL.into_iter().map(|t| (t, 0)).collect(),
            seed: 0,
            templates: QuestionTemplates::default(),
            full_size_preset: false,
            out_of_reach_height: 1.2,
            ambiguity_margin: 0.025,
        }
    }
}

impl GenConfig {
    /// Counts proportional to the validation split, summing to `total`.
    pub fn preset(total: usize) -> Self {
        GenConfig {
            counts: preset_counts(total),
            ..Self::default()
        }
    }

    pub fn full_size() -> Self {
        GenConfig {
            full_size_preset: true,
            ..Self::preset(FULL_SIZE_TOTAL)
        }
    }

    pub fn with_counts(counts: impl IntoIterator<Item = (ReasoningType, usize)>) -> Self {
        let mut cfg = Self::default();
        cfg.counts.extend(counts);
        cfg
    }

    pub fn count(&self, t: ReasoningType) -> usize {
        self.counts.get(&t).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.out_of_reach_height.is_finite() && self.out_of_reach_height > 0.0) {
            return Err(Error::Invariant(format!("out_of_reach_height must be positive, got {}", self.out_of_reach_height)));
        }
        if !(self.ambiguity_margin.is_finite() && self.ambiguity_margin >= 0.0) {
            return Err(Error::Invariant(format!("ambiguity_margin must be non-negative, got {}", self.ambiguity_margin)));
        }
        if self.full_size_preset {
            let expected = preset_counts(self.total());
            if ReasoningType::ALL.iter().any(|t| self.count(*t) != expected[t]) {
                return Err(Error::Invariant("full_size_preset counts must follow the validation ratio".into()));
            }
        }
        self.templates.validate()
    }
}

/// Largest-remainder apportionment of `total` over the validation ratio.
pub fn preset_counts(total: usize) -> BTreeMap<ReasoningType, usize> {
    let denom: usize = VALIDATION_COUNTS.iter().map(|(_, n)| n).sum();
    let mut out: Vec<(ReasoningType, usize, usize)> = VALIDATION_COUNTS
        .iter()
        .map(|&(t, n)| (t, total * n / denom, total * n % denom))
        .collect();
    let assigned: usize = out.iter().map(|(_, q, _)| q).sum();
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by(|&a, &b| out[b].2.cmp(&out[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(total - assigned) {
        out[i].1 += 1;
    }
    out.into_iter().map(|(t, q, _)| (t, q)).collect()
}

fn record(scene: &Scene, t: ReasoningType, question: String, answer: String, mut targets: Vec<u32>) -> QALRecord {
    targets.sort_unstable();
    targets.dedup();
    QALRecord {
        record_id: String::new(),
        scene_id: scene.scene_id.clone(),
        question,
        reasoning_type: t,
        answer_text: answer,
        target_object_ids: targets,
        output_directive: OutputDirective::TextAndBox.as_str().to_string(),
    }
}

fn finish<R: Rng>(mut records: Vec<QALRecord>, rng: &mut R) -> Vec<QALRecord> {
    for (i, r) in records.iter_mut().enumerate() {
        r.record_id = format!("{}:{}:{i}", r.scene_id, r.reasoning_type);
    }
    records.shuffle(rng);
    records
}

fn category_counts(scene: &Scene) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for o in &scene.objects {
        *m.entry(o.category.as_str()).or_insert(0) += 1;
    }
    m
}

/// Gap between the best and second-best distance from `anchor`.
fn distance_gap(anchor: &AnnotatedObject, candidates: &[&AnnotatedObject], farthest: bool) -> f64 {
    let mut d: Vec<f64> = candidates.iter().map(|o| center_distance(&anchor.bbox, &o.bbox)).collect();
    d.sort_by(f64::total_cmp);
    if farthest {
        d.reverse();
    }
    match d.as_slice() {
        [a, b, ..] => (a - b).abs(),
        _ => f64::INFINITY,
    }
}

fn stable_gap(gap: f64, margin: f64) -> bool {
    margin == 0.0 || gap >= margin
}

/// Nearest object to `anchor` among `candidates`; near-ties go to the lowest id.
pub fn nearest_among<'a>(anchor: &AnnotatedObject, candidates: &[&'a AnnotatedObject]) -> Option<&'a AnnotatedObject> {
    let best = candidates
        .iter()
        .map(|o| center_distance(&anchor.bbox, &o.bbox))
        .min_by(f64::total_cmp)?;
    candidates
        .iter()
        .copied()
        .filter(|o| center_distance(&anchor.bbox, &o.bbox) <= best + DISTANCE_TIE_TOLERANCE)
        .min_by_key(|o| o.object_id)
}

/// Nearest / farthest / above questions around uniquely named anchors.
pub fn generate_spatial<R: Rng>(scene: &Scene, cfg: &GenConfig, rng: &mut R) -> Vec<QALRecord> {
    if scene.objects.len() < 2 {
        return Vec::new();
    }
    let counts = category_counts(scene);
    let t = &cfg.templates.spatial;
    let margin = cfg.ambiguity_margin;
    let mut out = Vec::new();
    for anchor in scene.objects.iter().filter(|o| counts[o.category.as_str()] == 1) {
        let anchor_name = display_name(&anchor.category);
        for (&cat, &n) in &counts {
            if cat == anchor.category {
                continue;
            }
            let target_name = display_name(cat);
            let members: Vec<&AnnotatedObject> = scene.objects_of(cat).collect();
            if n >= 2 {
                for (far, tmpl) in [(false, &t.closest), (true, &t.farthest)] {
                    if !stable_gap(distance_gap(anchor, &members, far), margin) {
                        continue;
                    }
                    let pick = if far { farthest(anchor, scene, Some(cat)) } else { nearest(anchor, scene, Some(cat)) };
                    let Some(target) = pick else { continue };
                    let distance = format!("{:.1}", center_distance(&anchor.bbox, &target.bbox));
                    let vars = [("target", target_name.as_str()), ("anchor", anchor_name.as_str()), ("distance", distance.as_str())];
                    out.push(record(
                        scene,
                        ReasoningType::Spatial,
                        fill(&tmpl.question, &vars),
                        fill(&tmpl.answer, &vars),
                        vec![target.object_id],
                    ));
                }
            }
            let clearances: Vec<[f64; 3]> = members.iter().map(|o| above_clearances(&o.bbox, &anchor.bbox)).collect();
            let ambiguous = clearances.iter().any(|c| {
                let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
                lo > -margin && lo < margin && margin > 0.0
            });
            let above: Vec<u32> = members
                .iter()
                .zip(&clearances)
                .filter(|(_, c)| c.iter().all(|&v| v > 0.0))
                .map(|(o, _)| o.object_id)
                .collect();
            if !ambiguous && !above.is_empty() {
                let vars = [("target", target_name.as_str()), ("anchor", anchor_name.as_str())];
                out.push(record(
                    scene,
                    ReasoningType::Spatial,
                    fill(&t.above.question, &vars),
                    fill(&t.above.answer, &vars),
                    above,
                ));
            }
        }
    }
    finish(out, rng)
}

/// Distinct display names of the targets' categories, in id order.
fn target_names(scene: &Scene, ids: &[u32]) -> String {
    let mut names: Vec<String> = Vec::new();
    for id in ids {
        let name = display_name(&scene.object(*id).expect("target from scene").category);
        if !names.contains(&name) {
            names.push(name);
        }
    }
    join_names(&names)
}

/// Intent questions targeting every object whose category carries the tag.
pub fn generate_functional<R: Rng>(scene: &Scene, table: &AffordanceTable, _cfg: &GenConfig, rng: &mut R) -> Vec<QALRecord> {
    let mut out = Vec::new();
    for f in &table.functional {
        let ids: Vec<u32> = scene
            .objects
            .iter()
            .filter(|o| table.has_tag(&o.category, &f.tag))
            .map(|o| o.object_id)
            .collect();
        if ids.is_empty() {
            continue;
        }
        let answer = fill(&f.answer, &[("targets", &target_names(scene, &ids))]);
        out.push(record(scene, ReasoningType::Functional, f.question.clone(), answer, ids));
    }
    finish(out, rng)
}

/// Setting + function + nearest: the object carrying the action's tag that is
/// closest to the setting's anchor.
pub fn generate_logical<R: Rng>(scene: &Scene, table: &AffordanceTable, cfg: &GenConfig, rng: &mut R) -> Vec<QALRecord> {
    let counts = category_counts(scene);
    let tmpl = &cfg.templates.logical;
    let mut out = Vec::new();
    for setting in &table.settings {
        if counts.get(setting.anchor.as_str()) != Some(&1) {
            continue;
        }
        let anchor = scene.objects_of(&setting.anchor).next().expect("counted");
        for action in &table.logical {
            let candidates: Vec<&AnnotatedObject> = scene
                .objects
                .iter()
                .filter(|o| o.object_id != anchor.object_id && table.has_tag(&o.category, &action.tag))
                .collect();
            if !stable_gap(distance_gap(anchor, &candidates, false), cfg.ambiguity_margin) {
                continue;
            }
            let Some(target) = nearest_among(anchor, &candidates) else { continue };
            let target_name = display_name(&target.category);
            let anchor_name = display_name(&anchor.category);
            let vars = [
                ("activity", setting.activity.as_str()),
                ("action", action.action.as_str()),
                ("target", target_name.as_str()),
                ("anchor", anchor_name.as_str()),
            ];
            out.push(record(
                scene,
                ReasoningType::Logical,
                fill(&tmpl.question, &vars),
                fill(&tmpl.answer, &vars),
                vec![target.object_id],
            ));
        }
    }
    finish(out, rng)
}

fn curated<R: Rng>(
    scene: &Scene,
    list: &[CuratedQuestion],
    t: ReasoningType,
    cfg: &GenConfig,
    rng: &mut R,
) -> Vec<QALRecord> {
    let h = cfg.out_of_reach_height;
    let margin = cfg.ambiguity_margin;
    let mut out = Vec::new();
    for q in list {
        let members: Vec<&AnnotatedObject> = scene.objects.iter().filter(|o| q.categories.contains(&o.category)).collect();
        if q.height.is_some() && margin > 0.0 && members.iter().any(|o| (o.bbox.center()[2] - h).abs() < margin) {
            continue;
        }
        let ids: Vec<u32> = members
            .iter()
            .filter(|o| match q.height {
                None => true,
                Some(HeightRule::High) => o.bbox.center()[2] >= h,
                Some(HeightRule::Low) => o.bbox.center()[2] < h,
            })
            .map(|o| o.object_id)
            .collect();
        if ids.is_empty() {
            continue;
        }
        let answer = fill(&q.answer, &[("targets", &target_names(scene, &ids))]);
        out.push(record(scene, t, q.question.clone(), answer, ids));
    }
    finish(out, rng)
}

/// Questions whose targets are every object in a mood-lifting list.
pub fn generate_emotional<R: Rng>(scene: &Scene, cfg: &GenConfig, rng: &mut R) -> Vec<QALRecord> {
    curated(scene, &cfg.templates.emotional, ReasoningType::Emotional, cfg, rng)
}

/// Hazard and placement questions, optionally filtered by mounting height.
pub fn generate_safety<R: Rng>(scene: &Scene, cfg: &GenConfig, rng: &mut R) -> Vec<QALRecord> {
    curated(scene, &cfg.templates.safety, ReasoningType::Safety, cfg, rng)
}

/// All five generators for one scene, in report column order, driven by one
/// rng seeded from `(cfg.seed, scene_id)`.
pub fn generate_scene(scene: &Scene, table: &AffordanceTable, cfg: &GenConfig) -> BTreeMap<ReasoningType, Vec<QALRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(cfg.seed, &scene.scene_id));
    ReasoningType::ALL
        .into_iter()
        .map(|t| {
            let recs = match t {
                ReasoningType::Spatial => generate_spatial(scene, cfg, &mut rng),
                ReasoningType::Functional => generate_functional(scene, table, cfg, &mut rng),
                ReasoningType::Logical => generate_logical(scene, table, cfg, &mut rng),
                ReasoningType::Emotional => generate_emotional(scene, cfg, &mut rng),
                ReasoningType::Safety => generate_safety(scene, cfg, &mut rng),
            };
            (t, recs)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub reasoning_type: ReasoningType,
    pub requested: usize,
    pub produced: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOutput {
    pub records: Vec<QALRecord>,
    /// Types whose requested count could not be met.
    pub shortfall: Vec<Shortfall>,
}

impl GenOutput {
    pub fn produced(&self, t: ReasoningType) -> usize {
        self.records.iter().filter(|r| r.reasoning_type == t).count()
    }
}

/// Draw records round-robin across scenes (in scene id order) and types until
/// each requested count is met or every scene's pool is exhausted.
pub fn generate_dataset(scenes: &[Scene], table: &AffordanceTable, cfg: &GenConfig) -> Result<GenOutput> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Invariant("generate_dataset needs at least one scene".into()));
    }
    let mut ordered: Vec<&Scene> = scenes.iter().collect();
    ordered.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    if let Some(w) = ordered.windows(2).find(|w| w[0].scene_id == w[1].scene_id) {
        return Err(Error::Invariant(format!("duplicate scene {}", w[0].scene_id)));
    }
    if cfg.total() == 0 {
        return Ok(GenOutput {
            records: Vec::new(),
            shortfall: Vec::new(),
        });
    }
    let pools: Vec<BTreeMap<ReasoningType, Vec<QALRecord>>> =
        ordered.par_iter().map(|s| generate_scene(s, table, cfg)).collect();
    let deepest = pools.iter().flat_map(|p| p.values().map(Vec::len)).max().unwrap_or(0);
    let mut produced: BTreeMap<ReasoningType, usize> = BTreeMap::new();
    let mut records = Vec::new();
    'rounds: for round in 0..deepest {
        for pool in &pools {
            for t in ReasoningType::ALL {
                let done = produced.entry(t).or_insert(0);
                if *done >= cfg.count(t) {
                    continue;
                }
                if let Some(r) = pool[&t].get(round) {
                    records.push(r.clone());
                    *done += 1;
                }
            }
            if ReasoningType::ALL.iter().all(|t| produced.get(t).copied().unwrap_or(0) >= cfg.count(*t)) {
                break 'rounds;
            }
        }
    }
    for (i, r) in records.iter_mut().enumerate() {
        r.record_id = format!("qal-{:06}", i + 1);
    }
    let shortfall = ReasoningType::ALL
        .into_iter()
        .filter_map(|t| {
            let got = produced.get(&t).copied().unwrap_or(0);
            (got < cfg.count(t)).then_some(Shortfall {
                reasoning_type: t,
                requested: cfg.count(t),
                produced: got,
            })
        })
        .collect();
    Ok(GenOutput { records, shortfall })
}
