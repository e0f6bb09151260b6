//! The interleaved ground, inject, reason, ground chain.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::backends::{Grounder, Reasoner};
use super::lexicon::{extract_mentions, inject_locations, rewrite_to_grounding_question, KnownObject, Lexicon, LocationFormat, Mention};
use crate::annotation::affordance::{category_id, display_name};
use crate::error::{BackendError, Error, Result};
use crate::scene::{GroundedBox, PredictionSet, QALRecord, Scene};
use crate::templates::detection_question;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoGConfig {
    /// Anchors below this confidence are never injected.
    pub confidence_threshold: f64,
    /// Reason and ground passes on the updated question.
    pub max_rounds: usize,
    /// Inject every grounded scene object instead of the mentioned ones.
    pub inject_all_objects: bool,
    pub location_format: LocationFormat,
    /// Record wall-clock time per step in the trace.
    #[serde(default)]
    pub record_timings: bool,
}

impl Default for CoGConfig {
    fn default() -> Self {
        CoGConfig {
            confidence_threshold: 0.5,
            max_rounds: 2,
            inject_all_objects: false,
            location_format: LocationFormat::CenterSizeV1,
            record_timings: false,
        }
    }
}

impl CoGConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Invariant(format!(
                "confidence_threshold must lie in [0, 1], got {}",
                self.confidence_threshold
            )));
        }
        if self.max_rounds < 1 {
            return Err(Error::Invariant("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// One grounded anchor candidate and the gate decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    /// Mention text, or the category name in all-objects mode.
    pub mention: String,
    pub grounding_question: String,
    #[serde(flatten)]
    pub grounded: GroundedBox,
    pub accepted: bool,
}

/// One reason and ground pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRound {
    pub question: String,
    pub answer_text: String,
    pub intent: String,
    pub boxes: Vec<GroundedBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoGTrace {
    pub question: String,
    pub mentions: Vec<Mention>,
    pub grounding_questions: Vec<String>,
    pub anchors: Vec<AnchorRecord>,
    pub updated_question: String,
    /// No mentions were found and the question went straight to the
    /// reasoner.
    pub single_pass: bool,
    pub rounds: Vec<ChainRound>,
    pub predictions: PredictionSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<StepTiming>>,
}

impl CoGTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &AnchorRecord> {
        self.anchors.iter().filter(|a| a.accepted)
    }
}

/// The pluggable parts of a chain.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub grounder: &'a dyn Grounder,
    pub reasoner: &'a dyn Reasoner,
    pub lexicon: &'a Lexicon,
}

struct Clock {
    on: bool,
    steps: Vec<StepTiming>,
}

impl Clock {
    fn time<T>(&mut self, step: &str, f: impl FnOnce() -> T) -> T {
        let start = self.on.then(Instant::now);
        let out = f();
        if let Some(s) = start {
            self.steps.push(StepTiming {
                step: step.to_string(),
                millis: s.elapsed().as_secs_f64() * 1e3,
            });
        }
        out
    }
}

fn known_category(b: &GroundedBox, fallback: &[String]) -> Option<String> {
    b.label.as_deref().map(category_id).or_else(|| fallback.first().cloned())
}

/// Ground each question, gate every box and collect the accepted ones as
/// known objects in order.
fn ground_anchors(
    items: &[(String, String, Vec<String>)],
    scene: &Scene,
    b: &Backends,
    cfg: &CoGConfig,
    clock: &mut Clock,
    anchors: &mut Vec<AnchorRecord>,
    known: &mut Vec<KnownObject>,
) -> std::result::Result<(), BackendError> {
    for (mention, question, cats) in items {
        let boxes = clock
            .time("ground_anchor", || b.grounder.ground(question, scene))
            .map_err(|e| e.at_step("ground_anchor"))?;
        for g in boxes {
            let accepted = g.confidence >= cfg.confidence_threshold;
            if accepted {
                if let Some(category) = known_category(&g, cats) {
                    known.push(KnownObject { category, bbox: g.bbox });
                }
            }
            anchors.push(AnchorRecord {
                mention: mention.clone(),
                grounding_question: question.clone(),
                grounded: g,
                accepted,
            });
        }
    }
    Ok(())
}

/// Run the chain for one question. Predictions carry an empty record id.
pub fn run_chain(question: &str, scene: &Scene, b: &Backends, cfg: &CoGConfig) -> std::result::Result<CoGTrace, BackendError> {
    let mut clock = Clock {
        on: cfg.record_timings,
        steps: Vec::new(),
    };
    let summary = scene.summary();
    let mentions = clock.time("extract", || extract_mentions(question, b.lexicon));
    let mut anchors = Vec::new();
    let mut known = Vec::new();
    let mut grounding_questions = Vec::new();
    let single_pass = mentions.is_empty() && !cfg.inject_all_objects;
    if !single_pass {
        let items: Vec<(String, String, Vec<String>)> = if cfg.inject_all_objects {
            summary
                .categories
                .keys()
                .map(|c| (display_name(c), detection_question(&display_name(c)), vec![c.clone()]))
                .collect()
        } else {
            let qs = rewrite_to_grounding_question(&mentions).map_err(|e| BackendError::Other {
                step: "rewrite".into(),
                message: e.to_string(),
            })?;
            mentions.iter().zip(qs).map(|(m, q)| (m.text.clone(), q, m.categories.clone())).collect()
        };
        grounding_questions = items.iter().map(|(_, q, _)| q.clone()).collect();
        ground_anchors(&items, scene, b, cfg, &mut clock, &mut anchors, &mut known)?;
    }
    let mut updated = inject_locations(question, &known, cfg.location_format);
    let mut rounds = Vec::new();
    let mut grounded_phrases: Vec<String> = mentions.iter().map(|m| m.text.to_lowercase()).collect();
    loop {
        let r = clock
            .time("reason", || b.reasoner.reason(&updated, &summary))
            .map_err(|e| e.at_step("reason"))?;
        let boxes = clock
            .time("ground", || b.grounder.ground(&r.intent, scene))
            .map_err(|e| e.at_step("ground"))?;
        rounds.push(ChainRound {
            question: updated.clone(),
            answer_text: r.answer_text,
            intent: r.intent,
            boxes,
        });
        if single_pass || rounds.len() >= cfg.max_rounds {
            break;
        }
        // The reasoner may ask for further anchors; ground them and go again.
        let fresh: Vec<String> = r
            .mentions
            .unwrap_or_default()
            .into_iter()
            .filter(|m| !m.trim().is_empty() && !grounded_phrases.contains(&m.to_lowercase()))
            .collect();
        if fresh.is_empty() {
            break;
        }
        let items: Vec<(String, String, Vec<String>)> = fresh
            .iter()
            .map(|m| {
                let cats = b.lexicon.lookup(m).map(<[String]>::to_vec).unwrap_or_else(|| vec![category_id(m)]);
                (m.clone(), detection_question(m), cats)
            })
            .collect();
        grounded_phrases.extend(fresh.iter().map(|m| m.to_lowercase()));
        grounding_questions.extend(items.iter().map(|(_, q, _)| q.clone()));
        ground_anchors(&items, scene, b, cfg, &mut clock, &mut anchors, &mut known)?;
        updated = inject_locations(question, &known, cfg.location_format);
    }
    let last = rounds.last().expect("at least one round");
    let predictions = PredictionSet::new("", last.boxes.clone(), Some(last.answer_text.clone()).filter(|a| !a.is_empty()));
    Ok(CoGTrace {
        question: question.to_string(),
        mentions,
        grounding_questions,
        anchors,
        updated_question: updated,
        single_pass,
        rounds,
        predictions,
        timings: cfg.record_timings.then_some(clock.steps),
    })
}

/// Run the chain on a record and label its predictions.
pub fn run_record(record: &QALRecord, scene: &Scene, b: &Backends, cfg: &CoGConfig) -> std::result::Result<CoGTrace, BackendError> {
    let mut t = run_chain(&record.question, scene, b, cfg)?;
    t.predictions.record_id = record.record_id.clone();
    Ok(t)
}

/// The reasoner alone on the original question, grounded once.
pub fn run_single_pass(record: &QALRecord, scene: &Scene, b: &Backends) -> std::result::Result<PredictionSet, BackendError> {
    let r = b.reasoner.reason(&record.question, &scene.summary()).map_err(|e| e.at_step("reason"))?;
    let boxes = b.grounder.ground(&r.intent, scene).map_err(|e| e.at_step("ground"))?;
    Ok(PredictionSet::new(record.record_id.clone(), boxes, Some(r.answer_text).filter(|a| !a.is_empty())))
}
