//! Grounder and reasoner interfaces with deterministic implementations.

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::lexicon::{extract_mentions, format_triple, parse_known, Lexicon, ParsedKnown};
use crate::annotation::affordance::{category_id, display_name, fill, join_names, AffordanceTable, HeightRule, PhraseTemplate};
use crate::annotation::QuestionTemplates;
use crate::error::BackendError;
use crate::geometry::relations::{above_clearances, DISTANCE_TIE_TOLERANCE};
use crate::scene::{GroundedBox, Scene, SceneSummary};
use crate::templates::detection_question;

/// Localizes the objects a question asks for.
pub trait Grounder: Send + Sync {
    fn ground(&self, question: &str, scene: &Scene) -> Result<Vec<GroundedBox>, BackendError>;
}

/// Answers a question from a location-free scene summary and says what to
/// ground next.
pub trait Reasoner: Send + Sync {
    fn reason(&self, question: &str, summary: &SceneSummary) -> Result<Reasoning, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reasoning {
    pub answer_text: String,
    /// Question handed to the grounder.
    pub intent: String,
    /// Object phrases the reasoner wants grounded, overriding lexicon
    /// extraction for later rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<String>>,
}

/// Detection question for an object near a point, e.g.
/// `Where is the trash can at (1.00, 2.00, 0.45) in this 3D scene?`.
pub fn hinted_question(category: &str, center: [f64; 3]) -> String {
    format!("Where is the {} at {} in this 3D scene?", display_name(category), format_triple(center))
}

fn intent_pattern() -> Regex {
    let num = r"(-?\d+(?:\.\d+)?)";
    Regex::new(&format!(r"Where is the (.+?)(?: at \({num}, {num}, {num}\))? in this 3D scene\?")).expect("static pattern")
}

/// Ground-truth lookup: each detection sentence in the question selects every
/// instance of the named categories, or the instance nearest to a point hint.
/// Questions without detection sentences fall back to lexicon mentions.
#[derive(Debug, Clone)]
pub struct OracleGrounder {
    lexicon: Lexicon,
    pattern: Regex,
    /// Confidence attached to every returned box.
    pub confidence: f64,
}

impl OracleGrounder {
    pub fn new(lexicon: Lexicon) -> Self {
        OracleGrounder {
            lexicon,
            pattern: intent_pattern(),
            confidence: 1.0,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    fn categories(&self, phrase: &str, scene: &Scene) -> Vec<String> {
        match self.lexicon.lookup(phrase) {
            Some(cats) => cats.to_vec(),
            None => {
                let id = category_id(phrase.trim());
                if scene.objects_of(&id).next().is_some() {
                    vec![id]
                } else {
                    Vec::new()
                }
            }
        }
    }
}

impl Grounder for OracleGrounder {
    fn ground(&self, question: &str, scene: &Scene) -> Result<Vec<GroundedBox>, BackendError> {
        let mut ids: Vec<u32> = Vec::new();
        let mut sentences = 0;
        for c in self.pattern.captures_iter(question) {
            sentences += 1;
            let cats = self.categories(&c[1], scene);
            let members = scene.objects.iter().filter(|o| cats.contains(&o.category));
            match c.get(2) {
                None => ids.extend(members.map(|o| o.object_id)),
                Some(_) => {
                    let hint = [2, 3, 4].map(|i| c[i].parse::<f64>().unwrap_or(f64::NAN));
                    let dist = |o: &crate::scene::AnnotatedObject| {
                        let p = o.bbox.center();
                        (0..3).map(|k| (p[k] - hint[k]).powi(2)).sum::<f64>().sqrt()
                    };
                    let members: Vec<_> = members.collect();
                    let best = members.iter().map(|o| dist(o)).min_by(f64::total_cmp);
                    if let Some(best) = best {
                        let pick = members
                            .iter()
                            .filter(|o| dist(o) <= best + DISTANCE_TIE_TOLERANCE)
                            .min_by_key(|o| o.object_id)
                            .expect("non-empty");
                        ids.push(pick.object_id);
                    }
                }
            }
        }
        if sentences == 0 {
            for m in extract_mentions(question, &self.lexicon) {
                ids.extend(scene.objects.iter().filter(|o| m.categories.contains(&o.category)).map(|o| o.object_id));
            }
        }
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for id in ids {
            if seen.contains(&id) {
                continue;
            }
            seen.push(id);
            let o = scene.object(id).expect("id from scene");
            let b = GroundedBox::new(o.bbox, self.confidence, Some(o.category.clone())).map_err(|e| BackendError::Other {
                step: "ground".into(),
                message: e.to_string(),
            })?;
            out.push(b);
        }
        Ok(out)
    }
}

/// Hands the question straight to the grounder.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoReasoner;

impl Reasoner for EchoReasoner {
    fn reason(&self, question: &str, _summary: &SceneSummary) -> Result<Reasoning, BackendError> {
        Ok(Reasoning {
            answer_text: String::new(),
            intent: question.to_string(),
            mentions: None,
        })
    }
}

/// Template regex with one named group per placeholder.
fn template_regex(template: &str, names: &[&str]) -> Regex {
    let mut pat = regex::escape(template);
    for n in names {
        pat = pat.replace(&regex::escape(&format!("{{{n}}}")), &format!("(?P<{n}>.+?)"));
    }
    Regex::new(&format!("^{pat}$")).expect("escaped template")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Relation {
    Closest,
    Farthest,
    Above,
}

/// Deterministic reasoner for the generated question families. Without
/// injected locations it can only name categories; with them it resolves
/// spatial and nearest-place questions to single instances.
#[derive(Debug, Clone)]
pub struct RuleReasoner {
    table: AffordanceTable,
    templates: QuestionTemplates,
    lexicon: Lexicon,
    spatial: Vec<(Relation, Regex, PhraseTemplate)>,
    logical: Regex,
    /// Center height (m) separating high from low mounting.
    pub out_of_reach_height: f64,
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

impl RuleReasoner {
    pub fn new(table: AffordanceTable, templates: QuestionTemplates) -> Self {
        let lexicon = Lexicon::from_table(&table);
        let s = &templates.spatial;
        let spatial = [(Relation::Closest, &s.closest), (Relation::Farthest, &s.farthest), (Relation::Above, &s.above)]
            .into_iter()
            .map(|(r, t)| (r, template_regex(&t.question, &["target", "anchor"]), t.clone()))
            .collect();
        let logical = template_regex(&templates.logical.question, &["activity", "action"]);
        RuleReasoner {
            table,
            templates,
            lexicon,
            spatial,
            logical,
            out_of_reach_height: 1.2,
        }
    }

    pub fn builtin() -> Self {
        Self::new(AffordanceTable::builtin(), QuestionTemplates::default())
    }

    fn phrase_category(&self, phrase: &str) -> String {
        match self.lexicon.lookup(phrase) {
            Some([one]) => one.clone(),
            _ => category_id(phrase),
        }
    }

    fn present<'a>(&self, cats: impl IntoIterator<Item = &'a str>, summary: &SceneSummary) -> Vec<String> {
        cats.into_iter().filter(|c| summary.categories.contains_key(*c)).map(String::from).collect()
    }

    fn spatial(&self, rel: Relation, tmpl: &PhraseTemplate, target: &str, anchor: &str, known: &[ParsedKnown]) -> Reasoning {
        let anchor_known = known.iter().find(|k| k.category == anchor);
        let targets: Vec<&ParsedKnown> = known.iter().filter(|k| k.category == target).collect();
        let (tn, an) = (display_name(target), display_name(anchor));
        let (Some(a), false) = (anchor_known, targets.is_empty()) else {
            return category_level(&[target.to_string()], format!("Looking for the {tn} relative to the {an}."));
        };
        match rel {
            Relation::Closest | Relation::Farthest => {
                let key = |k: &&ParsedKnown| {
                    let d = distance(k.center, a.center);
                    if rel == Relation::Farthest {
                        -d
                    } else {
                        d
                    }
                };
                let best = targets.iter().min_by(|x, y| key(x).total_cmp(&key(y))).expect("non-empty");
                let d = format!("{:.1}", distance(best.center, a.center));
                let vars = [("target", tn.as_str()), ("anchor", an.as_str()), ("distance", d.as_str())];
                Reasoning {
                    answer_text: fill(&tmpl.answer, &vars),
                    intent: hinted_question(target, best.center),
                    mentions: None,
                }
            }
            Relation::Above => {
                let (Some(ah), vars) = (a.hull(), [("target", tn.as_str()), ("anchor", an.as_str())]) else {
                    return category_level(&[target.to_string()], String::new());
                };
                let intents: Vec<String> = targets
                    .iter()
                    .filter(|t| t.hull().is_some_and(|h| above_clearances(&h, &ah).iter().all(|&c| c > 0.0)))
                    .map(|t| hinted_question(target, t.center))
                    .collect();
                Reasoning {
                    answer_text: fill(&tmpl.answer, &vars),
                    intent: intents.join(" "),
                    mentions: None,
                }
            }
        }
    }

    fn logical(&self, activity: &str, action: &str, known: &[ParsedKnown], summary: &SceneSummary) -> Option<Reasoning> {
        let setting = self.table.settings.iter().find(|s| s.activity == activity)?;
        let act = self.table.logical.iter().find(|l| l.action == action)?;
        let tagged = self.table.categories_with_tag(&act.tag);
        let anchor = known.iter().position(|k| k.category == setting.anchor);
        let candidates: Vec<&ParsedKnown> = known
            .iter()
            .enumerate()
            .filter(|(i, k)| Some(*i) != anchor && tagged.contains(&k.category.as_str()))
            .map(|(_, k)| k)
            .collect();
        let an = display_name(&setting.anchor);
        match anchor {
            Some(ai) if !candidates.is_empty() => {
                let a = known[ai].center;
                let best = candidates
                    .iter()
                    .min_by(|x, y| distance(x.center, a).total_cmp(&distance(y.center, a)))
                    .expect("non-empty");
                let tn = display_name(&best.category);
                let vars = [("activity", activity), ("action", action), ("target", tn.as_str()), ("anchor", an.as_str())];
                Some(Reasoning {
                    answer_text: fill(&self.templates.logical.answer, &vars),
                    intent: hinted_question(&best.category, best.center),
                    mentions: None,
                })
            }
            _ => {
                let cats = self.present(tagged, summary);
                Some(category_level(&cats, format!("Looking for a place to {action} near the {an}.")))
            }
        }
    }
}

fn category_level(cats: &[String], answer: String) -> Reasoning {
    Reasoning {
        answer_text: answer,
        intent: cats.iter().map(|c| detection_question(&display_name(c))).collect::<Vec<_>>().join(" "),
        mentions: None,
    }
}

impl Reasoner for RuleReasoner {
    fn reason(&self, question: &str, summary: &SceneSummary) -> Result<Reasoning, BackendError> {
        let (base, known) = parse_known(question);
        let base = base.trim();
        for (rel, re, tmpl) in &self.spatial {
            if let Some(c) = re.captures(base) {
                let target = self.phrase_category(&c["target"]);
                let anchor = self.phrase_category(&c["anchor"]);
                return Ok(self.spatial(*rel, tmpl, &target, &anchor, &known));
            }
        }
        if let Some(c) = self.logical.captures(base) {
            if let Some(r) = self.logical(&c["activity"], &c["action"], &known, summary) {
                return Ok(r);
            }
        }
        if let Some(f) = self.table.functional.iter().find(|f| f.question == base) {
            let cats = self.present(self.table.categories_with_tag(&f.tag), summary);
            let names: Vec<String> = cats.iter().map(|c| display_name(c)).collect();
            return Ok(category_level(&cats, fill(&f.answer, &[("targets", &join_names(&names))])));
        }
        let curated = self.templates.emotional.iter().chain(&self.templates.safety).find(|q| q.question == base);
        if let Some(q) = curated {
            let cats = self.present(q.categories.iter().map(String::as_str), summary);
            let names: Vec<String> = cats.iter().map(|c| display_name(c)).collect();
            let answer = fill(&q.answer, &[("targets", &join_names(&names))]);
            let members: Vec<&ParsedKnown> = known.iter().filter(|k| cats.contains(&k.category)).collect();
            if let (Some(rule), false) = (q.height, members.is_empty()) {
                let h = self.out_of_reach_height;
                let intents: Vec<String> = members
                    .iter()
                    .filter(|k| match rule {
                        HeightRule::High => k.center[2] >= h,
                        HeightRule::Low => k.center[2] < h,
                    })
                    .map(|k| hinted_question(&k.category, k.center))
                    .collect();
                return Ok(Reasoning {
                    answer_text: answer,
                    intent: intents.join(" "),
                    mentions: None,
                });
            }
            return Ok(category_level(&cats, answer));
        }
        let mut cats: Vec<String> = Vec::new();
        for m in extract_mentions(base, &self.lexicon) {
            for c in self.present(m.categories.iter().map(String::as_str), summary) {
                if !cats.contains(&c) {
                    cats.push(c);
                }
            }
        }
        Ok(category_level(&cats, String::new()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cog::lexicon::{inject_locations, KnownObject, LocationFormat};
    use crate::scene::{AnnotatedObject, Box3D};

    fn scene() -> Scene {
        let o = |id, cat: &str, c| AnnotatedObject::new(id, cat, Box3D::axis_aligned(c, [0.4, 0.4, 0.6]).unwrap());
        Scene::new(
            "k",
            vec![o(0, "stove", [1.0, 1.0, 0.45]), o(1, "trash_can", [1.5, 1.0, 0.3]), o(2, "trash_can", [4.0, 3.0, 0.3])],
            None,
        )
        .unwrap()
    }

    fn known(s: &Scene, ids: &[u32]) -> Vec<KnownObject> {
        ids.iter()
            .map(|&i| {
                let o = s.object(i).unwrap();
                KnownObject {
                    category: o.category.clone(),
                    bbox: o.bbox,
                }
            })
            .collect()
    }

    #[test]
    fn oracle_returns_all_or_nearest() {
        let s = scene();
        let g = OracleGrounder::new(Lexicon::from_table(&AffordanceTable::builtin()));
        let all = g.ground("Where is the trash can in this 3D scene?", &s).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].label.as_deref(), Some("trash_can"));
        let one = g.ground(&hinted_question("trash_can", [3.9, 3.0, 0.3]), &s).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].bbox.center(), [4.0, 3.0, 0.3]);
        let rubbish = g.ground("Where is the rubbish in this 3D scene?", &s).unwrap();
        assert_eq!(rubbish.len(), 2);
        assert!(g.ground("Where is the piano in this 3D scene?", &s).unwrap().is_empty());
    }

    #[test]
    fn reasoner_resolves_with_locations() {
        let s = scene();
        let r = RuleReasoner::builtin();
        let q = "Which trash can is closest to the stove?";
        let plain = r.reason(q, &s.summary()).unwrap();
        assert_eq!(plain.intent, "Where is the trash can in this 3D scene?");
        let informed = r.reason(&inject_locations(q, &known(&s, &[1, 2, 0]), LocationFormat::CenterSizeV1), &s.summary()).unwrap();
        assert_eq!(informed.intent, hinted_question("trash_can", [1.5, 1.0, 0.3]));
        let far = "Which trash can is farthest from the stove?";
        let informed = r.reason(&inject_locations(far, &known(&s, &[1, 2, 0]), LocationFormat::CenterSizeV1), &s.summary()).unwrap();
        assert_eq!(informed.intent, hinted_question("trash_can", [4.0, 3.0, 0.3]));
        assert!(informed.answer_text.contains("3.6 m"));
    }

    #[test]
    fn reasoner_logical_question() {
        let s = scene();
        let r = RuleReasoner::builtin();
        let q = "If I'm cooking dinner in the kitchen, where is the nearest place to throw the rubbish?";
        let plain = r.reason(q, &s.summary()).unwrap();
        assert!(plain.intent.contains("Where is the trash can in this 3D scene?"));
        let informed = r.reason(&inject_locations(q, &known(&s, &[0, 1, 2]), LocationFormat::CenterSizeV1), &s.summary()).unwrap();
        assert_eq!(informed.intent, hinted_question("trash_can", [1.5, 1.0, 0.3]));
        assert_eq!(informed.answer_text, "The nearest place to throw the rubbish is the trash can near the stove.");
    }

    #[test]
    fn echo_passes_question_through() {
        let s = scene();
        assert_eq!(EchoReasoner.reason("anything", &s.summary()).unwrap().intent, "anything");
    }
}
