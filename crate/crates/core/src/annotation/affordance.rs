//! Category inventory, affordance tags and question phrasing, loaded from
//! editable JSON data files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUILTIN_AFFORDANCES: &str = include_str!("../../data/affordances.json");
const BUILTIN_QUESTIONS: &str = include_str!("../../data/questions.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Floor,
    Wall,
    /// Rests on top of a support surface.
    Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
    /// Nominal extents (m) used by the scene synthesizer.
    pub size: [f64; 3],
    pub placement: Placement,
    /// Center height range (m) for wall-mounted categories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalTemplate {
    pub tag: String,
    pub question: String,
    pub answer: String,
}

/// A room setting whose unique anchor object grounds logical questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub name: String,
    pub anchor: String,
    pub activity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicalAction {
    pub tag: String,
    /// Word in the action phrase that names the needed function.
    pub cue: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomPlan {
    pub setting: String,
    pub floor: Vec<String>,
    pub wall: Vec<String>,
    pub surface: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceTable {
    pub categories: BTreeMap<String, CategoryInfo>,
    pub functional: Vec<FunctionalTemplate>,
    pub settings: Vec<Setting>,
    pub logical: Vec<LogicalAction>,
    pub rooms: Vec<RoomPlan>,
}

impl AffordanceTable {
    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_AFFORDANCES).expect("shipped affordance table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: AffordanceTable = serde_json::from_str(text).map_err(|e| Error::parse(None, Some(e.line()), e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: AffordanceTable =
            serde_json::from_str(&text).map_err(|e| Error::parse(Some(path.to_path_buf()), Some(e.line()), e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invariant(msg));
        let known = |c: &str| self.categories.contains_key(c);
        for (name, info) in &self.categories {
            if info.tags.is_empty() {
                return bad(format!("category {name} has no affordance tags"));
            }
            if info.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return bad(format!("category {name} has a non-positive size"));
            }
            match (info.placement, info.height) {
                (Placement::Wall, None) => return bad(format!("wall category {name} needs a height range")),
                (_, Some([lo, hi])) if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                    return bad(format!("category {name} has an invalid height range"));
                }
                _ => {}
            }
        }
        let tags: BTreeSet<&str> = self.categories.values().flat_map(|c| c.tags.iter().map(String::as_str)).collect();
        for f in &self.functional {
            if !tags.contains(f.tag.as_str()) {
                return bad(format!("functional template uses unknown tag {}", f.tag));
            }
            check_placeholders(&f.question, &[], &[])?;
            check_placeholders(&f.answer, &["targets"], &["targets"])?;
        }
        for s in &self.settings {
            if !known(&s.anchor) {
                return bad(format!("setting {} anchors unknown category {}", s.name, s.anchor));
            }
        }
        for l in &self.logical {
            if !tags.contains(l.tag.as_str()) {
                return bad(format!("logical action uses unknown tag {}", l.tag));
            }
            if !contains_word(&l.action, &l.cue) {
                return bad(format!("cue {:?} does not occur in action {:?}", l.cue, l.action));
            }
        }
        for r in &self.rooms {
            if !self.settings.iter().any(|s| s.name == r.setting) {
                return bad(format!("room plan for unknown setting {}", r.setting));
            }
            for (list, placement) in [(&r.floor, Placement::Floor), (&r.wall, Placement::Wall), (&r.surface, Placement::Surface)] {
                for c in list {
                    match self.categories.get(c) {
                        None => return bad(format!("room {} lists unknown category {c}", r.setting)),
                        Some(info) if info.placement != placement => {
                            return bad(format!("room {} lists {c} under the wrong placement", r.setting));
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn tags(&self, category: &str) -> &[String] {
        self.categories.get(category).map_or(&[], |c| &c.tags)
    }

    pub fn has_tag(&self, category: &str, tag: &str) -> bool {
        self.tags(category).iter().any(|t| t == tag)
    }

    /// Categories carrying `tag`, in name order.
    pub fn categories_with_tag(&self, tag: &str) -> Vec<&str> {
        self.categories
            .iter()
            .filter(|(_, info)| info.tags.iter().any(|t| t == tag))
            .map(|(name, _)| name.as_str())
            .collect()
    }

    pub fn setting(&self, name: &str) -> Option<&Setting> {
        self.settings.iter().find(|s| s.name == name)
    }
}

/// Human-readable form of a category id (`trash_can` → `trash can`).
pub fn display_name(category: &str) -> String {
    category.replace('_', " ")
}

/// Inverse of [`display_name`].
pub fn category_id(display: &str) -> String {
    display.trim().to_lowercase().replace(' ', "_")
}

/// "a", "a and b", "a, b and c".
pub fn join_names<S: AsRef<str>>(names: &[S]) -> String {
    match names {
        [] => String::new(),
        [one] => one.as_ref().to_string(),
        [init @ .., last] => {
            let head: Vec<&str> = init.iter().map(AsRef::as_ref).collect();
            format!("{} and {}", head.join(", "), last.as_ref())
        }
    }
}

fn contains_word(haystack: &str, word: &str) -> bool {
    let re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(word))).expect("escaped pattern");
    re.is_match(haystack)
}

fn placeholder_regex() -> Regex {
    Regex::new(r"\{([a-z_]+)\}").expect("static pattern")
}

/// Every `{name}` in `template` must be in `allowed`, and every name in
/// `required` must occur.
pub fn check_placeholders(template: &str, allowed: &[&str], required: &[&str]) -> Result<()> {
    let found: BTreeSet<String> = placeholder_regex()
        .captures_iter(template)
        .map(|c| c[1].to_string())
        .collect();
    if let Some(extra) = found.iter().find(|p| !allowed.contains(&p.as_str())) {
        return Err(Error::Invariant(format!("template {template:?} uses undeclared placeholder {{{extra}}}")));
    }
    if let Some(missing) = required.iter().find(|r| !found.contains(**r)) {
        return Err(Error::Invariant(format!("template {template:?} lacks placeholder {{{missing}}}")));
    }
    Ok(())
}

/// Substitute `{name}` placeholders.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in values {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseTemplate {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialTemplates {
    pub closest: PhraseTemplate,
    pub farthest: PhraseTemplate,
    pub above: PhraseTemplate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightRule {
    /// Center at or above the out-of-reach height.
    High,
    /// Center below it.
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedQuestion {
    pub question: String,
    pub answer: String,
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<HeightRule>,
}

/// Question phrasing pool for the template-driven reasoning types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTemplates {
    pub spatial: SpatialTemplates,
    pub logical: PhraseTemplate,
    pub emotional: Vec<CuratedQuestion>,
    pub safety: Vec<CuratedQuestion>,
}

impl Default for QuestionTemplates {
    fn default() -> Self {
        Self::from_json(BUILTIN_QUESTIONS).expect("shipped question templates are valid")
    }
}

impl QuestionTemplates {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: QuestionTemplates = serde_json::from_str(text).map_err(|e| Error::parse(None, Some(e.line()), e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spatial;
        for t in [&s.closest, &s.farthest] {
            check_placeholders(&t.question, &["target", "anchor"], &["target", "anchor"])?;
            check_placeholders(&t.answer, &["target", "anchor", "distance"], &[])?;
        }
        check_placeholders(&s.above.question, &["target", "anchor"], &["target", "anchor"])?;
        check_placeholders(&s.above.answer, &["target", "anchor"], &[])?;
        check_placeholders(&self.logical.question, &["activity", "action"], &["activity", "action"])?;
        check_placeholders(&self.logical.answer, &["action", "target", "anchor"], &[])?;
        for c in self.emotional.iter().chain(&self.safety) {
            check_placeholders(&c.question, &[], &[])?;
            check_placeholders(&c.answer, &["targets"], &["targets"])?;
            if c.categories.is_empty() {
                return Err(Error::Invariant(format!("curated question {:?} lists no categories", c.question)));
            }
        }
        Ok(())
    }

    /// Every category a curated list refers to must exist in `table`.
    pub fn check_against(&self, table: &AffordanceTable) -> Result<()> {
        for c in self.emotional.iter().chain(&self.safety) {
            if let Some(bad) = c.categories.iter().find(|k| !table.categories.contains_key(*k)) {
                return Err(Error::Invariant(format!("curated question {:?} lists unknown category {bad}", c.question)));
            }
        }
        Ok(())
    }
}
