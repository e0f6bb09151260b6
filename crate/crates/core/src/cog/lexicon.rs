//! Phrase lexicon, mention extraction, question rewriting and location
//! injection.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::annotation::affordance::{category_id, display_name, AffordanceTable};
use crate::error::{Error, Result};
use crate::geometry::aabb;
use crate::scene::Box3D;
use crate::templates::detection_question;

/// Case-insensitive phrase to category map with longest-match lookup.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
    pattern: Option<Regex>,
}

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (phrase, cats) in entries {
            let key = normalize(&phrase);
            if key.is_empty() {
                continue;
            }
            let slot = map.entry(key).or_default();
            for c in cats {
                if !slot.contains(&c) {
                    slot.push(c);
                }
            }
        }
        let mut phrases: Vec<&String> = map.keys().collect();
        // Longer phrases first so that the leftmost-first alternation is also
        // the longest match at each position.
        phrases.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let pattern = (!phrases.is_empty()).then(|| {
            let alts: Vec<String> = phrases.iter().map(|p| regex::escape(p).replace("\\ ", r"\s+").replace(' ', r"\s+")).collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("escaped lexicon pattern")
        });
        Lexicon { entries: map, pattern }
    }

    /// Category names and synonyms, setting names (mapping to the setting's
    /// anchor) and logical cue words (mapping to every category with the tag).
    pub fn from_table(table: &AffordanceTable) -> Self {
        let mut entries = Vec::new();
        for (name, info) in &table.categories {
            entries.push((display_name(name), vec![name.clone()]));
            for s in &info.synonyms {
                entries.push((s.clone(), vec![name.clone()]));
            }
        }
        for s in &table.settings {
            entries.push((s.name.clone(), vec![s.anchor.clone()]));
        }
        for l in &table.logical {
            let cats = table.categories_with_tag(&l.tag).into_iter().map(String::from).collect();
            entries.push((l.cue.clone(), cats));
        }
        Self::new(entries)
    }

    /// Categories for an exact phrase, ignoring case and extra spaces.
    pub fn lookup(&self, phrase: &str) -> Option<&[String]> {
        self.entries.get(&normalize(phrase)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// An explicitly mentioned object phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    /// Text as it appears in the question.
    pub text: String,
    /// Byte span in the question.
    pub span: (usize, usize),
    pub categories: Vec<String>,
}

/// Longest-match, case-insensitive, non-overlapping scan, left to right.
pub fn extract_mentions(question: &str, lexicon: &Lexicon) -> Vec<Mention> {
    let Some(re) = &lexicon.pattern else { return Vec::new() };
    re.find_iter(question)
        .map(|m| Mention {
            text: m.as_str().to_string(),
            span: (m.start(), m.end()),
            categories: lexicon.lookup(m.as_str()).map(<[String]>::to_vec).unwrap_or_default(),
        })
        .collect()
}

/// One detection-style question per mention, in mention order.
pub fn rewrite_to_grounding_question(mentions: &[Mention]) -> Result<Vec<String>> {
    if mentions.is_empty() {
        return Err(Error::Invariant("no mentions to rewrite".into()));
    }
    Ok(mentions.iter().map(|m| detection_question(&m.text)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationFormat {
    /// `Known: <category> at center (x, y, z), size (w, l, h).` with two
    /// decimals; size is the extent of the axis-aligned hull.
    #[default]
    CenterSizeV1,
}

/// Marker that opens the injected location block.
pub const KNOWN_MARKER: &str = "Known:";

/// Object whose location is injected into a question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownObject {
    /// Category id, e.g. `trash_can`.
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: Box3D,
}

fn two_decimals(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

pub fn format_triple(v: [f64; 3]) -> String {
    format!("({}, {}, {})", two_decimals(v[0]), two_decimals(v[1]), two_decimals(v[2]))
}

pub fn known_clause(obj: &KnownObject, format: LocationFormat) -> String {
    match format {
        LocationFormat::CenterSizeV1 => {
            let (lo, hi) = aabb(&obj.bbox);
            let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
            format!(
                "{KNOWN_MARKER} {} at center {}, size {}.",
                display_name(&obj.category),
                format_triple(obj.bbox.center()),
                format_triple(extent)
            )
        }
    }
}

/// The question without any injected location block.
pub fn strip_known(question: &str) -> &str {
    match question.find(&format!(" {KNOWN_MARKER} ")) {
        Some(i) => &question[..i],
        None => question.strip_suffix(KNOWN_MARKER).unwrap_or(question).trim_end(),
    }
}

/// Replace the location block of `question` with one clause per object, in
/// order, dropping repeated clauses. No objects leaves the bare question.
pub fn inject_locations(question: &str, objects: &[KnownObject], format: LocationFormat) -> String {
    let mut out = strip_known(question).to_string();
    let mut seen: Vec<String> = Vec::new();
    for o in objects {
        let clause = known_clause(o, format);
        if !seen.contains(&clause) {
            seen.push(clause);
        }
    }
    for clause in seen {
        out.push(' ');
        out.push_str(&clause);
    }
    out
}

/// A location clause read back from a question.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedKnown {
    pub category: String,
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl ParsedKnown {
    pub fn hull(&self) -> Option<Box3D> {
        Box3D::axis_aligned(self.center, self.size.map(|s| s.max(1e-6))).ok()
    }
}

/// Split a question into its base text and its location clauses.
pub fn parse_known(question: &str) -> (&str, Vec<ParsedKnown>) {
    let base = strip_known(question);
    let num = r"(-?\d+(?:\.\d+)?)";
    let re = Regex::new(&format!(
        r"{KNOWN_MARKER} (.+?) at center \({num}, {num}, {num}\), size \({num}, {num}, {num}\)\."
    ))
    .expect("static pattern");
    let tail = &question[base.len()..];
    let known = re
        .captures_iter(tail)
        .map(|c| {
            let f = |i: usize| c[i].parse::<f64>().unwrap_or(0.0);
            ParsedKnown {
                category: category_id(&c[1]),
                center: [f(2), f(3), f(4)],
                size: [f(5), f(6), f(7)],
            }
        })
        .collect();
    (base, known)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::from_table(&AffordanceTable::builtin())
    }

    #[test]
    fn rubbish_question_mentions() {
        let q = "If I'm cooking dinner in the kitchen, where is the nearest place to throw the rubbish?";
        let m = extract_mentions(q, &lex());
        let texts: Vec<&str> = m.iter().map(|m| m.text.as_str()).collect();
        assert_eq!(texts, vec!["kitchen", "rubbish"]);
        assert_eq!(m[0].categories, vec!["stove"]);
        assert!(m[1].categories.contains(&"trash_can".to_string()));
        assert_eq!(&q[m[1].span.0..m[1].span.1], "rubbish");
    }

    #[test]
    fn no_mentions_and_repeats() {
        assert!(extract_mentions("I am thirsty, can I have something to drink?", &lex()).is_empty());
        let m = extract_mentions("lamp near the lamp", &lex());
        assert_eq!(m.len(), 2);
        assert_ne!(m[0].span, m[1].span);
    }

    #[test]
    fn longest_match_wins() {
        let m = extract_mentions("Is the Floor Lamp by the bed or the bedroom door?", &lex());
        let texts: Vec<&str> = m.iter().map(|m| m.text.as_str()).collect();
        assert_eq!(texts, vec!["Floor Lamp", "bed", "bedroom"]);
        assert_eq!(m[0].categories, vec!["floor_lamp"]);
    }

    #[test]
    fn rewrite_round_trip() {
        let m = extract_mentions("Which trash can is closest to the stove?", &lex());
        let qs = rewrite_to_grounding_question(&m).unwrap();
        assert_eq!(qs, vec!["Where is the trash can in this 3D scene?", "Where is the stove in this 3D scene?"]);
        for (q, orig) in qs.iter().zip(&m) {
            assert_eq!(extract_mentions(q, &lex())[0].text, orig.text);
        }
        assert!(rewrite_to_grounding_question(&[]).is_err());
    }

    #[test]
    fn known_clause_format_and_idempotence() {
        let stove = KnownObject {
            category: "stove".into(),
            bbox: Box3D::axis_aligned([1.0, 2.0, 0.9], [0.6, 0.6, 0.9]).unwrap(),
        };
        let q = "Which trash can is closest to the stove?";
        let once = inject_locations(q, std::slice::from_ref(&stove), LocationFormat::CenterSizeV1);
        assert_eq!(
            once,
            "Which trash can is closest to the stove? Known: stove at center (1.00, 2.00, 0.90), size (0.60, 0.60, 0.90)."
        );
        assert_eq!(inject_locations(&once, &[stove.clone()], LocationFormat::CenterSizeV1), once);
        assert_eq!(inject_locations(q, &[], LocationFormat::CenterSizeV1), q);
        assert_eq!(inject_locations(&once, &[], LocationFormat::CenterSizeV1), q);
        let (base, known) = parse_known(&once);
        assert_eq!(base, q);
        assert_eq!(known[0].category, "stove");
        assert_eq!(known[0].center, [1.0, 2.0, 0.9]);
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(format_triple([-0.001, -1.234, 0.0]), "(0.00, -1.23, 0.00)");
    }
}
