//! Instruction and output templates shared by the dataset, the grounding
//! head and the chain-of-grounding prompts. Strings here are byte-exact.

use serde::{Deserialize, Serialize};

/// Special token whose hidden state carries the grounding query.
pub const LOC_TOKEN: &str = "<LOC>";

/// Placeholder for scene tokens in instruction text.
pub const SCENE_TOKEN: &str = "<scene>";

/// The output-type instruction appended to a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputDirective {
    /// Grounding and detection: boxes only.
    #[serde(rename = "Please answer the question only with output 3D box prediction(s).")]
    BoxOnly,
    /// Question answering: text only.
    #[serde(rename = "Please answer the question only with text, do not output 3D box prediction(s).")]
    TextOnly,
    /// Reasoning grounding: text and boxes.
    #[serde(rename = "Please answer the question with text and output 3D box prediction(s).")]
    TextAndBox,
}

impl OutputDirective {
    pub const ALL: [OutputDirective; 3] = [
        OutputDirective::BoxOnly,
        OutputDirective::TextOnly,
        OutputDirective::TextAndBox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputDirective::BoxOnly => "Please answer the question only with output 3D box prediction(s).",
            OutputDirective::TextOnly => {
                "Please answer the question only with text, do not output 3D box prediction(s)."
            }
            OutputDirective::TextAndBox => "Please answer the question with text and output 3D box prediction(s).",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.as_str() == s)
    }

    pub fn requires_boxes(self) -> bool {
        !matches!(self, OutputDirective::TextOnly)
    }
}

/// Detection-style question for one category, e.g.
/// `Where is the stove in this 3D scene?`.
pub fn detection_question(category: &str) -> String {
    format!("Where is the {category} in this 3D scene?")
}

pub fn visual_grounding_instruction(expr: &str) -> String {
    format!("{SCENE_TOKEN} Here is a description about an object: \"{expr}\", where is the object in the 3D scene?")
}

pub fn detection_instruction(category: &str) -> String {
    format!("{SCENE_TOKEN} {}", detection_question(category))
}

/// Instruction wrapper used for question answering and reasoning grounding.
pub fn answer_instruction(question: &str) -> String {
    format!("{SCENE_TOKEN} Answer the question: \u{201c}{question}\u{201d}")
}

/// Full prompt: instruction followed by the output directive.
pub fn render_prompt(instruction: &str, directive: OutputDirective) -> String {
    format!("{instruction} {}", directive.as_str())
}

/// Expected model output for a reasoning-grounding sample.
pub fn reasoning_grounding_output(reason: &str) -> String {
    format!("Sure, {LOC_TOKEN}, {reason}")
}

pub fn detection_output() -> String {
    format!("Sure, {LOC_TOKEN}.")
}

pub fn visual_grounding_output() -> String {
    format!("It is {LOC_TOKEN}.")
}
