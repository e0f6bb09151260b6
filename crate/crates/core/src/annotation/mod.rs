//! Rule-based generation of question-answer-location records for the five
//! reasoning types, with synthetic scenes and record validation.

pub mod affordance;
pub mod generate;
pub mod synth;
pub mod validate;

pub use affordance::{AffordanceTable, QuestionTemplates};
pub use generate::{
    generate_dataset, generate_emotional, generate_functional, generate_logical, generate_safety, generate_scene,
    generate_spatial, preset_counts, GenConfig, GenOutput, Shortfall, FULL_SIZE_TOTAL, VALIDATION_COUNTS,
};
pub use synth::{scene_seed, synth_scene, synth_scenes, SynthConfig};
pub use validate::validate_record;
