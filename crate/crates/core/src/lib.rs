//! Library for 3D reasoning grounding: exact oriented-box IoU and the
//! Acc@kIoU metric, a rule-based question-answer-location generator, a
//! small numerical grounding head with its training losses, and
//! chain-of-grounding inference over pluggable backends.

pub mod annotation;
pub mod cog;
pub mod error;
pub mod geometry;
pub mod grounding;
pub mod io;
pub mod metrics;
pub mod scene;
pub mod templates;

pub use error::{BackendError, Error, Result};
pub use scene::{AnnotatedObject, Box3D, GroundedBox, PredictionSet, QALRecord, ReasoningType, Scene, SceneSummary};
