//! Chain-of-grounding inference: ground the objects a question mentions,
//! write their locations into the question, then reason and ground again.

pub mod backends;
pub mod chain;
pub mod lexicon;
pub mod remote;

pub use backends::{hinted_question, EchoReasoner, Grounder, OracleGrounder, Reasoner, Reasoning, RuleReasoner};
pub use chain::{run_chain, run_record, run_single_pass, AnchorRecord, Backends, ChainRound, CoGConfig, CoGTrace, StepTiming};
pub use lexicon::{
    extract_mentions, inject_locations, known_clause, parse_known, rewrite_to_grounding_question, strip_known, KnownObject, Lexicon,
    LocationFormat, Mention, ParsedKnown, KNOWN_MARKER,
};
pub use remote::{RemoteBackend, DEFAULT_TIMEOUT};
