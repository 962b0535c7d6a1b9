//! Target-driven conversation planning for recommendation dialogue.
//!
//! Given a user profile, domain knowledge triples, a conversation history
//! and a designated target (action, topic), the planner generates a
//! reverse-ordered path of dialogue actions and topics that starts at the
//! target and ends at the step for the current turn. The last step of the
//! path is then used as a guiding prompt for utterance generation.

pub mod corpus;
pub mod encoders;
pub mod guidance;
pub mod metrics;
pub mod planner;
pub mod synthgen;
pub mod training;

pub use corpus::{DialogueSample, PlanStep};
pub use planner::{PlanPath, PlannerConfig};
