//! Collaborative block-building between an architect and a builder.
//!
//! The crate holds the grid world, the builder action protocol, prompt
//! templates, model gateways, agent seats, the dialogue session loop,
//! transcript files and the instruction-following evaluator.

pub mod agents;
pub mod eval;
pub mod gateway;
pub mod mailbox;
pub mod prompts;
pub mod protocol;
pub mod session;
pub mod transcript;
pub mod world;
