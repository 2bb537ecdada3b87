//! Conversational data synthesis and evaluation toolkit.
//!
//! - [`conversation`]: role-tagged conversation model and its training-text format
//! - [`graph`]: weighted conversation graphs and chain sampling
//! - [`link`]: per-turn prompt templates, seeds and phenomena
//! - [`teacher`]: chat-completions client and scripted stub
//! - [`synth`]: turn-by-turn synthesis into a JSON-lines dataset
//! - [`weights`]: per-role loss-weight span tables
//! - [`eval`]: recall/F1/ROUGE metrics, evaluation drivers and length statistics

pub mod config;
pub mod conversation;
pub mod eval;
pub mod graph;
pub mod jsonl;
pub mod link;
pub mod rng;
pub mod synth;
pub mod teacher;
pub mod weights;

pub use conversation::{Conversation, Role, Turn};
pub use graph::{ConversationGraph, LengthSpec, ValidGraph};
