//! Knowledge-grounded planner for "bring-me" tasks.
//!
//! An ontological knowledge base is consulted first, a chat model second
//! (with every answer checked against the knowledge base), and the user
//! last. A discrete household simulator and an experiment runner exercise
//! the whole loop.

pub mod bench;
pub mod chat;
pub mod fixtures;
pub mod kb;
pub mod llm;
pub mod prompts;
pub mod resolve;
pub mod simworld;
pub mod verify;
