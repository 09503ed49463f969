//! Core services for a goal-oriented healthy-eating chatbot: the food
//! knowledge graph, natural-language understanding, dialog management,
//! food journal, goals, recommendation, just-in-time prompts and storage.

pub mod clock;
pub mod corpus;
pub mod dialog;
pub mod engine;
pub mod error;
pub mod goals;
pub mod graph;
pub mod jit;
pub mod journal;
pub mod nlu;
pub mod recommender;
pub mod services;
pub mod sim;
pub mod store;
pub mod text;
pub mod types;
pub mod users;

#[cfg(test)]
mod fixtures;

pub use error::{Error, Result};
