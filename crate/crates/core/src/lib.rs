//! Conversational recommender built around a single language model that
//! plans dialogue turns, a tractable retrieval layer, an LLM ranker that
//! explains its scores, natural-language user profiles, and a controllable
//! user simulator that produces labeled sessions for tuning.

pub mod corpus;
pub mod dialogue;
mod http;
pub mod llm;
pub mod profile;
pub mod ranker;
pub mod record;
pub mod retrieval;
pub mod service;
pub mod session;
pub mod simulator;
pub mod text;
pub mod trainer;
