//! Mutation-based evaluation of method postconditions.

pub mod cli;
pub mod config;
pub mod frontend;
pub mod harness;
pub mod llmclient;
pub mod metrics;
pub mod mutgen;
pub mod pipeline;
pub mod store;
pub mod validate;
