//! Agentic semantic analytics: natural-language questions over text files,
//! tabular files and SQL stores are planned into a validated operator tree,
//! optimized for LLM cost under a quality budget, and executed.

pub mod catalog;
pub mod config;
pub mod engine;
pub mod executor;
pub mod memory;
pub mod models;
pub mod optimizer;
pub mod plan;
pub mod planner;
pub mod prompts;
pub mod provider;
pub mod table;
