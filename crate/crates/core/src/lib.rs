//! Scores how much a retrieved document raises a teacher model's confidence
//! in the reference answer, turns those scores into labeled ranking data,
//! trains a small reranker on it, and runs retrieve -> rerank -> context.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod confidence;
pub mod config;
pub mod error;
pub mod hash;
pub mod jsonl;
pub mod mig;
pub mod pipeline;
pub mod reranker;
pub mod synthetic;
pub mod teacher;
pub mod text;

pub use error::{Error, Result};
