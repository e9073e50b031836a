//! Batch prompting of chat language models for tabular data preprocessing:
//! error detection, data imputation, schema matching and entity matching.

pub mod batching;
pub mod cli;
pub mod config;
pub mod context;
pub mod eval;
pub mod fewshot;
pub mod gateway;
pub mod ingest;
pub mod model;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod rundir;
