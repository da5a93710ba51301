//! Benchmark harness for the trival pipeline: instance suites, repeated
//! evaluation with best-of-N scoring, error classification and reports.

pub mod classify;
pub mod cli;
pub mod config;
pub mod evaluate;
pub mod report;
pub mod results;
pub mod suite;
