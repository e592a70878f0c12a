//! Training and evaluation loops, their configuration, and inspection tools.

pub mod config;
pub mod run;
pub mod tools;

pub use config::parse_pairs;
pub use run::{evaluate, evaluate_model, quiet, train, Evaluation, RunConfig, TrainSummary, METRICS_HEADER};
pub use tools::{corpus_emd_report, corpus_pairs, dump_dwt, export_attention};
