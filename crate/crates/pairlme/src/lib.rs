//! Survey-weighted linear mixed models: data ingestion, simulation studies
//! and the command-line driver around `pairlme-core`.
#![allow(clippy::needless_range_loop)]
pub mod cli;
pub mod config;
pub mod error;
pub mod ingest;
pub mod report;
pub mod simlab;
pub use pairlme_core as core;
