//! Relation-aware sparse attention (RASA) over knowledge graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: typed knowledge graphs, attention masks derived from them,
//!   brute-force k-hop and reachability oracles, and pattern-count accounting.
//! - [`numerics`]: a small dense tensor type with a reverse-mode gradient tape.
//! - [`attention`]: dense and relation-aware sparse attention plus an entropy probe.
//! - [`model`]: the stacked k-hop reasoner built from RASA blocks.
//! - [`data`]: synthetic k-hop task generation and MetaQA-format ingestion.
//! - [`train`]: Adam, early stopping, metrics and the depth-ablation experiment.

pub mod attention;
pub mod data;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod train;
