//! Exit codes, console formatting and content hashes.

use std::path::Path;

use rasa_core::data::DataError;
use rasa_core::graph::GraphError;
use rasa_core::model::ModelError;
use rasa_core::numerics::NumericsError;
use rasa_core::train::TrainError;
use sha2::{Digest, Sha256};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_GENERATION: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;
pub const EXIT_PARSE: i32 = 5;

/// Bad flag values caught after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Mismatch between artifacts (dataset, checkpoint, manifest).
#[derive(Debug)]
pub struct MismatchError(pub String);

impl std::fmt::Display for MismatchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MismatchError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn graph_code(e: &GraphError) -> i32 {
    match e {
        GraphError::Parse { .. } => EXIT_PARSE,
        GraphError::Io(_) => EXIT_FAILURE,
        _ => EXIT_MISMATCH,
    }
}

fn numerics_code(e: &NumericsError) -> i32 {
    match e {
        NumericsError::Io(_) => EXIT_FAILURE,
        _ => EXIT_MISMATCH,
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::GenerationStalled { .. } | DataError::DegreeInfeasible { .. } => EXIT_GENERATION,
        DataError::InvalidSpec(_) | DataError::InvalidArgument(_) => EXIT_USAGE,
        DataError::Parse { .. } | DataError::UnknownEntity { .. } => EXIT_PARSE,
        DataError::Graph(g) => graph_code(g),
        DataError::Io(_) => EXIT_FAILURE,
        DataError::OracleMismatch { .. } | DataError::Inconsistent(_) | DataError::Json(_) => EXIT_MISMATCH,
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::InvalidConfig(_) => EXIT_USAGE,
        ModelError::Io(_) => EXIT_FAILURE,
        ModelError::Numerics(n) => numerics_code(n),
        _ => EXIT_MISMATCH,
    }
}

fn train_code(e: &TrainError) -> i32 {
    match e {
        TrainError::InvalidConfig(_) => EXIT_USAGE,
        TrainError::EmptySplit(_) | TrainError::Mismatch(_) | TrainError::Attention(_) => EXIT_MISMATCH,
        TrainError::Model(m) => model_code(m),
        TrainError::Data(d) => data_code(d),
        TrainError::Numerics(n) => numerics_code(n),
        TrainError::Io(_) => EXIT_FAILURE,
    }
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<MismatchError>() {
            return EXIT_MISMATCH;
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return data_code(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<GraphError>() {
            return graph_code(e);
        }
        if let Some(e) = cause.downcast_ref::<NumericsError>() {
            return numerics_code(e);
        }
        if cause.is::<toml::de::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_FAILURE
}

/// Four significant digits for console output.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if magnitude >= 4 {
        return format!("{x:.3e}");
    }
    let decimals = (3 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// `sha256("blob <len>\0" + content)`, the git object hash layout.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> anyhow::Result<String> {
    Ok(blob_hash(&std::fs::read(path)?))
}
