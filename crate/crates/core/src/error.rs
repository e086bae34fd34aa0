//! Error types shared across the crate.

use thiserror::Error;

/// Errors from the tensor/autodiff engine.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: lhs {lhs}, rhs {rhs}")]
    ShapeMismatch { op: String, lhs: String, rhs: String },
    #[error("backward requires a scalar loss, got shape {0}")]
    NotScalarLoss(String),
    #[error("backward on a graph with no gradient-tracked leaves")]
    GradFreeGraph,
    #[error("backward on an already-consumed tape")]
    ConsumedTape,
    #[error("non-finite gradient in parameter '{0}'")]
    NonFiniteGrad(String),
    #[error("checkpoint i/o: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
}

/// Errors from network loading and routing.
#[derive(Debug, Error)]
pub enum NetError {
    #[error("parse error at {file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("node {0} is disconnected from the origin-destination node set")]
    Disconnected(String),
    #[error("edge {0} is covered by no zone")]
    NoZone(String),
    #[error("destination {dest} unreachable from origin {origin}")]
    Unreachable { origin: String, dest: String },
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors from MFD aggregation and the travel-time table.
#[derive(Debug, Error)]
pub enum MfdError {
    #[error("parse error at {file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("hour {0} outside 0..24")]
    HourRange(i64),
    #[error("unknown OD pair ({0}, {1})")]
    UnknownPair(usize, usize),
    #[error("non-positive speed for zone {zone} hour {hour} after fallback")]
    BadSpeed { zone: usize, hour: usize },
    #[error("invalid perturbation spec: {0}")]
    BadSpec(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("table format: {0}")]
    Format(String),
}

/// Errors from the simulator.
#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid scenario config: {0}")]
    BadConfig(String),
    #[error("action length {got} does not match zone count {want}")]
    ActionLength { got: usize, want: usize },
    #[error("step() called on a finished episode")]
    EpisodeDone,
}

/// Errors from the policy network.
#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("observation length {got} does not match 2 + 4N = {want}")]
    BadObservation { got: usize, want: usize },
    #[error("action length {got} does not match zone count {want}")]
    BadActionLength { got: usize, want: usize },
    #[error("mask disables {disabled} experts but only {surplus} may be disabled (K of {experts} must remain)")]
    MaskTooLarge { disabled: usize, surplus: usize, experts: usize },
    #[error("invalid encoder config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Errors from training and evaluation.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {what} at update {update}: {detail}")]
    NonFinite { what: String, update: u64, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Mfd(#[from] MfdError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
