//! Error types for each stage of the pipeline.

use thiserror::Error;

/// Errors raised while parsing or validating a schema.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SchemaError {
    #[error("syntax error at line {line}, col {col}: expected {expected}, found {found}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: unresolved reference `{name}`")]
    Unresolved { line: usize, name: String },
    #[error("line {line}: MSet takes exactly one argument, got {got}")]
    MSetArity { line: usize, got: usize },
    #[error("line {line}: duplicate definition `{name}`")]
    DuplicateDefinition { line: usize, name: String },
    #[error("line {line}: `{name}` expects {expected} type argument(s), got {got}")]
    TemplateArity {
        line: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unguarded recursion in `{name}`: no sum alternative escapes the cycle")]
    UnguardedRecursion { name: String },
    #[error("unresolved reference `{name}`")]
    UnknownType { name: String },
}

/// A value failed structural conformance against a type.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message} at {path}")]
pub struct ConformanceError {
    pub path: String,
    pub message: String,
}

/// Errors from runtime value operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ValueError {
    #[error("tag {tag} out of range for {branches} branch(es)")]
    TagOutOfRange { tag: usize, branches: usize },
    #[error("index {index} out of range for tuple of arity {arity}")]
    IndexOutOfRange { index: usize, arity: usize },
    #[error("poly map arity mismatch: constructor takes {expected} function(s), got {got}")]
    MapArity { expected: usize, got: usize },
    #[error("malformed value record: {0}")]
    Wire(String),
}

/// Errors from tensor primitives.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("contraction axes ({p}, {q}) invalid for tensor of order {order}")]
    BadAxes { p: usize, q: usize, order: usize },
    #[error("pairing matrix shape {got:?} does not match contracted axis lengths ({lp}, {lq})")]
    PairingShape { got: Vec<usize>, lp: usize, lq: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
}

/// Errors while building or rewriting encoder graphs.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("type is uninhabited (empty sum); no encoder exists")]
    Uninhabited,
    #[error("output width must be >= 1")]
    ZeroWidth,
    #[error("{0}")]
    Schema(#[from] SchemaError),
    #[error("node {node} slot {slot}: expected shape {expected:?}, found {found:?}")]
    SlotShape {
        node: usize,
        slot: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("cannot pair nodes of different shapes: {0}")]
    ShareShape(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// Errors from forward/backward evaluation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum RuntimeError {
    #[error("{0}")]
    Conformance(#[from] ConformanceError),
    #[error("node {node}: {message}")]
    Eval { node: usize, message: String },
    #[error("cotangent dim {got} does not match output dim {expected}")]
    CotangentDim { got: usize, expected: usize },
    #[error("missing parameter slot ({node}, {slot})")]
    MissingSlot { node: usize, slot: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Errors from training and evaluation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("target dim {got} does not match head dim {expected}")]
    HeadDim { got: usize, expected: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("dataset record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("{0}")]
    Runtime(#[from] RuntimeError),
    #[error("invalid config: {0}")]
    Config(String),
}
