//! Compile algebraic data type (ADT) schemas into trainable encoder
//! architectures built from multilinear flattening layers (MFLs).
//!
//! The pipeline has three stages:
//!
//! 1. [`schema`] parses and validates a textual ADT schema (tensors, sums,
//!    products, multisets, named recursive types) into a [`schema::SchemaEnv`].
//! 2. [`graph`] lowers a type expression to an [`graph::EncoderGraph`]: a DAG
//!    of typed architecture nodes (embeddings, dense layers, tensor MFLs,
//!    product interactions, sum dispatch, multiset pooling, recurrent cells),
//!    each declaring named parameter slots.
//! 3. [`runtime`] evaluates a graph on a [`value::Value`], records a tape and
//!    computes exact reverse-mode gradients for every parameter slot, with a
//!    finite-difference checker. [`train`] adds desk-scale supervised training
//!    on top.
//!
//! [`graph::relations`] contains the constrained-weight constructions that
//! exhibit one MFL family as a special case of another (product vs. tensor,
//! tensor vs. multiset, product vs. multiset).

pub mod error;
pub mod graph;
pub mod params;
pub mod runtime;
pub mod schema;
pub mod tensor;
pub mod train;
pub mod value;

pub use error::{GraphError, RuntimeError, SchemaError, TrainError, ValueError};
pub use graph::{CompileOptions, EncoderGraph};
pub use params::ParamStore;
pub use schema::{SchemaEnv, TypeExpr};
pub use tensor::{DenseTensor, Yector};
pub use value::Value;
