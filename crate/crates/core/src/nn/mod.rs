//! Small trainable graph network engine: dense tensors, EdgeConv and
//! EdgeConv-E layers with max aggregation, group max-pooling, dense layers,
//! mean-reduced losses and Adam. Backpropagation is written out by hand.
//!
//! Every vertex aggregates over its in-neighbours plus an implicit
//! self-loop (zero relative feature, zero edge attribute), so isolated
//! vertices are well defined. Max-aggregation ties route the gradient to the
//! lowest-indexed neighbour.

mod graph;
mod io;
mod layers;
pub mod loss;
mod model;
mod optim;
mod tensor;

pub use graph::Graph;
pub use io::{LayerRecord, LinearRecord, WeightsFile, WEIGHTS_SCHEMA_VERSION};
pub use layers::{sigmoid, Activation, Dense, EdgeConv, Layer, Linear};
pub use model::{ForwardCache, GnnModel, Gradients, Init, ModelBuilder};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("vertex {vertex} has no neighbours and self-loops are disabled")]
    UndefinedAggregation { vertex: usize },
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("weight file format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}
