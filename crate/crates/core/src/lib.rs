//! Structure-evolution-aware experience replay (SEA-ER) for node-wise graph
//! continual learning.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`] and [`stream`]: evolving graphs, task streams and hop-distance machinery.
//! - [`csbm`]: contextual stochastic block model stream generator.
//! - [`gnn`]: a two-layer GCN / GraphSAGE backbone with per-task heads, exact gradients and Adam.
//! - [`selection`]: experience-buffer selection (k-center greedy, samplers, baselines).
//! - [`alignment`]: kernel mean matching replay weights via a box-constrained QP.
//! - [`continual`]: the continual training driver and joint-training upper bound.
//! - [`metrics`]: FAP / FAF / forgetting and the embedding distortion profile.
//! - [`ingest`]: conversion of plain-text node-classification datasets into streams.

pub mod alignment;
pub mod continual;
pub mod csbm;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod rng;
pub mod selection;
pub mod stream;

pub use error::{Error, Result};
pub use graph::{Graph, Hops, VertexId};
pub use stream::{TaskStream, VertexBatch};
