//! Link prediction for flow-driven spatial networks.
//!
//! A candidate link is classified from its local neighborhood: an h-hop
//! enclosing subgraph is cut out of the spatial graph, turned into a line
//! graph whose nodes carry oriented edge vectors, refined by attention-driven
//! scale-and-flip message passing, and read out from the mean refined vectors
//! around the two target nodes.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod linegraph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod subgraph;
pub mod train;

pub use error::{Error, Result};
