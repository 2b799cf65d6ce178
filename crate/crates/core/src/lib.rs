//! Networked federated learning over empirical graphs.
//!
//! Nodes of an [`graph::EmpGraph`] carry local datasets and losses; the
//! [`gtvmin`] module couples them through a total-variation penalty and
//! [`algorithms`] solves the resulting problem by message passing.

pub mod algorithms;
pub mod error;
pub mod graph;
pub mod graphlearn;
pub mod gtvmin;
pub mod linalg;
pub mod localmodel;
pub mod optim;
pub mod params;
pub mod rng;
pub mod synth;
pub mod trust;

pub use error::{Error, Result};
pub use graph::{EmpGraph, Penalty};
pub use localmodel::{LocalDataset, LocalLoss, QuadLoss};
pub use params::StackedParams;
