//! Simulator for vertical federated graph learning and the neuron-path
//! guided, one-query shadow-model attack against it.
//!
//! Clients share the graph structure and hold disjoint feature columns; each
//! trains a local GNN whose node embeddings a server MLP concatenates and
//! classifies. A malicious client manipulates a few of its training features
//! along the most common neuron path, distils a shadow of the server from a
//! single batch of returned probabilities, and then perturbs edges against the
//! shadow to flip the server's prediction for a target node.

pub mod attack;
pub mod error;
pub mod graph;
pub mod manipulation;
pub mod metrics;
pub mod models;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
