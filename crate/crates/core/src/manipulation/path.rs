//! Neuron-path testing: from the output layer backwards, follow the neuron
//! with the largest absolute contribution to the previously chosen one.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{argmax, Adjacency, LayerTrace, LocalModel};

/// Neuron indices from the output layer back to the first traced layer,
/// `[k^L, ..., k^1]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NeuronPath(pub Vec<usize>);

impl NeuronPath {
    /// Neuron chosen in the first traced layer.
    pub fn input_neuron(&self) -> usize {
        *self.0.last().expect("paths are never empty")
    }
}

impl fmt::Display for NeuronPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Path for `node` given a trace produced by `model` on `adj`.
pub fn trace_neuron_path(
    model: &LocalModel,
    adj: &Adjacency,
    trace: &LayerTrace,
    node: usize,
) -> Result<NeuronPath> {
    if trace.depth() != model.depth() {
        return Err(Error::MissingTrace(format!(
            "need a {}-layer trace from the {} model, got {} layers",
            model.depth(),
            model.kind(),
            trace.depth()
        )));
    }
    let last = trace.depth() - 1;
    if node >= trace.z[last].nrows() {
        return Err(Error::OutOfRange(format!("node {node}")));
    }
    let abs_out: Vec<f64> = trace.z[last].row(node).iter().map(|v| v.abs()).collect();
    let mut k = argmax(&abs_out);
    let mut path = vec![k];
    for layer in (1..=last).rev() {
        let sens = model.self_sensitivity(adj, trace, node, layer, k);
        let contrib: Vec<f64> = sens
            .iter()
            .zip(trace.z[layer - 1].row(node))
            .map(|(s, z)| (s * z).abs())
            .collect();
        k = argmax(&contrib);
        path.push(k);
    }
    Ok(NeuronPath(path))
}

/// Runs a forward pass and traces every node in `nodes`.
pub fn trace_paths(
    model: &LocalModel,
    adj: &Adjacency,
    x: &Array2<f64>,
    nodes: &[usize],
) -> Result<Vec<NeuronPath>> {
    let pass = model.forward(adj, x)?;
    nodes
        .iter()
        .map(|&t| trace_neuron_path(model, adj, &pass.trace, t))
        .collect()
}
