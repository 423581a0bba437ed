//! Local GNNs (GCN, SGC, GCNII), the MLP head, Adam and a finite-difference
//! gradient checker.
//!
//! All models run dense full-batch passes. A forward pass keeps every layer's
//! pre-activation `Z^l` (and post-activation `H^l`) so that neuron testing can
//! read them and the backward pass can reuse them.

mod adam;
mod adjacency;
pub mod checkpoint;
mod gcn;
mod gcnii;
pub mod gradcheck;
mod mlp;
mod sgc;

pub use adam::Adam;
pub use adjacency::Adjacency;
pub use gcn::GcnParams;
pub use gcnii::GcniiParams;
pub use mlp::{MlpCache, MlpGrads, MlpParams};
pub use sgc::SgcParams;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Width of the first hidden layer of every local model.
pub const HIDDEN_DIM: usize = 32;
/// Width of the embedding each client uploads.
pub const EMBED_DIM: usize = 16;

/// A set of trainable matrices with stable names and order.
pub trait Parameters: Clone {
    fn named(&self) -> Vec<(String, &Array2<f64>)>;

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All entries concatenated in tensor order, each tensor row-major.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }
}

/// Uniform initialization in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

pub(crate) fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// `grad * relu'(z)` with the derivative at exactly zero taken as zero.
pub(crate) fn relu_backward(grad: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    out.zip_mut_with(z, |g, &zv| {
        if zv <= 0.0 {
            *g = 0.0
        }
    });
    out
}

pub(crate) fn relu_deriv(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!("{what}: got {got:?}, expected {want:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Sgc,
    Gcnii,
}

impl ModelKind {
    /// Training epochs for the local model family (GCN/SGC 200, GCNII 1000).
    pub fn default_epochs(self) -> usize {
        match self {
            ModelKind::Gcn | ModelKind::Sgc => 200,
            ModelKind::Gcnii => 1000,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Sgc => "sgc",
            ModelKind::Gcnii => "gcnii",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(ModelKind::Gcn),
            "sgc" => Ok(ModelKind::Sgc),
            "gcnii" => Ok(ModelKind::Gcnii),
            other => Err(Error::param(format!("unknown model {other:?}"))),
        }
    }
}

/// Pre- and post-activation matrices for every traced layer, first layer
/// first.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub z: Vec<Array2<f64>>,
    pub h: Vec<Array2<f64>>,
    pub activated: Vec<bool>,
}

impl LayerTrace {
    pub fn depth(&self) -> usize {
        self.z.len()
    }

    pub fn width(&self, layer: usize) -> usize {
        self.z[layer].ncols()
    }
}

/// Pre-activation row of `node` at 1-based `layer` (layer 1 is the first
/// traced layer).
pub fn neuron_output(trace: &LayerTrace, node: usize, layer: usize) -> Result<ArrayView1<'_, f64>> {
    if layer == 0 || layer > trace.depth() {
        return Err(Error::OutOfRange(format!(
            "layer {layer} outside 1..={}",
            trace.depth()
        )));
    }
    let z = &trace.z[layer - 1];
    if node >= z.nrows() {
        return Err(Error::OutOfRange(format!("node {node} outside 0..{}", z.nrows())));
    }
    Ok(z.row(node))
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub embeddings: Array2<f64>,
    pub trace: LayerTrace,
    /// Propagated inputs (`A X`, `A H`, ...) in model-specific order.
    pub(crate) propagated: Vec<Array2<f64>>,
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: LocalModel,
    pub features: Array2<f64>,
    /// Symmetrized gradient w.r.t. raw adjacency entries, when requested.
    pub adjacency: Option<Array2<f64>>,
}

/// One client's local GNN.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalModel {
    Gcn(GcnParams),
    Sgc(SgcParams),
    Gcnii(GcniiParams),
}

impl LocalModel {
    pub fn init(kind: ModelKind, in_dim: usize, rng: &mut Rng) -> Self {
        match kind {
            ModelKind::Gcn => LocalModel::Gcn(GcnParams::init(in_dim, rng)),
            ModelKind::Sgc => LocalModel::Sgc(SgcParams::init(in_dim, rng)),
            ModelKind::Gcnii => LocalModel::Gcnii(GcniiParams::init(in_dim, rng)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            LocalModel::Gcn(_) => ModelKind::Gcn,
            LocalModel::Sgc(_) => ModelKind::Sgc,
            LocalModel::Gcnii(_) => ModelKind::Gcnii,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.first_layer_weights().nrows()
    }

    /// Number of traced layers.
    pub fn depth(&self) -> usize {
        match self {
            LocalModel::Gcn(_) | LocalModel::Sgc(_) => 2,
            LocalModel::Gcnii(p) => p.layers.len() + 2,
        }
    }

    /// Weight matrix whose columns index the first traced layer's neurons
    /// (GCN/SGC `W0`, GCNII input projection).
    pub fn first_layer_weights(&self) -> &Array2<f64> {
        match self {
            LocalModel::Gcn(p) => &p.w0,
            LocalModel::Sgc(p) => &p.w0,
            LocalModel::Gcnii(p) => &p.w_in,
        }
    }

    pub fn forward(&self, adj: &Adjacency, x: &Array2<f64>) -> Result<ForwardPass> {
        if adj.len() != x.nrows() {
            return Err(Error::shape(format!(
                "adjacency is {n}x{n} but features have {} rows",
                x.nrows(),
                n = adj.len()
            )));
        }
        match self {
            LocalModel::Gcn(p) => p.forward(adj, x),
            LocalModel::Sgc(p) => p.forward(adj, x),
            LocalModel::Gcnii(p) => p.forward(adj, x),
        }
    }

    /// Backpropagates `upstream = dL/d(embeddings)`. The adjacency gradient
    /// differentiates through the normalization and is only computed when
    /// `with_adjacency` is set.
    pub fn backward(
        &self,
        adj: &Adjacency,
        x: &Array2<f64>,
        pass: &ForwardPass,
        upstream: &Array2<f64>,
        with_adjacency: bool,
    ) -> Result<Gradients> {
        if pass.trace.depth() != self.depth() || pass.propagated.is_empty() {
            return Err(Error::MissingTrace(format!(
                "{} model expects a trace of depth {}, got {}",
                self.kind(),
                self.depth(),
                pass.trace.depth()
            )));
        }
        check_shape("upstream gradient", upstream.dim(), pass.embeddings.dim())?;
        let (params, features, adj_grad) = match self {
            LocalModel::Gcn(p) => {
                let (g, dx, da) = p.backward(adj, x, pass, upstream, with_adjacency);
                (LocalModel::Gcn(g), dx, da)
            }
            LocalModel::Sgc(p) => {
                let (g, dx, da) = p.backward(adj, x, pass, upstream, with_adjacency);
                (LocalModel::Sgc(g), dx, da)
            }
            LocalModel::Gcnii(p) => {
                let (g, dx, da) = p.backward(adj, x, pass, upstream, with_adjacency);
                (LocalModel::Gcnii(g), dx, da)
            }
        };
        Ok(Gradients {
            params,
            features,
            adjacency: adj_grad.map(|g| symmetrize(&g)),
        })
    }

    /// `d[Z^layer_t]_k / d[Z^(layer-1)_t]_j` for every `j`, where `layer` is a
    /// 0-based trace index >= 1. Other nodes' rows and earlier layers are held
    /// fixed; ReLU derivatives use subgradient 0 at 0.
    pub fn self_sensitivity(
        &self,
        adj: &Adjacency,
        trace: &LayerTrace,
        node: usize,
        layer: usize,
        neuron: usize,
    ) -> Vec<f64> {
        let prev = trace.z[layer - 1].row(node);
        let self_weight = adj.propagation_self_weight(node);
        match self {
            LocalModel::Gcn(p) => prev
                .iter()
                .enumerate()
                .map(|(j, &z)| self_weight * relu_deriv(z) * p.w1[[j, neuron]])
                .collect(),
            LocalModel::Sgc(p) => (0..prev.len()).map(|j| p.w1[[j, neuron]]).collect(),
            LocalModel::Gcnii(p) => p.self_sensitivity(self_weight, prev, layer, neuron),
        }
    }
}

impl Parameters for LocalModel {
    fn named(&self) -> Vec<(String, &Array2<f64>)> {
        match self {
            LocalModel::Gcn(p) => p.named(),
            LocalModel::Sgc(p) => p.named(),
            LocalModel::Gcnii(p) => p.named(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            LocalModel::Gcn(p) => p.tensors_mut(),
            LocalModel::Sgc(p) => p.tensors_mut(),
            LocalModel::Gcnii(p) => p.tensors_mut(),
        }
    }
}

/// Mean cross-entropy of `probs` over `rows` against `labels[row]`, and its
/// gradient w.r.t. the logits (zero outside `rows`).
pub fn cross_entropy(probs: &Array2<f64>, rows: &[usize], labels: &[usize]) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(probs.dim());
    if rows.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    for &r in rows {
        let y = labels[r];
        loss -= probs[[r, y]].max(f64::MIN_POSITIVE).ln();
        for c in 0..probs.ncols() {
            grad[[r, c]] = scale * (probs[[r, c]] - if c == y { 1.0 } else { 0.0 });
        }
    }
    (loss * scale, grad)
}

pub(crate) fn symmetrize(g: &Array2<f64>) -> Array2<f64> {
    let mut out = g.clone();
    let n = g.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (g[[i, j]] + g[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// Row-wise softmax, numerically shifted.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<'a>(values: impl IntoIterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax_rows(&Array2::zeros((2, 4)));
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_hand_value() {
        let p = softmax_rows(&ndarray::array![[0.0, 3f64.ln()]]);
        assert!((p[[0, 0]] - 0.25).abs() < 1e-15);
        assert!((p[[0, 1]] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn neuron_output_bounds() {
        let mut rng = stream(0, 0);
        let model = LocalModel::init(ModelKind::Gcn, 3, &mut rng);
        let adj = Adjacency::new(Array2::zeros((2, 2)));
        let x = Array2::ones((2, 3));
        let pass = model.forward(&adj, &x).unwrap();
        assert!(neuron_output(&pass.trace, 0, 3).is_err());
        assert!(neuron_output(&pass.trace, 0, 0).is_err());
        assert!(neuron_output(&pass.trace, 2, 1).is_err());
        assert_eq!(neuron_output(&pass.trace, 1, 2).unwrap().len(), EMBED_DIM);
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let mut rng = stream(0, 0);
        let gcn = LocalModel::init(ModelKind::Gcn, 3, &mut rng);
        let gcnii = LocalModel::init(ModelKind::Gcnii, 3, &mut rng);
        let adj = Adjacency::new(Array2::zeros((2, 2)));
        let x = Array2::ones((2, 3));
        let pass = gcnii.forward(&adj, &x).unwrap();
        let up = Array2::zeros((2, EMBED_DIM));
        assert!(matches!(
            gcn.backward(&adj, &x, &pass, &up, false),
            Err(Error::MissingTrace(_))
        ));
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let mut rng = stream(0, 0);
        for kind in [ModelKind::Gcn, ModelKind::Sgc, ModelKind::Gcnii] {
            let model = LocalModel::init(kind, 3, &mut rng);
            let adj = Adjacency::new(Array2::zeros((2, 2)));
            assert!(model.forward(&adj, &Array2::ones((2, 4))).is_err());
            assert!(model.forward(&adj, &Array2::ones((3, 3))).is_err());
        }
    }
}
