use ndarray::{Array2, Zip};

use crate::graph::{normalize_adjacency, Graph};

/// A raw adjacency together with its symmetric normalization
/// `D^-1/2 (A + I) D^-1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    raw: Array2<f64>,
    norm: Array2<f64>,
    inv_sqrt_deg: Vec<f64>,
}

impl Adjacency {
    pub fn new(raw: Array2<f64>) -> Self {
        assert_eq!(raw.nrows(), raw.ncols(), "adjacency must be square");
        let norm = normalize_adjacency(&raw);
        let inv_sqrt_deg = raw
            .rows()
            .into_iter()
            .map(|r| 1.0 / (1.0 + r.sum()).sqrt())
            .collect();
        Adjacency {
            raw,
            norm,
            inv_sqrt_deg,
        }
    }

    pub fn from_graph(graph: &Graph) -> Self {
        Self::new(graph.adjacency())
    }

    pub fn len(&self) -> usize {
        self.raw.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self) -> &Array2<f64> {
        &self.raw
    }

    pub fn normalized(&self) -> &Array2<f64> {
        &self.norm
    }

    /// `A + I`, the unnormalized propagation matrix.
    pub fn with_self_loops(&self) -> Array2<f64> {
        let mut a = self.raw.clone();
        for i in 0..a.nrows() {
            a[[i, i]] += 1.0;
        }
        a
    }

    /// Diagonal entry of the normalized matrix for `node`.
    pub fn propagation_self_weight(&self, node: usize) -> f64 {
        self.norm[[node, node]]
    }

    /// Maps `dL/d(normalized)` to `dL/d(raw)` entrywise, treating every raw
    /// entry (including the diagonal) as an independent variable.
    pub fn normalization_backward(&self, grad_norm: &Array2<f64>) -> Array2<f64> {
        let n = self.len();
        let s = &self.inv_sqrt_deg;
        // dL/dd_i = -1/(2 d_i) (sum_l G_il N_il + sum_k G_ki N_ki), with 1/d_i = s_i^2
        let weighted = grad_norm * &self.norm;
        let mut deg_grad = vec![0.0; n];
        for i in 0..n {
            deg_grad[i] += weighted.row(i).sum();
            deg_grad[i] += weighted.column(i).sum();
            deg_grad[i] *= -0.5 * s[i] * s[i];
        }
        let mut out = Array2::zeros((n, n));
        Zip::indexed(&mut out)
            .and(grad_norm)
            .for_each(|(i, j), o, &g| *o = g * s[i] * s[j] + deg_grad[i]);
        out
    }
}
