use ndarray::{Array2, Axis};

use super::{check_shape, glorot, relu, relu_backward, softmax_rows, Parameters};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Fully connected network with ReLU between layers and no activation on the
/// final layer. Biases are stored as `1 x out` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array2<f64>>,
}

pub type MlpGrads = MlpParams;

/// Intermediate values of one MLP forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
}

impl MlpCache {
    /// Output of the last hidden layer (the input of the final layer).
    pub fn penultimate(&self) -> &Array2<f64> {
        self.inputs.last().unwrap()
    }
}

impl MlpParams {
    /// `widths = [in, hidden..., out]`; weights Glorot-uniform, biases zero.
    pub fn init(widths: &[usize], rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let weights = widths.windows(2).map(|w| glorot(w[0], w[1], rng)).collect();
        let biases = widths[1..].iter().map(|&w| Array2::zeros((1, w))).collect();
        MlpParams { weights, biases }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        MlpParams {
            weights: widths.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: widths[1..].iter().map(|&w| Array2::zeros((1, w))).collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().unwrap().ncols()
    }

    /// Returns `(logits, probabilities, cache)`.
    pub fn forward(&self, input: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>, MlpCache)> {
        if input.ncols() != self.in_dim() {
            return Err(Error::shape(format!(
                "MLP expects {} input columns, got {}",
                self.in_dim(),
                input.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = input.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            check_shape("MLP bias", b.dim(), (1, w.ncols()))?;
            let z = act.dot(w) + b;
            inputs.push(act);
            act = if i == last { z.clone() } else { relu(&z) };
            pre.push(z);
        }
        let probs = softmax_rows(&act);
        Ok((act, probs, MlpCache { inputs, pre }))
    }

    /// Returns parameter gradients and `dL/d(input)` given `dL/d(logits)`.
    pub fn backward(&self, cache: &MlpCache, dlogits: &Array2<f64>) -> (MlpGrads, Array2<f64>) {
        let n = self.weights.len();
        let mut dw = vec![Array2::zeros((0, 0)); n];
        let mut db = vec![Array2::zeros((0, 0)); n];
        let mut delta = dlogits.clone();
        for i in (0..n).rev() {
            if i != n - 1 {
                delta = relu_backward(&delta, &cache.pre[i]);
            }
            dw[i] = cache.inputs[i].t().dot(&delta);
            db[i] = delta.sum_axis(Axis(0)).insert_axis(Axis(0));
            delta = delta.dot(&self.weights[i].t());
        }
        (
            MlpParams {
                weights: dw,
                biases: db,
            },
            delta,
        )
    }
}

impl Parameters for MlpParams {
    fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("mlp{i}.weight"), w));
            out.push((format!("mlp{i}.bias"), b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }
}
