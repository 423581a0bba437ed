use ndarray::{Array2, ArrayView1};

use super::{
    check_shape, glorot, relu, relu_backward, relu_deriv, Adjacency, ForwardPass, LayerTrace,
    Parameters, EMBED_DIM, HIDDEN_DIM,
};
use crate::error::Result;
use crate::rng::Rng;

pub const GCNII_LAYERS: usize = 4;
pub const GCNII_ALPHA: f64 = 0.1;
pub const GCNII_LAMBDA: f64 = 0.5;

/// GCNII with an input projection, four propagation layers using initial
/// residual and identity mapping, and a linear output projection.
///
/// ```text
/// H0   = ReLU(X W_in)
/// H^l  = ReLU(((1 - a_l) A H^(l-1) + a_l H0) ((1 - b_l) I + b_l W_l))
/// emb  = H^4 W_out
/// ```
///
/// The trace holds `Z0 = X W_in`, `Z1..Z4` and the output, so the input
/// projection counts as the first traced layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GcniiParams {
    pub w_in: Array2<f64>,
    pub layers: Vec<Array2<f64>>,
    pub w_out: Array2<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl GcniiParams {
    pub fn init(in_dim: usize, rng: &mut Rng) -> Self {
        let w_in = glorot(in_dim, HIDDEN_DIM, rng);
        let layers = (0..GCNII_LAYERS)
            .map(|_| glorot(HIDDEN_DIM, HIDDEN_DIM, rng))
            .collect();
        let w_out = glorot(HIDDEN_DIM, EMBED_DIM, rng);
        GcniiParams {
            w_in,
            layers,
            w_out,
            alpha: vec![GCNII_ALPHA; GCNII_LAYERS],
            beta: (1..=GCNII_LAYERS)
                .map(|l| (GCNII_LAMBDA / l as f64 + 1.0).ln())
                .collect(),
        }
    }

    fn mixing(&self, l: usize) -> Array2<f64> {
        let b = self.beta[l];
        let mut m = &self.layers[l] * b;
        for i in 0..m.nrows() {
            m[[i, i]] += 1.0 - b;
        }
        m
    }

    pub(super) fn forward(&self, adj: &Adjacency, x: &Array2<f64>) -> Result<ForwardPass> {
        let width = self.w_in.ncols();
        check_shape("GCNII W_in", self.w_in.dim(), (x.ncols(), width))?;
        for w in &self.layers {
            check_shape("GCNII layer", w.dim(), (width, width))?;
        }
        check_shape("GCNII W_out", self.w_out.dim(), (width, self.w_out.ncols()))?;

        let a = adj.normalized();
        let z0 = x.dot(&self.w_in);
        let h0 = relu(&z0);
        let mut zs = vec![z0];
        let mut hs = vec![h0.clone()];
        let mut supports = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let alpha = self.alpha[l];
            let support = a.dot(hs.last().unwrap()) * (1.0 - alpha) + &h0 * alpha;
            let z = support.dot(&self.mixing(l));
            hs.push(relu(&z));
            zs.push(z);
            supports.push(support);
        }
        let out = hs.last().unwrap().dot(&self.w_out);
        zs.push(out.clone());
        hs.push(out.clone());
        let mut activated = vec![true; zs.len()];
        *activated.last_mut().unwrap() = false;
        Ok(ForwardPass {
            embeddings: out,
            trace: LayerTrace {
                z: zs,
                h: hs,
                activated,
            },
            propagated: supports,
        })
    }

    pub(super) fn backward(
        &self,
        adj: &Adjacency,
        x: &Array2<f64>,
        pass: &ForwardPass,
        upstream: &Array2<f64>,
        with_adjacency: bool,
    ) -> (Self, Array2<f64>, Option<Array2<f64>>) {
        let a = adj.normalized();
        let depth = self.layers.len();
        let (zs, hs) = (&pass.trace.z, &pass.trace.h);

        let dw_out = hs[depth].t().dot(upstream);
        let mut dh = upstream.dot(&self.w_out.t());
        let mut dh0 = Array2::<f64>::zeros(hs[0].dim());
        let mut g_norm = with_adjacency.then(|| Array2::<f64>::zeros(a.dim()));
        let mut dlayers = vec![Array2::zeros((0, 0)); depth];

        for l in (0..depth).rev() {
            let (alpha, beta) = (self.alpha[l], self.beta[l]);
            let dz = relu_backward(&dh, &zs[l + 1]);
            dlayers[l] = pass.propagated[l].t().dot(&dz) * beta;
            let dsupport = dz.dot(&self.mixing(l).t());
            let dprop = &dsupport * (1.0 - alpha);
            dh0.scaled_add(alpha, &dsupport);
            if let Some(g) = g_norm.as_mut() {
                *g += &dprop.dot(&hs[l].t());
            }
            dh = a.t().dot(&dprop);
        }
        dh0 += &dh;
        let dz0 = relu_backward(&dh0, &zs[0]);
        let dw_in = x.t().dot(&dz0);
        let dx = dz0.dot(&self.w_in.t());
        let da = g_norm.map(|g| adj.normalization_backward(&g));
        (
            GcniiParams {
                w_in: dw_in,
                layers: dlayers,
                w_out: dw_out,
                alpha: self.alpha.clone(),
                beta: self.beta.clone(),
            },
            dx,
            da,
        )
    }

    /// See [`super::LocalModel::self_sensitivity`].
    pub(super) fn self_sensitivity(
        &self,
        self_weight: f64,
        prev: ArrayView1<'_, f64>,
        layer: usize,
        neuron: usize,
    ) -> Vec<f64> {
        let depth = self.layers.len();
        if layer == depth + 1 {
            return prev
                .iter()
                .enumerate()
                .map(|(j, &z)| relu_deriv(z) * self.w_out[[j, neuron]])
                .collect();
        }
        let l = layer - 1;
        let alpha = self.alpha[l];
        // H0 feeds layer 1 both through propagation and the initial residual.
        let coef = (1.0 - alpha) * self_weight + if l == 0 { alpha } else { 0.0 };
        let m = self.mixing(l);
        prev.iter()
            .enumerate()
            .map(|(j, &z)| coef * relu_deriv(z) * m[[j, neuron]])
            .collect()
    }
}

impl Parameters for GcniiParams {
    fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![("w_in".to_string(), &self.w_in)];
        for (l, w) in self.layers.iter().enumerate() {
            out.push((format!("w{}", l + 1), w));
        }
        out.push(("w_out".into(), &self.w_out));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.w_in];
        out.extend(self.layers.iter_mut());
        out.push(&mut self.w_out);
        out
    }
}
