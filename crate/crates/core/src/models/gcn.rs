use ndarray::Array2;

use super::{
    check_shape, glorot, relu, relu_backward, Adjacency, ForwardPass, LayerTrace, Parameters,
    EMBED_DIM, HIDDEN_DIM,
};
use crate::error::Result;
use crate::rng::Rng;

/// Two-layer GCN: `H1 = ReLU(A X W0)`, embedding `Z2 = A H1 W1` (no output
/// activation).
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
}

impl GcnParams {
    pub fn init(in_dim: usize, rng: &mut Rng) -> Self {
        GcnParams {
            w0: glorot(in_dim, HIDDEN_DIM, rng),
            w1: glorot(HIDDEN_DIM, EMBED_DIM, rng),
        }
    }

    pub(super) fn forward(&self, adj: &Adjacency, x: &Array2<f64>) -> Result<ForwardPass> {
        check_shape("GCN W0", self.w0.dim(), (x.ncols(), self.w0.ncols()))?;
        check_shape("GCN W1", self.w1.dim(), (self.w0.ncols(), self.w1.ncols()))?;
        let a = adj.normalized();
        let ax = a.dot(x);
        let z1 = ax.dot(&self.w0);
        let h1 = relu(&z1);
        let ah = a.dot(&h1);
        let z2 = ah.dot(&self.w1);
        Ok(ForwardPass {
            embeddings: z2.clone(),
            trace: LayerTrace {
                z: vec![z1, z2.clone()],
                h: vec![h1, z2],
                activated: vec![true, false],
            },
            propagated: vec![ax, ah],
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
        let (ax, ah) = (&pass.propagated[0], &pass.propagated[1]);
        let (z1, h1) = (&pass.trace.z[0], &pass.trace.h[0]);

        let dw1 = ah.t().dot(upstream);
        let d_ah = upstream.dot(&self.w1.t());
        let dh1 = a.t().dot(&d_ah);
        let dz1 = relu_backward(&dh1, z1);
        let dw0 = ax.t().dot(&dz1);
        let d_ax = dz1.dot(&self.w0.t());
        let dx = a.t().dot(&d_ax);

        let da = with_adjacency.then(|| {
            let g_norm = d_ah.dot(&h1.t()) + d_ax.dot(&x.t());
            adj.normalization_backward(&g_norm)
        });
        (GcnParams { w0: dw0, w1: dw1 }, dx, da)
    }
}

impl Parameters for GcnParams {
    fn named(&self) -> Vec<(String, &Array2<f64>)> {
        vec![("w0".into(), &self.w0), ("w1".into(), &self.w1)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w0, &mut self.w1]
    }
}
