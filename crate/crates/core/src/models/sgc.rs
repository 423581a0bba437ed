use ndarray::Array2;

use super::{check_shape, glorot, Adjacency, ForwardPass, LayerTrace, Parameters, EMBED_DIM, HIDDEN_DIM};
use crate::error::Result;
use crate::rng::Rng;

/// Simplified graph convolution: `S^power X W0 W1` with no activations.
///
/// `S` is the normalized adjacency unless `raw_adjacency` is set, in which
/// case it is `A + I`. The trace records `Z1 = S^power X W0` and
/// `Z2 = Z1 W1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgcParams {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
    pub power: usize,
    pub raw_adjacency: bool,
}

impl SgcParams {
    pub fn init(in_dim: usize, rng: &mut Rng) -> Self {
        SgcParams {
            w0: glorot(in_dim, HIDDEN_DIM, rng),
            w1: glorot(HIDDEN_DIM, EMBED_DIM, rng),
            power: 2,
            raw_adjacency: false,
        }
    }

    fn propagation(&self, adj: &Adjacency) -> Array2<f64> {
        if self.raw_adjacency {
            adj.with_self_loops()
        } else {
            adj.normalized().clone()
        }
    }

    pub(super) fn forward(&self, adj: &Adjacency, x: &Array2<f64>) -> Result<ForwardPass> {
        check_shape("SGC W0", self.w0.dim(), (x.ncols(), self.w0.ncols()))?;
        check_shape("SGC W1", self.w1.dim(), (self.w0.ncols(), self.w1.ncols()))?;
        let s = self.propagation(adj);
        // propagated[k] = S^k X, k = 0..=power
        let mut propagated = vec![x.clone()];
        for _ in 0..self.power {
            let next = s.dot(propagated.last().unwrap());
            propagated.push(next);
        }
        let z1 = propagated.last().unwrap().dot(&self.w0);
        let z2 = z1.dot(&self.w1);
        Ok(ForwardPass {
            embeddings: z2.clone(),
            trace: LayerTrace {
                z: vec![z1.clone(), z2.clone()],
                h: vec![z1, z2],
                activated: vec![false, false],
            },
            propagated,
        })
    }

    pub(super) fn backward(
        &self,
        adj: &Adjacency,
        _x: &Array2<f64>,
        pass: &ForwardPass,
        upstream: &Array2<f64>,
        with_adjacency: bool,
    ) -> (Self, Array2<f64>, Option<Array2<f64>>) {
        let s = self.propagation(adj);
        let z1 = &pass.trace.z[0];
        let dw1 = z1.t().dot(upstream);
        let dz1 = upstream.dot(&self.w1.t());
        let top = pass.propagated.last().unwrap();
        let dw0 = top.t().dot(&dz1);

        let mut d_prop = dz1.dot(&self.w0.t());
        let mut g_s = with_adjacency.then(|| Array2::zeros(s.dim()));
        for k in (0..self.power).rev() {
            if let Some(g) = g_s.as_mut() {
                *g += &d_prop.dot(&pass.propagated[k].t());
            }
            d_prop = s.t().dot(&d_prop);
        }
        let da = g_s.map(|g| {
            if self.raw_adjacency {
                g
            } else {
                adj.normalization_backward(&g)
            }
        });
        (
            SgcParams {
                w0: dw0,
                w1: dw1,
                power: self.power,
                raw_adjacency: self.raw_adjacency,
            },
            d_prop,
            da,
        )
    }
}

impl Parameters for SgcParams {
    fn named(&self) -> Vec<(String, &Array2<f64>)> {
        vec![("w0".into(), &self.w0), ("w1".into(), &self.w1)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w0, &mut self.w1]
    }
}
