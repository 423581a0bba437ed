//! The attacker's shadow of the server: its own local GNN cascaded with a
//! fresh MLP head, fitted to the probabilities returned by one query.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    argmax, cross_entropy, Adam, Adjacency, ForwardPass, LocalModel, MlpCache, MlpParams, ModelKind, EMBED_DIM,
};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadowLoss {
    /// Mean squared error against the returned probabilities.
    #[default]
    Mse,
    /// Cross-entropy against the attacker's own training labels.
    Ce,
}

impl fmt::Display for ShadowLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShadowLoss::Mse => "mse",
            ShadowLoss::Ce => "ce",
        })
    }
}

impl FromStr for ShadowLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(ShadowLoss::Mse),
            "ce" => Ok(ShadowLoss::Ce),
            _ => Err(Error::param(format!("unknown shadow loss {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowConfig {
    /// Architecture of the GNN part; `None` reuses the local model's.
    pub kind: Option<ModelKind>,
    pub loss: ShadowLoss,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            kind: None,
            loss: ShadowLoss::Mse,
            epochs: 200,
            lr: 0.01,
            hidden: 64,
            seed: 0,
        }
    }
}

/// Full forward state of the cascade.
#[derive(Debug, Clone)]
pub struct ShadowPass {
    pub gnn: ForwardPass,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    cache: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowModel {
    pub gnn: LocalModel,
    pub head: MlpParams,
    pub loss: ShadowLoss,
    /// Training loss before each update, then once after the last.
    pub loss_curve: Vec<f64>,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub initial_agreement: f64,
    pub final_agreement: f64,
}

/// Mean over all `R·|F|` entries of the squared difference.
pub fn mse_loss(shadow: &Array2<f64>, target: &Array2<f64>) -> f64 {
    if shadow.is_empty() {
        return 0.0;
    }
    (shadow - target).mapv(|d| d * d).mean().unwrap()
}

/// Fraction of rows whose argmax agrees.
pub fn argmax_agreement(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let same = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .filter(|(x, y)| argmax(x) == argmax(y))
        .count();
    same as f64 / a.nrows() as f64
}

/// Backpropagates `dL/d(probs)` through a row-wise softmax.
pub fn softmax_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let inner = (probs * dprobs).sum_axis(Axis(1)).insert_axis(Axis(1));
    probs * &(dprobs - &inner)
}

impl ShadowModel {
    pub fn forward(&self, adj: &Adjacency, x: &Array2<f64>) -> Result<ShadowPass> {
        let gnn = self.gnn.forward(adj, x)?;
        let (logits, probs, cache) = self.head.forward(&gnn.embeddings)?;
        Ok(ShadowPass {
            gnn,
            logits,
            probs,
            cache,
        })
    }

    pub fn probabilities(&self, adj: &Adjacency, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(adj, x)?.probs)
    }

    /// Pre-head node embeddings.
    pub fn embeddings(&self, adj: &Adjacency, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.gnn.forward(adj, x)?.embeddings)
    }

    /// Cross-entropy at `node` against `label` and its symmetrized gradient
    /// with respect to every raw adjacency entry.
    pub fn target_loss_gradient(
        &self,
        adj: &Adjacency,
        x: &Array2<f64>,
        node: usize,
        label: usize,
    ) -> Result<(f64, Array2<f64>)> {
        if node >= adj.len() {
            return Err(Error::OutOfRange(format!("node {node}")));
        }
        let pass = self.forward(adj, x)?;
        let mut labels = vec![0; adj.len()];
        labels[node] = label;
        let (loss, dlogits) = cross_entropy(&pass.probs, &[node], &labels);
        let (_, demb) = self.head.backward(&pass.cache, &dlogits);
        let grads = self.gnn.backward(adj, x, &pass.gnn, &demb, true)?;
        Ok((loss, grads.adjacency.expect("adjacency gradient requested")))
    }
}

/// Fits a shadow model on the query rows.
///
/// `rows` are the node ids behind each row of `target`; `labels` is indexed by
/// node id and only read for the cross-entropy variant. The GNN part starts
/// from `local` when the architectures match and is trained jointly with a
/// fresh `EMBED_DIM -> hidden -> |F|` head.
pub fn build_shadow(
    local: &LocalModel,
    adj: &Adjacency,
    x: &Array2<f64>,
    rows: &[usize],
    target: &Array2<f64>,
    labels: &[usize],
    config: &ShadowConfig,
) -> Result<ShadowModel> {
    if rows.len() != target.nrows() {
        return Err(Error::shape(format!(
            "{} query rows for {} training nodes",
            target.nrows(),
            rows.len()
        )));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= adj.len()) {
        return Err(Error::OutOfRange(format!("node {bad}")));
    }
    let classes = target.ncols();
    let mut rng = stream(config.seed, tag::SHADOW_INIT);
    let gnn = match config.kind {
        Some(kind) if kind != local.kind() => LocalModel::init(kind, x.ncols(), &mut rng),
        _ => local.clone(),
    };
    let head = MlpParams::init(&[EMBED_DIM, config.hidden, classes], &mut rng);
    let mut shadow = ShadowModel {
        gnn,
        head,
        loss: config.loss,
        loss_curve: Vec::with_capacity(config.epochs + 1),
        initial_mse: 0.0,
        final_mse: 0.0,
        initial_agreement: 0.0,
        final_agreement: 0.0,
    };
    let mut gnn_opt = Adam::new(config.lr);
    let mut head_opt = Adam::new(config.lr);
    let scale = 2.0 / (rows.len() * classes).max(1) as f64;

    for epoch in 0..=config.epochs {
        let pass = shadow.forward(adj, x)?;
        let fitted = pass.probs.select(Axis(0), rows);
        let mse = mse_loss(&fitted, target);
        if epoch == 0 {
            shadow.initial_mse = mse;
            shadow.initial_agreement = argmax_agreement(&fitted, target);
        }
        let (loss, dlogits) = match config.loss {
            ShadowLoss::Mse => {
                let mut dprobs = Array2::zeros(pass.probs.dim());
                for (i, &r) in rows.iter().enumerate() {
                    let diff = &fitted.row(i) - &target.row(i);
                    dprobs.row_mut(r).assign(&(diff * scale));
                }
                (mse, softmax_backward(&pass.probs, &dprobs))
            }
            ShadowLoss::Ce => cross_entropy(&pass.probs, rows, labels),
        };
        shadow.loss_curve.push(loss);
        if epoch == config.epochs {
            shadow.final_mse = mse;
            shadow.final_agreement = argmax_agreement(&fitted, target);
            break;
        }
        let (head_grads, demb) = shadow.head.backward(&pass.cache, &dlogits);
        let gnn_grads = shadow.gnn.backward(adj, x, &pass.gnn, &demb, false)?;
        head_opt.step(&mut shadow.head, &head_grads);
        gnn_opt.step(&mut shadow.gnn, &gnn_grads.params);
    }
    Ok(shadow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gradcheck::random_adjacency;
    use ndarray::array;

    #[test]
    fn mse_examples() {
        let p = array![[0.2, 0.8], [0.6, 0.4]];
        assert_eq!(mse_loss(&p, &p), 0.0);
        assert_eq!(mse_loss(&array![[0.5, 0.5]], &array![[1.0, 0.0]]), 0.25);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let logits = array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]];
        let w = array![[0.5, -1.0, 2.0], [1.5, 0.3, -0.7]];
        let f = |l: &Array2<f64>| (crate::models::softmax_rows(l) * &w).sum();
        let analytic = softmax_backward(&crate::models::softmax_rows(&logits), &w);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut up = logits.clone();
                up[[i, j]] += h;
                let mut dn = logits.clone();
                dn[[i, j]] -= h;
                let num = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((num - analytic[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn row_count_mismatch_is_rejected() {
        let mut rng = stream(1, 1);
        let local = LocalModel::init(ModelKind::Gcn, 3, &mut rng);
        let adj = Adjacency::new(random_adjacency(5, 0.4, &mut rng));
        let x = Array2::ones((5, 3));
        let p = Array2::from_elem((2, 2), 0.5);
        let cfg = ShadowConfig::default();
        assert!(build_shadow(&local, &adj, &x, &[0, 1, 2], &p, &[0; 5], &cfg).is_err());
    }

    #[test]
    fn fits_fixed_targets() {
        let mut rng = stream(3, 1);
        let n = 12;
        let local = LocalModel::init(ModelKind::Sgc, 4, &mut rng);
        let adj = Adjacency::new(random_adjacency(n, 0.3, &mut rng));
        let x = Array2::from_shape_fn((n, 4), |(i, j)| ((i * 3 + j) % 5) as f64 / 4.0);
        let rows: Vec<usize> = (0..8).collect();
        let target = Array2::from_shape_fn((8, 2), |(i, j)| if (i % 2 == 0) == (j == 0) { 0.9 } else { 0.1 });
        let cfg = ShadowConfig {
            kind: Some(ModelKind::Gcn),
            ..ShadowConfig::default()
        };
        let s = build_shadow(&local, &adj, &x, &rows, &target, &[0; 12], &cfg).unwrap();
        assert_eq!(s.gnn.kind(), ModelKind::Gcn);
        assert_eq!(s.loss_curve.len(), cfg.epochs + 1);
        assert!(s.final_mse < 0.5 * s.initial_mse);
        assert!(s.final_agreement >= s.initial_agreement);
        assert_eq!(s.probabilities(&adj, &x).unwrap().ncols(), 2);
    }
}
