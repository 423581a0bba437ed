//! Finite-difference oracle for neuron paths: each layer is re-derived from
//! its formula and one row of the previous layer is perturbed.

use ndarray::Array2;
use vfgl_core::models::{Adjacency, LayerTrace, LocalModel};

const EPS: f64 = 1e-6;

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Pre-activation `z^layer[t, k]` recomputed with row `t` of `z^(layer-1)`
/// replaced by `row`.
pub fn layer_output(
    model: &LocalModel,
    norm: &Array2<f64>,
    trace: &LayerTrace,
    layer: usize,
    t: usize,
    k: usize,
    row: &[f64],
) -> f64 {
    let mut prev = trace.z[layer - 1].clone();
    for (j, &v) in row.iter().enumerate() {
        prev[[t, j]] = v;
    }
    let n = norm.nrows();
    match model {
        LocalModel::Gcn(p) => (0..n)
            .map(|u| norm[[t, u]] * (0..prev.ncols()).map(|j| relu(prev[[u, j]]) * p.w1[[j, k]]).sum::<f64>())
            .sum(),
        LocalModel::Sgc(p) => (0..prev.ncols()).map(|j| prev[[t, j]] * p.w1[[j, k]]).sum(),
        LocalModel::Gcnii(p) => {
            let depth = p.layers.len();
            let width = prev.ncols();
            if layer == depth + 1 {
                return (0..width).map(|j| relu(prev[[t, j]]) * p.w_out[[j, k]]).sum();
            }
            let l = layer - 1;
            let (a, b) = (p.alpha[l], p.beta[l]);
            let h0 = |u: usize, j: usize| if l == 0 { relu(prev[[u, j]]) } else { relu(trace.z[0][[u, j]]) };
            let support: Vec<f64> = (0..width)
                .map(|j| (1.0 - a) * (0..n).map(|u| norm[[t, u]] * relu(prev[[u, j]])).sum::<f64>() + a * h0(t, j))
                .collect();
            (0..width)
                .map(|j| {
                    let m = b * p.layers[l][[j, k]] + if j == k { 1.0 - b } else { 0.0 };
                    support[j] * m
                })
                .sum()
        }
    }
}

fn first_max(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn brute_force_path(model: &LocalModel, adj: &Adjacency, trace: &LayerTrace, t: usize) -> Vec<usize> {
    let norm = adj.normalized();
    let last = trace.depth() - 1;
    let out: Vec<f64> = trace.z[last].row(t).iter().map(|v| v.abs()).collect();
    let mut k = first_max(&out);
    let mut path = vec![k];
    for layer in (1..=last).rev() {
        let base: Vec<f64> = trace.z[layer - 1].row(t).to_vec();
        let contrib: Vec<f64> = (0..base.len())
            .map(|j| {
                let mut up = base.clone();
                let mut down = base.clone();
                up[j] += EPS;
                down[j] -= EPS;
                let d = (layer_output(model, norm, trace, layer, t, k, &up)
                    - layer_output(model, norm, trace, layer, t, k, &down))
                    / (2.0 * EPS);
                (d * base[j]).abs()
            })
            .collect();
        k = first_max(&contrib);
        path.push(k);
    }
    path
}
