//! Neuron paths against a finite-difference oracle that re-derives each
//! layer from its formula, perturbing one row of the previous layer.

#[path = "support/path_oracle.rs"]
mod path_oracle;

use ndarray::{array, Array2};
use path_oracle::{brute_force_path, layer_output};
use vfgl_core::manipulation::{trace_neuron_path, NeuronPath};
use vfgl_core::models::gradcheck::random_instance;
use vfgl_core::models::{Adjacency, GcnParams, LocalModel, ModelKind};

#[test]
fn oracle_reproduces_the_traced_layers() {
    // Sanity check of the oracle itself: unperturbed rows give back the trace.
    for (i, kind) in [ModelKind::Gcn, ModelKind::Sgc, ModelKind::Gcnii].into_iter().enumerate() {
        let inst = random_instance(kind, 5, 4, 40 + i as u64);
        let adj = Adjacency::new(inst.adjacency.clone());
        let pass = inst.model.forward(&adj, &inst.features).unwrap();
        let norm = adj.normalized();
        for layer in 1..pass.trace.depth() {
            let row: Vec<f64> = pass.trace.z[layer - 1].row(2).to_vec();
            for k in 0..pass.trace.width(layer) {
                let v = layer_output(&inst.model, norm, &pass.trace, layer, 2, k, &row);
                assert!((v - pass.trace.z[layer][[2, k]]).abs() < 1e-10, "{kind} layer {layer}");
            }
        }
    }
}

#[test]
fn hand_instance_traces_zero_zero() {
    let mut w1 = Array2::zeros((2, 16));
    w1[[0, 0]] = 2.0;
    w1[[0, 1]] = 1.0;
    w1[[1, 1]] = 1.0;
    let model = LocalModel::Gcn(GcnParams {
        w0: array![[1.0, 0.0], [0.0, -3.0]],
        w1,
    });
    let adj = Adjacency::new(Array2::zeros((1, 1)));
    let pass = model.forward(&adj, &array![[1.0, 2.0]]).unwrap();
    let path = trace_neuron_path(&model, &adj, &pass.trace, 0).unwrap();
    assert_eq!(path, NeuronPath(vec![0, 0]));
    assert_eq!(brute_force_path(&model, &adj, &pass.trace, 0), vec![0, 0]);
}

#[test]
fn random_tiny_instances_match_finite_differences() {
    let kinds = [ModelKind::Gcn, ModelKind::Sgc, ModelKind::Gcnii];
    for seed in 0..20u64 {
        let kind = kinds[seed as usize % 3];
        let nodes = 4 + seed as usize % 4;
        let inst = random_instance(kind, nodes, 5, 100 + seed);
        let adj = Adjacency::new(inst.adjacency.clone());
        let pass = inst.model.forward(&adj, &inst.features).unwrap();
        for t in 0..nodes {
            let traced = trace_neuron_path(&inst.model, &adj, &pass.trace, t).unwrap();
            let oracle = brute_force_path(&inst.model, &adj, &pass.trace, t);
            assert_eq!(traced.0, oracle, "{kind} instance {seed}, node {t}");
        }
    }
}
