//! Central finite-difference checks of the analytic gradients.
//!
//! The checks only call forward passes to build the numerical side, so they
//! stay independent of the backward code they validate.

use ndarray::Array2;
use rand::Rng as _;

use super::{
    Adjacency, ForwardPass, LocalModel, MlpParams, ModelKind, Parameters, EMBED_DIM,
};
use crate::rng::{stream, Rng};

pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute rather than relative
/// terms.
pub const REL_FLOOR: f64 = 1e-3;
/// Pre-activations closer than this to zero make an instance ineligible.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst disagreement found by one check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_entry: String,
}

impl GradCheckReport {
    fn new(name: impl Into<String>) -> Self {
        GradCheckReport {
            name: name.into(),
            checked: 0,
            max_rel_err: 0.0,
            worst_entry: String::new(),
        }
    }

    fn record(&mut self, entry: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_err || self.checked == 1 {
            self.max_rel_err = err;
            self.worst_entry = format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", entry());
        }
    }
}

fn central(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

fn activation_pattern(pass: &ForwardPass) -> Vec<bool> {
    pass.trace
        .z
        .iter()
        .zip(&pass.trace.activated)
        .filter(|(_, &a)| a)
        .flat_map(|(z, _)| z.iter().map(|&v| v > 0.0))
        .collect()
}

fn near_kink(pass: &ForwardPass) -> bool {
    pass.trace
        .z
        .iter()
        .zip(&pass.trace.activated)
        .filter(|(_, &a)| a)
        .any(|(z, _)| z.iter().any(|v| v.abs() < KINK_MARGIN))
}

/// Random undirected 0/1 adjacency with edge probability `p`.
pub fn random_adjacency(n: usize, p: f64, rng: &mut Rng) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    a
}

/// A random local-model instance small enough for exhaustive differencing.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: LocalModel,
    pub adjacency: Array2<f64>,
    pub features: Array2<f64>,
    /// Coefficients of the scalar test loss `sum(C * embeddings)`.
    pub loss_weights: Array2<f64>,
}

/// Draws an instance with `nodes` nodes and `dim` features, redrawing until
/// no pre-activation sits within [`KINK_MARGIN`] of a ReLU kink.
pub fn random_instance(kind: ModelKind, nodes: usize, dim: usize, seed: u64) -> Instance {
    let mut rng = stream(seed, 9_000 + kind as u64);
    loop {
        let model = LocalModel::init(kind, dim, &mut rng);
        let adjacency = random_adjacency(nodes, 0.4, &mut rng);
        let features = Array2::from_shape_simple_fn((nodes, dim), || rng.random_range(0.0..1.0));
        let loss_weights =
            Array2::from_shape_simple_fn((nodes, EMBED_DIM), || rng.random_range(-1.0..1.0));
        let pass = model
            .forward(&Adjacency::new(adjacency.clone()), &features)
            .expect("instance shapes are consistent");
        if !near_kink(&pass) {
            return Instance {
                model,
                adjacency,
                features,
                loss_weights,
            };
        }
    }
}

/// Compares analytic gradients w.r.t. parameters, features and adjacency with
/// central differences. Entries whose perturbation flips a ReLU are skipped
/// and not counted.
pub fn check_local_model(inst: &Instance) -> GradCheckReport {
    let mut report = GradCheckReport::new(format!("{}", inst.model.kind()));
    let loss = |model: &LocalModel, adj: &Array2<f64>, x: &Array2<f64>| -> (f64, Vec<bool>) {
        let pass = model.forward(&Adjacency::new(adj.clone()), x).unwrap();
        ((&pass.embeddings * &inst.loss_weights).sum(), activation_pattern(&pass))
    };

    let adj = Adjacency::new(inst.adjacency.clone());
    let pass = inst.model.forward(&adj, &inst.features).unwrap();
    let base_pattern = activation_pattern(&pass);
    let grads = inst
        .model
        .backward(&adj, &inst.features, &pass, &inst.loss_weights, true)
        .unwrap();

    let names: Vec<String> = inst.model.named().into_iter().map(|(n, _)| n).collect();
    let analytic = grads.params.tensors();
    for (t, name) in names.iter().enumerate() {
        let shape = analytic[t].dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let mut stable = true;
                let numeric = central(|h| {
                    let mut m = inst.model.clone();
                    m.tensors_mut()[t][[r, c]] += h;
                    let (l, p) = loss(&m, &inst.adjacency, &inst.features);
                    stable &= p == base_pattern;
                    l
                });
                if stable {
                    report.record(|| format!("{name}[{r},{c}]"), analytic[t][[r, c]], numeric);
                }
            }
        }
    }

    let (n, d) = inst.features.dim();
    for i in 0..n {
        for j in 0..d {
            let mut stable = true;
            let numeric = central(|h| {
                let mut x = inst.features.clone();
                x[[i, j]] += h;
                let (l, p) = loss(&inst.model, &inst.adjacency, &x);
                stable &= p == base_pattern;
                l
            });
            if stable {
                report.record(|| format!("x[{i},{j}]"), grads.features[[i, j]], numeric);
            }
        }
    }

    // A symmetric perturbation of (i, j) and (j, i) measures g_ij + g_ji,
    // i.e. twice the symmetrized gradient.
    let adj_grad = grads.adjacency.as_ref().unwrap();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut stable = true;
            let numeric = central(|h| {
                let mut a = inst.adjacency.clone();
                a[[i, j]] += h;
                a[[j, i]] += h;
                let (l, p) = loss(&inst.model, &a, &inst.features);
                stable &= p == base_pattern;
                l
            });
            if stable {
                report.record(|| format!("adj[{i},{j}]"), 2.0 * adj_grad[[i, j]], numeric);
            }
        }
    }
    report
}

/// Checks an MLP with a cross-entropy loss against random one-hot targets.
pub fn check_mlp(rows: usize, widths: &[usize], seed: u64) -> GradCheckReport {
    let mut rng = stream(seed, 9_100);
    let (mlp, input) = loop {
        let mlp = MlpParams::init(widths, &mut rng);
        let input =
            Array2::from_shape_simple_fn((rows, widths[0]), || rng.random_range(-1.0..1.0));
        let pre_ok = {
            let mut ok = true;
            let mut act = input.clone();
            for (i, (w, b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
                let z = act.dot(w) + b;
                if i + 1 < mlp.weights.len() {
                    ok &= z.iter().all(|v| v.abs() >= KINK_MARGIN);
                }
                act = z.mapv(|v| v.max(0.0));
            }
            ok
        };
        if pre_ok {
            break (mlp, input);
        }
    };
    let classes = *widths.last().unwrap();
    let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    let ce = |m: &MlpParams, x: &Array2<f64>| -> f64 {
        let (_, p, _) = m.forward(x).unwrap();
        targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -p[[i, t]].ln())
            .sum()
    };

    let (_, probs, cache) = mlp.forward(&input).unwrap();
    let mut dlogits = probs;
    for (i, &t) in targets.iter().enumerate() {
        dlogits[[i, t]] -= 1.0;
    }
    let (grads, dinput) = mlp.backward(&cache, &dlogits);

    let mut report = GradCheckReport::new("mlp");
    let names: Vec<String> = mlp.named().into_iter().map(|(n, _)| n).collect();
    let analytic = grads.tensors();
    for (t, name) in names.iter().enumerate() {
        let shape = analytic[t].dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let numeric = central(|h| {
                    let mut m = mlp.clone();
                    m.tensors_mut()[t][[r, c]] += h;
                    ce(&m, &input)
                });
                report.record(|| format!("{name}[{r},{c}]"), analytic[t][[r, c]], numeric);
            }
        }
    }
    for i in 0..rows {
        for j in 0..widths[0] {
            let numeric = central(|h| {
                let mut x = input.clone();
                x[[i, j]] += h;
                ce(&mlp, &x)
            });
            report.record(|| format!("input[{i},{j}]"), dinput[[i, j]], numeric);
        }
    }
    report
}

/// Runs the full suite: every local model and the MLP on `seeds` random
/// instances each.
pub fn run_suite(seeds: u64) -> Vec<GradCheckReport> {
    let mut reports = Vec::new();
    for kind in [ModelKind::Gcn, ModelKind::Sgc, ModelKind::Gcnii] {
        for seed in 0..seeds {
            let inst = random_instance(kind, 8, 5, seed);
            let mut r = check_local_model(&inst);
            r.name = format!("{kind} seed {seed}");
            reports.push(r);
        }
    }
    for seed in 0..seeds {
        let mut r = check_mlp(6, &[12, 10, 4], seed);
        r.name = format!("mlp seed {seed}");
        reports.push(r);
    }
    reports
}
