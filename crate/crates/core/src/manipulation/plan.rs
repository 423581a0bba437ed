//! Candidate/feature selection and the feature rewrites of the data
//! manipulation stage, plus the random-feature baselines.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::path::{trace_paths, NeuronPath};
use crate::error::{Error, Result};
use crate::models::{Adjacency, LocalModel};
use crate::rng::Rng;

/// Number of features to rewrite per node: `floor(gamma * d)`, at least one
/// when `gamma > 0`, never more than `d`.
pub fn feature_budget(gamma: f64, dim: usize) -> usize {
    if gamma <= 0.0 || dim == 0 {
        return 0;
    }
    ((gamma * dim as f64).floor() as usize).clamp(1, dim)
}

/// Indices of the `budget` largest entries of `column`, returned ascending.
/// Ties go to the lower index.
pub fn top_features(column: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then(a.cmp(&b)));
    let mut chosen = order[..budget.min(column.len())].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Modal path; ties go to the lexicographically smallest path.
pub fn modal_path<'a>(paths: impl IntoIterator<Item = &'a NeuronPath>) -> Option<NeuronPath> {
    let mut counts: BTreeMap<&NeuronPath, usize> = BTreeMap::new();
    for p in paths {
        *counts.entry(p).or_default() += 1;
    }
    let mut best: Option<(&NeuronPath, usize)> = None;
    for (p, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((p, c));
        }
    }
    best.map(|(p, _)| p.clone())
}

/// One target path with the nodes and columns it governs. The default plan
/// has a single group covering every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanGroup {
    /// `None` for the global group.
    pub class: Option<usize>,
    pub target_path: NeuronPath,
    pub candidates: Vec<usize>,
    pub features: Vec<usize>,
}

/// How many train nodes of each class follow a given path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCount {
    pub path: NeuronPath,
    pub per_class: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManipulationPlan {
    pub groups: Vec<PlanGroup>,
    pub budget: usize,
    pub path_counts: Vec<PathCount>,
    pub manipulated: Array2<f64>,
}

#[derive(Serialize)]
struct PlanJson<'a> {
    target_path: &'a NeuronPath,
    candidates: Vec<usize>,
    features: &'a [usize],
    gamma: f64,
    tau: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<&'a [PlanGroup]>,
}

impl ManipulationPlan {
    pub fn target_path(&self) -> &NeuronPath {
        &self.groups[0].target_path
    }

    pub fn target_features(&self) -> &[usize] {
        &self.groups[0].features
    }

    /// Every candidate node, ascending.
    pub fn candidates(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.groups.iter().flat_map(|g| g.candidates.iter().copied()).collect();
        all.sort_unstable();
        all
    }

    pub fn is_noop(&self) -> bool {
        self.groups.iter().all(|g| g.candidates.is_empty() || g.features.is_empty())
    }

    /// `{"target_path":[...],"candidates":[...],"features":[...],"gamma":x,"tau":n}`;
    /// per-class plans add a `groups` array.
    pub fn to_json(&self, gamma: f64, tau: usize) -> String {
        let per_class = self.groups.len() > 1 || self.groups[0].class.is_some();
        serde_json::to_string(&PlanJson {
            target_path: self.target_path(),
            candidates: self.candidates(),
            features: self.target_features(),
            gamma,
            tau,
            groups: per_class.then_some(&self.groups[..]),
        })
        .expect("plan serializes")
    }
}

/// Sets `x[c, i] = max_j x[c, j]` for every candidate `c` and column `i`.
pub fn rewrite_to_row_max(x: &Array2<f64>, candidates: &[usize], features: &[usize]) -> Array2<f64> {
    let mut out = x.clone();
    for &c in candidates {
        let row_max = x.row(c).fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        for &i in features {
            out[[c, i]] = row_max;
        }
    }
    out
}

/// Builds the manipulation plan from the model's current state.
///
/// Paths are traced for every train node. In the default mode the globally
/// most frequent path becomes the target path and every train node on another
/// path becomes a candidate; with `per_class` each class gets its own target
/// path, candidates and feature set. The target features are the top-B
/// entries of the first-layer weight column selected by the path's last
/// neuron, and each candidate's target features are raised to that node's own
/// feature maximum.
pub fn build_manipulation_plan(
    model: &LocalModel,
    adj: &Adjacency,
    x_local: &Array2<f64>,
    train_by_class: &[Vec<usize>],
    gamma: f64,
    per_class: bool,
) -> Result<ManipulationPlan> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::param(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let budget = feature_budget(gamma, x_local.ncols());
    let weights = model.first_layer_weights();
    let select = |path: &NeuronPath| -> Vec<usize> {
        let col: Vec<f64> = weights.column(path.input_neuron()).to_vec();
        top_features(&col, budget)
    };

    let mut per_node: Vec<(usize, usize, NeuronPath)> = Vec::new();
    let all_nodes: Vec<(usize, usize)> = train_by_class
        .iter()
        .enumerate()
        .flat_map(|(c, nodes)| nodes.iter().map(move |&n| (c, n)))
        .collect();
    let node_ids: Vec<usize> = all_nodes.iter().map(|&(_, n)| n).collect();
    let paths = trace_paths(model, adj, x_local, &node_ids)?;
    for ((class, node), path) in all_nodes.into_iter().zip(paths) {
        per_node.push((class, node, path));
    }

    let mut counts: BTreeMap<NeuronPath, Vec<usize>> = BTreeMap::new();
    for (class, _, path) in &per_node {
        counts.entry(path.clone()).or_insert_with(|| vec![0; train_by_class.len()])[*class] += 1;
    }
    let path_counts = counts
        .into_iter()
        .map(|(path, per_class)| PathCount { path, per_class })
        .collect();

    let groups = if per_class {
        (0..train_by_class.len())
            .filter_map(|class| {
                let members: Vec<&(usize, usize, NeuronPath)> =
                    per_node.iter().filter(|(c, _, _)| *c == class).collect();
                let target = modal_path(members.iter().map(|(_, _, p)| p))?;
                let mut candidates: Vec<usize> = members
                    .iter()
                    .filter(|(_, _, p)| *p != target)
                    .map(|(_, n, _)| *n)
                    .collect();
                candidates.sort_unstable();
                Some(PlanGroup {
                    class: Some(class),
                    features: select(&target),
                    target_path: target,
                    candidates,
                })
            })
            .collect::<Vec<_>>()
    } else {
        let target = modal_path(per_node.iter().map(|(_, _, p)| p))
            .ok_or_else(|| Error::param("no train nodes to trace"))?;
        let mut candidates: Vec<usize> = per_node
            .iter()
            .filter(|(_, _, p)| *p != target)
            .map(|(_, n, _)| *n)
            .collect();
        candidates.sort_unstable();
        vec![PlanGroup {
            class: None,
            features: select(&target),
            target_path: target,
            candidates,
        }]
    };
    if groups.is_empty() {
        return Err(Error::param("no train nodes to trace"));
    }

    let mut manipulated = x_local.clone();
    for g in &groups {
        manipulated = rewrite_to_row_max(&manipulated, &g.candidates, &g.features);
    }
    Ok(ManipulationPlan {
        groups,
        budget,
        path_counts,
        manipulated,
    })
}

fn global_max(x: &Array2<f64>) -> f64 {
    x.fold(f64::NEG_INFINITY, |m, &v| m.max(v))
}

/// Random-feature baseline: each candidate gets its own random `budget`
/// columns, set to the largest value in the original matrix.
pub fn rfa_manipulate(x_local: &Array2<f64>, candidates: &[usize], budget: usize, rng: &mut Rng) -> Array2<f64> {
    let mut out = x_local.clone();
    if budget == 0 {
        return out;
    }
    let top = global_max(x_local);
    let d = x_local.ncols();
    for &c in candidates {
        for i in sample(rng, d, budget.min(d)) {
            out[[c, i]] = top;
        }
    }
    out
}

/// Specific-feature baseline: one random set of `budget` columns shared by
/// every candidate, set to the largest value in the original matrix.
pub fn sfa_manipulate(x_local: &Array2<f64>, candidates: &[usize], budget: usize, rng: &mut Rng) -> Array2<f64> {
    let mut out = x_local.clone();
    if budget == 0 {
        return out;
    }
    let top = global_max(x_local);
    let cols = sample(rng, x_local.ncols(), budget.min(x_local.ncols())).into_vec();
    for &c in candidates {
        for &i in &cols {
            out[[c, i]] = top;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn budget_rounding() {
        assert_eq!(feature_budget(0.0, 16), 0);
        assert_eq!(feature_budget(0.05, 16), 1);
        assert_eq!(feature_budget(0.2, 10), 2);
        assert_eq!(feature_budget(1.0, 7), 7);
    }

    #[test]
    fn top_two_of_weight_column() {
        let col = [0.1, 0.9, 0.3, 0.8, 0.2, 0.0, 0.4, 0.7, 0.5, 0.6];
        // brute force: the pair with the largest sum is the top-2 set
        let mut best = (0, 1);
        for a in 0..10 {
            for b in (a + 1)..10 {
                if col[a] + col[b] > col[best.0] + col[best.1] {
                    best = (a, b);
                }
            }
        }
        let b = feature_budget(0.2, 10);
        assert_eq!(top_features(&col, b), vec![best.0, best.1]);
        assert_eq!(top_features(&col, b), vec![1, 3]);
    }

    #[test]
    fn row_max_rewrite_examples() {
        let x = array![[0.0, 0.2, 0.5]];
        assert_eq!(rewrite_to_row_max(&x, &[0], &[0]), array![[0.5, 0.2, 0.5]]);
        let b = array![[0.0, 1.0, 0.0, 0.0]];
        assert_eq!(rewrite_to_row_max(&b, &[0], &[2, 3]), array![[0.0, 1.0, 1.0, 1.0]]);
    }

    #[test]
    fn modal_ties_pick_smallest() {
        let a = NeuronPath(vec![1, 0]);
        let b = NeuronPath(vec![0, 5]);
        assert_eq!(modal_path([&a, &b, &a, &b]), Some(b.clone()));
        assert_eq!(modal_path([&a, &b, &a]), Some(a));
        assert_eq!(modal_path(std::iter::empty()), None);
    }

    #[test]
    fn shared_path_means_no_candidates() {
        // width-one output forces a single path for every node
        let model = LocalModel::Gcn(crate::models::GcnParams {
            w0: array![[1.0], [0.5]],
            w1: array![[2.0]],
        });
        let adj = Adjacency::new(Array2::zeros((4, 4)));
        let x = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.2, 0.9]];
        let plan = build_manipulation_plan(&model, &adj, &x, &[vec![0, 1], vec![2, 3]], 0.5, false).unwrap();
        assert!(plan.candidates().is_empty());
        assert_eq!(plan.manipulated, x);
    }

    #[test]
    fn changes_confined_to_candidates_and_features() {
        let mut rng = stream(2, 0);
        let n = 30;
        let model = LocalModel::init(ModelKind::Gcn, 12, &mut rng);
        let adj = Adjacency::new(crate::models::gradcheck::random_adjacency(n, 0.2, &mut rng));
        let x = Array2::from_shape_fn((n, 12), |(i, j)| ((i * 13 + j * 7) % 11) as f64 / 10.0);
        let by_class = vec![(0..10).collect(), (10..20).collect()];
        for per_class in [false, true] {
            let plan = build_manipulation_plan(&model, &adj, &x, &by_class, 0.25, per_class).unwrap();
            assert_eq!(plan.budget, 3);
            for i in 0..n {
                for j in 0..12 {
                    let allowed = plan
                        .groups
                        .iter()
                        .any(|g| g.candidates.contains(&i) && g.features.contains(&j));
                    if !allowed {
                        assert_eq!(plan.manipulated[[i, j]], x[[i, j]]);
                    }
                }
            }
            assert!(plan.candidates().iter().all(|c| *c < 20));
        }
    }

    #[test]
    fn plan_json_schema() {
        let plan = ManipulationPlan {
            groups: vec![PlanGroup {
                class: None,
                target_path: NeuronPath(vec![3, 7]),
                candidates: vec![1, 4],
                features: vec![2],
            }],
            budget: 1,
            path_counts: vec![],
            manipulated: Array2::zeros((1, 1)),
        };
        assert_eq!(
            plan.to_json(0.05, 15),
            r#"{"target_path":[3,7],"candidates":[1,4],"features":[2],"gamma":0.05,"tau":15}"#
        );
    }

    #[test]
    fn baselines_accounting() {
        let x = Array2::from_shape_fn((10, 8), |(i, j)| ((i + j) % 3) as f64 * 0.25);
        let cands = [0, 3, 5, 9];
        assert_eq!(rfa_manipulate(&x, &cands, 0, &mut stream(1, 1)), x);
        assert_eq!(sfa_manipulate(&x, &cands, 0, &mut stream(1, 1)), x);

        let zero = Array2::zeros((10, 8));
        let r = rfa_manipulate(&zero, &cands, 3, &mut stream(1, 1));
        assert_eq!(r, rfa_manipulate(&zero, &cands, 3, &mut stream(1, 1)));
        // all-zero input has max 0, so use a marker matrix to count writes
        let marker = Array2::from_elem((10, 8), 0.0) + {
            let mut m = Array2::zeros((10, 8));
            m[[9, 7]] = 1.0;
            m
        };
        let r = rfa_manipulate(&marker, &cands, 3, &mut stream(4, 1));
        let changed = r.iter().zip(marker.iter()).filter(|(a, b)| a != b).count();
        // node 9 may already hold the max at column 7
        assert!(changed == 12 || changed == 11, "{changed}");

        let s = sfa_manipulate(&marker, &cands, 3, &mut stream(4, 1));
        let cols = |row: usize| -> Vec<usize> { (0..8).filter(|&j| s[[row, j]] == 1.0 && marker[[row, j]] == 0.0).collect() };
        assert_eq!(cols(0), cols(3));
        assert_eq!(cols(0), cols(5));
        let full = sfa_manipulate(&marker, &cands, 8, &mut stream(4, 1));
        for &c in &cands {
            assert!(full.row(c).iter().all(|&v| v == 1.0));
        }
    }
}
