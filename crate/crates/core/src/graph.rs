//! Graphs, dataset files, the synthetic block-model benchmark and the vertical
//! feature split.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Fraction of each class placed in the train mask when masks are generated.
pub const TRAIN_FRACTION: f64 = 0.6;

/// Undirected, unweighted graph with node features, labels and a
/// train/test partition.
///
/// Edges are kept once per unordered pair as `(low, high)` in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    num_classes: usize,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
    labels: Vec<usize>,
    train_mask: Vec<bool>,
    test_mask: Vec<bool>,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        train_mask: Vec<bool>,
        test_mask: Vec<bool>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on node {u}")));
            }
            if !set.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({u}, {v})")));
            }
        }
        if features.nrows() != num_nodes {
            return Err(Error::shape(format!(
                "feature matrix has {} rows for {num_nodes} nodes",
                features.nrows()
            )));
        }
        if let Some(bad) = features.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidGraph(format!(
                "feature entries must be finite and non-negative, found {bad}"
            )));
        }
        if labels.len() != num_nodes || train_mask.len() != num_nodes || test_mask.len() != num_nodes
        {
            return Err(Error::shape("labels and masks must have one entry per node"));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {l} outside 0..{num_classes}"
            )));
        }
        if let Some(i) = (0..num_nodes).find(|&i| train_mask[i] && test_mask[i]) {
            return Err(Error::InvalidGraph(format!(
                "node {i} is in both train and test masks"
            )));
        }
        Ok(Graph {
            num_nodes,
            num_classes,
            edges: set.into_iter().collect(),
            features,
            labels,
            train_mask,
            test_mask,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    pub fn test_mask(&self) -> &[bool] {
        &self.test_mask
    }

    pub fn train_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes).filter(|&i| self.train_mask[i]).collect()
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes).filter(|&i| self.test_mask[i]).collect()
    }

    /// Train nodes grouped by label, index = class.
    pub fn train_nodes_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for i in self.train_nodes() {
            by_class[self.labels[i]].push(i);
        }
        by_class
    }

    /// Dense symmetric 0/1 adjacency without self-loops.
    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.num_nodes, self.num_nodes));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }

    /// Replaces the masks with a seeded stratified train/test split.
    pub fn with_stratified_masks(mut self, seed: u64) -> Self {
        let (train, test) = stratified_masks(&self.labels, self.num_classes, seed);
        self.train_mask = train;
        self.test_mask = test;
        self
    }
}

/// Per class, shuffles the members and puts the first `round(0.6 n_c)` in train
/// and the rest in test.
pub fn stratified_masks(labels: &[usize], num_classes: usize, seed: u64) -> (Vec<bool>, Vec<bool>) {
    let mut rng = rng::stream(seed, tag::SPLIT_MASKS);
    let n = labels.len();
    let mut train = vec![false; n];
    let mut test = vec![false; n];
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n_train = (members.len() as f64 * TRAIN_FRACTION).round() as usize;
        for (k, &i) in members.iter().enumerate() {
            if k < n_train {
                train[i] = true;
            } else {
                test[i] = true;
            }
        }
    }
    (train, test)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads `nodes.tsv` and `edges.tsv`.
///
/// Node lines are `<id>\t<label>\t<f0,f1,...>[\t train|test|none]`; edge lines
/// are `<u>\t<v>`. Blank lines are skipped. When no node line carries a mask
/// column, a stratified split with seed 0 is generated.
pub fn load_graph(nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<Graph> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();

    struct NodeRow {
        label: usize,
        features: Vec<f64>,
        mask: Option<(bool, bool)>,
    }

    let text = fs::read_to_string(nodes_path)?;
    let mut rows: Vec<Option<NodeRow>> = Vec::new();
    let mut dim = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(parse_err(nodes_path, lineno, "expected 3 or 4 tab-separated columns"));
        }
        let id: usize = cols[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(nodes_path, lineno, format!("bad node id {:?}", cols[0])))?;
        let label: usize = cols[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(nodes_path, lineno, format!("bad label {:?}", cols[1])))?;
        let features = cols[2]
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(nodes_path, lineno, format!("bad feature value: {e}")))?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(parse_err(
                    nodes_path,
                    lineno,
                    format!("expected {d} features, found {}", features.len()),
                ))
            }
            _ => {}
        }
        let mask = match cols.get(3).map(|s| s.trim()) {
            None => None,
            Some("train") => Some((true, false)),
            Some("test") => Some((false, true)),
            Some("none") => Some((false, false)),
            Some(other) => {
                return Err(parse_err(nodes_path, lineno, format!("bad mask {other:?}")))
            }
        };
        if id >= rows.len() {
            rows.resize_with(id + 1, || None);
        }
        if rows[id].is_some() {
            return Err(parse_err(nodes_path, lineno, format!("duplicate node id {id}")));
        }
        rows[id] = Some(NodeRow {
            label,
            features,
            mask,
        });
    }
    if let Some(missing) = rows.iter().position(Option::is_none) {
        return Err(Error::InvalidGraph(format!(
            "node ids are not consecutive: {missing} is missing"
        )));
    }
    let rows: Vec<NodeRow> = rows.into_iter().flatten().collect();
    let n = rows.len();
    let dim = dim.unwrap_or(0);

    let has_masks = rows.iter().any(|r| r.mask.is_some());
    if has_masks && rows.iter().any(|r| r.mask.is_none()) {
        return Err(Error::InvalidGraph(
            "mask column must be present on every node line or on none".into(),
        ));
    }

    let mut features = Array2::zeros((n, dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.features.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);

    let text = fs::read_to_string(edges_path)?;
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(parse_err(edges_path, lineno, "expected 2 tab-separated columns"));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(edges_path, lineno, format!("bad node id {s:?}")))
        };
        let (u, v) = (parse(cols[0])?, parse(cols[1])?);
        if u == v {
            return Err(parse_err(edges_path, lineno, format!("self-loop on node {u}")));
        }
        if u >= n || v >= n {
            return Err(parse_err(
                edges_path,
                lineno,
                format!("edge ({u}, {v}) references a node outside 0..{n}"),
            ));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(parse_err(edges_path, lineno, format!("duplicate edge ({u}, {v})")));
        }
        edges.push((u, v));
    }

    let (train, test) = if has_masks {
        rows.iter().map(|r| r.mask.unwrap()).unzip()
    } else {
        stratified_masks(&labels, num_classes, 0)
    };
    Graph::new(n, edges, features, labels, num_classes, train, test)
}

/// Writes a graph in the `nodes.tsv` / `edges.tsv` format, masks included.
pub fn save_graph(graph: &Graph, nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<()> {
    let mut nodes = String::new();
    for i in 0..graph.num_nodes {
        let feats: Vec<String> = graph.features.row(i).iter().map(|v| v.to_string()).collect();
        let mask = if graph.train_mask[i] {
            "train"
        } else if graph.test_mask[i] {
            "test"
        } else {
            "none"
        };
        nodes.push_str(&format!("{i}\t{}\t{}\t{mask}\n", graph.labels[i], feats.join(",")));
    }
    fs::write(nodes_path, nodes)?;
    let edges: String = graph.edges.iter().map(|(u, v)| format!("{u}\t{v}\n")).collect();
    fs::write(edges_path, edges)?;
    Ok(())
}

/// Parameters of the synthetic stochastic-block-model benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbmSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub signal: f64,
}

impl SbmSpec {
    /// The 300-node, 3-class benchmark used throughout the tests.
    pub const BENCHMARK: SbmSpec = SbmSpec {
        num_nodes: 300,
        num_classes: 3,
        p_in: 0.05,
        p_out: 0.005,
        feat_dim: 32,
        signal: 1.0,
    };
}

/// Stochastic block model with class-conditional features.
///
/// Nodes are split into `num_classes` contiguous blocks of near-equal size
/// (earlier blocks take the remainder). Pairs inside a block connect with
/// `p_in`, across blocks with `p_out`. Column `j` is associated with class
/// `j % num_classes`; a node's entry there is `max(0, signal + e)`, elsewhere
/// `max(0, e)`, with `e ~ N(0, 1)`. Masks are a 60/40 stratified split.
pub fn synth_sbm(spec: SbmSpec, seed: u64) -> Result<Graph> {
    let SbmSpec {
        num_nodes,
        num_classes,
        p_in,
        p_out,
        feat_dim,
        signal,
    } = spec;
    if num_classes < 2 {
        return Err(Error::param("num_classes must be at least 2"));
    }
    if num_nodes < num_classes {
        return Err(Error::param("need at least one node per class"));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(Error::param("edge probabilities must lie in [0, 1]"));
    }
    if p_in <= p_out {
        return Err(Error::param(format!("p_in ({p_in}) must exceed p_out ({p_out})")));
    }
    if !(signal >= 0.0) || !signal.is_finite() {
        return Err(Error::param("signal must be finite and non-negative"));
    }
    if feat_dim == 0 {
        return Err(Error::param("feat_dim must be positive"));
    }

    let base = num_nodes / num_classes;
    let extra = num_nodes % num_classes;
    let mut labels = Vec::with_capacity(num_nodes);
    for c in 0..num_classes {
        let size = base + usize::from(c < extra);
        labels.extend(std::iter::repeat_n(c, size));
    }

    let mut edge_rng = rng::stream(seed, tag::SBM_EDGES);
    let mut edges = Vec::new();
    for u in 0..num_nodes {
        for v in (u + 1)..num_nodes {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut feat_rng = rng::stream(seed, tag::SBM_FEATURES);
    let mut features = Array2::zeros((num_nodes, feat_dim));
    for i in 0..num_nodes {
        for j in 0..feat_dim {
            let noise: f64 = StandardNormal.sample(&mut feat_rng);
            let mean = if j % num_classes == labels[i] { signal } else { 0.0 };
            features[[i, j]] = (mean + noise).max(0.0);
        }
    }

    let (train, test) = stratified_masks(&labels, num_classes, seed);
    Graph::new(num_nodes, edges, features, labels, num_classes, train, test)
}

/// Disjoint column sets, one per client, covering every feature column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSplit {
    assignments: Vec<Vec<usize>>,
}

impl FeatureSplit {
    pub fn from_assignments(assignments: Vec<Vec<usize>>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for cols in &assignments {
            if cols.is_empty() {
                return Err(Error::param("every client needs at least one column"));
            }
            for &c in cols {
                if c >= dim {
                    return Err(Error::param(format!("column {c} outside 0..{dim}")));
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::param(format!("column {c} assigned twice")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::param("feature split does not cover every column"));
        }
        Ok(FeatureSplit { assignments })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn columns(&self, client: usize) -> &[usize] {
        &self.assignments[client]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// The client's private feature matrix, columns in assignment order.
    pub fn slice(&self, features: &Array2<f64>, client: usize) -> Array2<f64> {
        features.select(Axis(1), &self.assignments[client])
    }
}

/// Random partition of the feature columns among `num_clients` clients.
///
/// Sizes differ by at most one; the first `d % K` clients take the extra
/// column. Each client's columns are listed in ascending order.
pub fn split_features(graph: &Graph, num_clients: usize, seed: u64) -> Result<FeatureSplit> {
    let d = graph.feature_dim();
    if num_clients == 0 {
        return Err(Error::param("need at least one client"));
    }
    if num_clients > d {
        return Err(Error::param(format!(
            "cannot split {d} feature columns among {num_clients} clients"
        )));
    }
    let mut cols: Vec<usize> = (0..d).collect();
    cols.shuffle(&mut rng::stream(seed, tag::FEATURE_SPLIT));
    let base = d / num_clients;
    let extra = d % num_clients;
    let mut assignments = Vec::with_capacity(num_clients);
    let mut start = 0;
    for k in 0..num_clients {
        let size = base + usize::from(k < extra);
        let mut chunk = cols[start..start + size].to_vec();
        chunk.sort_unstable();
        assignments.push(chunk);
        start += size;
    }
    FeatureSplit::from_assignments(assignments, d)
}

/// Symmetric normalization `D^-1/2 (A + I) D^-1/2` of a dense adjacency.
pub fn normalize_adjacency(adj: &Array2<f64>) -> Array2<f64> {
    let n = adj.nrows();
    let inv_sqrt: Vec<f64> = adj
        .rows()
        .into_iter()
        .map(|row| 1.0 / (1.0 + row.sum()).sqrt())
        .collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let a = adj[[i, j]] + if i == j { 1.0 } else { 0.0 };
            if a != 0.0 {
                out[[i, j]] = a * inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    out
}

pub fn normalized_adjacency(graph: &Graph) -> Array2<f64> {
    normalize_adjacency(&graph.adjacency())
}
