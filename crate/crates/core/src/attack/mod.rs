//! Budgeted edge-flip attacks on a target node, either white-box against a
//! surrogate (the shadow model) or black-box through counted server queries.

mod genetic;
mod gradient;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::manipulation::ShadowModel;
use crate::models::{argmax, Adjacency};
use crate::protocol::Federation;
use crate::rng::{stream, tag};

pub use genetic::{genetic_attack, GeneticConfig};
pub use gradient::{fga_attack, gradargmax_attack, FlipScope, FULL_MATRIX_LIMIT};

/// A white-box model the gradient attacks can differentiate through.
/// Anything implementing it can stand in for the shadow.
pub trait Surrogate {
    /// Predicted class of `node`.
    fn predict(&self, adj: &Adjacency, x: &Array2<f64>, node: usize) -> Result<usize>;

    /// Cross-entropy at `node` against `label` and its symmetric gradient
    /// with respect to the raw adjacency.
    fn loss_gradient(&self, adj: &Adjacency, x: &Array2<f64>, node: usize, label: usize)
        -> Result<(f64, Array2<f64>)>;
}

impl Surrogate for ShadowModel {
    fn predict(&self, adj: &Adjacency, x: &Array2<f64>, node: usize) -> Result<usize> {
        let probs = self.probabilities(adj, x)?;
        if node >= probs.nrows() {
            return Err(Error::OutOfRange(format!("node {node}")));
        }
        Ok(argmax(probs.row(node)))
    }

    fn loss_gradient(
        &self,
        adj: &Adjacency,
        x: &Array2<f64>,
        node: usize,
        label: usize,
    ) -> Result<(f64, Array2<f64>)> {
        self.target_loss_gradient(adj, x, node, label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackBudget {
    /// Edge flips.
    pub delta: usize,
    /// Query budget charged to failed query-based attacks.
    pub queries: u64,
}

impl Default for AttackBudget {
    fn default() -> Self {
        AttackBudget { delta: 1, queries: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttackKind {
    #[default]
    Fga,
    GradArgmax,
    Genetic,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Fga => "fga",
            AttackKind::GradArgmax => "gradargmax",
            AttackKind::Genetic => "genetic",
        }
    }

    /// Whether the attack spends server queries per target.
    pub fn is_query_based(self) -> bool {
        self == AttackKind::Genetic
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fga" => Ok(AttackKind::Fga),
            "gradargmax" => Ok(AttackKind::GradArgmax),
            "genetic" => Ok(AttackKind::Genetic),
            _ => Err(Error::param(format!("unknown attack {s:?}"))),
        }
    }
}

fn as_millis<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

fn attack_name<S: Serializer>(k: &AttackKind, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(k.as_str())
}

/// One attacked target. Serializes as
/// `{"target":t,"attack":"fga","success":b,"queries":q,"flips":[[i,j],...],"ms":x}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackOutcome {
    pub target: usize,
    #[serde(serialize_with = "attack_name")]
    pub attack: AttackKind,
    pub success: bool,
    /// Queries attributed to this target: actual queries for query-based
    /// attacks (the budget on failure), the shared distillation query
    /// otherwise.
    pub queries: u64,
    pub flips: Vec<(usize, usize)>,
    #[serde(rename = "ms", serialize_with = "as_millis")]
    pub elapsed: Duration,
}

impl AttackOutcome {
    /// Entry for the average-query metric: `None` marks a failure to be
    /// charged the full budget. Surrogate attacks cost their one shared query
    /// whatever the outcome.
    pub fn query_entry(&self) -> Option<u64> {
        if self.attack.is_query_based() && !self.success {
            None
        } else {
            Some(self.queries)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outcome serializes")
    }
}

/// Applies flips to a raw adjacency.
pub fn apply_flips(adj: &Array2<f64>, flips: &[(usize, usize)]) -> Array2<f64> {
    let mut out = adj.clone();
    for &(i, j) in flips {
        let v = 1.0 - out[[i, j]];
        out[[i, j]] = v;
        out[[j, i]] = v;
    }
    out
}

/// Checks that `perturbed` is a valid adjacency within `delta` flips of
/// `original`: symmetric, binary, zero diagonal and `||Â - A||_0 <= 2Δ`.
pub fn check_perturbation(original: &Array2<f64>, perturbed: &Array2<f64>, delta: usize) -> Result<()> {
    let n = original.nrows();
    if perturbed.dim() != (n, n) {
        return Err(Error::shape("perturbed adjacency has the wrong size"));
    }
    let mut changed = 0usize;
    for i in 0..n {
        if perturbed[[i, i]] != 0.0 {
            return Err(Error::InvalidGraph(format!("self-loop at {i}")));
        }
        for j in 0..n {
            let v = perturbed[[i, j]];
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidGraph(format!("entry ({i},{j}) = {v} is not binary")));
            }
            if v != perturbed[[j, i]] {
                return Err(Error::InvalidGraph(format!("asymmetric at ({i},{j})")));
            }
            if v != original[[i, j]] {
                changed += 1;
            }
        }
    }
    if changed > 2 * delta {
        return Err(Error::InvalidGraph(format!(
            "{changed} entries changed, budget allows {}",
            2 * delta
        )));
    }
    Ok(())
}

/// Recomputes the malicious client's embedding on `(adj, x)` with honest
/// embeddings from everyone else and reports whether the server now
/// misclassifies `target`. This evaluation is not a counted query.
pub fn evaluate_attack(fed: &mut Federation, target: usize, adj: &Adjacency, x: &Array2<f64>) -> Result<bool> {
    let m = fed
        .config
        .malicious
        .ok_or_else(|| Error::param("attack evaluation needs a malicious client"))?;
    let embeddings = fed.embeddings_with(m, adj, x)?;
    let probs = fed.server.predict(&embeddings)?;
    Ok(argmax(probs.row(target)) != fed.labels[target])
}

/// Up to `count` test nodes the server currently classifies correctly, in a
/// seeded random order.
pub fn select_targets(fed: &mut Federation, count: usize, seed: u64) -> Result<Vec<usize>> {
    let embeddings = fed.embeddings()?;
    let probs = fed.server.predict(&embeddings)?;
    let mut correct: Vec<usize> = fed
        .test_nodes
        .iter()
        .copied()
        .filter(|&n| argmax(probs.row(n)) == fed.labels[n])
        .collect();
    correct.shuffle(&mut stream(seed, tag::TARGETS));
    correct.truncate(count);
    Ok(correct)
}

/// Everything an attack on one federation needs besides the target.
pub struct AttackSetup<'a> {
    pub kind: AttackKind,
    pub budget: AttackBudget,
    pub scope: FlipScope,
    pub surrogate: Option<&'a dyn Surrogate>,
    pub genetic: GeneticConfig,
    pub seed: u64,
}

/// Runs one attack on `target` against the malicious client's current
/// features and the clean structure, validates the perturbation and
/// evaluates it on the server.
pub fn run_attack(fed: &mut Federation, setup: &AttackSetup<'_>, target: usize) -> Result<AttackOutcome> {
    let m = fed
        .config
        .malicious
        .ok_or_else(|| Error::param("attacks need a malicious client"))?;
    let start = Instant::now();
    let x = fed.clients[m].features.clone();
    let original = fed.adjacency.raw().clone();
    let (flips, queries, query_success) = match setup.kind {
        AttackKind::Fga | AttackKind::GradArgmax => {
            let surrogate = setup
                .surrogate
                .ok_or_else(|| Error::param(format!("{} needs a surrogate model", setup.kind)))?;
            let flips = if setup.kind == AttackKind::Fga {
                fga_attack(surrogate, &fed.adjacency, &x, target, setup.budget.delta, setup.scope)?
            } else {
                gradargmax_attack(surrogate, &fed.adjacency, &x, target, setup.budget.delta, setup.scope)?
            };
            (flips, 1, None)
        }
        AttackKind::Genetic => {
            let r = genetic_attack(fed, &x, target, &setup.budget, &setup.genetic, setup.seed)?;
            (r.flips, r.queries, Some(r.success))
        }
    };
    let perturbed = apply_flips(&original, &flips);
    check_perturbation(&original, &perturbed, setup.budget.delta)?;
    let success = match query_success {
        Some(s) => s,
        None if flips.is_empty() => false,
        None => evaluate_attack(fed, target, &Adjacency::new(perturbed), &x)?,
    };
    Ok(AttackOutcome {
        target,
        attack: setup.kind,
        success,
        queries,
        flips,
        elapsed: start.elapsed(),
    })
}
