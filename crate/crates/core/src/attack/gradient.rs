use ndarray::Array2;

use super::{apply_flips, Surrogate};
use crate::error::{Error, Result};
use crate::models::Adjacency;

/// Graphs above this size only consider flips incident to the target unless
/// the full matrix is forced.
pub const FULL_MATRIX_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlipScope {
    /// Every pair for small graphs, target-incident pairs above
    /// [`FULL_MATRIX_LIMIT`] nodes.
    #[default]
    Auto,
    Full,
    Incident,
}

impl FlipScope {
    fn full(self, n: usize) -> bool {
        match self {
            FlipScope::Auto => n <= FULL_MATRIX_LIMIT,
            FlipScope::Full => true,
            FlipScope::Incident => false,
        }
    }
}

/// Loss-increasing feasible flips ranked by |gradient|, best first; ties go
/// to the lexicographically smaller pair.
fn ranked_flips(
    adj: &Array2<f64>,
    grad: &Array2<f64>,
    target: usize,
    full: bool,
    taken: &[(usize, usize)],
) -> Vec<(f64, (usize, usize))> {
    let n = adj.nrows();
    let mut out = Vec::new();
    let mut consider = |i: usize, j: usize| {
        let pair = (i.min(j), i.max(j));
        if pair.0 == pair.1 || taken.contains(&pair) {
            return;
        }
        let g = grad[[pair.0, pair.1]];
        let score = if adj[[pair.0, pair.1]] == 0.0 { g } else { -g };
        if score > 0.0 {
            out.push((score, pair));
        }
    };
    if full {
        for i in 0..n {
            for j in (i + 1)..n {
                consider(i, j);
            }
        }
    } else {
        for j in 0..n {
            consider(target, j);
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    out
}

fn check_target(adj: &Adjacency, target: usize) -> Result<()> {
    if target >= adj.len() {
        return Err(Error::OutOfRange(format!("node {target}")));
    }
    Ok(())
}

/// Fast gradient attack: `delta` rounds of recomputing the adjacency gradient
/// of the surrogate's loss at `target` (against its own pre-attack
/// prediction) and flipping the single best loss-increasing pair.
pub fn fga_attack<S: Surrogate + ?Sized>(
    surrogate: &S,
    adj: &Adjacency,
    x: &Array2<f64>,
    target: usize,
    delta: usize,
    scope: FlipScope,
) -> Result<Vec<(usize, usize)>> {
    check_target(adj, target)?;
    let label = surrogate.predict(adj, x, target)?;
    let full = scope.full(adj.len());
    let mut flips = Vec::new();
    let mut current = adj.clone();
    for _ in 0..delta {
        let (_, grad) = surrogate.loss_gradient(&current, x, target, label)?;
        let Some(&(_, best)) = ranked_flips(current.raw(), &grad, target, full, &flips).first() else {
            break;
        };
        flips.push(best);
        current = Adjacency::new(apply_flips(adj.raw(), &flips));
    }
    Ok(flips)
}

/// One gradient, then the top `delta` loss-increasing flips at once.
pub fn gradargmax_attack<S: Surrogate + ?Sized>(
    surrogate: &S,
    adj: &Adjacency,
    x: &Array2<f64>,
    target: usize,
    delta: usize,
    scope: FlipScope,
) -> Result<Vec<(usize, usize)>> {
    check_target(adj, target)?;
    let label = surrogate.predict(adj, x, target)?;
    let (_, grad) = surrogate.loss_gradient(adj, x, target, label)?;
    Ok(ranked_flips(adj.raw(), &grad, target, scope.full(adj.len()), &[])
        .into_iter()
        .take(delta)
        .map(|(_, p)| p)
        .collect())
}
