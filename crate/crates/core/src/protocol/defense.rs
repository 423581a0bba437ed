//! Server-side defenses: Laplace noise on received embeddings and FoolsGold
//! re-weighting of per-client gradient signals.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Defense {
    #[default]
    None,
    /// Laplace noise with the given scale on every received embedding entry.
    Dp(f64),
    FoolsGold,
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defense::None => f.write_str("none"),
            Defense::Dp(eps) => write!(f, "dp:{eps}"),
            Defense::FoolsGold => f.write_str("foolsgold"),
        }
    }
}

impl FromStr for Defense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Defense::None),
            "foolsgold" => Ok(Defense::FoolsGold),
            _ => {
                let eps = s
                    .strip_prefix("dp:")
                    .and_then(|e| e.parse::<f64>().ok())
                    .ok_or_else(|| Error::param(format!("unknown defense {s:?}")))?;
                if !(eps >= 0.0) {
                    return Err(Error::param("dp scale must be non-negative"));
                }
                Ok(Defense::Dp(eps))
            }
        }
    }
}

/// One draw from Laplace(0, scale) by inverting the CDF.
pub fn sample_laplace(scale: f64, rng: &mut Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Adds independent Laplace(0, `scale`) noise to every entry. A zero scale
/// returns the input unchanged without touching `rng`.
pub fn apply_dp(embeddings: &Array2<f64>, scale: f64, rng: &mut Rng) -> Result<Array2<f64>> {
    if !(scale >= 0.0) {
        return Err(Error::param(format!("noise scale must be >= 0, got {scale}")));
    }
    if scale == 0.0 {
        return Ok(embeddings.clone());
    }
    Ok(embeddings.mapv(|v| v + sample_laplace(scale, rng)))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// FoolsGold weights from each client's summed gradient history.
///
/// Follows the reference re-weighting: pairwise cosine similarity, pardoning
/// by relative maximum similarity, `1 - max similarity`, rescaling by the
/// maximum weight, logit sharpening `ln(w / (1 - w)) + 0.5` and clipping to
/// `[0, 1]`. A client is flagged when its weight is below half the median
/// weight. Vectors of different length or zero norm count as dissimilar.
pub fn foolsgold_weights(histories: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<bool>)> {
    let k = histories.len();
    if k == 0 {
        return Err(Error::param("foolsgold needs at least one client"));
    }
    if k == 1 {
        return Ok((vec![1.0], vec![false]));
    }
    let mut cs = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                cs[i][j] = cosine(&histories[i], &histories[j]);
            }
        }
    }
    let max_cs: Vec<f64> = cs
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    for i in 0..k {
        for j in 0..k {
            if i != j && max_cs[i] < max_cs[j] {
                cs[i][j] *= max_cs[i] / max_cs[j];
            }
        }
    }
    let mut w: Vec<f64> = (0..k)
        .map(|i| {
            let m = (0..k)
                .filter(|&j| j != i)
                .map(|j| cs[i][j])
                .fold(f64::NEG_INFINITY, f64::max);
            (1.0 - m).clamp(0.0, 1.0)
        })
        .collect();
    let w_max = w.iter().copied().fold(0.0, f64::max);
    if w_max > 0.0 {
        for v in &mut w {
            *v /= w_max;
            if *v >= 1.0 {
                *v = 0.99;
            }
            *v = if *v <= 0.0 {
                0.0
            } else {
                ((*v / (1.0 - *v)).ln() + 0.5).clamp(0.0, 1.0)
            };
        }
    }
    let mut sorted = w.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    let flagged = w.iter().map(|&v| v < 0.5 * median).collect();
    Ok((w, flagged))
}
