//! Attack and contribution metrics, significance testing and result export.

use std::fs::{self, OpenOptions};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::protocol::ServerState;

/// Scaling constant of the contribution score.
pub const CONTRIBUTION_ALPHA: f64 = 5.0;

/// Attack success rate in percent.
pub fn asr(successes: usize, targets: usize) -> Result<f64> {
    if targets == 0 {
        return Err(Error::param("attack success rate needs at least one target"));
    }
    if successes > targets {
        return Err(Error::param(format!("{successes} successes out of {targets} targets")));
    }
    Ok(100.0 * successes as f64 / targets as f64)
}

/// `sinh(alpha * acc_i / sum acc)` normalized to sum to one.
pub fn contribution_scores(accs: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if accs.iter().any(|&a| !(a >= 0.0)) {
        return Err(Error::param("accuracies must be non-negative"));
    }
    let total: f64 = accs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::param("contribution scores need a positive total accuracy"));
    }
    let con: Vec<f64> = accs.iter().map(|a| (alpha * a / total).sinh()).collect();
    let sum: f64 = con.iter().sum();
    Ok(con.into_iter().map(|c| c / sum).collect())
}

/// Average queries per target; `None` entries are failures charged `budget`.
pub fn aq(entries: &[Option<u64>], budget: u64) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::param("average queries of an empty set"));
    }
    if budget == 0 {
        return Err(Error::param("query budget must be at least 1"));
    }
    let total: u64 = entries.iter().map(|e| e.unwrap_or(budget)).sum();
    Ok(total as f64 / entries.len() as f64)
}

/// Relative ASR improvement in percent; `None` when the baseline is zero.
pub fn impv(asr_before: f64, asr_after: f64) -> Option<f64> {
    (asr_before > 0.0).then(|| (asr_after / asr_before - 1.0) * 100.0)
}

/// Percentage of runs in which the malicious client was flagged.
pub fn detection_rate(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(Error::param("detection rate needs at least one run"));
    }
    Ok(100.0 * flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// L2 norm of the server's input block for the malicious slot minus the mean
/// norm of the other blocks.
pub fn weight_norm_diff(server: &ServerState, malicious: usize) -> Result<f64> {
    let k = server.num_clients();
    if malicious >= k || k < 2 {
        return Err(Error::param(format!("need a malicious slot among at least two clients, got {malicious} of {k}")));
    }
    let norm = |c: usize| server.input_block(c).iter().map(|v| v * v).sum::<f64>().sqrt();
    let benign: f64 = (0..k).filter(|&c| c != malicious).map(norm).sum::<f64>() / (k - 1) as f64;
    Ok(norm(malicious) - benign)
}

/// Pearson correlation and its two-sided p-value.
pub fn pearson_significance(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::param("series lengths differ"));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::param("correlation needs at least three points"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::param("correlation of a constant series"));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::param(e.to_string()))?;
        2.0 * dist.sf(t.abs())
    };
    Ok((r, p))
}

/// Writes `node,source,e_0,...` rows: the server's concatenated input
/// embeddings, then the shadow's pre-head embeddings, for each node. Shadow
/// rows are padded with empty cells when the server input is wider.
pub fn export_embeddings(
    path: impl AsRef<Path>,
    nodes: &[usize],
    server_input: &Array2<f64>,
    shadow: &Array2<f64>,
) -> Result<()> {
    let width = server_input.ncols().max(shadow.ncols());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["node".to_string(), "source".to_string()];
    header.extend((0..width).map(|i| format!("e_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for &n in nodes {
        for (source, m) in [("server", server_input), ("shadow", shadow)] {
            if n >= m.nrows() {
                return Err(Error::OutOfRange(format!("node {n}")));
            }
            let mut row = vec![n.to_string(), source.to_string()];
            row.extend((0..width).map(|j| if j < m.ncols() { m[[n, j]].to_string() } else { String::new() }));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// One experiment cell (one seed of one configuration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub attack: String,
    pub defense: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: f64,
    pub tau: usize,
    pub delta: usize,
    pub clean_acc: f64,
    pub asr: f64,
    pub impv: Option<f64>,
    pub aq: f64,
    pub cs_malicious: f64,
    pub shadow_mse: Option<f64>,
    pub weight_norm_diff: Option<f64>,
    pub dr_flag: Option<bool>,
    /// Per-client contribution scores; not part of the CSV row.
    #[serde(skip)]
    pub cs: Vec<f64>,
}

pub const RESULTS_HEADER: &str = "run_id,seed,method,attack,defense,K,gamma,tau,delta,clean_acc,asr,impv,aq,cs_malicious,shadow_mse,weight_norm_diff,dr_flag";

/// Appends records to a results CSV, writing the header when the file is new
/// or empty.
pub fn append_results(path: impl AsRef<Path>, records: &[ExperimentRecord]) -> Result<()> {
    let path = path.as_ref();
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::param(format!("bad results row: {e}"))))
        .collect()
}
