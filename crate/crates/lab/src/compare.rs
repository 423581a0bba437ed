//! Method comparison tables.

use std::path::Path;

use serde::Serialize;
use vfgl_core::metrics::impv;
use vfgl_core::protocol::ManipulationKind;

use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::experiment::{method_name, run_experiment, SeedRun};

/// One cell of the summary: a configuration averaged over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub run_id: String,
    pub method: String,
    pub attack: String,
    pub defense: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seeds: usize,
    pub clean_acc: f64,
    pub asr: f64,
    pub asr_std: f64,
    /// Relative to the clean configuration with the same attack, if any.
    pub impv: Option<f64>,
    pub aq: f64,
    pub cs_malicious: f64,
}

fn mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

/// Averages one configuration's seeds into a row with no `impv` yet.
pub fn summarize(cfg: &RunConfig, runs: &[SeedRun]) -> CompareRow {
    let asr = mean(runs.iter().map(|r| r.record.asr));
    let var = mean(runs.iter().map(|r| (r.record.asr - asr).powi(2)));
    CompareRow {
        run_id: cfg.run_id.clone(),
        method: method_name(cfg.manipulation).to_string(),
        attack: cfg.attack.map_or("none", |a| a.as_str()).to_string(),
        defense: cfg.defense.to_string(),
        k: cfg.k,
        seeds: runs.len(),
        clean_acc: mean(runs.iter().map(|r| r.record.clean_acc)),
        asr,
        asr_std: var.sqrt(),
        impv: None,
        aq: mean(runs.iter().map(|r| r.record.aq)),
        cs_malicious: mean(runs.iter().map(|r| r.record.cs_malicious)),
    }
}

/// Fills `impv` from the clean row sharing each row's attack.
pub fn fill_impv(rows: &mut [CompareRow], configs: &[RunConfig]) {
    let baselines: Vec<(String, f64)> = rows
        .iter()
        .zip(configs)
        .filter(|(_, c)| c.manipulation == ManipulationKind::None)
        .map(|(r, _)| (r.attack.clone(), r.asr))
        .collect();
    for row in rows.iter_mut() {
        row.impv = baselines
            .iter()
            .find(|(a, _)| *a == row.attack)
            .and_then(|&(_, before)| impv(before, row.asr));
    }
}

/// Rejects configurations that differ in anything but method and attack.
pub fn check_consistent(configs: &[RunConfig]) -> Result<()> {
    let Some(first) = configs.first() else {
        return Err(LabError::config("compare needs at least one config"));
    };
    for c in &configs[1..] {
        if !first.same_setting(c) {
            return Err(LabError::config(format!(
                "{} and {} differ in more than method and attack",
                first.run_id, c.run_id
            )));
        }
    }
    Ok(())
}

/// Runs each configuration and writes `out/summary.csv`.
pub fn compare_methods(configs: &[RunConfig], out: &Path, workers: usize) -> Result<Vec<CompareRow>> {
    check_consistent(configs)?;
    for c in configs {
        c.validate()?;
    }
    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let runs = run_experiment(c, out, workers)?;
        rows.push(summarize(c, &runs));
    }
    fill_impv(&mut rows, configs);
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}
