//! Seeded experiment batches: train, manipulate, distil, attack, score.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use vfgl_core::attack::{
    run_attack, select_targets, AttackBudget, AttackKind, AttackOutcome, AttackSetup, FlipScope, GeneticConfig,
    Surrogate,
};
use vfgl_core::graph::{load_graph, split_features, synth_sbm, Graph};
use vfgl_core::manipulation::{distil_shadow, ShadowConfig, ShadowModel};
use vfgl_core::metrics::{
    append_results, aq, asr, contribution_scores, export_embeddings, weight_norm_diff, ExperimentRecord,
    CONTRIBUTION_ALPHA,
};
use vfgl_core::protocol::{Defense, Federation, ManipulationKind, TrainConfig};

use crate::config::{Dataset, RunConfig};
use crate::error::{LabError, Result};

/// Wall clock per stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    /// Training without the manipulation hook.
    pub train_ms: f64,
    pub manipulation_ms: f64,
    pub shadow_ms: f64,
    pub attack_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Serialize)]
pub struct ShadowSummary {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub initial_agreement: f64,
    pub final_agreement: f64,
}

impl From<&ShadowModel> for ShadowSummary {
    fn from(s: &ShadowModel) -> Self {
        ShadowSummary {
            initial_mse: s.initial_mse,
            final_mse: s.final_mse,
            initial_agreement: s.initial_agreement,
            final_agreement: s.final_agreement,
        }
    }
}

/// Everything one seed produced.
#[derive(Debug, Clone, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    #[serde(skip)]
    pub record: ExperimentRecord,
    #[serde(skip)]
    pub outcomes: Vec<AttackOutcome>,
    pub timings: StageTimings,
    /// Queries the malicious client actually issued.
    pub malicious_queries: u64,
    /// Queries the run declares: one for distillation plus whatever a
    /// query-based attack reports.
    pub declared_queries: u64,
    pub client_accuracy: Vec<f64>,
    pub cs: Vec<f64>,
    pub shadow: Option<ShadowSummary>,
    pub flagged: Option<Vec<bool>>,
    pub candidates: usize,
    pub budget: usize,
}

/// Parallel job cap: `VFGL_WORKERS` when set, else the core count.
pub fn worker_limit() -> Result<usize> {
    match std::env::var("VFGL_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(LabError::config(format!("VFGL_WORKERS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn load_dataset(cfg: &RunConfig, seed: u64) -> Result<Graph> {
    Ok(match &cfg.dataset {
        Dataset::Sbm(spec) => synth_sbm(*spec, seed)?,
        Dataset::Files(dir) => load_graph(dir.join("nodes.tsv"), dir.join("edges.tsv"))?,
    })
}

fn train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.resolved_epochs(),
        lr: cfg.lr,
        seed,
        local_model: cfg.local_model,
        sgc_raw_adj: cfg.sgc_raw_adj,
        defense: cfg.defense,
        malicious: Some(cfg.malicious_id),
        manipulation: cfg.manipulation,
        tau: cfg.tau,
        gamma: cfg.gamma,
        per_class: cfg.per_class_paths,
        ..TrainConfig::default()
    }
}

/// Name used for the manipulation in results tables.
pub fn method_name(kind: ManipulationKind) -> &'static str {
    match kind {
        ManipulationKind::None => "clean",
        other => other.as_str(),
    }
}

fn needs_shadow(cfg: &RunConfig) -> bool {
    cfg.manipulation == ManipulationKind::Na2 || cfg.attack.is_some_and(|a| !a.is_query_based())
}

fn server_input(fed: &Federation) -> Result<Array2<f64>> {
    let blocks = fed.embeddings()?;
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| LabError::Runtime(e.to_string()))
}

/// Runs one seed. Artifacts go to `dir` when given.
pub fn run_seed(cfg: &RunConfig, seed: u64, dir: Option<&Path>) -> Result<SeedRun> {
    let graph = load_dataset(cfg, seed)?;
    let split = split_features(&graph, cfg.k, seed)?;
    let m = cfg.malicious_id;

    let start = Instant::now();
    let mut fed = Federation::new(&graph, &split, train_config(cfg, seed))?;
    fed.train()?;
    let manipulation = fed.manipulation.as_ref().map_or(Duration::ZERO, |r| r.elapsed);
    let mut timings = StageTimings {
        train_ms: ms(start.elapsed().saturating_sub(manipulation)),
        manipulation_ms: ms(manipulation),
        ..StageTimings::default()
    };

    let test_nodes = fed.test_nodes.clone();
    let clean_acc = fed.accuracy(&test_nodes)?;
    let client_accuracy = (0..cfg.k)
        .map(|i| fed.client_only_accuracy(i))
        .collect::<vfgl_core::Result<Vec<_>>>()?;
    let cs = contribution_scores(&client_accuracy, CONTRIBUTION_ALPHA)?;

    let shadow = if needs_shadow(cfg) {
        let start = Instant::now();
        let shadow_cfg = ShadowConfig {
            kind: cfg.shadow_model,
            loss: cfg.shadow_loss,
            epochs: cfg.shadow_epochs,
            lr: cfg.lr,
            seed,
            ..ShadowConfig::default()
        };
        let s = distil_shadow(&mut fed, &shadow_cfg)?;
        timings.shadow_ms = ms(start.elapsed());
        Some(s)
    } else {
        None
    };

    let mut outcomes = Vec::new();
    if let Some(kind) = cfg.attack {
        let start = Instant::now();
        let targets = select_targets(&mut fed, cfg.targets, seed)?;
        let setup = AttackSetup {
            kind,
            budget: AttackBudget {
                delta: cfg.delta,
                queries: cfg.q,
            },
            scope: if cfg.full_matrix { FlipScope::Full } else { FlipScope::Auto },
            surrogate: shadow.as_ref().map(|s| s as &dyn Surrogate),
            genetic: GeneticConfig {
                population: cfg.population,
                generations: cfg.generations,
                ..GeneticConfig::default()
            },
            seed,
        };
        for &t in &targets {
            outcomes.push(run_attack(&mut fed, &setup, t)?);
        }
        timings.attack_ms = ms(start.elapsed());
    }

    let declared_queries = u64::from(shadow.is_some())
        + outcomes
            .iter()
            .filter(|o| o.attack.is_query_based())
            .map(|o| o.queries)
            .sum::<u64>();
    let malicious_queries = fed.server.query_counter[m];
    audit(&fed, m, declared_queries)?;

    let successes = outcomes.iter().filter(|o| o.success).count();
    let flagged = fed.foolsgold.as_ref().map(|(_, f)| f.clone());
    let record = ExperimentRecord {
        run_id: cfg.run_id.clone(),
        seed,
        method: method_name(cfg.manipulation).to_string(),
        attack: cfg.attack.map_or("none", AttackKind::as_str).to_string(),
        defense: cfg.defense.to_string(),
        k: cfg.k,
        gamma: cfg.gamma,
        tau: cfg.tau,
        delta: cfg.delta,
        clean_acc,
        asr: if outcomes.is_empty() { 0.0 } else { asr(successes, outcomes.len())? },
        impv: None,
        aq: if outcomes.is_empty() {
            0.0
        } else {
            aq(&outcomes.iter().map(AttackOutcome::query_entry).collect::<Vec<_>>(), cfg.q)?
        },
        cs_malicious: cs[m],
        shadow_mse: shadow.as_ref().map(|s| s.final_mse),
        weight_norm_diff: if cfg.k > 1 { Some(weight_norm_diff(&fed.server, m)?) } else { None },
        dr_flag: match cfg.defense {
            Defense::FoolsGold => flagged.as_ref().map(|f| f[m]),
            _ => None,
        },
        cs: cs.clone(),
    };
    let plan = fed.manipulation.as_ref().map(|r| &r.plan);
    let run = SeedRun {
        seed,
        record,
        outcomes,
        timings,
        malicious_queries,
        declared_queries,
        client_accuracy,
        cs,
        shadow: shadow.as_ref().map(ShadowSummary::from),
        flagged,
        candidates: plan.map_or(0, |p| p.candidates().len()),
        budget: plan.map_or(0, |p| p.budget),
    };

    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        fed.write_log(dir.join("train_log.jsonl"))?;
        fed.save_checkpoint(dir.join("checkpoint.tsv"))?;
        if let Some(r) = &fed.manipulation {
            fs::write(dir.join("plan.json"), r.plan.to_json(cfg.gamma, cfg.tau) + "\n")?;
        }
        let mut out = fs::File::create(dir.join("outcomes.jsonl"))?;
        for o in &run.outcomes {
            writeln!(out, "{}", o.to_json())?;
        }
        let summary = serde_json::to_string_pretty(&run).map_err(|e| LabError::Runtime(e.to_string()))?;
        fs::write(dir.join("summary.json"), summary + "\n")?;
        if cfg.export_embeddings {
            if let Some(s) = &shadow {
                let client = &fed.clients[m];
                let shadow_embed = s.embeddings(&fed.adjacency, &client.features)?;
                let nodes: Vec<usize> = (0..graph.num_nodes()).collect();
                export_embeddings(dir.join("embeddings.csv"), &nodes, &server_input(&fed)?, &shadow_embed)?;
            }
        }
    }
    Ok(run)
}

/// The malicious client may not have issued more server queries than the
/// run declares, and nobody else may have queried at all.
fn audit(fed: &Federation, malicious: usize, declared: u64) -> Result<()> {
    for (i, &count) in fed.server.query_counter.iter().enumerate() {
        if i == malicious && count > declared {
            return Err(LabError::Audit(format!(
                "client {i} issued {count} queries but the run declares {declared}"
            )));
        }
        if i != malicious && count != 0 {
            return Err(LabError::Audit(format!("benign client {i} issued {count} queries")));
        }
    }
    Ok(())
}

/// Where a run's artifacts live under `out`.
pub fn run_dir(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join(&cfg.run_id)
}

/// Runs every seed of `cfg`, at most `workers` at a time, writes artifacts
/// under `out/<run_id>/` and appends one row per seed, in seed order, to
/// `out/results.csv`.
pub fn run_experiment(cfg: &RunConfig, out: &Path, workers: usize) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    let dir = run_dir(out, cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.txt"), cfg.render())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| LabError::Runtime(e.to_string()))?;
    let runs: Vec<SeedRun> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, seed, Some(&dir.join(format!("seed_{seed}")))))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut out_file = fs::File::create(dir.join("outcomes.jsonl"))?;
    for run in &runs {
        for o in &run.outcomes {
            let mut v = serde_json::to_value(o).map_err(|e| LabError::Runtime(e.to_string()))?;
            v["seed"] = run.seed.into();
            writeln!(out_file, "{v}")?;
        }
    }
    let records: Vec<ExperimentRecord> = runs.iter().map(|r| r.record.clone()).collect();
    append_results(out.join("results.csv"), &records)?;
    Ok(runs)
}
