//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use vfgl_core::attack::AttackKind;
use vfgl_core::graph::SbmSpec;
use vfgl_core::manipulation::ShadowLoss;
use vfgl_core::models::ModelKind;
use vfgl_core::protocol::{Defense, ManipulationKind};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Sbm(SbmSpec),
    /// Directory holding `nodes.tsv` and `edges.tsv`.
    Files(PathBuf),
}

impl Dataset {
    fn parse(v: &str) -> Result<Self> {
        if v == "sbm" {
            return Ok(Dataset::Sbm(SbmSpec::BENCHMARK));
        }
        if let Some(rest) = v.strip_prefix("sbm:") {
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            if parts.len() != 6 {
                return Err(LabError::config("sbm spec is sbm:nodes,classes,p_in,p_out,feat_dim,signal"));
            }
            let count = |s: &str| s.parse::<usize>().map_err(|_| LabError::config(format!("bad count {s:?}")));
            let real = |s: &str| s.parse::<f64>().map_err(|_| LabError::config(format!("bad number {s:?}")));
            return Ok(Dataset::Sbm(SbmSpec {
                num_nodes: count(parts[0])?,
                num_classes: count(parts[1])?,
                p_in: real(parts[2])?,
                p_out: real(parts[3])?,
                feat_dim: count(parts[4])?,
                signal: real(parts[5])?,
            }));
        }
        Ok(Dataset::Files(PathBuf::from(v)))
    }

    fn render(&self) -> String {
        match self {
            Dataset::Sbm(s) if *s == SbmSpec::BENCHMARK => "sbm".into(),
            Dataset::Sbm(s) => format!(
                "sbm:{},{},{},{},{},{}",
                s.num_nodes, s.num_classes, s.p_in, s.p_out, s.feat_dim, s.signal
            ),
            Dataset::Files(p) => p.display().to_string(),
        }
    }
}

/// Attack to run after training; `None` only trains and distils.
pub type AttackChoice = Option<AttackKind>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub dataset: Dataset,
    pub k: usize,
    pub malicious_id: usize,
    pub local_model: ModelKind,
    /// `None` reuses the local architecture.
    pub shadow_model: Option<ModelKind>,
    pub shadow_loss: ShadowLoss,
    pub shadow_epochs: usize,
    pub manipulation: ManipulationKind,
    pub gamma: f64,
    pub tau: usize,
    pub delta: usize,
    pub attack: AttackChoice,
    pub defense: Defense,
    pub seeds: Vec<u64>,
    pub targets: usize,
    pub q: u64,
    /// `None` uses the local model's default.
    pub epochs: Option<usize>,
    pub lr: f64,
    pub per_class_paths: bool,
    pub sgc_raw_adj: bool,
    pub full_matrix: bool,
    pub population: usize,
    pub generations: usize,
    pub export_embeddings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            dataset: Dataset::Sbm(SbmSpec::BENCHMARK),
            k: 2,
            malicious_id: 0,
            local_model: ModelKind::Gcn,
            shadow_model: None,
            shadow_loss: ShadowLoss::Mse,
            shadow_epochs: 200,
            manipulation: ManipulationKind::Na2,
            gamma: 0.05,
            tau: 15,
            delta: 1,
            attack: Some(AttackKind::Fga),
            defense: Defense::None,
            seeds: (0..5).collect(),
            targets: 100,
            q: 200,
            epochs: None,
            lr: 0.01,
            per_class_paths: false,
            sgc_raw_adj: false,
            full_matrix: false,
            population: 20,
            generations: 10,
            export_embeddings: false,
        }
    }
}

/// Every recognised key, in the order `render` writes them.
pub const KEYS: &[&str] = &[
    "run_id",
    "dataset",
    "K",
    "malicious_id",
    "local_model",
    "shadow_model",
    "shadow_loss",
    "shadow_epochs",
    "manipulation",
    "gamma",
    "tau",
    "delta",
    "attack",
    "defense",
    "seeds",
    "targets",
    "Q",
    "epochs",
    "lr",
    "per_class_paths",
    "sgc_raw_adj",
    "full_matrix",
    "population",
    "generations",
    "export_embeddings",
];

fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let bad = || LabError::config(format!("bad seed list {v:?}; use 0,1,2 or 0..5"));
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    v.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(LabError::config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| LabError::config(format!("{key}: cannot parse {v:?}")))
}

fn core<T>(key: &str, r: vfgl_core::Result<T>) -> Result<T> {
    r.map_err(|e| LabError::config(format!("{key}: {e}")))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "run_id" => self.run_id = v.to_string(),
            "dataset" => self.dataset = Dataset::parse(v)?,
            "K" | "k" => self.k = parse_num(key, v)?,
            "malicious_id" => self.malicious_id = parse_num(key, v)?,
            "local_model" => self.local_model = core(key, v.parse())?,
            "shadow_model" => {
                self.shadow_model = match v {
                    "same" | "" => None,
                    _ => Some(core(key, v.parse())?),
                }
            }
            "shadow_loss" => self.shadow_loss = core(key, v.parse())?,
            "shadow_epochs" => self.shadow_epochs = parse_num(key, v)?,
            "manipulation" | "method" => self.manipulation = core(key, v.parse())?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "delta" => self.delta = parse_num(key, v)?,
            "attack" => {
                self.attack = match v {
                    "none" => None,
                    _ => Some(core(key, v.parse())?),
                }
            }
            "defense" => self.defense = core(key, v.parse())?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "targets" => self.targets = parse_num(key, v)?,
            "Q" | "q" => self.q = parse_num(key, v)?,
            "epochs" => {
                self.epochs = match v {
                    "default" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "lr" => self.lr = parse_num(key, v)?,
            "per_class_paths" => self.per_class_paths = parse_bool(key, v)?,
            "sgc_raw_adj" => self.sgc_raw_adj = parse_bool(key, v)?,
            "full_matrix" => self.full_matrix = parse_bool(key, v)?,
            "population" => self.population = parse_num(key, v)?,
            "generations" => self.generations = parse_num(key, v)?,
            "export_embeddings" => self.export_embeddings = parse_bool(key, v)?,
            _ => return Err(LabError::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| LabError::config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    /// Loads a config file; `run_id` defaults to the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::config(format!("cannot read {}: {e}", path.display())))?;
        let explicit_id = text
            .lines()
            .any(|l| l.split('#').next().unwrap().trim_start().starts_with("run_id"));
        let mut cfg = Self::parse(&text)?;
        if !explicit_id {
            if let Some(stem) = path.file_stem() {
                cfg.run_id = stem.to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn resolved_epochs(&self) -> usize {
        self.epochs.unwrap_or_else(|| self.local_model.default_epochs())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LabError::config(m));
        if self.k == 0 {
            return fail("K must be at least 1".into());
        }
        if self.malicious_id >= self.k {
            return fail(format!("malicious_id {} must be below K = {}", self.malicious_id, self.k));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.manipulation != ManipulationKind::None && self.tau >= self.resolved_epochs() {
            return fail(format!(
                "tau ({}) must be smaller than epochs ({})",
                self.tau,
                self.resolved_epochs()
            ));
        }
        if self.q == 0 {
            return fail("Q must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive".into());
        }
        if self.attack == Some(AttackKind::Genetic) && (self.population * self.generations) as u64 > self.q {
            return fail(format!(
                "population x generations ({}) exceeds Q ({})",
                self.population * self.generations,
                self.q
            ));
        }
        if let Dataset::Sbm(s) = &self.dataset {
            if s.feat_dim < self.k {
                return fail(format!("{} feature columns cannot feed {} clients", s.feat_dim, self.k));
            }
        }
        Ok(())
    }

    fn values(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("run_id", self.run_id.clone());
        m.insert("dataset", self.dataset.render());
        m.insert("K", self.k.to_string());
        m.insert("malicious_id", self.malicious_id.to_string());
        m.insert("local_model", self.local_model.to_string());
        m.insert("shadow_model", self.shadow_model.map_or("same".into(), |k| k.to_string()));
        m.insert("shadow_loss", self.shadow_loss.to_string());
        m.insert("shadow_epochs", self.shadow_epochs.to_string());
        m.insert("manipulation", self.manipulation.to_string());
        m.insert("gamma", self.gamma.to_string());
        m.insert("tau", self.tau.to_string());
        m.insert("delta", self.delta.to_string());
        m.insert("attack", self.attack.map_or("none".into(), |a| a.to_string()));
        m.insert("defense", self.defense.to_string());
        m.insert(
            "seeds",
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        m.insert("targets", self.targets.to_string());
        m.insert("Q", self.q.to_string());
        m.insert("epochs", self.epochs.map_or("default".into(), |e| e.to_string()));
        m.insert("lr", self.lr.to_string());
        m.insert("per_class_paths", self.per_class_paths.to_string());
        m.insert("sgc_raw_adj", self.sgc_raw_adj.to_string());
        m.insert("full_matrix", self.full_matrix.to_string());
        m.insert("population", self.population.to_string());
        m.insert("generations", self.generations.to_string());
        m.insert("export_embeddings", self.export_embeddings.to_string());
        m
    }

    /// Every key written out; parsing the result gives back `self`.
    pub fn render(&self) -> String {
        let values = self.values();
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", values[key]);
        }
        out
    }

    /// Same configuration apart from method, attack and labels.
    pub fn same_setting(&self, other: &RunConfig) -> bool {
        let strip = |c: &RunConfig| {
            let mut c = c.clone();
            c.run_id.clear();
            c.manipulation = ManipulationKind::None;
            c.attack = None;
            c.population = 0;
            c.generations = 0;
            c
        };
        strip(self) == strip(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("defense", "dp:0.25").unwrap();
        cfg.set("seeds", "3..6").unwrap();
        cfg.set("dataset", "sbm:120,4,0.1,0.01,16,2").unwrap();
        cfg.set("shadow_model", "sgc").unwrap();
        cfg.set("attack", "genetic").unwrap();
        assert_eq!(cfg.seeds, vec![3, 4, 5]);
        assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().render()).unwrap(), RunConfig::default());
    }

    #[test]
    fn comments_and_errors() {
        let cfg = RunConfig::parse("# header\ngamma = 0.1 # inline\n\nK=4\n").unwrap();
        assert_eq!((cfg.gamma, cfg.k), (0.1, 4));
        assert!(RunConfig::parse("gamma 0.1").is_err());
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("attack = nettack").is_err());
        let bad = RunConfig::parse("tau = 300").unwrap();
        assert!(bad.validate().is_err());
        let bad = RunConfig::parse("malicious_id = 2").unwrap();
        assert!(bad.validate().is_err());
    }
}
