use std::time::{Duration, Instant};

use super::plan::ManipulationPlan;
use super::shadow::{build_shadow, ShadowConfig, ShadowModel};
use crate::error::{Error, Result};
use crate::graph::{FeatureSplit, Graph};
use crate::protocol::{train_vfgl, Federation, ManipulationKind, TrainConfig};

/// Issues the attacker's single query for the probabilities of every
/// training node and fits the shadow on the malicious client's current
/// (possibly manipulated) features.
pub fn distil_shadow(fed: &mut Federation, config: &ShadowConfig) -> Result<ShadowModel> {
    let m = fed
        .config
        .malicious
        .ok_or_else(|| Error::param("shadow distillation needs a malicious client"))?;
    let embeddings = fed.embeddings()?;
    let rows = fed.train_nodes.clone();
    let probs = fed.server.query(&embeddings, &rows, m)?;
    let client = &fed.clients[m];
    build_shadow(
        &client.model,
        &fed.adjacency,
        &client.features,
        &rows,
        &probs,
        &fed.labels,
        config,
    )
}

#[derive(Debug, Clone)]
pub struct Na2Run {
    pub federation: Federation,
    pub plan: ManipulationPlan,
    pub shadow: ShadowModel,
    pub train_time: Duration,
    pub shadow_time: Duration,
}

/// Trains with the neuron-path manipulation at `tau`, then distils the
/// shadow from one query.
pub fn na2_pipeline(
    graph: &Graph,
    split: &FeatureSplit,
    config: TrainConfig,
    shadow: &ShadowConfig,
) -> Result<Na2Run> {
    if config.manipulation != ManipulationKind::Na2 {
        return Err(Error::param("the pipeline needs manipulation = na2"));
    }
    let start = Instant::now();
    let mut federation = train_vfgl(graph, split, config)?;
    let train_time = start.elapsed();
    let start = Instant::now();
    let shadow = distil_shadow(&mut federation, shadow)?;
    let shadow_time = start.elapsed();
    let plan = federation
        .manipulation
        .as_ref()
        .map(|r| r.plan.clone())
        .ok_or_else(|| Error::param("manipulation did not run"))?;
    Ok(Na2Run {
        federation,
        plan,
        shadow,
        train_time,
        shadow_time,
    })
}
