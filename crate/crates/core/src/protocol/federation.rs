use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::defense::{apply_dp, foolsgold_weights, Defense};
use crate::error::{Error, Result};
use crate::graph::{FeatureSplit, Graph};
use crate::manipulation::{build_manipulation_plan, rfa_manipulate, sfa_manipulate, ManipulationPlan};
use crate::models::checkpoint::to_tsv;
use crate::models::{
    argmax, cross_entropy, Adam, Adjacency, LocalModel, MlpParams, ModelKind, Parameters, EMBED_DIM,
};
use crate::rng::{stream, tag, Rng};

pub const SERVER_HIDDEN: usize = 64;

/// What the malicious client does to its training features at epoch `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManipulationKind {
    #[default]
    None,
    Na2,
    Rfa,
    Sfa,
}

impl ManipulationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ManipulationKind::None => "none",
            ManipulationKind::Na2 => "na2",
            ManipulationKind::Rfa => "rfa",
            ManipulationKind::Sfa => "sfa",
        }
    }
}

impl fmt::Display for ManipulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ManipulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "clean" => Ok(ManipulationKind::None),
            "na2" => Ok(ManipulationKind::Na2),
            "rfa" => Ok(ManipulationKind::Rfa),
            "sfa" => Ok(ManipulationKind::Sfa),
            _ => Err(Error::param(format!("unknown manipulation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub local_model: ModelKind,
    /// SGC propagates with `A + I` instead of the normalized adjacency.
    pub sgc_raw_adj: bool,
    pub server_hidden: usize,
    pub defense: Defense,
    pub malicious: Option<usize>,
    pub manipulation: ManipulationKind,
    pub tau: usize,
    pub gamma: f64,
    pub per_class: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.01,
            seed: 0,
            local_model: ModelKind::Gcn,
            sgc_raw_adj: false,
            server_hidden: SERVER_HIDDEN,
            defense: Defense::None,
            malicious: None,
            manipulation: ManipulationKind::None,
            tau: 15,
            gamma: 0.05,
            per_class: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if num_clients == 0 {
            return Err(Error::param("need at least one client"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(m) = self.malicious {
            if m >= num_clients {
                return Err(Error::param(format!(
                    "malicious client {m} does not exist ({num_clients} clients)"
                )));
            }
        }
        if self.manipulation != ManipulationKind::None {
            if self.malicious.is_none() {
                return Err(Error::param("manipulation needs a malicious client"));
            }
            if self.tau >= self.epochs {
                return Err(Error::param(format!(
                    "tau ({}) must be smaller than epochs ({})",
                    self.tau, self.epochs
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if let Defense::Dp(eps) = self.defense {
            if !(eps >= 0.0) {
                return Err(Error::param("dp scale must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub columns: Vec<usize>,
    pub features: Array2<f64>,
    pub model: LocalModel,
    pub optimizer: Adam,
    /// Running sum of flattened parameter gradients (first layer excluded,
    /// since its width depends on the slice).
    pub history: Vec<f64>,
    pub history_len: usize,
}

impl ClientState {
    fn record_gradients(&mut self, grads: &LocalModel) {
        let flat: Vec<f64> = grads.named()[1..]
            .iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect();
        if self.history.is_empty() {
            self.history = flat;
        } else {
            for (h, g) in self.history.iter_mut().zip(flat) {
                *h += g;
            }
        }
        self.history_len += 1;
    }
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub mlp: MlpParams,
    pub optimizer: Adam,
    pub query_counter: Vec<u64>,
    pub defense: Defense,
    noise: Rng,
}

impl ServerState {
    pub(crate) fn new(num_clients: usize, hidden: usize, num_classes: usize, config: &TrainConfig) -> Self {
        let (defense, seed) = (config.defense, config.seed);
        let mut init = stream(seed, tag::SERVER_INIT);
        ServerState {
            mlp: MlpParams::init(&[num_clients * EMBED_DIM, hidden, num_classes], &mut init),
            optimizer: Adam::new(config.lr),
            query_counter: vec![0; num_clients],
            defense,
            noise: stream(seed, tag::DP_NOISE),
        }
    }

    pub fn num_clients(&self) -> usize {
        self.query_counter.len()
    }

    /// Concatenates embedding slots in client order and applies DP noise when
    /// configured.
    fn aggregate(&mut self, embeddings: &[Array2<f64>]) -> Result<Array2<f64>> {
        if embeddings.len() != self.num_clients() {
            return Err(Error::shape(format!(
                "expected {} embedding slots, got {}",
                self.num_clients(),
                embeddings.len()
            )));
        }
        let views: Vec<ArrayView2<f64>> = embeddings.iter().map(|e| e.view()).collect();
        let h = concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))?;
        match self.defense {
            Defense::Dp(eps) => apply_dp(&h, eps, &mut self.noise),
            _ => Ok(h),
        }
    }

    /// Probabilities for every node without touching the query counter.
    pub fn predict(&mut self, embeddings: &[Array2<f64>]) -> Result<Array2<f64>> {
        let h = self.aggregate(embeddings)?;
        Ok(self.mlp.forward(&h)?.1)
    }

    /// One counted request from `requester` for the probability rows of
    /// `nodes`. A batch is a single request.
    pub fn query(&mut self, embeddings: &[Array2<f64>], nodes: &[usize], requester: usize) -> Result<Array2<f64>> {
        if requester >= self.num_clients() {
            return Err(Error::OutOfRange(format!("client {requester}")));
        }
        let probs = self.predict(embeddings)?;
        if let Some(&bad) = nodes.iter().find(|&&n| n >= probs.nrows()) {
            return Err(Error::OutOfRange(format!("node {bad}")));
        }
        self.query_counter[requester] += 1;
        Ok(probs.select(Axis(0), nodes))
    }

    /// Input-layer weight rows that read client `client`'s embedding slot.
    pub fn input_block(&self, client: usize) -> ArrayView2<'_, f64> {
        self.mlp.weights[0].slice(s![client * EMBED_DIM..(client + 1) * EMBED_DIM, ..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// What happened at the manipulation epoch.
#[derive(Debug, Clone)]
pub struct ManipulationRecord {
    pub kind: ManipulationKind,
    pub epoch: usize,
    pub plan: ManipulationPlan,
    pub original: Array2<f64>,
    /// Path tracing plus feature rewriting.
    pub elapsed: Duration,
}

/// A running federation: every client, the server and the shared structure.
#[derive(Debug, Clone)]
pub struct Federation {
    pub config: TrainConfig,
    pub adjacency: Adjacency,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
    pub train_by_class: Vec<Vec<usize>>,
    pub clients: Vec<ClientState>,
    pub server: ServerState,
    pub log: Vec<EpochRecord>,
    pub manipulation: Option<ManipulationRecord>,
    /// Latest FoolsGold weights and flags, when that defense is active.
    pub foolsgold: Option<(Vec<f64>, Vec<bool>)>,
    epoch: usize,
}

impl Federation {
    pub fn new(graph: &Graph, split: &FeatureSplit, config: TrainConfig) -> Result<Self> {
        let k = split.num_clients();
        config.validate(k)?;
        let clients = (0..k)
            .map(|id| {
                let features = split.slice(graph.features(), id);
                let mut rng = stream(config.seed, tag::CLIENT_INIT + id as u64);
                let mut model = LocalModel::init(config.local_model, features.ncols(), &mut rng);
                if let LocalModel::Sgc(p) = &mut model {
                    p.raw_adjacency = config.sgc_raw_adj;
                }
                ClientState {
                    id,
                    columns: split.columns(id).to_vec(),
                    features,
                    model,
                    optimizer: Adam::new(config.lr),
                    history: Vec::new(),
                    history_len: 0,
                }
            })
            .collect();
        let server = ServerState::new(k, config.server_hidden, graph.num_classes(), &config);
        Ok(Federation {
            adjacency: Adjacency::from_graph(graph),
            labels: graph.labels().to_vec(),
            num_classes: graph.num_classes(),
            train_nodes: graph.train_nodes(),
            test_nodes: graph.test_nodes(),
            train_by_class: graph.train_nodes_by_class(),
            clients,
            server,
            log: Vec::new(),
            manipulation: None,
            foolsgold: None,
            epoch: 0,
            config,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn malicious(&self) -> Option<&ClientState> {
        self.config.malicious.map(|m| &self.clients[m])
    }

    /// Every client's embeddings on the shared structure.
    pub fn embeddings(&self) -> Result<Vec<Array2<f64>>> {
        self.clients
            .iter()
            .map(|c| Ok(c.model.forward(&self.adjacency, &c.features)?.embeddings))
            .collect()
    }

    /// As [`Federation::embeddings`] but with `client` recomputing its slot
    /// on a different adjacency and feature matrix.
    pub fn embeddings_with(&self, client: usize, adj: &Adjacency, x: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        let mut out = self.embeddings()?;
        out[client] = self.clients[client].model.forward(adj, x)?.embeddings;
        Ok(out)
    }

    fn fraction_correct(probs: &Array2<f64>, labels: &[usize], nodes: &[usize]) -> f64 {
        if nodes.is_empty() {
            return 0.0;
        }
        let hits = nodes.iter().filter(|&&n| argmax(probs.row(n)) == labels[n]).count();
        hits as f64 / nodes.len() as f64
    }

    /// Runs the remaining scheduled epochs, applying the manipulation hook
    /// when its epoch comes up.
    pub fn train(&mut self) -> Result<()> {
        while self.epoch < self.config.epochs {
            if self.epoch == self.config.tau
                && self.config.manipulation != ManipulationKind::None
                && self.manipulation.is_none()
            {
                self.manipulate()?;
            }
            self.step()?;
        }
        if self.config.defense == Defense::FoolsGold {
            self.foolsgold = Some(self.foolsgold_now()?);
        }
        Ok(())
    }

    fn foolsgold_now(&self) -> Result<(Vec<f64>, Vec<bool>)> {
        let histories: Vec<Vec<f64>> = self.clients.iter().map(|c| c.history.clone()).collect();
        foolsgold_weights(&histories)
    }

    /// One full-batch epoch.
    pub fn step(&mut self) -> Result<()> {
        let passes = self
            .clients
            .iter()
            .map(|c| c.model.forward(&self.adjacency, &c.features))
            .collect::<Result<Vec<_>>>()?;
        let embeds: Vec<Array2<f64>> = passes.iter().map(|p| p.embeddings.clone()).collect();
        let h = self.server.aggregate(&embeds)?;
        let (_, probs, cache) = self.server.mlp.forward(&h)?;
        let (loss, dlogits) = cross_entropy(&probs, &self.train_nodes, &self.labels);
        self.log.push(EpochRecord {
            epoch: self.epoch,
            loss,
            train_acc: Self::fraction_correct(&probs, &self.labels, &self.train_nodes),
            test_acc: Self::fraction_correct(&probs, &self.labels, &self.test_nodes),
        });

        let (mlp_grads, dh) = self.server.mlp.backward(&cache, &dlogits);
        self.server.optimizer.step(&mut self.server.mlp, &mlp_grads);

        let weights = if self.config.defense == Defense::FoolsGold && self.epoch > 0 {
            let fg = self.foolsgold_now()?;
            let w = fg.0.clone();
            self.foolsgold = Some(fg);
            w
        } else {
            vec![1.0; self.clients.len()]
        };
        for ((client, pass), w) in self.clients.iter_mut().zip(&passes).zip(weights) {
            let cols = client.id * EMBED_DIM..(client.id + 1) * EMBED_DIM;
            let upstream = dh.slice(s![.., cols]).to_owned() * w;
            let grads = client
                .model
                .backward(&self.adjacency, &client.features, pass, &upstream, false)?;
            client.record_gradients(&grads.params);
            client.optimizer.step(&mut client.model, &grads.params);
        }
        self.epoch += 1;
        Ok(())
    }

    /// Replaces the malicious client's features according to the configured
    /// manipulation. RFA and SFA reuse the candidate set and budget of the
    /// neuron-path plan.
    pub fn manipulate(&mut self) -> Result<()> {
        let m = self
            .config
            .malicious
            .ok_or_else(|| Error::param("manipulation needs a malicious client"))?;
        let kind = self.config.manipulation;
        let start = Instant::now();
        let client = &self.clients[m];
        let plan = build_manipulation_plan(
            &client.model,
            &self.adjacency,
            &client.features,
            &self.train_by_class,
            self.config.gamma,
            self.config.per_class,
        )?;
        let mut baseline_rng = stream(self.config.seed, tag::BASELINE);
        let manipulated = match kind {
            ManipulationKind::Na2 => plan.manipulated.clone(),
            ManipulationKind::Rfa => rfa_manipulate(&client.features, &plan.candidates(), plan.budget, &mut baseline_rng),
            ManipulationKind::Sfa => sfa_manipulate(&client.features, &plan.candidates(), plan.budget, &mut baseline_rng),
            ManipulationKind::None => client.features.clone(),
        };
        let elapsed = start.elapsed();
        let original = std::mem::replace(&mut self.clients[m].features, manipulated);
        self.manipulation = Some(ManipulationRecord {
            kind,
            epoch: self.epoch,
            plan,
            original,
            elapsed,
        });
        Ok(())
    }

    /// Server accuracy on `nodes` through an uncounted evaluation.
    pub fn accuracy(&mut self, nodes: &[usize]) -> Result<f64> {
        let embeds = self.embeddings()?;
        let probs = self.server.predict(&embeds)?;
        Ok(Self::fraction_correct(&probs, &self.labels, nodes))
    }

    /// Server train accuracy when only client `i`'s slot is filled and the
    /// rest are zero. No defense noise is applied.
    pub fn client_only_accuracy(&self, i: usize) -> Result<f64> {
        if i >= self.clients.len() {
            return Err(Error::OutOfRange(format!("client {i}")));
        }
        let c = &self.clients[i];
        let own = c.model.forward(&self.adjacency, &c.features)?.embeddings;
        let mut h = Array2::zeros((own.nrows(), self.clients.len() * EMBED_DIM));
        h.slice_mut(s![.., i * EMBED_DIM..(i + 1) * EMBED_DIM]).assign(&own);
        let probs = self.server.mlp.forward(&h)?.1;
        Ok(Self::fraction_correct(&probs, &self.labels, &self.train_nodes))
    }

    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for rec in &self.log {
            writeln!(f, "{}", serde_json::to_string(rec)?)?;
        }
        Ok(())
    }

    /// Every client's local model and the server MLP in one TSV file.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        for c in &self.clients {
            text.push_str(&to_tsv(&c.model, &format!("client{}.", c.id)));
        }
        text.push_str(&to_tsv(&self.server.mlp, "server."));
        fs::write(path, text)?;
        Ok(())
    }
}

/// Builds a federation and runs every scheduled epoch.
pub fn train_vfgl(graph: &Graph, split: &FeatureSplit, config: TrainConfig) -> Result<Federation> {
    let mut fed = Federation::new(graph, split, config)?;
    fed.train()?;
    Ok(fed)
}
