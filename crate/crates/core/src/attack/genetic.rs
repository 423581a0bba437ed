use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng as _;

use super::{apply_flips, AttackBudget};
use crate::error::{Error, Result};
use crate::models::Adjacency;
use crate::protocol::Federation;
use crate::rng::{stream, tag, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneticConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation: f64,
    pub tournament: usize,
}

impl Default for GeneticConfig {
    fn default() -> Self {
        GeneticConfig {
            population: 20,
            generations: 10,
            mutation: 0.1,
            tournament: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneticResult {
    pub flips: Vec<(usize, usize)>,
    /// Queries spent, or the budget when the search failed.
    pub queries: u64,
    pub success: bool,
}

/// A genome is a set of distinct partner nodes; gene `j` flips `(target, j)`.
fn random_genome(partners: &[usize], delta: usize, rng: &mut Rng) -> Vec<usize> {
    sample(rng, partners.len(), delta).into_iter().map(|i| partners[i]).collect()
}

fn repair(genome: &mut [usize], partners: &[usize], rng: &mut Rng) {
    for i in 0..genome.len() {
        while genome[..i].contains(&genome[i]) {
            genome[i] = partners[rng.random_range(0..partners.len())];
        }
    }
}

fn flips_of(genome: &[usize], target: usize) -> Vec<(usize, usize)> {
    let mut flips: Vec<(usize, usize)> = genome.iter().map(|&j| (target.min(j), target.max(j))).collect();
    flips.sort_unstable();
    flips
}

/// Black-box genetic search over flips incident to `target`. Each fitness
/// evaluation is one counted query by the malicious client; fitness is one
/// minus the server's probability of the true class. Stops at the first
/// candidate the server misclassifies.
pub fn genetic_attack(
    fed: &mut Federation,
    x: &Array2<f64>,
    target: usize,
    budget: &AttackBudget,
    config: &GeneticConfig,
    seed: u64,
) -> Result<GeneticResult> {
    let m = fed
        .config
        .malicious
        .ok_or_else(|| Error::param("the genetic attack queries as the malicious client"))?;
    if (config.population * config.generations) as u64 > budget.queries {
        return Err(Error::param(format!(
            "population x generations = {} exceeds the query budget {}",
            config.population * config.generations,
            budget.queries
        )));
    }
    if config.population == 0 || config.tournament == 0 {
        return Err(Error::param("population and tournament size must be positive"));
    }
    let n = fed.adjacency.len();
    if target >= n {
        return Err(Error::OutOfRange(format!("node {target}")));
    }
    let partners: Vec<usize> = (0..n).filter(|&j| j != target).collect();
    let delta = budget.delta.min(partners.len());
    let failure = GeneticResult {
        flips: Vec::new(),
        queries: budget.queries,
        success: false,
    };
    if delta == 0 {
        return Ok(failure);
    }
    let label = fed.labels[target];
    let original = fed.adjacency.raw().clone();
    let mut rng = stream(seed, (tag::GENETIC << 32) | target as u64);
    let mut population: Vec<Vec<usize>> = (0..config.population)
        .map(|_| random_genome(&partners, delta, &mut rng))
        .collect();
    let mut base = fed.embeddings()?;
    let mut queries = 0u64;

    for generation in 0..config.generations {
        let mut fitness = Vec::with_capacity(population.len());
        for genome in &population {
            let flips = flips_of(genome, target);
            let adj = Adjacency::new(apply_flips(&original, &flips));
            base[m] = fed.clients[m].model.forward(&adj, x)?.embeddings;
            let probs = fed.server.query(&base, &[target], m)?;
            queries += 1;
            let row = probs.row(0);
            if crate::models::argmax(row) != label {
                return Ok(GeneticResult {
                    flips,
                    queries,
                    success: true,
                });
            }
            fitness.push(1.0 - row[label]);
        }
        if generation + 1 == config.generations {
            break;
        }
        let pick = |rng: &mut Rng| -> usize {
            let mut best = rng.random_range(0..population.len());
            for _ in 1..config.tournament {
                let c = rng.random_range(0..population.len());
                if fitness[c] > fitness[best] {
                    best = c;
                }
            }
            best
        };
        let mut next = Vec::with_capacity(population.len());
        while next.len() < population.len() {
            let a = &population[pick(&mut rng)];
            let b = &population[pick(&mut rng)];
            let cut = rng.random_range(0..=delta);
            let mut child: Vec<usize> = a[..cut].iter().chain(&b[cut..]).copied().collect();
            for gene in child.iter_mut() {
                if rng.random::<f64>() < config.mutation {
                    *gene = partners[rng.random_range(0..partners.len())];
                }
            }
            repair(&mut child, &partners, &mut rng);
            next.push(child);
        }
        population = next;
    }
    Ok(failure)
}
