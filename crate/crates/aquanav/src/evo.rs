//! Population phase: Gaussian mutation, mean crossover, tournament against
//! the learner, and replay injection of the winner's experience.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rand::SeedableRng;
use rayon::prelude::*;

use crate::buffer::{PrioritizedBuffer, Transition};
use crate::error::{Error, Result};
use crate::nn::{Genome, Network};

#[derive(Debug, Clone)]
pub struct PopulationConfig {
    /// Children per phase.
    pub size: usize,
    /// Per-coordinate mutation probability.
    pub mut_p: f64,
    /// Variance of the additive Gaussian noise.
    pub mut_v: f64,
    /// Crossover weight on the learner's genome.
    pub tau: f64,
    /// Epochs between population phases.
    pub period: u64,
    /// Fraction of the winner's transitions injected into the replay buffer.
    pub inject_fraction: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig { size: 5, mut_p: 0.2, mut_v: 0.15, tau: 0.6, period: 50, inject_fraction: 0.25 }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.period == 0 {
            return Err(Error::Validation("population size and period must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mut_p)
            || !(0.0..=1.0).contains(&self.tau)
            || !(0.0..=1.0).contains(&self.inject_fraction)
            || self.mut_v < 0.0
        {
            return Err(Error::Validation("population rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mutate a copy of `genome`: each coordinate flips a `mut_p` coin and, on
/// heads, gains Normal(0, sqrt(mut_v)) noise. Unmasked coordinates are
/// bit-identical to the parent.
pub fn mutate(genome: &Genome, cfg: &PopulationConfig, rng: &mut impl Rng) -> Genome {
    let noise = Normal::new(0.0, cfg.mut_v.sqrt()).unwrap();
    let mut child = genome.clone();
    for v in &mut child.0 {
        if rng.gen::<f64>() < cfg.mut_p {
            *v += noise.sample(rng);
        }
    }
    child
}

/// Weighted mean of the learner's genome and the population winner.
pub fn crossover(learner: &Genome, winner: &Genome, tau: f64) -> Result<Genome> {
    if learner.0.len() != winner.0.len() {
        return Err(Error::Structural("crossover requires genomes of equal length".into()));
    }
    Ok(Genome(
        learner
            .0
            .iter()
            .zip(&winner.0)
            .map(|(&l, &w)| tau * l + (1.0 - tau) * w)
            .collect(),
    ))
}

#[derive(Debug, Clone)]
pub struct PhaseReport {
    pub epoch: u64,
    /// Fitness of the learner and of each child, in id order.
    pub learner_fitness: usize,
    pub child_fitness: Vec<usize>,
    /// None when the learner won outright and its weights were kept as-is.
    pub winner_child: Option<usize>,
    pub injected: usize,
}

/// Run one population phase. `fitness` maps a candidate network to the number
/// of evaluation targets it reaches; it must be deterministic. Returns the
/// network to continue training with and the phase report.
///
/// Ties go to the learner: the DRL weights are kept unchanged unless some
/// child strictly beats them, so the phase can never make the learner worse
/// under the fitness measure.
pub fn population_phase<F>(
    learner: &Network,
    cfg: &PopulationConfig,
    epoch: u64,
    seed: u64,
    fitness: F,
) -> Result<(Network, PhaseReport)>
where
    F: Fn(&Network) -> Result<usize> + Sync,
{
    cfg.validate()?;
    let arch = learner.arch();
    let genome = learner.flatten();
    let mut children = Vec::with_capacity(cfg.size);
    for id in 0..cfg.size {
        // Per-child stream keyed by (seed, epoch, id) so results do not depend
        // on evaluation order.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch << 20) ^ id as u64);
        children.push(mutate(&genome, cfg, &mut rng));
    }
    let nets: Vec<Network> = children
        .iter()
        .map(|g| Network::unflatten(&arch, g))
        .collect::<Result<_>>()?;
    let mut scores: Vec<(usize, Result<usize>)> = nets
        .par_iter()
        .enumerate()
        .map(|(id, net)| (id, fitness(net)))
        .collect();
    scores.sort_by_key(|&(id, _)| id);
    let child_fitness: Vec<usize> = scores
        .into_iter()
        .map(|(_, r)| r)
        .collect::<Result<_>>()?;
    let learner_fitness = fitness(learner)?;
    let mut winner_child = None;
    let mut best = learner_fitness;
    for (id, &f) in child_fitness.iter().enumerate() {
        // Strict improvement only; among tied children the lowest id wins.
        if f > best {
            best = f;
            winner_child = Some(id);
        }
    }
    let next = match winner_child {
        None => learner.clone(),
        Some(id) => {
            let mixed = crossover(&genome, &children[id], cfg.tau)?;
            Network::unflatten(&arch, &mixed)?
        }
    };
    let report = PhaseReport { epoch, learner_fitness, child_fitness, winner_child, injected: 0 };
    Ok((next, report))
}

/// Inject a fraction of the winner's transitions into the replay buffer at
/// maximum priority. Only meaningful for off-policy learners.
pub fn inject_experiences(
    buffer: &mut PrioritizedBuffer,
    transitions: &[Transition],
    fraction: f64,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Validation("inject fraction must lie in [0, 1]".into()));
    }
    let count = ((transitions.len() as f64) * fraction).ceil() as usize;
    let count = count.min(transitions.len());
    // Evenly spaced sample so the injected slice spans the whole episode.
    let mut injected = 0;
    for k in 0..count {
        let idx = k * transitions.len() / count.max(1);
        let p = buffer.max_priority();
        buffer.push_with_priority(transitions[idx].clone(), p);
        injected += 1;
    }
    Ok(injected)
}
