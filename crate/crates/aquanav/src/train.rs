//! Training loops for the four algorithm variants and the episode utilities
//! shared with the evolutionary phase.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::buffer::{PrioritizedBuffer, Transition};
use crate::dqn::{argmax, epsilon_at, DqnAgent, DqnConfig};
use crate::env::{Action, ArenaConfig, Env, Observation, Outcome};
use crate::error::{Error, Result};
use crate::evo::{inject_experiences, population_phase, PhaseReport, PopulationConfig};
use crate::nn::Network;
use crate::ppo::{PpoAgent, PpoConfig, RolloutStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    /// Population-enhanced double DQN with prioritized replay.
    Per,
    /// Population-enhanced clipped PPO.
    Peppo,
    /// Plain double DQN baseline.
    Dqn,
    /// Plain clipped PPO baseline.
    Ppo,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Per => "per",
            Algo::Peppo => "peppo",
            Algo::Dqn => "dqn",
            Algo::Ppo => "ppo",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "per" => Some(Algo::Per),
            "peppo" => Some(Algo::Peppo),
            "dqn" => Some(Algo::Dqn),
            "ppo" => Some(Algo::Ppo),
            _ => None,
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, Algo::Per | Algo::Dqn)
    }

    pub fn uses_population(self) -> bool {
        matches!(self, Algo::Per | Algo::Peppo)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub algo: Algo,
    pub epochs: u64,
    pub decay: f64,
    pub eps_min: f64,
    pub batch: usize,
    pub nstep: usize,
    pub success_window: usize,
    /// Stop early once the smoothed success rate reaches this level.
    pub early_stop: Option<f64>,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
    pub evo: PopulationConfig,
    pub buffer_capacity: usize,
    /// Minimum rollout length before a PPO update.
    pub ppo_horizon: usize,
    /// Wave seeds per target in population fitness evaluation.
    pub fitness_rounds: usize,
}

impl TrainConfig {
    pub fn new(algo: Algo) -> Self {
        TrainConfig {
            algo,
            epochs: 2000,
            decay: 0.995,
            eps_min: 0.02,
            batch: 64,
            nstep: 3,
            success_window: 100,
            early_stop: Some(0.95),
            dqn: DqnConfig::default(),
            ppo: PpoConfig::default(),
            evo: PopulationConfig::default(),
            buffer_capacity: 50_000,
            ppo_horizon: 1024,
            fitness_rounds: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub ret: f64,
    pub epsilon: f64,
    pub loss: f64,
    /// Success rate over the trailing window of episodes.
    pub smoothed_success: f64,
}

pub struct TrainResult {
    pub net: Network,
    pub history: Vec<EpochStats>,
    pub phases: Vec<PhaseReport>,
    pub final_success: f64,
}

/// Scripted reference controller: steer by target bearing, veer away from the
/// closer side when an obstacle is near dead ahead.
pub fn pure_pursuit_discrete(obs: &Observation) -> usize {
    let min_of = |r: std::ops::Range<usize>| obs.lidar[r].iter().cloned().fold(f64::INFINITY, f64::min);
    let front = min_of(4..11);
    let left = min_of(0..5);
    let right = min_of(10..15);
    if front < 0.35 {
        // turn away from the blocked beam; the obstacle stays on that side
        // while the turn is in progress, so the choice is stable.
        let blocked = (4..11).min_by(|&a, &b| obs.lidar[a].partial_cmp(&obs.lidar[b]).unwrap()).unwrap();
        return if blocked < 7 {
            0
        } else if blocked > 7 {
            6
        } else if left > right {
            6
        } else {
            0
        };
    }
    let h = obs.target_heading;
    let a = if h > 0.25 {
        6
    } else if h > 0.1 {
        5
    } else if h > 0.03 {
        4
    } else if h < -0.25 {
        0
    } else if h < -0.1 {
        1
    } else if h < -0.03 {
        2
    } else {
        3
    };
    // hold course instead of turning into a nearby obstacle
    if a >= 4 && left < 0.12 {
        3
    } else if a <= 2 && right < 0.12 {
        3
    } else {
        a
    }
}

pub fn pure_pursuit_continuous(obs: &Observation) -> (f64, f64) {
    let min_of = |r: std::ops::Range<usize>| obs.lidar[r].iter().cloned().fold(f64::INFINITY, f64::min);
    let front = min_of(4..11);
    let left = min_of(0..5);
    let right = min_of(10..15);
    let mut h = obs.target_heading;
    if front < 0.35 {
        let blocked = (4..11).min_by(|&a, &b| obs.lidar[a].partial_cmp(&obs.lidar[b]).unwrap()).unwrap();
        h = if blocked < 7 || (blocked == 7 && left <= right) { -0.8 } else { 0.8 };
    } else if (h > 0.03 && left < 0.12) || (h < -0.03 && right < 0.12) {
        h = 0.0;
    }
    // positive heading error: target to the left, drop left power.
    ((0.8 - 1.5 * h).clamp(0.0, 1.0), (0.8 + 1.5 * h).clamp(0.0, 1.0))
}

pub fn net_action_discrete(net: &Network, obs: &Observation) -> Result<Action> {
    let q = net.forward(&obs.to_vec())?;
    Ok(Action::Discrete(argmax(&q)))
}

pub fn net_action_continuous(net: &Network, obs: &Observation) -> Result<Action> {
    let out = net.forward(&obs.to_vec())?;
    if out.len() != 2 {
        return Err(Error::Structural(format!("continuous policy must emit 2 outputs, got {}", out.len())));
    }
    Ok(Action::Continuous { left: out[0], right: out[1] })
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub steps: usize,
    pub ret: f64,
}

/// Run one episode under `policy`. `target` pins the goal (used for fitness
/// evaluation); otherwise the env samples one from the seed.
pub fn run_episode<F>(env: &mut Env, seed: u64, target: Option<(f64, f64)>, mut policy: F) -> Result<EpisodeResult>
where
    F: FnMut(&Observation) -> Result<Action>,
{
    let mut obs = match target {
        Some(t) => env.reset_with_target(seed, t)?,
        None => env.reset(seed)?,
    };
    let mut ret = 0.0;
    let mut steps = 0;
    loop {
        let action = policy(&obs)?;
        let r = env.step(&action)?;
        ret += r.reward;
        steps += 1;
        obs = r.observation;
        if r.done {
            return Ok(EpisodeResult { outcome: r.outcome, steps, ret });
        }
    }
}

/// Fixed evaluation targets for population fitness: a sweep of reachable
/// goals around and between the default obstacles.
pub fn evaluation_targets() -> Vec<(f64, f64)> {
    vec![
        (8.5, 8.5),
        (8.5, 1.5),
        (1.2, 9.0),
        (5.0, 8.8),
        (9.0, 5.0),
        (4.2, 4.5),
        (8.2, 3.2),
        (2.0, 4.8),
    ]
}

/// Number of (target, wave seed) evaluation episodes a deterministic policy
/// completes. Several wave seeds per target damp evaluation noise, so a child
/// only outranks the learner when it is better across conditions.
pub fn fitness_reaches(net: &Network, discrete: bool, arena: &ArenaConfig, seed: u64, rounds: usize) -> Result<usize> {
    let mut env = Env::new(arena.clone())?;
    let targets = evaluation_targets();
    let mut reached = 0;
    for round in 0..rounds.max(1) {
        for (i, &t) in targets.iter().enumerate() {
            let s = seed.wrapping_add((round * targets.len() + i) as u64);
            let result = run_episode(&mut env, s, Some(t), |obs| {
                if discrete {
                    net_action_discrete(net, obs)
                } else {
                    net_action_continuous(net, obs)
                }
            })?;
            if result.outcome == Outcome::Reached {
                reached += 1;
            }
        }
    }
    Ok(reached)
}

fn smoothed(successes: &VecDeque<bool>) -> f64 {
    if successes.is_empty() {
        return 0.0;
    }
    successes.iter().filter(|&&s| s).count() as f64 / successes.len() as f64
}

/// Greedy episodes on the evaluation targets, emitting n-step transitions for
/// replay injection.
fn collect_greedy_transitions(net: &Network, arena: &ArenaConfig, seed: u64, nstep: usize, gamma: f64) -> Result<Vec<Transition>> {
    let mut env = Env::new(arena.clone())?;
    let mut out = Vec::new();
    for (i, &t) in evaluation_targets().iter().enumerate() {
        let mut obs = env.reset_with_target(seed.wrapping_add(i as u64), t)?;
        let mut pending: VecDeque<(Vec<f64>, usize, f64)> = VecDeque::new();
        loop {
            let q = net.forward(&obs.to_vec())?;
            let a = argmax(&q);
            let r = env.step(&Action::Discrete(a))?;
            push_nstep(&mut pending, &mut out, obs.to_vec(), a, r.reward, &r.observation.to_vec(), r.done, nstep, gamma);
            obs = r.observation;
            if r.done {
                break;
            }
        }
    }
    Ok(out)
}

/// Fold a new step into the n-step queue, emitting matured transitions.
#[allow(clippy::too_many_arguments)]
fn push_nstep(
    pending: &mut VecDeque<(Vec<f64>, usize, f64)>,
    out: &mut Vec<Transition>,
    obs: Vec<f64>,
    action: usize,
    reward: f64,
    next_obs: &[f64],
    done: bool,
    nstep: usize,
    gamma: f64,
) {
    pending.push_back((obs, action, reward));
    if pending.len() == nstep {
        let mut acc = 0.0;
        for (k, (_, _, r)) in pending.iter().enumerate() {
            acc += gamma.powi(k as i32) * r;
        }
        let (o, a, _) = pending.pop_front().unwrap();
        out.push(Transition { obs: o, action: a, reward: acc, next_obs: next_obs.to_vec(), done, steps: nstep });
    }
    if done {
        while !pending.is_empty() {
            let mut acc = 0.0;
            for (k, (_, _, r)) in pending.iter().enumerate() {
                acc += gamma.powi(k as i32) * r;
            }
            let steps = pending.len();
            let (o, a, _) = pending.pop_front().unwrap();
            out.push(Transition { obs: o, action: a, reward: acc, next_obs: next_obs.to_vec(), done: true, steps });
        }
    }
}

/// Train one agent; `seed` controls initialization, exploration and episode
/// layouts, so repeated runs are reproducible.
pub fn train(cfg: &TrainConfig, arena: &ArenaConfig, seed: u64) -> Result<TrainResult> {
    train_with(cfg, arena, seed, |_, _| Ok(()))
}

/// Like [`train`], invoking `on_epoch` with the stats and current network
/// after every epoch (checkpointing hook).
pub fn train_with<F>(cfg: &TrainConfig, arena: &ArenaConfig, seed: u64, on_epoch: F) -> Result<TrainResult>
where
    F: FnMut(&EpochStats, &Network) -> Result<()>,
{
    if cfg.algo.is_discrete() {
        train_dqn(cfg, arena, seed, on_epoch)
    } else {
        train_ppo(cfg, arena, seed, on_epoch)
    }
}

fn train_dqn<F>(cfg: &TrainConfig, arena: &ArenaConfig, seed: u64, mut on_epoch: F) -> Result<TrainResult>
where
    F: FnMut(&EpochStats, &Network) -> Result<()>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::new(arena.clone())?;
    let mut agent = DqnAgent::new(crate::property::OBS_DIM, 7, cfg.dqn.clone(), &mut rng);
    let mut buffer = PrioritizedBuffer::new(cfg.buffer_capacity, 0.6);
    let mut successes: VecDeque<bool> = VecDeque::new();
    let mut history = Vec::new();
    let mut phases = Vec::new();
    for epoch in 0..cfg.epochs {
        let epsilon = epsilon_at(epoch, cfg.decay, cfg.eps_min);
        let mut obs = env.reset(seed ^ (epoch.wrapping_mul(0x9e37_79b9)))?;
        let mut pending = VecDeque::new();
        let mut emitted = Vec::new();
        let mut ret = 0.0;
        let mut steps = 0;
        let outcome = loop {
            let a = agent.act_epsilon(&obs.to_vec(), epsilon, &mut rng)?;
            let r = env.step(&Action::Discrete(a))?;
            push_nstep(&mut pending, &mut emitted, obs.to_vec(), a, r.reward, &r.observation.to_vec(), r.done, cfg.nstep, cfg.dqn.gamma);
            ret += r.reward;
            steps += 1;
            obs = r.observation;
            if r.done {
                break r.outcome;
            }
        };
        for t in emitted.drain(..) {
            buffer.push(t);
        }
        let beta = 0.4 + 0.6 * (epoch as f64 / cfg.epochs.max(1) as f64).min(1.0);
        let mut loss = 0.0;
        if buffer.len() >= cfg.batch {
            let updates = (steps / 4).max(1);
            for _ in 0..updates {
                loss = agent.learn(&mut buffer, cfg.batch, beta, &mut rng)?;
            }
        }
        if cfg.algo.uses_population() && epoch > 0 && epoch % cfg.evo.period == 0 {
            let (next, mut report) = population_phase(&agent.online, &cfg.evo, epoch, seed, |net| {
                fitness_reaches(net, true, arena, seed, cfg.fitness_rounds)
            })?;
            if report.winner_child.is_some() {
                let episode = collect_greedy_transitions(&next, arena, seed, cfg.nstep, cfg.dqn.gamma)?;
                report.injected = inject_experiences(&mut buffer, &episode, cfg.evo.inject_fraction)?;
                agent.install(next);
            }
            phases.push(report);
        }
        successes.push_back(outcome == Outcome::Reached);
        if successes.len() > cfg.success_window {
            successes.pop_front();
        }
        let smooth = smoothed(&successes);
        history.push(EpochStats { epoch, outcome, steps, ret, epsilon, loss, smoothed_success: smooth });
        on_epoch(history.last().unwrap(), &agent.online)?;
        if let Some(th) = cfg.early_stop {
            if successes.len() >= cfg.success_window && smooth >= th && epsilon <= cfg.eps_min {
                break;
            }
        }
    }
    let final_success = smoothed(&successes);
    Ok(TrainResult { net: agent.online, history, phases, final_success })
}

fn train_ppo<F>(cfg: &TrainConfig, arena: &ArenaConfig, seed: u64, mut on_epoch: F) -> Result<TrainResult>
where
    F: FnMut(&EpochStats, &Network) -> Result<()>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::new(arena.clone())?;
    let mut agent = PpoAgent::new(crate::property::OBS_DIM, 2, cfg.ppo.clone(), &mut rng);
    let mut successes: VecDeque<bool> = VecDeque::new();
    let mut history = Vec::new();
    let mut phases = Vec::new();
    let mut rollout: Vec<RolloutStep> = Vec::new();
    for epoch in 0..cfg.epochs {
        // anneal the policy-noise ceiling like the epsilon schedule
        agent.clamp_log_std(-0.5 - 1.5 * (epoch as f64 / cfg.epochs.max(1) as f64));
        let mut obs = env.reset(seed ^ (epoch.wrapping_mul(0x9e37_79b9)))?;
        let mut ret = 0.0;
        let mut steps = 0;
        let outcome = loop {
            let (a, lp, v) = agent.act(&obs.to_vec(), &mut rng)?;
            let r = env.step(&Action::Continuous { left: a[0], right: a[1] })?;
            rollout.push(RolloutStep {
                obs: obs.to_vec(),
                action: a,
                log_prob: lp,
                reward: r.reward,
                value: v,
                done: r.done,
            });
            ret += r.reward;
            steps += 1;
            obs = r.observation;
            if r.done {
                break r.outcome;
            }
        };
        let mut loss = 0.0;
        if rollout.len() >= cfg.ppo_horizon {
            let (pl, _vl) = agent.update(&rollout, 0.0, &mut rng)?;
            loss = pl;
            rollout.clear();
        }
        if cfg.algo.uses_population() && epoch > 0 && epoch % cfg.evo.period == 0 {
            let (next, report) = population_phase(&agent.policy, &cfg.evo, epoch, seed, |net| {
                fitness_reaches(net, false, arena, seed, cfg.fitness_rounds)
            })?;
            if report.winner_child.is_some() {
                agent.install(next);
                // stale log-probs cannot be reused across a policy swap
                rollout.clear();
            }
            phases.push(report);
        }
        successes.push_back(outcome == Outcome::Reached);
        if successes.len() > cfg.success_window {
            successes.pop_front();
        }
        let smooth = smoothed(&successes);
        history.push(EpochStats { epoch, outcome, steps, ret, epsilon: 0.0, loss, smoothed_success: smooth });
        on_epoch(history.last().unwrap(), &agent.policy)?;
        if let Some(th) = cfg.early_stop {
            if successes.len() >= cfg.success_window && smooth >= th {
                break;
            }
        }
    }
    let final_success = smoothed(&successes);
    Ok(TrainResult { net: agent.policy, history, phases, final_success })
}
