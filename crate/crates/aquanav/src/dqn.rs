//! Double DQN with n-step returns over the prioritized buffer.

use rand::Rng;

use crate::buffer::{PrioritizedBuffer, SampledBatch};
use crate::error::{Error, Result};
use crate::grad::{backward, forward_cached, Adam, Gradients};
use crate::nn::{Arch, Network};

pub const PRIORITY_CONST: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct DqnConfig {
    pub hidden: usize,
    pub gamma: f64,
    pub lr: f64,
    pub target_sync: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig { hidden: 64, gamma: 0.99, lr: 1e-3, target_sync: 200 }
    }
}

pub struct DqnAgent {
    pub online: Network,
    target: Network,
    opt: Adam,
    cfg: DqnConfig,
    updates: u64,
}

impl DqnAgent {
    pub fn new(obs_dim: usize, actions: usize, cfg: DqnConfig, rng: &mut impl Rng) -> Self {
        let arch = Arch::mlp(obs_dim, cfg.hidden, actions);
        let online = Network::init(&arch, rng);
        let target = online.clone();
        let opt = Adam::new(cfg.lr, arch.param_count());
        DqnAgent { online, target, opt, cfg, updates: 0 }
    }

    pub fn from_network(online: Network, cfg: DqnConfig) -> Self {
        let opt = Adam::new(cfg.lr, online.arch().param_count());
        let target = online.clone();
        DqnAgent { online, target, opt, cfg, updates: 0 }
    }

    /// Replace the online weights (population hand-back) and resync the target.
    pub fn install(&mut self, net: Network) {
        self.target = net.clone();
        self.online = net;
    }

    pub fn greedy_action(&self, obs: &[f64]) -> Result<usize> {
        let q = self.online.forward(obs)?;
        Ok(argmax(&q))
    }

    pub fn act_epsilon(&self, obs: &[f64], epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
        if rng.gen::<f64>() < epsilon {
            Ok(rng.gen_range(0..self.online.output_dim()))
        } else {
            self.greedy_action(obs)
        }
    }

    /// One gradient step on a prioritized batch; returns the mean weighted loss
    /// and the new priority for each sampled transition.
    pub fn update(&mut self, batch: &SampledBatch) -> Result<(f64, Vec<f64>)> {
        if batch.transitions.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let mut grads = Gradients::zeros(&self.online);
        let mut priorities = Vec::with_capacity(batch.transitions.len());
        let mut loss_sum = 0.0;
        for (t, &w) in batch.transitions.iter().zip(&batch.weights) {
            let target = if t.done {
                t.reward
            } else {
                let next_online = self.online.forward(&t.next_obs)?;
                let best = argmax(&next_online);
                let next_target = self.target.forward(&t.next_obs)?;
                t.reward + self.cfg.gamma.powi(t.steps as i32) * next_target[best]
            };
            let (q, cache) = forward_cached(&self.online, &t.obs);
            let td = q[t.action] - target;
            priorities.push(td.abs() + PRIORITY_CONST);
            // Huber loss, weighted by the importance weight.
            let (loss, dl) = if td.abs() <= 1.0 { (0.5 * td * td, td) } else { (td.abs() - 0.5, td.signum()) };
            loss_sum += w * loss;
            let mut dout = vec![0.0; q.len()];
            dout[t.action] = w * dl;
            backward(&self.online, &cache, &dout, &mut grads);
        }
        let n = batch.transitions.len() as f64;
        grads.scale(1.0 / n);
        self.opt.step(&mut self.online, &grads);
        self.updates += 1;
        if self.updates % self.cfg.target_sync == 0 {
            self.target = self.online.clone();
        }
        Ok((loss_sum / n, priorities))
    }

    /// Sample, update, and write back priorities in one step.
    pub fn learn(
        &mut self,
        buffer: &mut PrioritizedBuffer,
        batch_size: usize,
        beta: f64,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let batch = buffer.sample(batch_size, beta, rng)?;
        let (loss, priorities) = self.update(&batch)?;
        for (&idx, &p) in batch.indices.iter().zip(&priorities) {
            buffer.set_priority(idx, p);
        }
        Ok(loss)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Exploration schedule: `max(floor, decay^epoch)`.
pub fn epsilon_at(epoch: u64, decay: f64, floor: f64) -> f64 {
    (decay.powi(epoch as i32)).max(floor)
}
