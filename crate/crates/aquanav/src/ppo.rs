//! Clipped PPO with a diagonal Gaussian policy and GAE.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grad::{backward, forward_cached, Adam, Gradients};
use crate::nn::{Arch, Network};

#[derive(Debug, Clone)]
pub struct PpoConfig {
    pub hidden: usize,
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub update_epochs: usize,
    pub minibatch: usize,
    /// Stop an update pass once the mean approximate KL to the acting policy
    /// exceeds this; guards against destructive over-fitting of one rollout.
    pub kl_limit: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            hidden: 64,
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            lr: 1e-3,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            update_epochs: 4,
            minibatch: 64,
            kl_limit: 0.2,
        }
    }
}

/// One stored rollout step. `log_prob` must come from the policy that acted.
#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

pub struct PpoAgent {
    pub policy: Network,
    pub value: Network,
    log_std: Vec<f64>,
    policy_opt: Adam,
    value_opt: Adam,
    log_std_opt: Adam,
    cfg: PpoConfig,
}

const LOG_STD_MIN: f64 = -4.0;
const LOG_STD_MAX: f64 = 1.0;

impl PpoAgent {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: PpoConfig, rng: &mut impl Rng) -> Self {
        let policy_arch = Arch::mlp(obs_dim, cfg.hidden, act_dim);
        let value_arch = Arch::mlp(obs_dim, cfg.hidden, 1);
        let policy = Network::init(&policy_arch, rng);
        let value = Network::init(&value_arch, rng);
        let policy_opt = Adam::new(cfg.lr, policy_arch.param_count());
        let value_opt = Adam::new(cfg.lr, value_arch.param_count());
        let log_std_opt = Adam::new(cfg.lr, act_dim);
        PpoAgent {
            policy,
            value,
            log_std: vec![-0.5; act_dim],
            policy_opt,
            value_opt,
            log_std_opt,
            cfg,
        }
    }

    pub fn install(&mut self, policy: Network) {
        self.policy = policy;
    }

    /// Cap the policy noise from above; the schedule in the training loop
    /// anneals this the way epsilon decays for the value learner.
    pub fn clamp_log_std(&mut self, max: f64) {
        for ls in self.log_std.iter_mut() {
            *ls = ls.min(max.max(LOG_STD_MIN));
        }
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn act_dim(&self) -> usize {
        self.policy.output_dim()
    }

    /// Deterministic action: the policy mean.
    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.policy.forward(obs)
    }

    pub fn state_value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.value.forward(obs)?[0])
    }

    /// Sample `a ~ N(mean, std)`; returns (action, log_prob, value).
    pub fn act(&self, obs: &[f64], rng: &mut impl Rng) -> Result<(Vec<f64>, f64, f64)> {
        let mean = self.policy.forward(obs)?;
        let mut action = Vec::with_capacity(mean.len());
        let mut log_prob = 0.0;
        for (d, &m) in mean.iter().enumerate() {
            let std = self.log_std[d].exp();
            let a = Normal::new(m, std).unwrap().sample(rng);
            log_prob += gauss_log_pdf(a, m, self.log_std[d]);
            action.push(a);
        }
        let value = self.state_value(obs)?;
        Ok((action, log_prob, value))
    }

    fn log_prob_of(&self, mean: &[f64], action: &[f64]) -> f64 {
        mean.iter()
            .zip(action)
            .enumerate()
            .map(|(d, (&m, &a))| gauss_log_pdf(a, m, self.log_std[d]))
            .sum()
    }

    /// Clipped-surrogate update over a finished rollout. Returns the mean
    /// policy loss and mean value loss of the final pass.
    pub fn update(&mut self, rollout: &[RolloutStep], last_value: f64, rng: &mut impl Rng) -> Result<(f64, f64)> {
        if rollout.is_empty() {
            return Err(Error::Usage("empty rollout".into()));
        }
        for (i, step) in rollout.iter().enumerate() {
            if !step.log_prob.is_finite() {
                return Err(Error::Usage(format!("rollout step {} has no stored log-prob", i)));
            }
        }
        let (advantages, returns) = gae(rollout, last_value, self.cfg.gamma, self.cfg.lam);
        let adv = normalize(&advantages);
        let n = rollout.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut policy_loss_out = 0.0;
        let mut value_loss_out = 0.0;
        'passes: for _ in 0..self.cfg.update_epochs {
            shuffle(&mut order, rng);
            let mut pl_sum = 0.0;
            let mut vl_sum = 0.0;
            for chunk in order.chunks(self.cfg.minibatch.max(1)) {
                let (pl, vl, kl) = self.minibatch_step(rollout, &adv, &returns, chunk)?;
                pl_sum += pl * chunk.len() as f64;
                vl_sum += vl * chunk.len() as f64;
                if kl > self.cfg.kl_limit {
                    break 'passes;
                }
            }
            policy_loss_out = pl_sum / n as f64;
            value_loss_out = vl_sum / n as f64;
        }
        Ok((policy_loss_out, value_loss_out))
    }

    fn minibatch_step(
        &mut self,
        rollout: &[RolloutStep],
        adv: &[f64],
        returns: &[f64],
        idx: &[usize],
    ) -> Result<(f64, f64, f64)> {
        let act_dim = self.act_dim();
        let mut pgrads = Gradients::zeros(&self.policy);
        let mut vgrads = Gradients::zeros(&self.value);
        let mut ls_grad = vec![0.0; act_dim];
        let mut pl_sum = 0.0;
        let mut vl_sum = 0.0;
        let mut kl_sum = 0.0;
        for &i in idx {
            let step = &rollout[i];
            let (mean, pcache) = forward_cached(&self.policy, &step.obs);
            let new_lp = self.log_prob_of(&mean, &step.action);
            kl_sum += step.log_prob - new_lp;
            let ratio = (new_lp - step.log_prob).exp();
            let clipped = ratio.clamp(1.0 - self.cfg.clip, 1.0 + self.cfg.clip);
            let a = adv[i];
            // loss = -min(ratio * a, clipped * a); gradient flows through the
            // unclipped branch only when it is the active minimum.
            let unclipped_active = ratio * a <= clipped * a + 1e-12;
            pl_sum += -(ratio * a).min(clipped * a);
            if unclipped_active {
                // d(-ratio*a)/d(mean_d) = -ratio * a * d(log_prob)/d(mean_d)
                let mut dmean = vec![0.0; act_dim];
                for d in 0..act_dim {
                    let std = self.log_std[d].exp();
                    let z = (step.action[d] - mean[d]) / (std * std);
                    dmean[d] = -ratio * a * z;
                    // d(log_prob)/d(log_std) = z^2 * std^2 - 1 = ((a-m)/std)^2 - 1
                    let zn = (step.action[d] - mean[d]) / std;
                    ls_grad[d] += -ratio * a * (zn * zn - 1.0);
                }
                backward(&self.policy, &pcache, &dmean, &mut pgrads);
            }
            // entropy bonus: H = sum(log_std) + const, so -coef * dH/dlog_std = -coef
            for g in ls_grad.iter_mut() {
                *g -= self.cfg.entropy_coef;
            }
            let (v, vcache) = forward_cached(&self.value, &step.obs);
            let verr = v[0] - returns[i];
            vl_sum += verr * verr;
            backward(&self.value, &vcache, &[2.0 * self.cfg.value_coef * verr], &mut vgrads);
        }
        let inv = 1.0 / idx.len() as f64;
        pgrads.scale(inv);
        vgrads.scale(inv);
        for g in ls_grad.iter_mut() {
            *g *= inv;
        }
        self.policy_opt.step(&mut self.policy, &pgrads);
        self.value_opt.step(&mut self.value, &vgrads);
        self.log_std_opt.step_vec(&mut self.log_std, &ls_grad);
        for ls in self.log_std.iter_mut() {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok((pl_sum * inv, vl_sum * inv, kl_sum * inv))
    }
}

fn gauss_log_pdf(x: f64, mean: f64, log_std: f64) -> f64 {
    let std = log_std.exp();
    let z = (x - mean) / std;
    -0.5 * z * z - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Generalized advantage estimation; returns (advantages, value targets).
pub fn gae(rollout: &[RolloutStep], last_value: f64, gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rollout.len();
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        let next_value = if rollout[i].done {
            0.0
        } else if i + 1 < n {
            rollout[i + 1].value
        } else {
            last_value
        };
        let delta = rollout[i].reward + gamma * next_value - rollout[i].value;
        acc = delta + if rollout[i].done { 0.0 } else { gamma * lam * acc };
        advantages[i] = acc;
    }
    let returns: Vec<f64> = advantages.iter().zip(rollout).map(|(a, s)| a + s.value).collect();
    (advantages, returns)
}

fn normalize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    xs.iter().map(|x| (x - mean) / std).collect()
}

fn shuffle(order: &mut [usize], rng: &mut impl Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}
