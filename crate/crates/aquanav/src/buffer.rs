//! Prioritized experience replay backed by a sum tree.

use crate::error::{Error, Result};
use rand::Rng;

/// One (possibly n-step aggregated) transition. `steps` is the horizon the
/// reward already accumulates, so the bootstrap discount is gamma^steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub steps: usize,
}

/// Sum tree over `capacity` slots; leaves hold priority^alpha.
struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        SumTree { capacity, nodes: vec![0.0; 2 * capacity] }
    }

    fn set(&mut self, idx: usize, value: f64) {
        let mut i = idx + self.capacity;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    fn get(&self, idx: usize) -> f64 {
        self.nodes[idx + self.capacity]
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Leaf index whose cumulative range contains `mass` (0 <= mass < total).
    fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.capacity {
            let left = self.nodes[2 * i];
            if mass < left {
                i = 2 * i;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.capacity
    }
}

pub struct PrioritizedBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    tree: SumTree,
    /// Raw (pre-exponent) priorities, to track the max for new entries.
    raw_priorities: Vec<f64>,
    next_slot: usize,
    alpha: f64,
    max_priority: f64,
}

pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    /// Importance-sampling weights, max-normalized so all are <= 1.
    pub weights: Vec<f64>,
}

impl PrioritizedBuffer {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        PrioritizedBuffer {
            capacity,
            storage: Vec::with_capacity(capacity),
            tree: SumTree::new(capacity),
            raw_priorities: Vec::with_capacity(capacity),
            next_slot: 0,
            alpha,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn raw_priority(&self, idx: usize) -> f64 {
        self.raw_priorities[idx]
    }

    /// Insert at max priority so every new transition is sampled at least once.
    pub fn push(&mut self, t: Transition) {
        self.push_with_priority(t, self.max_priority);
    }

    pub fn push_with_priority(&mut self, t: Transition, priority: f64) {
        let priority = priority.max(1e-8);
        if self.storage.len() < self.capacity {
            self.storage.push(t);
            self.raw_priorities.push(priority);
            let idx = self.storage.len() - 1;
            self.tree.set(idx, priority.powf(self.alpha));
        } else {
            let idx = self.next_slot;
            self.storage[idx] = t;
            self.raw_priorities[idx] = priority;
            self.tree.set(idx, priority.powf(self.alpha));
            self.next_slot = (self.next_slot + 1) % self.capacity;
        }
        self.max_priority = self.max_priority.max(priority);
    }

    pub fn set_priority(&mut self, idx: usize, priority: f64) {
        let priority = priority.max(1e-8);
        self.raw_priorities[idx] = priority;
        self.tree.set(idx, priority.powf(self.alpha));
        self.max_priority = self.max_priority.max(priority);
    }

    /// Stratified proportional sampling with IS weights at exponent `beta`.
    pub fn sample(&self, batch: usize, beta: f64, rng: &mut impl Rng) -> Result<SampledBatch> {
        if batch == 0 {
            return Err(Error::Usage("empty batch requested".into()));
        }
        if self.storage.is_empty() {
            return Err(Error::Usage("cannot sample from an empty buffer".into()));
        }
        let total = self.tree.total();
        let n = self.storage.len() as f64;
        let segment = total / batch as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        let mut transitions = Vec::with_capacity(batch);
        for s in 0..batch {
            let mass = (s as f64 + rng.gen::<f64>()) * segment;
            let idx = self.tree.find(mass.min(total * (1.0 - 1e-12))).min(self.storage.len() - 1);
            let prob = self.tree.get(idx) / total;
            indices.push(idx);
            weights.push((n * prob).powf(-beta));
            transitions.push(self.storage[idx].clone());
        }
        let max_w = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= max_w;
        }
        Ok(SampledBatch { indices, transitions, weights })
    }
}
