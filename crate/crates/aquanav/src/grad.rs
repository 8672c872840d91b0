//! Reverse-mode gradients and Adam for the small MLPs trained here.

use crate::nn::{Activation, Network};

/// Cached activations from a forward pass, for one input.
pub struct ForwardCache {
    /// inputs[0] is the network input; inputs[l+1] the post-activation of layer l.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pub preacts: Vec<Vec<f64>>,
}

pub fn forward_cached(net: &Network, input: &[f64]) -> (Vec<f64>, ForwardCache) {
    let mut inputs = vec![input.to_vec()];
    let mut preacts = Vec::with_capacity(net.layers().len());
    let mut cur = input.to_vec();
    for layer in net.layers() {
        let pre = layer.affine(&cur);
        cur = pre.iter().map(|&v| layer.activation.apply(v)).collect();
        preacts.push(pre);
        inputs.push(cur.clone());
    }
    (cur, ForwardCache { inputs, preacts })
}

fn activation_grad(act: Activation, pre: f64, post: f64) -> f64 {
    match act {
        Activation::Relu => {
            if pre > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Linear => 1.0,
        Activation::Tanh => 1.0 - post * post,
    }
}

/// Per-layer weight and bias gradients, same shapes as the network.
pub struct Gradients {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(net: &Network) -> Self {
        Gradients {
            weights: net
                .layers()
                .iter()
                .map(|l| vec![vec![0.0; l.in_dim()]; l.out_dim()])
                .collect(),
            bias: net.layers().iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for lw in &mut self.weights {
            for row in lw {
                for v in row {
                    *v *= c;
                }
            }
        }
        for lb in &mut self.bias {
            for v in lb {
                *v *= c;
            }
        }
    }
}

/// Accumulate dLoss/dparams for one sample into `grads`; `dout` is dLoss/d(output).
pub fn backward(net: &Network, cache: &ForwardCache, dout: &[f64], grads: &mut Gradients) {
    let mut delta: Vec<f64> = dout.to_vec();
    for (l, layer) in net.layers().iter().enumerate().rev() {
        // delta currently holds dLoss/d(post-activation of layer l)
        for i in 0..layer.out_dim() {
            delta[i] *= activation_grad(layer.activation, cache.preacts[l][i], cache.inputs[l + 1][i]);
        }
        let input = &cache.inputs[l];
        for i in 0..layer.out_dim() {
            let d = delta[i];
            grads.bias[l][i] += d;
            let row = &mut grads.weights[l][i];
            for (g, x) in row.iter_mut().zip(input) {
                *g += d * x;
            }
        }
        if l > 0 {
            let mut prev = vec![0.0; layer.in_dim()];
            for i in 0..layer.out_dim() {
                let d = delta[i];
                for (p, w) in prev.iter_mut().zip(&layer.weights[i]) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
    }
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, param_count: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; param_count], v: vec![0.0; param_count] }
    }

    /// One descent step; gradient laid out in the genome's canonical order.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let mut k = 0;
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            for (i, row) in layer.weights.iter_mut().enumerate() {
                for (j, w) in row.iter_mut().enumerate() {
                    let g = grads.weights[l][i][j];
                    self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
                    self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
                    *w -= lr * (self.m[k] / bc1) / ((self.v[k] / bc2).sqrt() + eps);
                    k += 1;
                }
            }
            for (i, b) in layer.bias.iter_mut().enumerate() {
                let g = grads.bias[l][i];
                self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
                self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
                *b -= lr * (self.m[k] / bc1) / ((self.v[k] / bc2).sqrt() + eps);
                k += 1;
            }
        }
    }

    /// Adam over a raw parameter vector (used for the policy log-std).
    pub fn step_vec(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / bc1;
            let vh = self.v[k] / bc2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Arch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Finite-difference check of backward on a random small net.
    #[test]
    fn gradients_match_finite_differences() {
        let arch = Arch { input_dim: 3, layers: vec![(5, Activation::Relu), (2, Activation::Linear)] };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = Network::init(&arch, &mut rng);
        let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // loss = sum of outputs squared
        let loss_of = |n: &Network| -> f64 {
            n.forward(&input).unwrap().iter().map(|v| v * v).sum::<f64>()
        };
        let (out, cache) = forward_cached(&net, &input);
        let dout: Vec<f64> = out.iter().map(|v| 2.0 * v).collect();
        let mut grads = Gradients::zeros(&net);
        backward(&net, &cache, &dout, &mut grads);
        let eps = 1e-6;
        let genome = net.flatten();
        for k in (0..genome.0.len()).step_by(3) {
            let mut plus = genome.clone();
            plus.0[k] += eps;
            let mut minus = genome.clone();
            minus.0[k] -= eps;
            let fd = (loss_of(&Network::unflatten(&arch, &plus).unwrap())
                - loss_of(&Network::unflatten(&arch, &minus).unwrap()))
                / (2.0 * eps);
            // locate parameter k in the gradient structure via flatten order
            let mut flat = Vec::new();
            for (l, lw) in grads.weights.iter().enumerate() {
                for row in lw {
                    flat.extend_from_slice(row);
                }
                flat.extend_from_slice(&grads.bias[l]);
            }
            assert!((flat[k] - fd).abs() < 1e-5, "param {}: analytic {} vs fd {}", k, flat[k], fd);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let arch = Arch { input_dim: 1, layers: vec![(1, Activation::Linear)] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Network::init(&arch, &mut rng);
        let mut opt = Adam::new(0.05, arch.param_count());
        // fit y = 2x + 1 on a few points
        let data = [(-1.0, -1.0), (0.0, 1.0), (1.0, 3.0), (0.5, 2.0)];
        for _ in 0..2000 {
            let mut grads = Gradients::zeros(&net);
            for &(x, y) in &data {
                let (out, cache) = forward_cached(&net, &[x]);
                backward(&net, &cache, &[2.0 * (out[0] - y)], &mut grads);
            }
            grads.scale(1.0 / data.len() as f64);
            opt.step(&mut net, &grads);
        }
        let w = net.layers()[0].weights[0][0];
        let b = net.layers()[0].bias[0];
        assert!((w - 2.0).abs() < 1e-3 && (b - 1.0).abs() < 1e-3, "w {} b {}", w, b);
    }
}
