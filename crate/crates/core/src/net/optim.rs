//! First-order optimizers. Updates go straight into the shared layer storage,
//! so the spiking path sees them on the next forward pass.

use crate::error::{Result, TandemError};
use crate::net::{GradientSet, TandemNetwork};

pub trait Optimizer {
    fn step(&mut self, net: &mut TandemNetwork, grads: &GradientSet, lr: f64) -> Result<()>;
}

/// Parameter slices of a network paired with their gradients, in a fixed order.
fn for_each_param(
    net: &mut TandemNetwork,
    grads: &GradientSet,
    mut f: impl FnMut(usize, &mut [f64], &[f64], bool),
) -> Result<()> {
    if grads.layers.len() != net.layers().len() {
        return Err(TandemError::State(format!(
            "{} gradient layers for {} network layers",
            grads.layers.len(),
            net.layers().len()
        )));
    }
    let mut slot = 0;
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        if g.weights.len() != layer.weights.len() || g.bias.len() != layer.bias.len() {
            return Err(TandemError::State(
                "gradient shapes do not match the network".into(),
            ));
        }
        f(slot, layer.weights.data_mut(), &g.weights, true);
        f(slot + 1, layer.bias.data_mut(), &g.bias, false);
        slot += 2;
        if let (Some(bn), Some(dg), Some(db)) = (layer.bn.as_mut(), &g.gamma, &g.beta) {
            f(slot, &mut bn.gamma, dg, false);
            f(slot + 1, &mut bn.beta, db, false);
        }
        slot += 2;
    }
    Ok(())
}

fn ensure_sizes(buffers: &mut Vec<Vec<f64>>, slot: usize, len: usize) -> &mut Vec<f64> {
    if buffers.len() <= slot {
        buffers.resize_with(slot + 1, Vec::new);
    }
    if buffers[slot].len() != len {
        buffers[slot] = vec![0.0; len];
    }
    &mut buffers[slot]
}

/// Classical momentum: `v ← μ·v + g + λ·w`, `w ← w − lr·v`. Weight decay
/// applies to weights only.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, net: &mut TandemNetwork, grads: &GradientSet, lr: f64) -> Result<()> {
        grads.ensure_finite()?;
        let (mu, wd) = (self.momentum, self.weight_decay);
        let velocity = &mut self.velocity;
        for_each_param(net, grads, |slot, params, g, decays| {
            let v = ensure_sizes(velocity, slot, params.len());
            for ((p, &gi), vi) in params.iter_mut().zip(g).zip(v.iter_mut()) {
                let grad = if decays { gi + wd * *p } else { gi };
                *vi = mu * *vi + grad;
                *p -= lr * *vi;
            }
        })
    }
}

/// One momentum-SGD update with a fresh optimizer state.
pub fn sgd_step(
    net: &mut TandemNetwork,
    grads: &GradientSet,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    Sgd::new(momentum, weight_decay).step(net, grads, lr)
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, net: &mut TandemNetwork, grads: &GradientSet, lr: f64) -> Result<()> {
        grads.ensure_finite()?;
        self.t += 1;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.epsilon, self.weight_decay);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        for_each_param(net, grads, |slot, params, g, decays| {
            ensure_sizes(ms, slot, params.len());
            ensure_sizes(vs, slot, params.len());
            let (m, v) = (&mut ms[slot], &mut vs[slot]);
            for i in 0..params.len() {
                let grad = if decays { g[i] + wd * params[i] } else { g[i] };
                m[i] = b1 * m[i] + (1.0 - b1) * grad;
                v[i] = b2 * v[i] + (1.0 - b2) * grad * grad;
                params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        })
    }
}
