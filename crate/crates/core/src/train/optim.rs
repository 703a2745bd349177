use crate::field::GradBuffer;
use crate::grid::{clamp_channel, NodeStore};

use super::OptimizerKind;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.99;
const EPS: f64 = 1e-8;

/// Gradient step on node values, followed by projection onto the legal
/// value ranges. Adam moments are kept per node and channel and only
/// advance for nodes present in the gradient buffer.
#[derive(Clone, Debug)]
pub struct NodeOptimizer {
    kind: OptimizerKind,
    dim: usize,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: Vec<u32>,
}

impl NodeOptimizer {
    pub fn new(kind: OptimizerKind, dim: usize, nodes: usize) -> Self {
        Self::with_eps(kind, dim, nodes, EPS)
    }

    /// `eps` is the Adam denominator floor. Gradients well below it produce
    /// proportionally small steps instead of being normalized up to `lr`.
    pub fn with_eps(kind: OptimizerKind, dim: usize, nodes: usize, eps: f64) -> Self {
        let mut o = Self {
            kind,
            dim,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            steps: Vec::new(),
        };
        o.resize(nodes);
        o
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// New nodes start with zero moments.
    pub fn resize(&mut self, nodes: usize) {
        if self.kind == OptimizerKind::Adam {
            self.m.resize(nodes * self.dim, 0.0);
            self.v.resize(nodes * self.dim, 0.0);
            self.steps.resize(nodes, 0);
        }
    }

    pub fn step(&mut self, store: &mut NodeStore, grads: &GradBuffer, lr: f64) {
        for &n in grads.touched() {
            let ni = n as usize;
            match self.kind {
                OptimizerKind::Sgd => {
                    for ch in 0..self.dim {
                        let v = store.get(n, ch) as f64 - lr * grads.get(n, ch);
                        store.set(n, ch, clamp_channel(ch, v as f32));
                    }
                }
                OptimizerKind::Adam => {
                    self.steps[ni] += 1;
                    let t = self.steps[ni] as i32;
                    let c1 = 1.0 - BETA1.powi(t);
                    let c2 = 1.0 - BETA2.powi(t);
                    for ch in 0..self.dim {
                        let k = ni * self.dim + ch;
                        let g = grads.get(n, ch);
                        self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * g;
                        self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * g * g;
                        let upd = lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
                        let v = store.get(n, ch) as f64 - upd;
                        store.set(n, ch, clamp_channel(ch, v as f32));
                    }
                }
            }
        }
    }
}

/// Adam state for a single scalar parameter.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    pub fn step(&mut self, param: &mut f64, g: f64, lr: f64) {
        self.t += 1;
        self.m = BETA1 * self.m + (1.0 - BETA1) * g;
        self.v = BETA2 * self.v + (1.0 - BETA2) * g * g;
        let mh = self.m / (1.0 - BETA1.powi(self.t));
        let vh = self.v / (1.0 - BETA2.powi(self.t));
        *param -= lr * mh / (vh.sqrt() + EPS);
    }
}
