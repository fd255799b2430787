use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::float::Float;
use crate::tensor::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Adam with beta 0.9 / 0.999.
    Adam,
    /// SGD with momentum 0.9.
    SgdMomentum,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            other => Err(format!("unknown optimizer '{other}' (adam, sgd-momentum)")),
        }
    }
}

/// Optimizer state is kept per tensor name, so the set of trainable tensors
/// may change between steps.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    steps: u64,
    state: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Float> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
            steps: 0,
            state: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [(String, &mut Param<T>)]) {
        self.steps += 1;
        let t = self.steps as i32;
        for (name, p) in params.iter_mut() {
            let n = p.value.len();
            let (m, v) = self
                .state
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            match self.kind {
                OptimizerKind::Adam => {
                    let (b1, b2) = (self.beta1, self.beta2);
                    let step = self.lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
                    for i in 0..n {
                        let g = p.grad[i].f64();
                        let mi = b1 * m[i].f64() + (1.0 - b1) * g;
                        let vi = b2 * v[i].f64() + (1.0 - b2) * g * g;
                        m[i] = T::of(mi);
                        v[i] = T::of(vi);
                        p.value[i] = T::of(p.value[i].f64() - step * mi / (vi.sqrt() + self.eps));
                    }
                }
                OptimizerKind::SgdMomentum => {
                    for i in 0..n {
                        let mi = self.momentum * m[i].f64() + p.grad[i].f64();
                        m[i] = T::of(mi);
                        p.value[i] = T::of(p.value[i].f64() - self.lr * mi);
                    }
                }
            }
        }
    }
}
