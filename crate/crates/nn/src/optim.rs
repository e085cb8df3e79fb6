use serde::{Deserialize, Serialize};

use crate::{Gradients, NnError, ParamStore, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale gradients whose global norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1.2e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidArgument(format!("bad optimizer config {self:?}")))
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: OptimizerConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<T>) -> Result<Self, NnError> {
        config.validate()?;
        let zeros = |id| {
            let (r, c) = store.get(id).shape();
            Tensor::zeros(r, c)
        };
        Ok(AdamW {
            config,
            step: 0,
            m: store.ids().map(zeros).collect(),
            v: store.ids().map(zeros).collect(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. Parameters without a gradient, and frozen ones,
    /// are left untouched (no decay either).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        if self.m.len() != store.len() {
            return Err(NnError::InvalidArgument(format!(
                "optimizer built for {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (id, g) in grads.params() {
            if g.shape() != store.get(id).shape() {
                return Err(NnError::ShapeMismatch {
                    op: "AdamW::step",
                    left: store.get(id).shape(),
                    right: g.shape(),
                });
            }
        }
        let c = self.config;
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = grads.norm().to_f64().unwrap();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let f = T::from_f64_lossy;
        let (b1, b2, eps, lr, wd) = (f(c.beta1), f(c.beta2), f(c.eps), f(c.learning_rate), f(c.weight_decay));
        let bc1 = T::one() / (T::one() - b1.powi(t));
        let bc2 = T::one() / (T::one() - b2.powi(t));
        let clip = f(clip);
        for (id, g) in grads.params() {
            if store.is_frozen(id) {
                continue;
            }
            let p = store.get_mut(id).data_mut();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i] * clip;
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mhat = m[i] * bc1;
                let vhat = v[i] * bc2;
                p[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * p[i]);
            }
        }
        Ok(())
    }
}
