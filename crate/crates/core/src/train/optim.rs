//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use crate::swin::ParamStore;
use crate::tensor::Element;
use crate::{Error, Result};

pub const ADAM_EPS: f64 = 1e-8;

/// `lr0 * (1 + cos(pi * epoch / total)) / 2`, never negative.
pub fn cosine_anneal_lr(epoch: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 || epoch >= total {
        return 0.0;
    }
    (lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos()) / 2.0).max(0.0)
}

/// Moment buffers mirroring a parameter store, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Element> AdamW<T> {
    pub fn new(params: &ParamStore<T>, betas: [f64; 2], weight_decay: f64) -> Self {
        let zeros = || {
            let mut s = ParamStore::default();
            for (name, p) in params.iter() {
                s.insert(name, p.shape.clone(), vec![T::zero(); p.data.len()])
                    .expect("names come from a store");
            }
            s
        };
        Self {
            beta1: betas[0],
            beta2: betas[1],
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of every parameter. `grads` follows the store's order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || params.len() != self.m.len() {
            return Err(Error::Format(format!(
                "adamw: {} grads for {} params ({} moment buffers)",
                grads.len(),
                params.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let (lr, wd, eps) = (T::of(lr), T::of(self.weight_decay), T::of(ADAM_EPS));
        let one = T::one();
        let moments = self.m.iter_mut().zip(self.v.iter_mut());
        for (((name, p), g), ((_, m), (_, v))) in params.iter_mut().zip(grads).zip(moments) {
            if g.len() != p.data.len() || m.data.len() != p.data.len() {
                return Err(Error::Format(format!("adamw: shape mismatch for {name}")));
            }
            for i in 0..g.len() {
                m.data[i] = b1 * m.data[i] + (one - b1) * g[i];
                v.data[i] = b2 * v.data[i] + (one - b2) * g[i] * g[i];
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                let x = p.data[i];
                p.data[i] = x - lr * (m_hat / (v_hat.sqrt() + eps) + wd * x);
            }
        }
        Ok(())
    }
}
