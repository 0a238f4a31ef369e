//! AdamW with a linear warm-up / linear decay learning-rate schedule.

use crate::autodiff::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Learning rate at 1-based step `k`: `(k/warmup)·base` during warm-up, then
/// linear decay reaching 0 at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base: f64,
    pub warmup: usize,
    pub total: usize,
}

impl Schedule {
    pub fn lr(&self, k: usize) -> f64 {
        if k == 0 || k > self.total {
            return 0.0;
        }
        if k <= self.warmup {
            return self.base * k as f64 / self.warmup as f64;
        }
        let span = (self.total - self.warmup) as f64;
        self.base * (self.total - k) as f64 / span
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamW {
    pub fn new(store: &ParamStore<f32>, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. Parameters without a gradient keep their moments and only
    /// see weight decay.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &Gradients<f32>, lr: f64) -> Result<()> {
        if self.m.len() != store.len() || grads.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                store.len()
            )));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (lr32, wd, eps) = (lr as f32, self.weight_decay as f32, self.eps as f32);
        let (c1, c2) = (c1 as f32, c2 as f32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let p = store.get_mut(id).data_mut();
            let Some(g) = grads.get(id) else {
                for x in p.iter_mut() {
                    *x -= lr32 * wd * *x;
                }
                continue;
            };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((x, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let update = (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *x -= lr32 * (update + wd * *x);
            }
        }
        Ok(())
    }
}
