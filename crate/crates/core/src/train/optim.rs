//! Adam with per-group learning-rate schedules.

use crate::params::{ParamGroup, ParamStore};

/// Linear warmup to `base`, constant afterwards, and `swa` from
/// `swa_start_epoch` (1-based) on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base: f64,
    pub warmup_epochs: f64,
    pub swa: f64,
    /// First epoch trained at the averaging rate; past the last epoch
    /// disables it.
    pub swa_start_epoch: usize,
}

impl Schedule {
    /// Rate at fractional training progress `t` (in epochs) during the
    /// 1-based `epoch`. `t = 0` gives 0; `t = warmup_epochs` gives `base`.
    pub fn lr(&self, t: f64, epoch: usize) -> f64 {
        if epoch >= self.swa_start_epoch {
            self.swa
        } else if t < self.warmup_epochs {
            self.base * t / self.warmup_epochs
        } else {
            self.base
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: i32,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One update; `grads` is aligned with the store's registry order and
    /// `lr` gives the rate of each parameter group.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: impl Fn(ParamGroup) -> f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.group)).collect();
        for (id, group) in ids {
            let i = id.index();
            let rate = lr(group);
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for ((w, (mk, vk)), &gk) in store
                .value_mut(id)
                .data_mut()
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(g)
            {
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let mh = *mk / c1;
                let vh = *vk / c2;
                *w -= rate * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
