use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Grads, ParamStore};
use crate::tensor::Tensor;

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate: `initial * factor^k` after the k-th
/// boundary (in epochs) has been passed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub boundaries: Vec<usize>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            factor: 1.0,
            boundaries: Vec::new(),
        }
    }

    /// Decay by `factor` every `every` epochs up to `epochs`.
    pub fn every(initial: f64, factor: f64, every: usize, epochs: usize) -> Self {
        let boundaries = if every == 0 {
            Vec::new()
        } else {
            (1..).map(|k| k * every).take_while(|&b| b < epochs).collect()
        };
        LrSchedule {
            initial,
            factor,
            boundaries,
        }
    }

    pub fn at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.boundaries.iter().filter(|&&b| epoch >= b).count();
        self.initial * self.factor.powi(passed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let sorted = self.boundaries.windows(2).all(|w| w[0] < w[1]);
        if !(self.initial > 0.0 && self.factor > 0.0 && sorted) {
            return Err(Error::Config(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }
}

/// Adam state for one parameter store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let m: Vec<Tensor> = params.tensors().iter().map(Tensor::zeros_like).collect();
        Adam {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let step = lr * c2.sqrt() / c1;
        let eps_hat = eps * c2.sqrt();
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                *pv -= step * *mv / (vv.sqrt() + eps_hat);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_after_boundary() {
        let s = LrSchedule {
            initial: 1e-4,
            factor: 0.1,
            boundaries: vec![800],
        };
        assert_eq!(s.at_epoch(0), 1e-4);
        assert_eq!(s.at_epoch(799), 1e-4);
        assert!((s.at_epoch(800) - 1e-5).abs() < 1e-20);
        assert!((s.at_epoch(1199) - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn every_builds_boundaries() {
        let s = LrSchedule::every(1e-4, 0.1, 25, 65);
        assert_eq!(s.boundaries, vec![25, 50]);
        assert!((s.at_epoch(64) - 1e-6).abs() < 1e-18);
    }

    /// First Adam step moves each parameter by `lr` against the gradient sign.
    #[test]
    fn first_step_is_sign_times_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let mut g = Grads::zeros_like(&store);
        g.get_mut(id).data_mut().copy_from_slice(&[0.5, -2.0, 1e-3]);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, &g, 0.01);
        let got = store.get(id).data();
        for (v, want) in got.iter().zip([0.99, 2.01, 2.99]) {
            assert!((v - want).abs() < 1e-6, "{v} vs {want}");
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::filled(1, 1, 4, 5.0));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..3000 {
            let mut g = Grads::zeros_like(&store);
            let w = store.get(id).clone();
            *g.get_mut(id) = w.scale(2.0);
            adam.step(&mut store, &g, 0.05);
        }
        assert!(store.get(id).max().abs() < 1e-2);
    }
}
