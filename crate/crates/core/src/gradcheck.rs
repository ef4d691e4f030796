//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the checks stay independent
//! of the hand-written backward passes they verify.

use rand::seq::index::sample;
use rand::Rng;

use crate::nn::{Grads, HasParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    /// Perturbation half-width.
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Entries probed per tensor; `None` probes every entry.
    pub per_tensor: Option<usize>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: 1e-6,
            floor: 1e-5,
            per_tensor: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub probed: usize,
}

impl CheckReport {
    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64, floor: f64) {
        let rel = relative_error(analytic, numeric, floor);
        self.probed += 1;
        if rel >= self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", what());
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn probe_indices<R: Rng + ?Sized>(len: usize, per_tensor: Option<usize>, rng: &mut R) -> Vec<usize> {
    match per_tensor {
        Some(k) if k < len => sample(rng, len, k).into_vec(),
        _ => (0..len).collect(),
    }
}

/// Compares `analytic` parameter gradients against central differences
/// of `loss` for the parameters whose names start with `prefix`.
pub fn check_params<M, R>(
    model: &mut M,
    analytic: &Grads,
    prefix: &str,
    loss: impl Fn(&M) -> f64,
    opts: CheckOptions,
    rng: &mut R,
) -> CheckReport
where
    M: HasParams,
    R: Rng + ?Sized,
{
    let mut report = CheckReport::default();
    let ids = model.params().ids_with_prefix(prefix);
    for id in ids {
        let name = model.params().names()[id.0].clone();
        let len = model.params().get(id).len();
        for i in probe_indices(len, opts.per_tensor, rng) {
            let orig = model.params().get(id).data()[i];
            model.params_mut().get_mut(id).data_mut()[i] = orig + opts.step;
            let up = loss(model);
            model.params_mut().get_mut(id).data_mut()[i] = orig - opts.step;
            let down = loss(model);
            model.params_mut().get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.get(id).data()[i];
            report.record(|| format!("{name}[{i}]"), a, numeric, opts.floor);
        }
    }
    report
}

/// Compares an analytic input gradient against central differences.
pub fn check_input<R: Rng + ?Sized>(
    x: &Tensor,
    analytic: &Tensor,
    loss: impl Fn(&Tensor) -> f64,
    opts: CheckOptions,
    rng: &mut R,
) -> CheckReport {
    let mut report = CheckReport::default();
    let mut probe = x.clone();
    for i in probe_indices(x.len(), opts.per_tensor, rng) {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + opts.step;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - opts.step;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        report.record(|| format!("input[{i}]"), analytic.data()[i], numeric, opts.floor);
    }
    report
}

/// Fixed random projection used to turn a tensor output into a scalar loss.
pub fn random_projection<R: Rng + ?Sized>(shape: (usize, usize, usize), rng: &mut R) -> Tensor {
    Tensor::from_fn(shape.0, shape.1, shape.2, |_, _, _| rng.gen_range(-1.0..1.0))
}

/// `sum(y ⊙ w)`.
pub fn project(y: &Tensor, w: &Tensor) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}
