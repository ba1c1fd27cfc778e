//! Central finite-difference verification of analytic gradients.
//!
//! Runs in `f64` with step `h = 1e-4`. The per-coordinate error is
//! `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`; the check
//! passes when the worst coordinate is within `tol_rel`.
//!
//! A coordinate whose `±h` evaluations land on different ReLU sign patterns
//! straddles a kink, where a central difference is not a derivative. Such
//! coordinates are skipped and counted; the check fails if more than
//! `MAX_KINK_FRACTION` of them are skipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{record_relu_pattern, Module, Parameters};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-3;
/// Keeps the relative error meaningful for gradients that are exactly zero.
pub const REL_FLOOR: f64 = 1e-6;
pub const MAX_KINK_FRACTION: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index (or `tensor:coord` label) of the worst coordinate.
    pub worst: String,
    pub checked: usize,
    /// Coordinates skipped because the step crossed a ReLU kink.
    pub kinks: usize,
    pub passed: bool,
    pub failure: Option<String>,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport { max_rel_err: 0.0, worst: String::new(), checked: 0, kinks: 0, passed: true, failure: None }
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if !err.is_finite() || err > self.max_rel_err {
            self.max_rel_err = if err.is_finite() { err } else { f64::INFINITY };
            self.worst = label();
        }
    }

    fn fail(&mut self, msg: String) {
        self.passed = false;
        if self.failure.is_none() {
            self.failure = Some(msg);
        }
    }

    fn finish(mut self, tol: f64) -> Self {
        if self.max_rel_err > tol {
            self.passed = false;
        }
        let total = self.checked + self.kinks;
        if total > 0 && self.kinks as f64 > MAX_KINK_FRACTION * total as f64 {
            self.fail(format!("{} of {total} coordinates straddle a ReLU kink", self.kinks));
        }
        self
    }
}

/// Checks `f`, which returns `(value, analytic gradient)` at `x`, against
/// central differences on every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, tol_rel: f64) -> GradCheckReport
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let mut rep = GradCheckReport::new();
    let (v0, grad) = f(x);
    if !v0.is_finite() {
        rep.fail("non-finite value at the base point".into());
        return rep;
    }
    if grad.shape() != x.shape() {
        rep.fail(format!("gradient shape {:?} != input shape {:?}", grad.shape(), x.shape()));
        return rep;
    }
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let ((fp, _), kp) = record_relu_pattern(|| f(&probe));
        probe.data_mut()[i] = orig - FD_STEP;
        let ((fm, _), km) = record_relu_pattern(|| f(&probe));
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            rep.fail(format!("non-finite output when perturbing coordinate {i}"));
            continue;
        }
        if kp != km {
            rep.kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        rep.record(|| i.to_string(), grad.data()[i], numeric);
    }
    rep.finish(tol_rel)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Input-gradient check of a module composed with a random linear
/// functional, at a random input of `shape`.
pub fn check_module_input<M: Module<f64>>(m: &M, shape: &[usize], seed: u64, tol: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(shape, &mut rng);
    check_module_input_at(m, &x, seed ^ 0xABCD, tol)
}

pub fn check_module_input_at<M: Module<f64>>(m: &M, x: &Tensor<f64>, seed: u64, tol: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, _) = match m.forward(x) {
        Ok(out) => out,
        Err(e) => {
            let mut rep = GradCheckReport::new();
            rep.fail(e.to_string());
            return rep;
        }
    };
    let r = random_tensor(y.shape(), &mut rng);
    grad_check(
        |x| {
            let (y, cache) = m.forward(x).expect("forward failed during grad check");
            (dot(&y, &r), m.backward(&cache, &r, None))
        },
        x,
        tol,
    )
}

/// Parameter-gradient check: perturbs up to `per_tensor` evenly spaced
/// coordinates of every learnable tensor.
pub fn check_module_params<M>(m: &M, shape: &[usize], seed: u64, tol: f64, per_tensor: usize) -> GradCheckReport
where
    M: Module<f64> + Parameters<f64> + Clone,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(shape, &mut rng);
    let mut rep = GradCheckReport::new();
    let (y, cache) = match m.forward(&x) {
        Ok(out) => out,
        Err(e) => {
            rep.fail(e.to_string());
            return rep;
        }
    };
    let r = random_tensor(y.shape(), &mut rng);
    let mut grads = m.clone();
    grads.zero_();
    m.backward(&cache, &r, Some(&mut grads));

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    grads.visit("", &mut |name, t| analytic.push((name.to_string(), t.data().to_vec())));

    let eval = |model: &M| -> f64 { dot(&model.forward(&x).expect("forward failed").0, &r) };
    let mut probe = m.clone();
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let stride = (g.len() / per_tensor.max(1)).max(1);
        for coord in (0..g.len()).step_by(stride) {
            let shift = |model: &mut M, delta: f64| {
                let mut idx = 0;
                model.visit_mut("", &mut |_, t| {
                    if idx == ti {
                        t.data_mut()[coord] += delta;
                    }
                    idx += 1;
                });
            };
            shift(&mut probe, FD_STEP);
            let (fp, kp) = record_relu_pattern(|| eval(&probe));
            shift(&mut probe, -2.0 * FD_STEP);
            let (fm, km) = record_relu_pattern(|| eval(&probe));
            shift(&mut probe, FD_STEP);
            if !fp.is_finite() || !fm.is_finite() {
                rep.fail(format!("non-finite output perturbing {name}[{coord}]"));
                continue;
            }
            if kp != km {
                rep.kinks += 1;
                continue;
            }
            rep.record(|| format!("{name}[{coord}]"), g[coord], (fp - fm) / (2.0 * FD_STEP));
        }
    }
    rep.finish(tol)
}
