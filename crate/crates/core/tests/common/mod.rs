//! Shared test oracles. The finite-difference gradient here is the
//! independent check for every analytic gradient in the crate; it only ever
//! evaluates the scalar function it is given.

#![allow(dead_code)]

use dpa_grpo::policy::{Observation, PolicyParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of `f` at `x`.
pub fn finite_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let original = work[i];
            work[i] = original + step;
            let plus = f(&work);
            work[i] = original - step;
            let minus = f(&work);
            work[i] = original;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Worst relative disagreement between an analytic and a numeric gradient,
/// with a small absolute floor so exact zeros compare cleanly.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn random_params(
    layout: dpa_grpo::policy::PolicyLayout,
    rng: &mut ChaCha8Rng,
    scale: f64,
) -> PolicyParams {
    let values = (0..layout.param_len())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    PolicyParams { layout, values }
}

pub fn random_obs(dim: usize, rng: &mut ChaCha8Rng) -> Observation {
    Observation::new((0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
}
