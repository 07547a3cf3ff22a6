//! Finite-difference oracles and small fixtures shared by the integration
//! tests.
#![allow(dead_code)]

use pikan_core::diff::Objective;

/// Central-difference gradient of `f` with a step scaled to each coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, p: &[f64], h: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            let hi = h * p[i].abs().max(1.0);
            q[i] = p[i] + hi;
            let up = f(&q);
            q[i] = p[i] - hi;
            let down = f(&q);
            q[i] = p[i];
            (up - down) / (2.0 * hi)
        })
        .collect()
}

pub fn fd_objective_gradient<O: Objective>(obj: &O, p: &[f64], h: f64) -> Vec<f64> {
    fd_gradient(|q| obj.value(q).expect("finite loss"), p, h)
}

/// First and second derivative of a scalar function of one variable by
/// central differences with step `h`.
pub fn fd_derivs(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let (up, mid, down) = (f(x + h), f(x), f(x - h));
    ((up - down) / (2.0 * h), (up - 2.0 * mid + down) / (h * h))
}

/// `‖a − b‖∞ / ‖b‖∞`, with a tiny floor on the denominator.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-12);
    num / den
}

/// Smallest relative error over a ladder of step sizes. Truncation error
/// shrinks with `h` and rounding error grows, so the best rung is the
/// oracle's own accuracy.
pub fn best_over_steps(steps: &[f64], mut err: impl FnMut(f64) -> f64) -> f64 {
    steps.iter().map(|&h| err(h)).fold(f64::INFINITY, f64::min)
}

pub mod oracles;
