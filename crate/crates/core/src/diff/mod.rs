//! Exact derivatives: time jets for the physics residual and parameter
//! gradients for the optimizers.
//!
//! Network code propagates [`Jet2`] values forward and then runs a
//! hand-written adjoint sweep over those jets, so every loss exposes its
//! gradient through the [`Objective`] trait. [`Tape`] covers losses written
//! as plain closures.

mod jet;
mod tape;

pub use jet::{silu_derivs, tanh_derivs, Jet2};
pub use tape::{sum, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("parameter vector has length {got}, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite parameter at index {0}")]
    NonFiniteParam(usize),
    #[error("loss evaluated to a non-finite value ({0})")]
    NonFiniteLoss(f64),
}

/// A scalar loss over a flat parameter vector with an exact gradient.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, p: &[f64]) -> Result<f64, DiffError> {
        let mut g = vec![0.0; self.dim()];
        self.value_and_gradient(p, &mut g)
    }

    /// Writes the gradient into `grad` (overwriting it) and returns the loss.
    fn value_and_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<f64, DiffError>;
}

/// Gradient of `loss` at `p`, validating shapes and finiteness.
pub fn loss_gradient<O: Objective + ?Sized>(loss: &O, p: &[f64]) -> Result<Vec<f64>, DiffError> {
    if p.len() != loss.dim() {
        return Err(DiffError::Shape { expected: loss.dim(), got: p.len() });
    }
    if let Some(i) = p.iter().position(|v| !v.is_finite()) {
        return Err(DiffError::NonFiniteParam(i));
    }
    let mut g = vec![0.0; p.len()];
    let v = loss.value_and_gradient(p, &mut g)?;
    if !v.is_finite() {
        return Err(DiffError::NonFiniteLoss(v));
    }
    Ok(g)
}

/// Adapts a closure over tape variables into an [`Objective`].
pub struct ClosureObjective<F> {
    dim: usize,
    f: F,
}

impl<F> ClosureObjective<F>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Objective for ClosureObjective<F>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<f64, DiffError> {
        if p.len() != self.dim {
            return Err(DiffError::Shape { expected: self.dim, got: p.len() });
        }
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = p.iter().map(|&v| tape.var(v)).collect();
        let out = (self.f)(&tape, &vars);
        let adj = tape.backward(out);
        for (g, v) in grad.iter_mut().zip(&vars) {
            *g = adj[v.index()];
        }
        if !out.value().is_finite() {
            return Err(DiffError::NonFiniteLoss(out.value()));
        }
        Ok(out.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let obj = ClosureObjective::new(2, |t, x| sum(t, &x.iter().map(|v| *v * *v).collect::<Vec<_>>()));
        assert_eq!(loss_gradient(&obj, &[1.0, -2.0]).unwrap(), vec![2.0, -4.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let obj = ClosureObjective::new(3, |t, _x| t.constant(4.0));
        assert_eq!(loss_gradient(&obj, &[0.3, 1.0, -7.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn errors_propagate() {
        let obj = ClosureObjective::new(1, |_t, x| x[0].ln());
        assert!(matches!(loss_gradient(&obj, &[-1.0]), Err(DiffError::NonFiniteLoss(_))));
        assert!(matches!(loss_gradient(&obj, &[1.0, 2.0]), Err(DiffError::Shape { .. })));
        assert_eq!(loss_gradient(&obj, &[f64::NAN]), Err(DiffError::NonFiniteParam(0)));
    }
}
