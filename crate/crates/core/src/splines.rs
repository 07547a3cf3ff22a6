//! Uniform B-spline bases on an extended knot grid.
//!
//! A [`SplineSpec`] with order `k` and `G` intervals over `[a, b]` carries
//! `G + 2k + 1` uniformly spaced knots: the `G + 1` grid points plus `k`
//! extra spacings on each side. It spans `G + k` basis functions, and at any
//! point of `[a, b]` exactly `k + 1` of them are nonzero.
//!
//! Outside `[a, b]` the boundary polynomial pieces are continued, so the
//! basis still sums to one and derivatives never vanish abruptly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported spline order.
pub const MAX_ORDER: usize = 7;

/// Highest derivative order the local evaluator produces.
pub const MAX_DERIV: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("spline order must be in 1..={MAX_ORDER}, got {0}")]
    Order(usize),
    #[error("spline needs at least one interval")]
    Intervals,
    #[error("degenerate spline domain [{0}, {1}]")]
    Domain(f64, f64),
    #[error("non-finite spline argument {0}")]
    NonFinite(f64),
    #[error("derivative order {0} not supported")]
    DerivOrder(usize),
    #[error("expected {expected} coefficients, got {got}")]
    Shape { expected: usize, got: usize },
}

/// Knot grid and order shared by every edge of a KAN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineSpecRepr", into = "SplineSpecRepr")]
pub struct SplineSpec {
    order: usize,
    intervals: usize,
    lo: f64,
    hi: f64,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SplineSpecRepr {
    k_b: usize,
    #[serde(rename = "G")]
    intervals: usize,
    domain: [f64; 2],
}

impl TryFrom<SplineSpecRepr> for SplineSpec {
    type Error = SplineError;
    fn try_from(r: SplineSpecRepr) -> Result<Self, SplineError> {
        SplineSpec::new(r.k_b, r.intervals, r.domain[0], r.domain[1])
    }
}

impl From<SplineSpec> for SplineSpecRepr {
    fn from(s: SplineSpec) -> Self {
        SplineSpecRepr { k_b: s.order, intervals: s.intervals, domain: [s.lo, s.hi] }
    }
}

/// The `k + 1` possibly-nonzero basis functions at a point, with derivatives.
///
/// `ders[r][j]` is the `r`-th derivative of basis function `start + j`.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub start: usize,
    pub len: usize,
    pub ders: [[f64; MAX_ORDER + 1]; MAX_DERIV + 1],
}

impl Default for LocalBasis {
    fn default() -> Self {
        Self { start: 0, len: 0, ders: [[0.0; MAX_ORDER + 1]; MAX_DERIV + 1] }
    }
}

impl LocalBasis {
    /// `Σ_j coeffs[start + j] · B^{(r)}_{start+j}` for `r = 0..=3`.
    #[inline]
    pub fn combine(&self, coeffs: &[f64]) -> [f64; MAX_DERIV + 1] {
        let c = &coeffs[self.start..self.start + self.len];
        let mut out = [0.0; MAX_DERIV + 1];
        for (r, row) in self.ders.iter().enumerate() {
            out[r] = c.iter().zip(&row[..self.len]).map(|(a, b)| a * b).sum();
        }
        out
    }
}

impl SplineSpec {
    pub fn new(order: usize, intervals: usize, lo: f64, hi: f64) -> Result<Self, SplineError> {
        if order == 0 || order > MAX_ORDER {
            return Err(SplineError::Order(order));
        }
        if intervals == 0 {
            return Err(SplineError::Intervals);
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SplineError::Domain(lo, hi));
        }
        let h = (hi - lo) / intervals as f64;
        let knots = (0..intervals + 2 * order + 1)
            .map(|j| lo + (j as f64 - order as f64) * h)
            .collect();
        Ok(Self { order, intervals, lo, hi, knots })
    }

    /// Order `k_b` (equal to the polynomial degree).
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.intervals + self.order
    }

    fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    /// Knot span index `μ` with `x ∈ [t_μ, t_{μ+1})`, clamped to the pieces
    /// covering `[a, b]`.
    pub fn span(&self, x: f64) -> usize {
        let cell = ((x - self.lo) / self.spacing()).floor();
        let last = (self.intervals - 1) as f64;
        let cell = if cell.is_nan() { 0.0 } else { cell.clamp(0.0, last) };
        self.order + cell as usize
    }

    /// Local basis values and derivatives up to `max_deriv` (at most 3).
    ///
    /// Derivative rows above `max_deriv` or above the polynomial degree are
    /// zero.
    pub fn local_basis(&self, x: f64, max_deriv: usize, out: &mut LocalBasis) {
        let p = self.order;
        let n = max_deriv.min(MAX_DERIV);
        let span = self.span(x);
        let u = &self.knots;

        // Triangular table of basis values (upper) and knot differences (lower).
        let mut ndu = [[0.0f64; MAX_ORDER + 1]; MAX_ORDER + 1];
        let mut left = [0.0f64; MAX_ORDER + 1];
        let mut right = [0.0f64; MAX_ORDER + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        out.start = span - p;
        out.len = p + 1;
        out.ders = [[0.0; MAX_ORDER + 1]; MAX_DERIV + 1];
        for j in 0..=p {
            out.ders[0][j] = ndu[j][p];
        }

        let nd = n.min(p);
        let mut a = [[0.0f64; MAX_ORDER + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if rk >= 0 {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize) - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                out.ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=nd {
            for j in 0..=p {
                out.ders[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
    }

    /// All `G + k` basis functions (or a derivative of them) at `x`.
    pub fn basis_all(&self, x: f64, deriv_order: usize) -> Result<Vec<f64>, SplineError> {
        if !x.is_finite() {
            return Err(SplineError::NonFinite(x));
        }
        if deriv_order > 2 {
            return Err(SplineError::DerivOrder(deriv_order));
        }
        let mut lb = LocalBasis::default();
        self.local_basis(x, deriv_order, &mut lb);
        let mut out = vec![0.0; self.num_basis()];
        out[lb.start..lb.start + lb.len].copy_from_slice(&lb.ders[deriv_order][..lb.len]);
        Ok(out)
    }

    /// `Σ_s c_s B_s^{(deriv_order)}(x)`.
    pub fn eval(&self, coeffs: &[f64], x: f64, deriv_order: usize) -> Result<f64, SplineError> {
        if coeffs.len() != self.num_basis() {
            return Err(SplineError::Shape { expected: self.num_basis(), got: coeffs.len() });
        }
        let basis = self.basis_all(x, deriv_order)?;
        Ok(coeffs.iter().zip(&basis).map(|(c, b)| c * b).sum())
    }
}
