use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Truncated second-order Taylor jet `(f, f', f'')` with respect to a single
/// scalar input (time, in this crate).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 { v: 0.0, d1: 0.0, d2: 0.0 };

    pub const fn new(v: f64, d1: f64, d2: f64) -> Self {
        Self { v, d1, d2 }
    }

    pub const fn constant(v: f64) -> Self {
        Self { v, d1: 0.0, d2: 0.0 }
    }

    /// The differentiation variable itself, `(t, 1, 0)`.
    pub const fn variable(v: f64) -> Self {
        Self { v, d1: 1.0, d2: 0.0 }
    }

    /// Chain rule through a scalar function given its value and first two
    /// derivatives at `self.v`.
    #[inline]
    pub fn compose(self, f0: f64, f1: f64, f2: f64) -> Self {
        Self { v: f0, d1: f1 * self.d1, d2: f2 * self.d1 * self.d1 + f1 * self.d2 }
    }

    pub fn scale(self, k: f64) -> Self {
        Self { v: k * self.v, d1: k * self.d1, d2: k * self.d2 }
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(c, -s, -c)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e)
    }

    pub fn tanh(self) -> Self {
        let d = tanh_derivs(self.v);
        self.compose(d[0], d[1], d[2])
    }

    pub fn silu(self) -> Self {
        let d = silu_derivs(self.v);
        self.compose(d[0], d[1], d[2])
    }
}

/// `silu(x) = x·σ(x)` and its first three derivatives.
#[inline]
pub fn silu_derivs(x: f64) -> [f64; 4] {
    let s = sigmoid(x);
    let q = s * (1.0 - s);
    let m = 1.0 - 2.0 * s;
    [
        x * s,
        s + x * q,
        q * (2.0 + x * m),
        q * (m * (3.0 + x * m) - 2.0 * x * q),
    ]
}

/// `tanh(x)` and its first three derivatives.
#[inline]
pub fn tanh_derivs(x: f64) -> [f64; 4] {
    let y = x.tanh();
    let s = 1.0 - y * y;
    [y, s, -2.0 * y * s, s * (6.0 * y * y - 2.0)]
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    #[inline]
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    fn add(self, o: f64) -> Jet2 {
        Jet2 { v: self.v + o, ..self }
    }
}

impl AddAssign for Jet2 {
    #[inline]
    fn add_assign(&mut self, o: Jet2) {
        *self = *self + o;
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    #[inline]
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2 { v: self.v - o.v, d1: self.d1 - o.d1, d2: self.d2 - o.d2 }
    }
}

impl Sub<f64> for Jet2 {
    type Output = Jet2;
    fn sub(self, o: f64) -> Jet2 {
        Jet2 { v: self.v - o, ..self }
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    #[inline]
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(self, k: f64) -> Jet2 {
        self.scale(k)
    }
}

impl Mul<Jet2> for f64 {
    type Output = Jet2;
    fn mul(self, j: Jet2) -> Jet2 {
        j.scale(self)
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Jet2, b: (f64, f64, f64), tol: f64) {
        assert!((a.v - b.0).abs() < tol, "{a:?} vs {b:?}");
        assert!((a.d1 - b.1).abs() < tol, "{a:?} vs {b:?}");
        assert!((a.d2 - b.2).abs() < tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn sin_of_input() {
        let t = 0.5f64;
        close(Jet2::variable(t).sin(), (t.sin(), t.cos(), -t.sin()), 1e-15);
        close(Jet2::variable(t).sin(), (0.479426, 0.877583, -0.479426), 1e-6);
    }

    #[test]
    fn silu_of_constant_zero() {
        assert_eq!(Jet2::constant(0.0).silu(), Jet2::ZERO);
    }

    #[test]
    fn square_of_input() {
        let t = Jet2::variable(2.0);
        assert_eq!(t * t, Jet2::new(4.0, 4.0, 2.0));
    }

    #[test]
    fn cube_matches_polynomial() {
        for &t0 in &[-1.5, 0.0, 0.3, 2.0] {
            let t = Jet2::variable(t0);
            let c = t * t * t;
            let want = [t0 * t0 * t0, 3.0 * t0 * t0, 6.0 * t0];
            for (got, w) in [c.v, c.d1, c.d2].iter().zip(want) {
                assert!((got - w).abs() <= 1e-14 * w.abs().max(1.0));
            }
        }
    }

    #[test]
    fn lifted_constants_have_zero_tangent() {
        let c = Jet2::constant(3.0);
        assert_eq!((c.d1, c.d2), (0.0, 0.0));
        assert_eq!(Jet2::variable(1.25), Jet2::new(1.25, 1.0, 0.0));
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let h = 1e-5;
        for f in [silu_derivs as fn(f64) -> [f64; 4], tanh_derivs] {
            for &x in &[-3.0, -0.7, 0.0, 0.4, 2.2] {
                let d = f(x);
                let p = f(x + h);
                let m = f(x - h);
                for r in 0..3 {
                    let fd = (p[r] - m[r]) / (2.0 * h);
                    assert!((d[r + 1] - fd).abs() < 1e-8, "x={x} r={r}: {} vs {fd}", d[r + 1]);
                }
            }
        }
    }
}
