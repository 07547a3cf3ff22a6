//! Minimal scalar reverse-mode tape for differentiating arbitrary closures.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy)]
struct Node {
    parents: [(usize, f64); 2],
}

/// Wengert list of scalar operations. Each node stores up to two parents
/// together with the local partial derivatives.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    val: f64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, parents: [(usize, f64); 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents });
        nodes.len() - 1
    }

    /// An independent variable.
    pub fn var(&self, val: f64) -> Var<'_> {
        let idx = self.push([(usize::MAX, 0.0), (usize::MAX, 0.0)]);
        Var { tape: self, idx, val }
    }

    pub fn constant(&self, val: f64) -> Var<'_> {
        self.var(val)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adjoints of every node with respect to `output`.
    pub fn backward(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output.idx] = 1.0;
        for i in (0..=output.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, w) in &nodes[i].parents {
                if p != usize::MAX {
                    adj[p] += a * w;
                }
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    fn unary(self, val: f64, d: f64) -> Var<'t> {
        let idx = self.tape.push([(self.idx, d), (usize::MAX, 0.0)]);
        Var { tape: self.tape, idx, val }
    }

    fn binary(self, o: Var<'t>, val: f64, da: f64, db: f64) -> Var<'t> {
        let idx = self.tape.push([(self.idx, da), (o.idx, db)]);
        Var { tape: self.tape, idx, val }
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(self.val.sin(), self.val.cos())
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(self.val.cos(), -self.val.sin())
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.val.exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    pub fn tanh(self) -> Var<'t> {
        let y = self.val.tanh();
        self.unary(y, 1.0 - y * y)
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        self.unary(self.val.powi(n), n as f64 * self.val.powi(n - 1))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.unary(k * self.val, k)
    }

    pub fn offset(self, k: f64) -> Var<'t> {
        self.unary(self.val + k, 1.0)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        let q = self.val / o.val;
        self.binary(o, q, 1.0 / o.val, -q / o.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, k: f64) -> Var<'t> {
        self.offset(k)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, k: f64) -> Var<'t> {
        self.scale(k)
    }
}

/// Sum of a slice of tape variables.
pub fn sum<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Var<'t> {
    xs.iter().copied().fold(tape.constant(0.0), |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = tape.var(-2.0);
        let z = x * y + x.sin();
        let adj = tape.backward(z);
        assert!((adj[x.index()] - (-2.0 + 3.0f64.cos())).abs() < 1e-15);
        assert_eq!(adj[y.index()], 3.0);
    }

    #[test]
    fn quotient_and_chain() {
        let tape = Tape::new();
        let x = tape.var(0.7);
        let z = (x.exp() / (x * 2.0 + 1.0)).tanh();
        let adj = tape.backward(z);
        let f = |x: f64| (x.exp() / (2.0 * x + 1.0)).tanh();
        let fd = (f(0.7 + 1e-6) - f(0.7 - 1e-6)) / 2e-6;
        assert!((adj[x.index()] - fd).abs() < 1e-8);
    }
}
