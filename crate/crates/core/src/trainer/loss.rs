//! Data-plus-physics loss over a surrogate, with its exact gradient.

use crate::diff::{DiffError, Jet2, Objective};
use crate::grid::{BusKind, GridModel};
use crate::network::Surrogate;

use super::sampling::Points;
use super::{TrainError, Variant};

/// Loss value split into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub mse_u: f64,
    pub mse_f: f64,
}

/// `MSE_u + MSE_f` on fixed point sets. Output `k` of the network is the
/// angle of the `k`-th dynamic bus.
///
/// In identification mode the parameter vector is the network parameters
/// followed by `ln M` of each generator and `ln D` of each dynamic bus.
#[derive(Debug, Clone)]
pub struct PhysicsLoss<N: Surrogate> {
    net: N,
    model: GridModel,
    points: Points,
    variant: Variant,
    identify: bool,
    /// Nonzero susceptances `(j, B_ij)` per bus.
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl<N: Surrogate> PhysicsLoss<N> {
    pub fn new(net: N, model: GridModel, points: Points, variant: Variant) -> Result<Self, TrainError> {
        let nd = model.dynamic_buses().len();
        if net.n_outputs() != nd {
            return Err(TrainError::Config(format!(
                "network has {} outputs but the grid has {nd} dynamic buses",
                net.n_outputs()
            )));
        }
        let n_in = net.n_inputs();
        if points.u.iter().map(|p| p.input.len()).chain(points.f.iter().map(|p| p.input.len())).any(|l| l != n_in) {
            return Err(TrainError::Config(format!("point inputs do not match the {n_in} network inputs")));
        }
        if points.u.is_empty() {
            return Err(TrainError::Config("no labeled points".into()));
        }
        let n = model.n_bus();
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).map(|j| (j, model.susceptance(i, j))).filter(|e| e.1 != 0.0).collect())
            .collect();
        Ok(Self { net, model, points, variant, identify: false, neighbors })
    }

    /// Appends `ln M` and `ln D` to the trainable parameters.
    pub fn identifying(mut self) -> Self {
        self.identify = true;
        self
    }

    pub fn net(&self) -> &N {
        &self.net
    }

    pub fn model(&self) -> &GridModel {
        &self.model
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn n_net_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn n_physical(&self) -> usize {
        if self.identify {
            self.model.generator_buses().len() + self.model.dynamic_buses().len()
        } else {
            0
        }
    }

    /// Initial flat parameters: the network's own, then `ln` of the given
    /// inertia and damping in identification mode.
    pub fn initial_params(&self, m0: &[f64], d0: &[f64]) -> Vec<f64> {
        let mut p = self.net.params().to_vec();
        if self.identify {
            p.extend(self.model.generator_buses().iter().map(|&b| m0[b].ln()));
            p.extend(self.model.dynamic_buses().iter().map(|&b| d0[b].ln()));
        }
        p
    }

    /// Per-bus `(M, D)` encoded in `p` (or the model's own values).
    pub fn physical(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut m = self.model.inertia();
        let mut d = self.model.damping();
        if self.identify {
            let extra = &p[self.net.n_params()..];
            let ng = self.model.generator_buses().len();
            for (k, &b) in self.model.generator_buses().iter().enumerate() {
                m[b] = extra[k].exp();
            }
            for (k, &b) in self.model.dynamic_buses().iter().enumerate() {
                d[b] = extra[ng + k].exp();
            }
        }
        (m, d)
    }

    pub fn parts(&self, p: &[f64]) -> Result<LossParts, DiffError> {
        self.eval(p, None)
    }

    pub fn parts_and_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<LossParts, DiffError> {
        if grad.len() != self.dim() {
            return Err(DiffError::Shape { expected: self.dim(), got: grad.len() });
        }
        self.eval(p, Some(grad))
    }

    fn eval(&self, p: &[f64], mut grad: Option<&mut [f64]>) -> Result<LossParts, DiffError> {
        if p.len() != self.dim() {
            return Err(DiffError::Shape { expected: self.dim(), got: p.len() });
        }
        let n_net = self.net.n_params();
        let np = &p[..n_net];
        let (m, d) = self.physical(p);
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let dynamic = self.model.dynamic_buses();
        let nd = dynamic.len();
        let mut cache = N::Cache::default();
        let mut input = vec![Jet2::ZERO; self.net.n_inputs()];
        let mut out = vec![Jet2::ZERO; nd];
        let mut adj = vec![[0.0f64; 3]; nd];
        let set_input = |input: &mut [Jet2], raw: &[f64]| {
            input[0] = Jet2::variable(raw[0]);
            for (j, r) in input[1..].iter_mut().zip(&raw[1..]) {
                *j = Jet2::constant(*r);
            }
        };

        let nu = self.points.u.len() as f64;
        let with_rate = self.variant == Variant::II;
        let mut mse_u = 0.0;
        for up in &self.points.u {
            set_input(&mut input, &up.input);
            self.net.jet_forward(np, &input, &mut cache, &mut out);
            for k in 0..nd {
                let e = out[k].v - up.theta[k];
                mse_u += e * e;
                adj[k] = [2.0 * e / nu, 0.0, 0.0];
                if with_rate {
                    let e1 = out[k].d1 - up.omega[k];
                    mse_u += e1 * e1;
                    adj[k][1] = 2.0 * e1 / nu;
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                self.net.jet_backward(np, &cache, &adj, &mut g[..n_net]);
            }
        }
        mse_u /= nu;

        let mut mse_f = 0.0;
        if !self.points.f.is_empty() {
            let nf = self.points.f.len() as f64;
            let n = self.model.n_bus();
            let gens = self.model.generator_buses();
            let ng = gens.len();
            let is_gen: Vec<bool> = (0..n).map(|b| self.model.kind(b) == BusKind::Generator).collect();
            let mut theta = vec![Jet2::ZERO; n];
            let mut r = vec![0.0; n];
            let mut thbar = vec![0.0; n];
            for fp in &self.points.f {
                set_input(&mut input, &fp.input);
                self.net.jet_forward(np, &input, &mut cache, &mut out);
                for (k, &b) in dynamic.iter().enumerate() {
                    theta[b] = out[k];
                }
                for &i in dynamic {
                    let pe: f64 = self.neighbors[i].iter().map(|&(j, bij)| bij * (theta[i].v - theta[j].v).sin()).sum();
                    let inertial = if is_gen[i] { m[i] * theta[i].d2 } else { 0.0 };
                    r[i] = inertial + d[i] * theta[i].d1 + pe - fp.pm[i];
                    mse_f += r[i] * r[i];
                }
                if let Some(g) = grad.as_deref_mut() {
                    thbar.fill(0.0);
                    for &i in dynamic {
                        let rb = 2.0 * r[i] / nf;
                        for &(j, bij) in &self.neighbors[i] {
                            let c = rb * bij * (theta[i].v - theta[j].v).cos();
                            thbar[i] += c;
                            thbar[j] -= c;
                        }
                    }
                    for (k, &i) in dynamic.iter().enumerate() {
                        let rb = 2.0 * r[i] / nf;
                        adj[k] = [thbar[i], rb * d[i], if is_gen[i] { rb * m[i] } else { 0.0 }];
                    }
                    self.net.jet_backward(np, &cache, &adj, &mut g[..n_net]);
                    if self.identify {
                        let extra = &mut g[n_net..];
                        for (k, &b) in gens.iter().enumerate() {
                            extra[k] += 2.0 * r[b] / nf * theta[b].d2 * m[b];
                        }
                        for (k, &b) in dynamic.iter().enumerate() {
                            extra[ng + k] += 2.0 * r[b] / nf * theta[b].d1 * d[b];
                        }
                    }
                }
            }
            mse_f /= nf;
        }
        let total = mse_u + mse_f;
        if !total.is_finite() {
            return Err(DiffError::NonFiniteLoss(total));
        }
        Ok(LossParts { total, mse_u, mse_f })
    }
}

impl<N: Surrogate> Objective for PhysicsLoss<N> {
    fn dim(&self) -> usize {
        self.net.n_params() + self.n_physical()
    }

    fn value(&self, p: &[f64]) -> Result<f64, DiffError> {
        Ok(self.eval(p, None)?.total)
    }

    fn value_and_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<f64, DiffError> {
        Ok(self.parts_and_gradient(p, grad)?.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::MlpNetwork;
    use crate::trainer::sampling::{FPoint, UPoint};

    fn zero_net(widths: &[usize]) -> MlpNetwork {
        let mut n = MlpNetwork::new(widths, 0).unwrap();
        n.set_params(&vec![0.0; n.n_params()]).unwrap();
        n
    }

    #[test]
    fn zero_output_single_label() {
        let pts = Points {
            u: vec![UPoint { input: vec![1.0, 0.1], theta: vec![0.1], omega: vec![0.0] }],
            f: vec![],
        };
        let loss = PhysicsLoss::new(zero_net(&[2, 3, 1]), GridModel::smib(), pts, Variant::I).unwrap();
        let parts = loss.parts(&vec![0.0; loss.dim()]).unwrap();
        assert!((parts.mse_u - 0.01).abs() < 1e-15);
        assert_eq!(parts.mse_f, 0.0);
    }

    #[test]
    fn residual_of_constant_prediction() {
        // θ ≡ 0 on bus 1: residual is −P_m.
        let pts = Points {
            u: vec![UPoint { input: vec![0.0, 0.1], theta: vec![0.0], omega: vec![0.0] }],
            f: vec![FPoint { input: vec![2.0, 0.1], pm: vec![0.1, 0.0] }],
        };
        let loss = PhysicsLoss::new(zero_net(&[2, 3, 1]), GridModel::smib(), pts, Variant::I).unwrap();
        let parts = loss.parts(&vec![0.0; loss.dim()]).unwrap();
        assert!((parts.mse_f - 0.01).abs() < 1e-15);
        assert_eq!(parts.mse_u, 0.0);
    }

    #[test]
    fn variant_two_adds_rate_term() {
        let pts = Points {
            u: vec![UPoint { input: vec![1.0, 0.1], theta: vec![0.1], omega: vec![0.2] }],
            f: vec![],
        };
        let one = PhysicsLoss::new(zero_net(&[2, 3, 1]), GridModel::smib(), pts.clone(), Variant::I).unwrap();
        let two = PhysicsLoss::new(zero_net(&[2, 3, 1]), GridModel::smib(), pts, Variant::II).unwrap();
        let p = vec![0.0; one.dim()];
        assert!((two.parts(&p).unwrap().mse_u - 0.05).abs() < 1e-15);
        assert!(two.value(&p).unwrap() >= one.value(&p).unwrap());
    }

    #[test]
    fn output_count_must_match_dynamic_buses() {
        let pts = Points { u: vec![UPoint { input: vec![0.0, 0.1], theta: vec![0.0], omega: vec![0.0] }], f: vec![] };
        assert!(PhysicsLoss::new(zero_net(&[2, 3, 2]), GridModel::smib(), pts, Variant::I).is_err());
    }
}
