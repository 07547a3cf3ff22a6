//! Differentiation and simulator checks against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pikan_core::diff::{loss_gradient, Jet2};
use pikan_core::grid::BusKind;
use pikan_core::simulator::{gen_4bus_dataset, gen_ray_dataset, gen_smib_dataset, integrate_with, Integrator, PmSampling};
use pikan_core::trainer::{sample_points, InputMap, LossConfig, PhysicsLoss, Variant};
use pikan_core::{GridModel, KanNetwork, MlpNetwork, SplineSpec, Surrogate};

use super::{best_over_steps, fd_derivs, fd_objective_gradient, rel_err};

/// Worst relative errors over the random configurations.
#[derive(Debug, Clone, Copy)]
pub struct DiffReport {
    pub jet_d1: f64,
    pub jet_d2: f64,
    pub grad: f64,
    pub configs: usize,
}

fn perturb(p: &[f64], rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    p.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect()
}

/// Time-jet and loss-gradient agreement for one network on one system.
fn check_network<N: Surrogate>(
    net: N,
    model: &GridModel,
    variant: Variant,
    identify: bool,
    rng: &mut ChaCha8Rng,
) -> (f64, f64, f64) {
    let map = InputMap::new(model);
    let ranges = map.ranges();
    let mut d1_err: f64 = 0.0;
    let mut d2_err: f64 = 0.0;
    for _ in 0..3 {
        let x: Vec<f64> = ranges.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect();
        let mut jin: Vec<Jet2> = x.iter().map(|&v| Jet2::constant(v)).collect();
        jin[0] = Jet2::variable(x[0]);
        let jet = net.forward_jet(&jin).unwrap();
        let d1: Vec<f64> = jet.iter().map(|j| j.d1).collect();
        let d2: Vec<f64> = jet.iter().map(|j| j.d2).collect();
        let span = ranges[0].1 - ranges[0].0;
        let fd = |h: f64| -> (Vec<f64>, Vec<f64>) {
            let k = net.n_outputs();
            let mut a = vec![0.0; k];
            let mut b = vec![0.0; k];
            for o in 0..k {
                let f = |t: f64| {
                    let mut xi = x.clone();
                    xi[0] = t;
                    net.forward(&xi).unwrap()[o]
                };
                (a[o], b[o]) = fd_derivs(f, x[0], h);
            }
            (a, b)
        };
        let steps: Vec<f64> = [1e-3, 1e-4, 1e-5].iter().map(|s| s * span).collect();
        d1_err = d1_err.max(best_over_steps(&steps, |h| rel_err(&d1, &fd(h).0)));
        d2_err = d2_err.max(best_over_steps(&steps, |h| rel_err(&d2, &fd(h).1)));
    }

    let ds = match model.n_bus() {
        2 => gen_smib_dataset(model, 4, rng.random(), PmSampling::Random).unwrap(),
        _ => gen_ray_dataset(model, &[1.5, 4.0, 8.5]).unwrap(),
    };
    let cfg = LossConfig::with_counts(variant, 8, 24, rng.random());
    let points = sample_points(&ds, model, &cfg).unwrap();
    let mut loss = PhysicsLoss::new(net, model.clone(), points, variant).unwrap();
    if identify {
        loss = loss.identifying();
    }
    let m0: Vec<f64> = (0..model.n_bus()).map(|_| rng.random_range(0.05..0.6)).collect();
    let d0: Vec<f64> = (0..model.n_bus()).map(|_| rng.random_range(0.05..0.6)).collect();
    let p = loss.initial_params(&m0, &d0);
    let g = loss_gradient(&loss, &p).unwrap();
    let grad_err = best_over_steps(&[1e-5, 1e-6, 1e-7], |h| rel_err(&g, &fd_objective_gradient(&loss, &p, h)));
    (d1_err, d2_err, grad_err)
}

/// Random systems, architectures, loss variants and parameter values.
pub fn differentiation_suite(n_configs: usize, seed: u64) -> DiffReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = DiffReport { jet_d1: 0.0, jet_d2: 0.0, grad: 0.0, configs: n_configs };
    for c in 0..n_configs {
        let model = if c % 2 == 0 { GridModel::smib() } else { GridModel::four_bus() };
        let map = InputMap::new(&model);
        let n_in = map.n_inputs();
        let n_out = model.dynamic_buses().len();
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect();
        let shape: Vec<usize> = std::iter::once(n_in).chain(hidden).chain(std::iter::once(n_out)).collect();
        let variant = if rng.random_bool(0.5) { Variant::I } else { Variant::II };
        let identify = rng.random_bool(0.5);
        let net_seed: u64 = rng.random();
        let errs = if (c / 2) % 2 == 0 {
            let spec = SplineSpec::new(3, rng.random_range(3..=8), -1.0, 1.0).unwrap();
            let mut net = KanNetwork::new(&shape, spec, net_seed).unwrap().with_input_ranges(&map.ranges()).unwrap();
            let p = perturb(net.params(), &mut rng, 0.3);
            net.set_params(&p).unwrap();
            check_network(net, &model, variant, identify, &mut rng)
        } else {
            let mut net = MlpNetwork::new(&shape, net_seed).unwrap().with_input_ranges(&map.ranges()).unwrap();
            let p = perturb(net.params(), &mut rng, 0.3);
            net.set_params(&p).unwrap();
            check_network(net, &model, variant, identify, &mut rng)
        };
        rep.jet_d1 = rep.jet_d1.max(errs.0);
        rep.jet_d2 = rep.jet_d2.max(errs.1);
        rep.grad = rep.grad.max(errs.2);
    }
    rep
}

#[derive(Debug, Clone, Copy)]
pub struct SimReport {
    /// Largest state difference between `dt` and `dt / 2` on the output grid.
    pub halving: f64,
    /// Largest relative energy excursion of the undamped single machine
    /// over 20 s.
    pub energy_drift: f64,
    /// ∞-norm of the swing residual of simulated trajectories, with time
    /// derivatives taken by finite differences of the angles.
    pub residual: f64,
}

fn max_state_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Five-point first and second derivatives at interior samples.
fn stencil(th: &[f64], k: usize, h: f64) -> (f64, f64) {
    let (m2, m1, z, p1, p2) = (th[k - 2], th[k - 1], th[k], th[k + 1], th[k + 2]);
    ((m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h), (-m2 + 16.0 * m1 - 30.0 * z + 16.0 * p1 - p2) / (12.0 * h * h))
}

fn residual_inf_norm(model: &GridModel, state0: &[f64], pm: &[f64]) -> f64 {
    let fine = Integrator { dt: 1e-4, dt_out: 1e-3 };
    let tr = integrate_with(model, state0, pm, model.horizon(), fine, 0).unwrap();
    let n = model.n_bus();
    let (m, d) = (model.inertia(), model.damping());
    let mut worst: f64 = 0.0;
    for k in 2..tr.len() - 2 {
        let mut jets = vec![Jet2::ZERO; n];
        for b in 0..n {
            let col: Vec<f64> = tr.theta[k - 2..=k + 2].iter().map(|r| r[b]).collect();
            let (d1, d2) = stencil(&col, 2, fine.dt_out);
            jets[b] = Jet2::new(tr.theta[k][b], d1, d2);
        }
        let pe = model.electrical_power(&tr.theta[k]).unwrap();
        for &b in model.dynamic_buses() {
            let inertial = if model.kind(b) == BusKind::Generator { m[b] * jets[b].d2 } else { 0.0 };
            let r = inertial + d[b] * jets[b].d1 + pe[b] - pm[b];
            worst = worst.max(r.abs());
        }
    }
    worst
}

pub fn simulator_suite() -> SimReport {
    let smib = GridModel::smib();
    let four = GridModel::four_bus();
    let coarse = Integrator::default();
    let half = Integrator { dt: coarse.dt / 2.0, ..coarse };

    let mut halving: f64 = 0.0;
    let s0 = smib.pack_state(&[0.1, 0.0], &[0.1, 0.0]);
    for pm in [0.08, 0.13, 0.18] {
        let pm = [pm, 0.0];
        let (a, _) = coarse.run(&smib, &s0, &pm, smib.horizon()).unwrap();
        let (b, _) = half.run(&smib, &s0, &pm, smib.horizon()).unwrap();
        halving = halving.max(max_state_diff(&a, &b));
    }
    let ds = gen_4bus_dataset(&four).unwrap();
    let z = vec![0.0; four.state_len()];
    for tr in [&ds.trajectories[0], &ds.trajectories[9], &ds.trajectories[18]] {
        let (a, _) = coarse.run(&four, &z, &tr.pm, four.horizon()).unwrap();
        let (b, _) = half.run(&four, &z, &tr.pm, four.horizon()).unwrap();
        halving = halving.max(max_state_diff(&a, &b));
    }

    let undamped = smib.with_damping(&[0.0, 0.0]).unwrap();
    let pm = 0.1;
    let tr = integrate_with(&undamped, &s0, &[pm, 0.0], 20.0, coarse, 0).unwrap();
    let e0 = undamped.smib_energy(tr.theta[0][0], tr.omega[0][0], pm);
    let energy_drift = tr
        .theta
        .iter()
        .zip(&tr.omega)
        .map(|(th, om)| (undamped.smib_energy(th[0], om[0], pm) - e0).abs() / e0.abs())
        .fold(0.0, f64::max);

    let mut residual = residual_inf_norm(&smib, &s0, &[0.08, 0.0]).max(residual_inf_norm(&smib, &s0, &[0.18, 0.0]));
    for a in [0.5, 5.0, 9.5] {
        let pm: Vec<f64> = [0.1, 0.2, -0.1, -0.2].iter().map(|p| a * p).collect();
        residual = residual.max(residual_inf_norm(&four, &z, &pm));
    }
    SimReport { halving, energy_drift, residual }
}
