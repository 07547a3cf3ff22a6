use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diff::DiffError;
use crate::grid::GridModel;
use crate::metrics::{param_errors, rel_traj_error};
use crate::network::Surrogate;
use crate::simulator::{Dataset, Trajectory};

use super::loss::{LossParts, PhysicsLoss};
use super::optim::Optimizer;
use super::sampling::{sample_points, InputMap};
use super::{LossConfig, LossReport, StepRecord, TrainConfig, TrainError};

/// Flattened test samples: network inputs and true dynamic-bus angles.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    inputs: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
}

impl TestSet {
    pub fn new(model: &GridModel, dataset: &Dataset) -> Self {
        let map = InputMap::new(model);
        let dynamic = model.dynamic_buses();
        let mut inputs = Vec::new();
        let mut truth = Vec::new();
        for &id in &dataset.test {
            let tr = &dataset.trajectories[id];
            for k in 0..tr.len() {
                inputs.push(map.features(tr.times[k], &tr.pm));
                truth.push(dynamic.iter().map(|&b| tr.theta[k][b]).collect());
            }
        }
        Self { inputs, truth }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Mean over samples of the squared angle-vector error.
    pub fn mse<N: Surrogate>(&self, net: &N, params: &[f64]) -> f64 {
        if self.inputs.is_empty() {
            return f64::NAN;
        }
        let mut out = vec![0.0; net.n_outputs()];
        let mut acc = 0.0;
        for (x, y) in self.inputs.iter().zip(&self.truth) {
            net.forward_with(params, x, &mut out);
            acc += out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        acc / self.inputs.len() as f64
    }
}

/// Stateful training run; `step` advances the optimizer by one step.
pub struct Trainer<N: Surrogate> {
    loss: PhysicsLoss<N>,
    test: TestSet,
    optimizer: Optimizer,
    params: Vec<f64>,
    best: Vec<f64>,
    report: LossReport,
    cfg: TrainConfig,
}

impl<N: Surrogate> Trainer<N> {
    pub fn new(
        net: N,
        model: &GridModel,
        dataset: &Dataset,
        loss_cfg: &LossConfig,
        train_cfg: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let points = sample_points(dataset, model, loss_cfg)?;
        let loss = PhysicsLoss::new(net, model.clone(), points, loss_cfg.variant)?;
        let params = loss.initial_params(&[], &[]);
        Self::from_loss(loss, params, model, dataset, train_cfg)
    }

    /// Joint fit of the network and `(M, D)`, starting from `m0`, `d0`
    /// (per-bus; entries of non-generators in `m0` are ignored).
    pub fn identifying(
        net: N,
        model: &GridModel,
        dataset: &Dataset,
        loss_cfg: &LossConfig,
        train_cfg: &TrainConfig,
        m0: &[f64],
        d0: &[f64],
    ) -> Result<Self, TrainError> {
        let n = model.n_bus();
        if m0.len() != n || d0.len() != n {
            return Err(TrainError::Config(format!("initial M and D need {n} entries")));
        }
        let positive = |v: &[f64], buses: &[usize]| buses.iter().all(|&b| v[b] > 0.0 && v[b].is_finite());
        if !positive(m0, model.generator_buses()) || !positive(d0, model.dynamic_buses()) {
            return Err(TrainError::Config("initial M and D must be positive".into()));
        }
        let points = sample_points(dataset, model, loss_cfg)?;
        if points.f.is_empty() {
            return Err(TrainError::Config("identification needs collocation points".into()));
        }
        let loss = PhysicsLoss::new(net, model.clone(), points, loss_cfg.variant)?.identifying();
        let params = loss.initial_params(m0, d0);
        Self::from_loss(loss, params, model, dataset, train_cfg)
    }

    fn from_loss(
        loss: PhysicsLoss<N>,
        params: Vec<f64>,
        model: &GridModel,
        dataset: &Dataset,
        cfg: &TrainConfig,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let initial = loss.parts(&params)?;
        let optimizer = Optimizer::new(&cfg.optimizer, params.len());
        Ok(Self {
            test: TestSet::new(model, dataset),
            optimizer,
            best: params.clone(),
            params,
            report: LossReport { records: Vec::new(), best_step: 0, best_loss: initial.total },
            cfg: *cfg,
            loss,
        })
    }

    pub fn objective(&self) -> &PhysicsLoss<N> {
        &self.loss
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn report(&self) -> &LossReport {
        &self.report
    }

    pub fn steps_done(&self) -> usize {
        self.report.records.len()
    }

    pub fn is_done(&self) -> bool {
        self.steps_done() >= self.cfg.max_steps
    }

    fn diverged(&self, step: usize, source: DiffError) -> TrainError {
        TrainError::Diverged { step, source, report: Box::new(self.report.clone()) }
    }

    pub fn step(&mut self) -> Result<StepRecord, TrainError> {
        let step = self.steps_done() + 1;
        let start = Instant::now();
        // Parameters the recorded loss belongs to, if not the current ones.
        let outcome: Result<(Option<Vec<f64>>, LossParts, usize, bool), DiffError> = match &mut self.optimizer {
            Optimizer::Adam(adam) => {
                let mut g = vec![0.0; self.params.len()];
                self.loss.parts_and_gradient(&self.params, &mut g).map(|parts| {
                    let before = self.params.clone();
                    adam.apply(&g, &mut self.params);
                    (Some(before), parts, 1, false)
                })
            }
            Optimizer::Lbfgs(lbfgs) => lbfgs
                .step(&self.loss, &mut self.params)
                .and_then(|info| Ok((None, self.loss.parts(&self.params)?, info.evals, info.fallback))),
        };
        let (candidate, parts, evals, fallback) = outcome.map_err(|e| self.diverged(step, e))?;
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(self.diverged(step, DiffError::NonFiniteLoss(f64::NAN)));
        }
        if parts.total < self.report.best_loss {
            self.report.best_loss = parts.total;
            self.report.best_step = step;
            self.best = candidate.unwrap_or_else(|| self.params.clone());
        }
        let n_net = self.loss.n_net_params();
        let mse_test = (step % self.cfg.eval_period == 0 || step == self.cfg.max_steps)
            .then(|| self.test.mse(self.loss.net(), &self.params[..n_net]));
        let rec = StepRecord {
            step,
            loss: parts.total,
            mse_u: parts.mse_u,
            mse_f: parts.mse_f,
            mse_test,
            ms_per_step: start.elapsed().as_secs_f64() * 1e3,
            evals,
            fallback,
        };
        log::debug!("step {step}: loss {:.4e} (u {:.3e}, f {:.3e})", rec.loss, rec.mse_u, rec.mse_f);
        self.report.records.push(rec);
        Ok(rec)
    }

    /// Steps until the budget is exhausted.
    pub fn run(&mut self) -> Result<(), TrainError> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// Best-loss parameters (network part followed by `ln M`, `ln D` when
    /// identifying).
    pub fn best_params(&self) -> &[f64] {
        &self.best
    }

    /// Network carrying the best-loss parameters.
    pub fn best_net(&self) -> Result<N, TrainError> {
        let mut net = self.loss.net().clone();
        net.set_params(&self.best[..self.loss.n_net_params()])?;
        Ok(net)
    }

    /// Per-bus `(M, D)` at the best-loss parameters.
    pub fn best_physical(&self) -> (Vec<f64>, Vec<f64>) {
        self.loss.physical(&self.best)
    }

    pub fn into_report(self) -> LossReport {
        self.report
    }
}

/// Trains `net` on `dataset` with the model's `M`, `D` fixed and returns the
/// best-loss network with the step log.
pub fn train_dynamics<N: Surrogate>(
    net: N,
    model: &GridModel,
    dataset: &Dataset,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(N, LossReport), TrainError> {
    let mut tr = Trainer::new(net, model, dataset, loss_cfg, train_cfg)?;
    tr.run()?;
    let net = tr.best_net()?;
    Ok((net, tr.into_report()))
}

/// Identification result; `M` entries follow the generator buses and `D`
/// entries follow the dynamic buses (1-based bus numbers listed alongside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub seed: u64,
    pub generators: Vec<usize>,
    pub dynamic: Vec<usize>,
    #[serde(rename = "M_est")]
    pub m_est: Vec<f64>,
    #[serde(rename = "D_est")]
    pub d_est: Vec<f64>,
    #[serde(rename = "e_M")]
    pub e_m: Vec<f64>,
    #[serde(rename = "e_D")]
    pub e_d: Vec<f64>,
}

/// Fits the network together with `M` and `D`; `model` supplies `B` and
/// the reference `M`, `D` used only to score the estimates.
pub fn train_identify<N: Surrogate>(
    net: N,
    model: &GridModel,
    dataset: &Dataset,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    m0: &[f64],
    d0: &[f64],
) -> Result<(N, IdentifyReport, LossReport), TrainError> {
    let mut tr = Trainer::identifying(net, model, dataset, loss_cfg, train_cfg, m0, d0)?;
    tr.run()?;
    let (m, d) = tr.best_physical();
    let gens = model.generator_buses();
    let dynamic = model.dynamic_buses();
    let m_true = model.inertia();
    let d_true = model.damping();
    let pick = |v: &[f64], buses: &[usize]| buses.iter().map(|&b| v[b]).collect::<Vec<f64>>();
    let (e_m, e_d) = param_errors(
        &pick(&m_true, gens),
        &pick(&d_true, dynamic),
        &pick(&m, gens),
        &pick(&d, dynamic),
    )?;
    let report = IdentifyReport {
        seed: train_cfg.seed,
        generators: gens.iter().map(|b| b + 1).collect(),
        dynamic: dynamic.iter().map(|b| b + 1).collect(),
        m_est: pick(&m, gens),
        d_est: pick(&d, dynamic),
        e_m,
        e_d,
    };
    let net = tr.best_net()?;
    Ok((net, report, tr.into_report()))
}

/// Network prediction of dynamic-bus angles along a trajectory
/// (`n_t × n_dynamic`).
pub fn predict_trajectory<N: Surrogate>(net: &N, model: &GridModel, traj: &Trajectory) -> Vec<Vec<f64>> {
    let map = InputMap::new(model);
    traj.times
        .iter()
        .map(|&t| {
            let mut out = vec![0.0; net.n_outputs()];
            net.forward_with(net.params(), &map.features(t, &traj.pm), &mut out);
            out
        })
        .collect()
}

/// Relative trajectory error for every test trajectory.
pub fn trajectory_errors<N: Surrogate>(net: &N, model: &GridModel, dataset: &Dataset) -> Result<Vec<f64>, TrainError> {
    let dynamic = model.dynamic_buses();
    dataset
        .test
        .iter()
        .map(|&id| {
            let tr = &dataset.trajectories[id];
            let pred = predict_trajectory(net, model, tr);
            let truth: Vec<Vec<f64>> = tr.theta.iter().map(|row| dynamic.iter().map(|&b| row[b]).collect()).collect();
            Ok(rel_traj_error(&pred, &truth)?)
        })
        .collect()
}
