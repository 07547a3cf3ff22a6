//! Physics-informed training of a surrogate against trajectory data and the
//! swing-equation residual, plus joint identification of `M` and `D`.

mod loss;
mod optim;
mod sampling;
mod train;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::DiffError;
use crate::grid::GridError;
use crate::metrics::MetricError;
use crate::network::NetError;

pub use loss::{LossParts, PhysicsLoss};
pub use optim::{Adam, AdamConfig, Lbfgs, LbfgsConfig, Optimizer, OptimizerConfig, StepInfo};
pub use sampling::{sample_points, Collocation, FPoint, InputMap, Points, UPoint};
pub use train::{
    predict_trajectory, train_dynamics, train_identify, trajectory_errors, IdentifyReport, TestSet, Trainer,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training diverged at step {step}: {source}")]
    Diverged { step: usize, source: DiffError, report: Box<LossReport> },
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Which labels enter the data term and whether the residual term is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Angle labels plus residual.
    #[serde(rename = "I")]
    I,
    /// Angle and frequency labels plus residual.
    #[serde(rename = "II")]
    II,
    /// Angle labels only.
    #[serde(rename = "data_only")]
    DataOnly,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::I => "I",
            Variant::II => "II",
            Variant::DataOnly => "data_only",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "I" | "i" | "1" => Ok(Variant::I),
            "II" | "ii" | "2" => Ok(Variant::II),
            "data_only" | "data-only" | "dataonly" => Ok(Variant::DataOnly),
            other => Err(format!("unknown loss variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: Variant,
    pub n_u: usize,
    pub n_f: usize,
    pub seed: u64,
    #[serde(default)]
    pub collocation: Collocation,
}

impl LossConfig {
    /// 40 labeled and 800 collocation points.
    pub fn smib(variant: Variant, seed: u64) -> Self {
        Self::with_counts(variant, 40, 800, seed)
    }

    /// 80 labeled and 4000 collocation points.
    pub fn four_bus(variant: Variant, seed: u64) -> Self {
        Self::with_counts(variant, 80, 4000, seed)
    }

    pub fn with_counts(variant: Variant, n_u: usize, n_f: usize, seed: u64) -> Self {
        let n_f = if variant == Variant::DataOnly { 0 } else { n_f };
        Self { variant, n_u, n_f, seed, collocation: Collocation::Random }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_u == 0 {
            return Err(TrainError::Config("N_u must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub max_steps: usize,
    pub eval_period: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn lbfgs(max_steps: usize, seed: u64) -> Self {
        Self { optimizer: OptimizerConfig::Lbfgs(LbfgsConfig::default()), max_steps, eval_period: 10, seed }
    }

    pub fn adam(max_steps: usize, seed: u64) -> Self {
        Self { optimizer: OptimizerConfig::Adam(AdamConfig::default()), max_steps, eval_period: 10, seed }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_steps == 0 || self.eval_period == 0 {
            return Err(TrainError::Config("step counts must be positive".into()));
        }
        match self.optimizer {
            OptimizerConfig::Lbfgs(c) if c.history == 0 || c.max_iter == 0 || c.max_eval == 0 => {
                Err(TrainError::Config("L-BFGS history and iteration limits must be positive".into()))
            }
            OptimizerConfig::Lbfgs(c) if !(0.0 < c.c1 && c.c1 < c.c2 && c.c2 < 1.0) => {
                Err(TrainError::Config("line search needs 0 < c1 < c2 < 1".into()))
            }
            OptimizerConfig::Adam(c) if !(c.lr > 0.0 && (0.0..1.0).contains(&c.beta1) && (0.0..1.0).contains(&c.beta2)) => {
                Err(TrainError::Config("Adam needs lr > 0 and betas in [0, 1)".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One executed optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub mse_u: f64,
    pub mse_f: f64,
    /// Test-set MSE, recorded every `eval_period` steps and at the last step.
    pub mse_test: Option<f64>,
    pub ms_per_step: f64,
    pub evals: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub records: Vec<StepRecord>,
    /// Step whose parameters were kept (0 means the initial parameters).
    pub best_step: usize,
    pub best_loss: f64,
}

impl LossReport {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Running minimum of the loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.records
            .iter()
            .scan(f64::INFINITY, |m, r| {
                *m = m.min(r.loss);
                Some(*m)
            })
            .collect()
    }

    pub fn test_history(&self) -> Vec<(usize, f64)> {
        self.records.iter().filter_map(|r| r.mse_test.map(|m| (r.step, m))).collect()
    }

    pub fn last_test_mse(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.mse_test)
    }

    /// CSV columns `step,loss,mse_u,mse_f,mse_test,ms_per_step`; `mse_test`
    /// is empty on steps without an evaluation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,loss,mse_u,mse_f,mse_test,ms_per_step")?;
        for r in &self.records {
            let test = r.mse_test.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{:.3}", r.step, r.loss, r.mse_u, r.mse_f, test, r.ms_per_step)?;
        }
        Ok(())
    }
}
