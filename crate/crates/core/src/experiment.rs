//! Case-study presets and the experiment configuration shared by the CLI
//! and the Python bindings.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridModel};
use crate::kan::KanNetwork;
use crate::metrics::{summarize, MetricError, Summary};
use crate::mlp::MlpNetwork;
use crate::network::{NetError, Network};
use crate::simulator::{gen_4bus_dataset, gen_smib_dataset, Dataset, PmSampling, SimError};
use crate::splines::SplineSpec;
use crate::trainer::{
    train_dynamics, train_identify, trajectory_errors, IdentifyReport, InputMap, LossConfig, LossReport,
    OptimizerConfig, TrainConfig, TrainError, Variant,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config format: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Smib,
    Fourbus,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Smib, Preset::Fourbus];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Smib => "smib",
            Preset::Fourbus => "fourbus",
        }
    }

    pub fn model(self) -> GridModel {
        match self {
            Preset::Smib => GridModel::smib(),
            Preset::Fourbus => GridModel::four_bus(),
        }
    }

    /// 100 SMIB trajectories over the injection range, or the 19 four-bus
    /// step responses.
    pub fn dataset(self, model: &GridModel, seed: u64, sampling: PmSampling) -> Result<Dataset, SimError> {
        match self {
            Preset::Smib => gen_smib_dataset(model, 100, seed, sampling),
            Preset::Fourbus => gen_4bus_dataset(model),
        }
    }

    pub fn kan_shape(self) -> Vec<usize> {
        match self {
            Preset::Smib => vec![2, 5, 1],
            Preset::Fourbus => vec![5, 10, 4],
        }
    }

    pub fn grid_size(self) -> usize {
        match self {
            Preset::Smib => 10,
            Preset::Fourbus => 5,
        }
    }

    pub fn mlp_shape(self) -> Vec<usize> {
        match self {
            Preset::Smib => vec![2, 10, 10, 10, 10, 10, 1],
            Preset::Fourbus => vec![5, 30, 30, 4],
        }
    }

    pub fn loss_config(self, variant: Variant, seed: u64) -> LossConfig {
        match self {
            Preset::Smib => LossConfig::smib(variant, seed),
            Preset::Fourbus => LossConfig::four_bus(variant, seed),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smib" => Ok(Preset::Smib),
            "fourbus" | "four_bus" | "4bus" => Ok(Preset::Fourbus),
            other => Err(format!("unknown preset `{other}`")),
        }
    }
}

/// The four compared training schemes plus the data-only baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PIKAN-I")]
    PikanI,
    #[serde(rename = "PIKAN-II")]
    PikanII,
    #[serde(rename = "PINN-I")]
    PinnI,
    #[serde(rename = "PINN-II")]
    PinnII,
    #[serde(rename = "DNN")]
    DataOnly,
}

impl Method {
    pub const COMPARED: [Method; 4] = [Method::PikanI, Method::PikanII, Method::PinnI, Method::PinnII];

    pub fn name(self) -> &'static str {
        match self {
            Method::PikanI => "PIKAN-I",
            Method::PikanII => "PIKAN-II",
            Method::PinnI => "PINN-I",
            Method::PinnII => "PINN-II",
            Method::DataOnly => "DNN",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            Method::PikanI | Method::PinnI => Variant::I,
            Method::PikanII | Method::PinnII => Variant::II,
            Method::DataOnly => Variant::DataOnly,
        }
    }

    pub fn kind(self) -> NetKind {
        match self {
            Method::PikanI | Method::PikanII => NetKind::Kan,
            _ => NetKind::Mlp,
        }
    }

    /// Desk-scale budget: 500 L-BFGS steps for KANs, 5000 Adam steps for MLPs.
    pub fn default_train_config(self, seed: u64) -> TrainConfig {
        match self.kind() {
            NetKind::Kan => TrainConfig::lbfgs(500, seed),
            NetKind::Mlp => TrainConfig::adam(5000, seed),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Kan,
    Mlp,
}

impl FromStr for NetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kan" => Ok(NetKind::Kan),
            "mlp" => Ok(NetKind::Mlp),
            other => Err(format!("unknown network kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub kind: NetKind,
    pub shape: Vec<usize>,
    #[serde(rename = "G")]
    pub grid_size: usize,
    pub k_b: usize,
    pub train_scale: bool,
}

impl NetworkConfig {
    pub fn kan(shape: Vec<usize>, grid_size: usize) -> Self {
        Self { kind: NetKind::Kan, shape, grid_size, k_b: 3, train_scale: true }
    }

    pub fn mlp(shape: Vec<usize>) -> Self {
        Self { kind: NetKind::Mlp, shape, grid_size: 0, k_b: 3, train_scale: true }
    }

    /// Fresh network whose input affine normalizes the model's input ranges.
    pub fn build(&self, model: &GridModel, seed: u64) -> Result<Network, NetError> {
        let ranges = InputMap::new(model).ranges();
        Ok(match self.kind {
            NetKind::Kan => {
                let spec = SplineSpec::new(self.k_b, self.grid_size, -1.0, 1.0)?;
                let mut n = KanNetwork::new(&self.shape, spec, seed)?.with_input_ranges(&ranges)?;
                n.set_train_scale(self.train_scale);
                Network::Kan(n)
            }
            NetKind::Mlp => Network::Mlp(MlpNetwork::new(&self.shape, seed)?.with_input_ranges(&ranges)?),
        })
    }
}

/// Identification settings: initial guesses and repetition count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    pub m0: f64,
    pub d0: f64,
    pub repeats: usize,
    pub steps: usize,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self { m0: 0.1, d0: 0.1, repeats: 20, steps: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub kan_shapes: Vec<Vec<usize>>,
    pub mlp_shapes: Vec<Vec<usize>>,
    pub seeds: Vec<u64>,
}

/// Complete description of one experiment. Unspecified JSON fields take the
/// values of the named preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub preset: Preset,
    /// Grid description overriding the preset's model.
    pub grid: Option<PathBuf>,
    pub network: NetworkConfig,
    pub variant: Variant,
    #[serde(rename = "N_u")]
    pub n_u: usize,
    #[serde(rename = "N_f")]
    pub n_f: usize,
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub eval_period: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub pm_sampling: PmSampling,
    pub identify: IdentifyConfig,
    pub scaling: ScalingConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let lc = preset.loss_config(Variant::I, 0);
        let scaling = match preset {
            Preset::Smib => ScalingConfig {
                kan_shapes: vec![vec![2, 3, 1], vec![2, 5, 1], vec![2, 8, 1]],
                mlp_shapes: vec![vec![2, 10, 10, 1], vec![2, 10, 10, 10, 1], vec![2, 10, 10, 10, 10, 10, 1]],
                seeds: vec![0, 1, 2],
            },
            Preset::Fourbus => ScalingConfig {
                kan_shapes: vec![vec![5, 5, 4], vec![5, 10, 4], vec![5, 15, 4]],
                mlp_shapes: vec![vec![5, 10, 4], vec![5, 20, 20, 4], vec![5, 30, 30, 4]],
                seeds: vec![0, 1, 2],
            },
        };
        Self {
            schema: SCHEMA_VERSION,
            preset,
            grid: None,
            network: NetworkConfig::kan(preset.kan_shape(), preset.grid_size()),
            variant: Variant::I,
            n_u: lc.n_u,
            n_f: lc.n_f,
            optimizer: OptimizerConfig::default(),
            steps: 500,
            eval_period: 10,
            seed: 0,
            out_dir: PathBuf::from("out").join(preset.name()),
            pm_sampling: PmSampling::Grid,
            identify: match preset {
                Preset::Smib => IdentifyConfig::default(),
                // Four-bus steps cost ~20x more; identification converges well within this.
                Preset::Fourbus => IdentifyConfig { steps: 100, ..IdentifyConfig::default() },
            },
            scaling,
        }
    }

    /// Parses JSON, filling missing fields from the preset it names
    /// (default `smib`).
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let user: serde_json::Value = serde_json::from_str(text)?;
        let obj = user.as_object().ok_or_else(|| ExperimentError::Config("top level must be an object".into()))?;
        let preset = match obj.get("preset") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => Preset::Smib,
        };
        let mut merged = serde_json::to_value(Self::preset(preset))?;
        let target = merged.as_object_mut().expect("struct serializes to an object");
        for (k, v) in obj {
            if !target.contains_key(k) {
                return Err(ExperimentError::Config(format!("unknown field `{k}`")));
            }
            target.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model(&self) -> Result<GridModel, ExperimentError> {
        Ok(match &self.grid {
            Some(p) => GridModel::load(p)?,
            None => self.preset.model(),
        })
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig::with_counts(self.variant, self.n_u, self.n_f, self.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { optimizer: self.optimizer, max_steps: self.steps, eval_period: self.eval_period, seed: self.seed }
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema));
        }
        let model = self.model()?;
        let n_in = InputMap::new(&model).n_inputs();
        let n_out = model.dynamic_buses().len();
        let shape = &self.network.shape;
        if shape.len() < 2 || shape.contains(&0) {
            return bad(format!("invalid network shape {shape:?}"));
        }
        if shape[0] != n_in || shape[shape.len() - 1] != n_out {
            return bad(format!("network shape {shape:?} must map {n_in} inputs to {n_out} outputs"));
        }
        if self.network.kind == NetKind::Kan {
            SplineSpec::new(self.network.k_b, self.network.grid_size, -1.0, 1.0)
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        self.loss_config().validate()?;
        self.train_config().validate()?;
        if self.identify.repeats == 0 || self.identify.steps == 0 {
            return bad("identification repeats and steps must be positive".into());
        }
        if !(self.identify.m0 > 0.0 && self.identify.d0 > 0.0) {
            return bad("initial M and D must be positive".into());
        }
        Ok(())
    }
}

/// Result of one dynamics-learning run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub network: Network,
    pub report: LossReport,
    /// Relative angle error per test trajectory.
    pub errors: Vec<f64>,
    pub summary: Summary,
    pub mse_test: f64,
}

/// Trains an already built network and scores it on the test split.
pub fn run_dynamics(
    net: Network,
    model: &GridModel,
    dataset: &Dataset,
    loss: &LossConfig,
    train: &TrainConfig,
) -> Result<RunOutcome, ExperimentError> {
    let (network, report, errors) = match net {
        Network::Kan(n) => {
            let (n, r) = train_dynamics(n, model, dataset, loss, train)?;
            let e = trajectory_errors(&n, model, dataset)?;
            (Network::Kan(n), r, e)
        }
        Network::Mlp(n) => {
            let (n, r) = train_dynamics(n, model, dataset, loss, train)?;
            let e = trajectory_errors(&n, model, dataset)?;
            (Network::Mlp(n), r, e)
        }
    };
    let mse_test = test_mse(&network, model, dataset);
    let summary = summarize(&errors)?;
    Ok(RunOutcome { network, report, errors, summary, mse_test })
}

/// Test-split MSE of an arbitrary network.
pub fn test_mse(net: &Network, model: &GridModel, dataset: &Dataset) -> f64 {
    let ts = crate::trainer::TestSet::new(model, dataset);
    match net {
        Network::Kan(n) => ts.mse(n, crate::network::Surrogate::params(n)),
        Network::Mlp(n) => ts.mse(n, crate::network::Surrogate::params(n)),
    }
}

/// Runs one of the compared methods with the preset's shapes and point
/// counts.
pub fn run_method(
    preset: Preset,
    method: Method,
    model: &GridModel,
    dataset: &Dataset,
    seed: u64,
    train: &TrainConfig,
) -> Result<RunOutcome, ExperimentError> {
    let net_cfg = match method.kind() {
        NetKind::Kan => NetworkConfig::kan(preset.kan_shape(), preset.grid_size()),
        NetKind::Mlp => NetworkConfig::mlp(preset.mlp_shape()),
    };
    let net = net_cfg.build(model, seed)?;
    run_dynamics(net, model, dataset, &preset.loss_config(method.variant(), seed), train)
}

/// One identification run from the initial guesses in `cfg`.
pub fn run_identify(
    net_cfg: &NetworkConfig,
    model: &GridModel,
    dataset: &Dataset,
    loss: &LossConfig,
    train: &TrainConfig,
    cfg: &IdentifyConfig,
) -> Result<IdentifyReport, ExperimentError> {
    let n = model.n_bus();
    let m0 = vec![cfg.m0; n];
    let d0 = vec![cfg.d0; n];
    let report = match net_cfg.build(model, train.seed)? {
        Network::Kan(k) => train_identify(k, model, dataset, loss, train, &m0, &d0)?.1,
        Network::Mlp(m) => train_identify(m, model, dataset, loss, train, &m0, &d0)?.1,
    };
    Ok(report)
}
