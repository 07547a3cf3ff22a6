//! Fixed-step RK4 time-domain simulation and dataset generation.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridModel, InjectionSpace, OdeScratch};

/// Internal RK4 step (s).
pub const DEFAULT_DT: f64 = 1e-3;
/// Output sampling period (s).
pub const DEFAULT_DT_OUT: f64 = 0.1;
/// Angle magnitude treated as loss of synchronism.
pub const BLOW_UP_THRESHOLD: f64 = 1e3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid integration setting: {0}")]
    Config(String),
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("metadata format: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub model: String,
    pub seed: u64,
    pub initial_state: Vec<f64>,
}

/// Sampled solution on a uniform output grid. `theta` and `omega` are
/// `n_t × n_bus`, row per time sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub pm: Vec<f64>,
    pub meta: TrajectoryMeta,
    pub blown_up: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Integration step settings; `dt_out` must be an integer multiple of `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    pub dt: f64,
    pub dt_out: f64,
}

impl Default for Integrator {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, dt_out: DEFAULT_DT_OUT }
    }
}

impl Integrator {
    fn substeps(&self) -> Result<usize, SimError> {
        let ratio = self.dt_out / self.dt;
        let k = ratio.round();
        if !(self.dt > 0.0 && k >= 1.0 && (ratio - k).abs() < 1e-9) {
            return Err(SimError::Config(format!("dt_out {} is not a multiple of dt {}", self.dt_out, self.dt)));
        }
        Ok(k as usize)
    }

    /// Packed states every `dt_out` over `[0, horizon]`, stopping early on
    /// blow-up. Returns `(states, blown_up)`.
    pub fn run(
        &self,
        model: &GridModel,
        state0: &[f64],
        pm: &[f64],
        horizon: f64,
    ) -> Result<(Vec<Vec<f64>>, bool), SimError> {
        let sub = self.substeps()?;
        let n_out = (horizon / self.dt_out).round() as usize;
        // Validates shapes once.
        model.ode_rhs(state0, pm)?;
        let n = state0.len();
        let mut scratch = OdeScratch::new(model.n_bus());
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut x = state0.to_vec();
        let mut out = Vec::with_capacity(n_out + 1);
        out.push(x.clone());
        let h = self.dt;
        let n_theta = model.dynamic_buses().len();
        for _ in 0..n_out {
            for _ in 0..sub {
                model.ode_rhs_into(&x, pm, &mut scratch, &mut k1);
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * h * k1[i];
                }
                model.ode_rhs_into(&tmp, pm, &mut scratch, &mut k2);
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * h * k2[i];
                }
                model.ode_rhs_into(&tmp, pm, &mut scratch, &mut k3);
                for i in 0..n {
                    tmp[i] = x[i] + h * k3[i];
                }
                model.ode_rhs_into(&tmp, pm, &mut scratch, &mut k4);
                for i in 0..n {
                    x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            let lost = x.iter().any(|v| !v.is_finite()) || x[..n_theta].iter().any(|v| v.abs() > BLOW_UP_THRESHOLD);
            if lost {
                return Ok((out, true));
            }
            out.push(x.clone());
        }
        Ok((out, false))
    }
}

/// Simulates from `state0` (packed) under constant injections `pm`.
pub fn integrate(model: &GridModel, state0: &[f64], pm: &[f64], horizon: f64) -> Result<Trajectory, SimError> {
    integrate_with(model, state0, pm, horizon, Integrator::default(), 0)
}

pub fn integrate_with(
    model: &GridModel,
    state0: &[f64],
    pm: &[f64],
    horizon: f64,
    integrator: Integrator,
    seed: u64,
) -> Result<Trajectory, SimError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(SimError::Config(format!("horizon must be positive, got {horizon}")));
    }
    let (states, blown_up) = integrator.run(model, state0, pm, horizon)?;
    let mut traj = Trajectory {
        times: Vec::with_capacity(states.len()),
        theta: Vec::with_capacity(states.len()),
        omega: Vec::with_capacity(states.len()),
        pm: pm.to_vec(),
        meta: TrajectoryMeta { model: model.name().to_string(), seed, initial_state: state0.to_vec() },
        blown_up,
    };
    for (k, s) in states.iter().enumerate() {
        let (th, om) = model.unpack_state(s, pm);
        traj.times.push(k as f64 * integrator.dt_out);
        traj.theta.push(th);
        traj.omega.push(om);
    }
    Ok(traj)
}

/// A collection of trajectories with train/test membership.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_bus: usize,
    pub trajectories: Vec<Trajectory>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl Dataset {
    /// Every trajectory serves both as training source and test set.
    pub fn new(n_bus: usize, trajectories: Vec<Trajectory>, seed: u64) -> Self {
        let all: Vec<usize> = (0..trajectories.len()).collect();
        Self { n_bus, trajectories, train: all.clone(), test: all, seed }
    }

    pub fn n_samples(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// `N_test`: number of `(trajectory, time)` samples in the test split.
    pub fn n_test(&self) -> usize {
        self.test.iter().map(|&i| self.trajectories[i].len()).sum()
    }

    pub fn n_train_samples(&self) -> usize {
        self.train.iter().map(|&i| self.trajectories[i].len()).sum()
    }

    /// Deterministic digest of all numbers in the dataset.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        use sha2::{Digest, Sha256};
        Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn header(&self) -> Vec<String> {
        let n = self.n_bus;
        let mut h = vec!["traj_id".to_string(), "t".to_string()];
        h.extend((1..=n).map(|i| format!("theta_{i}")));
        h.extend((1..=n).map(|i| format!("omega_{i}")));
        h.extend((1..=n).map(|i| format!("pm_{i}")));
        h
    }

    /// CSV with header `traj_id,t,theta_1..n,omega_1..n,pm_1..n`, one row per
    /// `(trajectory, time)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        let mut row: Vec<String> = Vec::with_capacity(2 + 3 * self.n_bus);
        for (id, tr) in self.trajectories.iter().enumerate() {
            for k in 0..tr.len() {
                row.clear();
                row.push(id.to_string());
                row.push(tr.times[k].to_string());
                row.extend(tr.theta[k].iter().map(f64::to_string));
                row.extend(tr.omega[k].iter().map(f64::to_string));
                row.extend(tr.pm.iter().map(f64::to_string));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, SimError> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rd.headers()?.clone();
        let width = header.len();
        if width < 5 || (width - 2) % 3 != 0 || &header[0] != "traj_id" || &header[1] != "t" {
            return Err(SimError::Parse { line: 1, msg: "unexpected header".into() });
        }
        let n = (width - 2) / 3;
        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut last_id: Option<usize> = None;
        for rec in rd.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |msg: String| SimError::Parse { line, msg };
            if rec.len() != width {
                return Err(bad(format!("expected {width} fields, got {}", rec.len())));
            }
            let id: usize = rec[0].trim().parse().map_err(|e| bad(format!("traj_id: {e}")))?;
            let nums: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("number: {e}")))?;
            match last_id {
                Some(prev) if prev == id => {}
                Some(prev) if id != prev + 1 => {
                    return Err(bad(format!("traj_id {id} follows {prev}")));
                }
                None if id != 0 => return Err(bad("first traj_id must be 0".into())),
                _ => trajectories.push(Trajectory {
                    times: Vec::new(),
                    theta: Vec::new(),
                    omega: Vec::new(),
                    pm: nums[1 + 2 * n..].to_vec(),
                    meta: TrajectoryMeta { model: String::new(), seed: 0, initial_state: Vec::new() },
                    blown_up: false,
                }),
            }
            last_id = Some(id);
            let tr = trajectories.last_mut().expect("pushed above");
            tr.times.push(nums[0]);
            tr.theta.push(nums[1..1 + n].to_vec());
            tr.omega.push(nums[1 + n..1 + 2 * n].to_vec());
        }
        Ok(Dataset::new(n, trajectories, 0))
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub model_hash: String,
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt_out: f64,
    pub n_traj: usize,
}

impl DatasetMeta {
    pub fn new(model: &GridModel, ds: &Dataset) -> Self {
        Self {
            model_hash: model.hash(),
            seed: ds.seed,
            horizon: model.horizon(),
            dt_out: DEFAULT_DT_OUT,
            n_traj: ds.trajectories.len(),
        }
    }
}

/// How the SMIB injection values are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmSampling {
    /// Evenly spaced values including both bounds.
    #[default]
    Grid,
    /// Independent uniform draws.
    Random,
}

/// SplitMix64 step, used to derive per-trajectory seeds from a master seed.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Single-machine dataset: `θ₀ = 0.1 rad`, `ω₀ = 0.1 rad/s`, injections on
/// bus 1 spread over its bounds.
pub fn gen_smib_dataset(
    model: &GridModel,
    n_traj: usize,
    seed: u64,
    sampling: PmSampling,
) -> Result<Dataset, SimError> {
    let gens = model.generator_buses();
    if gens.len() != 1 || model.dynamic_buses().len() != 1 {
        return Err(SimError::Config("single-machine dataset needs exactly one generator".into()));
    }
    let g = gens[0];
    let (lo, hi) = model.pm_bounds()[g];
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let values: Vec<f64> = match sampling {
        PmSampling::Grid if n_traj == 1 => vec![0.5 * (lo + hi)],
        PmSampling::Grid => (0..n_traj).map(|k| lo + (hi - lo) * k as f64 / (n_traj - 1) as f64).collect(),
        PmSampling::Random => (0..n_traj).map(|_| rng.random_range(lo..=hi)).collect(),
    };
    let mut theta0 = vec![0.0; model.n_bus()];
    let mut omega0 = vec![0.0; model.n_bus()];
    theta0[g] = 0.1;
    omega0[g] = 0.1;
    let state0 = model.pack_state(&theta0, &omega0);
    let trajectories = values
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut pm = vec![0.0; model.n_bus()];
            pm[g] = p;
            integrate_with(model, &state0, &pm, model.horizon(), Integrator::default(), splitmix64(seed ^ k as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(model.n_bus(), trajectories, seed))
}

/// Step-injection dataset: starting from rest, `P_m = a · pattern` for each
/// scale `a`.
pub fn gen_ray_dataset(model: &GridModel, scales: &[f64]) -> Result<Dataset, SimError> {
    let pattern = match model.injection_space() {
        InjectionSpace::Ray { pattern, .. } => pattern.clone(),
        InjectionSpace::Box => return Err(SimError::Config("model has no injection pattern".into())),
    };
    let state0 = vec![0.0; model.state_len()];
    let trajectories = scales
        .iter()
        .map(|&a| {
            let pm: Vec<f64> = pattern.iter().map(|p| a * p).collect();
            integrate_with(model, &state0, &pm, model.horizon(), Integrator::default(), 0)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(model.n_bus(), trajectories, 0))
}

/// Four-bus dataset: 19 trajectories with `a = 0.5, 1.0, …, 9.5`.
pub fn gen_4bus_dataset(model: &GridModel) -> Result<Dataset, SimError> {
    let scales: Vec<f64> = (1..=19).map(|k| 0.5 * k as f64).collect();
    gen_ray_dataset(model, &scales)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_stays_put() {
        let g = GridModel::smib();
        let th = 0.5f64.asin();
        let tr = integrate(&g, &[th, 0.0], &[0.1, 0.0], 5.0).unwrap();
        assert_eq!(tr.len(), 51);
        for row in &tr.theta {
            assert!((row[0] - th).abs() < 1e-12);
        }
        let z = integrate(&GridModel::four_bus(), &[0.0; 6], &[0.0; 4], 5.0).unwrap();
        assert!(z.theta.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn time_grid_and_first_row() {
        let g = GridModel::smib();
        let tr = integrate(&g, &[0.1, 0.1], &[0.12, 0.0], 20.0).unwrap();
        assert_eq!(tr.len(), 201);
        for w in tr.times.windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() < 1e-12);
        }
        assert_eq!(tr.theta[0], vec![0.1, 0.0]);
        assert_eq!(tr.omega[0], vec![0.1, 0.0]);
        assert!(!tr.blown_up);
    }

    #[test]
    fn blow_up_is_flagged() {
        // Far beyond the transfer limit the machine slips poles indefinitely.
        let g = GridModel::smib();
        let tr = integrate_with(&g, &[0.1, 0.1], &[50.0, 0.0], 200.0, Integrator::default(), 0).unwrap();
        assert!(tr.blown_up);
        assert!(tr.len() < 2001);
    }

    #[test]
    fn bad_integrator() {
        let g = GridModel::smib();
        let bad = Integrator { dt: 0.03, dt_out: 0.1 };
        assert!(integrate_with(&g, &[0.1, 0.1], &[0.1, 0.0], 1.0, bad, 0).is_err());
    }

    #[test]
    fn load_omega_is_implied_rate() {
        let g = GridModel::four_bus();
        let pm: Vec<f64> = [0.1, 0.2, -0.1, -0.2].iter().map(|p| 3.0 * p).collect();
        let fine = Integrator { dt: 1e-3, dt_out: 1e-3 };
        let tr = integrate_with(&g, &[0.0; 6], &pm, 0.5, fine, 0).unwrap();
        for k in 1..tr.len() - 1 {
            for bus in [2, 3] {
                let fd = (tr.theta[k + 1][bus] - tr.theta[k - 1][bus]) / 2e-3;
                assert!((fd - tr.omega[k][bus]).abs() < 1e-3 * tr.omega[k][bus].abs().max(0.1));
            }
        }
    }

    #[test]
    fn degenerate_zero_scale() {
        let ds = gen_ray_dataset(&GridModel::four_bus(), &[0.0]).unwrap();
        assert!(ds.trajectories[0].theta.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn csv_round_trip_small() {
        let g = GridModel::four_bus();
        let ds = gen_ray_dataset(&g, &[1.0, 2.5]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.trajectories.len(), 2);
        for (a, b) in ds.trajectories.iter().zip(&back.trajectories) {
            assert_eq!(a.times, b.times);
            assert_eq!(a.theta, b.theta);
            assert_eq!(a.omega, b.omega);
            assert_eq!(a.pm, b.pm);
        }
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = Dataset::new(2, Vec::new(), 0);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "traj_id,t,theta_1,theta_2,omega_1,omega_2,pm_1,pm_2\n");
        assert_eq!(Dataset::read_csv(text.as_bytes()).unwrap().trajectories.len(), 0);
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "traj_id,t,theta_1,omega_1,pm_1\n0,0,0.1,0.1,0.1\n0,0.1,abc,0.1,0.1\n";
        match Dataset::read_csv(text.as_bytes()) {
            Err(SimError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let short = "traj_id,t,theta_1,omega_1,pm_1\n0,0,0.1,0.1\n";
        assert!(Dataset::read_csv(short.as_bytes()).is_err());
    }
}
