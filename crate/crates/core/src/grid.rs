//! Lossless swing-equation model of a small transmission grid.
//!
//! Generators follow `M θ̈ + D θ̇ = P_m − P_e`, frequency-dependent loads
//! follow `D θ̇ = P_m − P_e`, and the infinite bus is pinned at `θ = 0`.
//! Electrical power is `P_e,i = Σ_j B_ij sin(θ_i − θ_j)`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diff::Jet2;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid model: {0}")]
    Config(String),
    #[error("expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("equilibrium solve failed: {0}")]
    Equilibrium(String),
    #[error("grid config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("grid config format: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Generator,
    LoadFreqDep,
    InfiniteBus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub kind: BusKind,
    #[serde(rename = "M", default)]
    pub m: f64,
    #[serde(rename = "D", default)]
    pub d: f64,
    #[serde(rename = "Pm_min", default)]
    pub pm_min: f64,
    #[serde(rename = "Pm_max", default)]
    pub pm_max: f64,
}

/// A line between buses `i` and `j` (1-based, as in the config file).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "B")]
    pub b: f64,
}

/// How admissible injection vectors are parameterized.
///
/// `Box` treats each bus bound independently. `Ray` restricts injections to
/// `a · pattern` for `a ∈ [scale_min, scale_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InjectionSpace {
    Box,
    Ray { pattern: Vec<f64>, scale_min: f64, scale_max: f64 },
}

/// On-disk grid description: `{buses, lines, T}` plus optional metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default)]
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_injection")]
    pub injection: InjectionSpace,
}

fn default_injection() -> InjectionSpace {
    InjectionSpace::Box
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    config: GridConfig,
    /// Dense symmetric susceptance matrix, row-major `n × n`.
    b: Vec<f64>,
    dynamic: Vec<usize>,
    generators: Vec<usize>,
}

impl GridModel {
    pub fn new(config: GridConfig) -> Result<Self, GridError> {
        let n = config.buses.len();
        let bad = |msg: String| Err(GridError::Config(msg));
        if n == 0 {
            return bad("no buses".into());
        }
        if !(config.horizon.is_finite() && config.horizon > 0.0) {
            return bad(format!("time horizon must be positive, got {}", config.horizon));
        }
        for (k, bus) in config.buses.iter().enumerate() {
            let id = k + 1;
            match bus.kind {
                BusKind::Generator if !(bus.m > 0.0 && bus.d > 0.0) => {
                    return bad(format!("generator bus {id} needs M > 0 and D > 0"));
                }
                BusKind::LoadFreqDep if !(bus.m == 0.0 && bus.d > 0.0) => {
                    return bad(format!("load bus {id} needs M = 0 and D > 0"));
                }
                _ => {}
            }
            if bus.pm_min > bus.pm_max {
                return bad(format!("bus {id} has Pm_min > Pm_max"));
            }
        }
        let mut b = vec![0.0; n * n];
        for line in &config.lines {
            if line.i == 0 || line.j == 0 || line.i > n || line.j > n || line.i == line.j {
                return bad(format!("line ({}, {}) does not join two distinct buses", line.i, line.j));
            }
            if !line.b.is_finite() {
                return bad(format!("line ({}, {}) has non-finite susceptance", line.i, line.j));
            }
            let (i, j) = (line.i - 1, line.j - 1);
            b[i * n + j] += line.b;
            b[j * n + i] += line.b;
        }
        let dynamic: Vec<usize> =
            (0..n).filter(|&k| config.buses[k].kind != BusKind::InfiniteBus).collect();
        if dynamic.is_empty() {
            return bad("at least one bus must be dynamic".into());
        }
        let generators = (0..n).filter(|&k| config.buses[k].kind == BusKind::Generator).collect();
        if let InjectionSpace::Ray { pattern, scale_min, scale_max } = &config.injection {
            if pattern.len() != n || scale_min > scale_max {
                return bad("injection ray needs one pattern entry per bus and scale_min <= scale_max".into());
            }
        }
        Ok(Self { config, b, dynamic, generators })
    }

    /// Single machine against an infinite bus: `M = 0.4`, `D = 0.15`,
    /// `B_12 = 0.2`, `P_m ∈ [0.08, 0.18]`, `T = 20 s`.
    pub fn smib() -> Self {
        Self::smib_with_susceptance(0.2)
    }

    pub fn smib_with_susceptance(b12: f64) -> Self {
        Self::new(GridConfig {
            name: "smib".into(),
            buses: vec![
                Bus { kind: BusKind::Generator, m: 0.4, d: 0.15, pm_min: 0.08, pm_max: 0.18 },
                Bus { kind: BusKind::InfiniteBus, m: 0.0, d: 0.0, pm_min: 0.0, pm_max: 0.0 },
            ],
            lines: vec![Line { i: 1, j: 2, b: b12 }],
            horizon: 20.0,
            injection: InjectionSpace::Box,
        })
        .expect("valid smib preset")
    }

    /// Two generators and two frequency-dependent loads on a 4-bus ring
    /// with uniform 2.0 p.u. lines, driven by `a · [0.1, 0.2, −0.1, −0.2]`
    /// for `a ∈ [0.5, 9.5]`, `T = 5 s`.
    pub fn four_bus() -> Self {
        Self::four_bus_with_susceptance(2.0)
    }

    pub fn four_bus_with_susceptance(b: f64) -> Self {
        let pattern = vec![0.1, 0.2, -0.1, -0.2];
        let (a_min, a_max) = (0.5, 9.5);
        let bus = |kind, m, d, p: f64| {
            let (lo, hi) = if p >= 0.0 { (a_min * p, a_max * p) } else { (a_max * p, a_min * p) };
            Bus { kind, m, d, pm_min: lo, pm_max: hi }
        };
        Self::new(GridConfig {
            name: "fourbus".into(),
            buses: vec![
                bus(BusKind::Generator, 0.3, 0.15, pattern[0]),
                bus(BusKind::Generator, 0.2, 0.3, pattern[1]),
                bus(BusKind::LoadFreqDep, 0.0, 0.25, pattern[2]),
                bus(BusKind::LoadFreqDep, 0.0, 0.2, pattern[3]),
            ],
            lines: vec![
                Line { i: 1, j: 2, b },
                Line { i: 2, j: 3, b },
                Line { i: 3, j: 4, b },
                Line { i: 4, j: 1, b },
            ],
            horizon: 5.0,
            injection: InjectionSpace::Ray { pattern, scale_min: a_min, scale_max: a_max },
        })
        .expect("valid four-bus preset")
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path)?;
        Self::new(serde_json::from_str(&text)?)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.config).expect("grid config serializes")
    }

    /// SHA-256 of the canonical config JSON.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.config).expect("grid config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn n_bus(&self) -> usize {
        self.config.buses.len()
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn buses(&self) -> &[Bus] {
        &self.config.buses
    }

    pub fn kind(&self, bus: usize) -> BusKind {
        self.config.buses[bus].kind
    }

    pub fn susceptance(&self, i: usize, j: usize) -> f64 {
        self.b[i * self.n_bus() + j]
    }

    /// Buses carrying state (every bus except infinite buses), in order.
    pub fn dynamic_buses(&self) -> &[usize] {
        &self.dynamic
    }

    pub fn generator_buses(&self) -> &[usize] {
        &self.generators
    }

    pub fn inertia(&self) -> Vec<f64> {
        self.config.buses.iter().map(|b| b.m).collect()
    }

    pub fn damping(&self) -> Vec<f64> {
        self.config.buses.iter().map(|b| b.d).collect()
    }

    pub fn injection_space(&self) -> &InjectionSpace {
        &self.config.injection
    }

    pub fn pm_bounds(&self) -> Vec<(f64, f64)> {
        self.config.buses.iter().map(|b| (b.pm_min, b.pm_max)).collect()
    }

    /// Length of the packed ODE state: θ of dynamic buses, then ω of generators.
    pub fn state_len(&self) -> usize {
        self.dynamic.len() + self.generators.len()
    }

    fn check(&self, expected: usize, got: usize) -> Result<(), GridError> {
        if expected != got {
            return Err(GridError::Shape { expected, got });
        }
        Ok(())
    }

    /// `P_e,i = Σ_j B_ij sin(θ_i − θ_j)` for every bus.
    pub fn electrical_power(&self, theta: &[f64]) -> Result<Vec<f64>, GridError> {
        let n = self.n_bus();
        self.check(n, theta.len())?;
        let mut pe = vec![0.0; n];
        self.electrical_power_into(theta, &mut pe);
        Ok(pe)
    }

    pub(crate) fn electrical_power_into(&self, theta: &[f64], pe: &mut [f64]) {
        let n = self.n_bus();
        for i in 0..n {
            let row = &self.b[i * n..(i + 1) * n];
            pe[i] = row
                .iter()
                .zip(theta)
                .filter(|(b, _)| **b != 0.0)
                .map(|(b, tj)| b * (theta[i] - tj).sin())
                .sum();
        }
    }

    /// Electrical power on time jets.
    pub fn electrical_power_jet(&self, theta: &[Jet2]) -> Result<Vec<Jet2>, GridError> {
        let n = self.n_bus();
        self.check(n, theta.len())?;
        Ok((0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| self.susceptance(i, j) != 0.0)
                    .fold(Jet2::ZERO, |acc, j| acc + (theta[i] - theta[j]).sin().scale(self.susceptance(i, j)))
            })
            .collect())
    }

    /// Swing residual for every dynamic bus, using the model's `M` and `D`.
    ///
    /// `theta` holds jets for every bus (infinite buses must be zero).
    pub fn swing_residual(&self, theta: &[Jet2], pm: &[f64]) -> Result<Vec<f64>, GridError> {
        self.swing_residual_with(theta, pm, &self.inertia(), &self.damping())
    }

    /// Swing residual with explicit per-bus inertia and damping.
    ///
    /// Generators: `M θ̈ + D θ̇ + P_e − P_m`; loads: `D θ̇ + P_e − P_m`.
    pub fn swing_residual_with(
        &self,
        theta: &[Jet2],
        pm: &[f64],
        m: &[f64],
        d: &[f64],
    ) -> Result<Vec<f64>, GridError> {
        let n = self.n_bus();
        self.check(n, theta.len())?;
        self.check(n, pm.len())?;
        self.check(n, m.len())?;
        self.check(n, d.len())?;
        let values: Vec<f64> = theta.iter().map(|j| j.v).collect();
        let pe = self.electrical_power(&values)?;
        Ok(self
            .dynamic
            .iter()
            .map(|&i| {
                let inertial = if self.kind(i) == BusKind::Generator { m[i] * theta[i].d2 } else { 0.0 };
                inertial + d[i] * theta[i].d1 + pe[i] - pm[i]
            })
            .collect())
    }

    /// Unpacks a state vector into per-bus `(θ, ω)`; infinite buses get zeros
    /// and loads get `ω = (P_m − P_e)/D`.
    pub fn unpack_state(&self, state: &[f64], pm: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_bus();
        let mut theta = vec![0.0; n];
        for (k, &bus) in self.dynamic.iter().enumerate() {
            theta[bus] = state[k];
        }
        let mut omega = vec![0.0; n];
        let nd = self.dynamic.len();
        for (k, &bus) in self.generators.iter().enumerate() {
            omega[bus] = state[nd + k];
        }
        let mut pe = vec![0.0; n];
        self.electrical_power_into(&theta, &mut pe);
        for &bus in &self.dynamic {
            if self.kind(bus) == BusKind::LoadFreqDep {
                omega[bus] = (pm[bus] - pe[bus]) / self.config.buses[bus].d;
            }
        }
        (theta, omega)
    }

    /// Packs per-bus `(θ, ω)` into the ODE state layout.
    pub fn pack_state(&self, theta: &[f64], omega: &[f64]) -> Vec<f64> {
        self.dynamic
            .iter()
            .map(|&b| theta[b])
            .chain(self.generators.iter().map(|&b| omega[b]))
            .collect()
    }

    /// Explicit ODE right-hand side on the packed state.
    pub fn ode_rhs(&self, state: &[f64], pm: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check(self.state_len(), state.len())?;
        self.check(self.n_bus(), pm.len())?;
        let mut out = vec![0.0; state.len()];
        let mut scratch = OdeScratch::new(self.n_bus());
        self.ode_rhs_into(state, pm, &mut scratch, &mut out);
        Ok(out)
    }

    pub(crate) fn ode_rhs_into(&self, state: &[f64], pm: &[f64], scratch: &mut OdeScratch, out: &mut [f64]) {
        let nd = self.dynamic.len();
        scratch.theta.iter_mut().for_each(|v| *v = 0.0);
        for (k, &bus) in self.dynamic.iter().enumerate() {
            scratch.theta[bus] = state[k];
        }
        self.electrical_power_into(&scratch.theta, &mut scratch.pe);
        let buses = &self.config.buses;
        let mut g = 0;
        for (k, &bus) in self.dynamic.iter().enumerate() {
            let imbalance = pm[bus] - scratch.pe[bus];
            match buses[bus].kind {
                BusKind::Generator => {
                    let omega = state[nd + g];
                    out[k] = omega;
                    out[nd + g] = (imbalance - buses[bus].d * omega) / buses[bus].m;
                    g += 1;
                }
                BusKind::LoadFreqDep => out[k] = imbalance / buses[bus].d,
                BusKind::InfiniteBus => unreachable!(),
            }
        }
    }

    /// Angles solving `P_e(θ) = P_m` with a reference angle pinned at zero.
    ///
    /// The reference is the first infinite bus, or bus 1 when there is none
    /// (in which case the injections must sum to zero).
    pub fn solve_equilibrium(&self, pm: &[f64]) -> Result<Vec<f64>, GridError> {
        let n = self.n_bus();
        self.check(n, pm.len())?;
        let reference = self
            .config
            .buses
            .iter()
            .position(|b| b.kind == BusKind::InfiniteBus)
            .unwrap_or(0);
        let has_infinite = self.kind(reference) == BusKind::InfiniteBus;
        if !has_infinite {
            let total: f64 = pm.iter().sum();
            if total.abs() > 1e-9 {
                return Err(GridError::Equilibrium(format!(
                    "injections sum to {total}, lossless grid needs a balanced vector"
                )));
            }
        }
        let free: Vec<usize> = (0..n)
            .filter(|&k| k != reference && self.kind(k) != BusKind::InfiniteBus)
            .collect();
        let mut theta = vec![0.0; n];
        if free.is_empty() {
            return Ok(theta);
        }
        let m = free.len();
        for _ in 0..50 {
            let pe = self.electrical_power(&theta)?;
            let mismatch: Vec<f64> = free.iter().map(|&i| pe[i] - pm[i]).collect();
            if mismatch.iter().all(|v| v.abs() <= 1e-10) {
                return Ok(theta);
            }
            let mut jac = vec![0.0; m * m];
            for (r, &i) in free.iter().enumerate() {
                for (c, &k) in free.iter().enumerate() {
                    jac[r * m + c] = if i == k {
                        (0..n).map(|j| self.susceptance(i, j) * (theta[i] - theta[j]).cos()).sum()
                    } else {
                        -self.susceptance(i, k) * (theta[i] - theta[k]).cos()
                    };
                }
            }
            let step = solve_dense(&mut jac, mismatch, m)
                .ok_or_else(|| GridError::Equilibrium("singular power-flow Jacobian".into()))?;
            for (c, &k) in free.iter().enumerate() {
                theta[k] -= step[c];
            }
        }
        Err(GridError::Equilibrium("Newton iteration did not converge in 50 steps".into()))
    }

    /// `½ M ω² − P_m θ − B cos θ` for a single machine against an infinite
    /// bus; conserved when the machine is undamped.
    pub fn smib_energy(&self, theta: f64, omega: f64, pm: f64) -> f64 {
        let gen = self.generators.first().copied().unwrap_or(0);
        let inf = (0..self.n_bus()).find(|&k| self.kind(k) == BusKind::InfiniteBus).unwrap_or(1);
        let m = self.config.buses[gen].m;
        0.5 * m * omega * omega - pm * theta - self.susceptance(gen, inf) * theta.cos()
    }

    /// A copy with every bus damping scaled, e.g. `0.0` for the undamped case.
    pub fn with_damping(&self, d: &[f64]) -> Result<Self, GridError> {
        self.check(self.n_bus(), d.len())?;
        let mut config = self.config.clone();
        for (bus, &v) in config.buses.iter_mut().zip(d) {
            bus.d = v;
        }
        Ok(Self { config, ..self.clone() })
    }
}

pub(crate) struct OdeScratch {
    theta: Vec<f64>,
    pe: Vec<f64>,
}

impl OdeScratch {
    pub(crate) fn new(n: usize) -> Self {
        Self { theta: vec![0.0; n], pe: vec![0.0; n] }
    }
}

/// Gaussian elimination with partial pivoting on a row-major `n × n` system.
fn solve_dense(a: &mut [f64], mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * b[k]).sum();
        b[row] = (b[row] - s) / a[row * n + row];
    }
    Some(b)
}
