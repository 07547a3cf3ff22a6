//! Labeled and collocation point sets.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{GridModel, InjectionSpace};
use crate::simulator::{splitmix64, Dataset};

use super::{LossConfig, TrainError, Variant};

/// Maps `(t, P_m)` to network inputs: `t` followed by the injections of
/// every bus whose bounds span a nonzero range.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMap {
    buses: Vec<usize>,
    horizon: f64,
    bounds: Vec<(f64, f64)>,
}

impl InputMap {
    pub fn new(model: &GridModel) -> Self {
        let all = model.pm_bounds();
        let buses: Vec<usize> = (0..model.n_bus()).filter(|&b| all[b].1 > all[b].0).collect();
        let bounds = buses.iter().map(|&b| all[b]).collect();
        Self { buses, horizon: model.horizon(), bounds }
    }

    pub fn n_inputs(&self) -> usize {
        1 + self.buses.len()
    }

    pub fn buses(&self) -> &[usize] {
        &self.buses
    }

    /// Raw input ranges, for building normalizing affines.
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        std::iter::once((0.0, self.horizon)).chain(self.bounds.iter().copied()).collect()
    }

    pub fn features(&self, t: f64, pm: &[f64]) -> Vec<f64> {
        std::iter::once(t).chain(self.buses.iter().map(|&b| pm[b])).collect()
    }
}

/// Labeled sample: network input with angle and frequency labels for every
/// dynamic bus.
#[derive(Debug, Clone, PartialEq)]
pub struct UPoint {
    pub input: Vec<f64>,
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Collocation sample: network input plus the full injection vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FPoint {
    pub input: Vec<f64>,
    pub pm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Points {
    pub u: Vec<UPoint>,
    pub f: Vec<FPoint>,
}

/// How collocation inputs are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collocation {
    #[default]
    Random,
    /// Tensor grid of `⌈√N_f⌉` times by injection levels, truncated to `N_f`.
    Grid,
}

fn injection_at(model: &GridModel, s: &[f64]) -> Vec<f64> {
    match model.injection_space() {
        InjectionSpace::Box => {
            model.pm_bounds().iter().zip(s).map(|(&(lo, hi), u)| lo + (hi - lo) * u).collect()
        }
        InjectionSpace::Ray { pattern, scale_min, scale_max } => {
            let a = scale_min + (scale_max - scale_min) * s[0];
            pattern.iter().map(|p| a * p).collect()
        }
    }
}

/// Draws `N_u` labeled samples without replacement from the training
/// trajectories and `N_f` collocation points over `[0, T] ×` the injection
/// space. DataOnly runs get no collocation points.
pub fn sample_points(dataset: &Dataset, model: &GridModel, cfg: &LossConfig) -> Result<Points, TrainError> {
    cfg.validate()?;
    if dataset.trajectories.is_empty() || dataset.train.is_empty() {
        return Err(TrainError::Config("dataset has no training trajectories".into()));
    }
    let map = InputMap::new(model);
    let dynamic = model.dynamic_buses();
    let pool: Vec<(usize, usize)> = dataset
        .train
        .iter()
        .flat_map(|&id| (0..dataset.trajectories[id].len()).map(move |k| (id, k)))
        .collect();
    if cfg.n_u > pool.len() {
        return Err(TrainError::Config(format!(
            "N_u = {} exceeds the {} available training samples",
            cfg.n_u,
            pool.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed));
    let mut picks = index::sample(&mut rng, pool.len(), cfg.n_u).into_vec();
    picks.sort_unstable();
    let u = picks
        .into_iter()
        .map(|i| {
            let (id, k) = pool[i];
            let tr = &dataset.trajectories[id];
            UPoint {
                input: map.features(tr.times[k], &tr.pm),
                theta: dynamic.iter().map(|&b| tr.theta[k][b]).collect(),
                omega: dynamic.iter().map(|&b| tr.omega[k][b]).collect(),
            }
        })
        .collect();

    let n_f = if cfg.variant == Variant::DataOnly { 0 } else { cfg.n_f };
    let n_s = match model.injection_space() {
        InjectionSpace::Box => model.n_bus(),
        InjectionSpace::Ray { .. } => 1,
    };
    let horizon = model.horizon();
    let mut f = Vec::with_capacity(n_f);
    match cfg.collocation {
        Collocation::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x5eed_f00d));
            for _ in 0..n_f {
                let t = rng.random_range(0.0..=horizon);
                let s: Vec<f64> = (0..n_s).map(|_| rng.random_range(0.0..=1.0)).collect();
                let pm = injection_at(model, &s);
                f.push(FPoint { input: map.features(t, &pm), pm });
            }
        }
        Collocation::Grid if n_f > 0 => {
            let n_t = (n_f as f64).sqrt().ceil() as usize;
            let n_p = n_f.div_ceil(n_t);
            let frac = |k: usize, n: usize| if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
            'outer: for kp in 0..n_p {
                let pm = injection_at(model, &vec![frac(kp, n_p); n_s]);
                for kt in 0..n_t {
                    if f.len() == n_f {
                        break 'outer;
                    }
                    let t = horizon * frac(kt, n_t);
                    f.push(FPoint { input: map.features(t, &pm), pm: pm.clone() });
                }
            }
        }
        Collocation::Grid => {}
    }
    Ok(Points { u, f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{gen_4bus_dataset, gen_smib_dataset, PmSampling};

    #[test]
    fn smib_defaults() {
        let g = GridModel::smib();
        let ds = gen_smib_dataset(&g, 5, 0, PmSampling::Grid).unwrap();
        let pts = sample_points(&ds, &g, &LossConfig::smib(Variant::I, 0)).unwrap();
        assert_eq!((pts.u.len(), pts.f.len()), (40, 800));
        for p in &pts.f {
            assert!((0.0..=20.0).contains(&p.input[0]));
            assert!((0.08..=0.18).contains(&p.input[1]));
            assert_eq!(p.pm[1], 0.0);
        }
        assert_eq!(pts.u[0].input.len(), 2);
    }

    #[test]
    fn four_bus_defaults_follow_pattern() {
        let g = GridModel::four_bus();
        let ds = gen_4bus_dataset(&g).unwrap();
        let pts = sample_points(&ds, &g, &LossConfig::four_bus(Variant::II, 3)).unwrap();
        assert_eq!((pts.u.len(), pts.f.len()), (80, 4000));
        for p in &pts.f {
            let a = p.pm[0] / 0.1;
            assert!((0.5 - 1e-12..=9.5 + 1e-12).contains(&a));
            assert!((p.pm[1] - 0.2 * a).abs() < 1e-12);
            assert_eq!(p.input.len(), 5);
        }
    }

    #[test]
    fn deterministic_and_without_replacement() {
        let g = GridModel::smib();
        let ds = gen_smib_dataset(&g, 2, 0, PmSampling::Grid).unwrap();
        let cfg = LossConfig { n_u: 402, n_f: 0, ..LossConfig::smib(Variant::I, 9) };
        let a = sample_points(&ds, &g, &cfg).unwrap();
        let b = sample_points(&ds, &g, &cfg).unwrap();
        assert_eq!(a, b);
        let mut keys: Vec<(u64, u64)> = a.u.iter().map(|p| (p.input[0].to_bits(), p.input[1].to_bits())).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 402);
        assert!(a.f.is_empty());
    }

    #[test]
    fn too_many_labels_is_an_error() {
        let g = GridModel::smib();
        let ds = gen_smib_dataset(&g, 1, 0, PmSampling::Grid).unwrap();
        let cfg = LossConfig { n_u: 202, ..LossConfig::smib(Variant::I, 0) };
        assert!(matches!(sample_points(&ds, &g, &cfg), Err(TrainError::Config(_))));
    }

    #[test]
    fn data_only_has_no_collocation() {
        let g = GridModel::smib();
        let ds = gen_smib_dataset(&g, 3, 0, PmSampling::Grid).unwrap();
        let pts = sample_points(&ds, &g, &LossConfig::smib(Variant::DataOnly, 0)).unwrap();
        assert!(pts.f.is_empty());
    }

    #[test]
    fn grid_collocation_covers_corners() {
        let g = GridModel::smib();
        let ds = gen_smib_dataset(&g, 3, 0, PmSampling::Grid).unwrap();
        let cfg = LossConfig { n_f: 100, collocation: Collocation::Grid, ..LossConfig::smib(Variant::I, 0) };
        let pts = sample_points(&ds, &g, &cfg).unwrap();
        assert_eq!(pts.f.len(), 100);
        assert_eq!(pts.f[0].input, vec![0.0, 0.08]);
        let last = &pts.f[99].input;
        assert_eq!(last[0], 20.0);
        assert!((last[1] - 0.18).abs() < 1e-15);
    }
}
