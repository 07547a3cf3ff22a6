use pikan_core::diff::Jet2;
use pikan_core::network::NetError;
use pikan_core::simulator::{gen_smib_dataset, Dataset, PmSampling};
use pikan_core::trainer::{trajectory_errors, InputMap};
use pikan_core::{GridModel, Surrogate};

/// Looks up the simulated angles by `(t, P_m)`: a perfect interpolant of
/// the sampled data.
#[derive(Clone)]
struct Table {
    map: InputMap,
    ds: Dataset,
    dynamic: Vec<usize>,
    dt: f64,
}

impl Table {
    fn lookup(&self, input: &[f64], out: &mut [f64]) {
        let traj = self
            .ds
            .trajectories
            .iter()
            .find(|tr| self.map.features(0.0, &tr.pm)[1..] == input[1..])
            .expect("injection present in table");
        let k = (input[0] / self.dt).round() as usize;
        for (o, &b) in out.iter_mut().zip(&self.dynamic) {
            *o = traj.theta[k][b];
        }
    }
}

impl Surrogate for Table {
    type Cache = ();

    fn n_inputs(&self) -> usize {
        self.map.n_inputs()
    }
    fn n_outputs(&self) -> usize {
        self.dynamic.len()
    }
    fn params(&self) -> &[f64] {
        &[]
    }
    fn set_params(&mut self, _: &[f64]) -> Result<(), NetError> {
        Ok(())
    }
    fn reported_param_count(&self) -> usize {
        0
    }
    fn forward_with(&self, _: &[f64], input: &[f64], out: &mut [f64]) {
        self.lookup(input, out);
    }
    fn jet_forward(&self, _: &[f64], input: &[Jet2], _: &mut (), out: &mut [Jet2]) {
        let raw: Vec<f64> = input.iter().map(|j| j.v).collect();
        let mut v = vec![0.0; out.len()];
        self.lookup(&raw, &mut v);
        for (o, x) in out.iter_mut().zip(v) {
            *o = Jet2::constant(x);
        }
    }
    fn jet_backward(&self, _: &[f64], _: &(), _: &[[f64; 3]], _: &mut [f64]) {}
}

#[test]
fn perfect_interpolant_scores_zero_error() {
    let model = GridModel::smib();
    let ds = gen_smib_dataset(&model, 12, 0, PmSampling::Random).unwrap();
    let table = Table { map: InputMap::new(&model), ds: ds.clone(), dynamic: model.dynamic_buses().to_vec(), dt: 0.1 };
    let errs = trajectory_errors(&table, &model, &ds).unwrap();
    assert_eq!(errs.len(), 12);
    assert!(errs.iter().all(|&e| e == 0.0), "{errs:?}");
}
