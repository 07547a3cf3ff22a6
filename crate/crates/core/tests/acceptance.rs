//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line to
//! stderr (bypassing the test harness capture); the test fails if any
//! criterion fails. Training runs are shared between criteria.

mod common;

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracles::{differentiation_suite, simulator_suite};
use pikan_core::experiment::{run_dynamics, run_identify, run_method, ExperimentConfig, Method, NetworkConfig, Preset, RunOutcome};
use pikan_core::metrics::{mse_test, param_errors, rel_traj_error, summarize, MetricError, Summary};
use pikan_core::simulator::{Dataset, PmSampling};
use pikan_core::trainer::{LossConfig, TrainConfig, Variant};
use pikan_core::{GridModel, KanNetwork, MlpNetwork, SplineSpec, Surrogate};

const SEEDS: [u64; 3] = [0, 1, 2];

fn say(line: &str) {
    let mut e = std::io::stderr();
    let _ = writeln!(e, "{line}");
}

struct Verdict {
    id: usize,
    pass: bool,
}

fn verdict(id: usize, title: &str, pass: bool, detail: String) -> Verdict {
    say(&format!("[{}] criterion {id}: {title}: {detail}", if pass { "PASS" } else { "FAIL" }));
    Verdict { id, pass }
}

fn median(v: &[f64]) -> f64 {
    summarize(v).expect("non-empty").median
}

fn pct(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{:.3}%", 100.0 * x)).collect();
    format!("[{}]", s.join(", "))
}

struct System {
    preset: Preset,
    model: GridModel,
    dataset: Dataset,
}

impl System {
    fn new(preset: Preset) -> Self {
        let model = preset.model();
        let dataset = preset.dataset(&model, 0, PmSampling::Grid).unwrap();
        Self { preset, model, dataset }
    }

    fn run(&self, method: Method, seed: u64) -> RunOutcome {
        let t = Instant::now();
        let out =
            run_method(self.preset, method, &self.model, &self.dataset, seed, &method.default_train_config(seed)).unwrap();
        say(&format!(
            "  {} {method} seed {seed}: median e_theta {:.3}%, test MSE {:.3e} ({:.0} s)",
            self.preset,
            100.0 * out.summary.median,
            out.mse_test,
            t.elapsed().as_secs_f64()
        ));
        out
    }
}

/// Per-seed medians for one method on one system.
fn medians(runs: &[RunOutcome]) -> Vec<f64> {
    runs.iter().map(|r| r.summary.median).collect()
}

fn criterion_1() -> Verdict {
    let kan = |shape: &[usize], g| KanNetwork::new(shape, SplineSpec::new(3, g, -1.0, 1.0).unwrap(), 0).unwrap().reported_param_count();
    let mlp = |w: &[usize]| MlpNetwork::new(w, 0).unwrap().reported_param_count();
    let got = [kan(&[2, 5, 1], 10), kan(&[5, 10, 4], 5), mlp(&[2, 10, 10, 10, 10, 10, 1]), mlp(&[5, 30, 30, 4])];
    let want = [195, 720, 481, 1234];
    verdict(1, "parameter counts", got == want, format!("got {got:?}, expected {want:?}"))
}

fn criterion_2() -> Verdict {
    let r = differentiation_suite(20, 2024);
    let pass = r.jet_d1 <= 1e-5 && r.jet_d2 <= 1e-5 && r.grad <= 1e-4;
    verdict(
        2,
        "differentiation vs finite differences",
        pass,
        format!(
            "{} configs, jet d1 {:.2e}, jet d2 {:.2e} (<= 1e-5), loss gradient {:.2e} (<= 1e-4)",
            r.configs, r.jet_d1, r.jet_d2, r.grad
        ),
    )
}

fn criterion_3() -> Verdict {
    let r = simulator_suite();
    let pass = r.halving <= 1e-6 && r.energy_drift <= 1e-7 && r.residual <= 1e-5;
    verdict(
        3,
        "simulator oracles",
        pass,
        format!(
            "step halving {:.2e} (<= 1e-6), undamped relative energy drift {:.2e} (<= 1e-7), true-trajectory residual {:.2e} (<= 1e-5)",
            r.halving, r.energy_drift, r.residual
        ),
    )
}

fn criterion_4(i: &[RunOutcome], ii: &[RunOutcome]) -> Verdict {
    let (a, b) = (medians(i), medians(ii));
    let pass = a.iter().chain(&b).all(|&m| m <= 0.02);
    verdict(
        4,
        "SMIB dynamics, 500 L-BFGS steps, seeds {0,1,2}",
        pass,
        format!("PIKAN-I medians {} PIKAN-II medians {} (each <= 2%)", pct(&a), pct(&b)),
    )
}

fn criterion_5(i: &[RunOutcome], ii: &[RunOutcome]) -> Verdict {
    let (a, b) = (medians(i), medians(ii));
    let (ma, mb) = (median(&a), median(&b));
    verdict(
        5,
        "4-bus dynamics, 500 L-BFGS steps, median over seeds {0,1,2}",
        mb <= 0.03 && ma <= 0.08,
        format!(
            "PIKAN-II {:.3}% (<= 3%, per seed {}), PIKAN-I {:.3}% (<= 8%, per seed {})",
            100.0 * mb,
            pct(&b),
            100.0 * ma,
            pct(&a)
        ),
    )
}

/// True when `kan` beats `pinn` on a strict majority of seeds.
fn majority(kan: &[RunOutcome], pinn: &[RunOutcome]) -> (bool, usize) {
    let wins = kan.iter().zip(pinn).filter(|(k, p)| k.summary.median < p.summary.median).count();
    (2 * wins > kan.len(), wins)
}

fn criterion_6(rows: &[(&str, [&[RunOutcome]; 4])]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, [ki, kii, pi, pii]) in rows {
        let (ok1, w1) = majority(ki, pi);
        let (ok2, w2) = majority(kii, pii);
        pass &= ok1 && ok2;
        parts.push(format!("{name}: PIKAN-I < PINN-I on {w1}/3 seeds, PIKAN-II < PINN-II on {w2}/3 seeds"));
    }
    verdict(6, "method ordering, majority over seeds {0,1,2}", pass, parts.join("; "))
}

struct IdentifyStats {
    e_m: f64,
    e_d: f64,
}

fn identify(sys: &System, variant: Variant) -> IdentifyStats {
    let cfg = ExperimentConfig::preset(sys.preset);
    let net = NetworkConfig::kan(sys.preset.kan_shape(), sys.preset.grid_size());
    let t = Instant::now();
    let (mut em, mut ed) = (Vec::new(), Vec::new());
    for seed in 0..cfg.identify.repeats as u64 {
        let loss = sys.preset.loss_config(variant, seed);
        let train = TrainConfig::lbfgs(cfg.identify.steps, seed);
        let r = run_identify(&net, &sys.model, &sys.dataset, &loss, &train, &cfg.identify).unwrap();
        em.extend(r.e_m);
        ed.extend(r.e_d);
    }
    let stats = IdentifyStats { e_m: median(&em), e_d: median(&ed) };
    say(&format!(
        "  {} PIKAN-{variant} identification, {} seeds x {} steps: median e_M {:.3}%, e_D {:.3}% ({:.0} s)",
        sys.preset,
        cfg.identify.repeats,
        cfg.identify.steps,
        100.0 * stats.e_m,
        100.0 * stats.e_d,
        t.elapsed().as_secs_f64()
    ));
    stats
}

fn criterion_7(smib: &System, four: &System) -> Verdict {
    let s2 = identify(smib, Variant::II);
    let f2 = identify(four, Variant::II);
    let f1 = identify(four, Variant::I);
    let pass = s2.e_m <= 0.05 && s2.e_d <= 0.05 && f2.e_m <= 0.10 && f2.e_m < f1.e_m && f2.e_d < f1.e_d;
    verdict(
        7,
        "parameter identification, 20 seeds",
        pass,
        format!(
            "SMIB PIKAN-II e_M {:.3}% e_D {:.3}% (<= 5%); 4-bus PIKAN-II e_M {:.3}% (<= 10%); \
             4-bus II vs I: e_M {:.3}% vs {:.3}%, e_D {:.3}% vs {:.3}%",
            100.0 * s2.e_m,
            100.0 * s2.e_d,
            100.0 * f2.e_m,
            100.0 * f2.e_m,
            100.0 * f1.e_m,
            100.0 * f2.e_d,
            100.0 * f1.e_d
        ),
    )
}

fn criterion_8(smib: &System, pikan: &[RunOutcome]) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (k, &seed) in SEEDS.iter().enumerate() {
        let net = NetworkConfig::mlp(Preset::Smib.mlp_shape()).build(&smib.model, seed).unwrap();
        let loss = LossConfig::with_counts(Variant::DataOnly, 400, 0, seed);
        let dnn = run_dynamics(net, &smib.model, &smib.dataset, &loss, &Method::DataOnly.default_train_config(seed)).unwrap();
        let p = pikan[k].mse_test;
        wins += usize::from(p <= dnn.mse_test);
        parts.push(format!("seed {seed}: {p:.3e} vs {:.3e}", dnn.mse_test));
    }
    verdict(
        8,
        "data dependency, PIKAN-I N_u=40 vs DNN N_u=400 test MSE, majority over seeds",
        2 * wins > SEEDS.len(),
        parts.join("; "),
    )
}

fn criterion_9(smib: &System, mid: &[RunOutcome]) -> Verdict {
    let mut sizes = Vec::new();
    for shape in [vec![2, 3, 1], vec![2, 5, 1], vec![2, 8, 1]] {
        let mut mses = Vec::new();
        let mut count = 0;
        for (k, &seed) in SEEDS.iter().enumerate() {
            if shape == [2, 5, 1] {
                mses.push(mid[k].mse_test);
                count = mid[k].network.reported_param_count();
                continue;
            }
            let net = NetworkConfig::kan(shape.clone(), 10).build(&smib.model, seed).unwrap();
            count = net.reported_param_count();
            let out = run_dynamics(net, &smib.model, &smib.dataset, &Preset::Smib.loss_config(Variant::I, seed), &TrainConfig::lbfgs(500, seed))
                .unwrap();
            mses.push(out.mse_test);
        }
        sizes.push((count, median(&mses)));
    }
    sizes.sort_by_key(|s| s.0);
    let inversions: Vec<f64> = sizes.windows(2).filter(|w| w[1].1 > w[0].1).map(|w| w[1].1 / w[0].1).collect();
    let pass = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 2.0);
    let desc: Vec<String> = sizes.iter().map(|(c, m)| format!("{c} params: {m:.3e}")).collect();
    verdict(
        9,
        "scaling, median test MSE over seeds vs KAN size",
        pass,
        format!("{}; inversions {:?}", desc.join(", "), inversions),
    )
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut ok = true;
    for _ in 0..50 {
        let (n, m) = (rng.random_range(1..40), rng.random_range(1..5));
        let truth: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let pred: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut sq = 0.0;
        let mut tt = 0.0;
        for i in 0..n {
            for j in 0..m {
                sq += (pred[i][j] - truth[i][j]).powi(2);
                tt += truth[i][j].powi(2);
            }
        }
        ok &= (mse_test(&pred, &truth).unwrap() - sq / n as f64).abs() <= 1e-12 * (1.0 + sq);
        ok &= (rel_traj_error(&pred, &truth).unwrap() - (sq / tt).sqrt()).abs() <= 1e-12;
        let mt: Vec<f64> = truth[0].iter().map(|v| v.abs() + 0.1).collect();
        let me: Vec<f64> = pred[0].clone();
        let (em, _) = param_errors(&mt, &mt, &me, &me).unwrap();
        ok &= em.iter().zip(&mt).zip(&me).all(|((e, t), x)| (e - (t - x).abs() / t).abs() <= 1e-15);
    }
    let t = vec![vec![0.1], vec![0.2], vec![-0.3]];
    let shifted: Vec<Vec<f64>> = t.iter().map(|r| vec![r[0] + 0.1]).collect();
    let scaled: Vec<Vec<f64>> = t.iter().map(|r| vec![1.01 * r[0]]).collect();
    let zero = vec![vec![0.0]; 3];
    let (em, ed) = param_errors(&[0.4], &[0.15], &[0.38], &[0.30]).unwrap();
    let (em0, ed0) = param_errors(&[0.4], &[0.15], &[0.4], &[0.15]).unwrap();
    let trivial = [
        mse_test(&t, &t) == Ok(0.0),
        (mse_test(&shifted, &t).unwrap() - 0.01).abs() <= 1e-15,
        mse_test(&t[..2], &t).is_err(),
        rel_traj_error(&t, &t) == Ok(0.0),
        (rel_traj_error(&scaled, &t).unwrap() - 0.01).abs() <= 1e-14,
        rel_traj_error(&zero, &t) == Ok(1.0),
        matches!(rel_traj_error(&t, &zero), Err(MetricError::Undefined(_))),
        em0 == [0.0] && ed0 == [0.0],
        (em[0] - 0.05).abs() <= 1e-15 && (ed[0] - 1.0).abs() <= 1e-15,
        param_errors(&[0.0], &[0.1], &[0.1], &[0.1]).is_err(),
        summarize(&[1.0, 2.0, 3.0]) == Ok(Summary { max: 3.0, min: 1.0, median: 2.0 }),
        summarize(&[5.0]) == Ok(Summary { max: 5.0, min: 5.0, median: 5.0 }),
        summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap().median == 2.0,
        summarize(&[]) == Err(MetricError::Empty),
    ];
    let n_ok = trivial.iter().filter(|b| **b).count();
    verdict(
        10,
        "metrics suite",
        ok && n_ok == trivial.len(),
        format!("brute-force equivalence {}, trivial cases {n_ok}/{}", if ok { "ok" } else { "MISMATCH" }, trivial.len()),
    )
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let mut v = vec![criterion_1(), criterion_2(), criterion_3(), criterion_10()];

    let smib = System::new(Preset::Smib);
    let four = System::new(Preset::Fourbus);
    let runs = |sys: &System, m: Method| -> Vec<RunOutcome> { SEEDS.iter().map(|&s| sys.run(m, s)).collect() };

    let s_ki = runs(&smib, Method::PikanI);
    let s_kii = runs(&smib, Method::PikanII);
    v.push(criterion_4(&s_ki, &s_kii));
    let f_ki = runs(&four, Method::PikanI);
    let f_kii = runs(&four, Method::PikanII);
    v.push(criterion_5(&f_ki, &f_kii));

    let s_pi = runs(&smib, Method::PinnI);
    let s_pii = runs(&smib, Method::PinnII);
    let f_pi = runs(&four, Method::PinnI);
    let f_pii = runs(&four, Method::PinnII);
    v.push(criterion_6(&[("smib", [&s_ki, &s_kii, &s_pi, &s_pii]), ("4-bus", [&f_ki, &f_kii, &f_pi, &f_pii])]));

    v.push(criterion_7(&smib, &four));
    v.push(criterion_8(&smib, &s_ki));
    v.push(criterion_9(&smib, &s_ki));

    v.sort_by_key(|x| x.id);
    let failed: Vec<usize> = v.iter().filter(|x| !x.pass).map(|x| x.id).collect();
    say(&format!(
        "acceptance: {}/{} criteria passed in {:.0} s",
        v.len() - failed.len(),
        v.len(),
        start.elapsed().as_secs_f64()
    ));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
