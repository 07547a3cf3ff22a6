//! `pikan`: simulate datasets, train and evaluate surrogates, identify grid
//! parameters, and produce scaling and comparison tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde_json::json;

use pikan_core::experiment::{
    run_dynamics, run_identify, run_method, test_mse, ExperimentConfig, ExperimentError, Method, NetKind,
    NetworkConfig, Preset,
};
use pikan_core::metrics::{summarize, write_table_csv, TableRow};
use pikan_core::network::Network;
use pikan_core::simulator::{Dataset, DatasetMeta};
use pikan_core::trainer::{trajectory_errors, IdentifyReport, TrainConfig, Variant};
use pikan_core::GridModel;

#[derive(Parser, Debug)]
#[command(name = "pikan", version, about = "Physics-informed KAN experiments on swing dynamics")]
struct Cli {
    /// Experiment config JSON; missing fields come from the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Preset used when no config is given.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Overrides the step budget (KAN budget for `compare` and `scaling`).
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Overrides the loss variant (`I`, `II` or `data_only`).
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the preset's trajectories into dataset.csv.
    Simulate,
    /// Train the configured network on dataset.csv.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on the test trajectories.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Jointly fit the network with M and D over repeated seeds.
    Identify {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of seeded repetitions.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Final test MSE against network size.
    Scaling {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Adam steps for the MLP sizes.
        #[arg(long, default_value_t = 5000)]
        mlp_steps: usize,
        /// Restrict to one network kind.
        #[arg(long)]
        kind: Option<NetKind>,
    },
    /// PIKAN-I/II against PINN-I/II on each system.
    Compare {
        /// Adam steps for the PINN baselines.
        #[arg(long, default_value_t = 5000)]
        pinn_steps: usize,
        /// Systems to compare (default: all presets).
        #[arg(long, value_delimiter = ',')]
        systems: Vec<Preset>,
    },
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let kind = match &e {
            ExperimentError::Config(_) | ExperimentError::Json(_) => "config",
            ExperimentError::Io(_) => "io",
            ExperimentError::Grid(_) => "grid",
            ExperimentError::Sim(_) => "simulation",
            ExperimentError::Net(_) => "network",
            ExperimentError::Train(_) => "training",
            ExperimentError::Metric(_) => "metric",
        };
        CliError::new(kind, e.to_string())
    }
}

macro_rules! impl_from {
    ($($t:ty => $kind:literal),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($kind, e.to_string())
            }
        })*
    };
}

impl_from!(
    std::io::Error => "io",
    serde_json::Error => "json",
    pikan_core::simulator::SimError => "simulation",
    pikan_core::network::NetError => "network",
    pikan_core::trainer::TrainError => "training",
    pikan_core::metrics::MetricError => "metric"
);

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind, "message": e.message }));
            ExitCode::from(if e.kind == "config" { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p)?;
            if cli.preset.is_some_and(|pr| pr != cfg.preset) {
                return Err(CliError::new("config", "--preset disagrees with the config file"));
            }
            cfg
        }
        None => ExperimentConfig::preset(cli.preset.unwrap_or(Preset::Smib)),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(v) = cli.variant {
        cfg.variant = v;
    }
    if let Some(n) = cli.steps {
        cfg.steps = n;
        cfg.identify.steps = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Train { data } => cmd_train(&cfg, data.as_deref()),
        Command::Evaluate { data, checkpoint } => cmd_evaluate(&cfg, data.as_deref(), checkpoint.as_deref()),
        Command::Identify { data, repeats } => cmd_identify(&cfg, data.as_deref(), *repeats),
        Command::Scaling { data, mlp_steps, kind } => cmd_scaling(&cfg, data.as_deref(), *mlp_steps, *kind),
        Command::Compare { pinn_steps, systems } => cmd_compare(&cfg, cli.steps, *pinn_steps, systems),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn simulate_into(cfg: &ExperimentConfig, model: &GridModel, dir: &Path) -> Result<Dataset> {
    let ds = cfg.preset.dataset(model, cfg.seed, cfg.pm_sampling)?;
    std::fs::create_dir_all(dir)?;
    ds.save(&dir.join("dataset.csv"))?;
    write_json(&dir.join("dataset.meta.json"), &DatasetMeta::new(model, &ds))?;
    std::fs::write(dir.join("grid.json"), model.to_json() + "\n")?;
    Ok(ds)
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<()> {
    let model = cfg.model()?;
    let ds = simulate_into(cfg, &model, &cfg.out_dir)?;
    println!(
        "wrote {} data rows ({} trajectories, {} test rows) to {}",
        ds.n_samples(),
        ds.trajectories.len(),
        ds.n_test(),
        cfg.out_dir.join("dataset.csv").display()
    );
    Ok(())
}

/// Loads a dataset and checks its sidecar against the model, if present.
fn load_dataset(cfg: &ExperimentConfig, model: &GridModel, data: Option<&Path>) -> Result<Dataset> {
    let path = data.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("dataset.csv"));
    if !path.exists() {
        return Err(CliError::new("missing_file", format!("dataset {} not found; run `simulate` first", path.display())));
    }
    let meta_path = path.with_file_name("dataset.meta.json");
    if meta_path.exists() {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
        if meta.model_hash != model.hash() {
            return Err(CliError::new(
                "config",
                format!("dataset {} was simulated from a different grid model", path.display()),
            ));
        }
    }
    let ds = Dataset::load(&path)?;
    if ds.n_bus != model.n_bus() {
        return Err(CliError::new("config", format!("dataset has {} buses, model has {}", ds.n_bus, model.n_bus())));
    }
    Ok(ds)
}

fn method_label(kind: NetKind, variant: Variant) -> String {
    match (kind, variant) {
        (_, Variant::DataOnly) => "DNN".into(),
        (NetKind::Kan, v) => format!("PIKAN-{v}"),
        (NetKind::Mlp, v) => format!("PINN-{v}"),
    }
}

fn cmd_train(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<()> {
    let model = cfg.model()?;
    let ds = load_dataset(cfg, &model, data)?;
    let net = cfg.network.build(&model, cfg.seed)?;
    info!("training {} ({} parameters) for {} steps", net.kind(), net.reported_param_count(), cfg.steps);
    let out = run_dynamics(net, &model, &ds, &cfg.loss_config(), &cfg.train_config())?;
    out.network.save(&cfg.out_dir.join("checkpoint.json"))?;
    out.report.write_csv(create(&cfg.out_dir.join("loss_report.csv"))?)?;
    std::fs::write(cfg.out_dir.join("config.json"), cfg.to_json() + "\n")?;
    println!(
        "trained {} steps, best loss {:.6e} at step {}, test MSE {:.6e}, median e_theta {:.4}%",
        out.report.records.last().map_or(0, |r| r.step),
        out.report.best_loss,
        out.report.best_step,
        out.mse_test,
        100.0 * out.summary.median
    );
    println!("wrote {} loss report rows", out.report.len());
    Ok(())
}

fn cmd_evaluate(cfg: &ExperimentConfig, data: Option<&Path>, checkpoint: Option<&Path>) -> Result<()> {
    let model = cfg.model()?;
    let ds = load_dataset(cfg, &model, data)?;
    let ck = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("checkpoint.json"));
    if !ck.exists() {
        return Err(CliError::new("missing_file", format!("checkpoint {} not found; run `train` first", ck.display())));
    }
    let net = Network::load(&ck)?;
    let errors = match &net {
        Network::Kan(n) => trajectory_errors(n, &model, &ds)?,
        Network::Mlp(n) => trajectory_errors(n, &model, &ds)?,
    };
    let summary = summarize(&errors)?;
    let mut w = create(&cfg.out_dir.join("errors.csv"))?;
    let pm_cols: Vec<String> = (1..=model.n_bus()).map(|b| format!("pm_{b}")).collect();
    writeln!(w, "traj_id,{},e_theta", pm_cols.join(","))?;
    for (&id, e) in ds.test.iter().zip(&errors) {
        let pm: Vec<String> = ds.trajectories[id].pm.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{id},{},{e}", pm.join(","))?;
    }
    w.flush()?;
    let kind = match net {
        Network::Kan(_) => NetKind::Kan,
        Network::Mlp(_) => NetKind::Mlp,
    };
    let row = TableRow { method: method_label(kind, cfg.variant), system: cfg.preset.name().into(), summary };
    write_table_csv(&[row], create(&cfg.out_dir.join("summary.csv"))?)?;
    println!(
        "e_theta over {} trajectories: max {:.4}% min {:.4}% median {:.4}%, test MSE {:.6e}",
        errors.len(),
        100.0 * summary.max,
        100.0 * summary.min,
        100.0 * summary.median,
        test_mse(&net, &model, &ds)
    );
    println!("wrote {} error rows", errors.len());
    Ok(())
}

fn median(v: &[f64]) -> Result<f64> {
    Ok(summarize(v)?.median)
}

fn cmd_identify(cfg: &ExperimentConfig, data: Option<&Path>, repeats: Option<usize>) -> Result<()> {
    let model = cfg.model()?;
    let ds = load_dataset(cfg, &model, data)?;
    let repeats = repeats.unwrap_or(cfg.identify.repeats);
    if repeats == 0 {
        return Err(CliError::new("config", "need at least one repetition"));
    }
    let mut runs: Vec<IdentifyReport> = Vec::with_capacity(repeats);
    for r in 0..repeats as u64 {
        let seed = cfg.seed + r;
        let loss = pikan_core::trainer::LossConfig { seed, ..cfg.loss_config() };
        let train = TrainConfig { seed, max_steps: cfg.identify.steps, ..cfg.train_config() };
        let rep = run_identify(&cfg.network, &model, &ds, &loss, &train, &cfg.identify)?;
        info!("repeat {}/{repeats}: M {:?} D {:?}", r + 1, rep.m_est, rep.d_est);
        runs.push(rep);
    }
    let e_m: Vec<f64> = runs.iter().flat_map(|r| r.e_m.iter().copied()).collect();
    let e_d: Vec<f64> = runs.iter().flat_map(|r| r.e_d.iter().copied()).collect();
    let report = json!({
        "system": cfg.preset.name(),
        "variant": cfg.variant,
        "steps": cfg.identify.steps,
        "initial": { "M": cfg.identify.m0, "D": cfg.identify.d0 },
        "median_e_M": median(&e_m)?,
        "median_e_D": median(&e_d)?,
        "runs": runs,
    });
    write_json(&cfg.out_dir.join("identify.json"), &report)?;
    println!(
        "{} repetitions: median e_M {:.4}% median e_D {:.4}%",
        repeats,
        100.0 * report["median_e_M"].as_f64().unwrap_or(f64::NAN),
        100.0 * report["median_e_D"].as_f64().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn shape_label(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

fn cmd_scaling(cfg: &ExperimentConfig, data: Option<&Path>, mlp_steps: usize, kind: Option<NetKind>) -> Result<()> {
    let model = cfg.model()?;
    let ds = load_dataset(cfg, &model, data)?;
    let mut jobs: Vec<(NetworkConfig, TrainConfig)> = Vec::new();
    let kan_train = |seed| TrainConfig { seed, ..TrainConfig::lbfgs(cfg.steps, seed) };
    if kind != Some(NetKind::Mlp) {
        for s in &cfg.scaling.kan_shapes {
            for &seed in &cfg.scaling.seeds {
                jobs.push((NetworkConfig::kan(s.clone(), cfg.network.grid_size), kan_train(seed)));
            }
        }
    }
    if kind != Some(NetKind::Kan) {
        for s in &cfg.scaling.mlp_shapes {
            for &seed in &cfg.scaling.seeds {
                jobs.push((NetworkConfig::mlp(s.clone()), TrainConfig::adam(mlp_steps, seed)));
            }
        }
    }
    let mut w = create(&cfg.out_dir.join("scaling.csv"))?;
    writeln!(w, "kind,shape,param_count,seed,mse_test")?;
    for (net_cfg, train) in &jobs {
        let net = net_cfg.build(&model, train.seed)?;
        let count = net.reported_param_count();
        let loss = pikan_core::trainer::LossConfig { seed: train.seed, ..cfg.loss_config() };
        let out = run_dynamics(net, &model, &ds, &loss, train)?;
        info!("{:?} {:?} seed {}: test MSE {:.4e}", net_cfg.kind, net_cfg.shape, train.seed, out.mse_test);
        let kind = match net_cfg.kind {
            NetKind::Kan => "kan",
            NetKind::Mlp => "mlp",
        };
        writeln!(w, "{kind},{},{count},{},{}", shape_label(&net_cfg.shape), train.seed, out.mse_test)?;
    }
    w.flush()?;
    println!("wrote {} scaling rows", jobs.len());
    Ok(())
}

fn cmd_compare(cfg: &ExperimentConfig, kan_steps: Option<usize>, pinn_steps: usize, systems: &[Preset]) -> Result<()> {
    let systems: Vec<Preset> = if systems.is_empty() { Preset::ALL.to_vec() } else { systems.to_vec() };
    let mut rows = Vec::new();
    for preset in systems {
        let mut sys_cfg = ExperimentConfig::preset(preset);
        sys_cfg.seed = cfg.seed;
        sys_cfg.pm_sampling = cfg.pm_sampling;
        let model = preset.model();
        let dir = cfg.out_dir.join(preset.name());
        let ds = if dir.join("dataset.csv").exists() {
            sys_cfg.out_dir = dir.clone();
            load_dataset(&sys_cfg, &model, None)?
        } else {
            simulate_into(&sys_cfg, &model, &dir)?
        };
        for method in Method::COMPARED {
            let train = match method.kind() {
                NetKind::Kan => TrainConfig::lbfgs(kan_steps.unwrap_or(500), cfg.seed),
                NetKind::Mlp => TrainConfig::adam(pinn_steps, cfg.seed),
            };
            let out = run_method(preset, method, &model, &ds, cfg.seed, &train)?;
            info!("{preset} {method}: median e_theta {:.4}%", 100.0 * out.summary.median);
            rows.push(TableRow { method: method.name().into(), system: preset.name().into(), summary: out.summary });
        }
    }
    write_table_csv(&rows, create(&cfg.out_dir.join("compare.csv"))?)?;
    println!("wrote {} comparison rows", rows.len());
    Ok(())
}
