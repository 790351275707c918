use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tcu_core::harness::{self, CostReport};
use tcu_core::{Config, Controller, Dataset, Error, ExperimentLog, LinearModel, NnarxModel};

#[derive(Parser, Debug)]
#[command(name = "tcu", version, about = "Identification and MPC of a temperature control unit surrogate")]
struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Overrides the base seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// PI-controlled identification and validation runs.
    Collect,
    /// Fit the two-state linear model to the identification data.
    FitLinear,
    /// Train the NNARX model on the identification data.
    TrainNnarx,
    /// Closed-loop experiment on the evaluation reference.
    Run {
        #[arg(long, value_enum)]
        controller: ControllerArg,
    },
    /// Cost table of the saved experiment logs.
    Evaluate {
        /// Controllers to evaluate; all three when omitted.
        #[arg(long, value_enum)]
        controller: Vec<ControllerArg>,
    },
    /// Open-loop prediction RMSE of both models on the validation data.
    PredictBench {
        #[arg(long, default_value_t = 70)]
        horizon: usize,
        #[arg(long, default_value_t = 4)]
        starts: usize,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ControllerArg {
    Pi,
    Lmpc,
    Nnmpc,
}

impl ControllerArg {
    fn tag(self) -> &'static str {
        match self {
            ControllerArg::Pi => "pi",
            ControllerArg::Lmpc => "lmpc",
            ControllerArg::Nnmpc => "nnmpc",
        }
    }
}

/// Process exit code for each error class.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::InputDomain(_) => 4,
        Error::IllConditioned(_) => 5,
        Error::Contract(_) => 6,
        Error::Divergence { .. } => 7,
        Error::Infeasible(_) => 8,
        Error::ModelDomain(_) => 9,
        Error::Io(_) => 10,
        Error::Json(_) | Error::Csv(_) => 11,
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> tcu_core::Result<Config> {
    let cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    Ok(cfg.with_seed(seed))
}

fn require(path: &Path, what: &str) -> tcu_core::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} not found at {}; run the earlier stage first", path.display())))
    }
}

fn read_dataset(path: &Path, what: &str) -> tcu_core::Result<Dataset> {
    require(path, what)?;
    Dataset::read_csv(File::open(path)?)
}

fn write_dataset(path: &Path, data: &Dataset) -> tcu_core::Result<()> {
    data.write_csv(BufWriter::new(File::create(path)?))
}

fn load_linear(cfg: &Config) -> tcu_core::Result<LinearModel> {
    let path = cfg.paths.linear_model();
    require(&path, "linear model")?;
    LinearModel::load(&path)
}

fn load_nnarx(cfg: &Config) -> tcu_core::Result<NnarxModel> {
    let path = cfg.paths.nnarx_model();
    require(&path, "NNARX model")?;
    NnarxModel::load(&path)
}

fn collect(cfg: &Config) -> tcu_core::Result<()> {
    std::fs::create_dir_all(&cfg.paths.out_dir)?;
    let id = harness::collect_identification_data(cfg)?;
    let val = harness::collect_validation_data(cfg)?;
    id.raw.save(&cfg.paths.identification_log())?;
    write_dataset(&cfg.paths.identification_data(), &id.dataset)?;
    write_dataset(&cfg.paths.validation_data(), &val.dataset)?;
    println!(
        "identification: {} raw records, {} samples at {} s{}",
        id.raw.len(),
        id.dataset.len(),
        id.dataset.sample_time,
        if id.poorly_excited { " (poorly excited)" } else { "" }
    );
    println!("validation: {} samples", val.dataset.len());
    Ok(())
}

fn fit_linear(cfg: &Config) -> tcu_core::Result<()> {
    let data = read_dataset(&cfg.paths.identification_data(), "identification data")?;
    let fit = harness::fit_linear_model(cfg, &data)?;
    fit.model.save(&cfg.paths.linear_model())?;
    let m = &fit.model;
    println!("a = {:.6}, b_h = {:.6}, b_c = {:.6}", m.a, m.b_h, m.b_c);
    println!("R = {:.4e}, innovation cost = {:.4e}", m.r, fit.cost);
    Ok(())
}

fn train_nnarx(cfg: &Config) -> tcu_core::Result<()> {
    let data = read_dataset(&cfg.paths.identification_data(), "identification data")?;
    let val = read_dataset(&cfg.paths.validation_data(), "validation data")?;
    let (model, report) = harness::train_nnarx_model(cfg, &data, &val)?;
    model.save(&cfg.paths.nnarx_model())?;
    report.write_csv(BufWriter::new(File::create(cfg.paths.loss_curve())?))?;
    let s = &report.summary;
    println!(
        "{} epochs, best validation {:.4e} at epoch {}, tolerance {}",
        s.epochs,
        s.best_validation,
        s.best_epoch,
        if s.reached_tolerance { "reached" } else { "not reached" }
    );
    Ok(())
}

fn controller(cfg: &Config, which: ControllerArg) -> tcu_core::Result<Controller> {
    Ok(match which {
        ControllerArg::Pi => Controller::Pi,
        ControllerArg::Lmpc => Controller::LinMpc(load_linear(cfg)?),
        ControllerArg::Nnmpc => Controller::NnMpc(load_nnarx(cfg)?),
    })
}

fn print_costs(tag: &str, c: &CostReport) {
    println!("{tag:<6} {:>10.4} {:>10.4} {:>10.4}", c.tracking, c.energy, c.total);
}

fn run(cfg: &Config, which: ControllerArg) -> tcu_core::Result<()> {
    let ctrl = controller(cfg, which)?;
    let log = harness::run_closed_loop(cfg, &ctrl)?;
    let path = cfg.paths.experiment_log(which.tag());
    log.save(&path)?;
    let e = &cfg.experiment;
    let costs = harness::evaluate_costs(&log, e.t0, e.t_end, &cfg.mpc.cost)?;
    println!("{} records, {} fallbacks, log at {}", log.len(), log.fallback_count(), path.display());
    println!("{:<6} {:>10} {:>10} {:>10}", "", "tracking", "energy", "total");
    print_costs(which.tag(), &costs);
    Ok(())
}

fn evaluate(cfg: &Config, which: &[ControllerArg]) -> tcu_core::Result<()> {
    let all = [ControllerArg::Pi, ControllerArg::Lmpc, ControllerArg::Nnmpc];
    let which = if which.is_empty() { &all[..] } else { which };
    let e = &cfg.experiment;
    let mut table = serde_json::Map::new();
    println!("{:<6} {:>10} {:>10} {:>10}", "", "tracking", "energy", "total");
    for &w in which {
        let path = cfg.paths.experiment_log(w.tag());
        require(&path, "experiment log")?;
        let log = ExperimentLog::load(&path)?;
        let costs = harness::evaluate_costs(&log, e.t0, e.t_end, &cfg.mpc.cost)?;
        print_costs(w.tag(), &costs);
        table.insert(w.tag().to_string(), serde_json::to_value(costs)?);
    }
    std::fs::write(
        cfg.paths.out_dir.join("costs.json"),
        serde_json::to_string_pretty(&table)?,
    )?;
    Ok(())
}

fn predict_bench(cfg: &Config, horizon: usize, starts: usize) -> tcu_core::Result<()> {
    let val = read_dataset(&cfg.paths.validation_data(), "validation data")?;
    let lin = load_linear(cfg)?;
    let nn = load_nnarx(cfg)?;
    let points = harness::default_start_points(val.len(), nn.n_past(), horizon, starts);
    let table = harness::predict_benchmark(&lin, &nn, &val, horizon, &points)?;
    println!("{:>6} {:>12} {:>12}", "start", "linear", "nnarx");
    for row in &table.rows {
        println!("{:>6} {:>12.4} {:>12.4}", row.start, row.linear_rmse, row.nnarx_rmse);
    }
    println!("{:>6} {:>12.4} {:>12.4}", "mean", table.mean_linear(), table.mean_nnarx());
    Ok(())
}

fn dispatch(cli: &Cli) -> tcu_core::Result<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::Collect => collect(&cfg),
        Command::FitLinear => fit_linear(&cfg),
        Command::TrainNnarx => train_nnarx(&cfg),
        Command::Run { controller } => run(&cfg, *controller),
        Command::Evaluate { controller } => evaluate(&cfg, controller),
        Command::PredictBench { horizon, starts } => predict_bench(&cfg, *horizon, *starts),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
