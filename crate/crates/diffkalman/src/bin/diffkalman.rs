use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use diffkalman::config::{parse_list, theta_or_default};
use diffkalman::gradcheck::gradcheck;
use diffkalman::io::{format_series, load_series};
use diffkalman::profile::{profile, GridAxis};
use diffkalman::report::FitReport;
use diffkalman::simulate::{simulate, SimOptions};
use diffkalman::{ModelConfig, ModelKind};
use diffkalman_core::{multistart, CompareOptions, FdConfig, InitialCondition, Method, ModelSpec, OptimizerConfig, StructuralModel, Tolerances};

/// Maximum likelihood for structural time-series models with exact
/// gradients and Hessians of the Kalman filter log-likelihood.
#[derive(Parser)]
#[command(name = "diffkalman", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model by maximum likelihood.
    Fit(FitArgs),
    /// Compare analytic derivatives with finite differences.
    Gradcheck(CheckArgs),
    /// Evaluate the likelihood and its derivatives over a parameter grid.
    Profile(ProfileArgs),
    /// Simulate a series from a model.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Trend,
    Seasonal,
    SeasonalAr,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Bfgs,
    Newton,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Kind::Trend)]
    model: Kind,
    /// Trend order for --model trend (1 or 2); seasonal models use 2.
    #[arg(long)]
    trend_order: Option<usize>,
    #[arg(long, default_value_t = 12)]
    period: usize,
    #[arg(long, default_value_t = 2)]
    ar_order: usize,
    /// Bound C on the PARCOR coefficients, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    parcor_bound: f64,
}

impl ModelArgs {
    fn build(&self) -> anyhow::Result<StructuralModel> {
        let cfg = ModelConfig {
            kind: match self.model {
                Kind::Trend => ModelKind::Trend,
                Kind::Seasonal => ModelKind::Seasonal,
                Kind::SeasonalAr => ModelKind::SeasonalAr,
            },
            trend_order: self.trend_order,
            period: self.period,
            ar_order: self.ar_order,
            parcor_bound: self.parcor_bound,
        };
        Ok(cfg.build()?)
    }
}

#[derive(Args)]
struct DataArgs {
    /// Single-column numeric file.
    data: PathBuf,
    /// The first line of the file is a column name.
    #[arg(long)]
    header: bool,
    /// Initial state variance κ (state covariance starts at κI).
    #[arg(long, default_value_t = 1e4)]
    init_var: f64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<(Vec<f64>, InitialCondition)> {
        if !self.init_var.is_finite() || self.init_var < 0.0 {
            bail!("--init-var must be finite and non-negative, got {}", self.init_var);
        }
        let series = load_series(&self.data, self.header)?;
        Ok((series.values, InitialCondition::with_kappa(self.init_var)))
    }
}

/// Comma-separated parameter vector.
#[derive(Clone)]
struct Theta(Vec<f64>);

impl std::str::FromStr for Theta {
    type Err = diffkalman::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_list(s).map(Theta)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Starting point as a comma-separated list; repeat for several starts.
    #[arg(long, allow_hyphen_values = true)]
    theta0: Vec<Theta>,
    #[arg(long, value_enum, default_value_t = MethodArg::Bfgs)]
    method: MethodArg,
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1.0)]
    initial_step: f64,
    #[arg(long, default_value_t = 10.0)]
    max_step: f64,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Point to check; defaults to the model's starting point.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<Theta>,
    #[arg(long, default_value_t = 1e-4)]
    rel_step: f64,
    #[arg(long, default_value_t = 1e-4)]
    min_step: f64,
    #[arg(long, default_value_t = 1e-4)]
    grad_rel_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    grad_abs_tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    hess_rel_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    hess_abs_tol: f64,
    /// Also check against second differences of the log-likelihood.
    #[arg(long)]
    values_hessian: bool,
    #[arg(long, default_value_t = 1e-3)]
    values_hessian_rel_tol: f64,
    /// Relative step for the second differences of the log-likelihood.
    #[arg(long, default_value_t = 3e-3)]
    values_step: f64,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Values of the parameters not on the grid; defaults to the model's
    /// starting point.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<Theta>,
    /// Grid axis as param:start:stop:count; give once or twice.
    #[arg(long, required = true, allow_hyphen_values = true)]
    grid: Vec<GridAxis>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Parameters; defaults to the model's starting point.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<Theta>,
    /// Number of observations.
    #[arg(short = 'n', long, default_value_t = 200)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Observation noise variance σ²; system noise is scaled by it too.
    #[arg(long, default_value_t = 1.0)]
    obs_var: f64,
    /// Initial state; drawn from N(0, σ²κI) when omitted.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<Theta>,
    /// κ for the initial state draw, matching the fit's --init-var.
    #[arg(long, default_value_t = 1e4)]
    init_var: f64,
    /// Write the series here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Writes to standard output; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e).context("cannot write to standard output"),
        _ => Ok(()),
    }
}

fn emit_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn fit(args: &FitArgs) -> anyhow::Result<ExitCode> {
    let model = args.model.build()?;
    let (y, init) = args.data.load()?;
    let starts = if args.theta0.is_empty() {
        vec![model.default_start()]
    } else {
        args.theta0
            .iter()
            .map(|t| theta_or_default(&model, Some(&t.0)))
            .collect::<Result<Vec<_>, _>>()?
    };
    let cfg = OptimizerConfig {
        method: match args.method {
            MethodArg::Bfgs => Method::Bfgs,
            MethodArg::Newton => Method::Newton,
        },
        grad_tol: args.grad_tol,
        max_iter: args.max_iter,
        initial_step: args.initial_step,
        max_step: args.max_step,
        ..OptimizerConfig::default()
    };
    let runs = multistart(&model, &starts, &y, &init, &cfg)?;
    let report = FitReport::new(&model, y.len(), &starts, &runs)?;
    match args.data.format {
        Format::Table => emit(&report.to_table())?,
        Format::Json => emit_json(&report)?,
    }
    if !report.converged {
        eprintln!("warning: the best fit did not converge; reporting the best point found");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn check(args: &CheckArgs) -> anyhow::Result<ExitCode> {
    let model = args.model.build()?;
    let (y, init) = args.data.load()?;
    let theta = theta_or_default(&model, args.theta.as_ref().map(|t| t.0.as_slice()))?;
    let fd = FdConfig {
        rel_step: args.rel_step,
        min_step: args.min_step,
    };
    let tol = Tolerances {
        grad_rel: args.grad_rel_tol,
        grad_abs: args.grad_abs_tol,
        hess_rel: args.hess_rel_tol,
        hess_abs: args.hess_abs_tol,
        hess_values_rel: args.values_hessian_rel_tol,
    };
    let opts = CompareOptions {
        value_hessian: args.values_hessian,
        value_step: args.values_step,
    };
    let result = gradcheck(&model, &model.label(), &theta, &y, &init, &fd, &tol, opts)?;
    match args.data.format {
        Format::Table => emit(&result.to_table())?,
        Format::Json => emit_json(&result)?,
    }
    Ok(ExitCode::from(result.exit_code() as u8))
}

fn profile_cmd(args: &ProfileArgs) -> anyhow::Result<ExitCode> {
    let model = args.model.build()?;
    let (y, init) = args.data.load()?;
    let base = theta_or_default(&model, args.theta.as_ref().map(|t| t.0.as_slice()))?;
    let rows = profile(&model, &base, &args.grid, &y, &init)?;
    match args.data.format {
        Format::Table => emit(&diffkalman::profile::to_table(&rows, model.param_count()))?,
        Format::Json => emit_json(&rows)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate_cmd(args: &SimulateArgs) -> anyhow::Result<ExitCode> {
    let model = args.model.build()?;
    let theta = theta_or_default(&model, args.theta.as_ref().map(|t| t.0.as_slice()))?;
    let opts = SimOptions {
        obs_var: args.obs_var,
        x0: args.x0.as_ref().map(|t| t.0.clone()),
        init_var: args.init_var,
    };
    let y = simulate(&model, &theta, args.length, args.seed, &opts)?;
    let text = format_series(&y, None);
    match &args.output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?,
        None => emit(&text)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Gradcheck(a) => check(a),
        Command::Profile(a) => profile_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
