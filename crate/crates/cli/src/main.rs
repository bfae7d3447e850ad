use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chromident::cmaes::EvalMode;
use chromident::identification::{benchmark, identify, IdentifyError};
use chromident::io::{
    load_problem, read_config, write_benchmark, write_chromatogram, write_report, write_trace,
    IoError,
};
use chromident::transport::{max_spectral_radius, simulate, InitialProfile, SolverError};
use clap::{Args, Parser, Subcommand};

/// Simulate chromatography columns and identify adsorption isotherms.
#[derive(Debug, Parser)]
#[command(name = "chromident", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured model and write the outlet chromatogram.
    Simulate(Common),
    /// Fit the parameter ranges of the configuration to its chromatograms.
    Identify(Common),
    /// Repeat identification over many seeds and report convergence statistics.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Number of runs (overrides `optimizer.runs`).
        #[arg(long)]
        runs: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Problem configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if needed.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed (overrides `optimizer.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long)]
    quiet: bool,
}

mod exit {
    pub const OK: u8 = 0;
    pub const NOT_CONVERGED: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const INSTABILITY: u8 = 3;
    pub const INITIALIZATION: u8 = 4;
}

struct Failure {
    code: u8,
    message: String,
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let code = match &e {
            IoError::Solver(SolverError::InstabilityDetected { .. }) => exit::INSTABILITY,
            IoError::Identify(IdentifyError::InitializationFailure { .. }) => exit::INITIALIZATION,
            _ => exit::CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<IdentifyError> for Failure {
    fn from(e: IdentifyError) -> Self {
        IoError::from(e).into()
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        IoError::from(e).into()
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure {
        code: exit::CONFIG,
        message: format!("{}: {e}", dir.display()),
    })
}

fn run_simulate(args: &Common) -> Result<u8, Failure> {
    let file = read_config(&args.config)?;
    let config = &file.config;
    let model = config.simulation_model()?;
    let setups = config.setups()?;
    prepare_out(&args.out)?;
    for (i, setup) in setups.iter().enumerate() {
        let c_max: Vec<f64> = setup
            .injection
            .max_concentration()
            .iter()
            .map(|c| 2.0 * c)
            .collect();
        let lambda = max_spectral_radius(&model, &setup.column, &c_max)?;
        let g = &setup.grid;
        println!(
            "dt={} dz={} K={} N={} lambda_max={lambda:.6}",
            g.dt, g.dz, g.n_space, g.n_time
        );
        let chrom = simulate(&model, &setup.column, g, &setup.injection, &InitialProfile::Clean)?;
        let name = if setups.len() == 1 {
            "chromatogram.csv".to_string()
        } else {
            format!("chromatogram_{}.csv", i + 1)
        };
        write_chromatogram(&args.out.join(name), &chrom)?;
    }
    Ok(exit::OK)
}

fn run_identify(args: &Common) -> Result<u8, Failure> {
    let loaded = load_problem(&args.config)?;
    let problem = &loaded.problem;
    let seed = args.seed.unwrap_or(loaded.file.config.optimizer.seed);
    let mut settings = loaded.file.config.settings();
    settings.eval_mode = EvalMode::Parallel;
    prepare_out(&args.out)?;
    let report = identify(problem, seed, &settings)?;
    log::info!(
        "best fitness {:e} after {} evaluations and {} restarts",
        report.best_fitness,
        report.evaluations,
        report.restarts
    );
    write_report(&args.out.join("report.json"), &report, &loaded.file.digest)?;
    write_trace(&args.out.join("fitness_trace.csv"), &report.trace)?;
    let model = problem.model_from_physical(&report.values())?;
    for (k, exp) in problem.experiments.iter().enumerate() {
        // The best point may have been found outside the box; keep whatever it yields.
        match simulate(&model, &exp.column, &exp.grid, &exp.injection, &InitialProfile::Clean) {
            Ok(chrom) => write_chromatogram(
                &args.out.join(format!("best_chromatogram_{}.csv", k + 1)),
                &chrom,
            )?,
            Err(e) => log::warn!("experiment {}: best model does not simulate: {e}", k + 1),
        }
    }
    Ok(if report.converged {
        exit::OK
    } else {
        exit::NOT_CONVERGED
    })
}

fn run_benchmark(args: &Common, runs: Option<usize>) -> Result<u8, Failure> {
    let loaded = load_problem(&args.config)?;
    let optimizer = &loaded.file.config.optimizer;
    let seed = args.seed.unwrap_or(optimizer.seed);
    let runs = runs.unwrap_or(optimizer.runs);
    if runs == 0 {
        return Err(Failure {
            code: exit::CONFIG,
            message: "--runs must be at least 1".into(),
        });
    }
    prepare_out(&args.out)?;
    let report = benchmark(&loaded.problem, optimizer.use_expert_guess, runs, seed)?;
    log::info!(
        "convergence within 0/1/2 restarts: {:?}, perf {:?}",
        report.p_converge,
        report.perf
    );
    write_benchmark(
        &args.out.join("benchmark.json"),
        &report,
        optimizer.use_expert_guess,
        &loaded.file.digest,
    )?;
    Ok(exit::OK)
}

fn configure_threads() {
    let Ok(value) = std::env::var("CHROMIDENT_THREADS") else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring CHROMIDENT_THREADS={value:?}: expected a positive integer"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = match &cli.command {
        Command::Simulate(c) | Command::Identify(c) => c.quiet,
        Command::Benchmark { common, .. } => common.quiet,
    };
    let level = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    configure_threads();

    let result = match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Identify(args) => run_identify(args),
        Command::Benchmark { common, runs } => run_benchmark(common, *runs),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
