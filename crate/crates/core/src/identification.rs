//! Inverse problem: find isotherm parameters whose simulated chromatograms match
//! observed ones.
//!
//! The optimizer works in the unit box `[-1, 1]^n`; every coordinate is mapped
//! affinely onto the expert range of its parameter before the model is built.

use nalgebra::DVector;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cmaes::{
    optimize_with_restarts, screen_first_generation, uniform_mean, Cma, CmaError, CmaParams,
    CmaRng, EvalMode, FirstGeneration, RestartConfig, RunSummary, StartConfig, TracePoint,
};
use crate::isotherm::{IsothermError, IsothermModel, ModelTemplate};
use crate::transport::{
    calibrate_grid, simulate, Chromatogram, ColumnConfig, GridConfig, InitialProfile,
    InjectionProfile, SolverError,
};

pub const NEGATIVE_PARAM_PENALTY: f64 = 1e20;
pub const INSTABILITY_PENALTY: f64 = 1e7;
/// Every valid fitness is strictly below this value.
pub const VALID_FITNESS_LIMIT: f64 = 1e6;
pub const SIGMA0: f64 = 0.3;
pub const DEFAULT_TARGET_FITNESS: f64 = 1e-14;
pub const BENCHMARK_TARGET_FITNESS: f64 = 1e-12;
pub const BENCHMARK_MAX_RESTARTS: usize = 2;
const UNIT_BOUNDS: (f64, f64) = (-1.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentifyError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("no feasible individual found in the first generation after {draws} draws")]
    InitializationFailure { draws: usize },
    #[error(transparent)]
    Optimizer(CmaError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Isotherm(#[from] IsothermError),
}

impl From<CmaError> for IdentifyError {
    fn from(e: CmaError) -> Self {
        match e {
            CmaError::InitializationFailure { draws } => Self::InitializationFailure { draws },
            other => Self::Optimizer(other),
        }
    }
}

/// Search range and options for one packed model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// Non-positive values get the negative-parameter penalty.
    pub positive: bool,
    pub guess: Option<f64>,
    /// The value is `K' = K N*`; it is divided by its saturation partner before
    /// the model is built.
    pub kprime: bool,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
            positive: true,
            guess: None,
            kprime: false,
        }
    }

    pub fn with_guess(mut self, guess: f64) -> Self {
        self.guess = Some(guess);
        self
    }

    pub fn with_kprime(mut self) -> Self {
        self.kprime = true;
        self
    }

    pub fn allow_negative(mut self) -> Self {
        self.positive = false;
        self
    }

    pub fn validate(&self) -> Result<(), IdentifyError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(IdentifyError::InvalidProblem(format!(
                "parameter {}: range must satisfy lo < hi",
                self.name
            )));
        }
        if let Some(g) = self.guess {
            if !(g >= self.lo && g <= self.hi) {
                return Err(IdentifyError::InvalidProblem(format!(
                    "parameter {}: guess {g} lies outside [{}, {}]",
                    self.name, self.lo, self.hi
                )));
            }
        }
        Ok(())
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Specs for `template` using its default names, all positive and without guesses.
pub fn default_specs(template: &ModelTemplate<f64>, ranges: &[(f64, f64)]) -> Vec<ParamSpec> {
    template
        .param_names()
        .into_iter()
        .zip(ranges)
        .map(|(name, &(lo, hi))| ParamSpec::new(name, lo, hi))
        .collect()
}

fn check_len(expected: usize, got: usize) -> Result<(), IdentifyError> {
    if expected == got {
        Ok(())
    } else {
        Err(IdentifyError::Shape { expected, got })
    }
}

/// Physical values to the unit box.
pub fn scale_to_unit(specs: &[ParamSpec], physical: &[f64]) -> Result<Vec<f64>, IdentifyError> {
    check_len(specs.len(), physical.len())?;
    Ok(specs
        .iter()
        .zip(physical)
        .map(|(s, &p)| 2.0 * (p - s.lo) / (s.hi - s.lo) - 1.0)
        .collect())
}

/// Unit-box coordinates to physical values: `u -> lo + (u + 1)/2 (hi - lo)`.
pub fn unscale(specs: &[ParamSpec], unit: &[f64]) -> Result<Vec<f64>, IdentifyError> {
    check_len(specs.len(), unit.len())?;
    Ok(specs
        .iter()
        .zip(unit)
        .map(|(s, &u)| s.lo + (u + 1.0) / 2.0 * (s.hi - s.lo))
        .collect())
}

/// `dt * sum_n |sim_n - obs_n|^2` over all `N + 1` rows.
pub fn discrete_cost(
    simulated: &Chromatogram<f64>,
    observed: &Chromatogram<f64>,
) -> Result<f64, IdentifyError> {
    if simulated.species() != observed.species() {
        return Err(IdentifyError::Shape {
            expected: observed.species(),
            got: simulated.species(),
        });
    }
    check_len(observed.rows(), simulated.rows())?;
    let dt = observed.dt;
    if (simulated.dt - dt).abs() > 1e-12 * dt.abs() {
        return Err(IdentifyError::InvalidProblem(format!(
            "time steps differ: {} vs {dt}",
            simulated.dt
        )));
    }
    let sum: f64 = simulated
        .values()
        .iter()
        .zip(observed.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(dt * sum)
}

/// One experiment: operating conditions, the fixed grid and the measured outlet.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub column: ColumnConfig<f64>,
    pub injection: InjectionProfile<f64>,
    pub grid: GridConfig<f64>,
    pub observed: Chromatogram<f64>,
}

/// Operating conditions without data, used to generate synthetic observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup {
    pub column: ColumnConfig<f64>,
    pub injection: InjectionProfile<f64>,
    pub grid: GridConfig<f64>,
}

impl ExperimentSetup {
    /// Grid calibrated on `model` over concentrations up to twice the peak injection.
    pub fn calibrated(
        model: &IsothermModel<f64>,
        column: ColumnConfig<f64>,
        injection: InjectionProfile<f64>,
        dt: f64,
        cfl_target: f64,
    ) -> Result<Self, IdentifyError> {
        let c_max: Vec<f64> = injection.max_concentration().iter().map(|c| 2.0 * c).collect();
        let grid = calibrate_grid(model, &column, injection.duration, dt, cfl_target, &c_max)?;
        Ok(Self {
            column,
            injection,
            grid,
        })
    }

    pub fn simulate(&self, model: &IsothermModel<f64>) -> Result<Chromatogram<f64>, SolverError> {
        simulate(
            model,
            &self.column,
            &self.grid,
            &self.injection,
            &InitialProfile::Clean,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationProblem {
    pub template: ModelTemplate<f64>,
    pub specs: Vec<ParamSpec>,
    pub experiments: Vec<Experiment>,
}

impl IdentificationProblem {
    pub fn new(
        template: ModelTemplate<f64>,
        specs: Vec<ParamSpec>,
        experiments: Vec<Experiment>,
    ) -> Result<Self, IdentifyError> {
        let problem = Self {
            template,
            specs,
            experiments,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Observations produced by simulating `truth` (physical values, in `specs`
    /// order) on each setup's own grid.
    pub fn synthetic(
        template: ModelTemplate<f64>,
        specs: Vec<ParamSpec>,
        truth: &[f64],
        setups: Vec<ExperimentSetup>,
    ) -> Result<Self, IdentifyError> {
        let model = model_from_physical(&template, &specs, truth)?;
        let experiments = setups
            .into_iter()
            .map(|s| {
                let observed = s.simulate(&model)?;
                Ok(Experiment {
                    column: s.column,
                    injection: s.injection,
                    grid: s.grid,
                    observed,
                })
            })
            .collect::<Result<Vec<_>, IdentifyError>>()?;
        Self::new(template, specs, experiments)
    }

    pub fn dim(&self) -> usize {
        self.specs.len()
    }

    pub fn validate(&self) -> Result<(), IdentifyError> {
        self.template.validate()?;
        check_len(self.template.param_count(), self.specs.len())?;
        for (i, spec) in self.specs.iter().enumerate() {
            spec.validate()?;
            if spec.kprime && self.template.saturation_partner(i).is_none() {
                return Err(IdentifyError::InvalidProblem(format!(
                    "parameter {}: K' transform needs an affinity with a saturation partner",
                    spec.name
                )));
            }
        }
        if self.experiments.is_empty() {
            return Err(IdentifyError::InvalidProblem("at least one experiment is required".into()));
        }
        let m = self.template.species_count;
        for (e, exp) in self.experiments.iter().enumerate() {
            exp.column.validate()?;
            exp.injection.validate()?;
            exp.grid.validate()?;
            if exp.injection.species_count() != Some(m) {
                return Err(IdentifyError::InvalidProblem(format!(
                    "experiment {e}: injection must carry {m} species"
                )));
            }
            if exp.observed.species() != m || exp.observed.n_time() != exp.grid.n_time {
                return Err(IdentifyError::InvalidProblem(format!(
                    "experiment {e}: chromatogram has {} species and {} steps, grid expects {m} and {}",
                    exp.observed.species(),
                    exp.observed.n_time(),
                    exp.grid.n_time
                )));
            }
            if (exp.observed.dt - exp.grid.dt).abs() > 1e-9 * exp.grid.dt {
                return Err(IdentifyError::InvalidProblem(format!(
                    "experiment {e}: chromatogram dt differs from grid dt"
                )));
            }
        }
        Ok(())
    }

    /// Expert guess in unit coordinates, if every parameter has one.
    pub fn guess_unit(&self) -> Option<Vec<f64>> {
        let guess: Option<Vec<f64>> = self.specs.iter().map(|s| s.guess).collect();
        guess.and_then(|g| scale_to_unit(&self.specs, &g).ok())
    }

    pub fn model_from_physical(&self, physical: &[f64]) -> Result<IsothermModel<f64>, IdentifyError> {
        model_from_physical(&self.template, &self.specs, physical)
    }
}

/// Applies the `K'` transform and unpacks.
pub fn model_from_physical(
    template: &ModelTemplate<f64>,
    specs: &[ParamSpec],
    physical: &[f64],
) -> Result<IsothermModel<f64>, IdentifyError> {
    check_len(specs.len(), physical.len())?;
    let mut theta = physical.to_vec();
    for (i, spec) in specs.iter().enumerate() {
        if spec.kprime {
            let partner = template.saturation_partner(i).ok_or_else(|| {
                IdentifyError::InvalidProblem(format!("parameter {} has no saturation partner", spec.name))
            })?;
            theta[i] = physical[i] / physical[partner];
        }
    }
    Ok(template.unpack(&theta)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessKind {
    Valid,
    NegativeParamPenalty,
    InstabilityPenalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitnessOutcome {
    pub value: f64,
    pub kind: FitnessKind,
}

impl FitnessOutcome {
    const NEGATIVE: Self = Self {
        value: NEGATIVE_PARAM_PENALTY,
        kind: FitnessKind::NegativeParamPenalty,
    };
    const UNSTABLE: Self = Self {
        value: INSTABILITY_PENALTY,
        kind: FitnessKind::InstabilityPenalty,
    };
}

/// Fitness of a unit-box point. Never fails: bad points map to penalties.
///
/// A cost that is not finite or not below [`VALID_FITNESS_LIMIT`] is treated as
/// an instability so that valid values always rank ahead of penalties.
pub fn fitness(problem: &IdentificationProblem, unit: &[f64]) -> FitnessOutcome {
    let Ok(physical) = unscale(&problem.specs, unit) else {
        return FitnessOutcome::NEGATIVE;
    };
    if problem
        .specs
        .iter()
        .zip(&physical)
        .any(|(s, &p)| s.positive && !(p > 0.0))
    {
        return FitnessOutcome::NEGATIVE;
    }
    let Ok(model) = problem.model_from_physical(&physical) else {
        return FitnessOutcome::UNSTABLE;
    };
    let mut total = 0.0;
    for exp in &problem.experiments {
        let sim = simulate(
            &model,
            &exp.column,
            &exp.grid,
            &exp.injection,
            &InitialProfile::Clean,
        );
        let cost = match sim {
            Ok(sim) => discrete_cost(&sim, &exp.observed),
            Err(_) => return FitnessOutcome::UNSTABLE,
        };
        match cost {
            Ok(c) => total += c,
            Err(_) => return FitnessOutcome::UNSTABLE,
        }
    }
    if total.is_finite() && total < VALID_FITNESS_LIMIT {
        FitnessOutcome {
            value: total,
            kind: FitnessKind::Valid,
        }
    } else {
        FitnessOutcome::UNSTABLE
    }
}

/// Proof that a run can start: the best feasible individual of generation 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityCertificate {
    pub point: Vec<f64>,
    pub fitness: f64,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialRun {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub certificate: FeasibilityCertificate,
}

fn first_generation_policy() -> FirstGeneration {
    FirstGeneration {
        reject_out_of_bounds: true,
        feasibility_threshold: Some(VALID_FITNESS_LIMIT),
        max_draws_factor: 100,
        redraw_random_mean: true,
    }
}

/// Initial mean, step size and first feasible generation of a run, drawn exactly
/// as the first run of [`identify`] draws them for the same seed.
pub fn initialize_run(
    problem: &IdentificationProblem,
    seed: u64,
    use_guess: bool,
    lambda_override: Option<usize>,
) -> Result<InitialRun, IdentifyError> {
    problem.validate()?;
    let n = problem.dim();
    let mut rng = CmaRng::seed_from_u64(seed);
    let guess = problem.guess_unit().filter(|_| use_guess);
    let random_mean = guess.is_none();
    let mean = match guess {
        Some(g) => DVector::from_vec(g),
        None => uniform_mean(n, UNIT_BOUNDS, &mut rng),
    };
    let params = CmaParams::default_for(n, lambda_override)?;
    let mut cma = Cma::new(params, mean, SIGMA0)?;
    let screened = screen_first_generation(
        &mut cma,
        &first_generation_policy(),
        random_mean,
        UNIT_BOUNDS,
        &mut rng,
        |pts| pts.iter().map(|x| fitness(problem, x.as_slice()).value).collect(),
    )?;
    let best = screened
        .fitness
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty generation");
    Ok(InitialRun {
        mean: cma.state.mean.as_slice().to_vec(),
        sigma: SIGMA0,
        certificate: FeasibilityCertificate {
            point: screened.points[best].as_slice().to_vec(),
            fitness: screened.fitness[best],
            draws: screened.draws,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifySettings {
    pub target_fitness: f64,
    pub max_restarts: usize,
    pub lambda_override: Option<usize>,
    pub use_expert_guess: bool,
    pub eval_mode: EvalMode,
    pub record_samples: bool,
}

impl Default for IdentifySettings {
    fn default() -> Self {
        Self {
            target_fitness: DEFAULT_TARGET_FITNESS,
            max_restarts: 5,
            lambda_override: None,
            use_expert_guess: false,
            eval_mode: EvalMode::Sequential,
            record_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyReport {
    /// `(name, value)` in `specs` order, physical units.
    pub parameters: Vec<(String, f64)>,
    pub best_unit: Vec<f64>,
    pub best_fitness: f64,
    pub evaluations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub evaluations_to_target: Option<usize>,
    pub runs: Vec<RunSummary>,
    pub trace: Vec<TracePoint>,
    pub samples: Vec<Vec<f64>>,
    pub seed: u64,
}

impl IdentifyReport {
    pub fn values(&self) -> Vec<f64> {
        self.parameters.iter().map(|(_, v)| *v).collect()
    }
}

/// Restart CMA-ES over the unit box until the target fitness is reached or the
/// restart budget is spent.
///
/// The first generation of every run rejects out-of-box samples and needs one
/// feasible individual; later generations rely on the penalties alone.
pub fn identify(
    problem: &IdentificationProblem,
    seed: u64,
    settings: &IdentifySettings,
) -> Result<IdentifyReport, IdentifyError> {
    problem.validate()?;
    let n = problem.dim();
    let mut start = StartConfig::new(seed);
    start.sigma0 = SIGMA0;
    start.bounds = UNIT_BOUNDS;
    start.lambda_override = settings.lambda_override;
    start.first_generation = first_generation_policy();
    start.record_samples = settings.record_samples;
    if settings.use_expert_guess {
        start.initial_mean = problem.guess_unit();
    }
    let mut restart = RestartConfig::scaled(SIGMA0, settings.target_fitness);
    restart.max_restarts = settings.max_restarts;

    let objective = |u: &[f64]| fitness(problem, u).value;
    let run = optimize_with_restarts(&objective, n, &start, &restart, settings.eval_mode)?;
    let physical = unscale(&problem.specs, &run.best_x)?;
    Ok(IdentifyReport {
        parameters: problem
            .specs
            .iter()
            .map(|s| s.name.clone())
            .zip(physical)
            .collect(),
        best_unit: run.best_x,
        best_fitness: run.best_fitness,
        evaluations: run.evaluations,
        restarts: run.restarts,
        converged: run.reached_target,
        evaluations_to_target: run.evaluations_to_target,
        runs: run.runs,
        trace: run.trace,
        samples: run.samples,
        seed,
    })
}

/// Outcome of one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRun {
    pub seed: u64,
    /// Restarts used before the target was reached; `None` if it never was.
    pub converged_after: Option<usize>,
    pub evaluations: usize,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub runs: usize,
    pub seed: u64,
    pub target_fitness: f64,
    /// Fraction of runs converged within 0, 1 and 2 restarts.
    pub p_converge: [f64; 3],
    /// Mean evaluations-to-target over converged runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_evaluations: Option<f64>,
    /// `mean_evaluations / p_converge[2]`; absent when no run converged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perf: Option<f64>,
    pub outcomes: Vec<BenchmarkRun>,
}

/// `mean_evals / p`, or `None` when nothing converged.
pub fn perf_ratio(mean_evals: Option<f64>, p: f64) -> Option<f64> {
    mean_evals.filter(|_| p > 0.0).map(|e| e / p)
}

/// Repeats [`identify`] with seeds `seed, seed + 1, ...` and a budget of two
/// restarts, in parallel across runs.
pub fn benchmark(
    problem: &IdentificationProblem,
    use_guess: bool,
    runs: usize,
    seed: u64,
) -> Result<BenchmarkReport, IdentifyError> {
    if runs == 0 {
        return Err(IdentifyError::InvalidProblem("runs must be at least 1".into()));
    }
    problem.validate()?;
    let settings = IdentifySettings {
        target_fitness: BENCHMARK_TARGET_FITNESS,
        max_restarts: BENCHMARK_MAX_RESTARTS,
        use_expert_guess: use_guess,
        ..IdentifySettings::default()
    };
    let outcomes = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let run_seed = seed.wrapping_add(i);
            let outcome = match identify(problem, run_seed, &settings) {
                Ok(report) => BenchmarkRun {
                    seed: run_seed,
                    converged_after: report.converged.then_some(report.restarts),
                    evaluations: report.evaluations_to_target.unwrap_or(report.evaluations),
                    best_fitness: report.best_fitness,
                },
                Err(IdentifyError::InitializationFailure { draws }) => BenchmarkRun {
                    seed: run_seed,
                    converged_after: None,
                    evaluations: draws,
                    best_fitness: f64::INFINITY,
                },
                Err(e) => return Err(e),
            };
            Ok(outcome)
        })
        .collect::<Result<Vec<_>, IdentifyError>>()?;

    let mut p_converge = [0.0; 3];
    for (budget, p) in p_converge.iter_mut().enumerate() {
        let hits = outcomes
            .iter()
            .filter(|o| o.converged_after.is_some_and(|r| r <= budget))
            .count();
        *p = hits as f64 / runs as f64;
    }
    let converged: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.converged_after.is_some())
        .map(|o| o.evaluations as f64)
        .collect();
    let mean_evaluations =
        (!converged.is_empty()).then(|| converged.iter().sum::<f64>() / converged.len() as f64);
    Ok(BenchmarkReport {
        runs,
        seed,
        target_fitness: BENCHMARK_TARGET_FITNESS,
        p_converge,
        mean_evaluations,
        perf: perf_ratio(mean_evaluations, p_converge[2]),
        outcomes,
    })
}
