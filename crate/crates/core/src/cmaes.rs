//! CMA-ES with weighted recombination, combined rank-one / rank-mu covariance
//! adaptation, path-length step-size control and restarts with population
//! doubling.
//!
//! The individual update rules are exposed as free functions so they can be
//! checked in isolation; [`Cma`] wires them into an ask/tell loop and
//! [`optimize_with_restarts`] adds the restart policy.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Generator used for every random draw of a run.
pub type CmaRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CmaError {
    #[error("invalid dimension {0}; at least one variable is required")]
    InvalidDimension(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no acceptable individual found after {draws} draws")]
    InitializationFailure { draws: usize },
}

/// Strategy parameters for one population size.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaParams {
    pub n: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_c: f64,
    pub c_sigma: f64,
    pub c_cov: f64,
    pub d_sigma: f64,
    /// Approximation of `E|N(0, I_n)|`.
    pub chi_n: f64,
}

impl CmaParams {
    /// Default parameters: `lambda = floor(4 + 3 ln n)`, `mu = floor(lambda / 2)`,
    /// log-linear weights.
    pub fn default_for(n: usize, lambda_override: Option<usize>) -> Result<Self, CmaError> {
        if n < 1 {
            return Err(CmaError::InvalidDimension(n));
        }
        let lambda = match lambda_override {
            Some(l) => l,
            None => default_lambda(n),
        };
        Self::with_lambda(n, lambda)
    }

    pub fn with_lambda(n: usize, lambda: usize) -> Result<Self, CmaError> {
        if n < 1 {
            return Err(CmaError::InvalidDimension(n));
        }
        if lambda < 2 {
            return Err(CmaError::InvalidConfig(
                "population size must be at least 2".into(),
            ));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((mu + 1) as f64).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 3.0);
        let d_sigma =
            1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = 4.0 / (nf + 4.0);
        let c_cov = (1.0 / mu_eff) * 2.0 / (nf + 2f64.sqrt()).powi(2)
            + (1.0 - 1.0 / mu_eff)
                * ((2.0 * mu_eff - 1.0) / ((nf + 2.0).powi(2) + mu_eff)).min(1.0);
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(Self {
            n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_c,
            c_sigma,
            c_cov,
            d_sigma,
            chi_n,
        })
    }

    /// Default length of the best-fitness window used by the TolFun criterion:
    /// `10 + ceil(30 n / lambda)`.
    pub fn history_len(&self) -> usize {
        10 + (30 * self.n).div_ceil(self.lambda)
    }
}

/// `floor(4 + 3 ln n)`
pub fn default_lambda(n: usize) -> usize {
    (4.0 + 3.0 * (n as f64).ln()).floor() as usize
}

/// Mutable search distribution of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    /// Eigenvectors of `cov` (columns).
    pub b: DMatrix<f64>,
    /// Square roots of the eigenvalues of `cov`.
    pub d: DVector<f64>,
    pub p_c: DVector<f64>,
    pub p_sigma: DVector<f64>,
    pub generation: usize,
    pub evals: usize,
}

/// Raised when the covariance matrix loses positive definiteness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("covariance matrix is no longer positive definite")]
pub struct Degenerate;

impl CmaState {
    pub fn new(mean: DVector<f64>, sigma: f64) -> Self {
        let n = mean.len();
        Self {
            mean,
            sigma,
            cov: DMatrix::identity(n, n),
            b: DMatrix::identity(n, n),
            d: DVector::from_element(n, 1.0),
            p_c: DVector::zeros(n),
            p_sigma: DVector::zeros(n),
            generation: 0,
            evals: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Symmetrizes `cov` and recomputes `b`, `d`.
    pub fn refresh_eigen(&mut self) -> Result<(), Degenerate> {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        self.cov = sym;
        if self.cov.iter().any(|v| !v.is_finite()) {
            return Err(Degenerate);
        }
        let eig = SymmetricEigen::new(self.cov.clone());
        if eig.eigenvalues.iter().any(|&ev| !(ev > 0.0 && ev.is_finite())) {
            return Err(Degenerate);
        }
        self.d = eig.eigenvalues.map(f64::sqrt);
        self.b = eig.eigenvectors;
        Ok(())
    }

    /// `max(D)^2 / min(D)^2`
    pub fn condition_number(&self) -> f64 {
        let max = self.d.max();
        let min = self.d.min();
        (max * max) / (min * min)
    }

    /// `mean + sigma B D z`
    pub fn point_from_normal(&self, z: &DVector<f64>) -> DVector<f64> {
        let scaled = z.component_mul(&self.d);
        &self.mean + (&self.b * scaled) * self.sigma
    }
}

fn draw_normal(n: usize, rng: &mut CmaRng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws `lambda` offspring `m + sigma B D z_k`.
pub fn sample(state: &CmaState, params: &CmaParams, rng: &mut CmaRng) -> Vec<DVector<f64>> {
    (0..params.lambda)
        .map(|_| {
            let z = draw_normal(state.dim(), rng);
            state.point_from_normal(&z)
        })
        .collect()
}

/// Weighted recombination of the `mu` best points (given in rank order).
pub fn update_mean(params: &CmaParams, ranked: &[DVector<f64>]) -> DVector<f64> {
    assert_eq!(ranked.len(), params.mu, "update_mean expects exactly mu points");
    let n = ranked[0].len();
    ranked
        .iter()
        .zip(&params.weights)
        .fold(DVector::zeros(n), |acc, (x, &w)| acc + x * w)
}

/// New `(p_c, p_sigma)` after the mean moved from `old_mean` to `new_mean`.
pub fn update_paths(
    state: &CmaState,
    params: &CmaParams,
    old_mean: &DVector<f64>,
    new_mean: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let step = (new_mean - old_mean) / state.sigma;
    let p_c = &state.p_c * (1.0 - params.c_c)
        + &step * (params.c_c * (2.0 - params.c_c) * params.mu_eff).sqrt();
    let inv_d = state.d.map(|v| 1.0 / v);
    let whitened = &state.b * (state.b.transpose() * &step).component_mul(&inv_d);
    let p_sigma = &state.p_sigma * (1.0 - params.c_sigma)
        + whitened * (params.c_sigma * (2.0 - params.c_sigma) * params.mu_eff).sqrt();
    (p_c, p_sigma)
}

/// Combined update
/// `C' = (1 - c_cov) C + (c_cov / mu_eff) p_c p_c^T + c_cov (1 - 1/mu_eff) sum_i w_i y_i y_i^T`,
/// symmetrized. `steps` are the selected `(x_i - m) / sigma` in rank order.
pub fn update_covariance(
    cov: &DMatrix<f64>,
    params: &CmaParams,
    p_c: &DVector<f64>,
    steps: &[DVector<f64>],
) -> DMatrix<f64> {
    let rank_one = p_c * p_c.transpose();
    let n = cov.nrows();
    let rank_mu = steps
        .iter()
        .zip(&params.weights)
        .fold(DMatrix::zeros(n, n), |acc, (y, &w)| acc + (y * y.transpose()) * w);
    let updated = cov * (1.0 - params.c_cov)
        + rank_one * (params.c_cov / params.mu_eff)
        + rank_mu * (params.c_cov * (1.0 - 1.0 / params.mu_eff));
    (&updated + updated.transpose()) * 0.5
}

/// Path-length control: `sigma exp((c_sigma / d_sigma)(|p_sigma| / chi_n - 1))`.
pub fn update_step_size(sigma: f64, params: &CmaParams, p_sigma: &DVector<f64>) -> f64 {
    sigma * ((params.c_sigma / params.d_sigma) * (p_sigma.norm() / params.chi_n - 1.0)).exp()
}

/// Why a single CMA-ES run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TargetFitness,
    TolFun,
    TolX,
    NoEffectAxis,
    CondCov,
    /// Covariance matrix lost positive definiteness.
    Degenerate,
    MaxGenerations,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::TargetFitness => "target_fitness",
            Termination::TolFun => "tol_fun",
            Termination::TolX => "tol_x",
            Termination::NoEffectAxis => "no_effect_axis",
            Termination::CondCov => "cond_cov",
            Termination::Degenerate => "degenerate",
            Termination::MaxGenerations => "max_generations",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartConfig {
    pub tol_fun: f64,
    pub tol_x: f64,
    pub cond_max: f64,
    pub max_restarts: usize,
    pub target_fitness: f64,
    /// TolFun window; `None` uses [`CmaParams::history_len`].
    pub history_len: Option<usize>,
    /// Hard cap on generations per run; `None` for no cap.
    pub max_generations: Option<usize>,
}

impl RestartConfig {
    /// Thresholds scaled by the initial step size: `TolFun = TolX = 1e-12 sigma0`,
    /// condition bound `1e14`, five restarts.
    pub fn scaled(sigma0: f64, target_fitness: f64) -> Self {
        Self {
            tol_fun: 1e-12 * sigma0,
            tol_x: 1e-12 * sigma0,
            cond_max: 1e14,
            max_restarts: 5,
            target_fitness,
            history_len: None,
            max_generations: None,
        }
    }

    pub fn validate(&self) -> Result<(), CmaError> {
        // A zero tolerance disables the criterion.
        if !(self.tol_fun >= 0.0 && self.tol_x >= 0.0) {
            return Err(CmaError::InvalidConfig("tolerances must be non-negative".into()));
        }
        if !(self.cond_max >= 1.0) {
            return Err(CmaError::InvalidConfig("cond_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// First restart criterion that fires, checked in the order TolFun, TolX,
/// NoEffectAxis, CondCov. `history` holds the best fitness of recent generations;
/// TolFun is only evaluated once the window is full.
pub fn check_termination(
    state: &CmaState,
    params: &CmaParams,
    restart: &RestartConfig,
    history: &[f64],
) -> Option<Termination> {
    let window = restart.history_len.unwrap_or_else(|| params.history_len());
    if history.len() >= window {
        let recent = &history[history.len() - window..];
        let (lo, hi) = recent
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &f| (lo.min(f), hi.max(f)));
        if hi - lo < restart.tol_fun {
            return Some(Termination::TolFun);
        }
    }

    let n = state.dim();
    let small_std = (0..n).all(|i| state.sigma * state.cov[(i, i)].sqrt() < restart.tol_x);
    let small_path = state.p_c.iter().all(|p| (state.sigma * p).abs() < restart.tol_x);
    if small_std && small_path {
        return Some(Termination::TolX);
    }

    let axis = state.generation % n;
    let shift = state.b.column(axis) * (0.1 * state.sigma * state.d[axis]);
    if state
        .mean
        .iter()
        .zip(shift.iter())
        .all(|(&m, &s)| m + s == m)
    {
        return Some(Termination::NoEffectAxis);
    }

    if state.condition_number() > restart.cond_max {
        return Some(Termination::CondCov);
    }
    None
}

/// One CMA-ES run driven through `ask` / `tell`.
#[derive(Debug, Clone)]
pub struct Cma {
    pub params: CmaParams,
    pub state: CmaState,
}

impl Cma {
    pub fn new(params: CmaParams, mean: DVector<f64>, sigma: f64) -> Result<Self, CmaError> {
        if mean.len() != params.n {
            return Err(CmaError::InvalidDimension(mean.len()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(CmaError::InvalidConfig("sigma must be positive".into()));
        }
        Ok(Self {
            params,
            state: CmaState::new(mean, sigma),
        })
    }

    pub fn ask(&self, rng: &mut CmaRng) -> Vec<DVector<f64>> {
        sample(&self.state, &self.params, rng)
    }

    /// Updates the distribution from `lambda` evaluated points. Ties in fitness
    /// keep sampling order; NaN ranks last.
    pub fn tell(&mut self, points: &[DVector<f64>], fitness: &[f64]) -> Result<(), Degenerate> {
        assert_eq!(points.len(), fitness.len());
        let order = rank(fitness);
        let selected: Vec<DVector<f64>> = order[..self.params.mu]
            .iter()
            .map(|&i| points[i].clone())
            .collect();
        let old_mean = self.state.mean.clone();
        let new_mean = update_mean(&self.params, &selected);
        let (p_c, p_sigma) = update_paths(&self.state, &self.params, &old_mean, &new_mean);
        let steps: Vec<DVector<f64>> = selected
            .iter()
            .map(|x| (x - &old_mean) / self.state.sigma)
            .collect();
        let cov = update_covariance(&self.state.cov, &self.params, &p_c, &steps);
        let sigma = update_step_size(self.state.sigma, &self.params, &p_sigma);

        self.state.mean = new_mean;
        self.state.p_c = p_c;
        self.state.p_sigma = p_sigma;
        self.state.cov = cov;
        self.state.sigma = sigma;
        self.state.generation += 1;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Degenerate);
        }
        self.state.refresh_eigen()
    }
}

/// Indices sorted by fitness (NaN last), ties broken by index.
pub fn rank(fitness: &[f64]) -> Vec<usize> {
    let key = |f: f64| if f.is_nan() { f64::INFINITY } else { f };
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| key(fitness[a]).total_cmp(&key(fitness[b])).then(a.cmp(&b)));
    order
}

/// How the first generation of every run is screened.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstGeneration {
    /// Resample individuals falling outside the box.
    pub reject_out_of_bounds: bool,
    /// Redraw the whole generation until at least one fitness is below this value.
    pub feasibility_threshold: Option<f64>,
    /// Total draws allowed per first generation, as a multiple of `lambda`.
    pub max_draws_factor: usize,
    /// When the mean was drawn at random, redraw it together with every
    /// infeasible generation.
    pub redraw_random_mean: bool,
}

impl Default for FirstGeneration {
    fn default() -> Self {
        Self {
            reject_out_of_bounds: false,
            feasibility_threshold: None,
            max_draws_factor: 100,
            redraw_random_mean: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartConfig {
    /// Mean of the first run; `None` draws it uniformly in the box.
    pub initial_mean: Option<Vec<f64>>,
    pub sigma0: f64,
    /// Box `[lo, hi]^n` used for uniform means and first-generation rejection.
    pub bounds: (f64, f64),
    pub seed: u64,
    pub lambda_override: Option<usize>,
    pub first_generation: FirstGeneration,
    /// Keep every sampled point in the report.
    pub record_samples: bool,
}

impl StartConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            initial_mean: None,
            sigma0: 0.3,
            bounds: (-1.0, 1.0),
            seed,
            lambda_override: None,
            first_generation: FirstGeneration::default(),
            record_samples: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    #[default]
    Sequential,
    /// Evaluate each generation on the rayon pool; results are merged in sampling order.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub lambda: usize,
    pub generations: usize,
    pub evaluations: usize,
    pub best_fitness: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub evaluation: usize,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub best_x: Vec<f64>,
    pub best_fitness: f64,
    pub evaluations: usize,
    pub restarts: usize,
    pub reached_target: bool,
    /// Total evaluations when the target was first reached.
    pub evaluations_to_target: Option<usize>,
    pub runs: Vec<RunSummary>,
    /// Best-so-far fitness after every generation.
    pub trace: Vec<TracePoint>,
    pub samples: Vec<Vec<f64>>,
}

struct Driver<'a, F> {
    objective: &'a F,
    mode: EvalMode,
    evaluations: usize,
    best_x: Vec<f64>,
    best_fitness: f64,
    trace: Vec<TracePoint>,
    samples: Vec<Vec<f64>>,
    record: bool,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Driver<'_, F> {
    fn evaluate(&mut self, points: &[DVector<f64>]) -> Vec<f64> {
        let fitness: Vec<f64> = match self.mode {
            EvalMode::Sequential => points.iter().map(|x| (self.objective)(x.as_slice())).collect(),
            EvalMode::Parallel => points
                .par_iter()
                .map(|x| (self.objective)(x.as_slice()))
                .collect(),
        };
        self.evaluations += points.len();
        for (x, &f) in points.iter().zip(&fitness) {
            if self.record {
                self.samples.push(x.as_slice().to_vec());
            }
            if f < self.best_fitness || self.best_x.is_empty() {
                self.best_fitness = f;
                self.best_x = x.as_slice().to_vec();
            }
        }
        fitness
    }

    fn record_trace(&mut self) {
        self.trace.push(TracePoint {
            evaluation: self.evaluations,
            best_fitness: self.best_fitness,
        });
    }
}

/// Restart CMA-ES on `objective` over `R^n`.
///
/// Run `r` uses `lambda_0 2^r` offspring. The first run starts from
/// `start.initial_mean` if given; every other run from a fresh uniform mean in the
/// box, always with `sigma0`. Stops when a fitness `<= target_fitness` is seen or
/// after `max_restarts` restarts. All randomness comes from one generator seeded
/// with `start.seed`.
pub fn optimize_with_restarts<F>(
    objective: &F,
    n: usize,
    start: &StartConfig,
    restart: &RestartConfig,
    mode: EvalMode,
) -> Result<RunReport, CmaError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    restart.validate()?;
    let base = CmaParams::default_for(n, start.lambda_override)?;
    if let Some(mean) = &start.initial_mean {
        if mean.len() != n {
            return Err(CmaError::InvalidDimension(mean.len()));
        }
    }
    let (lo, hi) = start.bounds;
    if !(lo < hi) {
        return Err(CmaError::InvalidConfig("bounds must satisfy lo < hi".into()));
    }
    let mut rng = CmaRng::seed_from_u64(start.seed);
    let mut driver = Driver {
        objective,
        mode,
        evaluations: 0,
        best_x: Vec::new(),
        best_fitness: f64::INFINITY,
        trace: Vec::new(),
        samples: Vec::new(),
        record: start.record_samples,
    };
    let mut runs = Vec::new();
    let mut evaluations_to_target = None;

    for r in 0..=restart.max_restarts {
        let params = CmaParams::with_lambda(n, base.lambda << r)?;
        let mean = match (&start.initial_mean, r) {
            (Some(m), 0) => DVector::from_column_slice(m),
            _ => uniform_mean(n, start.bounds, &mut rng),
        };
        let random_mean = start.initial_mean.is_none() || r > 0;
        let mut cma = Cma::new(params, mean, start.sigma0)?;
        let evals_before = driver.evaluations;
        let mut history: VecDeque<f64> = VecDeque::new();
        let window = restart
            .history_len
            .unwrap_or_else(|| cma.params.history_len());
        let mut run_best = f64::INFINITY;

        let termination = loop {
            let (points, fitness) = if cma.state.generation == 0 {
                let screened = screen_first_generation(
                    &mut cma,
                    &start.first_generation,
                    random_mean,
                    start.bounds,
                    &mut rng,
                    |pts| driver.evaluate(pts),
                )?;
                (screened.points, screened.fitness)
            } else {
                let points = cma.ask(&mut rng);
                let fitness = driver.evaluate(&points);
                (points, fitness)
            };
            let gen_best = fitness.iter().copied().fold(f64::INFINITY, f64::min);
            run_best = run_best.min(gen_best);
            driver.record_trace();
            if gen_best <= restart.target_fitness {
                evaluations_to_target = Some(driver.evaluations);
                break Termination::TargetFitness;
            }
            history.push_back(gen_best);
            if history.len() > window {
                history.pop_front();
            }
            if cma.tell(&points, &fitness).is_err() {
                break Termination::Degenerate;
            }
            cma.state.evals = driver.evaluations - evals_before;
            history.make_contiguous();
            if let Some(reason) =
                check_termination(&cma.state, &cma.params, restart, history.as_slices().0)
            {
                break reason;
            }
            if restart
                .max_generations
                .is_some_and(|cap| cma.state.generation >= cap)
            {
                break Termination::MaxGenerations;
            }
        };
        log::debug!(
            "run {r}: lambda={} generations={} best={run_best:e} termination={termination}",
            cma.params.lambda,
            cma.state.generation
        );
        runs.push(RunSummary {
            lambda: cma.params.lambda,
            generations: cma.state.generation,
            evaluations: driver.evaluations - evals_before,
            best_fitness: run_best,
            termination,
        });
        if termination == Termination::TargetFitness {
            break;
        }
    }

    Ok(RunReport {
        best_x: driver.best_x,
        best_fitness: driver.best_fitness,
        evaluations: driver.evaluations,
        restarts: runs.len() - 1,
        reached_target: evaluations_to_target.is_some(),
        evaluations_to_target,
        runs,
        trace: driver.trace,
        samples: driver.samples,
    })
}

/// Outcome of [`screen_first_generation`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenedGeneration {
    pub points: Vec<DVector<f64>>,
    pub fitness: Vec<f64>,
    /// Individuals drawn, including rejected ones.
    pub draws: usize,
}

/// Samples the first generation of a run under `policy`: individuals outside
/// `bounds` are redrawn one by one, and the whole generation is redrawn while no
/// fitness is below the feasibility threshold. A random mean (`random_mean`) is
/// redrawn with each rejected generation if the policy asks for it. Fails once
/// `max_draws_factor * lambda` individuals have been drawn.
pub fn screen_first_generation(
    cma: &mut Cma,
    policy: &FirstGeneration,
    random_mean: bool,
    bounds: (f64, f64),
    rng: &mut CmaRng,
    mut evaluate: impl FnMut(&[DVector<f64>]) -> Vec<f64>,
) -> Result<ScreenedGeneration, CmaError> {
    let lambda = cma.params.lambda;
    let cap = policy.max_draws_factor.max(1) * lambda;
    let in_bounds = |x: &DVector<f64>| x.iter().all(|&v| v >= bounds.0 && v <= bounds.1);
    let mut draws = 0;
    loop {
        let mut points = Vec::with_capacity(lambda);
        while points.len() < lambda {
            if draws >= cap {
                return Err(CmaError::InitializationFailure { draws });
            }
            draws += 1;
            let z = draw_normal(cma.params.n, rng);
            let x = cma.state.point_from_normal(&z);
            if !policy.reject_out_of_bounds || in_bounds(&x) {
                points.push(x);
            }
        }
        let fitness = evaluate(&points);
        let feasible = match policy.feasibility_threshold {
            Some(limit) => fitness.iter().any(|&f| f < limit),
            None => true,
        };
        if feasible {
            return Ok(ScreenedGeneration {
                points,
                fitness,
                draws,
            });
        }
        if draws >= cap {
            return Err(CmaError::InitializationFailure { draws });
        }
        if random_mean && policy.redraw_random_mean {
            cma.state.mean = uniform_mean(cma.params.n, bounds, rng);
        }
    }
}

/// Mean drawn uniformly in `[lo, hi]^n`.
pub fn uniform_mean(n: usize, (lo, hi): (f64, f64), rng: &mut CmaRng) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_population_sizes() {
        let p2 = CmaParams::default_for(2, None).unwrap();
        assert_eq!((p2.lambda, p2.mu), (6, 3));
        let p10 = CmaParams::default_for(10, None).unwrap();
        assert_eq!((p10.lambda, p10.mu), (10, 5));
        assert!(matches!(
            CmaParams::default_for(0, None),
            Err(CmaError::InvalidDimension(0))
        ));
    }

    #[test]
    fn weights_are_normalized_and_decreasing() {
        for n in 1..12 {
            let p = CmaParams::default_for(n, None).unwrap();
            assert_relative_eq!(p.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            assert!(p.weights.windows(2).all(|w| w[0] >= w[1] && w[1] > 0.0));
            let sq: f64 = p.weights.iter().map(|w| w * w).sum();
            assert_relative_eq!(p.mu_eff * sq, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn chi_n_approximation() {
        let p = CmaParams::default_for(1, Some(2)).unwrap();
        let exact = (2.0 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(p.chi_n, 0.797_619_047_619_047_6, epsilon = 1e-12);
        assert!((p.chi_n - exact).abs() / exact < 0.01);
    }

    #[test]
    fn mean_update_examples() {
        let mut p = CmaParams::default_for(2, None).unwrap();
        p.mu = 2;
        p.weights = vec![0.75, 0.25];
        let m = update_mean(
            &p,
            &[DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![4.0, 0.0])],
        );
        assert_eq!(m.as_slice(), &[1.0, 0.0]);

        let x = DVector::from_vec(vec![0.3, -2.0]);
        let p = CmaParams::default_for(2, None).unwrap();
        let m = update_mean(&p, &vec![x.clone(); p.mu]);
        assert_relative_eq!(m, x, epsilon = 1e-15);

        let mut single = p.clone();
        single.mu = 1;
        single.weights = vec![1.0];
        assert_eq!(update_mean(&single, std::slice::from_ref(&x)), x);
    }

    #[test]
    fn paths_decay_on_zero_step() {
        let p = CmaParams::default_for(3, None).unwrap();
        let mut s = CmaState::new(DVector::from_vec(vec![0.1, 0.2, 0.3]), 0.5);
        s.p_c = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        s.p_sigma = DVector::from_vec(vec![0.5, 0.5, -0.5]);
        let (pc, ps) = update_paths(&s, &p, &s.mean, &s.mean);
        assert_relative_eq!(pc, &s.p_c * (1.0 - p.c_c), epsilon = 1e-15);
        assert_relative_eq!(ps, &s.p_sigma * (1.0 - p.c_sigma), epsilon = 1e-15);
    }

    #[test]
    fn unit_cumulation_collapses_coefficient() {
        let mut p = CmaParams::default_for(2, None).unwrap();
        p.c_c = 1.0;
        let s = CmaState::new(DVector::zeros(2), 0.25);
        let new_mean = DVector::from_vec(vec![0.5, -0.25]);
        let (pc, _) = update_paths(&s, &p, &s.mean, &new_mean);
        assert_relative_eq!(pc, &new_mean / 0.25 * p.mu_eff.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn identity_covariance_makes_paths_agree() {
        let mut p = CmaParams::default_for(4, None).unwrap();
        p.c_sigma = p.c_c;
        let s = CmaState::new(DVector::zeros(4), 0.7);
        let new_mean = DVector::from_vec(vec![0.1, -0.3, 0.2, 0.05]);
        let (pc, ps) = update_paths(&s, &p, &s.mean, &new_mean);
        assert_relative_eq!(pc, ps, epsilon = 1e-14);
    }

    #[test]
    fn covariance_update_examples() {
        let mut p = CmaParams::default_for(3, None).unwrap();
        let c = DMatrix::identity(3, 3);
        let pc = DVector::from_vec(vec![0.3, 0.1, -0.2]);
        let steps = vec![DVector::from_vec(vec![1.0, 2.0, 3.0]); p.mu];
        p.c_cov = 0.0;
        assert_eq!(update_covariance(&c, &p, &pc, &steps), c);

        p.c_cov = 0.5;
        p.mu = 1;
        p.weights = vec![1.0];
        p.mu_eff = 1.0;
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let out = update_covariance(&c, &p, &e1, &steps[..1]);
        assert_relative_eq!(
            out,
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 0.5])),
            epsilon = 1e-15
        );
    }

    #[test]
    fn step_size_examples() {
        let mut p = CmaParams::default_for(3, None).unwrap();
        let at_chi = DVector::from_vec(vec![p.chi_n, 0.0, 0.0]);
        assert_relative_eq!(update_step_size(0.3, &p, &at_chi), 0.3, epsilon = 1e-15);
        p.c_sigma = 1.0;
        p.d_sigma = 1.0;
        let double = DVector::from_vec(vec![0.0, 2.0 * p.chi_n, 0.0]);
        assert_relative_eq!(
            update_step_size(0.3, &p, &double),
            0.3 * std::f64::consts::E,
            max_relative = 1e-14
        );
        let p = CmaParams::default_for(3, None).unwrap();
        let shrunk = update_step_size(0.3, &p, &DVector::zeros(3));
        assert_relative_eq!(shrunk, 0.3 * (-p.c_sigma / p.d_sigma).exp(), max_relative = 1e-15);
        assert!(shrunk < 0.3);
    }

    #[test]
    fn termination_examples() {
        let p = CmaParams::default_for(2, None).unwrap();
        let restart = RestartConfig::scaled(0.3, 0.0);
        let fresh = CmaState::new(DVector::from_vec(vec![0.2, -0.4]), 0.3);
        assert_eq!(check_termination(&fresh, &p, &restart, &[1.0, 2.0]), None);

        let flat = vec![5.0; p.history_len()];
        assert_eq!(
            check_termination(&fresh, &p, &restart, &flat),
            Some(Termination::TolFun)
        );
        // a short window never triggers TolFun
        assert_eq!(check_termination(&fresh, &p, &restart, &flat[1..]), None);

        let mut ill = fresh.clone();
        ill.cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-15]));
        ill.refresh_eigen().unwrap();
        assert_eq!(
            check_termination(&ill, &p, &restart, &[]),
            Some(Termination::CondCov)
        );

        let mut tiny = fresh.clone();
        tiny.sigma = 1e-20;
        assert_eq!(
            check_termination(&tiny, &p, &restart, &[]),
            Some(Termination::TolX)
        );

        let mut stuck = fresh.clone();
        stuck.mean = DVector::from_vec(vec![1e6, 1e6]);
        stuck.sigma = 1e-12;
        let loose = RestartConfig {
            tol_x: 1e-30,
            ..restart.clone()
        };
        assert_eq!(
            check_termination(&stuck, &p, &loose, &[]),
            Some(Termination::NoEffectAxis)
        );
    }

    #[test]
    fn eigen_refresh_reconstructs_covariance() {
        let mut s = CmaState::new(DVector::zeros(3), 1.0);
        s.cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        s.refresh_eigen().unwrap();
        let dd = DMatrix::from_diagonal(&s.d.map(|v| v * v));
        let rebuilt = &s.b * dd * s.b.transpose();
        assert_relative_eq!(rebuilt, s.cov, epsilon = 1e-9);

        s.cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        s.mean = DVector::zeros(2);
        assert_eq!(s.refresh_eigen(), Err(Degenerate));
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank(&[3.0, 1.0, 3.0, f64::NAN, 0.5]), vec![4, 1, 0, 2, 3]);
    }
}
