//! One-dimensional chromatography column.
//!
//! The concentration obeys `dc/dz + dF(c)/dt = 0` with flux
//! `F(c) = (c + rho H(c)) / u`, `rho = (1 - eps) / eps`. The column is marched
//! layer by layer in `z` with the first-order upwind (Godunov) update
//!
//! ```text
//! c[k+1][n] = c[k][n] - (dz/dt) (F(c[k][n]) - F(c[k][n-1]))
//! ```
//!
//! which is stable when `(dz/dt) max_c rho(F'(c)) <= CFL < 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::isotherm::{IsothermError, IsothermModel, Jacobian, PreparedIsotherm};
use crate::scalar::Scalar;

/// Default Courant number used when calibrating the space step.
pub const DEFAULT_CFL: f64 = 0.8;

/// Magnitude above which an intermediate value is treated as a numerical blowup.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Largest undershoot below zero, relative to `max(1, inlet scale)`, accepted as
/// rounding. Under the CFL condition each update is a convex combination of
/// non-negative values, so anything lower marks a violated stability bound.
pub const UNDERSHOOT_TOLERANCE: f64 = 1e-12;

const POWER_MAX_ITER: usize = 500;
const POWER_REL_TOL: f64 = 1e-10;
const TENSOR_POINTS_PER_AXIS: usize = 33;
const RANDOM_PROBE_POINTS: usize = 1000;
const PROBE_SEED: u64 = 0x5eed_c0de;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("numerical instability at layer k={k}, time index n={n}")]
    InstabilityDetected { k: usize, n: usize },
    #[error("flux Jacobian has zero spectral radius; cannot calibrate the grid")]
    DegenerateModel,
    #[error("invalid column: {0}")]
    InvalidColumn(String),
    #[error("invalid injection: {0}")]
    InvalidInjection(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Isotherm(#[from] IsothermError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnConfig<T> {
    pub length: T,
    pub velocity: T,
    pub porosity: T,
}

impl<T: Scalar> ColumnConfig<T> {
    pub fn new(length: T, velocity: T, porosity: T) -> Result<Self, SolverError> {
        let column = Self {
            length,
            velocity,
            porosity,
        };
        column.validate()?;
        Ok(column)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.length.is_finite() && self.length > T::zero()) {
            return Err(SolverError::InvalidColumn("length must be positive".into()));
        }
        if !(self.velocity.is_finite() && self.velocity > T::zero()) {
            return Err(SolverError::InvalidColumn("velocity must be positive".into()));
        }
        if !(self.porosity > T::zero() && self.porosity < T::one()) {
            return Err(SolverError::InvalidColumn(
                "porosity must lie in the open interval (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// `rho = (1 - eps) / eps`
    pub fn phase_ratio(&self) -> T {
        (T::one() - self.porosity) / self.porosity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSegment<T> {
    pub start: T,
    pub end: T,
    pub concentration: Vec<T>,
}

/// Piecewise-constant inlet concentration over `[0, duration]`; zero outside the segments.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionProfile<T> {
    pub segments: Vec<InjectionSegment<T>>,
    pub duration: T,
}

impl<T: Scalar> InjectionProfile<T> {
    pub fn new(segments: Vec<InjectionSegment<T>>, duration: T) -> Result<Self, SolverError> {
        let profile = Self { segments, duration };
        profile.validate()?;
        Ok(profile)
    }

    /// Single rectangular pulse of `concentration` on `[start, end)`.
    pub fn pulse(start: T, end: T, concentration: Vec<T>, duration: T) -> Result<Self, SolverError> {
        Self::new(
            vec![InjectionSegment {
                start,
                end,
                concentration,
            }],
            duration,
        )
    }

    pub fn species_count(&self) -> Option<usize> {
        self.segments.first().map(|s| s.concentration.len())
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::InvalidInjection(msg.to_string()));
        if !(self.duration.is_finite() && self.duration > T::zero()) {
            return bad("duration must be positive");
        }
        let Some(m) = self.species_count() else {
            return bad("at least one segment is required");
        };
        if m == 0 {
            return bad("segments must carry at least one species");
        }
        let mut sorted: Vec<&InjectionSegment<T>> = self.segments.iter().collect();
        sorted.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap_or(std::cmp::Ordering::Equal));
        let mut last_end = T::zero();
        for seg in sorted {
            if seg.concentration.len() != m {
                return bad("all segments must have the same number of species");
            }
            if !(seg.start.is_finite() && seg.end.is_finite()) || seg.start >= seg.end {
                return bad("segment start must precede its end");
            }
            if seg.start < last_end {
                return bad("segments overlap or start before t = 0");
            }
            if seg.end > self.duration {
                return bad("segment ends after the experiment duration");
            }
            if seg.concentration.iter().any(|c| !(c.is_finite() && *c >= T::zero())) {
                return bad("injected concentrations must be finite and non-negative");
            }
            last_end = seg.end;
        }
        Ok(())
    }

    /// Inlet concentration at time `t` written into `out`.
    pub fn sample_into(&self, t: T, out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        if let Some(seg) = self.segments.iter().find(|s| t >= s.start && t < s.end) {
            out.copy_from_slice(&seg.concentration);
        }
    }

    /// Componentwise maximum injected concentration.
    pub fn max_concentration(&self) -> Vec<T> {
        let m = self.species_count().unwrap_or(0);
        let mut max = vec![T::zero(); m];
        for seg in &self.segments {
            for (mx, &c) in max.iter_mut().zip(&seg.concentration) {
                *mx = mx.max(c);
            }
        }
        max
    }
}

/// Uniform space-time grid: `n_space * dz = L`, `n_time * dt = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig<T> {
    pub dt: T,
    pub dz: T,
    pub n_time: usize,
    pub n_space: usize,
    pub cfl_target: T,
}

impl<T: Scalar> GridConfig<T> {
    /// Grid from explicit steps. `dz` is snapped to `L / round(L / dz)`.
    pub fn from_steps(length: T, duration: T, dt: T, dz: T) -> Result<Self, SolverError> {
        let (n_time, dt) = time_axis(duration, dt)?;
        if !(dz.is_finite() && dz > T::zero()) {
            return Err(SolverError::InvalidGrid("dz must be positive".into()));
        }
        let n_space = (length / dz).round().to_usize().unwrap_or(0).max(1);
        let grid = Self {
            dt,
            dz: length / T::lit(n_space as f64),
            n_time,
            n_space,
            cfl_target: T::lit(DEFAULT_CFL),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.n_time < 2 {
            return Err(SolverError::InvalidGrid("at least two time steps are required".into()));
        }
        if self.n_space < 1 {
            return Err(SolverError::InvalidGrid("at least one space step is required".into()));
        }
        if !(self.dt > T::zero() && self.dz > T::zero()) {
            return Err(SolverError::InvalidGrid("steps must be positive".into()));
        }
        if !(self.cfl_target > T::zero() && self.cfl_target < T::one()) {
            return Err(SolverError::InvalidGrid(
                "cfl_target must lie in the open interval (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// `dz / dt`
    pub fn ratio(&self) -> T {
        self.dz / self.dt
    }

    pub fn duration(&self) -> T {
        self.dt * T::lit(self.n_time as f64)
    }
}

fn time_axis<T: Scalar>(duration: T, dt: T) -> Result<(usize, T), SolverError> {
    if !(dt.is_finite() && dt > T::zero()) {
        return Err(SolverError::InvalidGrid("dt must be positive".into()));
    }
    if !(duration.is_finite() && duration > T::zero()) {
        return Err(SolverError::InvalidGrid("duration must be positive".into()));
    }
    let n = (duration / dt).round();
    let n_time = n.to_usize().unwrap_or(0);
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(16.0));
    if n_time < 2 || ((n * dt - duration) / duration).abs() > tol {
        return Err(SolverError::InvalidGrid(
            "duration must be an integer multiple (>= 2) of dt".into(),
        ));
    }
    Ok((n_time, duration / n))
}

/// Outlet concentration record: `n_time + 1` rows of `species` values, row `n` at `n dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chromatogram<T> {
    pub dt: T,
    species: usize,
    values: Vec<T>,
}

impl<T: Scalar> Chromatogram<T> {
    /// Builds a chromatogram from row-major values.
    pub fn new(dt: T, species: usize, values: Vec<T>) -> Result<Self, SolverError> {
        if species == 0 || !values.len().is_multiple_of(species) || values.len() / species < 2 {
            return Err(SolverError::InvalidGrid(
                "chromatogram needs at least two complete rows".into(),
            ));
        }
        Ok(Self {
            dt,
            species,
            values,
        })
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.species
    }

    /// Number of time steps `N` (rows minus one).
    pub fn n_time(&self) -> usize {
        self.rows() - 1
    }

    pub fn row(&self, n: usize) -> &[T] {
        &self.values[n * self.species..(n + 1) * self.species]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn time(&self, n: usize) -> T {
        T::lit(n as f64) * self.dt
    }

    /// `dt * sum_n |row_n|^2`
    pub fn l2_mass(&self) -> T {
        self.dt * self.values.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }
}

/// Concentration in the column at `t = 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialProfile<T> {
    /// Clean column, `c0 = 0`.
    #[default]
    Clean,
    Uniform(Vec<T>),
}

/// `F(c) = (c + rho H(c)) / u`
pub fn flux<T: Scalar>(
    model: &IsothermModel<T>,
    column: &ColumnConfig<T>,
    c: &[T],
) -> Result<Vec<T>, SolverError> {
    let h = model.eval(c)?;
    let rho = column.phase_ratio();
    let inv_u = T::one() / column.velocity;
    Ok(c.iter().zip(&h).map(|(&ci, &hi)| (ci + rho * hi) * inv_u).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate<T> {
    pub radius: T,
    /// False when power iteration hit its iteration cap.
    pub converged: bool,
    pub iterations: usize,
}

/// Spectral radius of `F'(c) = (I + rho H'(c)) / u`.
///
/// Exact for one species; power iteration from the all-ones vector otherwise.
pub fn spectral_radius_flux_jacobian<T: Scalar>(
    model: &IsothermModel<T>,
    column: &ColumnConfig<T>,
    c: &[T],
) -> Result<SpectralEstimate<T>, SolverError> {
    let jac = flux_jacobian(model, column, c)?;
    Ok(spectral_radius(&jac))
}

fn flux_jacobian<T: Scalar>(
    model: &IsothermModel<T>,
    column: &ColumnConfig<T>,
    c: &[T],
) -> Result<Jacobian<T>, SolverError> {
    let mut jac = model.jacobian(c)?;
    let rho = column.phase_ratio();
    let inv_u = T::one() / column.velocity;
    for i in 0..jac.dim() {
        for j in 0..jac.dim() {
            let identity = if i == j { T::one() } else { T::zero() };
            jac.set(i, j, (identity + rho * jac.get(i, j)) * inv_u);
        }
    }
    Ok(jac)
}

fn spectral_radius<T: Scalar>(a: &Jacobian<T>) -> SpectralEstimate<T> {
    let m = a.dim();
    if m == 1 {
        return SpectralEstimate {
            radius: a.get(0, 0).abs(),
            converged: true,
            iterations: 0,
        };
    }
    let mut x = vec![T::one(); m];
    let mut y = vec![T::zero(); m];
    let mut estimate = T::zero();
    let tol = T::lit(POWER_REL_TOL);
    for it in 1..=POWER_MAX_ITER {
        a.mul_vec(&x, &mut y);
        let xx = x.iter().fold(T::zero(), |s, &v| s + v * v);
        let xy = x.iter().zip(&y).fold(T::zero(), |s, (&u, &v)| s + u * v);
        let next = xy / xx;
        let norm = y.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
        if norm == T::zero() || !norm.is_finite() {
            return SpectralEstimate {
                radius: next.abs(),
                converged: norm == T::zero(),
                iterations: it,
            };
        }
        for (xi, &yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
        if it > 1 && (next - estimate).abs() <= tol * next.abs() {
            return SpectralEstimate {
                radius: next.abs(),
                converged: true,
                iterations: it,
            };
        }
        estimate = next;
    }
    log::warn!("power iteration did not converge in {POWER_MAX_ITER} iterations");
    SpectralEstimate {
        radius: estimate.abs(),
        converged: false,
        iterations: POWER_MAX_ITER,
    }
}

/// Largest spectral radius of `F'` over concentrations in `[0, c_max]`: a 33-point
/// tensor grid for up to two species, otherwise the origin plus 1000 uniform
/// pseudo-random points (fixed seed).
pub fn max_spectral_radius<T: Scalar>(
    model: &IsothermModel<T>,
    column: &ColumnConfig<T>,
    c_max: &[T],
) -> Result<T, SolverError> {
    let m = model.species_count();
    if c_max.len() != m {
        return Err(IsothermError::Shape {
            expected: m,
            got: c_max.len(),
        }
        .into());
    }
    let mut best = T::zero();
    let mut probe = |c: &[T]| -> Result<(), SolverError> {
        let r = spectral_radius_flux_jacobian(model, column, c)?.radius;
        if r.is_nan() {
            return Err(SolverError::DegenerateModel);
        }
        best = best.max(r);
        Ok(())
    };
    let steps = T::lit((TENSOR_POINTS_PER_AXIS - 1) as f64);
    match m {
        1 => {
            for i in 0..TENSOR_POINTS_PER_AXIS {
                probe(&[c_max[0] * T::lit(i as f64) / steps])?;
            }
        }
        2 => {
            for i in 0..TENSOR_POINTS_PER_AXIS {
                for j in 0..TENSOR_POINTS_PER_AXIS {
                    probe(&[
                        c_max[0] * T::lit(i as f64) / steps,
                        c_max[1] * T::lit(j as f64) / steps,
                    ])?;
                }
            }
        }
        _ => {
            probe(&vec![T::zero(); m])?;
            let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
            let mut c = vec![T::zero(); m];
            for _ in 0..RANDOM_PROBE_POINTS {
                for (ci, &hi) in c.iter_mut().zip(c_max) {
                    *ci = hi * T::lit(rng.random::<f64>());
                }
                probe(&c)?;
            }
        }
    }
    Ok(best)
}

/// Chooses `dz` so that `(dz/dt) lambda_max = cfl_target`, rounded up to a whole
/// number of space steps (which can only lower the effective Courant number).
pub fn calibrate_grid<T: Scalar>(
    model: &IsothermModel<T>,
    column: &ColumnConfig<T>,
    duration: T,
    dt: T,
    cfl_target: T,
    c_max: &[T],
) -> Result<GridConfig<T>, SolverError> {
    column.validate()?;
    if !(cfl_target > T::zero() && cfl_target < T::one()) {
        return Err(SolverError::InvalidGrid(
            "cfl_target must lie in the open interval (0, 1)".into(),
        ));
    }
    let (n_time, dt) = time_axis(duration, dt)?;
    let lambda_max = max_spectral_radius(model, column, c_max)?;
    grid_for_lambda(column.length, dt, n_time, cfl_target, lambda_max)
}

/// Grid arithmetic for a known `lambda_max`.
pub fn grid_for_lambda<T: Scalar>(
    length: T,
    dt: T,
    n_time: usize,
    cfl_target: T,
    lambda_max: T,
) -> Result<GridConfig<T>, SolverError> {
    if !(lambda_max.is_finite() && lambda_max > T::zero()) {
        return Err(SolverError::DegenerateModel);
    }
    let dz_max = cfl_target * dt / lambda_max;
    let slack = T::one() - T::epsilon() * T::lit(64.0);
    let n_space = (length / dz_max * slack)
        .ceil()
        .to_usize()
        .ok_or_else(|| SolverError::InvalidGrid("space step count overflows".into()))?
        .max(1);
    let grid = GridConfig {
        dt,
        dz: length / T::lit(n_space as f64),
        n_time,
        n_space,
        cfl_target,
    };
    grid.validate()?;
    Ok(grid)
}

/// Runs the upwind march and returns the outlet chromatogram.
///
/// Fails with [`SolverError::InstabilityDetected`] at the first value that is not
/// finite, reaches [`BLOWUP_THRESHOLD`] in magnitude, or undershoots zero by more
/// than [`UNDERSHOOT_TOLERANCE`]. Rounding-level negatives are kept; the isotherm
/// sees them clamped to zero.
pub fn simulate<T: Scalar>(
    model: &IsothermModel<T>,
    column: &ColumnConfig<T>,
    grid: &GridConfig<T>,
    injection: &InjectionProfile<T>,
    initial: &InitialProfile<T>,
) -> Result<Chromatogram<T>, SolverError> {
    simulate_with_observer(model, column, grid, injection, initial, |_, _| {})
}

/// Like [`simulate`], calling `observer(k, layer)` for every layer `k = 0..=K`
/// (row-major `(N+1) x m` values).
pub fn simulate_with_observer<T: Scalar>(
    model: &IsothermModel<T>,
    column: &ColumnConfig<T>,
    grid: &GridConfig<T>,
    injection: &InjectionProfile<T>,
    initial: &InitialProfile<T>,
    mut observer: impl FnMut(usize, &[T]),
) -> Result<Chromatogram<T>, SolverError> {
    let m = model.species_count();
    if injection.species_count() != Some(m) {
        return Err(SolverError::InvalidInjection(format!(
            "injection must carry {m} species"
        )));
    }
    let c0 = match initial {
        InitialProfile::Clean => vec![T::zero(); m],
        InitialProfile::Uniform(v) if v.len() == m => v.clone(),
        InitialProfile::Uniform(_) => {
            return Err(SolverError::InvalidInjection(
                "initial profile has the wrong number of species".into(),
            ))
        }
    };
    let rows = grid.n_time + 1;
    let half = T::lit(0.5);
    let mut layer = vec![T::zero(); rows * m];
    layer[..m].copy_from_slice(&c0);
    for n in 1..rows {
        let t = (T::lit(n as f64) - half) * grid.dt;
        injection.sample_into(t, &mut layer[n * m..(n + 1) * m]);
    }
    observer(0, &layer);

    let prepared = PreparedIsotherm::new(model);
    let ratio = grid.ratio();
    let rho = column.phase_ratio();
    let inv_u = T::one() / column.velocity;
    let bound = T::lit(BLOWUP_THRESHOLD);
    let scale = injection
        .max_concentration()
        .into_iter()
        .chain(c0.iter().copied())
        .fold(T::one(), T::max);
    let floor = -T::lit(UNDERSHOOT_TOLERANCE) * scale;
    let mut next = vec![T::zero(); rows * m];
    let mut flux_cur = vec![T::zero(); m];
    let mut flux_prev = vec![T::zero(); m];

    for k in 0..grid.n_space {
        next[..m].copy_from_slice(&c0);
        layer_flux(&prepared, rho, inv_u, &layer[..m], &mut flux_prev);
        for n in 1..rows {
            let cell = &layer[n * m..(n + 1) * m];
            layer_flux(&prepared, rho, inv_u, cell, &mut flux_cur);
            for i in 0..m {
                let v = cell[i] - ratio * (flux_cur[i] - flux_prev[i]);
                if !(v.abs() < bound) || v < floor {
                    return Err(SolverError::InstabilityDetected { k: k + 1, n });
                }
                next[n * m + i] = v;
            }
            std::mem::swap(&mut flux_cur, &mut flux_prev);
        }
        std::mem::swap(&mut layer, &mut next);
        observer(k + 1, &layer);
    }
    Chromatogram::new(grid.dt, m, layer)
}

#[inline]
fn layer_flux<T: Scalar>(model: &PreparedIsotherm<'_, T>, rho: T, inv_u: T, c: &[T], out: &mut [T]) {
    model.eval_into(c, out);
    for (o, &ci) in out.iter_mut().zip(c) {
        *o = (ci + rho * *o) * inv_u;
    }
}
