//! Configuration files, chromatogram tables and run reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cmaes::{RunSummary, TracePoint};
use crate::identification::{
    model_from_physical, BenchmarkReport, Experiment, ExperimentSetup, IdentificationProblem,
    IdentifyError, IdentifyReport, IdentifySettings, ParamSpec, DEFAULT_TARGET_FITNESS,
};
use crate::isotherm::{Family, IsothermModel, ModelTemplate, DEFAULT_TEMPERATURE};
use crate::transport::{
    max_spectral_radius, Chromatogram, ColumnConfig, GridConfig, InjectionProfile,
    InjectionSegment, SolverError, DEFAULT_CFL,
};

/// Relative tolerance on the spacing of the time column.
const SPACING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("chromatogram file not found: {0}")]
    MissingChromatogram(PathBuf),
    #[error("{path}: header: expected `t,c1,...,cm`, found `{found}`")]
    Header { path: PathBuf, found: String },
    #[error("{path}: row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error(transparent)]
    Identify(#[from] IdentifyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> IoError {
    IoError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSection {
    pub length: f64,
    pub velocity: f64,
    pub porosity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfl_target: Option<f64>,
    /// Explicit space step; calibrated from the CFL target when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    pub start: f64,
    pub end: f64,
    pub concentration: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSection {
    pub duration: f64,
    pub segments: Vec<SegmentSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    #[serde(default = "one")]
    pub species_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSection {
    pub name: String,
    /// Search range `[lo, hi]`; required for identification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    /// Value used by `simulate`; falls back to the guess, then the range midpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default = "yes")]
    pub positive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<f64>,
    #[serde(default)]
    pub kprime: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection: Option<InjectionSection>,
    /// Relative paths are resolved against the configuration file's directory.
    pub chromatogram: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_target")]
    pub target_fitness: f64,
    #[serde(default = "default_restarts")]
    pub max_restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_override: Option<usize>,
    #[serde(default)]
    pub use_expert_guess: bool,
    /// Runs per benchmark.
    #[serde(default = "default_runs")]
    pub runs: usize,
}

fn default_target() -> f64 {
    DEFAULT_TARGET_FITNESS
}

fn default_restarts() -> usize {
    5
}

fn default_runs() -> usize {
    50
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            target_fitness: default_target(),
            max_restarts: default_restarts(),
            seed: 0,
            lambda_override: None,
            use_expert_guess: false,
            runs: default_runs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub column: ColumnSection,
    pub grid: GridSection,
    pub injection: InjectionSection,
    pub model: ModelSection,
    pub parameters: Vec<ParameterSection>,
    #[serde(default)]
    pub experiments: Vec<ExperimentSection>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
}

/// Hex SHA-256 of `bytes`.
pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Parses a configuration document. `path` only labels errors.
pub fn parse_config(text: &str, path: &Path) -> Result<ProblemConfig, IoError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: ProblemConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        IoError::Parse {
            path: path.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

/// A configuration file with its digest and directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub config: ProblemConfig,
    pub digest: String,
    pub dir: PathBuf,
}

pub fn read_config(path: &Path) -> Result<ConfigFile, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let config = parse_config(&text, path)?;
    Ok(ConfigFile {
        config,
        digest: digest_hex(&bytes),
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

fn check_finite(field: &str, v: f64) -> Result<(), IoError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, "must be finite"))
    }
}

impl InjectionSection {
    pub fn to_profile(&self, field: &str) -> Result<InjectionProfile<f64>, IoError> {
        check_finite(&format!("{field}.duration"), self.duration)?;
        for (i, s) in self.segments.iter().enumerate() {
            let f = format!("{field}.segments[{i}]");
            check_finite(&format!("{f}.start"), s.start)?;
            check_finite(&format!("{f}.end"), s.end)?;
            for &c in &s.concentration {
                check_finite(&format!("{f}.concentration"), c)?;
            }
        }
        let segments = self
            .segments
            .iter()
            .map(|s| InjectionSegment {
                start: s.start,
                end: s.end,
                concentration: s.concentration.clone(),
            })
            .collect();
        InjectionProfile::new(segments, self.duration).map_err(|e| invalid(field, e.to_string()))
    }
}

impl ProblemConfig {
    /// Checks every invariant that does not need the data files.
    pub fn validate(&self) -> Result<(), IoError> {
        let c = &self.column;
        check_finite("column.length", c.length)?;
        check_finite("column.velocity", c.velocity)?;
        check_finite("column.porosity", c.porosity)?;
        if !(c.length > 0.0) {
            return Err(invalid("column.length", "must be positive"));
        }
        if !(c.velocity > 0.0) {
            return Err(invalid("column.velocity", "must be positive"));
        }
        if !(c.porosity > 0.0 && c.porosity < 1.0) {
            return Err(invalid("column.porosity", "must lie in the open interval (0, 1)"));
        }
        check_finite("grid.dt", self.grid.dt)?;
        if !(self.grid.dt > 0.0) {
            return Err(invalid("grid.dt", "must be positive"));
        }
        if let Some(cfl) = self.grid.cfl_target {
            if !(cfl > 0.0 && cfl < 1.0) {
                return Err(invalid("grid.cfl_target", "must lie in the open interval (0, 1)"));
            }
        }
        if let Some(dz) = self.grid.dz {
            if !(dz.is_finite() && dz > 0.0) {
                return Err(invalid("grid.dz", "must be positive"));
            }
        }
        let template = self.template()?;
        let m = template.species_count;
        let check_injection = |section: &InjectionSection, field: &str| -> Result<(), IoError> {
            let profile = section.to_profile(field)?;
            if profile.species_count() != Some(m) {
                return Err(invalid(field, format!("segments must carry {m} concentrations")));
            }
            Ok(())
        };
        check_injection(&self.injection, "injection")?;
        for (i, e) in self.experiments.iter().enumerate() {
            if let Some(inj) = &e.injection {
                check_injection(inj, &format!("experiments[{i}].injection"))?;
            }
        }
        let n = template.param_count();
        if self.parameters.len() != n {
            return Err(invalid(
                "parameters",
                format!(
                    "{} model with {m} species needs {n} parameters, got {}",
                    template.family.as_str(),
                    self.parameters.len()
                ),
            ));
        }
        for (i, p) in self.parameters.iter().enumerate() {
            let field = format!("parameters[{i}]");
            if let Some([lo, hi]) = p.range {
                check_finite(&format!("{field}.range"), lo)?;
                check_finite(&format!("{field}.range"), hi)?;
                if !(lo < hi) {
                    return Err(invalid(format!("{field}.range"), "must satisfy lo < hi"));
                }
                if let Some(g) = p.guess {
                    if !(g >= lo && g <= hi) {
                        return Err(invalid(format!("{field}.guess"), "must lie inside the range"));
                    }
                }
            }
            if let Some(v) = p.value {
                check_finite(&format!("{field}.value"), v)?;
            }
            if let Some(g) = p.guess {
                check_finite(&format!("{field}.guess"), g)?;
            }
            if p.kprime && template.saturation_partner(i).is_none() {
                return Err(invalid(
                    format!("{field}.kprime"),
                    "only affinities with a saturation partner can use the K' transform",
                ));
            }
        }
        let o = &self.optimizer;
        if !(o.target_fitness.is_finite() && o.target_fitness >= 0.0) {
            return Err(invalid("optimizer.target_fitness", "must be finite and non-negative"));
        }
        if o.lambda_override.is_some_and(|l| l < 2) {
            return Err(invalid("optimizer.lambda_override", "must be at least 2"));
        }
        if o.runs == 0 {
            return Err(invalid("optimizer.runs", "must be at least 1"));
        }
        Ok(())
    }

    pub fn template(&self) -> Result<ModelTemplate<f64>, IoError> {
        let m = &self.model;
        let template = match m.family {
            Family::LatticeSingle => {
                let degree = m
                    .degree
                    .ok_or_else(|| invalid("model.degree", "required for lattice_single"))?;
                ModelTemplate::lattice(degree, m.temperature.unwrap_or(DEFAULT_TEMPERATURE))
            }
            Family::Langmuir => ModelTemplate::langmuir(m.species_count),
            Family::BiLangmuir => ModelTemplate::bi_langmuir(m.species_count),
            Family::ModifiedLangmuir => ModelTemplate::modified_langmuir(m.species_count),
        };
        template.validate().map_err(|e| invalid("model", e.to_string()))?;
        Ok(template)
    }

    pub fn column(&self) -> Result<ColumnConfig<f64>, IoError> {
        let c = &self.column;
        ColumnConfig::new(c.length, c.velocity, c.porosity).map_err(|e| invalid("column", e.to_string()))
    }

    /// Search specs; every parameter needs a range.
    pub fn specs(&self) -> Result<Vec<ParamSpec>, IoError> {
        self.parameters
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let [lo, hi] = p
                    .range
                    .ok_or_else(|| invalid(format!("parameters[{i}].range"), "required for identification"))?;
                Ok(ParamSpec {
                    name: p.name.clone(),
                    lo,
                    hi,
                    positive: p.positive,
                    guess: p.guess,
                    kprime: p.kprime,
                })
            })
            .collect()
    }

    /// Physical values for simulation: `value`, else `guess`, else range midpoint.
    pub fn simulation_values(&self) -> Result<Vec<f64>, IoError> {
        self.parameters
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.value
                    .or(p.guess)
                    .or(p.range.map(|[lo, hi]| 0.5 * (lo + hi)))
                    .ok_or_else(|| {
                        invalid(format!("parameters[{i}]"), "needs a value, guess or range")
                    })
            })
            .collect()
    }

    /// Physical values for grid calibration: `guess`, else range midpoint, else `value`.
    fn calibration_values(&self) -> Result<Vec<f64>, IoError> {
        self.parameters
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.guess
                    .or(p.range.map(|[lo, hi]| 0.5 * (lo + hi)))
                    .or(p.value)
                    .ok_or_else(|| {
                        invalid(format!("parameters[{i}]"), "needs a guess, range or value")
                    })
            })
            .collect()
    }

    fn model_for(&self, values: &[f64]) -> Result<IsothermModel<f64>, IoError> {
        let template = self.template()?;
        let specs: Vec<ParamSpec> = self
            .parameters
            .iter()
            .map(|p| ParamSpec {
                kprime: p.kprime,
                ..ParamSpec::new(p.name.clone(), 0.0, 1.0)
            })
            .collect();
        Ok(model_from_physical(&template, &specs, values)?)
    }

    pub fn simulation_model(&self) -> Result<IsothermModel<f64>, IoError> {
        self.model_for(&self.simulation_values()?)
    }

    /// Injection profile of every experiment (the top-level one when there are
    /// no experiments or no override).
    pub fn injections(&self) -> Result<Vec<InjectionProfile<f64>>, IoError> {
        if self.experiments.is_empty() {
            return Ok(vec![self.injection.to_profile("injection")?]);
        }
        self.experiments
            .iter()
            .enumerate()
            .map(|(i, e)| match &e.injection {
                Some(inj) => inj.to_profile(&format!("experiments[{i}].injection")),
                None => self.injection.to_profile("injection"),
            })
            .collect()
    }

    /// One grid per injection, all sharing the same `dz`. Without an explicit `dz`
    /// the grid is calibrated on the guess (or the range midpoints).
    pub fn grids(&self, injections: &[InjectionProfile<f64>]) -> Result<Vec<GridConfig<f64>>, IoError> {
        let column = self.column()?;
        let cfl = self.grid.cfl_target.unwrap_or(DEFAULT_CFL);
        let dz = match self.grid.dz {
            Some(dz) => dz,
            None => {
                let model = self.model_for(&self.calibration_values()?)?;
                let m = model.species_count();
                let mut c_max = vec![0.0; m];
                for inj in injections {
                    for (slot, c) in c_max.iter_mut().zip(inj.max_concentration()) {
                        *slot = f64::max(*slot, 2.0 * c);
                    }
                }
                let lambda = max_spectral_radius(&model, &column, &c_max)?;
                if !(lambda.is_finite() && lambda > 0.0) {
                    return Err(SolverError::DegenerateModel.into());
                }
                let dz_max = cfl * self.grid.dt / lambda;
                let n_space = (column.length / dz_max * (1.0 - 64.0 * f64::EPSILON)).ceil().max(1.0);
                column.length / n_space
            }
        };
        injections
            .iter()
            .map(|inj| {
                let mut grid = GridConfig::from_steps(column.length, inj.duration, self.grid.dt, dz)
                    .map_err(|e| invalid("grid", e.to_string()))?;
                grid.cfl_target = cfl;
                Ok(grid)
            })
            .collect()
    }

    /// Column, injection and grid of every experiment, without data. `simulate`
    /// and `identify` share this grid so that simulated data can be fitted back
    /// exactly.
    pub fn setups(&self) -> Result<Vec<ExperimentSetup>, IoError> {
        let column = self.column()?;
        let injections = self.injections()?;
        let grids = self.grids(&injections)?;
        Ok(injections
            .into_iter()
            .zip(grids)
            .map(|(injection, grid)| ExperimentSetup {
                column: column.clone(),
                injection,
                grid,
            })
            .collect())
    }

    pub fn settings(&self) -> IdentifySettings {
        let o = &self.optimizer;
        IdentifySettings {
            target_fitness: o.target_fitness,
            max_restarts: o.max_restarts,
            lambda_override: o.lambda_override,
            use_expert_guess: o.use_expert_guess,
            ..IdentifySettings::default()
        }
    }
}

/// A problem ready for identification, with the configuration it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedProblem {
    pub problem: IdentificationProblem,
    pub file: ConfigFile,
}

/// Reads a configuration and every chromatogram it references.
pub fn load_problem(path: &Path) -> Result<LoadedProblem, IoError> {
    let file = read_config(path)?;
    let config = &file.config;
    if config.experiments.is_empty() {
        return Err(invalid("experiments", "at least one experiment is required"));
    }
    let specs = config.specs()?;
    let setups = config.setups()?;
    let mut experiments = Vec::with_capacity(setups.len());
    for (i, (setup, section)) in setups.into_iter().zip(&config.experiments).enumerate() {
        let path = file.dir.join(&section.chromatogram);
        if !path.is_file() {
            return Err(IoError::MissingChromatogram(path));
        }
        let observed = read_chromatogram(&path)?;
        let field = format!("experiments[{i}].chromatogram");
        if observed.species() != config.model.species_count {
            return Err(invalid(
                field,
                format!("has {} species, model has {}", observed.species(), config.model.species_count),
            ));
        }
        if observed.n_time() != setup.grid.n_time
            || (observed.dt - setup.grid.dt).abs() > SPACING_TOLERANCE * setup.grid.dt
        {
            return Err(invalid(
                field,
                format!(
                    "has {} steps of {}, grid expects {} steps of {}",
                    observed.n_time(),
                    observed.dt,
                    setup.grid.n_time,
                    setup.grid.dt
                ),
            ));
        }
        experiments.push(Experiment {
            column: setup.column,
            injection: setup.injection,
            grid: setup.grid,
            observed,
        });
    }
    let problem = IdentificationProblem::new(config.template()?, specs, experiments)?;
    Ok(LoadedProblem { problem, file })
}

/// Reads a `t,c1,...,cm` table. Row numbers in errors count data rows from 1.
pub fn read_chromatogram(path: &Path) -> Result<Chromatogram<f64>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::Read {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let header_err = |found: String| IoError::Header {
        path: path.to_path_buf(),
        found,
    };
    let headers = reader
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .clone();
    let found = headers.iter().collect::<Vec<_>>().join(",");
    let m = headers.len().saturating_sub(1);
    let expected = std::iter::once("t".to_string()).chain((1..=m).map(|i| format!("c{i}")));
    if m == 0 || !headers.iter().eq(expected) {
        return Err(header_err(found));
    }

    let row_err = |row: usize, message: String| IoError::Row {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| row_err(row, e.to_string()))?;
        if record.len() != m + 1 {
            return Err(row_err(row, format!("expected {} cells, found {}", m + 1, record.len())));
        }
        let mut cells = record.iter().map(|cell| {
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| row_err(row, format!("`{cell}` is not a finite number")))
        });
        times.push(cells.next().expect("non-empty record")?);
        for cell in cells {
            values.push(cell?);
        }
    }
    if times.len() < 2 {
        return Err(row_err(times.len(), "at least two rows are required".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(row_err(2, "time column must be strictly increasing".into()));
    }
    if times[0].abs() > SPACING_TOLERANCE * dt {
        return Err(row_err(1, "time column must start at 0".into()));
    }
    for (n, pair) in times.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if !(step > 0.0) {
            return Err(row_err(n + 2, "time column must be strictly increasing".into()));
        }
        if ((step - dt) / dt).abs() > SPACING_TOLERANCE {
            return Err(row_err(n + 2, format!("non-uniform spacing: step {step} vs {dt}")));
        }
    }
    let span = times[times.len() - 1] - times[0];
    let dt = span / (times.len() - 1) as f64;
    Chromatogram::new(dt, m, values).map_err(|e| row_err(0, e.to_string()))
}

fn create(path: &Path) -> Result<fs::File, IoError> {
    fs::File::create(path).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `t,c1,...,cm` with 17 significant digits, so reading back is exact.
pub fn write_chromatogram(path: &Path, chrom: &Chromatogram<f64>) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| IoError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let m = chrom.species();
    let header = std::iter::once("t".to_string()).chain((1..=m).map(|i| format!("c{i}")));
    writer.write_record(header).map_err(csv_err)?;
    for n in 0..chrom.rows() {
        let row = std::iter::once(chrom.time(n))
            .chain(chrom.row(n).iter().copied())
            .map(|v| format!("{v:.16e}"));
        writer.write_record(row).map_err(csv_err)?;
    }
    writer.flush().map_err(write_err(path))
}

/// Writes the best-so-far trace as `evaluation,best_fitness`.
pub fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| IoError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    writer
        .write_record(["evaluation", "best_fitness"])
        .map_err(csv_err)?;
    for p in trace {
        writer
            .write_record([p.evaluation.to_string(), format!("{:.16e}", p.best_fitness)])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(write_err(path))
}

/// On-disk form of an identification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub parameters: BTreeMap<String, f64>,
    /// Parameter names in configuration order.
    pub parameter_order: Vec<String>,
    pub best_fitness: f64,
    pub evaluations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub evaluations_to_target: Option<usize>,
    pub termination: String,
    pub runs: Vec<RunRecord>,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub lambda: usize,
    pub generations: usize,
    pub evaluations: usize,
    pub best_fitness: f64,
    pub termination: String,
}

impl From<&RunSummary> for RunRecord {
    fn from(r: &RunSummary) -> Self {
        Self {
            lambda: r.lambda,
            generations: r.generations,
            evaluations: r.evaluations,
            best_fitness: r.best_fitness,
            termination: r.termination.as_str().to_string(),
        }
    }
}

impl ReportFile {
    pub fn new(report: &IdentifyReport, config_digest: &str) -> Self {
        Self {
            parameters: report.parameters.iter().cloned().collect(),
            parameter_order: report.parameters.iter().map(|(n, _)| n.clone()).collect(),
            best_fitness: report.best_fitness,
            evaluations: report.evaluations,
            restarts: report.restarts,
            converged: report.converged,
            evaluations_to_target: report.evaluations_to_target,
            termination: if report.converged {
                "target_fitness".into()
            } else {
                "restarts_exhausted".into()
            },
            runs: report.runs.iter().map(RunRecord::from).collect(),
            seed: report.seed,
            config_digest: config_digest.to_string(),
        }
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(write_err(path))
}

pub fn write_report(path: &Path, report: &IdentifyReport, config_digest: &str) -> Result<(), IoError> {
    write_json(path, &ReportFile::new(report, config_digest))
}

pub fn read_report(path: &Path) -> Result<ReportFile, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        field: String::new(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct BenchmarkFile<'a> {
    use_expert_guess: bool,
    config_digest: &'a str,
    #[serde(flatten)]
    report: &'a BenchmarkReport,
}

pub fn write_benchmark(
    path: &Path,
    report: &BenchmarkReport,
    use_expert_guess: bool,
    config_digest: &str,
) -> Result<(), IoError> {
    write_json(
        path,
        &BenchmarkFile {
            use_expert_guess,
            config_digest,
            report,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "column": {"length": 1.0, "velocity": 1.0, "porosity": 0.5},
        "grid": {"dt": 0.01, "cfl_target": 0.8},
        "injection": {"duration": 10.0, "segments": [{"start": 0.0, "end": 1.0, "concentration": [10.0]}]},
        "model": {"family": "langmuir"},
        "parameters": [
            {"name": "K", "range": [0.01, 0.05], "guess": 0.0388},
            {"name": "N*", "range": [50, 150], "guess": 107}
        ]
    }"#;

    #[test]
    fn minimal_config_parses() {
        let c = parse_config(MINIMAL, Path::new("c.json")).unwrap();
        assert_eq!(c.template().unwrap().param_count(), 2);
        assert_eq!(c.specs().unwrap().len(), 2);
        assert_eq!(c.optimizer.max_restarts, 5);
    }

    #[test]
    fn porosity_out_of_range_names_field() {
        let text = MINIMAL.replace("\"porosity\": 0.5", "\"porosity\": 1.2");
        let err = parse_config(&text, Path::new("c.json")).unwrap_err();
        assert!(err.to_string().contains("column.porosity"), "{err}");
    }

    #[test]
    fn parse_errors_carry_locus() {
        let text = MINIMAL.replace("\"velocity\": 1.0", "\"velocity\": \"fast\"");
        match parse_config(&text, Path::new("c.json")).unwrap_err() {
            IoError::Parse { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "column.velocity");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn calibrated_grid_matches_cfl_arithmetic() {
        let c = parse_config(MINIMAL, Path::new("c.json")).unwrap();
        let setups = c.setups().unwrap();
        let g = &setups[0].grid;
        // lambda_max = 1 + 107 * 0.0388 = 5.1516 at c = 0.
        let lambda = 1.0 + 107.0 * 0.0388;
        assert!(g.ratio() * lambda <= 0.8 + 1e-12);
        assert_eq!(g.n_space, (1.0 / (0.8 * 0.01 / lambda)).ceil() as usize);
        assert_eq!(g.n_time, 1000);
    }

    #[test]
    fn digest_is_sha256_hex() {
        assert_eq!(
            digest_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
