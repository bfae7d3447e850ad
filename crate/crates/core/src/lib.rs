//! Isotherm identification in liquid chromatography.
//!
//! A column is modelled by the scalar-velocity transport equation
//! `dc/dz + d/dt F(c) = 0` with `F(c) = (c + rho H(c)) / u`, where `H` is an
//! adsorption isotherm. [`transport`] solves it with an upwind march in `z`,
//! [`isotherm`] provides the candidate `H` families, and [`identification`]
//! recovers isotherm parameters from measured chromatograms with the restart
//! CMA-ES in [`cmaes`]. [`io`] reads configurations and data files and writes
//! reports.
//!
//! The physics is generic over [`Scalar`] (`f32` or `f64`); the optimizer and the
//! identification layer work in `f64`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cmaes;
pub mod identification;
pub mod io;
pub mod isotherm;
pub mod scalar;
pub mod transport;

pub use identification::{
    benchmark, fitness, identify, BenchmarkReport, IdentificationProblem, IdentifyError,
    IdentifyReport, IdentifySettings, ParamSpec,
};
pub use isotherm::{Family, IsothermError};
pub use scalar::Scalar;
pub use transport::{simulate, InitialProfile, SolverError};

pub type IsothermModelF64 = isotherm::IsothermModel<f64>;
pub type IsothermModelF32 = isotherm::IsothermModel<f32>;
pub type ModelTemplateF64 = isotherm::ModelTemplate<f64>;
pub type ModelTemplateF32 = isotherm::ModelTemplate<f32>;
pub type ColumnF64 = transport::ColumnConfig<f64>;
pub type ColumnF32 = transport::ColumnConfig<f32>;
pub type GridF64 = transport::GridConfig<f64>;
pub type GridF32 = transport::GridConfig<f32>;
pub type InjectionF64 = transport::InjectionProfile<f64>;
pub type InjectionF32 = transport::InjectionProfile<f32>;
pub type ChromatogramF64 = transport::Chromatogram<f64>;
pub type ChromatogramF32 = transport::Chromatogram<f32>;
