pub mod bias;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod integrators;
pub mod kernel;
pub mod model;
pub mod normalization;
pub mod oracle;
pub mod spde;

pub use error::{AbpError, Result};
pub use bias::{BiasGrid, CvMeasure};
pub use engine::{Observable, RunConfig, RunReport, RunSettings};
pub use kernel::KernelSpec;
pub use model::{DynamicsSpec, Family, PotentialSpec, ReactionCoordinate, State};
pub use normalization::{GridFunction, NormalizationSpec};
