//! Total-variation regularization of measure-valued images.
//!
//! An image assigns a probability measure on a discretized compact metric
//! space (sphere, circle or finite set) to every voxel of a grid. The crate
//! provides the discretizations, exact Wasserstein-1 transport, the W1-TV and
//! L2-TV variational models with a primal-dual solver, synthetic phantoms,
//! evaluation metrics and a file format.
//!
//! All numerical types are generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

pub mod error;
pub mod image_grid;
pub mod io;
pub mod linalg;
pub mod metric_space;
pub mod metrics;
pub mod models;
pub mod network_simplex;
pub mod proximal;
pub mod real;
pub mod solver;
pub mod synth;
pub mod transport;

pub use error::{Error, Result};
pub use real::Real;

pub type Space = metric_space::MetricSpace<f64>;
pub type Image = models::MeasureImage<f64>;
pub type Problem = models::SaddleProblem<f64>;
pub type Report = solver::SolverReport<f64>;
pub type ImageGrid = image_grid::Grid<f64>;

pub type Space32 = metric_space::MetricSpace<f32>;
pub type Image32 = models::MeasureImage<f32>;
pub type Problem32 = models::SaddleProblem<f32>;
pub type Report32 = solver::SolverReport<f32>;
