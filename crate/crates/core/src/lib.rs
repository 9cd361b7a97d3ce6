//! Sparse and low-rank abundance estimation for hyperspectral unmixing.
//!
//! The crate is organised bottom-up:
//!
//! * [`prox`]: proximal maps, weighted norms and the composite objective.
//! * [`weights`]: uniform, least-squares and reweighted weight schedules.
//! * [`solver`]: the incremental proximal and ADMM solvers.
//! * [`driver`]: sliding-window unmixing of a full image cube.
//! * [`synth`]: synthetic dictionaries, abundances, noise and test images.
//! * [`eval`]: RMSE / SRE / NMSE metrics and parameter sweeps.
//! * [`experiments`]: the named experiment presets.
//! * [`io`]: cube and matrix file formats, run manifests.

pub mod driver;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod prox;
pub mod seed;
pub mod solver;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use solver::{SolveReport, SolverConfig, SolverKind, Variant};
pub use weights::{WeightMode, WeightState};
