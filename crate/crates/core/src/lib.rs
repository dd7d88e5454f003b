//! Covariance-weighted approximation of ordered 2D points by G¹-continuous
//! arc splines.
//!
//! [`fitter::fit_multi`] is the main entry point. [`lane_ingest`] turns
//! vehicle poses and lane measurements into input points; [`io`], [`synth`]
//! and [`svg`] cover file formats, synthetic data and plotting.

pub mod error;
pub mod fitter;
pub mod geometry;
pub mod io;
pub mod lane_ingest;
pub mod models;
pub mod solver;
pub mod svg;
pub mod synth;

pub use error::{FitError, FormatError, GeometryError, ModelError, SolverError};
pub use fitter::{fit_multi, fit_single_arc, ArcSpline, FitConfig, MultiFit, ValidationReport, Verdict};
pub use geometry::{ArcGeometry, ArcParams, ArcSpan, Cov2, Point2};
pub use lane_ingest::{Rotation3, Side, VehicleState};
pub use models::{AnchorConfig, Association, DataPoint, JacobianMode, NodeVector};
pub use solver::{SolveReport, SolverSettings, Termination};
