//! Fixed inputs shared by the benchmarks.

use arcfit_core::lane_ingest::{ingest, Side};
use arcfit_core::synth::{generate, lane_path, trajectory, GenerateParams, Kind, TrajectoryNoise};
use arcfit_core::DataPoint;

pub fn circle(points: usize) -> Vec<DataPoint> {
    let params = GenerateParams { points: Some(points), radius: Some(120.0), ..Default::default() };
    generate(Kind::Circle, &params, 1).expect("valid parameters").0
}

pub fn two_arc() -> Vec<DataPoint> {
    let params = GenerateParams { points: Some(150), variance: Some([0.01, 0.04]), ..Default::default() };
    generate(Kind::TwoArc, &params, 2).expect("valid parameters").0
}

/// Left lane points of the synthetic road, through the delta-method pipeline.
pub fn lane(points: usize) -> Vec<DataPoint> {
    let states = trajectory(&lane_path(), points, 1.8, &TrajectoryNoise::default(), 3);
    ingest(&states, Side::Left).expect("finite covariances")
}
