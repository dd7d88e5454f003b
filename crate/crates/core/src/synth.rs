//! Seeded synthetic data: noisy points along G¹ line/arc paths, and vehicle
//! trajectories whose lane points follow such a path.

use nalgebra::{Cholesky, SMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geometry::{Cov2, Point2};
use crate::lane_ingest::{exp_so3, Matrix9, Rotation3, VehicleState};
use crate::models::DataPoint;

/// One piece of a path, described by signed curvature and length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    /// Signed curvature `1/r` (positive turns left); zero for a line.
    pub curvature: f64,
    pub length: f64,
}

/// A G¹ path built from pieces, starting at `start` with `heading`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub start: Point2,
    pub heading: f64,
    pub pieces: Vec<Piece>,
}

/// Ground-truth description of a piece in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TruthPiece {
    Line { start: [f64; 2], end: [f64; 2] },
    Arc { center: [f64; 2], radius: f64, start_angle: f64, sweep: f64 },
}

impl Path {
    pub fn length(&self) -> f64 {
        self.pieces.iter().map(|p| p.length).sum()
    }

    /// Position and heading at arc length `s` (clamped to the path).
    pub fn eval(&self, s: f64) -> (Point2, f64) {
        let mut pos = self.start;
        let mut heading = self.heading;
        let mut left = s.clamp(0.0, self.length());
        for (k, piece) in self.pieces.iter().enumerate() {
            let last = k + 1 == self.pieces.len();
            let ds = if last { left } else { left.min(piece.length) };
            let (p, h) = advance(pos, heading, piece.curvature, ds);
            if ds < piece.length || last {
                return (p, h);
            }
            pos = p;
            heading = h;
            left -= ds;
        }
        (pos, heading)
    }

    /// Points at `n` evenly spaced arc lengths from start to end.
    pub fn sample(&self, n: usize) -> Vec<(Point2, f64)> {
        let total = self.length();
        (0..n).map(|k| self.eval(if n == 1 { 0.0 } else { total * k as f64 / (n - 1) as f64 })).collect()
    }

    pub fn truth(&self) -> Vec<TruthPiece> {
        let mut pos = self.start;
        let mut heading = self.heading;
        self.pieces
            .iter()
            .map(|p| {
                let (end, h) = advance(pos, heading, p.curvature, p.length);
                let t = if p.curvature == 0.0 {
                    TruthPiece::Line { start: [pos.x, pos.y], end: [end.x, end.y] }
                } else {
                    let r = 1.0 / p.curvature;
                    let center = pos + Point2::from_angle(heading).perp() * r;
                    TruthPiece::Arc {
                        center: [center.x, center.y],
                        radius: r.abs(),
                        start_angle: (pos - center).angle(),
                        sweep: p.curvature * p.length,
                    }
                };
                pos = end;
                heading = h;
                t
            })
            .collect()
    }
}

fn advance(pos: Point2, heading: f64, curvature: f64, ds: f64) -> (Point2, f64) {
    if curvature == 0.0 {
        return (pos + Point2::from_angle(heading) * ds, heading);
    }
    let r = 1.0 / curvature;
    let center = pos + Point2::from_angle(heading).perp() * r;
    let dtheta = curvature * ds;
    let end = center + (pos - center).rotated(dtheta);
    (end, heading + dtheta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Circle,
    TwoArc,
    Line,
    SCurve,
    /// A road-like mix of straights and curves.
    Lane,
}

impl std::str::FromStr for Kind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "circle" => Ok(Kind::Circle),
            "two-arc" => Ok(Kind::TwoArc),
            "line" => Ok(Kind::Line),
            "s-curve" => Ok(Kind::SCurve),
            "lane" => Ok(Kind::Lane),
            other => Err(format!("unknown kind {other:?} (expected circle, two-arc, line, s-curve or lane)")),
        }
    }
}

/// Generator settings. Unset fields take kind-specific defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateParams {
    pub points: Option<usize>,
    /// Radius of the (first) arc, meters.
    pub radius: Option<f64>,
    /// Sweep of the (first) arc, radians.
    pub sweep: Option<f64>,
    /// Second-arc radius for two-arc / s-curve, meters.
    pub radius2: Option<f64>,
    pub sweep2: Option<f64>,
    /// Line length, meters.
    pub length: Option<f64>,
    /// Per-axis variance range `[min, max]` in m², drawn uniformly.
    pub variance: Option<[f64; 2]>,
    /// Multiplier on the drawn noise; 0 puts points on the geometry.
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub kind: Kind,
    pub seed: u64,
    pub pieces: Vec<TruthPiece>,
    pub total_length: f64,
    /// Noise-free position of every generated point.
    pub true_points: Vec<[f64; 2]>,
}

/// The road used for the lane kind: about 1.1 km, curvature kept below
/// 1/150 m⁻¹, similar in character to an urban ego-lane trip.
pub fn lane_path() -> Path {
    let deg = PI / 180.0;
    let arc = |r: f64, sweep_deg: f64| Piece { curvature: 1.0 / r, length: (r * sweep_deg * deg).abs() };
    let line = |l: f64| Piece { curvature: 0.0, length: l };
    Path {
        start: Point2::ORIGIN,
        heading: 0.0,
        pieces: vec![
            line(120.0),
            arc(250.0, 35.0),
            line(90.0),
            arc(-180.0, 50.0),
            arc(-400.0, 15.0),
            line(140.0),
            arc(320.0, 40.0),
            line(60.0),
            arc(-220.0, 25.0),
            line(100.0),
        ],
    }
}

fn path_for(kind: Kind, p: &GenerateParams) -> Path {
    let r1 = p.radius.unwrap_or(50.0);
    let s1 = p.sweep.unwrap_or(match kind {
        Kind::Circle => 1.5 * PI,
        _ => 1.2,
    });
    let r2 = p.radius2.unwrap_or(20.0);
    let s2 = p.sweep2.unwrap_or(1.5);
    let arc = |r: f64, s: f64| Piece { curvature: 1.0 / r, length: r.abs() * s.abs() };
    let pieces = match kind {
        Kind::Circle => vec![arc(r1, s1)],
        // the second arc turns the other way so the junction is a true
        // curvature break
        Kind::TwoArc => vec![arc(r1, s1), arc(-r2, s2)],
        Kind::Line => vec![Piece { curvature: 0.0, length: p.length.unwrap_or(100.0) }],
        Kind::SCurve => vec![arc(r1, s1), arc(-p.radius2.unwrap_or(r1), p.sweep2.unwrap_or(s1))],
        Kind::Lane => return lane_path(),
    };
    Path { start: Point2::ORIGIN, heading: 0.0, pieces }
}

fn default_points(kind: Kind) -> usize {
    match kind {
        Kind::Lane => 768,
        _ => 200,
    }
}

fn default_variance(kind: Kind) -> [f64; 2] {
    match kind {
        // lane points carry GNSS-grade uncertainty
        Kind::Lane => [0.05 * 0.05, 0.3 * 0.3],
        _ => [1.0, 900.0],
    }
}

/// Draws a diagonal covariance with variances uniform in `range`, and a
/// noisy observation of `truth` from it.
pub fn noisy_point(rng: &mut ChaCha8Rng, truth: Point2, range: [f64; 2], noise_scale: f64) -> (Point2, Cov2) {
    let sxx = if range[0] < range[1] { rng.random_range(range[0]..=range[1]) } else { range[0] };
    let syy = if range[0] < range[1] { rng.random_range(range[0]..=range[1]) } else { range[0] };
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let noise = Point2::new(z1 * sxx.sqrt(), z2 * syy.sqrt()) * noise_scale;
    (truth + noise, Cov2::diag(sxx, syy))
}

/// Generates `kind` data with `seed`. Points are evenly spaced in arc length.
pub fn generate(kind: Kind, params: &GenerateParams, seed: u64) -> Result<(Vec<DataPoint>, Truth), String> {
    let n = params.points.unwrap_or(default_points(kind));
    if n < 2 {
        return Err(format!("need at least 2 points, got {n}"));
    }
    let range = params.variance.unwrap_or(default_variance(kind));
    if !(range[0] > 0.0 && range[0] <= range[1] && range[1].is_finite()) {
        return Err(format!("variance range must satisfy 0 < min <= max, got {range:?}"));
    }
    let scale = params.noise_scale.unwrap_or(1.0);
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(format!("noise_scale must be non-negative, got {scale}"));
    }
    for (name, v) in [("radius", params.radius), ("radius2", params.radius2), ("length", params.length)] {
        if let Some(v) = v {
            if !(v.abs() > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be finite and nonzero, got {v}"));
            }
        }
    }
    let path = path_for(kind, params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = path.sample(n);
    let points = samples
        .iter()
        .enumerate()
        .map(|(k, &(truth, _))| {
            let (pos, cov) = noisy_point(&mut rng, truth, range, scale);
            DataPoint::new(k + 1, pos, cov)
        })
        .collect();
    let truth = Truth {
        kind,
        seed,
        pieces: path.truth(),
        total_length: path.length(),
        true_points: samples.iter().map(|(p, _)| [p.x, p.y]).collect(),
    };
    Ok((points, truth))
}

/// Standard deviations of the trajectory generator's joint covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryNoise {
    pub position: [f64; 3],
    pub attitude: [f64; 3],
    pub lane: [f64; 3],
}

impl Default for TrajectoryNoise {
    fn default() -> Self {
        Self { position: [0.05, 0.05, 0.1], attitude: [0.002, 0.002, 0.005], lane: [0.05, 0.05, 0.02] }
    }
}

impl TrajectoryNoise {
    pub fn covariance(&self) -> Matrix9 {
        let mut d = [0.0; 9];
        for k in 0..3 {
            d[k] = self.position[k].powi(2);
            d[3 + k] = self.attitude[k].powi(2);
            d[6 + k] = self.lane[k].powi(2);
        }
        Matrix9::from_diagonal(&SMatrix::<f64, 9, 1>::from_column_slice(&d))
    }
}

/// Vehicle states driving along `path` with lane markings `half_width`
/// either side. Each state is perturbed by a draw from its joint covariance
/// (position in the body frame, attitude on the right), so the recorded
/// states are noisy measurements of the true pose.
pub fn trajectory(path: &Path, n: usize, half_width: f64, noise: &TrajectoryNoise, seed: u64) -> Vec<VehicleState> {
    let cov = noise.covariance();
    let chol = Cholesky::new(cov).expect("diagonal covariance with positive entries").l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    path.sample(n)
        .into_iter()
        .map(|(pos, heading)| {
            let z = SMatrix::<f64, 9, 1>::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let d = chol * z;
            let rot = Rotation3::about_z(heading);
            let dp = Vector3::new(d[0], d[1], d[2]);
            let dphi = Vector3::new(d[3], d[4], d[5]);
            let dl = Vector3::new(d[6], d[7], d[8]);
            // the same lateral-measurement error enters whichever side is used
            VehicleState {
                p: Vector3::new(pos.x, pos.y, 0.0) + rot * dp,
                rot: rot.compose(&exp_so3(&dphi)),
                lane_left: Vector3::new(0.0, half_width, 0.0) + dl,
                lane_right: Vector3::new(0.0, -half_width, 0.0) + dl,
                joint_cov: cov,
            }
        })
        .collect()
}
