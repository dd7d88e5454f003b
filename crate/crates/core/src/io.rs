//! Text formats: point CSV, spline JSON, trajectory CSV.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::FormatError;
use crate::fitter::{ArcSpline, FitConfig, Verdict};
use crate::geometry::{validate_cov, wrap_pi, ArcSpan, Point2};
use crate::lane_ingest::{repair_joint_cov, Matrix9, Rotation3, VehicleState, ROTATION_TOL};
use crate::models::{DataPoint, NodeVector};

pub const POINTS_HEADER: &str = "index,x,y,sxx,sxy,syy";

/// Tolerance for derived geometry stored in a spline file.
pub const SPLINE_TOL: f64 = 1e-9;

fn parse_f64(field: &str, line: usize, name: &str) -> Result<f64, FormatError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| FormatError::Parse { line, message: format!("{name}: cannot parse {:?} as a number", field.trim()) })?;
    if !v.is_finite() {
        return Err(FormatError::Parse { line, message: format!("{name}: non-finite value") });
    }
    Ok(v)
}

/// Parses a point file. Rows must have strictly increasing indices;
/// covariances are repaired with [`validate_cov`].
pub fn parse_points(text: &str) -> Result<Vec<DataPoint>, FormatError> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header)) = lines.next() else {
        return Err(FormatError::Invalid("empty point file".into()));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != POINTS_HEADER.split(',').collect::<Vec<_>>() {
        return Err(FormatError::Parse { line: hline, message: format!("expected header {POINTS_HEADER:?}") });
    }
    let mut out: Vec<DataPoint> = Vec::new();
    for (line, row) in lines {
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != 6 {
            return Err(FormatError::Parse { line, message: format!("expected 6 fields, got {}", f.len()) });
        }
        let index: usize =
            f[0].trim().parse().map_err(|_| FormatError::Parse { line, message: format!("index: cannot parse {:?}", f[0].trim()) })?;
        if let Some(prev) = out.last() {
            if index <= prev.index {
                return Err(FormatError::Parse { line, message: format!("index {index} does not increase") });
            }
        }
        let x = parse_f64(f[1], line, "x")?;
        let y = parse_f64(f[2], line, "y")?;
        let sxx = parse_f64(f[3], line, "sxx")?;
        let sxy = parse_f64(f[4], line, "sxy")?;
        let syy = parse_f64(f[5], line, "syy")?;
        let (cov, _) =
            validate_cov([[sxx, sxy], [sxy, syy]]).map_err(|e| FormatError::Parse { line, message: format!("covariance: {e}") })?;
        out.push(DataPoint::new(index, Point2::new(x, y), cov));
    }
    if out.is_empty() {
        return Err(FormatError::Invalid("point file has no data rows".into()));
    }
    Ok(out)
}

/// Canonical point file: header plus one row per point, nine decimals.
pub fn format_points(points: &[DataPoint]) -> String {
    let mut s = String::with_capacity(64 * (points.len() + 1));
    s.push_str(POINTS_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{},{:.9},{:.9},{:.9},{:.9},{:.9}", p.index, p.pos.x, p.pos.y, p.cov.xx, p.cov.xy, p.cov.yy);
    }
    s
}

/// Hex SHA-256 of the configuration's canonical JSON.
pub fn config_hash(cfg: &FitConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineMetadata {
    pub config_hash: String,
    pub verdict: Verdict,
    pub segments: usize,
    pub control_points: usize,
    pub total_length: f64,
    pub points: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    /// Center, radius and angles; absent for a degenerate (straight) segment.
    pub center: Option<[f64; 2]>,
    pub radius: Option<f64>,
    pub start_angle: Option<f64>,
    pub end_angle: Option<f64>,
    pub sweep: Option<f64>,
    pub length: f64,
    pub invalid_count: usize,
    /// Ordinals of the first and last associated points.
    pub first_point: usize,
    pub last_point: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFile {
    pub metadata: SplineMetadata,
    pub arc_nodes: Vec<[f64; 2]>,
    pub middle_nodes: Vec<[f64; 2]>,
    pub segments: Vec<SegmentRecord>,
}

fn arr(p: Point2) -> [f64; 2] {
    [p.x, p.y]
}

fn pt(a: [f64; 2]) -> Point2 {
    Point2::new(a[0], a[1])
}

fn segment_record(nodes: &NodeVector, i: usize, invalid_count: usize, first: usize, last: usize) -> SegmentRecord {
    match ArcSpan::of(&nodes.segment(i)) {
        Ok(span) => SegmentRecord {
            center: Some(arr(span.geometry.center)),
            radius: Some(span.geometry.radius),
            start_angle: Some(span.start_angle),
            end_angle: Some(span.end_angle()),
            sweep: Some(span.sweep),
            length: span.length(),
            invalid_count,
            first_point: first,
            last_point: last,
        },
        Err(_) => SegmentRecord {
            center: None,
            radius: None,
            start_angle: None,
            end_angle: None,
            sweep: None,
            length: nodes.arc_nodes[i].distance(nodes.arc_nodes[i + 1]),
            invalid_count,
            first_point: first,
            last_point: last,
        },
    }
}

impl SplineFile {
    pub fn from_spline(spline: &ArcSpline, points: &[DataPoint], verdict: Verdict, config_hash: String, cost: f64) -> Self {
        let nodes = &spline.nodes;
        let segments: Vec<SegmentRecord> = (0..nodes.segments())
            .map(|i| {
                let r = spline.association.range(i);
                segment_record(nodes, i, spline.invalid_counts[i], points[*r.start()].index, points[*r.end()].index)
            })
            .collect();
        let total_length = segments.iter().map(|s| s.length).sum();
        Self {
            metadata: SplineMetadata {
                config_hash,
                verdict,
                segments: nodes.segments(),
                control_points: 2 * nodes.segments() + 1,
                total_length,
                points: points.len(),
                cost,
            },
            arc_nodes: nodes.arc_nodes.iter().map(|&p| arr(p)).collect(),
            middle_nodes: nodes.middle_nodes.iter().map(|&p| arr(p)).collect(),
            segments,
        }
    }

    pub fn nodes(&self) -> Result<NodeVector, FormatError> {
        NodeVector::new(self.arc_nodes.iter().map(|&a| pt(a)).collect(), self.middle_nodes.iter().map(|&a| pt(a)).collect())
            .map_err(|e| FormatError::Invalid(e.to_string()))
    }

    /// Checks node counts and that every derived field matches the nodes.
    pub fn check(&self) -> Result<(), FormatError> {
        let nodes = self.nodes()?;
        let m = nodes.segments();
        let bad = |msg: String| Err(FormatError::Invalid(msg));
        if self.segments.len() != m || self.metadata.segments != m {
            return bad(format!("expected {m} segment records"));
        }
        if self.metadata.control_points != 2 * m + 1 {
            return bad(format!("control_points must be {}", 2 * m + 1));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= SPLINE_TOL * (1.0 + a.abs().max(b.abs()));
        let close_angle = |a: f64, b: f64| wrap_pi(a - b).abs() <= SPLINE_TOL;
        for (i, rec) in self.segments.iter().enumerate() {
            let expect = segment_record(&nodes, i, rec.invalid_count, rec.first_point, rec.last_point);
            let ok = match (rec.center, expect.center) {
                (Some(c), Some(e)) => {
                    close(c[0], e[0])
                        && close(c[1], e[1])
                        && close(rec.radius.unwrap_or(f64::NAN), expect.radius.unwrap())
                        && close_angle(rec.start_angle.unwrap_or(f64::NAN), expect.start_angle.unwrap())
                        && close_angle(rec.end_angle.unwrap_or(f64::NAN), expect.end_angle.unwrap())
                        && close(rec.sweep.unwrap_or(f64::NAN), expect.sweep.unwrap())
                }
                (None, None) => true,
                _ => false,
            };
            if !ok || !close(rec.length, expect.length) {
                return bad(format!("segment {} geometry does not match its nodes", i + 1));
            }
        }
        let total: f64 = self.segments.iter().map(|s| s.length).sum();
        if (total - self.metadata.total_length).abs() > 1e-6 {
            return bad("total_length does not match the segment lengths".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spline serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let f: SplineFile = serde_json::from_str(text)?;
        f.check()?;
        Ok(f)
    }
}

const ROT_COLS: [&str; 9] = ["r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22"];
const QUAT_COLS: [&str; 4] = ["qw", "qx", "qy", "qz"];
const VEC_COLS: [&str; 9] = ["px", "py", "pz", "llx", "lly", "llz", "rlx", "rly", "rlz"];

fn cov_cols() -> Vec<String> {
    (0..9).flat_map(|i| (i..9).map(move |j| format!("c{i}{j}"))).collect()
}

/// Header written by [`format_trajectory`].
pub fn trajectory_header() -> String {
    let mut cols: Vec<String> = ["px", "py", "pz"].iter().map(|s| s.to_string()).collect();
    cols.extend(ROT_COLS.iter().map(|s| s.to_string()));
    cols.extend(VEC_COLS[3..].iter().map(|s| s.to_string()));
    cols.extend(cov_cols());
    cols.join(",")
}

/// Parses a trajectory CSV. Columns are located by header name; rotation is
/// given either as `r00..r22` (row-major) or as `qw,qx,qy,qz`. The joint
/// covariance is the upper triangle `c{i}{j}`, `i ≤ j`, over
/// `(δp, δφ, δL)`.
pub fn parse_trajectory(text: &str) -> Result<Vec<VehicleState>, FormatError> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header)) = lines.next() else {
        return Err(FormatError::Invalid("empty trajectory file".into()));
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| names.iter().position(|&c| c == name);
    let need = |name: &str| col(name).ok_or_else(|| FormatError::Parse { line: hline, message: format!("missing column {name:?}") });
    let vec_idx: Vec<usize> = VEC_COLS.iter().map(|c| need(c)).collect::<Result<_, _>>()?;
    let cov_idx: Vec<usize> = cov_cols().iter().map(|c| need(c)).collect::<Result<_, _>>()?;
    enum RotCols {
        Matrix(Vec<usize>),
        Quat(Vec<usize>),
    }
    let rot_cols = if ROT_COLS.iter().all(|c| col(c).is_some()) {
        RotCols::Matrix(ROT_COLS.iter().map(|c| col(c).unwrap()).collect())
    } else if QUAT_COLS.iter().all(|c| col(c).is_some()) {
        RotCols::Quat(QUAT_COLS.iter().map(|c| col(c).unwrap()).collect())
    } else {
        return Err(FormatError::Parse { line: hline, message: "need rotation columns r00..r22 or qw,qx,qy,qz".into() });
    };

    let mut out = Vec::new();
    for (state, (line, row)) in lines.enumerate() {
        let state = state + 1;
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != names.len() {
            return Err(FormatError::Parse { line, message: format!("expected {} fields, got {}", names.len(), f.len()) });
        }
        let get = |k: usize| parse_f64(f[k], line, names[k]);
        let v: Vec<f64> = vec_idx.iter().map(|&k| get(k)).collect::<Result<_, _>>()?;
        let rot = match &rot_cols {
            RotCols::Matrix(idx) => {
                let r: Vec<f64> = idx.iter().map(|&k| get(k)).collect::<Result<_, _>>()?;
                Rotation3::new(Matrix3::from_row_slice(&r), ROTATION_TOL)
                    .map_err(|err| FormatError::State { state, message: format!("rotation is not orthonormal (deviation {err:.3e})") })?
            }
            RotCols::Quat(idx) => {
                let q: Vec<f64> = idx.iter().map(|&k| get(k)).collect::<Result<_, _>>()?;
                Rotation3::from_quaternion(q[0], q[1], q[2], q[3])
                    .ok_or_else(|| FormatError::State { state, message: "zero quaternion".into() })?
            }
        };
        let mut cov = Matrix9::zeros();
        let mut k = 0;
        for i in 0..9 {
            for j in i..9 {
                let c = get(cov_idx[k])?;
                cov[(i, j)] = c;
                cov[(j, i)] = c;
                k += 1;
            }
        }
        let (joint_cov, _) = repair_joint_cov(&cov).map_err(|e| FormatError::State { state, message: e.to_string() })?;
        out.push(VehicleState {
            p: Vector3::new(v[0], v[1], v[2]),
            rot,
            lane_left: Vector3::new(v[3], v[4], v[5]),
            lane_right: Vector3::new(v[6], v[7], v[8]),
            joint_cov,
        });
    }
    if out.is_empty() {
        return Err(FormatError::Invalid("trajectory file has no states".into()));
    }
    Ok(out)
}

/// Trajectory CSV with a row-major rotation matrix; values use the shortest
/// representation that round-trips.
pub fn format_trajectory(states: &[VehicleState]) -> String {
    let mut s = trajectory_header();
    s.push('\n');
    for st in states {
        let mut vals: Vec<f64> = vec![st.p.x, st.p.y, st.p.z];
        let r = st.rot.matrix();
        for i in 0..3 {
            for j in 0..3 {
                vals.push(r[(i, j)]);
            }
        }
        vals.extend(st.lane_left.iter());
        vals.extend(st.lane_right.iter());
        for i in 0..9 {
            for j in i..9 {
                vals.push(st.joint_cov[(i, j)]);
            }
        }
        let row: Vec<String> = vals.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Writes `contents` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}
