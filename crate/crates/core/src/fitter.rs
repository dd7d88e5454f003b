//! Single-arc and multiple-arc fitting.
//!
//! Multiple-arc fitting runs in two phases. Phase 1 splits the ordered points
//! into near-linear runs, greedily merges runs while a single arc still
//! validates, and seeds one arc per merged run with shared junction nodes.
//! Phase 2 alternates constrained optimization and chi-squared validation,
//! halving the worst segment until every segment validates or the segment cap
//! is reached.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{EvaluationError, FitError, GeometryError, ModelError};
use crate::geometry::{circumcenter, mahalanobis_sq, wrap_positive, ArcParams, ArcSpan, Point2, SAGITTA_MIN};
use crate::models::{
    anchor_block, g1_constraint, measurement_block, measurement_residual, middle_node_constraint, min_length_constraint, AnchorConfig,
    ArcDerivatives, Association, DataPoint, JacobianMode, NodeVector,
};
use crate::solver::{solve, CnlsProblem, Evaluation, Jacobians, SolveReport, SolverSettings, Termination};

/// Chi-squared quantile with two degrees of freedom, `−2 ln(1 − p)`.
pub fn chi2_quantile_2dof(p: f64) -> f64 {
    -2.0 * (1.0 - p).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Maximum point-to-chord distance for a linear run (meters).
    pub linearization_threshold: f64,
    pub anchor: AnchorConfig,
    /// Minimum chord-path length of a segment (meters).
    pub min_length: f64,
    /// Confidence level of the per-point chi-squared test.
    pub confidence: f64,
    /// A segment is invalid when more than this many points fail the test.
    pub invalid_count_threshold: usize,
    /// Segment cap; defaults to `⌈n/3⌉` (bounded by what `n` points admit).
    pub max_segments: Option<usize>,
    pub jacobian_mode: JacobianMode,
    pub solver: SolverSettings,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            linearization_threshold: 0.3,
            anchor: AnchorConfig::default(),
            min_length: 5.0,
            confidence: 0.99,
            invalid_count_threshold: 2,
            max_segments: None,
            jacobian_mode: JacobianMode::Analytic,
            solver: SolverSettings::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |msg: String| Err(FitError::Config(msg));
        if !(self.linearization_threshold > 0.0) {
            return bad(format!("linearization_threshold must be positive, got {}", self.linearization_threshold));
        }
        if !(self.min_length > 0.0) {
            return bad(format!("min_length must be positive, got {}", self.min_length));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.max_segments == Some(0) {
            return bad("max_segments must be at least 1".into());
        }
        self.anchor.validate().map_err(FitError::Config)?;
        self.solver.validate().map_err(FitError::Config)?;
        Ok(())
    }

    pub fn chi2_threshold(&self) -> f64 {
        chi2_quantile_2dof(self.confidence)
    }

    /// Effective segment cap for `n` points.
    pub fn segment_cap(&self, n: usize) -> usize {
        let admissible = (n.saturating_sub(1) / 2).max(1);
        self.max_segments.unwrap_or(n.div_ceil(3)).min(admissible).max(1)
    }
}

/// Least-squares problem over a [`NodeVector`]: anchor and measurement costs,
/// middle-node (and, for `m ≥ 2`, G¹) equalities, and optionally the
/// minimum-length inequality.
pub struct SplineProblem<'a> {
    points: &'a [DataPoint],
    assoc: Association,
    anchor: AnchorConfig,
    min_length: Option<f64>,
    mode: JacobianMode,
    reassociate: bool,
}

impl<'a> SplineProblem<'a> {
    /// The single-arc problem: both endpoints anchored, middle-node equality.
    pub fn single(points: &'a [DataPoint], anchor: AnchorConfig, mode: JacobianMode) -> Result<Self, ModelError> {
        Ok(Self { points, assoc: Association::whole(points.len())?, anchor, min_length: None, mode, reassociate: false })
    }

    /// The full multiple-arc problem with re-association on refresh.
    pub fn multi(points: &'a [DataPoint], assoc: Association, cfg: &FitConfig) -> Self {
        Self { points, assoc, anchor: cfg.anchor, min_length: Some(cfg.min_length), mode: cfg.jacobian_mode, reassociate: true }
    }

    pub fn association(&self) -> &Association {
        &self.assoc
    }

    fn evaluate_nodes(&self, nodes: &NodeVector) -> Result<Evaluation, ModelError> {
        let anchor = anchor_block(nodes, self.points, &self.assoc, &self.anchor)?;
        let meas = measurement_block(nodes, self.points, &self.assoc, self.mode)?;
        let mid = middle_node_constraint(nodes);
        let g1 = g1_constraint(nodes, self.mode)?;
        let ineq = match self.min_length {
            Some(l) => Some(min_length_constraint(nodes, l)?),
            None => None,
        };
        let cols = nodes.dim();
        let stack_values = |parts: &[&DVector<f64>]| {
            DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
        };
        let stack_rows = |parts: &[&DMatrix<f64>]| {
            let rows = parts.iter().map(|p| p.nrows()).sum();
            let mut out = DMatrix::zeros(rows, cols);
            let mut r = 0;
            for p in parts {
                out.rows_mut(r, p.nrows()).copy_from(*p);
                r += p.nrows();
            }
            out
        };
        let (ineq_values, ineq_jac) = match &ineq {
            Some(b) => (b.values.clone(), b.jacobian.clone()),
            None => (DVector::zeros(0), DMatrix::zeros(0, cols)),
        };
        Ok(Evaluation {
            cost: stack_values(&[&anchor.values, &meas.values]),
            equality: stack_values(&[&mid.values, &g1.values]),
            inequality: ineq_values,
            jacobians: Some(Jacobians {
                cost: stack_rows(&[&anchor.jacobian, &meas.jacobian]),
                equality: stack_rows(&[&mid.jacobian, &g1.jacobian]),
                inequality: ineq_jac,
            }),
        })
    }
}

impl CnlsProblem for SplineProblem<'_> {
    fn dim(&self) -> usize {
        2 * (2 * self.assoc.segments() + 1)
    }

    fn evaluate(&self, x: &DVector<f64>, _with_jacobians: bool) -> Result<Evaluation, EvaluationError> {
        let nodes = NodeVector::from_flat(x)?;
        Ok(self.evaluate_nodes(&nodes)?)
    }

    fn refresh(&mut self, x: &DVector<f64>) -> bool {
        if !self.reassociate {
            return false;
        }
        let Ok(nodes) = NodeVector::from_flat(x) else {
            return false;
        };
        let next = associate(self.points, &nodes);
        if next != self.assoc {
            self.assoc = next;
            true
        } else {
            false
        }
    }
}

fn centroid(points: &[DataPoint]) -> Point2 {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.pos.x, sy + p.pos.y));
    Point2::new(sx / n, sy / n)
}

fn shifted(points: &[DataPoint], origin: Point2) -> Vec<DataPoint> {
    points.iter().map(|p| DataPoint { pos: p.pos - origin, ..*p }).collect()
}

/// Starting arc for a run of points: endpoints at the first and last point,
/// middle node at the point farthest from their chord. Nearly collinear runs
/// get a small lateral bulge instead.
pub fn initial_arc(points: &[DataPoint]) -> ArcParams {
    let a1 = points[0].pos;
    let a2 = points[points.len() - 1].pos;
    let chord = a2 - a1;
    let len = chord.norm();
    let mut best = (0.0f64, None);
    let mut signed_sum = 0.0;
    for p in &points[1..points.len() - 1] {
        let d = if len > 0.0 { chord.cross(p.pos - a1) / len } else { p.pos.distance(a1) };
        signed_sum += d;
        if d.abs() > best.0 {
            best = (d.abs(), Some(p.pos));
        }
    }
    match best {
        (d, Some(n)) if d >= SAGITTA_MIN => ArcParams::new(a1, a2, n),
        _ => {
            let offset = (10.0 * SAGITTA_MIN).max(0.01 * len);
            let side = if signed_sum < 0.0 { -1.0 } else { 1.0 };
            let normal = if len > 0.0 { chord.perp() * (1.0 / len) } else { Point2::new(0.0, 1.0) };
            ArcParams::new(a1, a2, a1.midpoint(a2) + normal * (side * offset))
        }
    }
}

/// Fits one arc to all `points` with both endpoints anchored by
/// `cfg.anchor.sigma_ac1`.
pub fn fit_single_arc(points: &[DataPoint], cfg: &FitConfig) -> Result<(ArcParams, SolveReport), FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    let origin = centroid(points);
    let local = shifted(points, origin);
    let init = initial_arc(&local);
    circumcenter(&init).map_err(|source| ModelError::Degenerate { segment: 0, source })?;
    let mut problem = SplineProblem::single(&local, cfg.anchor, cfg.jacobian_mode)?;
    let mut report = solve(&mut problem, &NodeVector::single(&init).to_flat(), &cfg.solver);
    if report.termination == Termination::EvaluationFailure {
        return Err(FitError::Solver(Box::new(report)));
    }
    let mut nodes = NodeVector::from_flat(&report.x)?;
    orient_middle_nodes(&mut nodes, problem.association(), &local);
    let fitted = nodes.segment(0).map(|p| p + origin);
    report.x = NodeVector::single(&fitted).to_flat();
    Ok((fitted, report))
}

/// Standard error of the fitted radius, propagated from the declared point
/// covariances through the constrained Gauss-Newton solution:
///
/// ```text
/// P = Z (Zᵀ JᵀJ Z)⁻¹ Zᵀ,    cov(x) = P Jᵀ G Σ Gᵀ J P
/// ```
///
/// `Z` spans the null space of the middle-node constraint gradient and `G`
/// is the derivative of the whitened residuals with respect to the data.
/// Because the measurement residual whitens only its radial part, `P` alone
/// understates the spread of the estimate when covariances are anisotropic.
pub fn radius_standard_error(points: &[DataPoint], params: &ArcParams, cfg: &FitConfig) -> Result<f64, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    let origin = centroid(points);
    let local = shifted(points, origin);
    let p = params.map(|q| q - origin);
    let problem = SplineProblem::single(&local, cfg.anchor, cfg.jacobian_mode)?;
    let ev = problem.evaluate_nodes(&NodeVector::single(&p))?;
    let jac = ev.jacobians.expect("jacobians are always assembled");
    let info = jac.cost.tr_mul(&jac.cost);

    // Householder reflector sending the constraint normal to e1; its other
    // columns span the feasible tangent space.
    let c = jac.equality.row(0).transpose();
    let mut v = c.normalize();
    v[0] += if v[0] >= 0.0 { 1.0 } else { -1.0 };
    let q = DMatrix::<f64>::identity(6, 6) - (&v * v.transpose()) * (2.0 / v.norm_squared());
    let z = q.columns(1, 5).into_owned();
    let reduced = z.transpose() * &info * &z;
    let reduced_inv = reduced
        .try_inverse()
        .ok_or(FitError::Model(ModelError::Degenerate { segment: 0, source: GeometryError::DegenerateArc { sagitta: p.sagitta() } }))?;
    let proj = &z * reduced_inv * z.transpose();

    let geo = circumcenter(&p).map_err(|source| ModelError::Degenerate { segment: 0, source })?;
    let n = local.len();
    let whiten = |c: &crate::geometry::Cov2| {
        let w = c.inv_sqrt();
        Matrix2::new(w[0][0], w[0][1], w[1][0], w[1][1])
    };
    // residual-by-data derivative with each point's covariance folded in
    let mut g_sigma = DMatrix::zeros(jac.cost.nrows(), 2 * n);
    let mut g = DMatrix::zeros(jac.cost.nrows(), 2 * n);
    let mut put = |row: usize, j: usize, d: Matrix2<f64>| {
        let cov = local[j].cov;
        let sigma = Matrix2::new(cov.xx, cov.xy, cov.xy, cov.yy);
        g.fixed_view_mut::<2, 2>(row, 2 * j).copy_from(&d);
        g_sigma.fixed_view_mut::<2, 2>(row, 2 * j).copy_from(&(d * sigma));
    };
    let wa = whiten(&cfg.anchor.sigma_ac1);
    put(0, 0, wa);
    put(2, n - 1, wa);
    for (j, pt) in local.iter().enumerate() {
        let q = pt.pos - geo.center;
        let d = q.norm();
        let u = Vector2::new(q.x / d, q.y / d);
        let tangential = Matrix2::identity() - u * u.transpose();
        put(4 + 2 * j, j, whiten(&pt.cov) * (tangential * (geo.radius / d) - Matrix2::identity()));
    }
    let sens = &proj * jac.cost.transpose();
    let cov = &sens * (g_sigma * g.transpose()) * sens.transpose();

    let der = ArcDerivatives::of(&p).map_err(|source| ModelError::Degenerate { segment: 0, source })?;
    let mut g = DVector::zeros(6);
    for k in 0..3 {
        g[2 * k] = der.d_radius[k][0];
        g[2 * k + 1] = der.d_radius[k][1];
    }
    Ok(g.dot(&(cov * &g)).max(0.0).sqrt())
}

/// Perpendicular distance from `p` to the line through `a` and `b`; falls
/// back to `‖p − a‖` when the chord is degenerate.
fn distance_to_chord(p: Point2, a: Point2, b: Point2) -> f64 {
    let chord = b - a;
    let len = chord.norm();
    if len == 0.0 {
        p.distance(a)
    } else {
        (chord.cross(p - a) / len).abs()
    }
}

/// Divide-and-conquer linear approximation. Returns inclusive 0-based
/// intervals tiling `[0, n−1]`; adjacent intervals share their boundary.
pub fn recursive_linearize(points: &[DataPoint], epsilon: f64) -> Vec<(usize, usize)> {
    let n = points.len();
    if n < 2 {
        return vec![(0, n.saturating_sub(1))];
    }
    let mut out = Vec::new();
    // explicit stack, right half pushed first so intervals come out in order
    let mut stack = vec![(0, n - 1)];
    while let Some((lb, ub)) = stack.pop() {
        let (a, b) = (points[lb].pos, points[ub].pos);
        let mut worst = (0.0f64, lb);
        for i in lb + 1..ub {
            let d = distance_to_chord(points[i].pos, a, b);
            if d > worst.0 {
                worst = (d, i);
            }
        }
        if worst.0 > epsilon {
            stack.push((worst.1, ub));
            stack.push((lb, worst.1));
        } else {
            out.push((lb, ub));
        }
    }
    out
}

/// An initial single-arc run produced by [`merge_intervals`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedInterval {
    pub lb: usize,
    pub ub: usize,
    /// `false` when even the shortest admissible run failed validation.
    pub valid: bool,
}

fn single_arc_is_valid(points: &[DataPoint], cfg: &FitConfig) -> bool {
    let Ok((arc, _)) = fit_single_arc(points, cfg) else {
        return false;
    };
    let Ok(nodes) = NodeVector::new(vec![arc.a1, arc.a2], vec![arc.n]) else {
        return false;
    };
    let Ok(assoc) = Association::whole(points.len()) else {
        return false;
    };
    validate(&nodes, &assoc, points, cfg).all_valid()
}

/// Greedy forward merge of linear runs into single-arc runs.
pub fn merge_intervals(points: &[DataPoint], intervals: &[(usize, usize)], cfg: &FitConfig) -> Result<Vec<MergedInterval>, FitError> {
    let n = points.len();
    if n < 3 {
        return Err(FitError::TooFewPoints(n));
    }
    let mut bounds: Vec<usize> = intervals.iter().map(|&(lb, _)| lb).collect();
    bounds.push(n - 1);
    bounds.dedup();
    let k = bounds.len() - 1;

    let mut out: Vec<MergedInterval> = Vec::new();
    let mut lo = 0;
    while lo < k {
        // shortest run with at least three points
        let mut first = lo + 1;
        while first < k && bounds[first] - bounds[lo] < 2 {
            first += 1;
        }
        if bounds[first] - bounds[lo] < 2 {
            // tail too short for its own arc: absorb into the previous run
            match out.last_mut() {
                Some(last) => last.ub = n - 1,
                None => out.push(MergedInterval { lb: 0, ub: n - 1, valid: false }),
            }
            break;
        }
        let mut last_valid = None;
        let mut cand = first;
        while cand <= k {
            if single_arc_is_valid(&points[bounds[lo]..=bounds[cand]], cfg) {
                last_valid = Some(cand);
                cand += 1;
            } else {
                break;
            }
        }
        let (hi, valid) = match last_valid {
            Some(v) => (v, true),
            None => (first, false),
        };
        out.push(MergedInterval { lb: bounds[lo], ub: bounds[hi], valid });
        lo = hi;
    }
    Ok(out)
}

/// Seeds a multi-segment node vector from per-interval single-arc fits; each
/// junction node is the mean of the two fitted endpoints that meet there.
pub fn init_multi_params(points: &[DataPoint], intervals: &[MergedInterval], cfg: &FitConfig) -> Result<NodeVector, FitError> {
    if intervals.is_empty() {
        return Err(FitError::Config("no intervals to initialize".into()));
    }
    let arcs: Vec<ArcParams> = intervals
        .iter()
        .map(|iv| {
            let run = &points[iv.lb..=iv.ub];
            match fit_single_arc(run, cfg) {
                Ok((arc, _)) if circumcenter(&arc).is_ok() => arc,
                _ => initial_arc(run),
            }
        })
        .collect();
    let mut arc_nodes = vec![arcs[0].a1];
    for w in arcs.windows(2) {
        arc_nodes.push(w[0].a2.midpoint(w[1].a1));
    }
    arc_nodes.push(arcs[arcs.len() - 1].a2);
    Ok(NodeVector::new(arc_nodes, arcs.iter().map(|a| a.n).collect())?)
}

/// Nearest-point data association with repair. The first and last
/// boundaries are pinned; interior boundaries take the closest point (lower
/// ordinal on ties) and are then pushed right just enough to leave every
/// segment with at least three points.
pub fn associate(points: &[DataPoint], nodes: &NodeVector) -> Association {
    let n = points.len();
    let m = nodes.segments();
    let mut b = Vec::with_capacity(m + 1);
    b.push(0);
    for i in 1..m {
        let target = nodes.arc_nodes[i];
        let mut best = (f64::INFINITY, 0);
        for (j, p) in points.iter().enumerate() {
            let d = p.pos.distance(target);
            if d < best.0 {
                best = (d, j);
            }
        }
        let lower = b[i - 1] + 2;
        let upper = (n - 1).saturating_sub(2 * (m - i));
        b.push(best.1.max(lower).min(upper));
    }
    b.push(n - 1);
    Association::new(b, n).expect("segment count within what the points admit")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
    /// The segment cap was reached with invalid segments remaining.
    Capped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentValidation {
    pub invalid_count: usize,
    pub owned_points: usize,
    /// Ordinal of the point with the largest statistic.
    pub worst_point: Option<usize>,
    /// Squared Mahalanobis residual of each owned point, in order.
    pub statistics: Vec<f64>,
    pub valid: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub threshold: f64,
    pub segments: Vec<SegmentValidation>,
    pub verdict: Verdict,
}

impl ValidationReport {
    pub fn all_valid(&self) -> bool {
        self.segments.iter().all(|s| s.valid)
    }

    pub fn invalid_counts(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.invalid_count).collect()
    }
}

/// Chi-squared validation: a point fails when its squared Mahalanobis
/// arc-measurement residual exceeds `χ²₂(confidence)`; a segment fails when
/// more than `invalid_count_threshold` of its points fail.
pub fn validate(nodes: &NodeVector, assoc: &Association, points: &[DataPoint], cfg: &FitConfig) -> ValidationReport {
    let threshold = cfg.chi2_threshold();
    let segments: Vec<SegmentValidation> = (0..nodes.segments())
        .map(|i| {
            let range = assoc.range(i);
            let owned = range.clone().count();
            let Ok(g) = circumcenter(&nodes.segment(i)) else {
                return SegmentValidation {
                    invalid_count: owned,
                    owned_points: owned,
                    worst_point: None,
                    statistics: Vec::new(),
                    valid: false,
                    degenerate: true,
                };
            };
            let statistics: Vec<f64> = range
                .clone()
                .map(|j| match measurement_residual(&g, points[j].pos) {
                    Ok(r) => mahalanobis_sq(r, &points[j].cov),
                    Err(_) => f64::INFINITY,
                })
                .collect();
            let invalid_count = statistics.iter().filter(|&&s| !(s <= threshold)).count();
            let worst_point = statistics
                .iter()
                .enumerate()
                .fold(None::<(usize, f64)>, |best, (k, &s)| match best {
                    Some((_, b)) if !(s > b) => best,
                    _ => Some((k, s)),
                })
                .map(|(k, _)| points[assoc.boundaries()[i] + k].index);
            SegmentValidation {
                invalid_count,
                owned_points: owned,
                worst_point,
                statistics,
                valid: invalid_count <= cfg.invalid_count_threshold,
                degenerate: false,
            }
        })
        .collect();
    let verdict = if segments.iter().all(|s| s.valid) { Verdict::Valid } else { Verdict::Invalid };
    ValidationReport { threshold, segments, verdict }
}

fn points_on_span(span: &ArcSpan, points: &[DataPoint]) -> usize {
    let c = span.geometry.center;
    points
        .iter()
        .filter(|p| {
            let rel = wrap_positive((p.pos - c).angle() - span.start_angle);
            if span.sweep >= 0.0 {
                rel <= span.sweep
            } else {
                rel == 0.0 || TAU - rel <= -span.sweep
            }
        })
        .count()
}

/// Chooses, per segment, between the two arcs through `A_i` and `A_{i+1}` on
/// the same circle. The alternative middle node is the reflection
/// `2X_c − N_i`; it leaves the circle, and with it every cost and equality
/// residual, unchanged. Once the first segment's arc is fixed, tangent
/// continuity at each junction fixes the next one; of the two chains this
/// gives, the one whose arcs cover more of their own points wins. Returns
/// whether any node moved.
pub fn orient_middle_nodes(nodes: &mut NodeVector, assoc: &Association, points: &[DataPoint]) -> bool {
    let m = nodes.segments().min(assoc.segments());
    let options: Vec<Option<[(ArcSpan, Point2); 2]>> = (0..m)
        .map(|i| {
            let seg = nodes.segment(i);
            let span = ArcSpan::of(&seg).ok()?;
            let n = span.geometry.center * 2.0 - seg.n;
            let other = ArcSpan::with_geometry(&ArcParams { n, ..seg }, span.geometry);
            Some([(span, seg.n), (other, n)])
        })
        .collect();
    let coverage = |i: usize, span: &ArcSpan| points_on_span(span, &points[assoc.range(i)]);

    let chain = |first: usize| {
        let mut picks = Vec::with_capacity(m);
        let mut score = 0;
        let mut incoming: Option<Point2> = None;
        for (i, opt) in options.iter().enumerate() {
            let Some(pair) = opt else {
                picks.push(0);
                incoming = None;
                continue;
            };
            let k = match incoming {
                None if i == 0 => first,
                None => usize::from(coverage(i, &pair[1].0) > coverage(i, &pair[0].0)),
                Some(t) => usize::from(pair[1].0.tangent_at(0.0).dot(t) > pair[0].0.tangent_at(0.0).dot(t)),
            };
            score += coverage(i, &pair[k].0);
            incoming = Some(pair[k].0.tangent_at(1.0));
            picks.push(k);
        }
        (score, picks)
    };
    let (keep_score, keep) = chain(0);
    let (flip_score, flip) = chain(1);
    let picks = if flip_score > keep_score { flip } else { keep };

    let mut moved = false;
    for (i, k) in picks.into_iter().enumerate() {
        if let (1, Some(pair)) = (k, &options[i]) {
            nodes.middle_nodes[i] = pair[1].1;
            moved = true;
        }
    }
    moved
}

/// Widest stretch of the arc, in radians, that none of `points` projects
/// onto. Points off the arc count at the nearer end.
fn largest_uncovered_gap(span: &ArcSpan, points: &[DataPoint]) -> f64 {
    let sweep = span.sweep.abs();
    let dir = span.sweep.signum();
    let c = span.geometry.center;
    let mut params: Vec<f64> = points
        .iter()
        .map(|p| {
            let rel = wrap_positive(dir * ((p.pos - c).angle() - span.start_angle));
            if rel <= sweep {
                rel
            } else if rel - sweep < TAU - rel {
                sweep
            } else {
                0.0
            }
        })
        .collect();
    params.push(0.0);
    params.push(sweep);
    params.sort_by(f64::total_cmp);
    params.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// First segment that winds more than half a turn past its own data. Such a
/// segment appears when its arc nodes land nearly on top of each other in
/// the wrong order; the only smooth arc between them is an almost full loop.
pub fn find_unsupported_wrap(nodes: &NodeVector, assoc: &Association, points: &[DataPoint]) -> Option<usize> {
    if nodes.segments() < 2 {
        return None;
    }
    (0..nodes.segments().min(assoc.segments()))
        .find(|&i| ArcSpan::of(&nodes.segment(i)).map(|span| largest_uncovered_gap(&span, &points[assoc.range(i)]) > PI).unwrap_or(false))
}

/// Drops segment `i` by removing its far arc node (its near one for the
/// last segment), so a neighbor spans both stretches with its own middle node.
pub fn remove_segment(nodes: &NodeVector, i: usize) -> NodeVector {
    let mut out = nodes.clone();
    if i + 1 < nodes.segments() {
        out.arc_nodes.remove(i + 1);
        out.middle_nodes.remove(i);
    } else {
        out.arc_nodes.remove(i);
        out.middle_nodes.remove(i);
    }
    out
}

/// Halves the segment with the most invalid points (lowest index on ties):
/// the old middle node becomes an arc node and each half gets a middle node
/// at its circular midpoint.
pub fn split_worst(nodes: &NodeVector, report: &ValidationReport) -> NodeVector {
    let worst = report
        .segments
        .iter()
        .enumerate()
        .fold((0, 0usize), |best, (i, s)| if s.invalid_count > best.1 { (i, s.invalid_count) } else { best })
        .0;
    let seg = nodes.segment(worst);
    let (m1, m2) = match ArcSpan::of(&seg) {
        Ok(span) => (span.point_at(0.25), span.point_at(0.75)),
        Err(_) => {
            // straight segment: bulge the halves slightly so they stay arcs
            let chord = seg.a2 - seg.a1;
            let bump = chord.perp() * (0.01 * chord.norm().max(SAGITTA_MIN * 1e3) / chord.norm().max(1e-300));
            (seg.a1.midpoint(seg.n) + bump, seg.n.midpoint(seg.a2) + bump)
        }
    };
    let mut out = nodes.clone();
    out.arc_nodes.insert(worst + 1, seg.n);
    out.middle_nodes[worst] = m1;
    out.middle_nodes.insert(worst + 1, m2);
    out
}

/// Fitted spline with its association and per-segment geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcSpline {
    pub nodes: NodeVector,
    pub association: Association,
    /// Arc geometry per segment; `None` for a degenerate segment.
    pub spans: Vec<Option<ArcSpan>>,
    pub invalid_counts: Vec<usize>,
    pub valid: Vec<bool>,
}

impl ArcSpline {
    pub fn new(nodes: NodeVector, association: Association, report: &ValidationReport) -> Self {
        let spans = (0..nodes.segments()).map(|i| ArcSpan::of(&nodes.segment(i)).ok()).collect();
        Self {
            nodes,
            association,
            spans,
            invalid_counts: report.invalid_counts(),
            valid: report.segments.iter().map(|s| s.valid).collect(),
        }
    }

    pub fn segments(&self) -> usize {
        self.nodes.segments()
    }

    /// Sum of exact arc lengths `r·|Δθ|`.
    pub fn total_length(&self) -> f64 {
        (0..self.segments())
            .map(|i| match &self.spans[i] {
                Some(s) => s.length(),
                None => self.nodes.arc_nodes[i].distance(self.nodes.arc_nodes[i + 1]),
            })
            .sum()
    }

    /// Arc nodes plus middle nodes, `2m + 1`.
    pub fn control_points(&self) -> usize {
        2 * self.segments() + 1
    }

    /// Largest angle between the incoming and outgoing unit tangents over all
    /// junctions, from the cached geometry.
    pub fn max_tangent_gap(&self) -> f64 {
        (0..self.segments().saturating_sub(1))
            .map(|i| match (&self.spans[i], &self.spans[i + 1]) {
                (Some(a), Some(b)) => {
                    let t1 = a.tangent_at(1.0);
                    let t2 = b.tangent_at(0.0);
                    t1.cross(t2).atan2(t1.dot(t2)).abs()
                }
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub segments: usize,
    pub cost: f64,
    pub invalid_counts: Vec<usize>,
    pub termination: Termination,
    pub max_equality_violation: f64,
    pub max_inequality_violation: f64,
}

#[derive(Debug, Clone)]
pub struct MultiFit {
    pub spline: ArcSpline,
    pub report: ValidationReport,
    pub history: Vec<RoundRecord>,
    /// Solver report of the final round, in the caller's frame.
    pub solve: SolveReport,
}

fn solve_round(points: &[DataPoint], nodes: &NodeVector, cfg: &FitConfig) -> (SolveReport, Association) {
    let assoc = associate(points, nodes);
    let mut problem = SplineProblem::multi(points, assoc, cfg);
    let report = solve(&mut problem, &nodes.to_flat(), &cfg.solver);
    let assoc = problem.association().clone();
    (report, assoc)
}

/// One solve followed by middle-node orientation; if orientation moved a
/// node, a second solve starts from the oriented nodes.
fn settle_round(points: &[DataPoint], nodes: &NodeVector, cfg: &FitConfig) -> Result<(SolveReport, NodeVector), FitError> {
    let (report, assoc) = solve_round(points, nodes, cfg);
    if report.termination == Termination::EvaluationFailure {
        return Err(FitError::Solver(Box::new(report)));
    }
    let mut settled = NodeVector::from_flat(&report.x)?;
    if orient_middle_nodes(&mut settled, &assoc, points) {
        // the flipped arcs may sit differently against the length bound
        let (again, _) = solve_round(points, &settled, cfg);
        if again.termination != Termination::EvaluationFailure {
            let nodes = NodeVector::from_flat(&again.x)?;
            return Ok((again, nodes));
        }
    }
    Ok((report, settled))
}

/// Two-phase multiple-arc approximation.
pub fn fit_multi(points: &[DataPoint], cfg: &FitConfig) -> Result<MultiFit, FitError> {
    let n = points.len();
    if n < 3 {
        return Err(FitError::TooFewPoints(n));
    }
    cfg.validate()?;
    let origin = centroid(points);
    let local = shifted(points, origin);

    let linear = recursive_linearize(&local, cfg.linearization_threshold);
    let merged = merge_intervals(&local, &linear, cfg)?;
    let mut nodes = init_multi_params(&local, &merged, cfg)?;
    let cap = cfg.segment_cap(n).max(nodes.segments());

    let mut history = Vec::new();
    loop {
        let (mut report, settled) = match settle_round(&local, &nodes, cfg) {
            Err(FitError::Solver(_)) => {
                // retry once from fresh single-arc seeds over the current association
                let assoc = associate(&local, &nodes);
                let intervals: Vec<MergedInterval> = (0..assoc.segments())
                    .map(|i| {
                        let r = assoc.range(i);
                        MergedInterval { lb: *r.start(), ub: *r.end(), valid: true }
                    })
                    .collect();
                nodes = init_multi_params(&local, &intervals, cfg)?;
                settle_round(&local, &nodes, cfg)?
            }
            other => other?,
        };
        nodes = settled;
        let mut assoc = associate(&local, &nodes);
        while let Some(i) = find_unsupported_wrap(&nodes, &assoc, &local) {
            let Ok((again, settled)) = settle_round(&local, &remove_segment(&nodes, i), cfg) else {
                break;
            };
            report = again;
            nodes = settled;
            assoc = associate(&local, &nodes);
        }
        let mut validation = validate(&nodes, &assoc, &local, cfg);
        // removals undid the last split: further rounds would repeat it
        let stalled = history.last().is_some_and(|r: &RoundRecord| nodes.segments() <= r.segments);
        history.push(RoundRecord {
            segments: nodes.segments(),
            cost: report.cost,
            invalid_counts: validation.invalid_counts(),
            termination: report.termination,
            max_equality_violation: report.max_equality_violation,
            max_inequality_violation: report.max_inequality_violation,
        });
        let done = validation.all_valid();
        if done || stalled || nodes.segments() >= cap {
            if !done {
                validation.verdict = Verdict::Capped;
            }
            let world = nodes.map(|p| p + origin);
            report.x = world.to_flat();
            let spline = ArcSpline::new(world, assoc, &validation);
            return Ok(MultiFit { spline, report: validation, history, solve: report });
        }
        nodes = split_worst(&nodes, &validation);
    }
}
