//! Cost and constraint blocks over the stacked node vector.
//!
//! Every block carries its residual values and a dense Jacobian whose columns
//! follow the [`NodeVector`] stacking `[A_1 .. A_{m+1}, N_1 .. N_m]`, each
//! point contributing an `(x, y)` column pair. Weighted-cost blocks are
//! pre-whitened with `Σ^{-1/2}` so their squared norm is the Mahalanobis cost.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, ModelError};
use crate::geometry::{circumcenter, ArcGeometry, ArcParams, Cov2, Point2};

/// An ordered observation and its measurement covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub pos: Point2,
    pub cov: Cov2,
    /// 1-based ordinal within its dataset.
    pub index: usize,
}

impl DataPoint {
    pub fn new(index: usize, pos: Point2, cov: Cov2) -> Self {
        Self { pos, cov, index }
    }
}

/// Arc nodes `A_1..A_{m+1}` and middle nodes `N_1..N_m` of an `m`-segment
/// spline. Adjacent segments share their common arc node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVector {
    pub arc_nodes: Vec<Point2>,
    pub middle_nodes: Vec<Point2>,
}

impl NodeVector {
    pub fn new(arc_nodes: Vec<Point2>, middle_nodes: Vec<Point2>) -> Result<Self, ModelError> {
        if middle_nodes.is_empty() || arc_nodes.len() != middle_nodes.len() + 1 {
            return Err(ModelError::NodeVectorLength { len: 2 * (arc_nodes.len() + middle_nodes.len()) });
        }
        Ok(Self { arc_nodes, middle_nodes })
    }

    pub fn single(p: &ArcParams) -> Self {
        Self { arc_nodes: vec![p.a1, p.a2], middle_nodes: vec![p.n] }
    }

    /// Number of segments `m`.
    pub fn segments(&self) -> usize {
        self.middle_nodes.len()
    }

    /// Length of the flat vector, `2(2m+1)`.
    pub fn dim(&self) -> usize {
        2 * (self.arc_nodes.len() + self.middle_nodes.len())
    }

    pub fn arc_col(&self, i: usize) -> usize {
        2 * i
    }

    pub fn mid_col(&self, i: usize) -> usize {
        2 * self.arc_nodes.len() + 2 * i
    }

    /// Three-point parameters of segment `i` (0-based).
    pub fn segment(&self, i: usize) -> ArcParams {
        ArcParams::new(self.arc_nodes[i], self.arc_nodes[i + 1], self.middle_nodes[i])
    }

    /// Column offsets of segment `i`'s `(a1, a2, n)`.
    fn segment_cols(&self, i: usize) -> [usize; 3] {
        [self.arc_col(i), self.arc_col(i + 1), self.mid_col(i)]
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.arc_nodes.iter().chain(&self.middle_nodes).flat_map(|p| [p.x, p.y]))
    }

    pub fn from_flat(x: &DVector<f64>) -> Result<Self, ModelError> {
        let len = x.len();
        // 2(2m+1) = len  =>  m = (len/2 - 1)/2
        if len < 6 || len % 4 != 2 {
            return Err(ModelError::NodeVectorLength { len });
        }
        let m = (len / 2 - 1) / 2;
        let pt = |k: usize| Point2::new(x[2 * k], x[2 * k + 1]);
        Ok(Self { arc_nodes: (0..=m).map(pt).collect(), middle_nodes: (m + 1..=2 * m).map(pt).collect() })
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Self {
        Self { arc_nodes: self.arc_nodes.iter().map(|&p| f(p)).collect(), middle_nodes: self.middle_nodes.iter().map(|&p| f(p)).collect() }
    }
}

/// Data-point boundaries `Idx(1..m+1)` assigning contiguous point ranges to
/// segments. Stored 0-based: the first boundary is 0 and the last is `n - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    boundaries: Vec<usize>,
}

impl Association {
    /// Validates the invariants: pinned endpoints, strictly increasing, and
    /// at least three points (inclusive) per segment.
    pub fn new(boundaries: Vec<usize>, n_points: usize) -> Result<Self, ModelError> {
        if boundaries.len() < 2 {
            return Err(ModelError::AssociationShape { got: boundaries.len(), expected: 2 });
        }
        for &b in &boundaries {
            if b >= n_points {
                return Err(ModelError::AssociationOutOfRange { index: b, len: n_points });
            }
        }
        if boundaries[0] != 0 {
            return Err(ModelError::AssociationOutOfRange { index: boundaries[0], len: n_points });
        }
        if *boundaries.last().unwrap() != n_points - 1 {
            return Err(ModelError::AssociationOutOfRange { index: *boundaries.last().unwrap(), len: n_points });
        }
        for (segment, w) in boundaries.windows(2).enumerate() {
            if w[1] < w[0] + 2 {
                return Err(ModelError::EmptySegment { segment });
            }
        }
        Ok(Self { boundaries })
    }

    /// Single segment over all `n` points.
    pub fn whole(n_points: usize) -> Result<Self, ModelError> {
        Self::new(vec![0, n_points.saturating_sub(1)], n_points)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn segments(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Points of segment `i`, boundaries included on both sides.
    pub fn range(&self, i: usize) -> RangeInclusive<usize> {
        self.boundaries[i]..=self.boundaries[i + 1]
    }

    /// Number of point residuals in a measurement block: `n - 1 + m`.
    pub fn measurement_count(&self) -> usize {
        (0..self.segments()).map(|i| self.range(i).count()).sum()
    }
}

/// Anchor covariances: `sigma_ac1` for the first and last arc nodes,
/// `sigma_ac2` for interior arc nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    pub sigma_ac1: Cov2,
    pub sigma_ac2: Cov2,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { sigma_ac1: Cov2::isotropic(0.1), sigma_ac2: Cov2::isotropic(100.0) }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, c) in [("sigma_ac1", &self.sigma_ac1), ("sigma_ac2", &self.sigma_ac2)] {
            let (lo, _) = c.eigenvalues();
            if !(lo > 0.0) || !c.xx.is_finite() || !c.yy.is_finite() || !c.xy.is_finite() {
                return Err(format!("{name} must be positive definite"));
            }
        }
        if !(self.sigma_ac1.xx < self.sigma_ac2.xx && self.sigma_ac1.yy < self.sigma_ac2.yy) {
            return Err("endpoint anchors must be tighter than interior anchors".into());
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { sigma_ac1: self.sigma_ac1.scaled(k), sigma_ac2: self.sigma_ac2.scaled(k) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    WeightedCost,
    Equality,
    Inequality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub values: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub kind: BlockKind,
}

impl ResidualBlock {
    fn zeros(rows: usize, cols: usize, kind: BlockKind) -> Self {
        Self { values: DVector::zeros(rows), jacobian: DMatrix::zeros(rows, cols), kind }
    }

    pub fn cost(&self) -> f64 {
        self.values.norm_squared()
    }
}

/// How the measurement and G¹ blocks obtain their Jacobians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Analytic,
    ForwardDifference,
}

fn whitening(cov: &Cov2) -> Matrix2<f64> {
    let w = cov.inv_sqrt();
    Matrix2::new(w[0][0], w[0][1], w[1][0], w[1][1])
}

fn v2(p: Point2) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

fn put(block: &mut DMatrix<f64>, row: usize, col: usize, m: &Matrix2<f64>) {
    block.fixed_view_mut::<2, 2>(row, col).copy_from(m);
}

fn add_row(block: &mut DMatrix<f64>, row: usize, col: usize, g: RowVector2<f64>) {
    block[(row, col)] += g[0];
    block[(row, col + 1)] += g[1];
}

fn check_association(nodes: &NodeVector, points: &[DataPoint], assoc: &Association) -> Result<(), ModelError> {
    let expected = nodes.segments() + 1;
    if assoc.boundaries().len() != expected {
        return Err(ModelError::AssociationShape { got: assoc.boundaries().len(), expected });
    }
    for &b in assoc.boundaries() {
        if b >= points.len() {
            return Err(ModelError::AssociationOutOfRange { index: b, len: points.len() });
        }
    }
    Ok(())
}

/// Anchor residuals `Σ^{-1/2}(P_Idx(i) − A_i)`: first and last nodes against
/// `sigma_ac1`, then interior nodes in order against `sigma_ac2`.
pub fn anchor_block(
    nodes: &NodeVector,
    points: &[DataPoint],
    assoc: &Association,
    cfg: &AnchorConfig,
) -> Result<ResidualBlock, ModelError> {
    check_association(nodes, points, assoc)?;
    let m = nodes.segments();
    let mut block = ResidualBlock::zeros(2 * (m + 1), nodes.dim(), BlockKind::WeightedCost);
    let b = assoc.boundaries();

    let mut order = vec![(0, cfg.sigma_ac1), (m, cfg.sigma_ac1)];
    order.extend((1..m).map(|i| (i, cfg.sigma_ac2)));

    for (row, (i, cov)) in order.into_iter().enumerate() {
        let w = whitening(&cov);
        let r = w * v2(points[b[i]].pos - nodes.arc_nodes[i]);
        block.values[2 * row] = r[0];
        block.values[2 * row + 1] = r[1];
        put(&mut block.jacobian, 2 * row, nodes.arc_col(i), &(-w));
    }
    Ok(block)
}

/// Circle of a three-point arc together with the derivatives of its center
/// and radius with respect to `a1`, `a2` and `n`.
#[derive(Debug, Clone, Copy)]
pub struct ArcDerivatives {
    pub geometry: ArcGeometry,
    /// `∂center/∂(a1, a2, n)`, each a 2×2 block.
    pub d_center: [Matrix2<f64>; 3],
    /// `∂radius/∂(a1, a2, n)`.
    pub d_radius: [RowVector2<f64>; 3],
}

impl ArcDerivatives {
    /// Differentiates the bisector system `M c = b` with rows
    /// `(a2 − a1)ᵀ`, `(n − a1)ᵀ`, giving `dc = M⁻¹ (db − dM c)`.
    pub fn of(p: &ArcParams) -> Result<Self, GeometryError> {
        let geometry = circumcenter(p)?;
        let c = geometry.center;
        let u = p.a2 - p.a1;
        let w = p.n - p.a1;
        let m_inv = Matrix2::new(u.x, u.y, w.x, w.y).try_inverse().ok_or(GeometryError::DegenerateArc { sagitta: p.sagitta() })?;

        let ca1 = c - p.a1;
        let a2c = p.a2 - c;
        let nc = p.n - c;
        let d_a1 = m_inv * Matrix2::new(ca1.x, ca1.y, ca1.x, ca1.y);
        let d_a2 = m_inv * Matrix2::new(a2c.x, a2c.y, 0.0, 0.0);
        let d_n = m_inv * Matrix2::new(0.0, 0.0, nc.x, nc.y);

        let e = v2(p.a1 - c) / geometry.radius;
        let et = e.transpose();
        let d_radius = [et * (Matrix2::identity() - d_a1), -(et * d_a2), -(et * d_n)];
        Ok(Self { geometry, d_center: [d_a1, d_a2, d_n], d_radius })
    }
}

/// Raw arc-measurement residual `P^v − P = (r/‖P − X_c‖ − 1)(P − X_c)`.
pub fn measurement_residual(g: &ArcGeometry, p: Point2) -> Result<Point2, GeometryError> {
    let q = p - g.center;
    let d = q.norm();
    if d <= 1e-12 {
        return Err(GeometryError::AmbiguousProjection);
    }
    Ok(q * (g.radius / d - 1.0))
}

fn degenerate(segment: usize) -> impl Fn(GeometryError) -> ModelError {
    move |source| ModelError::Degenerate { segment, source }
}

fn measurement_values(nodes: &NodeVector, points: &[DataPoint], assoc: &Association) -> Result<DVector<f64>, ModelError> {
    let mut values = DVector::zeros(2 * assoc.measurement_count());
    let mut row = 0;
    for i in 0..nodes.segments() {
        let g = circumcenter(&nodes.segment(i)).map_err(degenerate(i))?;
        for j in assoc.range(i) {
            let r = measurement_residual(&g, points[j].pos).map_err(degenerate(i))?;
            let wr = points[j].cov.whiten(r);
            values[row] = wr.x;
            values[row + 1] = wr.y;
            row += 2;
        }
    }
    Ok(values)
}

/// Whitened arc-measurement residuals for every segment and every point in
/// `[Idx(i), Idx(i+1)]`. Shared boundary points appear in both adjacent
/// segments.
pub fn measurement_block(
    nodes: &NodeVector,
    points: &[DataPoint],
    assoc: &Association,
    mode: JacobianMode,
) -> Result<ResidualBlock, ModelError> {
    check_association(nodes, points, assoc)?;
    for i in 0..assoc.segments() {
        if assoc.range(i).count() < 3 {
            return Err(ModelError::EmptySegment { segment: i });
        }
    }
    if mode == JacobianMode::ForwardDifference {
        let values = measurement_values(nodes, points, assoc)?;
        let jacobian = forward_difference(&nodes.to_flat(), |x| measurement_values(&NodeVector::from_flat(x)?, points, assoc))?;
        return Ok(ResidualBlock { values, jacobian, kind: BlockKind::WeightedCost });
    }

    let rows = 2 * assoc.measurement_count();
    let mut block = ResidualBlock::zeros(rows, nodes.dim(), BlockKind::WeightedCost);
    let mut row = 0;
    for i in 0..nodes.segments() {
        let params = nodes.segment(i);
        let der = ArcDerivatives::of(&params).map_err(degenerate(i))?;
        let cols = nodes.segment_cols(i);
        let radius = der.geometry.radius;
        for j in assoc.range(i) {
            let pt = &points[j];
            let q = v2(pt.pos - der.geometry.center);
            let d = q.norm();
            if d <= 1e-12 {
                return Err(degenerate(i)(GeometryError::AmbiguousProjection));
            }
            let scale = radius / d - 1.0;
            let w = whitening(&pt.cov);
            let wr = w * (q * scale);
            block.values[row] = wr[0];
            block.values[row + 1] = wr[1];
            let qqt = q * q.transpose() * (radius / (d * d * d));
            for k in 0..3 {
                let dc = der.d_center[k];
                let dr = q * der.d_radius[k] / d + qqt * dc - dc * scale;
                put(&mut block.jacobian, row, cols[k], &(w * dr));
            }
            row += 2;
        }
    }
    Ok(block)
}

/// Middle-node equality `(A_{i+1} − A_i)ᵀ (N_i − (A_i + A_{i+1})/2)`, one row
/// per segment.
pub fn middle_node_constraint(nodes: &NodeVector) -> ResidualBlock {
    let m = nodes.segments();
    let mut block = ResidualBlock::zeros(m, nodes.dim(), BlockKind::Equality);
    for i in 0..m {
        let p = nodes.segment(i);
        let chord = p.a2 - p.a1;
        block.values[i] = chord.dot(p.n - p.a1.midpoint(p.a2));
        let [c1, c2, cn] = nodes.segment_cols(i);
        let row = |v: Point2| RowVector2::new(v.x, v.y);
        add_row(&mut block.jacobian, i, c1, row(p.a1 - p.n));
        add_row(&mut block.jacobian, i, c2, row(p.n - p.a2));
        add_row(&mut block.jacobian, i, cn, row(chord));
    }
    block
}

/// The two junction inner products `[v_b1ᵀ v_b2; v_g1ᵀ v_g2]` at `A_{i+1}`.
fn g1_pair(a: Point2, c1: Point2, c2: Point2) -> (f64, f64) {
    let vb1 = Point2::new(a.y - c1.y, c1.x - a.x);
    let vb2 = Point2::new(a.x - c2.x, a.y - c2.y);
    let vg1 = Point2::new(a.y - c2.y, c2.x - a.x);
    let vg2 = Point2::new(a.x - c1.x, a.y - c1.y);
    (vb1.dot(vb2), vg1.dot(vg2))
}

fn g1_values(nodes: &NodeVector) -> Result<DVector<f64>, ModelError> {
    let m = nodes.segments();
    let mut values = DVector::zeros(2 * m.saturating_sub(1));
    let mut centers = Vec::with_capacity(m);
    for i in 0..m {
        centers.push(circumcenter(&nodes.segment(i)).map_err(degenerate(i))?.center);
    }
    for i in 0..m.saturating_sub(1) {
        let (b, g) = g1_pair(nodes.arc_nodes[i + 1], centers[i], centers[i + 1]);
        values[2 * i] = b;
        values[2 * i + 1] = g;
    }
    Ok(values)
}

/// G¹ equality: orthogonality of each arc's radius vector at the shared node
/// with the neighbouring arc's tangent, two rows per junction (`2m − 2` total).
pub fn g1_constraint(nodes: &NodeVector, mode: JacobianMode) -> Result<ResidualBlock, ModelError> {
    let m = nodes.segments();
    if mode == JacobianMode::ForwardDifference {
        let values = g1_values(nodes)?;
        let jacobian = forward_difference(&nodes.to_flat(), |x| g1_values(&NodeVector::from_flat(x)?))?;
        return Ok(ResidualBlock { values, jacobian, kind: BlockKind::Equality });
    }
    let mut block = ResidualBlock::zeros(2 * m.saturating_sub(1), nodes.dim(), BlockKind::Equality);
    if m < 2 {
        return Ok(block);
    }
    let ders = (0..m).map(|i| ArcDerivatives::of(&nodes.segment(i)).map_err(degenerate(i))).collect::<Result<Vec<_>, _>>()?;

    for i in 0..m - 1 {
        let a = nodes.arc_nodes[i + 1];
        let (left, right) = (&ders[i], &ders[i + 1]);
        let (b, g) = g1_pair(a, left.geometry.center, right.geometry.center);
        block.values[2 * i] = b;
        block.values[2 * i + 1] = g;

        let d1 = a - left.geometry.center;
        let d2 = a - right.geometry.center;
        // b = d1.y d2.x − d1.x d2.y and g = −b
        let gb_d1 = RowVector2::new(-d2.y, d2.x);
        let gb_d2 = RowVector2::new(d1.y, -d1.x);

        let id = Matrix2::identity();
        let lc = nodes.segment_cols(i);
        let rc = nodes.segment_cols(i + 1);
        let terms: [(usize, RowVector2<f64>); 6] = [
            (lc[0], gb_d1 * -left.d_center[0]),
            (lc[1], gb_d1 * (id - left.d_center[1])),
            (lc[2], gb_d1 * -left.d_center[2]),
            (rc[0], gb_d2 * (id - right.d_center[0])),
            (rc[1], gb_d2 * -right.d_center[1]),
            (rc[2], gb_d2 * -right.d_center[2]),
        ];
        for (col, grad) in terms {
            add_row(&mut block.jacobian, 2 * i, col, grad);
            add_row(&mut block.jacobian, 2 * i + 1, col, -grad);
        }
    }
    Ok(block)
}

/// Minimum-length inequality `1 − (‖A_i − N_i‖ + ‖N_i − A_{i+1}‖)/L_min ≤ 0`.
pub fn min_length_constraint(nodes: &NodeVector, l_min: f64) -> Result<ResidualBlock, ModelError> {
    if !(l_min > 0.0) {
        return Err(ModelError::NonPositiveMinLength(l_min));
    }
    let m = nodes.segments();
    let mut block = ResidualBlock::zeros(m, nodes.dim(), BlockKind::Inequality);
    for i in 0..m {
        let p = nodes.segment(i);
        let la = p.a1 - p.n;
        let lb = p.n - p.a2;
        let (da, db) = (la.norm(), lb.norm());
        block.values[i] = 1.0 - (da + db) / l_min;
        let unit = |v: Point2, d: f64| if d > 0.0 { v * (1.0 / d) } else { Point2::ORIGIN };
        let ua = unit(la, da);
        let ub = unit(lb, db);
        let [c1, c2, cn] = nodes.segment_cols(i);
        let s = -1.0 / l_min;
        add_row(&mut block.jacobian, i, c1, RowVector2::new(ua.x, ua.y) * s);
        add_row(&mut block.jacobian, i, c2, RowVector2::new(-ub.x, -ub.y) * s);
        add_row(&mut block.jacobian, i, cn, RowVector2::new(ub.x - ua.x, ub.y - ua.y) * s);
    }
    Ok(block)
}

/// Forward-difference Jacobian with step `1e-6·max(1, |x_k|)`.
pub fn forward_difference<E>(x: &DVector<f64>, f: impl Fn(&DVector<f64>) -> Result<DVector<f64>, E>) -> Result<DMatrix<f64>, E> {
    let f0 = f(x)?;
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        let h = 1e-6 * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let fk = f(&xp)?;
        xp[k] = x[k];
        jac.set_column(k, &((fk - &f0) / h));
    }
    Ok(jac)
}

/// Central-difference Jacobian with a fixed absolute step.
pub fn central_difference<E>(x: &DVector<f64>, h: f64, f: impl Fn(&DVector<f64>) -> Result<DVector<f64>, E>) -> Result<DMatrix<f64>, E> {
    let f0 = f(x)?;
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}
