//! Planar primitives: points, 2×2 covariances and the three-point arc
//! parameterization (two arc nodes plus a middle node).

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Minimum standard deviation (meters) admitted by [`validate_cov`].
pub const SIGMA_MIN: f64 = 1e-3;

/// Minimum sagitta (meters) for three points to define a circle.
pub const SAGITTA_MIN: f64 = 1e-6;

/// A point (or displacement) in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Counterclockwise quarter turn.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn midpoint(self, other: Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn rotated(self, theta: f64) -> Point2 {
        let (s, c) = theta.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Symmetric 2×2 covariance in m².
///
/// Values built through [`validate_cov`] have eigenvalues of at least
/// `SIGMA_MIN²`, so the inverse and inverse square root are always bounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub const IDENTITY: Cov2 = Cov2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    /// Builds a covariance without validation. Callers outside this crate
    /// should prefer [`validate_cov`].
    pub const fn new_unchecked(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn diag(xx: f64, yy: f64) -> Self {
        Self { xx, xy: 0.0, yy }
    }

    pub fn isotropic(sigma: f64) -> Self {
        Self::diag(sigma * sigma, sigma * sigma)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { xx: self.xx * k, xy: self.xy * k, yy: self.yy * k }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let rad = half_diff.hypot(self.xy);
        (mean - rad, mean + rad)
    }

    /// Eigen-decomposition `(λ_small, λ_large, angle of the λ_large axis)`.
    pub fn principal_axes(&self) -> (f64, f64, f64) {
        let (lo, hi) = self.eigenvalues();
        let angle = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        (lo, hi, angle)
    }

    pub fn inverse(&self) -> Cov2 {
        let d = self.det();
        Cov2 { xx: self.yy / d, xy: -self.xy / d, yy: self.xx / d }
    }

    /// Symmetric inverse square root `Σ^{-1/2}`, as row-major `[[a, b], [b, c]]`.
    ///
    /// Closed form: for symmetric positive definite `M` with `s = √det M` and
    /// `t = √(tr M + 2s)`, `√M = (M + s·I)/t`.
    pub fn inv_sqrt(&self) -> [[f64; 2]; 2] {
        let s = self.det().sqrt();
        let t = (self.xx + self.yy + 2.0 * s).sqrt();
        // sqrt(Σ) = (Σ + sI)/t, then invert the 2×2.
        let a = (self.xx + s) / t;
        let b = self.xy / t;
        let c = (self.yy + s) / t;
        let det = a * c - b * b;
        [[c / det, -b / det], [-b / det, a / det]]
    }

    /// `Σ^{-1/2} r`.
    pub fn whiten(&self, r: Point2) -> Point2 {
        let w = self.inv_sqrt();
        Point2::new(w[0][0] * r.x + w[0][1] * r.y, w[1][0] * r.x + w[1][1] * r.y)
    }

    pub fn to_array(&self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }
}

/// Symmetrizes `raw` and clamps its eigenvalues to at least `SIGMA_MIN²`.
///
/// Returns the repaired covariance and whether any repair beyond
/// symmetrization was needed (an asymmetric input also counts as repaired when
/// the asymmetry exceeds 1e-12).
pub fn validate_cov(raw: [[f64; 2]; 2]) -> Result<(Cov2, bool), GeometryError> {
    for (i, row) in raw.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(GeometryError::NonFiniteCovariance { row: i, col: j });
            }
        }
    }
    let off = 0.5 * (raw[0][1] + raw[1][0]);
    let mut repaired = (raw[0][1] - raw[1][0]).abs() > 1e-12;
    let sym = Cov2 { xx: raw[0][0], xy: off, yy: raw[1][1] };

    let floor = SIGMA_MIN * SIGMA_MIN;
    let (lo, hi) = sym.eigenvalues();
    if lo >= floor {
        return Ok((sym, repaired));
    }
    repaired = true;
    let (_, _, angle) = sym.principal_axes();
    let hi = hi.max(floor);
    let lo = lo.max(floor);
    let (s, c) = angle.sin_cos();
    // V diag(hi, lo) Vᵀ with V = [[c, -s], [s, c]]
    let cov = Cov2 { xx: hi * c * c + lo * s * s, xy: (hi - lo) * c * s, yy: hi * s * s + lo * c * c };
    Ok((cov, repaired))
}

/// Squared Mahalanobis distance `rᵀ Σ⁻¹ r`.
pub fn mahalanobis_sq(r: Point2, cov: &Cov2) -> f64 {
    let d = cov.det();
    (cov.yy * r.x * r.x - 2.0 * cov.xy * r.x * r.y + cov.xx * r.y * r.y) / d
}

/// Three-point arc: arc nodes `a1`, `a2` and middle node `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcParams {
    pub a1: Point2,
    pub a2: Point2,
    pub n: Point2,
}

impl ArcParams {
    pub fn new(a1: Point2, a2: Point2, n: Point2) -> Self {
        Self { a1, a2, n }
    }

    /// Perpendicular distance of the middle node from the chord `a1–a2`.
    /// For a zero-length chord this is the distance from `n` to `a1`.
    pub fn sagitta(&self) -> f64 {
        let chord = self.a2 - self.a1;
        let len = chord.norm();
        let w = self.n - self.a1;
        if len == 0.0 {
            return w.norm();
        }
        (chord.cross(w) / len).abs()
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Self {
        Self { a1: f(self.a1), a2: f(self.a2), n: f(self.n) }
    }
}

/// Center and radius of the circle through an [`ArcParams`] triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcGeometry {
    pub center: Point2,
    pub radius: f64,
}

/// Circumcenter via the perpendicular-bisector system, solved in a frame
/// anchored at `a1`:
///
/// ```text
/// (a2 - a1)ᵀ y = |a2 - a1|² / 2
/// (n  - a1)ᵀ y = |n  - a1|² / 2,     center = a1 + y
/// ```
pub fn circumcenter(p: &ArcParams) -> Result<ArcGeometry, GeometryError> {
    let sagitta = p.sagitta();
    let u = p.a2 - p.a1;
    let w = p.n - p.a1;
    if !(sagitta >= SAGITTA_MIN) || u.norm() < SAGITTA_MIN {
        return Err(GeometryError::DegenerateArc { sagitta });
    }
    let det = u.cross(w);
    let bu = 0.5 * u.norm_sq();
    let bw = 0.5 * w.norm_sq();
    let y = Point2::new((bu * w.y - bw * u.y) / det, (u.x * bw - w.x * bu) / det);
    let center = p.a1 + y;
    let radius = y.norm();
    if !radius.is_finite() || !center.is_finite() {
        return Err(GeometryError::DegenerateArc { sagitta });
    }
    Ok(ArcGeometry { center, radius })
}

/// Radial projection of `p` onto the circle of `g`.
pub fn virtual_point(g: &ArcGeometry, p: Point2) -> Result<Point2, GeometryError> {
    let d = p - g.center;
    let dist = d.norm();
    if dist <= 1e-12 {
        return Err(GeometryError::AmbiguousProjection);
    }
    Ok(g.center + d * (g.radius / dist))
}

/// Maps `angle` into `[0, 2π)`.
pub fn wrap_positive(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Maps `angle` into `(-π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let a = wrap_positive(angle + PI) - PI;
    if a <= -PI {
        a + TAU
    } else {
        a
    }
}

/// Angular extent of the arc `a1 → n → a2` on its circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSpan {
    pub geometry: ArcGeometry,
    /// Polar angle of `a1` about the center, in `(-π, π]`.
    pub start_angle: f64,
    /// Signed sweep from `a1` to `a2`; positive is counterclockwise.
    pub sweep: f64,
}

impl ArcSpan {
    pub fn of(p: &ArcParams) -> Result<Self, GeometryError> {
        let geometry = circumcenter(p)?;
        Ok(Self::with_geometry(p, geometry))
    }

    pub fn with_geometry(p: &ArcParams, geometry: ArcGeometry) -> Self {
        let c = geometry.center;
        let t1 = (p.a1 - c).angle();
        let to_end = wrap_positive((p.a2 - c).angle() - t1);
        let to_mid = wrap_positive((p.n - c).angle() - t1);
        let sweep = if to_mid <= to_end { to_end } else { to_end - TAU };
        Self { geometry, start_angle: wrap_pi(t1), sweep }
    }

    pub fn end_angle(&self) -> f64 {
        wrap_pi(self.start_angle + self.sweep)
    }

    pub fn length(&self) -> f64 {
        self.geometry.radius * self.sweep.abs()
    }

    /// Point at fraction `t ∈ [0, 1]` of the sweep.
    pub fn point_at(&self, t: f64) -> Point2 {
        let theta = self.start_angle + t * self.sweep;
        self.geometry.center + Point2::from_angle(theta) * self.geometry.radius
    }

    /// Unit tangent at fraction `t`, oriented along the direction of travel.
    pub fn tangent_at(&self, t: f64) -> Point2 {
        let theta = self.start_angle + t * self.sweep;
        let dir = Point2::from_angle(theta).perp();
        if self.sweep >= 0.0 {
            dir
        } else {
            -dir
        }
    }
}
