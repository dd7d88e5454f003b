//! Constrained nonlinear least squares.
//!
//! Minimizes `F(x) = ½‖f(x)‖²` subject to `c_eq(x) = 0` and `c_ineq(x) ≤ 0`
//! with an augmented-Lagrangian outer loop. Each subproblem is itself a
//! least-squares problem over the stacked residual
//!
//! ```text
//! f_aug = [ f ;  √μ (c_eq + λ_eq/μ) ;  √μ max(0, c_ineq + λ_ineq/μ) ]
//! ```
//!
//! and is solved by damped Gauss-Newton with Armijo backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EvaluationError, SolverError};

/// Residuals (and optionally Jacobians) of a problem at one iterate.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: DVector<f64>,
    pub equality: DVector<f64>,
    pub inequality: DVector<f64>,
    pub jacobians: Option<Jacobians>,
}

#[derive(Debug, Clone)]
pub struct Jacobians {
    pub cost: DMatrix<f64>,
    pub equality: DMatrix<f64>,
    pub inequality: DMatrix<f64>,
}

impl Evaluation {
    /// `max |c_eq|` and the largest positive part of `c_ineq`.
    pub fn violation(&self) -> (f64, f64) {
        let eq = self.equality.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ineq = self.inequality.iter().fold(0.0f64, |m, v| m.max(*v));
        (eq, ineq.max(0.0))
    }

    pub fn max_violation(&self) -> f64 {
        let (eq, ineq) = self.violation();
        eq.max(ineq)
    }

    pub fn objective(&self) -> f64 {
        0.5 * self.cost.norm_squared()
    }
}

/// A constrained least-squares problem.
///
/// Residual and constraint dimensions must not change between calls, and
/// `evaluate` must be a pure function of `x` between calls to `refresh`.
pub trait CnlsProblem {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &DVector<f64>, with_jacobians: bool) -> Result<Evaluation, EvaluationError>;

    /// Called at an accepted iterate when the solver allows the problem to
    /// update data that the residuals depend on (for example, a data
    /// association). Returns `true` if anything changed.
    fn refresh(&mut self, _x: &DVector<f64>) -> bool {
        false
    }
}

/// When [`CnlsProblem::refresh`] is invoked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshPolicy {
    /// Before every outer iteration after the first.
    #[default]
    OuterIteration,
    /// After every accepted inner step.
    AcceptedStep,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub g_tol: f64,
    pub x_tol: f64,
    pub c_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub initial_damping: f64,
    pub refresh: RefreshPolicy,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_outer_iterations: 50,
            max_inner_iterations: 100,
            g_tol: 1e-8,
            x_tol: 1e-10,
            c_tol: 1e-8,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            initial_damping: 1e-4,
            refresh: RefreshPolicy::OuterIteration,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("g_tol", self.g_tol),
            ("x_tol", self.x_tol),
            ("c_tol", self.c_tol),
            ("initial_penalty", self.initial_penalty),
            ("initial_damping", self.initial_damping),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(format!("penalty_growth must exceed 1, got {}", self.penalty_growth));
        }
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 {
            return Err("iteration limits must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    StepStall,
    EvaluationFailure,
}

/// One accepted inner step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub outer: usize,
    /// Augmented objective after the step.
    pub merit: f64,
    pub step_norm: f64,
    /// `hᵀ J_augᵀ f_aug` before the step; negative for a descent direction.
    pub directional_derivative: f64,
}

/// State at the end of one outer iteration; `penalty` is the value carried
/// into the next iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub max_violation: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DVector<f64>,
    /// `½‖f‖²` at `x`.
    pub cost: f64,
    pub max_equality_violation: f64,
    pub max_inequality_violation: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub termination: Termination,
    pub steps: Vec<StepRecord>,
    pub outers: Vec<OuterRecord>,
    pub final_penalty: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// Accepted steps whose direction was not a descent direction.
    pub fn non_descent_steps(&self) -> usize {
        self.steps.iter().filter(|s| !(s.directional_derivative < 0.0)).count()
    }
}

/// Solves `(JᵀJ + λI) h = −Jᵀf`.
pub fn gauss_newton_step(jac: &DMatrix<f64>, f: &DVector<f64>, lambda: f64) -> Result<DVector<f64>, SolverError> {
    if jac.nrows() != f.len() {
        return Err(SolverError::Dimension(format!("jacobian has {} rows, residual has {}", jac.nrows(), f.len())));
    }
    let mut normal = jac.tr_mul(jac);
    let rhs = -jac.tr_mul(f);
    solve_normal(&mut normal, &rhs, lambda)
}

fn solve_normal(normal: &mut DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Result<DVector<f64>, SolverError> {
    let n = normal.nrows();
    for k in 0..n {
        normal[(k, k)] += lambda;
    }
    let max_diag = (0..n).map(|k| normal[(k, k)]).fold(0.0f64, f64::max);
    let chol = normal.clone().cholesky().ok_or(SolverError::SingularNormalEquations)?;
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-14 * max_diag) {
        return Err(SolverError::SingularNormalEquations);
    }
    let h = chol.solve(rhs);
    if h.iter().all(|v| v.is_finite()) {
        Ok(h)
    } else {
        Err(SolverError::SingularNormalEquations)
    }
}

/// `hᵀ(Jᵀf) < 0`.
pub fn descent_check(jac: &DMatrix<f64>, f: &DVector<f64>, h: &DVector<f64>) -> bool {
    h.dot(&jac.tr_mul(f)) < 0.0
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP_FRACTION: f64 = 1.0 / 1048576.0; // 2^-20
const MAX_DAMPING: f64 = 1e16;

struct Multipliers {
    eq: DVector<f64>,
    ineq: DVector<f64>,
    mu: f64,
}

impl Multipliers {
    fn merit_residual(&self, ev: &Evaluation) -> DVector<f64> {
        let s = self.mu.sqrt();
        let nf = ev.cost.len();
        let ne = ev.equality.len();
        let ni = ev.inequality.len();
        let mut r = DVector::zeros(nf + ne + ni);
        r.rows_mut(0, nf).copy_from(&ev.cost);
        for k in 0..ne {
            r[nf + k] = s * (ev.equality[k] + self.eq[k] / self.mu);
        }
        for k in 0..ni {
            r[nf + ne + k] = s * (ev.inequality[k] + self.ineq[k] / self.mu).max(0.0);
        }
        r
    }

    fn merit_jacobian(&self, ev: &Evaluation) -> DMatrix<f64> {
        let j = ev.jacobians.as_ref().expect("jacobians requested");
        let s = self.mu.sqrt();
        let nf = ev.cost.len();
        let ne = ev.equality.len();
        let ni = ev.inequality.len();
        let n = j.cost.ncols();
        let mut out = DMatrix::zeros(nf + ne + ni, n);
        out.rows_mut(0, nf).copy_from(&j.cost);
        if ne > 0 {
            out.rows_mut(nf, ne).copy_from(&(&j.equality * s));
        }
        for k in 0..ni {
            if ev.inequality[k] + self.ineq[k] / self.mu > 0.0 {
                out.row_mut(nf + ne + k).copy_from(&(j.inequality.row(k) * s));
            }
        }
        out
    }

    fn merit(&self, ev: &Evaluation) -> f64 {
        0.5 * self.merit_residual(ev).norm_squared()
    }

    fn update(&mut self, ev: &Evaluation) {
        self.eq += &ev.equality * self.mu;
        for k in 0..self.ineq.len() {
            self.ineq[k] = (self.ineq[k] + self.mu * ev.inequality[k]).max(0.0);
        }
    }
}

enum InnerExit {
    Gradient,
    Step,
    Stall,
    MaxIterations,
}

/// Runs the augmented-Lagrangian / damped Gauss-Newton solver from `x0`.
pub fn solve<P: CnlsProblem + ?Sized>(problem: &mut P, x0: &DVector<f64>, settings: &SolverSettings) -> SolveReport {
    let mut report = SolveReport {
        x: x0.clone(),
        cost: f64::NAN,
        max_equality_violation: f64::NAN,
        max_inequality_violation: f64::NAN,
        inner_iterations: 0,
        outer_iterations: 0,
        termination: Termination::EvaluationFailure,
        steps: Vec::new(),
        outers: Vec::new(),
        final_penalty: settings.initial_penalty,
    };
    if x0.len() != problem.dim() || x0.iter().any(|v| !v.is_finite()) {
        return report;
    }
    let mut ev = match problem.evaluate(x0, true) {
        Ok(ev) => ev,
        Err(_) => return report,
    };
    let mut x = x0.clone();
    let mut mult =
        Multipliers { eq: DVector::zeros(ev.equality.len()), ineq: DVector::zeros(ev.inequality.len()), mu: settings.initial_penalty };
    let mut prev_violation = ev.max_violation();
    let mut termination = Termination::MaxIterations;
    let mut stalled_outers = 0;

    for outer in 0..settings.max_outer_iterations {
        report.outer_iterations = outer + 1;
        if outer > 0 && settings.refresh == RefreshPolicy::OuterIteration && problem.refresh(&x) {
            match problem.evaluate(&x, true) {
                Ok(e) => ev = e,
                Err(_) => {
                    termination = Termination::EvaluationFailure;
                    break;
                }
            }
        }

        let (exit, accepted) = inner_loop(problem, &mut x, &mut ev, &mult, settings, outer, &mut report);
        let violation = ev.max_violation();
        let inner_settled = matches!(exit, InnerExit::Gradient | InnerExit::Step | InnerExit::Stall);
        if violation <= settings.c_tol && inner_settled {
            report.outers.push(OuterRecord { max_violation: violation, penalty: mult.mu });
            termination = Termination::Converged;
            break;
        }
        if accepted == 0 && matches!(exit, InnerExit::Stall) {
            stalled_outers += 1;
            if stalled_outers >= 3 && violation > settings.c_tol {
                report.outers.push(OuterRecord { max_violation: violation, penalty: mult.mu });
                termination = Termination::StepStall;
                break;
            }
        } else {
            stalled_outers = 0;
        }

        mult.update(&ev);
        if violation > 0.25 * prev_violation {
            mult.mu *= settings.penalty_growth;
        }
        report.outers.push(OuterRecord { max_violation: violation, penalty: mult.mu });
        prev_violation = violation;
    }

    let (eq, ineq) = ev.violation();
    report.x = x;
    report.cost = ev.objective();
    report.max_equality_violation = eq;
    report.max_inequality_violation = ineq;
    report.termination = termination;
    report.final_penalty = mult.mu;
    report
}

fn inner_loop<P: CnlsProblem + ?Sized>(
    problem: &mut P,
    x: &mut DVector<f64>,
    ev: &mut Evaluation,
    mult: &Multipliers,
    settings: &SolverSettings,
    outer: usize,
    report: &mut SolveReport,
) -> (InnerExit, usize) {
    let mut damping = settings.initial_damping;
    let mut accepted = 0;
    for _ in 0..settings.max_inner_iterations {
        let r = mult.merit_residual(ev);
        let jac = mult.merit_jacobian(ev);
        let grad = jac.tr_mul(&r);
        if grad.amax() <= settings.g_tol {
            return (InnerExit::Gradient, accepted);
        }
        report.inner_iterations += 1;
        let merit = 0.5 * r.norm_squared();
        let normal = jac.tr_mul(&jac);

        let step = loop {
            if damping > MAX_DAMPING {
                break None;
            }
            let h = match solve_normal(&mut normal.clone(), &(-&grad), damping) {
                Ok(h) => h,
                Err(_) => {
                    damping *= 10.0;
                    continue;
                }
            };
            let slope = h.dot(&grad);
            if !(slope < 0.0) {
                damping *= 10.0;
                continue;
            }
            match line_search(problem, x, &h, merit, slope, mult) {
                Some((alpha, trial, trial_merit)) => break Some((h * alpha, trial, trial_merit, slope)),
                None => damping *= 10.0,
            }
        };
        let Some((dx, trial_ev, merit_new, slope)) = step else {
            return (InnerExit::Stall, accepted);
        };

        *x += &dx;
        *ev = trial_ev;
        accepted += 1;
        damping = (damping / 10.0).max(settings.initial_damping);
        let step_norm = dx.norm();
        report.steps.push(StepRecord { outer, merit: merit_new, step_norm, directional_derivative: slope });

        if settings.refresh == RefreshPolicy::AcceptedStep && problem.refresh(x) {
            match problem.evaluate(x, true) {
                Ok(e) => *ev = e,
                Err(_) => return (InnerExit::Stall, accepted),
            }
        }
        if step_norm <= settings.x_tol * (1.0 + x.norm()) {
            return (InnerExit::Step, accepted);
        }
    }
    (InnerExit::MaxIterations, accepted)
}

fn line_search<P: CnlsProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    h: &DVector<f64>,
    merit: f64,
    slope: f64,
    mult: &Multipliers,
) -> Option<(f64, Evaluation, f64)> {
    let mut alpha = 1.0;
    while alpha >= MIN_STEP_FRACTION {
        let trial = x + h * alpha;
        if let Ok(ev) = problem.evaluate(&trial, true) {
            let m = mult.merit(&ev);
            if m.is_finite() && m <= merit + ARMIJO * alpha * slope {
                return Some((alpha, ev, m));
            }
        }
        alpha *= 0.5;
    }
    None
}
