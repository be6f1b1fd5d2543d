//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//!     minimize    1/2 u' P u + q' u
//!     subject to  lower <= u <= upper
//!                 A u >= c
//! ```
//!
//! [`solve_qp`] is a dual active-set method (Goldfarb-Idnani). It starts from
//! the unconstrained minimizer and adds violated constraints one at a time
//! while keeping the dual iterate feasible, so it needs no feasible starting
//! point and reports an inconsistent constraint set as [`QpStatus::Infeasible`].
//! Each iteration re-factors the active set from scratch: the instances here
//! have at most a few dozen variables.
//!
//! [`brute_force_qp`] enumerates a grid over the box and is only meant as a
//! test oracle for problems of dimension three or less.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("cost matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotConvex(f64),
    #[error("no convergence after {iterations} iterations (active set size {active}, worst violation {violation:e})")]
    NonConvergence {
        iterations: usize,
        active: usize,
        violation: f64,
    },
    #[error("grid oracle supports at most 3 variables, got {0}")]
    DimensionTooLarge(usize),
    #[error("grid oracle needs a finite box and a positive resolution")]
    UnboundedGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Inequality rows, `a * u >= c`.
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl QpProblem {
    /// Box-constrained problem without inequality rows.
    pub fn boxed(p: DMatrix<f64>, q: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        let n = q.len();
        QpProblem {
            p,
            q,
            lower,
            upper,
            a: DMatrix::zeros(0, n),
            c: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn rows(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.p * u)) + self.q.dot(u)
    }

    /// Largest violation of the box and the inequality rows at `u` (0 when feasible).
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            worst = worst.max(self.lower[i] - u[i]).max(u[i] - self.upper[i]);
        }
        let au = &self.a * u;
        for j in 0..self.rows() {
            worst = worst.max(self.c[j] - au[j]);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        let bad = |m: String| Err(QpError::Malformed(m));
        if self.p.shape() != (n, n) {
            return bad(format!("P is {:?}, expected {n}x{n}", self.p.shape()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return bad("box bounds must have one entry per variable".into());
        }
        if self.a.ncols() != n || self.a.nrows() != self.c.len() {
            return bad(format!(
                "inequality rows are {:?} with {} right-hand sides",
                self.a.shape(),
                self.c.len()
            ));
        }
        if self.p.iter().chain(self.q.iter()).chain(self.a.iter()).chain(self.c.iter()).any(|v| !v.is_finite()) {
            return bad("non-finite entry in P, q, A or c".into());
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return bad(format!("box for variable {i} is [{}, {}]", self.lower[i], self.upper[i]));
            }
        }
        let scale = self.p.amax().max(1.0);
        let asym = (&self.p - self.p.transpose()).amax();
        if asym > 1e-9 * scale {
            return bad(format!("P is not symmetric (max asymmetry {asym:e})"));
        }
        if n > 0 {
            let min_eig = self.p.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-10 * scale {
                return Err(QpError::NotConvex(min_eig));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// The box and rows admit no common point.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// Multipliers of `u >= lower`, one per variable (zero when inactive).
    pub lower_multipliers: DVector<f64>,
    /// Multipliers of `u <= upper`.
    pub upper_multipliers: DVector<f64>,
    /// Multipliers of the inequality rows.
    pub row_multipliers: DVector<f64>,
    pub iterations: usize,
    /// Ridge added to P when it was numerically singular.
    pub regularization: f64,
}

/// Which original constraint an internal normal came from.
#[derive(Debug, Clone, Copy)]
enum Origin {
    Lower(usize),
    Upper(usize),
    Row(usize),
}

struct Constraints {
    normals: DMatrix<f64>,
    rhs: Vec<f64>,
    origin: Vec<Origin>,
}

fn gather_constraints(p: &QpProblem) -> Constraints {
    let n = p.dim();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let mut origin = Vec::new();
    for i in 0..n {
        if p.lower[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            cols.push(e);
            rhs.push(p.lower[i]);
            origin.push(Origin::Lower(i));
        }
        if p.upper[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = -1.0;
            cols.push(e);
            rhs.push(-p.upper[i]);
            origin.push(Origin::Upper(i));
        }
    }
    for j in 0..p.rows() {
        cols.push(p.a.row(j).transpose());
        rhs.push(p.c[j]);
        origin.push(Origin::Row(j));
    }
    let normals = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Constraints { normals, rhs, origin }
}

/// Cholesky factor of P, adding a small ridge if P is singular.
fn factor(p: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    if let Some(ch) = p.clone().cholesky() {
        return (ch.l(), 0.0);
    }
    let scale = p.amax().max(1.0);
    let n = p.nrows();
    let mut ridge = 1e-12 * scale;
    loop {
        let shifted = p + DMatrix::identity(n, n) * ridge;
        if let Some(ch) = shifted.cholesky() {
            return (ch.l(), ridge);
        }
        ridge *= 10.0;
    }
}

/// Solve the QP to tolerance `tol` (stationarity and feasibility).
pub fn solve_qp(problem: &QpProblem, tol: f64) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.dim();
    let cons = gather_constraints(problem);
    let m = cons.rhs.len();
    let max_iter = 10 * (n + m).max(1);

    let (l, regularization) = factor(&problem.p);
    let solve_l = |v: &DVector<f64>| l.solve_lower_triangular(v).expect("Cholesky factor is nonsingular");
    let solve_lt = |v: &DVector<f64>| {
        l.tr_solve_lower_triangular(v)
            .expect("Cholesky factor is nonsingular")
    };

    // d_j = L^-1 c_j, so that c_i' P^-1 c_j = d_i' d_j
    let d = l
        .solve_lower_triangular(&cons.normals)
        .expect("Cholesky factor is nonsingular");
    let col_norm: Vec<f64> = (0..m).map(|j| cons.normals.column(j).norm().max(f64::MIN_POSITIVE)).collect();

    // unconstrained minimizer
    let mut x = -solve_lt(&solve_l(&problem.q));
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];
    let mut iterations = 0;
    let feas_tol = |j: usize| 1e-2 * tol * (1.0 + cons.rhs[j].abs());

    let slack = |x: &DVector<f64>, j: usize| cons.normals.column(j).dot(x) - cons.rhs[j];

    let status = 'outer: loop {
        // most violated constraint, normalized by its row norm
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..m {
            if is_active[j] {
                continue;
            }
            let s = slack(&x, j);
            if s < -feas_tol(j) {
                let score = s / col_norm[j];
                if pick.is_none_or(|(_, best)| score < best) {
                    pick = Some((j, score));
                }
            }
        }
        let Some((p, _)) = pick else {
            break QpStatus::Optimal;
        };
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::NonConvergence {
                    iterations: iterations - 1,
                    active: active.len(),
                    violation: problem.max_violation(&x),
                });
            }
            let d_p = d.column(p).into_owned();
            let (r, res) = if active.is_empty() {
                (DVector::zeros(0), d_p.clone())
            } else {
                let d_a = d.select_columns(&active);
                let qr = d_a.qr();
                let q_thin = qr.q();
                let proj = q_thin.transpose() * &d_p;
                let r = qr
                    .r()
                    .solve_upper_triangular(&proj)
                    .unwrap_or_else(|| DVector::zeros(active.len()));
                let res = &d_p - &q_thin * proj;
                (r, res)
            };
            let curvature = res.norm_squared();
            let primal_step_exists = curvature > 1e-14 * d_p.norm_squared().max(1e-300);

            // largest dual step keeping active multipliers nonnegative
            let mut dual_block: Option<(usize, f64)> = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 1e-14 {
                    let t = mult[k] / rk;
                    if dual_block.is_none_or(|(_, best)| t < best) {
                        dual_block = Some((k, t));
                    }
                }
            }

            let s_p = slack(&x, p);
            let full_step = if primal_step_exists { Some(-s_p / curvature) } else { None };

            match (full_step, dual_block) {
                (None, None) => break 'outer QpStatus::Infeasible,
                (None, Some((k, t))) => {
                    // pure dual step, then drop the blocking constraint
                    for (mk, rk) in mult.iter_mut().zip(r.iter()) {
                        *mk -= t * rk;
                    }
                    u_p += t;
                    is_active[active[k]] = false;
                    active.remove(k);
                    mult.remove(k);
                }
                (Some(t_full), block) => {
                    let z = solve_lt(&res);
                    let (t, drop) = match block {
                        Some((k, t_dual)) if t_dual < t_full => (t_dual, Some(k)),
                        _ => (t_full, None),
                    };
                    x += &z * t;
                    for (mk, rk) in mult.iter_mut().zip(r.iter()) {
                        *mk -= t * rk;
                    }
                    u_p += t;
                    match drop {
                        None => {
                            active.push(p);
                            mult.push(u_p);
                            is_active[p] = true;
                            continue 'outer;
                        }
                        Some(k) => {
                            is_active[active[k]] = false;
                            active.remove(k);
                            mult.remove(k);
                        }
                    }
                }
            }
        }
    };

    let mut lower_multipliers = DVector::zeros(n);
    let mut upper_multipliers = DVector::zeros(n);
    let mut row_multipliers = DVector::zeros(problem.rows());
    for (&j, &mu) in active.iter().zip(mult.iter()) {
        let mu = mu.max(0.0);
        match cons.origin[j] {
            Origin::Lower(i) => lower_multipliers[i] = mu,
            Origin::Upper(i) => upper_multipliers[i] = mu,
            Origin::Row(r) => row_multipliers[r] = mu,
        }
    }
    Ok(QpSolution {
        objective: problem.objective(&x),
        x,
        status,
        lower_multipliers,
        upper_multipliers,
        row_multipliers,
        iterations,
        regularization,
    })
}

/// Worst violation of the KKT conditions at `sol`: stationarity, primal and
/// dual feasibility, and complementary slackness.
pub fn kkt_residual(problem: &QpProblem, sol: &QpSolution) -> f64 {
    let x = &sol.x;
    let mut grad = &problem.p * x + &problem.q;
    grad -= &sol.lower_multipliers;
    grad += &sol.upper_multipliers;
    grad -= problem.a.transpose() * &sol.row_multipliers;
    let mut worst = grad.amax();
    worst = worst.max(problem.max_violation(x));
    let au = &problem.a * x;
    for i in 0..problem.dim() {
        let lo = sol.lower_multipliers[i];
        let hi = sol.upper_multipliers[i];
        worst = worst.max(-lo).max(-hi);
        if problem.lower[i].is_finite() {
            worst = worst.max((lo * (x[i] - problem.lower[i])).abs());
        }
        if problem.upper[i].is_finite() {
            worst = worst.max((hi * (problem.upper[i] - x[i])).abs());
        }
    }
    for j in 0..problem.rows() {
        let mu = sol.row_multipliers[j];
        worst = worst.max(-mu).max((mu * (au[j] - problem.c[j])).abs());
    }
    worst
}

/// Exhaustive grid search over the box at spacing `resolution`.
///
/// Upper box ends are always included as grid points. Points violating an
/// inequality row are rejected; if none survive the result is infeasible.
pub fn brute_force_qp(problem: &QpProblem, resolution: f64) -> Result<QpSolution, QpError> {
    let n = problem.dim();
    if n > 3 {
        return Err(QpError::DimensionTooLarge(n));
    }
    if !(resolution > 0.0)
        || problem.lower.iter().chain(problem.upper.iter()).any(|v| !v.is_finite())
    {
        return Err(QpError::UnboundedGrid);
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let (lo, hi) = (problem.lower[i], problem.upper[i]);
            let steps = ((hi - lo) / resolution + 1e-9).floor() as usize;
            let mut pts: Vec<f64> = (0..=steps).map(|k| lo + k as f64 * resolution).collect();
            if hi - pts[steps] > 1e-12 {
                pts.push(hi);
            }
            pts
        })
        .collect();
    let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = dims.iter().product();

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut u = DVector::zeros(n);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        for i in 0..n {
            u[i] = axes[i][idx[i]];
        }
        let feasible = (0..problem.rows()).all(|j| problem.a.row(j).transpose().dot(&u) >= problem.c[j] - 1e-12);
        if feasible {
            let f = problem.objective(&u);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, u.clone()));
            }
        }
        // odometer increment
        for i in (0..n).rev() {
            idx[i] += 1;
            if idx[i] < dims[i] {
                break;
            }
            idx[i] = 0;
        }
    }

    let zeros = DVector::zeros(n);
    let (objective, x, status) = match best {
        Some((f, x)) => (f, x, QpStatus::Optimal),
        None => (f64::INFINITY, zeros.clone(), QpStatus::Infeasible),
    };
    Ok(QpSolution {
        x,
        objective,
        status,
        lower_multipliers: zeros.clone(),
        upper_multipliers: zeros,
        row_multipliers: DVector::zeros(problem.rows()),
        iterations: total,
        regularization: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn interior_minimum() {
        let p = QpProblem::boxed(DMatrix::identity(3, 3), DVector::zeros(3), dv(&[-1.0; 3]), dv(&[1.0; 3]));
        let s = solve_qp(&p, DEFAULT_TOL).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.x.amax(), 0.0, epsilon = 1e-12);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn one_dimensional_projection() {
        // (u - 21)^2 = u^2 - 42 u + const
        let p = QpProblem::boxed(DMatrix::from_element(1, 1, 2.0), dv(&[-42.0]), dv(&[8.0]), dv(&[11.25]));
        let s = solve_qp(&p, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(s.x[0], 11.25, epsilon = 1e-12);
        assert_abs_diff_eq!(s.upper_multipliers[0], 2.0 * (21.0 - 11.25), epsilon = 1e-9);
        assert!(kkt_residual(&p, &s) <= 1e-8);
        let oracle = brute_force_qp(&p, 0.001).unwrap();
        assert_abs_diff_eq!(oracle.x[0], 11.25, epsilon = 1e-3);
    }

    #[test]
    fn inequality_row_binds() {
        // min x^2 + y^2 s.t. x + 2y >= 1  ->  (0.2, 0.4)
        let mut p = QpProblem::boxed(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            dv(&[f64::NEG_INFINITY; 2]),
            dv(&[f64::INFINITY; 2]),
        );
        p.a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        p.c = dv(&[1.0]);
        let s = solve_qp(&p, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(s.x[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 0.4, epsilon = 1e-12);
        assert!(s.row_multipliers[0] > 0.0);
        assert!(kkt_residual(&p, &s) <= 1e-8);
    }

    #[test]
    fn detects_infeasibility() {
        let mut p = QpProblem::boxed(DMatrix::identity(1, 1), DVector::zeros(1), dv(&[0.0]), dv(&[1.0]));
        p.a = DMatrix::from_row_slice(1, 1, &[1.0]);
        p.c = dv(&[2.0]);
        assert_eq!(solve_qp(&p, DEFAULT_TOL).unwrap().status, QpStatus::Infeasible);
        assert_eq!(brute_force_qp(&p, 0.01).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn singular_cost_is_regularized() {
        // P = [[1,1],[1,1]] is PSD with a null direction
        let p = QpProblem::boxed(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            dv(&[-1.0, -1.0]),
            dv(&[0.0, 0.0]),
            dv(&[2.0, 0.25]),
        );
        let s = solve_qp(&p, DEFAULT_TOL).unwrap();
        assert!(s.regularization > 0.0);
        let oracle = brute_force_qp(&p, 0.001).unwrap();
        assert_abs_diff_eq!(s.objective, oracle.objective, epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_problems() {
        let nonconvex = QpProblem::boxed(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DVector::zeros(2),
            dv(&[0.0; 2]),
            dv(&[1.0; 2]),
        );
        assert!(matches!(solve_qp(&nonconvex, DEFAULT_TOL), Err(QpError::NotConvex(_))));
        let inverted = QpProblem::boxed(DMatrix::identity(1, 1), DVector::zeros(1), dv(&[1.0]), dv(&[0.0]));
        assert!(matches!(solve_qp(&inverted, DEFAULT_TOL), Err(QpError::Malformed(_))));
        let big = QpProblem::boxed(DMatrix::identity(4, 4), DVector::zeros(4), dv(&[0.0; 4]), dv(&[1.0; 4]));
        assert_eq!(brute_force_qp(&big, 0.1), Err(QpError::DimensionTooLarge(4)));
    }

    #[test]
    fn symmetric_problem_symmetric_solution() {
        let p = QpProblem::boxed(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 2.0]),
            dv(&[-3.0, -3.0]),
            dv(&[0.0, 0.0]),
            dv(&[0.7, 0.7]),
        );
        let s = solve_qp(&p, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(s.x[0], s.x[1], epsilon = 1e-12);
        let b = brute_force_qp(&p, 0.001).unwrap();
        assert_abs_diff_eq!(b.x[0], b.x[1], epsilon = 1e-3);
    }

    #[test]
    fn scaling_objective_keeps_argmin() {
        let mut p = QpProblem::boxed(
            DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
            dv(&[-4.0, 1.0]),
            dv(&[-1.0, -1.0]),
            dv(&[1.0, 1.0]),
        );
        p.a = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        p.c = dv(&[-0.5]);
        let s1 = solve_qp(&p, DEFAULT_TOL).unwrap();
        let mut scaled = p.clone();
        scaled.p *= 37.5;
        scaled.q *= 37.5;
        let s2 = solve_qp(&scaled, DEFAULT_TOL).unwrap();
        assert!((s1.x.clone() - s2.x.clone()).amax() < 1e-8);
    }
}
