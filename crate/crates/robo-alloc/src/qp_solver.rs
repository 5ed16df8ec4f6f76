//! Dense convex quadratic programming by a primal active-set method, and the
//! augmented-variable reformulation of L1 penalties.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀQx + cᵀx
//! subject to  A_eq x = b_eq,   A_in x ≥ b_in,   l ≤ x ≤ u
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{AllocError, Result};
use crate::linalg;
use crate::report::{Duals, SolveReport, SolveStatus};

/// A dense convex quadratic program.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric positive semi-definite Hessian.
    pub q: DMatrix<f64>,
    /// Linear term.
    pub c: DVector<f64>,
    /// Equality constraints `A x = b`.
    pub eq: Option<(DMatrix<f64>, DVector<f64>)>,
    /// Inequality constraints `A x ≥ b`.
    pub ineq: Option<(DMatrix<f64>, DVector<f64>)>,
    /// Lower bounds (entries may be `-∞`).
    pub lower: Option<DVector<f64>>,
    /// Upper bounds (entries may be `+∞`).
    pub upper: Option<DVector<f64>>,
}

impl QpProblem {
    /// Unconstrained problem `min ½xᵀQx + cᵀx`.
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Self {
        QpProblem { q, c, eq: None, ineq: None, lower: None, upper: None }
    }

    /// Adds equality constraints.
    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq = Some((a, b));
        self
    }

    /// Adds inequality constraints `A x ≥ b`.
    pub fn with_ineq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.ineq = Some((a, b));
        self
    }

    /// Adds box constraints.
    pub fn with_bounds(mut self, lower: Option<DVector<f64>>, upper: Option<DVector<f64>>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    /// Number of decision variables.
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Objective value `½xᵀQx + cᵀx`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    /// Largest constraint violation at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0_f64;
        if let Some((a, b)) = &self.eq {
            worst = worst.max(linalg::inf_norm(&(a * x - b)));
        }
        if let Some((a, b)) = &self.ineq {
            let r = a * x - b;
            worst = worst.max(r.iter().fold(0.0_f64, |m, v| m.max(-v)));
        }
        if let Some(l) = &self.lower {
            for i in 0..x.len() {
                worst = worst.max(l[i] - x[i]);
            }
        }
        if let Some(u) = &self.upper {
            for i in 0..x.len() {
                worst = worst.max(x[i] - u[i]);
            }
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.q.shape() != (n, n) {
            return Err(AllocError::DimensionMismatch(format!(
                "Q is {}x{} but c has length {n}",
                self.q.nrows(),
                self.q.ncols()
            )));
        }
        linalg::ensure_symmetric(&self.q, 1e-12)?;
        for (name, block) in [("equality", &self.eq), ("inequality", &self.ineq)] {
            if let Some((a, b)) = block {
                if a.ncols() != n || a.nrows() != b.len() {
                    return Err(AllocError::DimensionMismatch(format!(
                        "{name} block is {}x{} with {} right-hand sides for {n} variables",
                        a.nrows(),
                        a.ncols(),
                        b.len()
                    )));
                }
            }
        }
        for bound in [&self.lower, &self.upper].into_iter().flatten() {
            if bound.len() != n {
                return Err(AllocError::DimensionMismatch(format!(
                    "bound vector has length {} for {n} variables",
                    bound.len()
                )));
            }
        }
        if let (Some(l), Some(u)) = (&self.lower, &self.upper) {
            if let Some(i) = (0..n).find(|&i| l[i] > u[i]) {
                return Err(AllocError::Infeasible(format!("lower bound exceeds upper bound for variable {i}")));
            }
        }
        let finite = self.q.iter().chain(self.c.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(AllocError::InvalidInput("non-finite QP data".into()));
        }
        Ok(())
    }
}

/// Tuning knobs of the active-set solver.
#[derive(Debug, Clone, PartialEq)]
pub struct QpOptions {
    /// Iteration cap (`None` → `50·(n + m) + 100`).
    pub max_iter: Option<usize>,
    /// Feasibility tolerance for the phase-1 result.
    pub feasibility_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { max_iter: None, feasibility_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Ineq(usize),
    Lower(usize),
    Upper(usize),
    /// Phase-1 slack non-negativity.
    Slack,
}

/// Inequality row `aᵀx ≥ b`.
#[derive(Debug, Clone)]
struct Row {
    a: DVector<f64>,
    b: f64,
    kind: RowKind,
}

struct CoreOutcome {
    x: DVector<f64>,
    /// Multipliers of the independent equality rows, `Qx + c = Eᵀν_E + Σ ν_i a_i`.
    nu_eq: DVector<f64>,
    /// Multipliers of every inequality row (zero when inactive).
    nu_rows: Vec<f64>,
    iterations: usize,
    jittered: bool,
}

/// Incrementally maintained orthonormal basis used to test linear independence.
struct SpanBasis {
    basis: Vec<DVector<f64>>,
}

impl SpanBasis {
    fn new() -> Self {
        SpanBasis { basis: Vec::new() }
    }

    /// Residual of `v` after projecting out the current span.
    fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &self.basis {
                let coef = b.dot(&r);
                r.axpy(-coef, b, 1.0);
            }
        }
        r
    }

    /// Adds `v` if it is independent of the span; returns whether it was added.
    fn try_push(&mut self, v: &DVector<f64>) -> bool {
        let norm = v.norm();
        if norm == 0.0 {
            return false;
        }
        let r = self.residual(v);
        let rn = r.norm();
        if rn <= 1e-10 * norm {
            return false;
        }
        self.basis.push(r / rn);
        true
    }
}

/// Keeps the linearly independent equality rows; returns their original indices.
pub(crate) fn independent_rows(e: &DMatrix<f64>) -> Vec<usize> {
    let mut span = SpanBasis::new();
    (0..e.nrows()).filter(|&i| span.try_push(&e.row(i).transpose())).collect()
}

fn build_rows(p: &QpProblem) -> Vec<Row> {
    let n = p.dim();
    let mut rows = Vec::new();
    if let Some((a, b)) = &p.ineq {
        for i in 0..a.nrows() {
            rows.push(Row { a: a.row(i).transpose(), b: b[i], kind: RowKind::Ineq(i) });
        }
    }
    if let Some(l) = &p.lower {
        for i in 0..n {
            if l[i].is_finite() {
                let mut a = DVector::zeros(n);
                a[i] = 1.0;
                rows.push(Row { a, b: l[i], kind: RowKind::Lower(i) });
            }
        }
    }
    if let Some(u) = &p.upper {
        for i in 0..n {
            if u[i].is_finite() {
                let mut a = DVector::zeros(n);
                a[i] = -1.0;
                rows.push(Row { a, b: -u[i], kind: RowKind::Upper(i) });
            }
        }
    }
    rows
}

/// Primal active-set iterations from a feasible point.
fn active_set_core(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    e: &DMatrix<f64>,
    rows: &[Row],
    mut x: DVector<f64>,
    max_iter: usize,
) -> Result<CoreOutcome> {
    let n = c.len();
    let m_eq = e.nrows();
    let scale = linalg::max_abs(q).max(1.0);
    let jitter = 1e-12 * scale;
    let mut jittered = false;

    // Start with every constraint active at x that keeps the working set independent.
    let mut working: Vec<usize> = Vec::new();
    {
        let mut span = SpanBasis::new();
        for i in 0..m_eq {
            span.try_push(&e.row(i).transpose());
        }
        for (idx, row) in rows.iter().enumerate() {
            let slack = row.a.dot(&x) - row.b;
            let tol = 1e-12 * (1.0 + row.b.abs() + row.a.norm() * linalg::inf_norm(&x));
            if slack.abs() <= tol && span.try_push(&row.a) {
                working.push(idx);
            }
        }
    }

    let bland_after = 3 * n;
    for iter in 0..max_iter {
        let k = m_eq + working.len();
        let dim = n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(q);
        for i in 0..m_eq {
            for j in 0..n {
                kkt[(j, n + i)] = -e[(i, j)];
                kkt[(n + i, j)] = e[(i, j)];
            }
        }
        for (w, &idx) in working.iter().enumerate() {
            for j in 0..n {
                kkt[(j, n + m_eq + w)] = -rows[idx].a[j];
                kkt[(n + m_eq + w, j)] = rows[idx].a[j];
            }
        }
        let g = q * &x + c;
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&g));
        let sol = match linalg::solve_square(&kkt, &rhs) {
            Some(s) => s,
            None => {
                for i in 0..n {
                    kkt[(i, i)] += jitter;
                }
                jittered = true;
                linalg::solve_square(&kkt, &rhs).ok_or(AllocError::SingularKkt)?
            }
        };
        let p = sol.rows(0, n).into_owned();
        let nu = sol.rows(n, k).into_owned();

        let p_norm = linalg::inf_norm(&p);
        let x_norm = linalg::inf_norm(&x);
        let mut at_minimizer = p_norm <= 1e-14 * (1.0 + x_norm);

        if !at_minimizer {
            let mut alpha = 1.0;
            let mut blocking: Option<usize> = None;
            for (idx, row) in rows.iter().enumerate() {
                if working.contains(&idx) {
                    continue;
                }
                let d = row.a.dot(&p);
                if d < -1e-14 * row.a.norm() * p.norm() {
                    let slack = (row.a.dot(&x) - row.b).max(0.0);
                    let step = slack / -d;
                    if step < alpha {
                        alpha = step;
                        blocking = Some(idx);
                    }
                }
            }
            if blocking.is_none() && p_norm > 1e10 * (1.0 + x_norm) {
                return Err(AllocError::Unbounded);
            }
            x.axpy(alpha, &p, 1.0);
            match blocking {
                Some(idx) => {
                    working.push(idx);
                    continue;
                }
                None => at_minimizer = true,
            }
        }

        if at_minimizer {
            // Multipliers of the inequality rows in the working set.
            let mult_scale = nu.iter().fold(1e-300_f64, |m, v| m.max(v.abs())).max(linalg::inf_norm(&g));
            let tol = 1e-11 * mult_scale.max(1e-300);
            let candidates: Vec<(usize, f64)> = working
                .iter()
                .enumerate()
                .map(|(w, _)| (w, nu[m_eq + w]))
                .filter(|&(_, v)| v < -tol)
                .collect();
            if candidates.is_empty() {
                let mut nu_rows = vec![0.0; rows.len()];
                for (w, &idx) in working.iter().enumerate() {
                    nu_rows[idx] = nu[m_eq + w].max(0.0);
                }
                return Ok(CoreOutcome {
                    x,
                    nu_eq: nu.rows(0, m_eq).into_owned(),
                    nu_rows,
                    iterations: iter + 1,
                    jittered,
                });
            }
            let drop = if iter >= bland_after {
                candidates.iter().min_by_key(|(w, _)| working[*w]).map(|(w, _)| *w)
            } else {
                candidates.iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|(w, _)| *w)
            };
            if let Some(w) = drop {
                working.remove(w);
            }
        }
    }
    Err(AllocError::MaxIterations(max_iter))
}

/// Finds a feasible point by minimizing the total violation of the inequality rows
/// (with a vanishing proximal term that makes the auxiliary problem strictly convex).
fn phase_one(e: &DMatrix<f64>, f: &DVector<f64>, rows: &[Row], x_hint: DVector<f64>, max_iter: usize, tol: f64) -> Result<DVector<f64>> {
    let n = x_hint.len();
    let violated = |x: &DVector<f64>| rows.iter().any(|r| r.a.dot(x) - r.b < -tol * (1.0 + r.b.abs()));
    // Satisfy the equalities first (minimum-norm correction).
    let x0 = if e.nrows() > 0 {
        let resid = f - e * &x_hint;
        let corr = linalg::pinv(e) * &resid;
        let x = &x_hint + corr;
        if linalg::inf_norm(&(e * &x - f)) > tol * (1.0 + linalg::inf_norm(f)) {
            return Err(AllocError::Infeasible("equality constraints are inconsistent".into()));
        }
        x
    } else {
        x_hint
    };
    if !violated(&x0) {
        return Ok(x0);
    }
    let m = rows.len();
    let dim = n + m;
    let eps = 1e-8;
    let q = DMatrix::identity(dim, dim) * eps;
    let mut c = DVector::zeros(dim);
    for i in 0..n {
        c[i] = -eps * x0[i];
    }
    for i in 0..m {
        c[n + i] = 1.0;
    }
    let mut e_aug = DMatrix::zeros(e.nrows(), dim);
    e_aug.view_mut((0, 0), (e.nrows(), n)).copy_from(e);
    let mut aug_rows = Vec::with_capacity(2 * m);
    let mut start = DVector::zeros(dim);
    start.rows_mut(0, n).copy_from(&x0);
    for (i, r) in rows.iter().enumerate() {
        let mut a = DVector::zeros(dim);
        a.rows_mut(0, n).copy_from(&r.a);
        a[n + i] = 1.0;
        aug_rows.push(Row { a, b: r.b, kind: r.kind });
        let mut s = DVector::zeros(dim);
        s[n + i] = 1.0;
        aug_rows.push(Row { a: s, b: 0.0, kind: RowKind::Slack });
        start[n + i] = (r.b - r.a.dot(&x0)).max(0.0);
    }
    let out = active_set_core(&q, &c, &e_aug, &aug_rows, start, max_iter.max(10 * dim + 100))?;
    let x = out.x.rows(0, n).into_owned();
    let worst = rows.iter().fold(0.0_f64, |w, r| w.max(r.b - r.a.dot(&x)));
    if worst > tol * 10.0 {
        return Err(AllocError::Infeasible(format!("minimal total violation is {worst:e}")));
    }
    Ok(x)
}

/// Solves a convex QP with default options.
pub fn solve_qp(problem: &QpProblem) -> Result<SolveReport> {
    solve_qp_with(problem, &QpOptions::default(), None)
}

/// Solves a convex QP, optionally starting from `x_start`.
///
/// The report carries multipliers for every constraint (see [`Duals`]).
pub fn solve_qp_with(problem: &QpProblem, opts: &QpOptions, x_start: Option<&DVector<f64>>) -> Result<SolveReport> {
    problem.validate()?;
    let n = problem.dim();
    let (e_full, f_full) = match &problem.eq {
        Some((a, b)) => (a.clone(), b.clone()),
        None => (DMatrix::zeros(0, n), DVector::zeros(0)),
    };
    let keep = independent_rows(&e_full);
    let e = DMatrix::from_fn(keep.len(), n, |i, j| e_full[(keep[i], j)]);
    let f = DVector::from_iterator(keep.len(), keep.iter().map(|&i| f_full[i]));
    let rows = build_rows(problem);
    let max_iter = opts.max_iter.unwrap_or(50 * (n + rows.len() + e_full.nrows()) + 100);

    let hint = x_start.cloned().unwrap_or_else(|| DVector::zeros(n));
    if hint.len() != n {
        return Err(AllocError::DimensionMismatch("starting point has the wrong length".into()));
    }
    let x_feasible = phase_one(&e, &f, &rows, hint, max_iter, opts.feasibility_tol)?;
    if linalg::inf_norm(&(&e_full * &x_feasible - &f_full)) > 10.0 * opts.feasibility_tol * (1.0 + linalg::inf_norm(&f_full)) {
        return Err(AllocError::Infeasible("equality constraints are inconsistent".into()));
    }
    let out = active_set_core(&problem.q, &problem.c, &e, &rows, x_feasible, max_iter)?;

    let mut duals = Duals::zeros(e_full.nrows(), problem.ineq.as_ref().map_or(0, |(a, _)| a.nrows()), n);
    for (pos, &orig) in keep.iter().enumerate() {
        duals.eq[orig] = -out.nu_eq[pos];
    }
    for (row, &mult) in rows.iter().zip(&out.nu_rows) {
        match row.kind {
            RowKind::Ineq(i) => duals.ineq[i] = mult,
            RowKind::Lower(i) => duals.lower[i] = mult,
            RowKind::Upper(i) => duals.upper[i] = mult,
            RowKind::Slack => {}
        }
    }
    let x = out.x;
    let mut stationarity = &problem.q * &x + &problem.c;
    if problem.eq.is_some() {
        stationarity += e_full.transpose() * &duals.eq;
    }
    if let Some((a, _)) = &problem.ineq {
        stationarity -= a.transpose() * &duals.ineq;
    }
    stationarity -= &duals.lower;
    stationarity += &duals.upper;

    let mut report = SolveReport::direct(x.clone(), problem.objective(&x));
    report.status = SolveStatus::Converged;
    report.iterations = out.iterations;
    report.primal_residual = problem.max_violation(&x).max(0.0);
    report.dual_residual = linalg::inf_norm(&stationarity);
    report.duals = Some(duals);
    if out.jittered {
        report.notes.push("singular reduced Hessian regularized with 1e-12 diagonal jitter".into());
    }
    Ok(report)
}

/// Rewrites `min ½xᵀQx + cᵀx + ρ₁‖Γ₁(x − x₀)‖₁` over the QP's constraints as a QP in
/// `y = (x, δ⁻, δ⁺)` of dimension `3n`, with `x = x₀ + δ⁺ − δ⁻` and `δ^± ≥ 0`.
///
/// The split is exact for diagonal non-negative `Γ₁` (for a general non-negative
/// matrix the penalty `1ᵀΓ₁(δ⁺ + δ⁻)` is minimized instead).
pub fn augment_l1(problem: &QpProblem, gamma1: &DMatrix<f64>, rho1: f64, x0: &DVector<f64>) -> Result<QpProblem> {
    problem.validate()?;
    let n = problem.dim();
    if gamma1.shape() != (n, n) || x0.len() != n {
        return Err(AllocError::DimensionMismatch("penalty matrix / anchor do not match the problem size".into()));
    }
    if gamma1.iter().any(|v| *v < 0.0) {
        return Err(AllocError::NegativeGammaEntries);
    }
    if !(rho1 >= 0.0) {
        return Err(AllocError::InvalidInput("penalty must be non-negative".into()));
    }
    let dim = 3 * n;
    let mut q = DMatrix::zeros(dim, dim);
    q.view_mut((0, 0), (n, n)).copy_from(&problem.q);
    let weights = gamma1.transpose() * DVector::from_element(n, 1.0) * rho1;
    let mut c = DVector::zeros(dim);
    c.rows_mut(0, n).copy_from(&problem.c);
    c.rows_mut(n, n).copy_from(&weights);
    c.rows_mut(2 * n, n).copy_from(&weights);

    let m_eq = problem.eq.as_ref().map_or(0, |(a, _)| a.nrows());
    let mut a_eq = DMatrix::zeros(m_eq + n, dim);
    let mut b_eq = DVector::zeros(m_eq + n);
    if let Some((a, b)) = &problem.eq {
        a_eq.view_mut((0, 0), (m_eq, n)).copy_from(a);
        b_eq.rows_mut(0, m_eq).copy_from(b);
    }
    for i in 0..n {
        a_eq[(m_eq + i, i)] = 1.0;
        a_eq[(m_eq + i, n + i)] = 1.0;
        a_eq[(m_eq + i, 2 * n + i)] = -1.0;
        b_eq[m_eq + i] = x0[i];
    }
    let ineq = problem.ineq.as_ref().map(|(a, b)| {
        let mut big = DMatrix::zeros(a.nrows(), dim);
        big.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        (big, b.clone())
    });
    let mut lower = DVector::from_element(dim, 0.0);
    let mut upper = DVector::from_element(dim, f64::INFINITY);
    for i in 0..n {
        lower[i] = problem.lower.as_ref().map_or(f64::NEG_INFINITY, |l| l[i]);
        upper[i] = problem.upper.as_ref().map_or(f64::INFINITY, |u| u[i]);
    }
    Ok(QpProblem { q, c, eq: Some((a_eq, b_eq)), ineq, lower: Some(lower), upper: Some(upper) })
}

/// Splits an augmented solution `y = (x, δ⁻, δ⁺)` into its three blocks.
pub fn split_augmented(y: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = y.len() / 3;
    (y.rows(0, n).into_owned(), y.rows(n, n).into_owned(), y.rows(2 * n, n).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn budget_only_by_hand() {
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0]));
        let r = solve_qp(&p).unwrap();
        assert!((r.weights - v(&[0.5, 0.5])).abs().max() < 1e-14);
        assert!((r.duals.unwrap().eq[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn lower_bound_multiplier_sign() {
        // min ½x² − 2x s.t. x ≤ 1 → x = 1, upper multiplier 1.
        let p = QpProblem::new(DMatrix::identity(1, 1), v(&[-2.0])).with_bounds(None, Some(v(&[1.0])));
        let r = solve_qp(&p).unwrap();
        assert!((r.weights[0] - 1.0).abs() < 1e-14);
        let d = r.duals.unwrap();
        assert!((d.upper[0] - 1.0).abs() < 1e-12);
        assert_eq!(d.lower[0], 0.0);
    }

    #[test]
    fn infeasible_and_unbounded_are_reported() {
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0]))
            .with_bounds(Some(v(&[0.6, 0.6])), None);
        assert!(matches!(solve_qp(&p), Err(AllocError::Infeasible(_))));
        let lin = QpProblem::new(DMatrix::zeros(1, 1), v(&[1.0]));
        assert!(matches!(solve_qp(&lin), Err(AllocError::Unbounded)));
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let p = QpProblem::new(DMatrix::identity(2, 2), v(&[0.0, -1.0])).with_eq(a, v(&[1.0, 2.0]));
        let r = solve_qp(&p).unwrap();
        assert!((r.weights - v(&[0.0, 1.0])).abs().max() < 1e-12);
        assert!(r.dual_residual < 1e-12);
    }

    #[test]
    fn one_dimensional_l1_split() {
        // min ½x² + 0.3|x − 1| → x = 0.3.
        let base = QpProblem::new(DMatrix::identity(1, 1), v(&[0.0]));
        let aug = augment_l1(&base, &DMatrix::identity(1, 1), 0.3, &v(&[1.0])).unwrap();
        let r = solve_qp(&aug).unwrap();
        let (x, dm, dp) = split_augmented(&r.weights);
        assert!((x[0] - 0.3).abs() < 1e-10);
        assert!((dm[0] - 0.7).abs() < 1e-10 && dp[0].abs() < 1e-10);
    }

    #[test]
    fn zero_l1_penalty_matches_base_problem() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let base = QpProblem::new(q, v(&[-1.0, 0.3])).with_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0]));
        let plain = solve_qp(&base).unwrap();
        let aug = solve_qp(&augment_l1(&base, &DMatrix::identity(2, 2), 0.0, &v(&[0.2, 0.8])).unwrap()).unwrap();
        assert!((split_augmented(&aug.weights).0 - plain.weights).abs().max() < 1e-10);
    }

    #[test]
    fn negative_penalty_entries_are_rejected() {
        let base = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2));
        let g = DMatrix::from_row_slice(2, 2, &[1.0, -0.1, 0.0, 1.0]);
        assert!(matches!(augment_l1(&base, &g, 1.0, &DVector::zeros(2)), Err(AllocError::NegativeGammaEntries)));
    }

    /// Exhaustive oracle: enumerate every subset of inequality rows as the active set,
    /// solve the equality-constrained KKT system and keep the best feasible point
    /// with non-negative multipliers.
    fn enumerate_active_sets(q: &DMatrix<f64>, c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
        let n = c.len();
        let m = a.nrows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << m) {
            let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = act.len();
            if k > n {
                continue;
            }
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(q);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-c));
            for (w, &i) in act.iter().enumerate() {
                for j in 0..n {
                    kkt[(j, n + w)] = -a[(i, j)];
                    kkt[(n + w, j)] = a[(i, j)];
                }
                rhs[n + w] = b[i];
            }
            let Some(sol) = linalg::solve_square(&kkt, &rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            let feasible = (0..m).all(|i| a.row(i).transpose().dot(&x) >= b[i] - 1e-10);
            let dual_ok = (0..k).all(|w| sol[n + w] >= -1e-10);
            if feasible && dual_ok {
                let obj = 0.5 * x.dot(&(q * &x)) + c.dot(&x);
                if best.as_ref().map_or(true, |(o, _)| obj < *o) {
                    best = Some((obj, x));
                }
            }
        }
        best.map(|(_, x)| x)
    }

    #[test]
    fn random_strictly_convex_qps_match_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for _ in 0..200 {
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(1..=6);
            let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let q = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
            let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..0.0));
            let oracle = enumerate_active_sets(&q, &c, &a, &b).expect("origin is feasible");
            let p = QpProblem::new(q.clone(), c.clone()).with_ineq(a.clone(), b.clone());
            let r = solve_qp(&p).unwrap();
            assert!((&r.weights - &oracle).abs().max() < 1e-8, "{} vs {}", r.weights, oracle);
            assert!(r.dual_residual < 1e-8);
            let d = r.duals.unwrap();
            let slack = &a * &r.weights - &b;
            for i in 0..m {
                assert!(d.ineq[i] >= 0.0);
                assert!((d.ineq[i] * slack[i]).abs() < 1e-8);
            }
            checked += 1;
        }
        assert_eq!(checked, 200);
    }

    fn qp_strategy() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>)> {
        (1usize..5, 1usize..6).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
                    let l = DMatrix::from_vec(n, n, v);
                    &l * l.transpose() + DMatrix::identity(n, n) * 0.05
                }),
                proptest::collection::vec(-1.0f64..1.0, n).prop_map(DVector::from_vec),
                proptest::collection::vec(-1.0f64..1.0, m * n).prop_map(move |v| DMatrix::from_vec(m, n, v)),
                proptest::collection::vec(-1.0f64..0.0, m).prop_map(DVector::from_vec),
            )
        })
    }

    proptest! {
        #[test]
        fn feasibility_and_zero_duality_gap((q, c, a, b) in qp_strategy()) {
            let n = c.len();
            let lower = DVector::from_element(n, -2.0);
            let upper = DVector::from_element(n, 2.0);
            let p = QpProblem::new(q.clone(), c.clone())
                .with_ineq(a.clone(), b.clone())
                .with_bounds(Some(lower.clone()), Some(upper.clone()));
            let r = solve_qp(&p).unwrap();
            prop_assert!(p.max_violation(&r.weights) <= 1e-9);
            // Lagrangian dual value at the returned multipliers.
            let d = r.duals.unwrap();
            let x = &r.weights;
            let lagrangian = p.objective(x) - d.ineq.dot(&(&a * x - &b)) - d.lower.dot(&(x - &lower)) - d.upper.dot(&(&upper - x));
            prop_assert!((p.objective(x) - lagrangian).abs() <= 1e-7);
        }

        #[test]
        fn augmented_split_is_complementary(
            (q, c, _a, _b) in qp_strategy(),
            rho in 0.0f64..1.0,
        ) {
            let n = c.len();
            let x0 = DVector::from_fn(n, |i, _| 0.1 * i as f64);
            let base = QpProblem::new(q, c);
            let aug = augment_l1(&base, &DMatrix::identity(n, n), rho, &x0).unwrap();
            let r = solve_qp(&aug).unwrap();
            let (x, dm, dp) = split_augmented(&r.weights);
            for i in 0..n {
                prop_assert!((dm[i] * dp[i]).abs() <= 1e-8);
                prop_assert!((dm[i] - (x0[i] - x[i]).max(0.0)).abs() <= 1e-8);
                prop_assert!((dp[i] - (x[i] - x0[i]).max(0.0)).abs() <= 1e-8);
            }
        }
    }
}
