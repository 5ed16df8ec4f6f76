//! Scaled-form ADMM with residual-balancing penalty adaptation, and its
//! specializations: constrained Tikhonov, mixed L2–Lp penalties and cardinality.
//!
//! Problems are split as `min f(x) + g(z)` subject to `Ax + Bz = c`. In the
//! specializations `f` is a quadratic restricted to the equality constraints (solved
//! through a KKT system cached per penalty value) and `g` is separable over blocks
//! `zⱼ = Mⱼ(x − aⱼ)` whose proximal step is a soft threshold, an Lp prox, a projection
//! onto a convex set or onto a cardinality set.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AllocError, Result};
use crate::linalg::{self, SquareFactor};
use crate::mvo_core::{ConstraintSet, MvoInputs};
use crate::prox_ops::{self, ConvexSet};
use crate::qp_solver::{self, QpProblem};
use crate::regularizers::{PenaltyKind, PenaltySpec};
use crate::report::{SolveReport, SolveStatus};

/// Tuning parameters of the ADMM iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmParams {
    /// Initial penalty `φ⁽⁰⁾`.
    pub phi0: f64,
    /// Residual-balance factor `μ`.
    pub mu: f64,
    /// Penalty increase factor `τ`.
    pub tau_up: f64,
    /// Penalty decrease factor `τ′`.
    pub tau_down: f64,
    /// Primal residual tolerance.
    pub eps_primal: f64,
    /// Dual residual tolerance.
    pub eps_dual: f64,
    /// Iteration budget.
    pub max_iter: usize,
    /// Whether the penalty is adapted by residual balancing.
    pub adaptive: bool,
    /// Number of restarts for the (non-convex) cardinality problem.
    pub restarts: usize,
    /// Seed of the random restart points.
    pub seed: u64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            phi0: 1.0,
            mu: 1e3,
            tau_up: 2.0,
            tau_down: 2.0,
            eps_primal: 1e-10,
            eps_dual: 1e-10,
            max_iter: 10_000,
            adaptive: true,
            restarts: 5,
            seed: 0,
        }
    }
}

impl AdmmParams {
    /// Checks positivity and `τ, τ′ ≥ 1`.
    pub fn validate(&self) -> Result<()> {
        let positive = [self.phi0, self.mu, self.eps_primal, self.eps_dual];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.max_iter == 0 {
            return Err(AllocError::InvalidInput("ADMM parameters must be positive".into()));
        }
        if !(self.tau_up >= 1.0) || !(self.tau_down >= 1.0) {
            return Err(AllocError::InvalidInput("penalty multipliers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Residual balancing: `τφ` if `‖r‖² > μ‖s‖²`, `φ/τ′` if `‖s‖² > μ‖r‖²`, else `φ`.
pub fn adaptive_penalty(phi: f64, r_norm: f64, s_norm: f64, params: &AdmmParams) -> f64 {
    let (r2, s2) = (r_norm * r_norm, s_norm * s_norm);
    if r2 > params.mu * s2 {
        phi * params.tau_up
    } else if s2 > params.mu * r2 {
        phi / params.tau_down
    } else {
        phi
    }
}

/// Iterates of a scaled ADMM run (`u` is the scaled dual `λ/φ`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    /// Primal variable.
    pub x: DVector<f64>,
    /// Splitting variable.
    pub z: DVector<f64>,
    /// Scaled dual variable.
    pub u: DVector<f64>,
    /// Current penalty.
    pub phi: f64,
    /// Last primal residual norm.
    pub r_norm: f64,
    /// Last dual residual norm.
    pub s_norm: f64,
    /// Iterations performed.
    pub iter: usize,
}

impl AdmmState {
    /// Zero iterates with penalty `phi`.
    pub fn cold(nx: usize, nz: usize, phi: f64) -> Self {
        AdmmState {
            x: DVector::zeros(nx),
            z: DVector::zeros(nz),
            u: DVector::zeros(nz),
            phi,
            r_norm: f64::INFINITY,
            s_norm: f64::INFINITY,
            iter: 0,
        }
    }
}

/// Linear coupling `Ax + Bz = c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    /// Coefficient of `x`.
    pub a: DMatrix<f64>,
    /// Coefficient of `z`.
    pub b: DMatrix<f64>,
    /// Right-hand side.
    pub c: DVector<f64>,
}

impl Coupling {
    /// Consensus coupling `x − z = 0`.
    pub fn consensus(n: usize) -> Self {
        Coupling { a: DMatrix::identity(n, n), b: -DMatrix::identity(n, n), c: DVector::zeros(n) }
    }
}

/// Residual norms and penalty after one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationTrace {
    /// Primal residual norm.
    pub r_norm: f64,
    /// Dual residual norm.
    pub s_norm: f64,
    /// Penalty used during the iteration.
    pub phi: f64,
}

/// Outcome of [`admm_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmRun {
    /// Final iterates.
    pub state: AdmmState,
    /// Termination status (`Converged` or `MaxIter`).
    pub status: SolveStatus,
    /// Per-iteration residuals.
    pub history: Vec<IterationTrace>,
}

const DIVERGENCE_LIMIT: f64 = 1e12;

/// The adapted penalty stays within `[φ⁽⁰⁾/PHI_RANGE, φ⁽⁰⁾·PHI_RANGE]`, which keeps the
/// x-step well conditioned when one residual stalls at rounding level.
pub const PHI_RANGE: f64 = 1e6;

/// Scaled ADMM for `min f(x) + g(z)` subject to `Ax + Bz = c`.
///
/// `x_update(z, u, φ)` must return `argmin f(x) + φ/2‖Ax + Bz − c + u‖²` and
/// `z_update(x, u, φ)` the analogous minimizer for `g`. Iterations stop when
/// `‖r‖ ≤ ε_primal` and `‖s‖ ≤ ε_dual` with `r = Ax + Bz − c` and
/// `s = φAᵀB(z⁽ᵏ⁾ − z⁽ᵏ⁻¹⁾)`. When the penalty changes, `u` is rescaled by `φ_old/φ_new`.
/// Residuals above `10¹²` abort with [`AllocError::NumericalDivergence`]; exhausting the
/// iteration budget returns the last iterates with status [`SolveStatus::MaxIter`].
pub fn admm_solve<X, Z>(mut x_update: X, mut z_update: Z, coupling: &Coupling, params: &AdmmParams, start: AdmmState) -> Result<AdmmRun>
where
    X: FnMut(&DVector<f64>, &DVector<f64>, f64) -> Result<DVector<f64>>,
    Z: FnMut(&DVector<f64>, &DVector<f64>, f64) -> Result<DVector<f64>>,
{
    params.validate()?;
    let Coupling { a, b, c } = coupling;
    if a.nrows() != c.len() || b.nrows() != c.len() || start.z.len() != b.ncols() || start.u.len() != c.len() {
        return Err(AllocError::DimensionMismatch("coupling and iterates have inconsistent sizes".into()));
    }
    let atb = a.transpose() * b;
    let mut st = start;
    st.iter = 0;
    let mut history = Vec::new();
    for k in 1..=params.max_iter {
        let x = x_update(&st.z, &st.u, st.phi)?;
        let z = z_update(&x, &st.u, st.phi)?;
        let r = a * &x + b * &z - c;
        let s = &atb * (&z - &st.z) * st.phi;
        st.u += &r;
        st.x = x;
        st.z = z;
        st.r_norm = r.norm();
        st.s_norm = s.norm();
        st.iter = k;
        history.push(IterationTrace { r_norm: st.r_norm, s_norm: st.s_norm, phi: st.phi });
        if !(st.r_norm <= DIVERGENCE_LIMIT) || !(st.s_norm <= DIVERGENCE_LIMIT) || st.u.iter().any(|v| !v.is_finite()) {
            return Err(AllocError::NumericalDivergence(format!(
                "residuals r = {:e}, s = {:e} at iteration {k}",
                st.r_norm, st.s_norm
            )));
        }
        if st.r_norm <= params.eps_primal && st.s_norm <= params.eps_dual {
            return Ok(AdmmRun { state: st, status: SolveStatus::Converged, history });
        }
        if params.adaptive {
            let next = adaptive_penalty(st.phi, st.r_norm, st.s_norm, params)
                .clamp(params.phi0 * PHI_RANGE.recip(), params.phi0 * PHI_RANGE);
            if next != st.phi {
                st.u *= st.phi / next;
                st.phi = next;
            }
        }
    }
    Ok(AdmmRun { state: st, status: SolveStatus::MaxIter, history })
}

/// Quadratic objective `½xᵀPx + qᵀx + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    /// Symmetric positive semi-definite Hessian.
    pub p: DMatrix<f64>,
    /// Linear term.
    pub q: DVector<f64>,
    /// Constant term.
    pub constant: f64,
}

impl Quadratic {
    /// Validated constructor.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        if p.shape() != (q.len(), q.len()) {
            return Err(AllocError::DimensionMismatch("Hessian and linear term sizes differ".into()));
        }
        linalg::ensure_symmetric(&p, 1e-10)?;
        Ok(Quadratic { p, q, constant: 0.0 })
    }

    /// `½‖A₁x − b₁‖²`.
    pub fn from_least_squares(a1: &DMatrix<f64>, b1: &DVector<f64>) -> Result<Self> {
        if a1.nrows() != b1.len() {
            return Err(AllocError::DimensionMismatch("least-squares block does not match its target".into()));
        }
        Ok(Quadratic { p: a1.transpose() * a1, q: -(a1.transpose() * b1), constant: 0.5 * b1.norm_squared() })
    }

    /// Mean-variance objective `½xᵀΣx − γxᵀ(μ − r·1)`.
    pub fn from_mvo(inputs: &MvoInputs, gamma: f64) -> Self {
        Quadratic { p: inputs.sigma.clone(), q: -inputs.excess_mu() * gamma, constant: 0.0 }
    }

    /// Adds an L2 penalty `½ϱ‖Γ(x − x₀)‖²` (no-op for `None`).
    pub fn with_l2(&self, penalty: Option<&PenaltySpec>) -> Result<Self> {
        let Some(pen) = penalty else {
            return Ok(self.clone());
        };
        pen.validate()?;
        if pen.kind != PenaltyKind::L2 {
            return Err(AllocError::InvalidInput("expected an L2 penalty".into()));
        }
        if pen.dim() != self.dim() {
            return Err(AllocError::DimensionMismatch("penalty size differs from the objective".into()));
        }
        let gram = pen.gamma_matrix.transpose() * &pen.gamma_matrix * pen.rho;
        let shifted = &gram * &pen.anchor;
        Ok(Quadratic {
            p: &self.p + &gram,
            q: &self.q - &shifted,
            constant: self.constant + 0.5 * pen.anchor.dot(&shifted),
        })
    }

    /// Number of variables.
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Objective value at `x`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x) + self.constant
    }
}

/// Constraints of the ADMM specializations: equalities handled in the x-step and
/// convex sets handled by projection in the z-step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdmmConstraints {
    /// `A₂x = b₂`.
    pub eq: Option<(DMatrix<f64>, DVector<f64>)>,
    /// Sets the solution must belong to.
    pub sets: Vec<ConvexSet>,
}

impl AdmmConstraints {
    /// No constraint.
    pub fn none() -> Self {
        AdmmConstraints::default()
    }

    /// Translates a linear constraint set (budget and equalities go to the x-step,
    /// bounds become a box and each inequality row a halfspace).
    pub fn from_constraint_set(cons: &ConstraintSet, n: usize) -> Result<Self> {
        cons.validate(n)?;
        let mut sets = Vec::new();
        if cons.lower.is_some() || cons.upper.is_some() {
            sets.push(ConvexSet::Box {
                lower: cons.lower.clone().unwrap_or_else(|| DVector::from_element(n, f64::NEG_INFINITY)),
                upper: cons.upper.clone().unwrap_or_else(|| DVector::from_element(n, f64::INFINITY)),
            });
        }
        if let Some((a, b)) = &cons.ineq {
            for i in 0..a.nrows() {
                sets.push(ConvexSet::Halfspace { a: -a.row(i).transpose(), b: -b[i] });
            }
        }
        Ok(AdmmConstraints { eq: cons.equality_rows(n), sets })
    }

    /// Adds a set.
    pub fn with_set(mut self, set: ConvexSet) -> Self {
        self.sets.push(set);
        self
    }

    /// Adds equality rows.
    pub fn with_eq_rows(mut self, a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        self.eq = Some(match self.eq.take() {
            None => (a.clone(), b.clone()),
            Some((a0, b0)) => {
                let rows = a0.nrows() + a.nrows();
                let n = a.ncols();
                let mut am = DMatrix::zeros(rows, n);
                am.view_mut((0, 0), (a0.nrows(), n)).copy_from(&a0);
                am.view_mut((a0.nrows(), 0), (a.nrows(), n)).copy_from(a);
                let mut bm = DVector::zeros(rows);
                bm.rows_mut(0, b0.len()).copy_from(&b0);
                bm.rows_mut(b0.len(), b.len()).copy_from(b);
                (am, bm)
            }
        });
        self
    }

    /// Largest violation of `x`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let eq = self.eq.as_ref().map_or(0.0, |(a, b)| linalg::inf_norm(&(a * x - b)));
        self.sets.iter().fold(eq, |m, s| m.max(s.violation(x)))
    }

    /// Moves every affine set into the equality block, merges boxes, and returns
    /// the independent equality rows together with the remaining set (if any).
    fn normalize(&self, n: usize) -> Result<(Option<(DMatrix<f64>, DVector<f64>)>, Option<ConvexSet>)> {
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        if let Some((a, b)) = &self.eq {
            if a.ncols() != n || a.nrows() != b.len() {
                return Err(AllocError::DimensionMismatch("equality block does not match the problem size".into()));
            }
            for i in 0..a.nrows() {
                rows.push((a.row(i).transpose(), b[i]));
            }
        }
        let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(n, f64::INFINITY);
        let mut others = Vec::new();
        let mut pending: Vec<&ConvexSet> = self.sets.iter().collect();
        while let Some(set) = pending.pop() {
            set.validate(n)?;
            match set {
                ConvexSet::Whole => {}
                ConvexSet::Intersection(inner) => pending.extend(inner.iter()),
                ConvexSet::Hyperplane { a, b } => rows.push((a.clone(), *b)),
                ConvexSet::Affine { a, b } => {
                    for i in 0..a.nrows() {
                        rows.push((a.row(i).transpose(), b[i]));
                    }
                }
                ConvexSet::Simplex { budget } => {
                    rows.push((DVector::from_element(n, 1.0), *budget));
                    lower.apply(|l| *l = l.max(0.0));
                }
                ConvexSet::LinfBall { radius } => {
                    lower.apply(|l| *l = l.max(-radius));
                    upper.apply(|u| *u = u.min(*radius));
                }
                ConvexSet::Box { lower: l, upper: u } => {
                    lower.zip_apply(l, |a, b| *a = a.max(b));
                    upper.zip_apply(u, |a, b| *a = a.min(b));
                }
                ConvexSet::Cardinality { .. } => {
                    return Err(AllocError::InvalidInput("cardinality sets are handled by the cardinality solver".into()));
                }
                ConvexSet::Halfspace { .. } | ConvexSet::L1Ball { .. } | ConvexSet::L2Ball { .. } => others.push(set.clone()),
            }
        }
        if (0..n).any(|i| lower[i] > upper[i]) {
            return Err(AllocError::Infeasible("box bounds are empty".into()));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_finite()) {
            others.insert(0, ConvexSet::Box { lower, upper });
        }
        let eq = if rows.is_empty() {
            None
        } else {
            let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
            let b = DVector::from_fn(rows.len(), |i, _| rows[i].1);
            let x_ls = linalg::pinv(&a) * &b;
            if linalg::inf_norm(&(&a * &x_ls - &b)) > 1e-9 * (1.0 + linalg::inf_norm(&b)) {
                return Err(AllocError::Infeasible("equality constraints are inconsistent".into()));
            }
            let keep = qp_solver::independent_rows(&a);
            let a_red = DMatrix::from_fn(keep.len(), n, |i, j| a[(keep[i], j)]);
            let b_red = DVector::from_fn(keep.len(), |i, _| b[keep[i]]);
            Some((a_red, b_red))
        };
        let set = match others.len() {
            0 => None,
            1 => others.pop(),
            _ => Some(ConvexSet::Intersection(others)),
        };
        Ok((eq, set))
    }
}

/// Proximal step of a splitting block.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockOp {
    /// `ϱ‖z‖₁` (soft thresholding).
    L1 { rho: f64 },
    /// `(ϱ/p)‖z‖_p^p`.
    Lp { rho: f64, p: f64 },
    /// Indicator of a convex set (projection).
    Set(ConvexSet),
    /// Indicator of the set of vectors with at most `n1` nonzeros within bounds.
    Cardinality { n1: usize, lower: DVector<f64>, upper: DVector<f64> },
}

/// Splitting block `z = M(x − anchor)` with its proximal step.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Linear map `M` (k × n).
    pub matrix: DMatrix<f64>,
    /// Anchor subtracted from `x`.
    pub anchor: DVector<f64>,
    /// Proximal step applied to the block.
    pub op: BlockOp,
}

impl Block {
    /// Block of a penalty specification (`L2` is handled as the `p = 2` prox).
    pub fn penalty(spec: &PenaltySpec) -> Result<Self> {
        spec.validate()?;
        let op = match spec.kind {
            PenaltyKind::L1 => BlockOp::L1 { rho: spec.rho },
            PenaltyKind::L2 => BlockOp::Lp { rho: spec.rho, p: 2.0 },
            PenaltyKind::Lp(p) if p >= 1.0 => BlockOp::Lp { rho: spec.rho, p },
            PenaltyKind::Lp(p) => return Err(AllocError::NonConvexOrder(p)),
        };
        Ok(Block { matrix: spec.gamma_matrix.clone(), anchor: spec.anchor.clone(), op })
    }

    /// Constraint block `x ∈ set`.
    pub fn set(set: ConvexSet, n: usize) -> Self {
        Block { matrix: DMatrix::identity(n, n), anchor: DVector::zeros(n), op: BlockOp::Set(set) }
    }

    /// `M(x − anchor)`.
    pub fn image(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * (x - &self.anchor)
    }

    /// Penalty contribution at `x` (indicator blocks contribute 0).
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.op {
            BlockOp::L1 { rho } => rho * self.image(x).lp_norm(1),
            BlockOp::Lp { rho, p } => rho / p * self.image(x).iter().map(|v| v.abs().powf(*p)).sum::<f64>(),
            BlockOp::Set(_) | BlockOp::Cardinality { .. } => 0.0,
        }
    }

    fn prox(&self, v: &DVector<f64>, phi: f64) -> Result<DVector<f64>> {
        match &self.op {
            BlockOp::L1 { rho } => Ok(prox_ops::prox_l1(v, rho / phi)),
            BlockOp::Lp { rho, p } => prox_ops::prox_lp(v, rho / phi, *p),
            BlockOp::Set(set) => prox_ops::project(v, set),
            BlockOp::Cardinality { n1, lower, upper } => prox_ops::project_cardinality(v, *n1, lower, upper),
        }
    }
}

/// `min ½xᵀPx + qᵀx + Σⱼ gⱼ(Mⱼ(x − aⱼ))` subject to `A₂x = b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedProblem {
    /// Smooth part.
    pub quad: Quadratic,
    /// Equalities enforced exactly in the x-step.
    pub eq: Option<(DMatrix<f64>, DVector<f64>)>,
    /// Splitting blocks.
    pub blocks: Vec<Block>,
}

impl MixedProblem {
    /// Builds the problem from an objective, constraints and penalty blocks; the
    /// constraint sets become one projection block placed after the penalties.
    pub fn new(quad: Quadratic, constraints: &AdmmConstraints, mut blocks: Vec<Block>) -> Result<Self> {
        let n = quad.dim();
        for b in &blocks {
            if b.matrix.ncols() != n || b.anchor.len() != n {
                return Err(AllocError::DimensionMismatch("penalty block does not match the problem size".into()));
            }
        }
        let (eq, set) = constraints.normalize(n)?;
        if let Some(set) = set {
            blocks.push(Block::set(set, n));
        }
        Ok(MixedProblem { quad, eq, blocks })
    }

    /// Number of variables.
    pub fn dim(&self) -> usize {
        self.quad.dim()
    }

    /// Objective (quadratic plus penalties) at `x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.quad.value(x) + self.blocks.iter().map(|b| b.value(x)).sum::<f64>()
    }

    fn split_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.matrix.nrows()).sum()
    }

    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let k = self.split_rows();
        let mut m = DMatrix::zeros(k, n);
        let mut offset = DVector::zeros(k);
        let mut row = 0;
        for b in &self.blocks {
            let r = b.matrix.nrows();
            m.view_mut((row, 0), (r, n)).copy_from(&b.matrix);
            offset.rows_mut(row, r).copy_from(&(&b.matrix * &b.anchor));
            row += r;
        }
        (m, offset)
    }

    fn z_step(&self, v: &DVector<f64>, phi: f64) -> Result<DVector<f64>> {
        let mut z = DVector::zeros(v.len());
        let mut row = 0;
        for b in &self.blocks {
            let r = b.matrix.nrows();
            let part = b.prox(&v.rows(row, r).into_owned(), phi)?;
            z.rows_mut(row, r).copy_from(&part);
            row += r;
        }
        Ok(z)
    }

    /// Splitting variable consistent with `x`: each block's prox input `Mⱼ(x − aⱼ)`
    /// mapped through its projection (penalty blocks keep the image itself).
    pub fn initial_split(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut z = DVector::zeros(self.split_rows());
        let mut row = 0;
        for b in &self.blocks {
            let r = b.matrix.nrows();
            let image = b.image(x);
            let part = match &b.op {
                BlockOp::L1 { .. } | BlockOp::Lp { .. } => image,
                _ => b.prox(&image, 1.0)?,
            };
            z.rows_mut(row, r).copy_from(&part);
            row += r;
        }
        Ok(z)
    }
}
/// x-step `argmin ½xᵀPx + qᵀx + φ/2‖Mx − z − M·a + u‖²` s.t. `A₂x = b₂`.
///
/// The equalities are eliminated by writing `x = x_p + Ny` with `N` an orthonormal
/// basis of the null space of `A₂`; the reduced Hessian `Nᵀ(P + φMᵀM)N` is factored
/// (Cholesky, LU as fallback) once per penalty value.
struct XStep<'a> {
    quad: &'a Quadratic,
    m: DMatrix<f64>,
    mtm: DMatrix<f64>,
    offset: DVector<f64>,
    particular: DVector<f64>,
    null_basis: DMatrix<f64>,
    cache: Option<(f64, ReducedFactor)>,
}

enum ReducedFactor {
    Cholesky(nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>),
    Lu(SquareFactor),
}

impl ReducedFactor {
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            ReducedFactor::Cholesky(c) => Some(c.solve(rhs)),
            ReducedFactor::Lu(f) => f.solve(rhs),
        }
    }
}

impl<'a> XStep<'a> {
    fn new(problem: &'a MixedProblem) -> Self {
        let n = problem.dim();
        let (m, offset) = problem.stacked();
        let mtm = m.transpose() * &m;
        let (particular, null_basis) = match &problem.eq {
            None => (DVector::zeros(n), DMatrix::identity(n, n)),
            Some((a, b)) => {
                let (values, vectors) = linalg::sym_eigen_desc(&(a.transpose() * a));
                let top = values.max().max(0.0);
                let rank = values.iter().filter(|&&v| v > 1e-12 * top && v > 0.0).count();
                (linalg::pinv(a) * b, vectors.columns(rank, n - rank).into_owned())
            }
        };
        XStep { quad: &problem.quad, m, mtm, offset, particular, null_basis, cache: None }
    }

    fn factor(&mut self, phi: f64) -> Result<&ReducedFactor> {
        if self.cache.as_ref().map_or(true, |(p, _)| *p != phi) {
            let h = &self.quad.p + &self.mtm * phi;
            let reduced = linalg::symmetrize(&(self.null_basis.transpose() * h * &self.null_basis));
            let factor = match reduced.clone().cholesky() {
                Some(c) => ReducedFactor::Cholesky(c),
                None => ReducedFactor::Lu(SquareFactor::new(&reduced).ok_or(AllocError::SingularKkt)?),
            };
            self.cache = Some((phi, factor));
        }
        Ok(&self.cache.as_ref().expect("factor cached").1)
    }

    fn solve(&mut self, z: &DVector<f64>, u: &DVector<f64>, phi: f64) -> Result<DVector<f64>> {
        if self.null_basis.ncols() == 0 {
            return Ok(self.particular.clone());
        }
        let h_xp = &self.quad.p * &self.particular + &self.mtm * &self.particular * phi;
        let top = -&self.quad.q + self.m.transpose() * (z + &self.offset - u) * phi - h_xp;
        let rhs = self.null_basis.transpose() * top;
        let y = self.factor(phi)?.solve(&rhs).ok_or(AllocError::SingularKkt)?;
        Ok(&self.particular + &self.null_basis * y)
    }
}

/// Report and final iterates of a [`solve_mixed`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSolution {
    /// Solution report (weights are the `x` iterate).
    pub report: SolveReport,
    /// Final ADMM iterates, reusable as a warm start.
    pub state: AdmmState,
}

/// Solves a [`MixedProblem`] by ADMM, optionally warm-started from previous iterates
/// (used when their dimensions match).
pub fn solve_mixed(problem: &MixedProblem, params: &AdmmParams, warm: Option<&AdmmState>) -> Result<MixedSolution> {
    let n = problem.dim();
    let k = problem.split_rows();
    let start = match warm {
        Some(w) if w.x.len() == n && w.z.len() == k && w.u.len() == k && w.phi > 0.0 => w.clone(),
        _ => AdmmState::cold(n, k, params.phi0),
    };
    solve_mixed_from(problem, params, start)
}

fn solve_mixed_from(problem: &MixedProblem, params: &AdmmParams, start: AdmmState) -> Result<MixedSolution> {
    let n = problem.dim();
    let k = problem.split_rows();
    let mut xstep = XStep::new(problem);
    let coupling = Coupling { a: xstep.m.clone(), b: -DMatrix::identity(k, k), c: xstep.offset.clone() };
    let m = xstep.m.clone();
    let offset = xstep.offset.clone();
    let run = admm_solve(
        |z, u, phi| xstep.solve(z, u, phi),
        |x, u, phi| problem.z_step(&(&m * x - &offset + u), phi),
        &coupling,
        params,
        start,
    )?;
    debug_assert_eq!(run.state.x.len(), n);
    let x = run.state.x.clone();
    let report = SolveReport {
        objective: problem.objective(&x),
        weights: x,
        status: run.status,
        iterations: run.state.iter,
        primal_residual: run.state.r_norm,
        dual_residual: run.state.s_norm,
        duals: None,
        gamma: None,
        notes: vec![format!("final ADMM penalty {}", run.state.phi)],
    };
    Ok(MixedSolution { report, state: run.state })
}

/// `min f(x) + ½ϱ₂‖Γ₂(x − x₀)‖²` over equalities (x-step) and convex sets (z-step,
/// projection onto their intersection).
pub fn solve_tikhonov_constrained(
    objective: &Quadratic,
    ridge: Option<&PenaltySpec>,
    constraints: &AdmmConstraints,
    params: &AdmmParams,
) -> Result<SolveReport> {
    let problem = MixedProblem::new(objective.with_l2(ridge)?, constraints, Vec::new())?;
    Ok(solve_mixed(&problem, params, None)?.report)
}

/// `min f(x) + ½ϱ₂‖Γ₂(x − x₀)‖² + (ϱ_p/p)‖Γ_p(x − x₀)‖_p^p` (`ϱ₁‖Γ₁(x − x₀)‖₁` for
/// `p = 1`) over the constraints, splitting `z = Γ_p(x − x₀)`.
pub fn solve_mixed_lp(
    objective: &Quadratic,
    ridge: Option<&PenaltySpec>,
    penalty: &PenaltySpec,
    constraints: &AdmmConstraints,
    params: &AdmmParams,
) -> Result<SolveReport> {
    let problem = MixedProblem::new(objective.with_l2(ridge)?, constraints, vec![Block::penalty(penalty)?])?;
    Ok(solve_mixed(&problem, params, None)?.report)
}

/// Sparsity requirement `Γ₁(x − x₀)` with at most `n1` nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsitySpec {
    /// Map whose image must be sparse.
    pub gamma1: DMatrix<f64>,
    /// Anchor `x₀`.
    pub anchor: DVector<f64>,
    /// Maximum number of nonzeros.
    pub n1: usize,
    /// Bounds on the kept entries of `Γ₁(x − x₀)` (default unbounded).
    pub lower: Option<DVector<f64>>,
    /// Upper bounds on the kept entries.
    pub upper: Option<DVector<f64>>,
}

impl SparsitySpec {
    /// At most `n1` nonzero weights (`Γ₁ = I`, `x₀ = 0`).
    pub fn weights(n: usize, n1: usize) -> Self {
        SparsitySpec::bets(DVector::zeros(n), n1)
    }

    /// At most `n1` nonzero bets `x − x₀`.
    pub fn bets(anchor: DVector<f64>, n1: usize) -> Self {
        let n = anchor.len();
        SparsitySpec { gamma1: DMatrix::identity(n, n), anchor, n1, lower: None, upper: None }
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let k = self.gamma1.nrows();
        (
            self.lower.clone().unwrap_or_else(|| DVector::from_element(k, f64::NEG_INFINITY)),
            self.upper.clone().unwrap_or_else(|| DVector::from_element(k, f64::INFINITY)),
        )
    }
}

/// Threshold below which entries of `Γ₁(x − x₀)` count as zero.
pub const SPARSITY_ZERO: f64 = 1e-8;

fn qp_from_parts(quad: &Quadratic, eq: Option<(DMatrix<f64>, DVector<f64>)>, set: Option<&ConvexSet>) -> Option<QpProblem> {
    let n = quad.dim();
    let mut qp = QpProblem::new(quad.p.clone(), quad.q.clone());
    qp.eq = eq;
    let mut ineq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut pending: Vec<&ConvexSet> = set.into_iter().collect();
    while let Some(s) = pending.pop() {
        match s {
            ConvexSet::Whole => {}
            ConvexSet::Intersection(inner) => pending.extend(inner.iter()),
            ConvexSet::Box { lower, upper } => {
                qp.lower = Some(lower.clone());
                qp.upper = Some(upper.clone());
            }
            ConvexSet::Halfspace { a, b } => ineq_rows.push((-a, -b)),
            _ => return None,
        }
    }
    if !ineq_rows.is_empty() {
        let a = DMatrix::from_fn(ineq_rows.len(), n, |i, j| ineq_rows[i].0[j]);
        let b = DVector::from_fn(ineq_rows.len(), |i, _| ineq_rows[i].1);
        qp.ineq = Some((a, b));
    }
    Some(qp)
}

/// Solves the convex problem `min quad` over the constraints exactly by QP when the
/// sets are polyhedral, by ADMM otherwise.
fn solve_convex(quad: &Quadratic, constraints: &AdmmConstraints, params: &AdmmParams) -> Result<SolveReport> {
    let n = quad.dim();
    let (eq, set) = constraints.normalize(n)?;
    match qp_from_parts(quad, eq, set.as_ref()) {
        Some(qp) => {
            let mut rep = qp_solver::solve_qp(&qp)?;
            rep.objective = quad.value(&rep.weights);
            Ok(rep)
        }
        None => solve_tikhonov_constrained(quad, None, constraints, params),
    }
}

fn random_feasible(rng: &mut ChaCha8Rng, n: usize, constraints: &AdmmConstraints) -> Result<DVector<f64>> {
    let raw = DVector::from_fn(n, |_, _| rng.gen_range(0.0f64..1.0));
    let raw = &raw / raw.sum().max(f64::MIN_POSITIVE);
    let (eq, set) = constraints.normalize(n)?;
    let mut parts = Vec::new();
    if let Some((a, b)) = eq {
        parts.push(ConvexSet::Affine { a, b });
    }
    parts.extend(set);
    match parts.len() {
        0 => Ok(raw),
        1 => prox_ops::project(&raw, &parts[0]),
        _ => prox_ops::project(&raw, &ConvexSet::Intersection(parts)),
    }
}

/// Minimizes `f(x) + ½ϱ₂‖Γ₂(x − x₀)‖²` over the constraints with `Γ₁(x − x₀)` having at
/// most `n1` nonzeros.
///
/// The problem is non-convex: ADMM (z-step = projection onto the sparse set) is run
/// from up to five starting points — the anchor, the equally-weighted portfolio, the
/// convex relaxation and seeded random feasible points — and each run is polished by
/// re-solving the convex problem on the support it selected. The best polished point
/// is then refined by a single-swap local search over supports and, when there are at
/// most [`EXHAUSTIVE_SUPPORTS`] candidate supports, by enumerating all of them; `notes`
/// carries one diagnostic line per restart plus the search summaries.
pub fn solve_cardinality(
    objective: &Quadratic,
    ridge: Option<&PenaltySpec>,
    sparsity: &SparsitySpec,
    constraints: &AdmmConstraints,
    params: &AdmmParams,
) -> Result<SolveReport> {
    params.validate()?;
    let quad = objective.with_l2(ridge)?;
    let n = quad.dim();
    let k = sparsity.gamma1.nrows();
    if sparsity.gamma1.ncols() != n || sparsity.anchor.len() != n {
        return Err(AllocError::DimensionMismatch("sparsity map does not match the problem size".into()));
    }
    if sparsity.n1 == 0 || sparsity.n1 > k {
        return Err(AllocError::InvalidInput(format!("cardinality {} outside [1, {k}]", sparsity.n1)));
    }
    let (lower, upper) = sparsity.bounds();
    let block = Block {
        matrix: sparsity.gamma1.clone(),
        anchor: sparsity.anchor.clone(),
        op: BlockOp::Cardinality { n1: sparsity.n1, lower: lower.clone(), upper: upper.clone() },
    };
    let problem = MixedProblem::new(quad.clone(), constraints, vec![block])?;
    let solver = SupportSolver { quad: &quad, sparsity, lower, upper, constraints, params };

    let mut starts: Vec<(&str, Result<DVector<f64>>)> = vec![
        ("anchor", Ok(sparsity.anchor.clone())),
        ("equal-weight", Ok(DVector::from_element(n, 1.0 / n as f64))),
        ("relaxation", solve_convex(&quad, constraints, params).map(|r| r.weights)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    while starts.len() < params.restarts {
        starts.push(("random", random_feasible(&mut rng, n, constraints)));
    }
    starts.truncate(params.restarts.max(1));

    let mut best: Option<(Vec<usize>, SolveReport)> = None;
    let mut notes = Vec::new();
    let mut total_iterations = 0;
    for (idx, (label, start)) in starts.into_iter().enumerate() {
        let attempt = start.and_then(|x_start| {
            let mut state = AdmmState::cold(n, problem.split_rows(), params.phi0);
            state.z = problem.initial_split(&x_start)?;
            state.x = x_start;
            let run = solve_mixed_from(&problem, params, state)?;
            total_iterations += run.report.iterations;
            let support = support_from_state(sparsity, &run.state);
            let polished = solver.solve(&support)?;
            Ok((run.report, support, polished))
        });
        match attempt {
            Ok((admm, support, polished)) => {
                notes.push(format!(
                    "restart {idx} ({label}): admm {} after {} iterations, support {support:?}, objective {:.12e}",
                    admm.status, admm.iterations, polished.objective
                ));
                if best.as_ref().map_or(true, |(_, b)| polished.objective < b.objective) {
                    best = Some((support, polished));
                }
            }
            Err(e) => notes.push(format!("restart {idx} ({label}): failed: {e}")),
        }
    }
    let (support, report) = best.ok_or_else(|| AllocError::NoConvergence(notes.join("; ")))?;
    let (support, report, swaps) = solver.improve(support, report);
    notes.push(format!("local search: {swaps} swaps, support {support:?}"));
    let (support, mut report) = if binomial(k, sparsity.n1) <= EXHAUSTIVE_SUPPORTS {
        let (s, r) = solver.enumerate(support, report);
        notes.push(format!("enumerated {} supports, best {s:?}", binomial(k, sparsity.n1)));
        (s, r)
    } else {
        (support, report)
    };
    report.notes.push(format!("support {support:?}"));
    report.iterations = total_iterations;
    notes.append(&mut report.notes);
    report.notes = notes;
    Ok(report)
}

/// Support selected by an ADMM run: the nonzero pattern of the splitting variable,
/// completed to `n1` entries by the largest remaining magnitudes of `Γ₁(x − x₀)`.
fn support_from_state(sparsity: &SparsitySpec, state: &AdmmState) -> Vec<usize> {
    let k = sparsity.gamma1.nrows();
    let z = state.z.rows(0, k).into_owned();
    let image = &sparsity.gamma1 * (&state.x - &sparsity.anchor);
    let mut support: Vec<usize> = (0..k).filter(|&i| z[i].abs() > SPARSITY_ZERO).collect();
    let mut rest: Vec<usize> = (0..k).filter(|i| !support.contains(i)).collect();
    rest.sort_by(|&i, &j| image[j].abs().total_cmp(&image[i].abs()).then(i.cmp(&j)));
    support.extend(rest.into_iter().take(sparsity.n1.saturating_sub(support.len())));
    support.truncate(sparsity.n1);
    support.sort_unstable();
    support
}

/// Problem data shared by the support-restricted convex solves.
struct SupportSolver<'a> {
    quad: &'a Quadratic,
    sparsity: &'a SparsitySpec,
    lower: DVector<f64>,
    upper: DVector<f64>,
    constraints: &'a AdmmConstraints,
    params: &'a AdmmParams,
}

impl SupportSolver<'_> {
    /// Solves the convex problem with the entries of `Γ₁(x − x₀)` outside `support`
    /// forced to zero and the kept entries within their bounds.
    fn solve(&self, support: &[usize]) -> Result<SolveReport> {
        let sp = self.sparsity;
        let k = sp.gamma1.nrows();
        let zeroed: Vec<usize> = (0..k).filter(|i| !support.contains(i)).collect();
        let mut cons = self.constraints.clone();
        if !zeroed.is_empty() {
            let a = DMatrix::from_fn(zeroed.len(), self.quad.dim(), |r, j| sp.gamma1[(zeroed[r], j)]);
            let b = &a * &sp.anchor;
            cons = cons.with_eq_rows(&a, &b);
        }
        for &i in support {
            let row = sp.gamma1.row(i).transpose();
            let shift = row.dot(&sp.anchor);
            if self.upper[i].is_finite() {
                cons.sets.push(ConvexSet::Halfspace { a: row.clone(), b: self.upper[i] + shift });
            }
            if self.lower[i].is_finite() {
                cons.sets.push(ConvexSet::Halfspace { a: -row, b: -(self.lower[i] + shift) });
            }
        }
        let mut report = solve_convex(self.quad, &cons, self.params)?;
        if cons.violation(&report.weights) > 1e-7 {
            return Err(AllocError::Infeasible(format!("support {support:?} admits no feasible point")));
        }
        let nnz = (&sp.gamma1 * (&report.weights - &sp.anchor)).iter().filter(|v| v.abs() > SPARSITY_ZERO).count();
        if nnz > sp.n1 {
            return Err(AllocError::NoConvergence(format!("polished point has {nnz} nonzeros")));
        }
        report.objective = self.quad.value(&report.weights);
        Ok(report)
    }

    /// First-improvement local search over single swaps (one index leaves the
    /// support, one enters) until no swap lowers the objective.
    fn improve(&self, mut support: Vec<usize>, mut best: SolveReport) -> (Vec<usize>, SolveReport, usize) {
        let k = self.sparsity.gamma1.nrows();
        let mut swaps = 0;
        let mut improved = true;
        while improved && swaps < 10 * k {
            improved = false;
            'search: for pos in 0..support.len() {
                for candidate in (0..k).filter(|c| !support.contains(c)) {
                    let mut trial = support.clone();
                    trial[pos] = candidate;
                    trial.sort_unstable();
                    if let Ok(rep) = self.solve(&trial) {
                        if rep.objective < best.objective - 1e-12 * (1.0 + best.objective.abs()) {
                            support = trial;
                            best = rep;
                            swaps += 1;
                            improved = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        (support, best, swaps)
    }

    /// Exhaustive search over all supports of size `n1` (only used when their number
    /// is at most [`EXHAUSTIVE_SUPPORTS`]); returns the best one if it improves.
    fn enumerate(&self, support: Vec<usize>, best: SolveReport) -> (Vec<usize>, SolveReport) {
        let k = self.sparsity.gamma1.nrows();
        let mut winner = (support, best);
        for trial in (0..k).combinations(self.sparsity.n1) {
            if let Ok(rep) = self.solve(&trial) {
                if rep.objective < winner.1.objective - 1e-12 * (1.0 + winner.1.objective.abs()) {
                    winner = (trial, rep);
                }
            }
        }
        winner
    }
}

/// Largest number of candidate supports for which the cardinality solver certifies
/// its answer by enumerating every support.
pub const EXHAUSTIVE_SUPPORTS: u64 = 1_000;

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k) as u64;
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n as u64 - i) / (i + 1);
    }
    acc
}
