//! Proximal operators of norms and Euclidean projections onto simple sets.

use nalgebra::{DMatrix, DVector};

use crate::error::{AllocError, Result};
use crate::linalg;

/// A closed set onto which points can be projected.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    /// The whole space (projection is the identity).
    Whole,
    /// `lower ≤ x ≤ upper` (infinite entries allowed).
    Box { lower: DVector<f64>, upper: DVector<f64> },
    /// `aᵀx = b`.
    Hyperplane { a: DVector<f64>, b: f64 },
    /// `aᵀx ≤ b`.
    Halfspace { a: DVector<f64>, b: f64 },
    /// `A x = b`.
    Affine { a: DMatrix<f64>, b: DVector<f64> },
    /// `‖x‖₁ ≤ radius`.
    L1Ball { radius: f64 },
    /// `‖x‖₂ ≤ radius`.
    L2Ball { radius: f64 },
    /// `‖x‖∞ ≤ radius`.
    LinfBall { radius: f64 },
    /// `x ≥ 0, 1ᵀx = budget`.
    Simplex { budget: f64 },
    /// At most `n1` nonzero entries, kept entries within `[lower, upper]` (not convex).
    Cardinality { n1: usize, lower: DVector<f64>, upper: DVector<f64> },
    /// Intersection of convex sets (exact multiplier search when a hyperplane is present,
    /// Dykstra's algorithm otherwise).
    Intersection(Vec<ConvexSet>),
}

impl ConvexSet {
    /// Box with identical bounds on every coordinate.
    pub fn uniform_box(n: usize, lower: f64, upper: f64) -> Self {
        ConvexSet::Box { lower: DVector::from_element(n, lower), upper: DVector::from_element(n, upper) }
    }

    /// `false` only for cardinality sets (and intersections containing one).
    pub fn is_convex(&self) -> bool {
        match self {
            ConvexSet::Cardinality { .. } => false,
            ConvexSet::Intersection(sets) => sets.iter().all(ConvexSet::is_convex),
            _ => true,
        }
    }

    /// `true` for sets described by finitely many linear constraints.
    pub fn is_polyhedral(&self) -> bool {
        match self {
            ConvexSet::Whole
            | ConvexSet::Box { .. }
            | ConvexSet::Hyperplane { .. }
            | ConvexSet::Halfspace { .. }
            | ConvexSet::Affine { .. }
            | ConvexSet::L1Ball { .. }
            | ConvexSet::LinfBall { .. }
            | ConvexSet::Simplex { .. } => true,
            ConvexSet::Intersection(sets) => sets.iter().all(ConvexSet::is_polyhedral),
            ConvexSet::L2Ball { .. } | ConvexSet::Cardinality { .. } => false,
        }
    }

    /// Checks dimensions and parameter ranges for vectors of length `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let len = |v: &DVector<f64>, what: &str| {
            if v.len() == n {
                Ok(())
            } else {
                Err(AllocError::DimensionMismatch(format!("{what} has length {} for dimension {n}", v.len())))
            }
        };
        let radius = |c: f64| {
            if c > 0.0 && c.is_finite() {
                Ok(())
            } else {
                Err(AllocError::InvalidInput(format!("ball radius must be positive, got {c}")))
            }
        };
        match self {
            ConvexSet::Whole => Ok(()),
            ConvexSet::Box { lower, upper } | ConvexSet::Cardinality { lower, upper, .. } => {
                len(lower, "lower bound")?;
                len(upper, "upper bound")?;
                if (0..n).any(|i| lower[i] > upper[i] || lower[i].is_nan() || upper[i].is_nan()) {
                    return Err(AllocError::EmptySet("box bounds are not ordered".into()));
                }
                if let ConvexSet::Cardinality { n1, .. } = self {
                    if *n1 == 0 || *n1 > n {
                        return Err(AllocError::InvalidInput(format!("cardinality {n1} outside [1, {n}]")));
                    }
                }
                Ok(())
            }
            ConvexSet::Hyperplane { a, .. } | ConvexSet::Halfspace { a, .. } => {
                len(a, "normal vector")?;
                if a.norm() == 0.0 {
                    return Err(AllocError::InvalidInput("normal vector is zero".into()));
                }
                Ok(())
            }
            ConvexSet::Affine { a, b } => {
                if a.ncols() != n || a.nrows() != b.len() {
                    return Err(AllocError::DimensionMismatch("affine system has inconsistent dimensions".into()));
                }
                Ok(())
            }
            ConvexSet::L1Ball { radius: c } | ConvexSet::L2Ball { radius: c } | ConvexSet::LinfBall { radius: c } => radius(*c),
            ConvexSet::Simplex { budget } => {
                if *budget >= 0.0 && budget.is_finite() {
                    Ok(())
                } else {
                    Err(AllocError::EmptySet(format!("simplex budget {budget} is negative")))
                }
            }
            ConvexSet::Intersection(sets) => sets.iter().try_for_each(|s| s.validate(n)),
        }
    }

    /// Largest constraint violation of `x` (0 when `x` belongs to the set).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        match self {
            ConvexSet::Whole => 0.0,
            ConvexSet::Box { lower, upper } => box_violation(x, lower, upper),
            ConvexSet::Hyperplane { a, b } => (a.dot(x) - b).abs(),
            ConvexSet::Halfspace { a, b } => (a.dot(x) - b).max(0.0),
            ConvexSet::Affine { a, b } => linalg::inf_norm(&(a * x - b)),
            ConvexSet::L1Ball { radius } => (x.lp_norm(1) - radius).max(0.0),
            ConvexSet::L2Ball { radius } => (x.norm() - radius).max(0.0),
            ConvexSet::LinfBall { radius } => (x.amax() - radius).max(0.0),
            ConvexSet::Simplex { budget } => {
                let neg = x.iter().fold(0.0f64, |m, &v| m.max(-v));
                neg.max((x.sum() - budget).abs())
            }
            ConvexSet::Cardinality { n1, lower, upper } => {
                let nnz = x.iter().filter(|v| **v != 0.0).count();
                let bounds = x
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .fold(0.0f64, |m, (i, &v)| m.max(lower[i] - v).max(v - upper[i]));
                if nnz > *n1 {
                    f64::INFINITY
                } else {
                    bounds
                }
            }
            ConvexSet::Intersection(sets) => sets.iter().fold(0.0f64, |m, s| m.max(s.violation(x))),
        }
    }
}

fn box_violation(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> f64 {
    (0..x.len()).fold(0.0f64, |m, i| m.max(lower[i] - x[i]).max(x[i] - upper[i]))
}

/// Soft thresholding `sign(vᵢ)·max(|vᵢ| − λ, 0)`: the proximal operator of `λ‖x‖₁`.
///
/// A non-positive `lam` returns `v` unchanged.
pub fn prox_l1(v: &DVector<f64>, lam: f64) -> DVector<f64> {
    let lam = lam.max(0.0);
    v.map(|x| x.signum() * (x.abs() - lam).max(0.0))
}

const ROOT_TOL: f64 = 1e-12;

/// Proximal operator of `(λ/p)‖x‖_p^p`, i.e. the componentwise odd inverse of
/// `f(x) = λx^{p−1} + x` on `x ≥ 0`.
///
/// `p = 1` is soft thresholding, `p = 2` gives `v/(1 + λ)` and `p = 3` has a closed
/// form; other orders are solved numerically (Newton for `p ≥ 2` with a bisection
/// fallback, bisection for `1 < p < 2`) to a residual of `10⁻¹²`.
pub fn prox_lp(v: &DVector<f64>, lam: f64, p: f64) -> Result<DVector<f64>> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(AllocError::NonConvexOrder(p));
    }
    if !lam.is_finite() || lam < 0.0 {
        return Err(AllocError::InvalidInput(format!("prox weight must be finite and non-negative, got {lam}")));
    }
    if p == 1.0 {
        return Ok(prox_l1(v, lam));
    }
    if lam == 0.0 {
        return Ok(v.clone());
    }
    Ok(v.map(|x| x.signum() * lp_scalar(x.abs(), lam, p)))
}

/// Solves `λx^{p−1} + x = a` for `x ∈ [0, a]`, `a ≥ 0`, `p > 1`.
fn lp_scalar(a: f64, lam: f64, p: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if p == 2.0 {
        return a / (1.0 + lam);
    }
    if p == 3.0 {
        // Positive root of λx² + x − a = 0 written without cancellation.
        return 2.0 * a / (1.0 + (1.0 + 4.0 * lam * a).sqrt());
    }
    let f = |x: f64| lam * x.powf(p - 1.0) + x - a;
    let tol = ROOT_TOL * a.max(1.0);
    if p > 2.0 {
        // f is convex and increasing: Newton from an upper bound decreases monotonically.
        let mut x = a.min((a / lam).powf(1.0 / (p - 1.0)));
        for _ in 0..100 {
            let fx = f(x);
            if fx.abs() <= tol {
                return x;
            }
            let slope = lam * (p - 1.0) * x.powf(p - 2.0) + 1.0;
            let next = x - fx / slope;
            if !(next >= 0.0 && next <= a) {
                break;
            }
            x = next;
        }
    }
    let (mut lo, mut hi) = (0.0, a);
    let mut x = 0.5 * a;
    for _ in 0..300 {
        x = 0.5 * (lo + hi);
        let fx = f(x);
        if fx.abs() <= tol || hi - lo <= f64::EPSILON * a {
            break;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
    }
    x
}

/// Norm order for [`prox_norm_moreau`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    /// `‖·‖₁`
    One,
    /// `‖·‖₂`
    Two,
    /// `‖·‖∞`
    Inf,
}

/// Proximal operator of `λ‖x‖_p` through the Moreau decomposition
/// `v − λ·P_B(v/λ)`, `B` being the unit ball of the dual norm.
pub fn prox_norm_moreau(v: &DVector<f64>, lam: f64, order: NormOrder) -> Result<DVector<f64>> {
    if !(lam > 0.0) || !lam.is_finite() {
        return Err(AllocError::InvalidInput(format!("prox weight must be positive, got {lam}")));
    }
    let dual_ball = match order {
        NormOrder::One => ConvexSet::LinfBall { radius: 1.0 },
        NormOrder::Two => ConvexSet::L2Ball { radius: 1.0 },
        NormOrder::Inf => ConvexSet::L1Ball { radius: 1.0 },
    };
    let inner = project(&(v / lam), &dual_ball)?;
    Ok(v - inner * lam)
}

const DYKSTRA_SWEEPS: usize = 20_000;
const DYKSTRA_TOL: f64 = 1e-12;

/// Euclidean projection of `v` onto `set`.
///
/// For the cardinality set the result is a nearest point among possibly several.
pub fn project(v: &DVector<f64>, set: &ConvexSet) -> Result<DVector<f64>> {
    set.validate(v.len())?;
    project_unchecked(v, set)
}

fn project_unchecked(v: &DVector<f64>, set: &ConvexSet) -> Result<DVector<f64>> {
    Ok(match set {
        ConvexSet::Whole => v.clone(),
        ConvexSet::Box { lower, upper } => project_box(v, lower, upper),
        ConvexSet::Hyperplane { a, b } => v - a * ((a.dot(v) - b) / a.norm_squared()),
        ConvexSet::Halfspace { a, b } => {
            let excess = a.dot(v) - b;
            if excess <= 0.0 {
                v.clone()
            } else {
                v - a * (excess / a.norm_squared())
            }
        }
        ConvexSet::Affine { a, b } => {
            let x = v - linalg::pinv(a) * (a * v - b);
            let residual = linalg::inf_norm(&(a * &x - b));
            if residual > 1e-9 * (1.0 + linalg::inf_norm(b)) {
                return Err(AllocError::EmptySet(format!("affine system is inconsistent (residual {residual:e})")));
            }
            x
        }
        ConvexSet::L1Ball { radius } => {
            if v.lp_norm(1) <= *radius {
                v.clone()
            } else {
                let magnitude = project_simplex(&v.abs(), *radius);
                DVector::from_fn(v.len(), |i, _| v[i].signum() * magnitude[i])
            }
        }
        ConvexSet::L2Ball { radius } => {
            let norm = v.norm();
            if norm <= *radius {
                v.clone()
            } else {
                v * (radius / norm)
            }
        }
        ConvexSet::LinfBall { radius } => v.map(|x| x.clamp(-radius, *radius)),
        ConvexSet::Simplex { budget } => project_simplex(v, *budget),
        ConvexSet::Cardinality { n1, lower, upper } => project_cardinality_unchecked(v, *n1, lower, upper),
        ConvexSet::Intersection(sets) => {
            if !set.is_convex() {
                return Err(AllocError::InvalidInput("intersections of non-convex sets are not supported".into()));
            }
            dykstra(v, sets)?
        }
    })
}

fn project_box(v: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].max(lower[i]).min(upper[i]))
}

/// Sort-based projection onto `{x ≥ 0, 1ᵀx = budget}`.
fn project_simplex(v: &DVector<f64>, budget: f64) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - budget) / (k as f64 + 1.0);
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Projection onto the L1 ball by bisection on the threshold `θ` solving
/// `Σ max(|vᵢ| − θ, 0) = radius`; kept as an independent check of the sort-based path.
pub fn project_l1_ball_bisection(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    if v.lp_norm(1) <= radius {
        return v.clone();
    }
    let mass = |t: f64| v.iter().map(|x| (x.abs() - t).max(0.0)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, v.amax());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    prox_l1(v, 0.5 * (lo + hi))
}

fn dykstra(v: &DVector<f64>, sets: &[ConvexSet]) -> Result<DVector<f64>> {
    if sets.is_empty() {
        return Ok(v.clone());
    }
    if sets.len() == 1 {
        return project_unchecked(v, &sets[0]);
    }
    // A hyperplane among the sets is handled exactly through its scalar multiplier.
    if let Some(k) = sets.iter().position(|s| matches!(s, ConvexSet::Hyperplane { .. })) {
        if let ConvexSet::Hyperplane { a, b } = &sets[k] {
            let rest: Vec<ConvexSet> = sets.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, s)| s.clone()).collect();
            let inner = if rest.len() == 1 { rest[0].clone() } else { ConvexSet::Intersection(rest) };
            return project_hyperplane_intersection(v, a, *b, &inner);
        }
    }
    let mut x = v.clone();
    let mut increments = vec![DVector::zeros(v.len()); sets.len()];
    for _ in 0..DYKSTRA_SWEEPS {
        // Stop on the total change of the correction terms, which (unlike the change
        // of x alone) vanishes only at the projection.
        let mut change = 0.0;
        for (set, inc) in sets.iter().zip(increments.iter_mut()) {
            let y = &x + &*inc;
            x = project_unchecked(&y, set)?;
            let next = y - &x;
            change += (&next - &*inc).norm_squared();
            *inc = next;
        }
        if change.sqrt() <= DYKSTRA_TOL * (1.0 + v.norm()) {
            break;
        }
    }
    Ok(x)
}

/// Projection onto `{aᵀx = b} ∩ Ω` as `P_Ω(v − λ*a)`, where the scalar `λ*` solves
/// `aᵀP_Ω(v − λa) = b` (found by bracketing and bisection).
pub fn project_hyperplane_intersection(v: &DVector<f64>, a: &DVector<f64>, b: f64, inner: &ConvexSet) -> Result<DVector<f64>> {
    let n = v.len();
    if a.len() != n {
        return Err(AllocError::DimensionMismatch("normal vector length differs from the point".into()));
    }
    if a.norm() == 0.0 {
        return Err(AllocError::InvalidInput("normal vector is zero".into()));
    }
    inner.validate(n)?;
    if !inner.is_convex() {
        return Err(AllocError::InvalidInput("inner set must be convex".into()));
    }
    let point = |lam: f64| project_unchecked(&(v - a * lam), inner);
    let gap = |lam: f64| -> Result<f64> { Ok(a.dot(&point(lam)?) - b) };
    let tol = 1e-10;
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut g_lo = gap(lo)?;
    let mut g_hi = gap(hi)?;
    let mut expansions = 0;
    while !(g_lo >= 0.0 && g_hi <= 0.0) {
        expansions += 1;
        if expansions > 200 {
            return Err(AllocError::EmptyIntersection("no multiplier brackets the hyperplane".into()));
        }
        if g_lo < 0.0 {
            hi = lo;
            g_hi = g_lo;
            lo *= 2.0;
            g_lo = gap(lo)?;
        } else {
            lo = hi;
            g_lo = g_hi;
            hi *= 2.0;
            g_hi = gap(hi)?;
        }
    }
    if g_lo.abs() <= tol {
        return point(lo);
    }
    if g_hi.abs() <= tol {
        return point(hi);
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..400 {
        mid = 0.5 * (lo + hi);
        let g = gap(mid)?;
        if g.abs() <= tol || hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = point(mid)?;
    let residual = (a.dot(&x) - b).abs();
    if residual > tol * (1.0 + b.abs()).max(1.0) * 10.0 {
        return Err(AllocError::EmptyIntersection(format!("hyperplane residual {residual:e} after bisection")));
    }
    Ok(x)
}

/// Keeps the (at most) `n1` entries whose clipping to their bounds brings the point
/// closest to `v` (lowest index first among ties) and zeroes the others.
pub fn project_cardinality(v: &DVector<f64>, n1: usize, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<DVector<f64>> {
    let set = ConvexSet::Cardinality { n1, lower: lower.clone(), upper: upper.clone() };
    set.validate(v.len())?;
    Ok(project_cardinality_unchecked(v, n1, lower, upper))
}

fn project_cardinality_unchecked(v: &DVector<f64>, n1: usize, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    // Keeping entry i instead of zeroing it lowers the squared distance by
    // v_i² − (v_i − clip(v_i))²; the best support holds the n1 largest positive gains.
    let kept: Vec<f64> = (0..v.len()).map(|i| v[i].max(lower[i]).min(upper[i])).collect();
    let gain: Vec<f64> = (0..v.len()).map(|i| v[i] * v[i] - (v[i] - kept[i]).powi(2)).collect();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| gain[j].total_cmp(&gain[i]).then(i.cmp(&j)));
    let mut x = DVector::zeros(v.len());
    for &i in order.iter().take(n1).filter(|&&i| gain[i] > 0.0) {
        x[i] = kept[i];
    }
    x
}
