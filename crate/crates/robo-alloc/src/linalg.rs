//! Small dense linear-algebra helpers built on `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{AllocError, Result};

/// Relative cutoff below which singular values are treated as zero.
pub const SVD_RANK_CUTOFF: f64 = 1e-12;

/// Largest absolute entry of a matrix (0 for an empty matrix).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Infinity norm of a vector.
pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Largest entry of `|m - mᵀ|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Checks squareness and symmetry up to `rel_tol · max(1, max|m|)`.
pub fn ensure_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(AllocError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let gap = asymmetry(m);
    if gap > rel_tol * max_abs(m).max(1.0) {
        return Err(AllocError::NotSymmetric(gap));
    }
    Ok(())
}

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Flips the sign of each column so that its first non-negligible entry is positive.
pub fn normalize_column_signs(v: &mut DMatrix<f64>) {
    for j in 0..v.ncols() {
        let scale = v.column(j).iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let lead = v
            .column(j)
            .iter()
            .copied()
            .find(|x| x.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE));
        if let Some(first) = lead {
            if first < 0.0 {
                v.column_mut(j).neg_mut();
            }
        }
    }
}

/// Symmetric eigen-decomposition with eigenvalues sorted in descending order and
/// the sign of every eigenvector fixed by [`normalize_column_signs`].
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    normalize_column_signs(&mut vectors);
    (values, vectors)
}

/// Singular value decomposition `m = U diag(s) Vᵀ` with singular values sorted in
/// descending order. Returns `(U, s, V)`.
pub fn svd_desc(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
    let mut u_sorted = DMatrix::zeros(u.nrows(), k);
    let mut v_sorted = DMatrix::zeros(vt.ncols(), k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &vt.row(src).transpose());
    }
    (u_sorted, s, v_sorted)
}

/// Moore–Penrose pseudo-inverse with the relative rank cutoff [`SVD_RANK_CUTOFF`].
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (u, s, v) = svd_desc(m);
    let smax = s.iter().copied().fold(0.0_f64, f64::max);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for k in 0..s.len() {
        if s[k] > SVD_RANK_CUTOFF * smax && s[k] > 0.0 {
            out += (v.column(k) * u.column(k).transpose()) / s[k];
        }
    }
    out
}

/// Full-pivoting LU factorization of a square matrix that rejects numerically
/// singular matrices (pivot ratio below `1e-14`), reusable for several solves.
#[derive(Debug, Clone)]
pub struct SquareFactor {
    lu: nalgebra::linalg::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl SquareFactor {
    /// Factorizes `m`; `None` when it is numerically singular.
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        if m.nrows() != m.ncols() || m.is_empty() {
            return None;
        }
        let lu = m.clone().full_piv_lu();
        let u = lu.u();
        let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].abs()).collect();
        let big = diag.iter().copied().fold(0.0_f64, f64::max);
        let small = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if big == 0.0 || !(small > 1e-14 * big) {
            return None;
        }
        Some(SquareFactor { lu })
    }

    /// Solves `m x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        self.lu.solve(rhs)
    }

    /// Solves `m X = rhs` for several right-hand sides.
    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        self.lu.solve(rhs)
    }
}

/// Solves a square linear system with full-pivoting LU, rejecting numerically
/// singular matrices (pivot ratio below `1e-14`).
pub fn solve_square(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    SquareFactor::new(m)?.solve(rhs)
}

/// Solves a square linear system with several right-hand sides.
pub fn solve_square_mat(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    SquareFactor::new(m)?.solve_mat(rhs)
}

/// Inverse of a symmetric positive-definite matrix, guarded by a conditioning check
/// (`λ_min ≥ 1e-12 · λ_max`).
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, _) = sym_eigen_desc(m);
    let n = values.len();
    if n == 0 {
        return Err(AllocError::InvalidInput("empty matrix".into()));
    }
    let lmax = values[0];
    let lmin = values[n - 1];
    if lmax <= 0.0 || lmin < 1e-12 * lmax {
        return Err(AllocError::SingularCovariance);
    }
    let chol = nalgebra::Cholesky::new(symmetrize(m)).ok_or(AllocError::SingularCovariance)?;
    Ok(symmetrize(&chol.inverse()))
}

/// Builds a covariance matrix from volatilities and a correlation matrix.
pub fn covariance_from_vols(vols: &DVector<f64>, corr: &DMatrix<f64>) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(vols);
    &d * corr * &d
}

/// Builds a symmetric matrix from its lower-triangular rows (row `i` has `i + 1` entries).
pub fn symmetric_from_lower(rows: &[&[f64]]) -> DMatrix<f64> {
    let n = rows.len();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), i + 1, "row {i} must have {} entries", i + 1);
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Splits a covariance matrix into volatilities and correlations.
pub fn vols_and_correlation(sigma: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = sigma.nrows();
    let vols = DVector::from_iterator(n, (0..n).map(|i| sigma[(i, i)].max(0.0).sqrt()));
    let mut corr = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && vols[i] > 0.0 && vols[j] > 0.0 {
                corr[(i, j)] = sigma[(i, j)] / (vols[i] * vols[j]);
            }
        }
    }
    (vols, corr)
}

/// Upper-triangular Cholesky factor `U` with `UᵀU = m`.
pub fn upper_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m)).ok_or(AllocError::NotPositiveDefinite)?;
    Ok(chol.l().transpose())
}
