//! Dense linear-algebra helpers shared by the solvers.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Symmetric inputs are
//! re-symmetrized before eigendecomposition so roundoff never leaks into
//! PSD checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{LqcError, Result};

/// Relative rank cutoff used for pseudo-inverses.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Largest Kronecker system solved directly by the Stein solver.
const MAX_DIRECT_STEIN_DIM: usize = 30;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.max()
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = sym_eigen(m);
    let vals = eig.eigenvalues.map(f);
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&out)
}

/// Symmetric square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, |v| v.max(0.0).sqrt())
}

/// Clamps eigenvalues below `floor` up to `floor`.
pub fn clamp_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, f64) {
    let eig = sym_eigen(m);
    let worst = eig.eigenvalues.iter().fold(0.0_f64, |acc, &v| acc.max(floor - v));
    if worst <= 0.0 {
        return (symmetrize(m), 0.0);
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (symmetrize(&out), worst)
}

/// Inverse square root of a positive definite matrix.
pub fn pd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 1e-14 * max.max(f64::MIN_POSITIVE) || min <= 0.0 {
        return Err(LqcError::SingularBlock { min_eig: min, max_eig: max });
    }
    let vals = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    Ok(symmetrize(&out))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / min
    }
}

/// Frobenius inner product `trace(a^T b)`.
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Moore-Penrose pseudo-inverse and numerical rank, with singular values
/// below `rel_cutoff * max_singular_value` treated as zero.
pub fn pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, usize) {
    let (r, c) = m.shape();
    if m.is_empty() {
        return (DMatrix::zeros(c, r), 0);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = rel_cutoff * smax;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(c, r);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            out += vt.row(i).transpose() * u.column(i).transpose() * (1.0 / s);
        }
    }
    (out, rank)
}

/// Spectral radius via a real Schur decomposition.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(LqcError::dims("spectral_radius", (m.nrows(), m.nrows()), m.shape()));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| LqcError::NumericalFailure("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Solves the Stein equation `X = M X M^T + S` for stable `M`.
///
/// Small systems are vectorized into `(I - M⊗M) vec X = vec S` and solved by
/// LU; when that solve is unavailable or leaves a large residual the doubling
/// iteration `X += M_k X M_k^T, M_k <- M_k^2` is used instead.
pub fn solve_stein(m: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let scale = s.norm().max(1.0);
    if n <= MAX_DIRECT_STEIN_DIM {
        if let Some(x) = stein_direct(m, s) {
            if stein_residual(m, s, &x) <= 1e-11 * scale.max(x.norm()) {
                return Ok(x);
            }
        }
    }
    stein_doubling(m, s)
}

pub fn stein_residual(m: &DMatrix<f64>, s: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (x - m * x * m.transpose() - s).norm()
}

fn stein_direct(m: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let kron = m.kronecker(m);
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(s.as_slice());
    let lu = lhs.lu();
    let sol = lu.solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

fn stein_doubling(m: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = symmetrize(s);
    let mut mk = m.clone();
    for _ in 0..200 {
        let inc = &mk * &x * mk.transpose();
        let inc_norm = inc.norm();
        x += inc;
        symmetrize_in_place(&mut x);
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
        if inc_norm <= 1e-15 * x.norm().max(1e-300) {
            return Ok(x);
        }
        mk = &mk * &mk;
    }
    Err(LqcError::NumericalFailure("Stein equation fixed-point iteration diverged".into()))
}

/// Euclidean projection of `v` onto `{λ ≥ 0, Σλ ≤ budget}`.
pub fn project_capped_simplex(v: &[f64], budget: f64) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clamped.iter().sum::<f64>() <= budget {
        return clamped;
    }
    // Projection onto {λ ≥ 0, Σλ = budget}: shift by θ and clamp.
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - budget) / (i as f64 + 1.0);
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

pub(crate) fn check_square(context: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(LqcError::dims(context, (n, n), m.shape()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capped_simplex_inside_is_clamp() {
        assert_eq!(project_capped_simplex(&[1.0, -2.0, 0.5], 3.0), vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn capped_simplex_hits_budget() {
        let p = project_capped_simplex(&[3.0, 1.0, -1.0], 2.0);
        assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!((p[0] - 2.0).abs() < 1e-12 && p[1] == 0.0 && p[2] == 0.0);
        let p = project_capped_simplex(&[2.0, 2.0], 2.0);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stein_scalar_geometric_series() {
        let m = DMatrix::from_element(1, 1, 0.5);
        let s = DMatrix::from_element(1, 1, 1.0);
        let x = solve_stein(&m, &s).unwrap();
        assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!(stein_doubling(&m, &s).unwrap()[(0, 0)] - 4.0 / 3.0 < 1e-14);
    }

    #[test]
    fn pinv_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (p, rank) = pinv(&m, RANK_CUTOFF);
        assert_eq!(rank, 1);
        assert!((&m * &p * &m - &m).norm() < 1e-12);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let th: f64 = 0.3;
        let m = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 0.7;
        assert!((spectral_radius(&m).unwrap() - 0.7).abs() < 1e-12);
    }
}
