use nalgebra::{DMatrix, DVector};

use super::{JointCovariance, SdpProblem};
use crate::error::{LqcError, Result};
use crate::lds::LinearSystem;
use crate::linalg;

/// Exact Frobenius projection onto the affine subspace
/// `{Σ symmetric : Σ_xx - [A B] Σ [A B]^T = W}`.
///
/// Symmetric matrices are handled in orthonormal `svec` coordinates (diagonal
/// entries as is, off-diagonal pairs scaled by √2) so the Frobenius norm is
/// the Euclidean norm and the projector is a dense matrix
/// `I - M^+ M` plus the offset `M^+ svec(W)`.
#[derive(Debug, Clone)]
pub struct AffineProjector {
    n: usize,
    linear: DMatrix<f64>,
    offset: DVector<f64>,
    rank: usize,
}

fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(svec_len(n));
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            v[idx] = if i == j {
                m[(i, i)]
            } else {
                std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            idx += 1;
        }
    }
    v
}

fn smat(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[idx];
            } else {
                let x = v[idx] * std::f64::consts::FRAC_1_SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            idx += 1;
        }
    }
    m
}

impl AffineProjector {
    pub fn new(sys: &LinearSystem) -> Result<Self> {
        let d = sys.state_dim();
        let n = d + sys.control_dim();
        let g = sys.joint_map();
        let cols = svec_len(n);
        let mut constraint = DMatrix::zeros(svec_len(d), cols);
        let mut basis = DVector::zeros(cols);
        for c in 0..cols {
            basis.fill(0.0);
            basis[c] = 1.0;
            let e = smat(&basis, n);
            let image = e.view((0, 0), (d, d)) - &g * &e * g.transpose();
            constraint.set_column(c, &svec(&image));
        }
        let (pinv, rank) = linalg::pinv(&constraint, 1e-12);
        let linear = DMatrix::identity(cols, cols) - &pinv * &constraint;
        let offset = &pinv * svec(sys.w());
        if !linear.iter().chain(offset.iter()).all(|v| v.is_finite()) {
            return Err(LqcError::NumericalFailure("affine projector is not finite".into()));
        }
        Ok(AffineProjector { n, linear, offset, rank })
    }

    /// Rank of the dynamics constraint map; `d(d+1)/2` unless degenerate.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn project(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let v = &self.linear * svec(m) + &self.offset;
        smat(&v, self.n)
    }
}

/// Frobenius projection onto `{Σ ⪰ 0, trace Σ ≤ ν}`: eigendecomposition,
/// then Euclidean projection of the spectrum onto `{λ ≥ 0, Σλ ≤ ν}`.
pub fn project_spectrahedron(m: &DMatrix<f64>, nu: f64) -> DMatrix<f64> {
    let eig = linalg::sym_eigen(m);
    let projected = linalg::project_capped_simplex(eig.eigenvalues.as_slice(), nu);
    let vals = DVector::from_vec(projected);
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&vals) * v.transpose();
    linalg::symmetrize_in_place(&mut out);
    out
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct ProjectionStats {
    pub iterations: usize,
    /// Final distance between the affine and spectrahedral iterates.
    pub gap: f64,
}

/// Dykstra's algorithm for the intersection of the affine subspace and the
/// spectrahedron. The affine projector is linear up to a shift, so its
/// correction term vanishes and only the spectrahedral correction is kept.
pub(super) fn dykstra(prob: &SdpProblem, sigma0: &DMatrix<f64>) -> Result<(JointCovariance, ProjectionStats)> {
    let n = prob.dim();
    if sigma0.shape() != (n, n) {
        return Err(LqcError::dims("projection input", (n, n), sigma0.shape()));
    }
    if !sigma0.iter().all(|v| v.is_finite()) {
        return Err(LqcError::Contract("projection input has non-finite entries".into()));
    }
    let tol = prob.tolerances();
    let nu = prob.nu();
    let d = prob.system().state_dim();
    let scale = sigma0.norm().max(1.0);

    let mut x = linalg::symmetrize(sigma0);
    let mut correction = DMatrix::<f64>::zeros(n, n);
    let mut gap = f64::INFINITY;

    for it in 1..=tol.max_iterations {
        let y = prob.affine().project(&x);
        let shifted = &y + &correction;
        let next = project_spectrahedron(&shifted, nu);
        correction = shifted - &next;
        gap = (&next - &y).norm();
        let step = (&next - &x).norm();
        x = next;

        if gap <= tol.projection * scale && step <= tol.projection * scale {
            let stats = ProjectionStats { iterations: it, gap };
            return Ok((JointCovariance::from_symmetric(x, d), stats));
        }
    }

    // Accept the iterate if it is feasible to tolerance even though the
    // iterates were still moving.
    if prob.is_feasible(&x).feasible && gap <= tol.equality {
        let stats = ProjectionStats {
            iterations: tol.max_iterations,
            gap,
        };
        return Ok((JointCovariance::from_symmetric(x, d), stats));
    }
    Err(LqcError::NonConvergence {
        what: "Dykstra projection",
        iterations: tol.max_iterations,
        residual: gap,
        best: Some(Box::new(x)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::lift;

    #[test]
    fn svec_is_isometric() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 5.0, 6.0, 3.0, 6.0, 9.0]);
        let v = svec(&m);
        assert!((v.norm() - m.norm()).abs() < 1e-12);
        assert!((smat(&v, 3) - m).norm() < 1e-12);
    }

    #[test]
    fn affine_projection_satisfies_dynamics() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.3]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let prob = SdpProblem::new(sys, 100.0).unwrap();
        let m = DMatrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64).sin());
        let y = prob.affine().project(&linalg::symmetrize(&m));
        assert!(prob.equality_residual(&y) < 1e-10);
        // idempotent
        assert!((prob.affine().project(&y) - &y).norm() < 1e-10);
    }

    #[test]
    fn dykstra_fixes_members() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(1, 1, &[0.5]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let prob = SdpProblem::new(sys.clone(), 10.0).unwrap();
        let s = lift(&sys, &DMatrix::from_element(1, 1, -0.3), &DMatrix::from_element(1, 1, 0.2)).unwrap();
        let (p, stats) = prob.project_with_stats(s.matrix()).unwrap();
        assert!((p.matrix() - s.matrix()).norm() <= 1e-7);
        assert!(stats.iterations <= 2);
    }
}
