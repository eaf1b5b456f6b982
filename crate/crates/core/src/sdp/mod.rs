//! Semidefinite relaxation of steady-state LQ control.
//!
//! The feasible set is
//! `S = {Σ ⪰ 0, trace Σ ≤ ν, Σ_xx = [A B] Σ [A B]^T + W}` over symmetric
//! `(d+k)×(d+k)` joint state/control covariances. Any `Σ ∈ S` yields a stable
//! gain `K = Σ_xu^T Σ_xx^{-1}` whose own steady-state joint covariance is
//! dominated by `Σ`.

mod oracle;
mod project;

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{LqcError, Result};
use crate::lds::{self, CostPair, GaussianPolicy, LinearSystem};
use crate::linalg;

pub use oracle::{oracle, solve_oracle, OracleOptions, OracleSolution};
pub use project::{project_spectrahedron, AffineProjector, ProjectionStats};

/// Symmetric joint covariance of `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    sigma: DMatrix<f64>,
    state_dim: usize,
}

impl JointCovariance {
    pub fn new(sigma: DMatrix<f64>, state_dim: usize) -> Result<Self> {
        let n = sigma.nrows();
        if sigma.ncols() != n || state_dim == 0 || state_dim >= n {
            return Err(LqcError::dims("joint covariance", (n, n), sigma.shape()));
        }
        let asym = (&sigma - sigma.transpose()).norm();
        if asym > 1e-9 * sigma.norm().max(1.0) {
            return Err(LqcError::Contract(format!("joint covariance is not symmetric (asymmetry {asym:e})")));
        }
        Ok(JointCovariance {
            sigma: linalg::symmetrize(&sigma),
            state_dim,
        })
    }

    pub(crate) fn from_symmetric(sigma: DMatrix<f64>, state_dim: usize) -> Self {
        JointCovariance { sigma, state_dim }
    }

    pub fn from_blocks(xx: &DMatrix<f64>, xu: &DMatrix<f64>, uu: &DMatrix<f64>) -> Result<Self> {
        let (d, k) = (xx.nrows(), uu.nrows());
        if xu.shape() != (d, k) {
            return Err(LqcError::dims("Σ_xu", (d, k), xu.shape()));
        }
        let mut s = DMatrix::zeros(d + k, d + k);
        s.view_mut((0, 0), (d, d)).copy_from(xx);
        s.view_mut((0, d), (d, k)).copy_from(xu);
        s.view_mut((d, 0), (k, d)).copy_from(&xu.transpose());
        s.view_mut((d, d), (k, k)).copy_from(uu);
        JointCovariance::new(s, d)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.sigma
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.sigma.nrows() - self.state_dim
    }

    pub fn xx(&self) -> DMatrix<f64> {
        let d = self.state_dim;
        self.sigma.view((0, 0), (d, d)).into_owned()
    }

    pub fn xu(&self) -> DMatrix<f64> {
        let (d, k) = (self.state_dim, self.control_dim());
        self.sigma.view((0, d), (d, k)).into_owned()
    }

    pub fn uu(&self) -> DMatrix<f64> {
        let (d, k) = (self.state_dim, self.control_dim());
        self.sigma.view((d, d), (k, k)).into_owned()
    }

    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }
}

/// Feasibility tolerances and iteration limits.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdpTolerances {
    /// Frobenius tolerance on the dynamics equality.
    pub equality: f64,
    /// Allowed negative eigenvalue of Σ.
    pub psd: f64,
    /// Allowed trace overshoot.
    pub trace: f64,
    /// Target distance between the two alternating iterates at termination.
    pub projection: f64,
    pub max_iterations: usize,
}

impl Default for SdpTolerances {
    fn default() -> Self {
        SdpTolerances {
            equality: 1e-6,
            psd: 1e-8,
            trace: 1e-8,
            projection: 1e-10,
            max_iterations: 5000,
        }
    }
}

/// The point of `{Σ ⪰ 0, Σ_xx = [A B] Σ [A B]^T + W}` with the smallest
/// trace. Its trace is the optimal average cost `trace(P W)` of the LQ
/// problem with `Q = I`, `R = I`, attained by a deterministic policy. `P`
/// comes from Riccati value iteration started at zero; the iterates increase
/// monotonically and stay bounded iff `(A, B)` is stabilizable. Returns
/// `None` when they diverge.
pub fn minimum_trace_point(sys: &LinearSystem) -> Option<JointCovariance> {
    let (a, b) = (sys.a(), sys.b());
    let (d, k) = (sys.state_dim(), sys.control_dim());
    let mut p = DMatrix::<f64>::zeros(d, d);
    let mut value = 0.0;
    for _ in 0..1_000_000 {
        let bp = b.transpose() * &p;
        let gain = (DMatrix::identity(k, k) + &bp * b).cholesky()?.solve(&(&bp * a));
        let next = DMatrix::identity(d, d) + a.transpose() * &p * a - (&bp * a).transpose() * &gain;
        p = linalg::symmetrize(&next);
        let next_value = linalg::inner(&p, sys.w());
        if !next_value.is_finite() || next_value > 1e15 {
            return None;
        }
        if next_value - value <= 1e-14 * next_value {
            let bp = b.transpose() * &p;
            let gain = -(DMatrix::identity(k, k) + &bp * b).cholesky()?.solve(&(&bp * a));
            return lift(sys, &gain, &DMatrix::zeros(k, k)).ok();
        }
        value = next_value;
    }
    None
}

/// The feasible set `S` for one system and trace budget, with the affine
/// projector precomputed. Immutable and cheap to clone.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    sys: Arc<LinearSystem>,
    nu: f64,
    tol: SdpTolerances,
    affine: Arc<AffineProjector>,
    min_trace: Arc<JointCovariance>,
}

impl SdpProblem {
    pub fn new(sys: LinearSystem, nu: f64) -> Result<Self> {
        Self::with_tolerances(sys, nu, SdpTolerances::default())
    }

    pub fn with_tolerances(sys: LinearSystem, nu: f64, tol: SdpTolerances) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(LqcError::Config(format!("trace budget must be positive, got {nu}")));
        }
        let trw = sys.w().trace();
        if nu < trw - tol.trace {
            return Err(LqcError::InfeasibleSet(format!(
                "trace budget {nu} is below trace(W) = {trw}"
            )));
        }
        let min_trace = minimum_trace_point(&sys)
            .ok_or_else(|| LqcError::InfeasibleSet("(A, B) is not stabilizable".into()))?;
        if nu < min_trace.trace() - tol.trace {
            return Err(LqcError::InfeasibleSet(format!(
                "trace budget {nu} is below the smallest feasible trace {}",
                min_trace.trace()
            )));
        }
        let affine = Arc::new(AffineProjector::new(&sys)?);
        Ok(SdpProblem {
            sys: Arc::new(sys),
            nu,
            tol,
            affine,
            min_trace: Arc::new(min_trace),
        })
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn tolerances(&self) -> &SdpTolerances {
        &self.tol
    }

    /// The member of `S` with the smallest trace.
    pub fn min_trace_point(&self) -> &JointCovariance {
        &self.min_trace
    }

    pub fn dim(&self) -> usize {
        self.sys.state_dim() + self.sys.control_dim()
    }

    pub fn affine(&self) -> &AffineProjector {
        &self.affine
    }

    /// Frobenius projection onto `S` (Dykstra's alternating projections).
    pub fn project(&self, sigma0: &DMatrix<f64>) -> Result<JointCovariance> {
        self.project_with_stats(sigma0).map(|(s, _)| s)
    }

    pub fn project_with_stats(&self, sigma0: &DMatrix<f64>) -> Result<(JointCovariance, ProjectionStats)> {
        project::dykstra(self, sigma0)
    }

    /// `‖Σ_xx - [A B] Σ [A B]^T - W‖_F`.
    pub fn equality_residual(&self, sigma: &DMatrix<f64>) -> f64 {
        let d = self.sys.state_dim();
        let g = self.sys.joint_map();
        let r = sigma.view((0, 0), (d, d)) - &g * sigma * g.transpose() - self.sys.w();
        r.norm()
    }

    pub fn is_feasible(&self, sigma: &DMatrix<f64>) -> FeasibilityReport {
        let n = self.dim();
        if sigma.shape() != (n, n) {
            return FeasibilityReport {
                feasible: false,
                equality_residual: f64::INFINITY,
                min_eigenvalue: f64::NEG_INFINITY,
                trace_excess: f64::INFINITY,
                asymmetry: f64::INFINITY,
            };
        }
        let equality_residual = self.equality_residual(sigma);
        let min_eigenvalue = linalg::min_eigenvalue(sigma);
        let trace_excess = sigma.trace() - self.nu;
        let asymmetry = (sigma - sigma.transpose()).norm();
        let feasible = equality_residual <= self.tol.equality
            && min_eigenvalue >= -self.tol.psd
            && trace_excess <= self.tol.trace
            && asymmetry <= 1e-9;
        FeasibilityReport {
            feasible,
            equality_residual,
            min_eigenvalue,
            trace_excess,
            asymmetry,
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub equality_residual: f64,
    pub min_eigenvalue: f64,
    pub trace_excess: f64,
    pub asymmetry: f64,
}

/// `blockdiag(Q, R)`.
pub fn cost_matrix(c: &CostPair) -> DMatrix<f64> {
    let (d, k) = (c.q.nrows(), c.r.nrows());
    let mut l = DMatrix::zeros(d + k, d + k);
    l.view_mut((0, 0), (d, d)).copy_from(&c.q);
    l.view_mut((d, d), (k, k)).copy_from(&c.r);
    l
}

/// `trace(Q Σ_xx) + trace(R Σ_uu)`.
pub fn objective(c: &CostPair, sigma: &JointCovariance) -> Result<f64> {
    if c.q.nrows() != sigma.state_dim() || c.r.nrows() != sigma.control_dim() {
        return Err(LqcError::dims(
            "objective",
            (sigma.state_dim(), sigma.control_dim()),
            (c.q.nrows(), c.r.nrows()),
        ));
    }
    Ok(linalg::inner(&c.q, &sigma.xx()) + linalg::inner(&c.r, &sigma.uu()))
}

/// `K(Σ) = Σ_xu^T Σ_xx^{-1}`.
pub fn extract(sigma: &JointCovariance) -> Result<DMatrix<f64>> {
    let xx = sigma.xx();
    let eig = linalg::sym_eigen(&xx);
    let (min, max) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if min.is_nan() || min <= 1e-12 * max || max <= 0.0 {
        return Err(LqcError::SingularBlock { min_eig: min, max_eig: max });
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let xx_inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Ok(sigma.xu().transpose() * xx_inv)
}

/// Steady-state joint covariance of `u ~ N(Kx, V)`:
/// `[[X, X K^T], [K X, K X K^T + V]]`.
pub fn lift(sys: &LinearSystem, gain: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<JointCovariance> {
    let pol = GaussianPolicy::new(gain.clone(), noise.clone())?;
    let x = lds::solve_steady_state(sys, &pol)?;
    lift_given(&x, gain, noise)
}

pub(crate) fn lift_given(x: &DMatrix<f64>, gain: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<JointCovariance> {
    let xu = x * gain.transpose();
    let uu = linalg::symmetrize(&(gain * x * gain.transpose() + noise));
    JointCovariance::from_blocks(x, &xu, &uu)
}

/// `V = Σ_uu - K Σ_xx K^T` with negative eigenvalues clamped to zero.
/// Returns `V` and the largest clamped magnitude.
pub fn gaussian_excess(sigma: &JointCovariance, gain: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let v = sigma.uu() - gain * sigma.xx() * gain.transpose();
    linalg::clamp_eigenvalues(&v, 0.0)
}
