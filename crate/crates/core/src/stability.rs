//! Strong-stability certificates, mixing and trace bounds, and strong
//! controllability.
//!
//! A certificate for a gain `K` is a factorization `A + BK = H L H^{-1}` with
//! `‖L‖ ≤ 1 - γ` and `‖H‖‖H^{-1}‖ ≤ κ`. All bare norms are spectral norms.

use nalgebra::DMatrix;

use crate::error::{LqcError, Result};
use crate::lds::{self, LinearSystem};
use crate::linalg;

/// Slack applied to every norm comparison in the checks.
pub const CHECK_TOL: f64 = 1e-9;
/// Frobenius tolerance on `H L H^{-1} - (A + BK)`, relative to `max(1, ‖A+BK‖_F)`.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub h: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub kappa: f64,
    pub gamma: f64,
    /// Lower bound on `1 / ‖H^{-1}‖`.
    pub alpha: f64,
    /// Upper bound on `‖H‖`.
    pub beta: f64,
    h_inv: DMatrix<f64>,
}

/// Which norm bounds `‖K‖` in a certificate check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GainNorm {
    Spectral,
    Frobenius,
}

impl GainNorm {
    pub fn of(self, k: &DMatrix<f64>) -> f64 {
        match self {
            GainNorm::Spectral => linalg::spectral_norm(k),
            GainNorm::Frobenius => k.norm(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CertificateCheck {
    pub passed: bool,
    pub gain_norm_kind: GainNorm,
    pub gain_norm: f64,
    pub l_norm: f64,
    pub conditioning: f64,
    pub reconstruction_error: f64,
}

impl StabilityCertificate {
    /// Builds a certificate from an explicit similarity `H` and closed loop.
    /// `L` is `H^{-1} M H`; κ is `max(cond(H), ‖K‖)` and γ is `1 - ‖L‖`.
    pub fn from_similarity(h: DMatrix<f64>, closed_loop: &DMatrix<f64>, gain: &DMatrix<f64>) -> Result<Self> {
        let h_inv = h
            .clone()
            .try_inverse()
            .ok_or_else(|| LqcError::NumericalFailure("similarity transform is singular".into()))?;
        let l = &h_inv * closed_loop * &h;
        let beta = linalg::spectral_norm(&h);
        let cond = beta * linalg::spectral_norm(&h_inv);
        let kappa = cond.max(linalg::spectral_norm(gain));
        let gamma = 1.0 - linalg::spectral_norm(&l);
        Ok(StabilityCertificate {
            alpha: beta / kappa,
            beta,
            kappa,
            gamma,
            h,
            l,
            h_inv,
        })
    }

    pub fn h_inv(&self) -> &DMatrix<f64> {
        &self.h_inv
    }

    pub fn conditioning(&self) -> f64 {
        linalg::spectral_norm(&self.h) * linalg::spectral_norm(&self.h_inv)
    }

    pub fn reconstruction_error(&self, closed_loop: &DMatrix<f64>) -> f64 {
        (&self.h * &self.l * &self.h_inv - closed_loop).norm()
    }
}

/// Lyapunov-based certificate for a stable gain.
///
/// With `ρ = ρ(A+BK)` and `γ' = (1-ρ)/2`, solves
/// `P = (1-γ')^{-2} M^T P M + I` for `M = A + BK`, then takes
/// `H = P^{-1/2}` and `L = P^{1/2} M P^{-1/2}`, so `‖L‖ ≤ 1 - γ'`.
pub fn certify(sys: &LinearSystem, gain: &DMatrix<f64>) -> Result<StabilityCertificate> {
    let rho = lds::check_stable(sys, gain)?;
    let m = sys.closed_loop(gain)?;
    let shrink = 1.0 - 0.5 * (1.0 - rho);
    let scaled_t = m.transpose() / shrink;
    let d = sys.state_dim();
    let p = linalg::solve_stein(&scaled_t, &DMatrix::identity(d, d))?;
    let h = linalg::pd_inv_sqrt(&p).map_err(|e| LqcError::NumericalFailure(format!("Lyapunov solution: {e}")))?;
    let cert = StabilityCertificate::from_similarity(h, &m, gain)?;
    let err = cert.reconstruction_error(&m);
    if err > RECONSTRUCTION_TOL * m.norm().max(1.0) || cert.gamma <= 0.0 {
        return Err(LqcError::NumericalFailure(format!(
            "certificate failed self-check (reconstruction {err:e}, gamma {})",
            cert.gamma
        )));
    }
    Ok(cert)
}

/// Certificate with `H = X^{1/2}` for a positive definite `X` satisfying
/// `X ⪰ (A+BK) X (A+BK)^T + σ² I`, e.g. the state block of a feasible joint
/// covariance.
pub fn certify_from_covariance(sys: &LinearSystem, gain: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<StabilityCertificate> {
    let m = sys.closed_loop(gain)?;
    linalg::check_square("covariance", x, sys.state_dim())?;
    if linalg::min_eigenvalue(x) <= 0.0 {
        return Err(LqcError::SingularBlock {
            min_eig: linalg::min_eigenvalue(x),
            max_eig: linalg::max_eigenvalue(x),
        });
    }
    StabilityCertificate::from_similarity(linalg::psd_sqrt(x), &m, gain)
}

pub fn check_certificate(
    cert: &StabilityCertificate,
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    kappa_req: f64,
    gamma_req: f64,
) -> bool {
    check_certificate_with(cert, sys, gain, kappa_req, gamma_req, GainNorm::Spectral).passed
}

pub fn check_certificate_with(
    cert: &StabilityCertificate,
    sys: &LinearSystem,
    gain: &DMatrix<f64>,
    kappa_req: f64,
    gamma_req: f64,
    norm: GainNorm,
) -> CertificateCheck {
    let gain_norm = norm.of(gain);
    let l_norm = linalg::spectral_norm(&cert.l);
    let conditioning = cert.conditioning();
    let reconstruction_error = match sys.closed_loop(gain) {
        Ok(m) => cert.reconstruction_error(&m) / m.norm().max(1.0),
        Err(_) => f64::INFINITY,
    };
    let passed = gain_norm <= kappa_req + CHECK_TOL
        && l_norm <= 1.0 - gamma_req + CHECK_TOL
        && conditioning <= kappa_req + CHECK_TOL
        && reconstruction_error <= RECONSTRUCTION_TOL;
    CertificateCheck {
        passed,
        gain_norm_kind: norm,
        gain_norm,
        l_norm,
        conditioning,
        reconstruction_error,
    }
}

/// Sequential strong stability at the largest κ among the certificates.
pub fn check_sequential(certs: &[StabilityCertificate], gamma: f64) -> bool {
    let kappa = certs.iter().map(|c| c.kappa).fold(0.0, f64::max);
    check_sequential_at(certs, kappa, gamma)
}

/// Checks, for a shared `(κ, γ)`:
/// (i) `‖L_t‖ ≤ 1-γ`; (ii) a uniform `β ≥ ‖H_t‖`, `α ≤ 1/‖H_t^{-1}‖` with
/// `β/α ≤ κ`; (iii) `‖H_{t+1}^{-1} H_t‖ ≤ 1 + γ/2`.
pub fn check_sequential_at(certs: &[StabilityCertificate], kappa: f64, gamma: f64) -> bool {
    sequential_report(certs, kappa, gamma).passed
}

#[derive(Debug, Clone)]
pub struct SequentialReport {
    pub passed: bool,
    pub max_l_norm: f64,
    pub uniform_conditioning: f64,
    pub max_coupling: f64,
}

pub fn sequential_report(certs: &[StabilityCertificate], kappa: f64, gamma: f64) -> SequentialReport {
    let max_l_norm = certs.iter().map(|c| linalg::spectral_norm(&c.l)).fold(0.0, f64::max);
    let beta = certs.iter().map(|c| linalg::spectral_norm(&c.h)).fold(0.0, f64::max);
    let alpha = certs
        .iter()
        .map(|c| 1.0 / linalg::spectral_norm(&c.h_inv))
        .fold(f64::INFINITY, f64::min);
    let uniform_conditioning = if certs.is_empty() { 1.0 } else { beta / alpha };
    let max_coupling = certs
        .windows(2)
        .map(|w| linalg::spectral_norm(&(&w[1].h_inv * &w[0].h)))
        .fold(0.0, f64::max);
    let passed = max_l_norm <= 1.0 - gamma + CHECK_TOL
        && uniform_conditioning <= kappa + CHECK_TOL
        && max_coupling <= 1.0 + gamma / 2.0 + CHECK_TOL;
    SequentialReport {
        passed,
        max_l_norm,
        uniform_conditioning,
        max_coupling,
    }
}

/// `κ² e^{-2γt} · dist0`.
pub fn mixing_bound(cert: &StabilityCertificate, dist0: f64, t: usize) -> f64 {
    cert.kappa * cert.kappa * (-2.0 * cert.gamma * t as f64).exp() * dist0
}

/// `κ² e^{-γt} · dist1 + 2ηκ²/γ`.
pub fn sequential_mixing_bound(kappa: f64, gamma: f64, dist1: f64, eta: f64, t: usize) -> f64 {
    let k2 = kappa * kappa;
    k2 * (-gamma * t as f64).exp() * dist1 + 2.0 * eta * k2 / gamma
}

/// Bounds on `trace(X)` and `trace(K X K^T)` at steady state.
pub fn trace_bounds(cert: &StabilityCertificate, w: &DMatrix<f64>) -> (f64, f64) {
    let tr = w.trace();
    let k2 = cert.kappa * cert.kappa;
    (k2 / cert.gamma * tr, k2 * k2 / cert.gamma * tr)
}

#[derive(Debug, Clone)]
pub struct ControllabilityReport {
    pub k_steps: usize,
    /// `[B, AB, …, A^{k-1}B]`.
    pub matrix: DMatrix<f64>,
    /// `‖(C^T C)^†‖`.
    pub kappa_ctrl: f64,
    pub rank: usize,
}

impl ControllabilityReport {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.matrix.nrows()
    }
}

pub fn controllability_matrix(sys: &LinearSystem, k_steps: usize) -> DMatrix<f64> {
    let (d, k) = (sys.state_dim(), sys.control_dim());
    let mut c = DMatrix::zeros(d, k * k_steps);
    let mut block = sys.b().clone();
    for i in 0..k_steps {
        c.view_mut((0, i * k), (d, k)).copy_from(&block);
        block = sys.a() * block;
    }
    c
}

pub fn strong_controllability(sys: &LinearSystem, k_steps: usize) -> Result<ControllabilityReport> {
    if k_steps == 0 {
        return Err(LqcError::Contract("k_steps must be at least 1".into()));
    }
    let matrix = controllability_matrix(sys, k_steps);
    let gram = matrix.transpose() * &matrix;
    let eig = linalg::sym_eigen(&gram);
    let top = eig.eigenvalues.max();
    let nonzero: Vec<f64> = eig
        .eigenvalues
        .iter()
        .copied()
        .filter(|&v| top > 0.0 && v > linalg::RANK_CUTOFF * top)
        .collect();
    let kappa_ctrl = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ControllabilityReport {
        k_steps,
        kappa_ctrl: if nonzero.is_empty() { 0.0 } else { 1.0 / kappa_ctrl },
        rank: nonzero.len(),
        matrix,
    })
}

/// Smallest horizon at which the controllability matrix has rank `d`.
pub fn controllability_horizon(sys: &LinearSystem) -> Option<usize> {
    (1..=sys.state_dim()).find(|&ks| {
        strong_controllability(sys, ks)
            .map(|r| r.is_full_rank())
            .unwrap_or(false)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys2(a: &[f64]) -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, a),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn zero_closed_loop() {
        let sys = sys2(&[0.0; 4]);
        let k = DMatrix::zeros(1, 2);
        let cert = certify(&sys, &k).unwrap();
        assert!((&cert.h - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!(cert.l.norm() < 1e-12);
        assert!((cert.gamma - 1.0).abs() < 1e-12);
        assert!((cert.kappa - 1.0).abs() < 1e-12);
        assert!(check_certificate(&cert, &sys, &k, 1.0, 1.0));
        assert!(!check_certificate(&cert, &sys, &k, 0.5, 1.0));
    }

    #[test]
    fn normal_closed_loop() {
        let sys = sys2(&[0.5, 0.0, 0.0, 0.5]);
        let k = DMatrix::zeros(1, 2);
        let cert = certify(&sys, &k).unwrap();
        assert!((cert.gamma - 0.5).abs() < 1e-12);
        assert!((cert.kappa - 1.0).abs() < 1e-12);
        assert!(cert.l[(0, 1)].abs() < 1e-12 && cert.l[(1, 0)].abs() < 1e-12);
        assert!(check_certificate(&cert, &sys, &k, cert.kappa + 0.1, cert.gamma - 0.01));
    }

    #[test]
    fn non_normal_closed_loop() {
        let sys = sys2(&[0.5, 10.0, 0.0, 0.5]);
        let k = DMatrix::zeros(1, 2);
        let cert = certify(&sys, &k).unwrap();
        let m = sys.closed_loop(&k).unwrap();
        assert!(cert.reconstruction_error(&m) <= 1e-8);
        assert!(linalg::spectral_norm(&cert.l) < 1.0);
        assert!(cert.kappa > 1.0);
        assert!((cert.kappa - cert.beta / cert.alpha).abs() < 1e-9 * cert.kappa);
        assert!(check_certificate(&cert, &sys, &k, cert.kappa, cert.gamma));
    }

    #[test]
    fn sequential_examples() {
        let sys = sys2(&[0.5, 1.0, 0.0, 0.3]);
        let k = DMatrix::zeros(1, 2);
        let cert = certify(&sys, &k).unwrap();
        let seq = vec![cert.clone(), cert.clone(), cert.clone()];
        assert!(check_sequential(&seq, cert.gamma));

        let m = sys.closed_loop(&k).unwrap();
        let c = 0.9 / (1.0 + cert.gamma / 2.0);
        let scaled = StabilityCertificate::from_similarity(&cert.h * c, &m, &k).unwrap();
        assert!(!check_sequential_at(&[cert.clone(), scaled], cert.kappa / c, cert.gamma));
    }

    #[test]
    fn bound_evaluators() {
        let sys = sys2(&[0.0; 4]);
        let mut cert = certify(&sys, &DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(mixing_bound(&cert, 3.0, 0), 3.0);
        assert_eq!(mixing_bound(&cert, 0.0, 5), 0.0);
        cert.kappa = 2.0;
        cert.gamma = 0.5;
        assert!((mixing_bound(&cert, 1.0, 2) - 4.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((mixing_bound(&cert, 1.0, 2) - 0.5413).abs() < 1e-4);
        let (xb, ub) = trace_bounds(&cert, &DMatrix::from_diagonal_element(1, 1, 1.0));
        assert_eq!((xb, ub), (8.0, 32.0));
        assert_eq!(trace_bounds(&cert, &DMatrix::zeros(2, 2)), (0.0, 0.0));
        cert.kappa = 1.0;
        cert.gamma = 1.0;
        assert_eq!(trace_bounds(&cert, &DMatrix::identity(3, 3)), (3.0, 3.0));

        assert_eq!(sequential_mixing_bound(1.0, 0.5, 2.5, 0.0, 0), 2.5);
        assert!((sequential_mixing_bound(1.0, 0.5, 0.0, 0.25, 7) - 1.0).abs() < 1e-15);
        let far = sequential_mixing_bound(3.0, 0.5, 10.0, 0.1, 10_000);
        assert!((far - 2.0 * 0.1 * 9.0 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn controllability_examples() {
        let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let rep = strong_controllability(&sys, 1).unwrap();
        assert!((rep.kappa_ctrl - 1.0).abs() < 1e-12);

        let sys = sys2(&[0.0, 1.0, 0.0, 0.0]);
        let rep = strong_controllability(&sys, 2).unwrap();
        assert_eq!(rep.matrix, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert!((rep.kappa_ctrl - 1.0).abs() < 1e-12);
        assert_eq!(rep.rank, 2);
        assert_eq!(controllability_horizon(&sys), Some(2));

        let sys = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::identity(2, 2)).unwrap();
        let rep = strong_controllability(&sys, 2).unwrap();
        assert_eq!(rep.rank, 0);
        assert!(rep.kappa_ctrl.is_finite());
    }
}
