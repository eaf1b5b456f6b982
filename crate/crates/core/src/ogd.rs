//! Online gradient descent over the SDP relaxation, playing the Gaussian
//! policy extracted from the current iterate.

use nalgebra::DMatrix;

use crate::error::{LqcError, Result};
use crate::lds::{ControlVector, CostPair, GaussianPolicy, RandomStream, StateVector};
use crate::sdp::{self, JointCovariance, SdpProblem};

#[derive(Debug, Clone)]
pub struct OgdState {
    sigma: JointCovariance,
    eta: f64,
    prob: SdpProblem,
    round: usize,
    policy: GaussianPolicy,
    /// Largest negative eigenvalue clamped away when forming `V_t`.
    excess_clamp: f64,
}

fn policy_of(sigma: &JointCovariance) -> Result<(GaussianPolicy, f64)> {
    let gain = sdp::extract(sigma)?;
    let (noise, clamp) = sdp::gaussian_excess(sigma, &gain);
    Ok((GaussianPolicy::new(gain, noise)?, clamp))
}

impl OgdState {
    /// `Σ_1` is the projection of the identity onto the feasible set.
    pub fn init(prob: SdpProblem, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(LqcError::Config(format!("step size must be finite and non-negative, got {eta}")));
        }
        let n = prob.dim();
        let sigma = prob.project(&DMatrix::identity(n, n))?;
        let (policy, excess_clamp) = policy_of(&sigma)?;
        Ok(OgdState {
            sigma,
            eta,
            prob,
            round: 1,
            policy,
            excess_clamp,
        })
    }

    pub fn sigma(&self) -> &JointCovariance {
        &self.sigma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn problem(&self) -> &SdpProblem {
        &self.prob
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// `(K_t, V_t)` extracted from `Σ_t`.
    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.policy.gain
    }

    pub fn excess_clamp(&self) -> f64 {
        self.excess_clamp
    }

    /// Samples `u ~ N(K_t x, V_t)`.
    pub fn act(&self, x: &StateVector, rng: &mut RandomStream) -> ControlVector {
        self.policy.sample(x, rng)
    }

    /// `Σ_{t+1} = Π_S[Σ_t - η blockdiag(Q_t, R_t)]`. Returns `‖Σ_{t+1} - Σ_t‖_F`.
    pub fn update(&mut self, c: &CostPair) -> Result<f64> {
        c.check_for(self.prob.system())?;
        let target = self.sigma.matrix() - sdp::cost_matrix(c) * self.eta;
        let next = self.prob.project(&target)?;
        let (policy, clamp) = policy_of(&next)?;
        let moved = (next.matrix() - self.sigma.matrix()).norm();
        self.sigma = next;
        self.policy = policy;
        self.excess_clamp = clamp;
        self.round += 1;
        Ok(moved)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OgdParams {
    pub nu: f64,
    pub eta: f64,
    /// Whether `T` meets `T ≥ 8κ⁴λ²/(γσ²)`.
    pub horizon_ok: bool,
}

/// `ν = 2κ⁴λ²/γ`, `η = σ³/(2C√(νT))`.
pub fn recommended_params(kappa: f64, gamma: f64, lambda: f64, sigma: f64, c: f64, horizon: usize) -> OgdParams {
    let t = horizon as f64;
    let nu = 2.0 * kappa.powi(4) * lambda * lambda / gamma;
    let eta = sigma.powi(3) / (2.0 * c * (nu * t).sqrt());
    let threshold = 8.0 * kappa.powi(4) * lambda * lambda / (gamma * sigma * sigma);
    let horizon_ok = t >= threshold;
    if !horizon_ok {
        log::warn!("horizon {horizon} is below the recommended minimum {threshold:.1}");
    }
    OgdParams { nu, eta, horizon_ok }
}
