//! Procedures that drive the state to (near) zero between policy switches,
//! with their cost bounds.

use nalgebra::{DMatrix, DVector};

use crate::error::{LqcError, Result};
use crate::lds::{self, ControlVector, CostPair, GaussianPolicy, LinearSystem, StateVector};
use crate::linalg;
use crate::stability::{self, StabilityCertificate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetStrategy {
    OneStep,
    KStepZeroing,
    Decay,
    Superposition,
    Soft,
}

fn pinv_b(sys: &LinearSystem) -> (DMatrix<f64>, usize) {
    linalg::pinv(sys.b(), linalg::RANK_CUTOFF)
}

/// `u = -B^† A x`. Requires `B` to have full column rank.
pub fn one_step(sys: &LinearSystem, x: &StateVector) -> Result<ControlVector> {
    let (b_pinv, rank) = pinv_b(sys);
    if rank < sys.control_dim() || (&b_pinv * sys.b() - DMatrix::identity(rank, rank)).norm() > 1e-8 {
        return Err(LqcError::RankDeficient(format!(
            "B has rank {rank} but {} columns",
            sys.control_dim()
        )));
    }
    Ok(-(b_pinv * sys.a() * x))
}

/// Whether [`one_step`] lands exactly on the noise, i.e. `B B^† A = A`.
/// Full column rank alone is not enough when `k < d`.
pub fn one_step_is_exact(sys: &LinearSystem) -> bool {
    let (b_pinv, rank) = pinv_b(sys);
    rank == sys.control_dim() && (sys.b() * b_pinv * sys.a() - sys.a()).norm() <= 1e-8 * sys.a().norm().max(1.0)
}

/// `C ν (1 + ‖B^† A‖²)`.
pub fn one_step_cost_bound(sys: &LinearSystem, nu: f64, c: f64) -> f64 {
    let (b_pinv, _) = pinv_b(sys);
    let g = linalg::spectral_norm(&(b_pinv * sys.a()));
    c * nu * (1.0 + g * g)
}

/// Minimum-energy controls `u_0, …, u_{k-1}` driving the noiseless system
/// from `x0` to zero in `k_steps` rounds.
pub fn k_step_zeroing(sys: &LinearSystem, x0: &StateVector, k_steps: usize) -> Result<Vec<ControlVector>> {
    let report = stability::strong_controllability(sys, k_steps)?;
    let d = sys.state_dim();
    if report.rank < d {
        return Err(LqcError::Uncontrollable {
            steps: k_steps,
            rank: report.rank,
            dim: d,
        });
    }
    let k = sys.control_dim();
    // x_k = A^k x0 + C_k (u_{k-1}; …; u_0)
    let target = -(sys.a().pow(k_steps as u32) * x0);
    let (c_pinv, _) = linalg::pinv(&report.matrix, linalg::RANK_CUTOFF);
    let stacked = c_pinv * target;
    Ok((0..k_steps)
        .map(|i| {
            let block = k_steps - 1 - i;
            stacked.rows(block * k, k).into_owned()
        })
        .collect())
}

/// Noiseless cost `Σ_{t=0}^{k} x_t^T Q x_t + Σ_{t<k} u_t^T R u_t` of playing
/// `controls` from `x0`.
pub fn zeroing_cost(sys: &LinearSystem, x0: &StateVector, controls: &[ControlVector], q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let mut x = x0.clone();
    let mut cost = 0.0;
    for u in controls {
        cost += x.dot(&(q * &x)) + u.dot(&(r * u));
        x = sys.drift(&x, u);
    }
    cost + x.dot(&(q * &x))
}

/// `k² a^{2k} + κ² a^{2k} (1 + k² a^{2k} b²)` for `Q, R ⪯ I`, with
/// `a = max(‖A‖, 1)` and `b = ‖B‖`. Valid for any `κ ≥ max(1, ‖(C^T C)^†‖)`.
pub fn zeroing_cost_bound(k_steps: usize, kappa: f64, a: f64, b: f64) -> f64 {
    let k = k_steps as f64;
    let a2k = a.powi(2 * k_steps as i32);
    k * k * a2k + kappa * kappa * a2k * (1.0 + k * k * a2k * b * b)
}

/// Exact worst-case zeroing cost per unit `‖x0‖²` for `Q = R = I`: the top
/// eigenvalue of the quadratic form `x0 ↦ zeroing_cost(x0)`.
pub fn zeroing_cost_constant(sys: &LinearSystem, k_steps: usize) -> Result<f64> {
    let d = sys.state_dim();
    let (q, r) = (DMatrix::identity(d, d), DMatrix::identity(sys.control_dim(), sys.control_dim()));
    let mut form = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut x = DVector::zeros(d);
            x[i] = 1.0;
            x[j] += 1.0;
            let v = zeroing_cost(sys, &x, &k_step_zeroing(sys, &x, k_steps)?, &q, &r);
            form[(i, j)] = v;
        }
    }
    // polarization: f(e_i + e_j) = f_ii + f_jj + 2 f_ij
    let diag: Vec<f64> = (0..d).map(|i| form[(i, i)] / 4.0).collect();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = diag[i];
        for j in (i + 1)..d {
            let off = 0.5 * (form[(i, j)] - diag[i] - diag[j]);
            m[(i, j)] = off;
            m[(j, i)] = off;
        }
    }
    Ok(linalg::max_eigenvalue(&m))
}

#[derive(Debug, Clone, Copy)]
pub struct DecayPlan {
    pub duration: usize,
    /// `d (1+κ) κ² ‖x0‖² / (2γ)`.
    pub cost_bound: f64,
}

/// Number of rounds of playing a certified `K` after which the noiseless
/// state satisfies `d κ² e^{-2γt} ‖x0‖² ≤ target²`.
pub fn decay_reset(sys: &LinearSystem, cert: &StabilityCertificate, x0: &StateVector, target: f64) -> DecayPlan {
    let d = sys.state_dim() as f64;
    let k2 = cert.kappa * cert.kappa;
    let norm2 = x0.norm_squared();
    let duration = if norm2 == 0.0 {
        0
    } else {
        let t = (d * k2 * norm2 / (target * target)).ln() / (2.0 * cert.gamma);
        t.ceil().max(0.0) as usize
    };
    DecayPlan {
        duration,
        cost_bound: d * (1.0 + cert.kappa) * k2 * norm2 / (2.0 * cert.gamma),
    }
}

/// Noiseless trajectory `x_0, …, x_steps` under `u = K x`.
pub fn simulate_noiseless(sys: &LinearSystem, gain: &DMatrix<f64>, x0: &StateVector, steps: usize) -> Vec<StateVector> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    out.push(x.clone());
    for _ in 0..steps {
        let u = gain * &x;
        x = sys.drift(&x, &u);
        out.push(x.clone());
    }
    out
}

/// Reset by linear superposition: the actual state splits into a noiseless
/// part started at `x0` and driven to zero by [`k_step_zeroing`], plus a
/// noisy part started at zero that follows `K`. Each round plays
/// `u_t + K y_t`.
#[derive(Debug, Clone)]
pub struct SuperpositionReset {
    controls: Vec<ControlVector>,
    gain: DMatrix<f64>,
    deterministic: StateVector,
    round: usize,
}

impl SuperpositionReset {
    pub fn new(sys: &LinearSystem, x0: &StateVector, gain: &DMatrix<f64>, k_steps: usize) -> Result<Self> {
        sys.check_gain(gain)?;
        Ok(SuperpositionReset {
            controls: k_step_zeroing(sys, x0, k_steps)?,
            gain: gain.clone(),
            deterministic: x0.clone(),
            round: 0,
        })
    }

    pub fn duration(&self) -> usize {
        self.controls.len()
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.controls.len()
    }

    /// The noiseless component; zero up to roundoff once done.
    pub fn deterministic_part(&self) -> &StateVector {
        &self.deterministic
    }

    pub fn zeroing_controls(&self) -> &[ControlVector] {
        &self.controls
    }

    /// Control for the observed state `x`, advancing the internal split.
    pub fn control(&mut self, sys: &LinearSystem, x: &StateVector) -> Option<ControlVector> {
        let u = self.controls.get(self.round)?;
        let y = x - &self.deterministic;
        let out = u + &self.gain * y;
        self.deterministic = sys.drift(&self.deterministic, u);
        self.round += 1;
        Some(out)
    }

    /// `k C_ss + zeroing cost`, the bound on the expected cost of the reset.
    pub fn cost_bound(&self, sys: &LinearSystem, x0: &StateVector, costs: &CostPair) -> Result<f64> {
        let c_ss = lds::steady_state_cost(sys, &GaussianPolicy::deterministic(self.gain.clone()), costs)?;
        Ok(self.controls.len() as f64 * c_ss + zeroing_cost(sys, x0, &self.controls, &costs.q, &costs.r))
    }
}

/// An in-progress reset.
#[derive(Debug, Clone)]
pub struct ResetPlan {
    pub strategy: ResetStrategy,
    pub duration: usize,
    pub cost_bound: Option<f64>,
    law: ResetLaw,
    played: usize,
}

#[derive(Debug, Clone)]
enum ResetLaw {
    OneStep,
    Zeroing(Vec<ControlVector>),
    Feedback(DMatrix<f64>),
    Superposition(SuperpositionReset),
}

impl ResetPlan {
    pub fn one_step() -> Self {
        ResetPlan {
            strategy: ResetStrategy::OneStep,
            duration: 1,
            cost_bound: None,
            law: ResetLaw::OneStep,
            played: 0,
        }
    }

    pub fn zeroing(sys: &LinearSystem, x0: &StateVector, k_steps: usize) -> Result<Self> {
        let controls = k_step_zeroing(sys, x0, k_steps)?;
        Ok(ResetPlan {
            strategy: ResetStrategy::KStepZeroing,
            duration: controls.len(),
            cost_bound: None,
            law: ResetLaw::Zeroing(controls),
            played: 0,
        })
    }

    pub fn superposition(sys: &LinearSystem, x0: &StateVector, gain: &DMatrix<f64>, k_steps: usize) -> Result<Self> {
        let law = SuperpositionReset::new(sys, x0, gain, k_steps)?;
        Ok(ResetPlan {
            strategy: ResetStrategy::Superposition,
            duration: law.duration(),
            cost_bound: None,
            law: ResetLaw::Superposition(law),
            played: 0,
        })
    }

    pub fn decay(sys: &LinearSystem, gain: &DMatrix<f64>, x0: &StateVector, target: f64) -> Result<Self> {
        let cert = stability::certify(sys, gain)?;
        let plan = decay_reset(sys, &cert, x0, target);
        Ok(ResetPlan {
            strategy: ResetStrategy::Decay,
            duration: plan.duration.max(1),
            cost_bound: Some(plan.cost_bound),
            law: ResetLaw::Feedback(gain.clone()),
            played: 0,
        })
    }

    /// Plays an auxiliary gain for a fixed number of rounds.
    pub fn soft(gain: DMatrix<f64>, steps: usize) -> Self {
        ResetPlan {
            strategy: ResetStrategy::Soft,
            duration: steps.max(1),
            cost_bound: None,
            law: ResetLaw::Feedback(gain),
            played: 0,
        }
    }

    pub fn with_cost_bound(mut self, bound: f64) -> Self {
        self.cost_bound = Some(bound);
        self
    }

    pub fn is_done(&self) -> bool {
        self.played >= self.duration
    }

    pub fn rounds_played(&self) -> usize {
        self.played
    }

    /// Remaining noiseless component for superposition resets.
    pub fn deterministic_residual(&self) -> Option<&StateVector> {
        match &self.law {
            ResetLaw::Superposition(s) => Some(s.deterministic_part()),
            _ => None,
        }
    }

    /// Next reset control, or `None` once the plan is exhausted.
    pub fn control(&mut self, sys: &LinearSystem, x: &StateVector) -> Result<Option<ControlVector>> {
        if self.is_done() {
            return Ok(None);
        }
        let u = match &mut self.law {
            ResetLaw::OneStep => one_step(sys, x)?,
            ResetLaw::Zeroing(controls) => controls[self.played].clone(),
            ResetLaw::Feedback(gain) => &*gain * x,
            ResetLaw::Superposition(s) => match s.control(sys, x) {
                Some(u) => u,
                None => return Ok(None),
            },
        };
        self.played += 1;
        Ok(Some(u))
    }
}
