//! Follow the Lazy Leader: coupled Laplace perturbations of the cumulative
//! costs, an oracle call on each switch, and a reset after each switch.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{LqcError, Result};
use crate::lds::{ControlVector, CostPair, RandomStream, StateVector};
use crate::linalg;
use crate::reset::{self, ResetPlan};
use crate::sdp::{self, OracleOptions, SdpProblem};
use crate::stability;

/// Eigenvalue floor applied to a perturbed cumulative cost that is not PSD.
pub const PSD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResetMode {
    /// One-step when it zeroes the state exactly, else superposition at the
    /// controllability horizon.
    Auto,
    OneStep,
    Superposition {
        #[serde(default)]
        k_steps: Option<usize>,
    },
    Decay {
        target: f64,
    },
    /// Plays the oracle gain for `scale · Q` for `steps` rounds.
    Soft {
        steps: usize,
        #[serde(default = "default_soft_scale")]
        scale: f64,
    },
    Disabled,
}

fn default_soft_scale() -> f64 {
    1.1
}

#[derive(Debug, Clone)]
pub struct FllConfig {
    pub eta: f64,
    pub nu: f64,
    pub reset: ResetMode,
    pub oracle: OracleOptions,
}

impl FllConfig {
    pub fn new(eta: f64, nu: f64) -> Self {
        FllConfig {
            eta,
            nu,
            reset: ResetMode::Auto,
            oracle: OracleOptions::default(),
        }
    }
}

/// Reset mode after resolving `Auto` and the superposition horizon.
#[derive(Debug, Clone, PartialEq)]
enum ResolvedReset {
    OneStep,
    Superposition(usize),
    Decay(f64),
    Soft(usize, f64),
    Disabled,
}

fn resolve(prob: &SdpProblem, mode: &ResetMode) -> Result<ResolvedReset> {
    let sys = prob.system();
    let horizon = || {
        stability::controllability_horizon(sys).ok_or_else(|| {
            LqcError::Config("system is not controllable; superposition resets are unavailable".into())
        })
    };
    Ok(match mode {
        ResetMode::Auto if reset::one_step_is_exact(sys) => ResolvedReset::OneStep,
        ResetMode::Auto => ResolvedReset::Superposition(horizon()?),
        ResetMode::OneStep => ResolvedReset::OneStep,
        ResetMode::Superposition { k_steps: Some(k) } => ResolvedReset::Superposition(*k),
        ResetMode::Superposition { k_steps: None } => ResolvedReset::Superposition(horizon()?),
        ResetMode::Decay { target } if *target > 0.0 => ResolvedReset::Decay(*target),
        ResetMode::Decay { target } => return Err(LqcError::Config(format!("decay target must be positive, got {target}"))),
        ResetMode::Soft { steps, scale } => ResolvedReset::Soft(*steps, *scale),
        ResetMode::Disabled => ResolvedReset::Disabled,
    })
}

/// Symmetric matrices whose upper-triangle entries are i.i.d. Laplace with
/// scale `1/η`.
pub fn sample_perturbation(d: usize, k: usize, eta: f64, rng: &mut RandomStream) -> (DMatrix<f64>, DMatrix<f64>) {
    let exp = Exp::new(eta).expect("eta must be positive");
    let mut sym = |n: usize| {
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = exp.sample(rng) - exp.sample(rng);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    };
    let q = sym(d);
    let r = sym(k);
    (q, r)
}

/// Entrywise absolute sum over the upper triangle, diagonal included.
pub fn upper_l1(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    (0..n).flat_map(|j| (0..=j).map(move |i| (i, j))).map(|(i, j)| m[(i, j)].abs()).sum()
}

/// `log(dμ(Q^p - Q, R^p - R) / dμ(Q^p, R^p))` for the Laplace product measure.
pub fn log_acceptance_ratio(eta: f64, qp: &DMatrix<f64>, rp: &DMatrix<f64>, c: &CostPair) -> f64 {
    -eta * (upper_l1(&(qp - &c.q)) + upper_l1(&(rp - &c.r)) - upper_l1(qp) - upper_l1(rp))
}

/// `√(16 ν √(d+k) / (T C (C_r + 8 C ν)))`.
pub fn recommended_eta(nu: f64, d: usize, k: usize, c: f64, c_r: f64, horizon: usize) -> f64 {
    let dk = ((d + k) as f64).sqrt();
    (16.0 * nu * dk / (horizon as f64 * c * (c_r + 8.0 * c * nu))).sqrt()
}

#[derive(Debug, Clone)]
pub struct FllState {
    prob: SdpProblem,
    eta: f64,
    q_hat: DMatrix<f64>,
    r_hat: DMatrix<f64>,
    q_p: DMatrix<f64>,
    r_p: DMatrix<f64>,
    /// `Q̂ + Q^p` and `R̂ + R^p`, only recomputed on a switch.
    leader_q: DMatrix<f64>,
    leader_r: DMatrix<f64>,
    gain: DMatrix<f64>,
    oracle: OracleOptions,
    reset_mode: ResolvedReset,
    switch_count: usize,
    oracle_calls: usize,
    psd_clamps: usize,
    resets_started: usize,
    pending_reset: bool,
    active_reset: Option<ResetPlan>,
    last_reset: Option<ResetPlan>,
}

/// What [`FllState::act`] played.
#[derive(Debug, Clone)]
pub struct FllAction {
    pub control: ControlVector,
    /// Whether this round belongs to a reset.
    pub resetting: bool,
}

impl FllState {
    /// Pretend losses `(d/η) I`, `(k/η) I`, sampled perturbations, and
    /// `K_1` from the oracle.
    pub fn init(prob: SdpProblem, config: FllConfig, rng: &mut RandomStream) -> Result<Self> {
        check_params(&prob, &config)?;
        let sys = prob.system();
        let (qp, rp) = sample_perturbation(sys.state_dim(), sys.control_dim(), config.eta, rng);
        Self::with_perturbation(prob, config, qp, rp)
    }

    /// As [`FllState::init`] with given initial perturbations.
    pub fn with_perturbation(prob: SdpProblem, config: FllConfig, q_p: DMatrix<f64>, r_p: DMatrix<f64>) -> Result<Self> {
        check_params(&prob, &config)?;
        let sys = prob.system();
        let (d, k) = (sys.state_dim(), sys.control_dim());
        linalg::check_square("Q^p", &q_p, d)?;
        linalg::check_square("R^p", &r_p, k)?;
        let reset_mode = resolve(&prob, &config.reset)?;
        let q_hat = DMatrix::identity(d, d) * (d as f64 / config.eta);
        let r_hat = DMatrix::identity(k, k) * (k as f64 / config.eta);
        let mut state = FllState {
            leader_q: &q_hat + &q_p,
            leader_r: &r_hat + &r_p,
            q_hat,
            r_hat,
            q_p,
            r_p,
            gain: DMatrix::zeros(k, d),
            eta: config.eta,
            prob,
            oracle: config.oracle,
            reset_mode,
            switch_count: 0,
            oracle_calls: 0,
            psd_clamps: 0,
            resets_started: 0,
            pending_reset: false,
            active_reset: None,
            last_reset: None,
        };
        state.gain = state.call_oracle(1.0)?;
        Ok(state)
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn problem(&self) -> &SdpProblem {
        &self.prob
    }

    pub fn cumulative(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.q_hat, &self.r_hat)
    }

    pub fn perturbation(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.q_p, &self.r_p)
    }

    /// The perturbed cumulative pair the current gain was computed from.
    pub fn leader(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.leader_q, &self.leader_r)
    }

    pub fn switch_count(&self) -> usize {
        self.switch_count
    }

    pub fn oracle_calls(&self) -> usize {
        self.oracle_calls
    }

    pub fn psd_clamps(&self) -> usize {
        self.psd_clamps
    }

    pub fn resets_started(&self) -> usize {
        self.resets_started
    }

    pub fn reset_in_progress(&self) -> bool {
        self.pending_reset || self.active_reset.is_some()
    }

    /// The most recently finished or interrupted reset plan.
    pub fn last_reset(&self) -> Option<&ResetPlan> {
        self.last_reset.as_ref()
    }

    fn call_oracle(&mut self, q_scale: f64) -> Result<DMatrix<f64>> {
        let q = self.psd_safe(&(&self.leader_q * q_scale), "Q");
        let r = self.psd_safe(&self.leader_r.clone(), "R");
        let costs = CostPair::new(q, r)?;
        self.oracle_calls += 1;
        Ok(sdp::solve_oracle(&self.prob, &costs, &self.oracle)?.gain)
    }

    fn psd_safe(&mut self, m: &DMatrix<f64>, name: &str) -> DMatrix<f64> {
        let sym = linalg::symmetrize(m);
        if linalg::min_eigenvalue(&sym) >= 0.0 {
            return sym;
        }
        let (clamped, worst) = linalg::clamp_eigenvalues(&sym, PSD_FLOOR);
        self.psd_clamps += 1;
        log::warn!("perturbed cumulative {name} is not PSD; clamped eigenvalues by up to {worst:e}");
        clamped
    }

    fn start_reset(&mut self, x: &StateVector) -> Result<Option<ResetPlan>> {
        let sys = self.prob.system();
        let plan = match self.reset_mode {
            ResolvedReset::OneStep => ResetPlan::one_step(),
            ResolvedReset::Superposition(k) => ResetPlan::superposition(sys, x, &self.gain, k)?,
            ResolvedReset::Decay(target) => ResetPlan::decay(sys, &self.gain, x, target)?,
            ResolvedReset::Soft(steps, scale) => {
                let gain = self.call_oracle(scale)?;
                ResetPlan::soft(gain, steps)
            }
            ResolvedReset::Disabled => return Ok(None),
        };
        self.resets_started += 1;
        Ok(Some(plan))
    }

    /// `u = K_t x`, or the reset control while a reset is running.
    pub fn act(&mut self, x: &StateVector) -> Result<FllAction> {
        if self.pending_reset {
            self.pending_reset = false;
            self.active_reset = self.start_reset(x)?;
        }
        if let Some(plan) = self.active_reset.as_mut() {
            let sys = self.prob.system();
            if let Some(u) = plan.control(sys, x)? {
                if plan.is_done() {
                    self.last_reset = self.active_reset.take();
                }
                return Ok(FllAction { control: u, resetting: true });
            }
            self.last_reset = self.active_reset.take();
        }
        Ok(FllAction {
            control: &self.gain * x,
            resetting: false,
        })
    }

    /// Absorbs `(Q_t, R_t)`. Returns whether the gain switched.
    pub fn update(&mut self, c: &CostPair, rng: &mut RandomStream) -> Result<bool> {
        c.check_for(self.prob.system())?;
        let log_ratio = log_acceptance_ratio(self.eta, &self.q_p, &self.r_p, c);
        if log_ratio.is_nan() {
            return Err(LqcError::Contract("acceptance probability is NaN".into()));
        }
        let accept_prob = log_ratio.min(0.0).exp();
        let draw: f64 = rng.random();
        self.q_hat += &c.q;
        self.r_hat += &c.r;
        if draw < accept_prob {
            self.q_p -= &c.q;
            self.r_p -= &c.r;
            debug_assert!((&self.q_hat + &self.q_p - &self.leader_q).norm() <= 1e-9 * self.leader_q.norm().max(1.0));
            debug_assert!((&self.r_hat + &self.r_p - &self.leader_r).norm() <= 1e-9 * self.leader_r.norm().max(1.0));
            return Ok(false);
        }
        self.q_p = -&self.q_p;
        self.r_p = -&self.r_p;
        self.leader_q = &self.q_hat + &self.q_p;
        self.leader_r = &self.r_hat + &self.r_p;
        self.gain = self.call_oracle(1.0)?;
        self.switch_count += 1;
        if let Some(plan) = self.active_reset.take() {
            self.last_reset = Some(plan);
        }
        self.pending_reset = self.reset_mode != ResolvedReset::Disabled;
        Ok(true)
    }
}

fn check_params(prob: &SdpProblem, config: &FllConfig) -> Result<()> {
    if !(config.eta > 0.0 && config.eta.is_finite()) {
        return Err(LqcError::Config(format!("eta must be positive, got {}", config.eta)));
    }
    if (config.nu - prob.nu()).abs() > 1e-12 * prob.nu() {
        return Err(LqcError::Config(format!(
            "nu {} does not match the problem budget {}",
            config.nu,
            prob.nu()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::{random_stream, LinearSystem};
    use nalgebra::DVector;

    fn prob() -> SdpProblem {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.3, 0.0, 1.05]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        SdpProblem::new(sys, 20.0).unwrap()
    }

    #[test]
    fn laplace_moments() {
        let mut rng = random_stream(3, 0);
        let eta = 2.0;
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let (q, _) = sample_perturbation(1, 1, eta, &mut rng);
            sum += q[(0, 0)];
            sq += q[(0, 0)] * q[(0, 0)];
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() <= 5.0 * (2f64.sqrt() / eta) / (n as f64).sqrt());
        assert!((var / (2.0 / (eta * eta)) - 1.0).abs() < 0.1);
        let (q, r) = sample_perturbation(3, 2, eta, &mut rng);
        assert_eq!(q, q.transpose());
        assert_eq!(r, r.transpose());
    }

    #[test]
    fn zero_perturbation_init_matches_oracle() {
        let p = prob();
        let eta = 0.5;
        let s = FllState::with_perturbation(p.clone(), FllConfig::new(eta, 20.0), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let costs = CostPair::new(DMatrix::identity(2, 2) * (2.0 / eta), DMatrix::identity(2, 2) * (2.0 / eta)).unwrap();
        let k = sdp::solve_oracle(&p, &costs, &OracleOptions::default()).unwrap().gain;
        assert!((s.gain() - k).norm() < 1e-12);
        assert_eq!(s.oracle_calls(), 1);
    }

    #[test]
    fn same_seed_same_gain() {
        let a = FllState::init(prob(), FllConfig::new(0.5, 20.0), &mut random_stream(9, 1)).unwrap();
        let b = FllState::init(prob(), FllConfig::new(0.5, 20.0), &mut random_stream(9, 1)).unwrap();
        assert_eq!(a.gain(), b.gain());
    }

    #[test]
    fn zero_cost_always_accepts() {
        let mut s = FllState::init(prob(), FllConfig::new(0.5, 20.0), &mut random_stream(1, 1)).unwrap();
        let gain = s.gain().clone();
        let mut rng = random_stream(1, 2);
        for _ in 0..100 {
            assert!(!s.update(&CostPair::zeros(2, 2), &mut rng).unwrap());
        }
        assert_eq!(s.gain(), &gain);
        assert_eq!(s.oracle_calls(), 1);
        let x = DVector::from_vec(vec![0.0, 0.0]);
        assert_eq!(s.act(&x).unwrap().control, DVector::zeros(2));
    }

    #[test]
    fn accept_keeps_leader() {
        let mut s = FllState::init(prob(), FllConfig::new(1e-3, 20.0), &mut random_stream(2, 1)).unwrap();
        let leader = s.leader().0.clone();
        let c = CostPair::new(DMatrix::identity(2, 2) * 0.1, DMatrix::identity(2, 2) * 0.1).unwrap();
        let mut rng = random_stream(2, 2);
        if !s.update(&c, &mut rng).unwrap() {
            assert_eq!(s.leader().0, &leader);
            let (qh, _) = s.cumulative();
            assert!((qh + s.perturbation().0 - &leader).norm() < 1e-9);
        }
    }

    #[test]
    fn one_step_reset_after_switch() {
        let p = prob();
        let mut s = FllState::init(p.clone(), FllConfig::new(50.0, 20.0), &mut random_stream(4, 1)).unwrap();
        let c = CostPair::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let mut rng = random_stream(4, 2);
        let mut switched = false;
        for _ in 0..50 {
            if s.update(&c, &mut rng).unwrap() {
                switched = true;
                break;
            }
        }
        assert!(switched);
        assert!(s.reset_in_progress());
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let action = s.act(&x).unwrap();
        assert!(action.resetting);
        let expected = -(p.system().a() * &x);
        assert!((action.control - expected).norm() < 1e-12);
        let next = s.act(&x).unwrap();
        assert!(!next.resetting);
        assert!((next.control - s.gain() * &x).norm() < 1e-15);
    }

    #[test]
    fn recommended_eta_examples() {
        assert!((recommended_eta(1.0, 2, 2, 1.0, 8.0, 1) - 2f64.sqrt()).abs() < 1e-12);
        let a = recommended_eta(1.0, 1, 1, 1.0, 1.0, 100);
        let b = recommended_eta(1.0, 1, 1, 1.0, 1.0, 400);
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(a > 0.0);
    }
}
