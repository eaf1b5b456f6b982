//! Noisy linear dynamics `x' = A x + B u + w`, quadratic costs, Gaussian
//! linear policies and their steady-state covariances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::{LqcError, Result};
use crate::linalg;

pub type StateVector = DVector<f64>;
pub type ControlVector = DVector<f64>;

/// Seedable random stream. One per trajectory, never shared.
pub type RandomStream = rand_chacha::ChaCha8Rng;

/// Builds the `stream_id`-th independent stream for `seed`.
pub fn random_stream(seed: u64, stream_id: u64) -> RandomStream {
    let mut rng = RandomStream::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Symmetric PSD tolerance on eigenvalues, relative to the matrix scale.
const PSD_TOL: f64 = 1e-10;

/// Spectral radius at or above which a closed loop counts as unstable.
pub const STABILITY_MARGIN: f64 = 1e-12;

fn check_psd(context: &'static str, m: &DMatrix<f64>) -> Result<()> {
    let asym = (m - m.transpose()).norm();
    let scale = m.norm().max(1.0);
    if asym > 1e-9 * scale {
        return Err(LqcError::Contract(format!("{context} is not symmetric (asymmetry {asym:e})")));
    }
    let min = linalg::min_eigenvalue(m);
    if min < -PSD_TOL * scale {
        return Err(LqcError::Contract(format!("{context} is not PSD (min eigenvalue {min:e})")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    w: DMatrix<f64>,
    w_sqrt: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 {
            return Err(LqcError::Contract("state dimension must be positive".into()));
        }
        linalg::check_square("A", &a, d)?;
        if b.nrows() != d || b.ncols() == 0 {
            return Err(LqcError::dims("B", (d, b.ncols().max(1)), b.shape()));
        }
        linalg::check_square("W", &w, d)?;
        check_psd("W", &w)?;
        let w = linalg::symmetrize(&w);
        let w_sqrt = linalg::psd_sqrt(&w);
        Ok(LinearSystem { a, b, w, w_sqrt })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Cached symmetric square root of `W`.
    pub fn noise_sqrt(&self) -> &DMatrix<f64> {
        &self.w_sqrt
    }

    /// `[A B]`, the d×(d+k) map applied to joint covariances.
    pub fn joint_map(&self) -> DMatrix<f64> {
        let (d, k) = (self.state_dim(), self.control_dim());
        let mut g = DMatrix::zeros(d, d + k);
        g.view_mut((0, 0), (d, d)).copy_from(&self.a);
        g.view_mut((0, d), (d, k)).copy_from(&self.b);
        g
    }

    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_gain(gain)?;
        Ok(&self.a + &self.b * gain)
    }

    pub fn check_gain(&self, gain: &DMatrix<f64>) -> Result<()> {
        let expected = (self.control_dim(), self.state_dim());
        if gain.shape() != expected {
            return Err(LqcError::dims("gain K", expected, gain.shape()));
        }
        Ok(())
    }

    pub fn sample_noise(&self, rng: &mut RandomStream) -> StateVector {
        let z = standard_normal(self.state_dim(), rng);
        &self.w_sqrt * z
    }

    /// Noiseless transition `A x + B u`.
    pub fn drift(&self, x: &StateVector, u: &ControlVector) -> StateVector {
        &self.a * x + &self.b * u
    }

    fn check_vectors(&self, x: &StateVector, u: &ControlVector) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(LqcError::dims("state vector", (self.state_dim(), 1), (x.len(), 1)));
        }
        if u.len() != self.control_dim() {
            return Err(LqcError::dims("control vector", (self.control_dim(), 1), (u.len(), 1)));
        }
        Ok(())
    }
}

pub fn standard_normal(n: usize, rng: &mut RandomStream) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// One round's quadratic cost `x^T Q x + u^T R u`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPair {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostPair {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(LqcError::dims("Q", (q.nrows(), q.nrows()), q.shape()));
        }
        if r.nrows() != r.ncols() {
            return Err(LqcError::dims("R", (r.nrows(), r.nrows()), r.shape()));
        }
        check_psd("Q", &q)?;
        check_psd("R", &r)?;
        Ok(CostPair {
            q: linalg::symmetrize(&q),
            r: linalg::symmetrize(&r),
        })
    }

    pub fn zeros(d: usize, k: usize) -> Self {
        CostPair {
            q: DMatrix::zeros(d, d),
            r: DMatrix::zeros(k, k),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        CostPair {
            q: &self.q * s,
            r: &self.r * s,
        }
    }

    /// `max(trace Q, trace R)`.
    pub fn trace_bound(&self) -> f64 {
        self.q.trace().max(self.r.trace())
    }

    pub(crate) fn check_for(&self, sys: &LinearSystem) -> Result<()> {
        linalg::check_square("Q", &self.q, sys.state_dim())?;
        linalg::check_square("R", &self.r, sys.control_dim())
    }
}

/// `u ~ N(K x, V)`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub gain: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    noise_sqrt: Option<DMatrix<f64>>,
}

impl GaussianPolicy {
    pub fn new(gain: DMatrix<f64>, noise: DMatrix<f64>) -> Result<Self> {
        let k = gain.nrows();
        linalg::check_square("V", &noise, k)?;
        let noise = linalg::symmetrize(&noise);
        let noise_sqrt = if noise.iter().all(|v| *v == 0.0) {
            None
        } else {
            Some(linalg::psd_sqrt(&noise))
        };
        Ok(GaussianPolicy { gain, noise, noise_sqrt })
    }

    pub fn deterministic(gain: DMatrix<f64>) -> Self {
        let k = gain.nrows();
        GaussianPolicy {
            gain,
            noise: DMatrix::zeros(k, k),
            noise_sqrt: None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.noise_sqrt.is_none()
    }

    pub fn mean(&self, x: &StateVector) -> ControlVector {
        &self.gain * x
    }

    /// Samples `K x + V^{1/2} z`. Draws from `rng` only when `V ≠ 0`.
    pub fn sample(&self, x: &StateVector, rng: &mut RandomStream) -> ControlVector {
        let mean = self.mean(x);
        match &self.noise_sqrt {
            None => mean,
            Some(root) => mean + root * standard_normal(self.gain.nrows(), rng),
        }
    }
}

/// `x' = A x + B u + w` with `w ~ N(0, W)` drawn from `rng`.
pub fn step(sys: &LinearSystem, x: &StateVector, u: &ControlVector, rng: &mut RandomStream) -> Result<StateVector> {
    sys.check_vectors(x, u)?;
    Ok(sys.drift(x, u) + sys.sample_noise(rng))
}

pub fn instantaneous_cost(c: &CostPair, x: &StateVector, u: &ControlVector) -> Result<f64> {
    if x.len() != c.q.nrows() || u.len() != c.r.nrows() {
        return Err(LqcError::dims("cost vectors", (c.q.nrows(), c.r.nrows()), (x.len(), u.len())));
    }
    Ok(x.dot(&(&c.q * x)) + u.dot(&(&c.r * u)))
}

/// One step of the state covariance recursion
/// `(A+BK) X (A+BK)^T + B V B^T + W`.
pub fn propagate_covariance(sys: &LinearSystem, pol: &GaussianPolicy, xhat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::check_square("covariance", xhat, sys.state_dim())?;
    let m = sys.closed_loop(&pol.gain)?;
    let mut out = &m * xhat * m.transpose() + sys.b() * &pol.noise * sys.b().transpose() + sys.w();
    linalg::symmetrize_in_place(&mut out);
    Ok(out)
}

/// Spectral radius of `A + B K`, failing when it is not below one.
pub fn check_stable(sys: &LinearSystem, gain: &DMatrix<f64>) -> Result<f64> {
    let rho = linalg::spectral_radius(&sys.closed_loop(gain)?)?;
    if rho >= 1.0 - STABILITY_MARGIN || !rho.is_finite() {
        return Err(LqcError::UnstablePolicy { spectral_radius: rho });
    }
    Ok(rho)
}

/// Fixed point of [`propagate_covariance`].
pub fn solve_steady_state(sys: &LinearSystem, pol: &GaussianPolicy) -> Result<DMatrix<f64>> {
    check_stable(sys, &pol.gain)?;
    let m = sys.closed_loop(&pol.gain)?;
    let forcing = sys.b() * &pol.noise * sys.b().transpose() + sys.w();
    linalg::solve_stein(&m, &linalg::symmetrize(&forcing))
}

/// `(Q + K^T R K) • X + R • V` at the steady state of `pol`.
pub fn steady_state_cost(sys: &LinearSystem, pol: &GaussianPolicy, c: &CostPair) -> Result<f64> {
    c.check_for(sys)?;
    let x = solve_steady_state(sys, pol)?;
    Ok(steady_state_cost_given(pol, c, &x))
}

pub(crate) fn steady_state_cost_given(pol: &GaussianPolicy, c: &CostPair, x: &DMatrix<f64>) -> f64 {
    let k = &pol.gain;
    let effective = &c.q + k.transpose() * &c.r * k;
    linalg::inner(&effective, x) + linalg::inner(&c.r, &pol.noise)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    linalg::spectral_radius(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_sys(a: f64, b: f64, w: f64) -> LinearSystem {
        LinearSystem::new(scalar(a), scalar(b), scalar(w)).unwrap()
    }

    #[test]
    fn step_zero_dynamics() {
        let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), DMatrix::zeros(2, 2)).unwrap();
        let mut rng = random_stream(1, 0);
        let x = step(&sys, &DVector::from_vec(vec![1.0, 2.0]), &DVector::from_vec(vec![3.0]), &mut rng).unwrap();
        assert_eq!(x, DVector::zeros(2));
    }

    #[test]
    fn step_deterministic_sum() {
        let sys = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let x = step(&sys, &e1, &e1, &mut random_stream(0, 0)).unwrap();
        assert_eq!(x, &e1 * 2.0);
    }

    #[test]
    fn step_rejects_bad_dims() {
        let sys = scalar_sys(0.5, 1.0, 1.0);
        let err = step(&sys, &DVector::zeros(2), &DVector::zeros(1), &mut random_stream(0, 0));
        assert!(matches!(err, Err(LqcError::DimensionMismatch { .. })));
    }

    #[test]
    fn step_monte_carlo_mean() {
        let sys = scalar_sys(0.5, 1.0, 1.0);
        let mut rng = random_stream(42, 0);
        let x = DVector::from_vec(vec![2.0]);
        let u = DVector::from_vec(vec![-0.3]);
        let n = 100_000;
        let mean = (0..n).map(|_| step(&sys, &x, &u, &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        // analytic mean 0.5*2 - 0.3 = 0.7, unit variance
        assert!((mean - 0.7).abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn cost_examples() {
        let c = CostPair::new(DMatrix::identity(2, 2), DMatrix::zeros(1, 1)).unwrap();
        let v = instantaneous_cost(&c, &DVector::from_vec(vec![3.0, 4.0]), &DVector::from_vec(vec![9.0])).unwrap();
        assert_eq!(v, 25.0);
        let c = CostPair::new(scalar(2.0), scalar(3.0)).unwrap();
        assert_eq!(instantaneous_cost(&c, &DVector::from_vec(vec![1.0]), &DVector::from_vec(vec![2.0])).unwrap(), 14.0);
        let c = CostPair::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(instantaneous_cost(&c, &DVector::zeros(2), &DVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn cost_pair_rejects_indefinite() {
        assert!(CostPair::new(scalar(-1.0), scalar(1.0)).is_err());
    }

    #[test]
    fn propagate_examples() {
        let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.3).unwrap();
        let pol = GaussianPolicy::deterministic(DMatrix::zeros(2, 2));
        let out = propagate_covariance(&sys, &pol, &(DMatrix::identity(2, 2) * 7.0)).unwrap();
        assert_eq!(out, sys.w().clone());

        let sys = scalar_sys(0.5, 1.0, 1.0);
        let pol = GaussianPolicy::deterministic(scalar(0.0));
        assert_eq!(propagate_covariance(&sys, &pol, &scalar(0.0)).unwrap()[(0, 0)], 1.0);
        let pol = GaussianPolicy::new(scalar(0.0), scalar(1.0)).unwrap();
        assert_eq!(propagate_covariance(&sys, &pol, &scalar(4.0)).unwrap()[(0, 0)], 3.0);
    }

    #[test]
    fn steady_state_examples() {
        let sys = scalar_sys(0.5, 1.0, 1.0);
        let pol = GaussianPolicy::deterministic(scalar(0.0));
        assert!((solve_steady_state(&sys, &pol).unwrap()[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        let pol = GaussianPolicy::new(scalar(0.0), scalar(1.0)).unwrap();
        assert!((solve_steady_state(&sys, &pol).unwrap()[(0, 0)] - 8.0 / 3.0).abs() < 1e-12);

        // A + BK = 0 gives X = W + B V B^T
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2]),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let pol = GaussianPolicy::new(-sys.a().clone(), v.clone()).unwrap();
        let x = solve_steady_state(&sys, &pol).unwrap();
        assert!((x - (sys.w() + &v)).norm() < 1e-12);
    }

    #[test]
    fn steady_state_rejects_unstable() {
        let sys = scalar_sys(1.2, 1.0, 1.0);
        let pol = GaussianPolicy::deterministic(scalar(0.0));
        assert!(matches!(solve_steady_state(&sys, &pol), Err(LqcError::UnstablePolicy { .. })));
    }

    #[test]
    fn steady_state_cost_examples() {
        let sys = scalar_sys(0.5, 1.0, 1.0);
        let c = CostPair::new(scalar(1.0), scalar(1.0)).unwrap();
        let pol = GaussianPolicy::deterministic(scalar(0.0));
        assert!((steady_state_cost(&sys, &pol, &c).unwrap() - 4.0 / 3.0).abs() < 1e-12);

        let sys = LinearSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let pol = GaussianPolicy::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let c = CostPair::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        assert!((steady_state_cost(&sys, &pol, &c).unwrap() - 2.0).abs() < 1e-12);
        let c = CostPair::zeros(2, 2);
        assert_eq!(steady_state_cost(&sys, &pol, &c).unwrap(), 0.0);
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-14);
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.9]));
        assert!((spectral_radius(&m).unwrap() - 0.9).abs() < 1e-14);
    }
}
