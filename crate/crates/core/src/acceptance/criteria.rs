use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::reference::{self, gaussian_matrix, random_psd, random_stabilizing_gain};
use super::{Criterion, Outcome};
use crate::error::{LqcError, Result};
use crate::fll::{FllConfig, FllState, ResetMode};
use crate::harness::config::synthetic_system;
use crate::harness::emit::median;
use crate::harness::run::{self as harness_run, RegretSummary};
use crate::harness::ExperimentConfig;
use crate::lds::{self, CostPair, GaussianPolicy, LinearSystem, RandomStream};
use crate::linalg;
use crate::ogd::{self, OgdState};
use crate::reset::{self, SuperpositionReset};
use crate::sdp::{self, JointCovariance, OracleOptions, SdpProblem};
use crate::stability::{self, GainNorm};

pub static ALL: [Criterion; 12] = [
    Criterion { id: 1, title: "SDP extraction correctness", check: extraction },
    Criterion { id: 2, title: "strong stability of extracted policies", check: extracted_stability },
    Criterion { id: 3, title: "mixing bounds", check: mixing },
    Criterion { id: 4, title: "trace bounds", check: trace_bounds },
    Criterion { id: 5, title: "projection correctness", check: projection },
    Criterion { id: 6, title: "oracle vs closed form", check: oracle_closed_form },
    Criterion { id: 7, title: "OGD slow change and linear-loss regret", check: ogd_linear_regret },
    Criterion { id: 8, title: "OGD end-to-end regret trend", check: ogd_regret_trend },
    Criterion { id: 9, title: "FLL switch rate", check: fll_switch_rate },
    Criterion { id: 10, title: "post-reset domination", check: post_reset_domination },
    Criterion { id: 11, title: "reset machinery", check: reset_machinery },
    Criterion { id: 12, title: "FLL end-to-end regret", check: fll_regret },
];

const SEEDS: u64 = 20;

fn rng(id: u64) -> RandomStream {
    lds::random_stream(0x00AC_CE97, id)
}

fn random_symmetric(n: usize, scale: f64, rng: &mut RandomStream) -> DMatrix<f64> {
    linalg::symmetrize(&(gaussian_matrix(n, n, rng) * scale))
}

fn random_costs(d: usize, k: usize, rng: &mut RandomStream) -> CostPair {
    let q = random_psd(d, rng);
    let r = random_psd(k, rng);
    let (tq, tr) = (q.trace(), r.trace());
    CostPair::new(q / tq, r / tr).expect("PSD by construction")
}

/// `E(K)` for a deterministic gain, via the series reference.
fn reference_lift(sys: &LinearSystem, gain: &DMatrix<f64>) -> DMatrix<f64> {
    let m = sys.closed_loop(gain).expect("dims");
    let x = reference::steady_state_series(&m, sys.w());
    let top = DMatrix::from_fn(x.nrows(), x.ncols() + gain.nrows(), |i, j| {
        if j < x.ncols() {
            x[(i, j)]
        } else {
            (&x * gain.transpose())[(i, j - x.ncols())]
        }
    });
    let kx = gain * &x;
    let kxk = &kx * gain.transpose();
    let n = top.ncols();
    let d = x.nrows();
    DMatrix::from_fn(n, n, |i, j| match (i < d, j < d) {
        (true, _) => top[(i, j)],
        (false, true) => kx[(i - d, j)],
        (false, false) => kxk[(i - d, j - d)],
    })
}

/// Random feasible points: projections of random matrices and convex
/// mixtures of lifted stabilizing policies.
fn feasible_points(prob: &SdpProblem, count: usize, rng: &mut RandomStream) -> Result<Vec<JointCovariance>> {
    let n = prob.dim();
    let sys = prob.system().clone();
    let mut out = Vec::with_capacity(count);
    while out.len() < count / 2 {
        let target = random_symmetric(n, 3.0, rng) + DMatrix::identity(n, n) * (prob.nu() / n as f64);
        out.push(prob.project(&target)?);
    }
    while out.len() < count {
        let mut mix = DMatrix::zeros(n, n);
        let weights: Vec<f64> = (0..3).map(|_| rand::Rng::random::<f64>(rng) + 0.05).collect();
        let total: f64 = weights.iter().sum();
        for w in weights {
            let gain = random_stabilizing_gain(&sys, 0.9, rng);
            let noise = random_psd(sys.control_dim(), rng) * 0.2;
            mix += sdp::lift(&sys, &gain, &noise)?.into_matrix() * (w / total);
        }
        if mix.trace() <= prob.nu() {
            out.push(JointCovariance::new(mix, sys.state_dim())?);
        }
    }
    Ok(out)
}

fn extraction() -> Result<Outcome> {
    let mut rng = rng(1);
    let (mut worst_eig, mut worst_gap, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    for (d, k, seed) in [(2, 1, 11), (3, 2, 12)] {
        let sys = synthetic_system(d, k, 0.95, 1.0, seed)?;
        let prob = SdpProblem::new(sys.clone(), 60.0)?;
        for sigma in feasible_points(&prob, 120, &mut rng)? {
            let gain = sdp::extract(&sigma)?;
            let lifted = reference_lift(&sys, &gain);
            worst_eig = worst_eig.min(linalg::min_eigenvalue(&(sigma.matrix() - &lifted)));
            let costs = random_costs(d, k, &mut rng);
            let c = sdp::cost_matrix(&costs);
            worst_gap = worst_gap.max(linalg::inner(&c, &lifted) - linalg::inner(&c, sigma.matrix()));
            count += 1;
        }
    }
    Ok(Outcome {
        passed: worst_eig >= -1e-7 && worst_gap <= 1e-7,
        detail: format!("{count} points; min eig(Σ - E(K)) = {worst_eig:.3e}; max J(E(K)) - J(Σ) = {worst_gap:.3e}"),
    })
}

fn extracted_stability() -> Result<Outcome> {
    let mut rng = rng(2);
    let (mut count, mut failures) = (0, 0);
    let (mut worst_rho, mut worst_l_margin, mut worst_k_margin) = (0.0_f64, f64::INFINITY, f64::INFINITY);
    for (d, k, seed) in [(2, 1, 22), (2, 2, 23)] {
        let sys = synthetic_system(d, k, 0.5, 1.0, seed)?;
        for nu in [4.0, 16.0] {
            let prob = SdpProblem::new(sys.clone(), nu)?;
            let mut points = Vec::new();
            for _ in 0..40 {
                let n = prob.dim();
                let target = random_symmetric(n, 2.0, &mut rng) + DMatrix::identity(n, n) * (nu / n as f64);
                points.push(prob.project(&target)?);
            }
            for _ in 0..5 {
                points.push(sdp::solve_oracle(&prob, &random_costs(d, k, &mut rng), &OracleOptions::default())?.sigma);
            }
            let kappa = nu.sqrt();
            let gamma = 1.0 / (2.0 * nu);
            for sigma in points {
                let gain = sdp::extract(&sigma)?;
                let rho = linalg::spectral_radius(&sys.closed_loop(&gain)?)?;
                let cert = stability::certify_from_covariance(&sys, &gain, &sigma.xx())?;
                let check = stability::check_certificate_with(&cert, &sys, &gain, kappa, gamma, GainNorm::Frobenius);
                worst_rho = worst_rho.max(rho);
                worst_l_margin = worst_l_margin.min(1.0 - gamma - check.l_norm);
                worst_k_margin = worst_k_margin.min(kappa - check.gain_norm.max(check.conditioning));
                count += 1;
                if !(rho < 1.0 && check.passed) {
                    failures += 1;
                }
            }
        }
    }
    Ok(Outcome {
        passed: failures == 0,
        detail: format!(
            "{count} policies, {failures} failures; max ρ = {worst_rho:.4}; min (1-γ) - ‖L‖ = {worst_l_margin:.3e}; min κ - max(‖K‖_F, cond H) = {worst_k_margin:.3e}"
        ),
    })
}

struct MixingSample {
    sys: LinearSystem,
    policy: GaussianPolicy,
    cert: stability::StabilityCertificate,
    steady: DMatrix<f64>,
    start: DMatrix<f64>,
}

fn mixing_samples() -> Result<&'static Vec<MixingSample>> {
    static SAMPLES: OnceLock<std::result::Result<Vec<MixingSample>, String>> = OnceLock::new();
    SAMPLES
        .get_or_init(|| {
            let build = || -> Result<Vec<MixingSample>> {
                let mut rng = rng(3);
                let mut out = Vec::new();
                for i in 0..50u64 {
                    let (d, k) = if i % 2 == 0 { (2, 1) } else { (3, 2) };
                    let sys = synthetic_system(d, k, 1.05, 1.0, 300 + i)?;
                    let gain = random_stabilizing_gain(&sys, 0.97, &mut rng);
                    let cert = stability::certify(&sys, &gain)?;
                    for randomized in [false, true] {
                        let noise = if randomized { random_psd(k, &mut rng) * 0.5 } else { DMatrix::zeros(k, k) };
                        let policy = GaussianPolicy::new(gain.clone(), noise)?;
                        let steady = lds::solve_steady_state(&sys, &policy)?;
                        let start = random_psd(d, &mut rng) * 5.0;
                        out.push(MixingSample {
                            sys: sys.clone(),
                            policy,
                            cert: cert.clone(),
                            steady,
                            start,
                        });
                    }
                }
                Ok(out)
            };
            build().map_err(|e| e.to_string())
        })
        .as_ref()
        .map_err(|e| LqcError::NumericalFailure(e.clone()))
}

fn mixing() -> Result<Outcome> {
    let samples = mixing_samples()?;
    let (mut violations, mut worst_ratio) = (0, 0.0_f64);
    for s in samples {
        let dist0 = linalg::spectral_norm(&(&s.start - &s.steady));
        let tol = 1e-9 * s.steady.norm().max(1.0);
        let mut x = s.start.clone();
        for t in 0..=200 {
            let err = linalg::spectral_norm(&(&x - &s.steady));
            let bound = stability::mixing_bound(&s.cert, dist0, t);
            if err > bound + tol {
                violations += 1;
            }
            if bound > tol {
                worst_ratio = worst_ratio.max(err / bound);
            }
            x = lds::propagate_covariance(&s.sys, &s.policy, &x)?;
        }
    }
    Ok(Outcome {
        passed: violations == 0,
        detail: format!(
            "{} trajectories x 201 steps, {violations} violations; max error/bound = {worst_ratio:.3}",
            samples.len()
        ),
    })
}

fn trace_bounds() -> Result<Outcome> {
    let samples = mixing_samples()?;
    let (mut violations, mut min_slack) = (0, f64::INFINITY);
    for s in samples {
        let sys = &s.sys;
        let forcing = sys.w() + sys.b() * &s.policy.noise * sys.b().transpose();
        let (x_bound, kx_bound) = stability::trace_bounds(&s.cert, &forcing);
        let tr_x = s.steady.trace();
        let tr_kx = (&s.policy.gain * &s.steady * s.policy.gain.transpose()).trace();
        min_slack = min_slack.min(x_bound / tr_x).min(kx_bound / tr_kx.max(f64::MIN_POSITIVE));
        if tr_x >= x_bound || tr_kx >= kx_bound {
            violations += 1;
        }
    }
    log::info!("trace bound minimum slack ratio {min_slack:.3}");
    Ok(Outcome {
        passed: violations == 0,
        detail: format!("{} samples, {violations} violations; min bound/actual = {min_slack:.3}", samples.len()),
    })
}

fn projection() -> Result<Outcome> {
    let mut rng = rng(5);
    let (mut worst_res, mut worst_idem, mut worst_expansion) = (0.0_f64, 0.0_f64, f64::NEG_INFINITY);
    for (d, k, nu, seed) in [(2, 1, 10.0, 51), (3, 2, 24.0, 0)] {
        let sys = synthetic_system(d, k, 1.05, 1.0, seed)?;
        let prob = SdpProblem::new(sys, nu)?;
        let n = prob.dim();
        let draw = |rng: &mut RandomStream| random_symmetric(n, 4.0, rng) + DMatrix::identity(n, n);
        for _ in 0..50 {
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let pa = prob.project(&a)?;
            let pb = prob.project(&b)?;
            let report = prob.is_feasible(pa.matrix());
            worst_res = worst_res
                .max(report.equality_residual)
                .max(-report.min_eigenvalue)
                .max(report.trace_excess);
            worst_idem = worst_idem.max((prob.project(pa.matrix())?.matrix() - pa.matrix()).norm());
            worst_expansion = worst_expansion.max((pa.matrix() - pb.matrix()).norm() - (&a - &b).norm());
        }
    }
    let (a, b, w, nu) = (0.5, 1.0, 1.0, 4.0);
    let sys = LinearSystem::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b), DMatrix::from_element(1, 1, w))?;
    let prob = SdpProblem::new(sys, nu)?;
    let mut worst_brute = 0.0_f64;
    for i in 0..8 {
        let target = if i == 0 {
            DMatrix::from_row_slice(2, 2, &[1.6, -0.3, -0.3, 0.5])
        } else {
            random_symmetric(2, 2.0, &mut rng)
        };
        let ours = prob.project(&target)?;
        let brute = reference::scalar_projection_brute_force(a, b, w, nu, &target);
        worst_brute = worst_brute.max((ours.matrix() - brute).norm());
    }
    Ok(Outcome {
        passed: worst_res <= 1e-6 && worst_idem <= 1e-7 && worst_expansion <= 1e-7 && worst_brute <= 1e-3,
        detail: format!(
            "max residual {worst_res:.2e}; idempotence {worst_idem:.2e}; max ‖Pa-Pb‖-‖a-b‖ {worst_expansion:.2e}; brute-force gap {worst_brute:.2e}"
        ),
    })
}

fn oracle_closed_form() -> Result<Outcome> {
    let one = DMatrix::from_element(1, 1, 1.0);
    let sys = LinearSystem::new(DMatrix::from_element(1, 1, 0.9), one.clone(), one.clone())?;
    let huge = 1e6;
    let k = sdp::oracle(&sys, &one, &one, huge, 1e-8)?[(0, 0)];
    let k_ref = reference::scalar_riccati_gain(0.9, 1.0, 1.0, 1.0);
    let mut riccati_err = (k - k_ref).abs();

    // The default start already sits near the answer for Q = R = I, so also
    // start from I and use a cost whose optimum lies elsewhere.
    let prob = SdpProblem::new(sys.clone(), huge)?;
    let cold = OracleOptions {
        tol: 1e-8,
        warm_start: Some(DMatrix::identity(2, 2)),
        ..OracleOptions::default()
    };
    for r in [1.0, 0.01] {
        let costs = CostPair::new(one.clone(), DMatrix::from_element(1, 1, r))?;
        let sol = sdp::solve_oracle(&prob, &costs, &cold)?;
        riccati_err = riccati_err.max((sol.gain[(0, 0)] - reference::scalar_riccati_gain(0.9, 1.0, 1.0, r)).abs());
    }

    // Cheap control wants a large gain; the budget has to bind.
    let nu = 1.6;
    let prob = SdpProblem::new(sys.clone(), nu)?;
    let costs = CostPair::new(one.clone(), DMatrix::from_element(1, 1, 0.01))?;
    let sol = sdp::solve_oracle(&prob, &costs, &OracleOptions { tol: 1e-8, ..OracleOptions::default() })?;
    let lifted = reference_lift(&sys, &sol.gain);
    let excess = (sol.sigma.trace() - nu).max(lifted.trace() - nu);
    let unconstrained = reference::scalar_riccati_gain(0.9, 1.0, 1.0, 0.01);
    Ok(Outcome {
        passed: riccati_err <= 1e-3 && excess <= 1e-4 && sol.trace_binding,
        detail: format!(
            "ν = {huge:e}: K = {k:.6} vs Riccati {k_ref:.6}, max gain error {riccati_err:.2e}; tight ν = {nu}: trace excess {excess:.2e}, binding = {}, K = {:.4} (unconstrained {unconstrained:.4})",
            sol.trace_binding,
            sol.gain[(0, 0)]
        ),
    })
}

fn default_config(controller: &str, horizon: usize, seed: u64) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(&format!(
        r#"{{"controller": {{"kind": "{controller}"}}, "horizon": {horizon}, "seed": {seed}}}"#
    ))
}

fn ogd_linear_regret() -> Result<Outcome> {
    let horizon = 5000;
    let cfg = default_config("ogd", horizon, 7)?;
    let setup = harness_run::prepare(&cfg, cfg.seed)?;
    let c = setup.schedule.trace_bound;
    let sigma = linalg::min_eigenvalue(setup.sys.w()).sqrt();
    let params = ogd::recommended_params(1.0, 0.25, setup.sys.w().trace().sqrt(), sigma, c, horizon);
    let mut state = OgdState::init(setup.prob.clone(), params.eta)?;
    let (mut loss, mut max_step) = (0.0, 0.0_f64);
    let (d, k) = (setup.sys.state_dim(), setup.sys.control_dim());
    let mut sum = CostPair::zeros(d, k);
    for costs in &setup.schedule.costs {
        loss += linalg::inner(&sdp::cost_matrix(costs), state.sigma().matrix());
        max_step = max_step.max(state.update(costs)?);
        sum.q += &costs.q;
        sum.r += &costs.r;
    }
    let best = sdp::solve_oracle(&setup.prob, &sum, &OracleOptions { tol: 1e-9, ..OracleOptions::default() })?;
    let regret = loss - best.objective;
    let nu = setup.nu;
    let bound = 4.0 * nu * nu / params.eta + 4.0 * c * c * params.eta * horizon as f64;
    let step_bound = 4.0 * c * params.eta + 1e-6;
    Ok(Outcome {
        passed: max_step <= step_bound && regret <= 1.05 * bound,
        detail: format!(
            "T = {horizon}, η = {:.3e}: max step {max_step:.3e} ≤ {step_bound:.3e}; linear regret {regret:.2} vs bound {bound:.3e}",
            params.eta
        ),
    })
}

fn median_regrets(controller: &str, horizon: usize) -> Result<Vec<RegretSummary>> {
    (0..SEEDS)
        .map(|seed| {
            let trace = harness_run::run(&default_config(controller, horizon, seed)?)?;
            match &trace.summary.error {
                Some(e) => Err(LqcError::NumericalFailure(format!("seed {seed}: {e}"))),
                None => Ok(trace.summary),
            }
        })
        .collect()
}

fn med(summaries: &[RegretSummary], f: impl Fn(&RegretSummary) -> f64) -> f64 {
    let mut v: Vec<f64> = summaries.iter().map(f).collect();
    median(&mut v)
}

fn ogd_regret_trend() -> Result<Outcome> {
    let horizons = [1000, 4000, 16000];
    let mut per_sqrt = Vec::new();
    let mut per_round = Vec::new();
    for t in horizons {
        let runs = median_regrets("ogd", t)?;
        per_sqrt.push(med(&runs, |s| s.regret / (s.horizon as f64).sqrt()));
        per_round.push(med(&runs, |s| s.regret_per_round));
    }
    let hi = per_sqrt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = per_sqrt.iter().cloned().fold(f64::INFINITY, f64::min);
    let decreasing = per_round.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome {
        passed: lo > 0.0 && hi / lo < 2.0 && decreasing,
        detail: format!("median R_T/√T = {per_sqrt:.3?} (spread {:.2}x); median R_T/T = {per_round:.4?}", hi / lo),
    })
}

struct FllRuns {
    short: Vec<RegretSummary>,
    long: Vec<RegretSummary>,
}

fn fll_runs() -> Result<&'static FllRuns> {
    static RUNS: OnceLock<std::result::Result<FllRuns, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let build = || -> Result<FllRuns> {
            Ok(FllRuns {
                short: median_regrets("fll", 1000)?,
                long: median_regrets("fll", 10_000)?,
            })
        };
        build().map_err(|e| e.to_string())
    })
    .as_ref()
    .map_err(|e| LqcError::NumericalFailure(e.clone()))
}

fn fll_switch_rate() -> Result<Outcome> {
    let runs = &fll_runs()?.long;
    let switches: usize = runs.iter().map(|s| s.switch_count).sum();
    let rounds: usize = runs.iter().map(|s| s.rounds_completed).sum();
    let s = &runs[0];
    let eta = s.eta.unwrap_or(f64::NAN);
    let cfg = default_config("fll", s.horizon, 0)?;
    let sys = cfg.build_system()?;
    let bound = eta * s.trace_bound * ((sys.state_dim() + sys.control_dim()) as f64).sqrt();
    let rate = switches as f64 / rounds as f64;
    Ok(Outcome {
        passed: rate <= 1.2 * bound,
        detail: format!("{} seeds x {} rounds: switch rate {rate:.4e} vs ηC√(d+k) = {bound:.4e}", runs.len(), s.horizon),
    })
}

fn fll_regret() -> Result<Outcome> {
    let runs = fll_runs()?;
    let short = med(&runs.short, |s| s.regret_per_round);
    let long = med(&runs.long, |s| s.regret_per_round);
    Ok(Outcome {
        passed: long <= 0.5 * short,
        detail: format!("median R_T/T: {short:.4} at T=1000, {long:.4} at T=10000 (ratio {:.3})", long / short),
    })
}

/// Tracks `E[x x^T]` conditional on the state at the start of a reset.
struct Episode {
    closed_loop: DMatrix<f64>,
    steady: DMatrix<f64>,
    cov: DMatrix<f64>,
    residual: Option<DVector<f64>>,
    start_state: DVector<f64>,
}

struct DominationStats {
    episodes: usize,
    checks: usize,
    worst_excess: f64,
    worst_residual: f64,
}

fn domination_run(sys: LinearSystem, mode: ResetMode, eta: f64, horizon: usize, seed: u64, stats: &mut DominationStats) -> Result<()> {
    let prob = SdpProblem::new(sys.clone(), 24.0)?;
    let mut config = FllConfig::new(eta, 24.0);
    config.reset = mode;
    let mut learner_rng = lds::random_stream(seed, 1);
    let mut noise_rng = lds::random_stream(seed, 0);
    let mut fll = FllState::init(prob, config, &mut learner_rng)?;
    let (d, k) = (sys.state_dim(), sys.control_dim());
    let mut x = DVector::zeros(d);
    let mut episode: Option<Episode> = None;
    let mut switched_last = false;
    let b_pinv = linalg::pinv(sys.b(), linalg::RANK_CUTOFF).0;
    for t in 0..horizon {
        let r = 0.1 + 0.9 * (t % 10) as f64 / 9.0;
        let costs = CostPair::new(DMatrix::identity(d, d), DMatrix::identity(k, k) * r)?;
        let action = fll.act(&x)?;
        if action.resetting && switched_last {
            let m = sys.closed_loop(fll.gain())?;
            episode = Some(Episode {
                steady: lds::solve_steady_state(&sys, &GaussianPolicy::deterministic(fll.gain().clone()))?,
                closed_loop: m,
                cov: DMatrix::zeros(d, d),
                residual: None,
                start_state: x.clone(),
            });
        }
        let resetting_after = fll.reset_in_progress();
        x = sys.drift(&x, &action.control) + sys.sample_noise(&mut noise_rng);
        let switched = fll.update(&costs, &mut learner_rng)?;
        if let Some(ep) = episode.as_mut() {
            ep.cov = &ep.closed_loop * &ep.cov * ep.closed_loop.transpose() + sys.w();
            if let Some(res) = ep.residual.as_mut() {
                *res = &ep.closed_loop * &*res;
            } else if !resetting_after {
                let res = match fll.last_reset().and_then(|p| p.deterministic_residual()) {
                    Some(r) => r.clone(),
                    None => (sys.a() - sys.b() * &b_pinv * sys.a()) * &ep.start_state,
                };
                stats.worst_residual = stats.worst_residual.max(res.norm() / ep.start_state.norm().max(1.0));
                ep.residual = Some(res);
                stats.episodes += 1;
            }
            if let Some(res) = &ep.residual {
                let second_moment = &ep.cov + res * res.transpose();
                stats.worst_excess = stats.worst_excess.max(linalg::max_eigenvalue(&(second_moment - &ep.steady)));
                stats.checks += 1;
            }
        }
        if switched {
            episode = None;
        }
        switched_last = switched;
    }
    Ok(())
}

fn post_reset_domination() -> Result<Outcome> {
    let mut stats = DominationStats {
        episodes: 0,
        checks: 0,
        worst_excess: f64::NEG_INFINITY,
        worst_residual: 0.0,
    };
    for seed in 0..3 {
        domination_run(synthetic_system(3, 2, 1.05, 1.0, 0)?, ResetMode::Auto, 0.02, 3000, seed, &mut stats)?;
        domination_run(synthetic_system(2, 2, 1.05, 1.0, 1)?, ResetMode::OneStep, 0.02, 3000, seed, &mut stats)?;
    }
    Ok(Outcome {
        passed: stats.episodes >= 10 && stats.worst_excess <= 1e-6 && stats.worst_residual <= 1e-8,
        detail: format!(
            "{} resets, {} rounds checked; max eig(X̂_t - X) = {:.3e}; max reset residual {:.2e}",
            stats.episodes, stats.checks, stats.worst_excess, stats.worst_residual
        ),
    })
}

fn reset_machinery() -> Result<Outcome> {
    let mut rng = rng(11);
    let (mut worst_terminal, mut worst_energy, mut worst_bound_ratio) = (0.0_f64, 0.0_f64, 0.0_f64);
    for seed in 0..10u64 {
        let (d, k) = if seed % 2 == 0 { (2, 1) } else { (3, 2) };
        let sys = synthetic_system(d, k, 1.05, 1.0, 1100 + seed)?;
        let horizon = stability::controllability_horizon(&sys).ok_or_else(|| LqcError::NumericalFailure("uncontrollable sample".into()))?;
        for k_steps in [horizon, horizon + 1] {
            let x0 = lds::standard_normal(d, &mut rng) * 3.0;
            let controls = reset::k_step_zeroing(&sys, &x0, k_steps)?;
            let mut x = x0.clone();
            for u in &controls {
                x = sys.drift(&x, u);
            }
            worst_terminal = worst_terminal.max(x.norm());
            let energy: f64 = controls.iter().map(|u| u.norm_squared()).sum();
            let c_mat = stability::controllability_matrix(&sys, k_steps);
            let target = -(sys.a().pow(k_steps as u32) * &x0);
            let (_, ref_energy) = reference::min_energy_kkt(&c_mat, &target).ok_or_else(|| LqcError::NumericalFailure("KKT solve failed".into()))?;
            worst_energy = worst_energy.max((energy - ref_energy).abs() / ref_energy.max(1e-300));

            let report = stability::strong_controllability(&sys, k_steps)?;
            let a = linalg::spectral_norm(sys.a()).max(1.0);
            let b = linalg::spectral_norm(sys.b());
            let bound = reset::zeroing_cost_bound(k_steps, report.kappa_ctrl.max(1.0), a, b) * x0.norm_squared();
            let (q, r) = (DMatrix::identity(d, d), DMatrix::identity(k, k));
            worst_bound_ratio = worst_bound_ratio.max(reset::zeroing_cost(&sys, &x0, &controls, &q, &r) / bound);
        }
    }

    // Monte-Carlo cost of the superposition reset against k C_ss + zeroing cost.
    let mut mc_worst = f64::NEG_INFINITY;
    let mut mc_detail = Vec::new();
    for (d, k, seed) in [(2, 1, 1200u64), (3, 2, 0)] {
        let sys = synthetic_system(d, k, 1.05, 1.0, seed)?;
        let k_steps = stability::controllability_horizon(&sys).unwrap_or(d);
        let costs = CostPair::new(DMatrix::identity(d, d), DMatrix::identity(k, k))?;
        let prob = SdpProblem::new(sys.clone(), 24.0)?;
        let gain = sdp::solve_oracle(&prob, &costs, &OracleOptions::default())?.gain;
        let x0 = lds::standard_normal(d, &mut rng) * 2.0;
        let template = SuperpositionReset::new(&sys, &x0, &gain, k_steps)?;
        let bound = template.cost_bound(&sys, &x0, &costs)?;
        let runs = 10_000;
        let mut mc_rng = lds::random_stream(seed, 99);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..runs {
            let mut law = template.clone();
            let mut x = x0.clone();
            let mut cost = 0.0;
            while let Some(u) = law.control(&sys, &x) {
                cost += lds::instantaneous_cost(&costs, &x, &u)?;
                x = lds::step(&sys, &x, &u, &mut mc_rng)?;
            }
            sum += cost;
            sum_sq += cost * cost;
        }
        let mean = sum / runs as f64;
        let se = ((sum_sq / runs as f64 - mean * mean).max(0.0) / runs as f64).sqrt();
        mc_worst = mc_worst.max(mean - (bound + 3.0 * se));
        mc_detail.push(format!("{mean:.3} vs {bound:.3} (se {se:.3})"));
    }
    Ok(Outcome {
        passed: worst_terminal <= 1e-8 && worst_energy <= 1e-8 && worst_bound_ratio <= 1.0 && mc_worst <= 0.0,
        detail: format!(
            "terminal ‖x_k‖ {worst_terminal:.2e}; energy rel. error {worst_energy:.2e}; zeroing cost / closed-form bound ≤ {worst_bound_ratio:.3}; superposition MC {}",
            mc_detail.join(", ")
        ),
    })
}
