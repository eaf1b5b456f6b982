use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{matrix_from_rows, matrix_to_rows, BudgetSpec, ControllerSpec, ExperimentConfig, Rows};
use super::schedule::{self, CostSchedule};
use crate::error::{LqcError, Result};
use crate::fll::{self, FllConfig, FllState, ResetMode};
use crate::lds::{self, CostPair, GaussianPolicy, LinearSystem, RandomStream, StateVector};
use crate::linalg;
use crate::ogd::{self, OgdState};
use crate::reset;
use crate::sdp::{self, OracleOptions, SdpProblem};
use crate::stability;

pub const NOISE_STREAM: u64 = 0;
pub const LEARNER_STREAM: u64 = 1;
pub const SCHEDULE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub cost: f64,
    pub comparator_cost: f64,
    pub cum_regret: f64,
    pub switched: bool,
    pub reset: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegretSummary {
    pub controller: String,
    pub seed: u64,
    pub replicate: usize,
    pub horizon: usize,
    pub rounds_completed: usize,
    pub nu: f64,
    pub eta: Option<f64>,
    pub trace_bound: f64,
    pub total_cost: f64,
    pub comparator_total: f64,
    pub regret: f64,
    pub regret_per_round: f64,
    pub switch_count: usize,
    pub reset_rounds: usize,
    pub oracle_calls: usize,
    pub psd_clamps: usize,
    pub comparator_gain: Rows,
    /// Regret against the user-supplied comparator gain, when given.
    pub extra_comparator_regret: Option<f64>,
    /// SHA-256 of the noise sequence, identical for both trajectories.
    pub noise_hash: String,
    pub wall_time_secs: f64,
    /// Controller failure that cut the run short.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RegretTrace {
    pub records: Vec<RoundRecord>,
    pub summary: RegretSummary,
}

/// Trace budget `ν`, from the config or `2κ⁴λ²/γ` with `λ² = trace W`.
pub fn resolve_budget(budget: &BudgetSpec, sys: &LinearSystem) -> f64 {
    match *budget {
        BudgetSpec::Nu { nu } => nu,
        BudgetSpec::Stability { kappa, gamma } => 2.0 * kappa.powi(4) * sys.w().trace() / gamma,
    }
}

/// `K* = Oracle(mean Q_t, mean R_t, ν)`.
pub fn best_fixed_policy(prob: &SdpProblem, schedule: &CostSchedule, opts: &OracleOptions) -> Result<DMatrix<f64>> {
    Ok(sdp::solve_oracle(prob, &schedule.mean()?, opts)?.gain)
}

/// Upper estimate of the expected cost of one reset for costs with trace at
/// most `c`, starting from a state with `E‖x‖² ≤ ν`.
pub fn estimate_reset_cost(sys: &LinearSystem, nu: f64, c: f64, mode: &ResetMode) -> Result<f64> {
    let one_step = matches!(mode, ResetMode::OneStep) || (matches!(mode, ResetMode::Auto) && reset::one_step_is_exact(sys));
    if one_step {
        return Ok(reset::one_step_cost_bound(sys, nu, c));
    }
    let k = match mode {
        ResetMode::Superposition { k_steps: Some(k) } => *k,
        _ => stability::controllability_horizon(sys)
            .ok_or_else(|| LqcError::Config("system is not controllable".into()))?,
    };
    Ok(k as f64 * c * nu + c * nu * reset::zeroing_cost_constant(sys, k)?)
}

/// Oracle gains for `r = 0.1, …, 1` on a fixed state cost.
#[derive(Debug, Clone)]
pub struct RecentBank {
    pub gains: Vec<DMatrix<f64>>,
}

impl RecentBank {
    pub fn new(prob: &SdpProblem, base: &schedule::CostBase, opts: &OracleOptions) -> Result<Self> {
        let gains = (0..schedule::GRID_SIZE)
            .map(|i| {
                let pair = base.pair(schedule::grid_value(i));
                sdp::solve_oracle(prob, &CostPair::new(pair.q, pair.r)?, opts).map(|s| s.gain)
            })
            .collect::<Result<_>>()?;
        Ok(RecentBank { gains })
    }

    /// Entry whose `r` is nearest `last_r`, ties toward the larger `r`.
    pub fn select(&self, last_r: f64) -> &DMatrix<f64> {
        &self.gains[recent_strategy(last_r)]
    }
}

/// Bank index for the last observed `r_t`.
pub fn recent_strategy(last_r: f64) -> usize {
    schedule::nearest_grid_index(last_r)
}

enum Learner {
    Ogd(Box<OgdState>),
    Fll(Box<FllState>),
    Fixed(GaussianPolicy),
    Recent { bank: RecentBank, current: usize },
}

struct Step {
    control: StateVector,
    resetting: bool,
}

impl Learner {
    fn name(&self) -> &'static str {
        match self {
            Learner::Ogd(_) => "ogd",
            Learner::Fll(_) => "fll",
            Learner::Fixed(_) => "fixed",
            Learner::Recent { .. } => "recent",
        }
    }

    fn act(&mut self, x: &StateVector, rng: &mut RandomStream) -> Result<Step> {
        Ok(match self {
            Learner::Ogd(s) => Step {
                control: s.act(x, rng),
                resetting: false,
            },
            Learner::Fll(s) => {
                let a = s.act(x)?;
                Step {
                    control: a.control,
                    resetting: a.resetting,
                }
            }
            Learner::Fixed(p) => Step {
                control: p.sample(x, rng),
                resetting: false,
            },
            Learner::Recent { bank, current } => Step {
                control: &bank.gains[*current] * x,
                resetting: false,
            },
        })
    }

    fn update(&mut self, c: &CostPair, r: f64, rng: &mut RandomStream) -> Result<bool> {
        match self {
            Learner::Ogd(s) => s.update(c).map(|_| false),
            Learner::Fll(s) => s.update(c, rng),
            Learner::Fixed(_) => Ok(false),
            Learner::Recent { current, .. } => {
                let next = recent_strategy(r);
                let switched = next != *current;
                *current = next;
                Ok(switched)
            }
        }
    }
}

/// Everything a replicate needs before the interaction loop starts.
pub struct Setup {
    pub sys: LinearSystem,
    pub prob: SdpProblem,
    pub schedule: CostSchedule,
    pub nu: f64,
    pub comparator: DMatrix<f64>,
    pub extra_comparator: Option<DMatrix<f64>>,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Setup> {
    cfg.validate()?;
    let sys = cfg.build_system()?;
    let nu = resolve_budget(&cfg.budget, &sys);
    let prob = SdpProblem::with_tolerances(sys.clone(), nu, cfg.sdp)?;
    let mut sched_rng = lds::random_stream(seed, SCHEDULE_STREAM);
    let schedule = schedule::generate_cost_schedule(&cfg.costs, sys.state_dim(), sys.control_dim(), cfg.horizon, &mut sched_rng)?;
    let comparator = best_fixed_policy(&prob, &schedule, &OracleOptions::default())?;
    let extra_comparator = cfg
        .comparator_gain
        .as_ref()
        .map(|rows| -> Result<DMatrix<f64>> {
            let g = matrix_from_rows("comparator_gain", rows)?;
            sys.check_gain(&g).map_err(|e| LqcError::Config(e.to_string()))?;
            Ok(g)
        })
        .transpose()?;
    Ok(Setup {
        sys,
        prob,
        schedule,
        nu,
        comparator,
        extra_comparator,
    })
}

fn build_learner(cfg: &ExperimentConfig, setup: &Setup, rng: &mut RandomStream) -> Result<(Learner, Option<f64>)> {
    let sys = &setup.sys;
    let c = setup.schedule.trace_bound;
    let t = cfg.horizon;
    Ok(match &cfg.controller {
        ControllerSpec::Ogd { eta } => {
            let sigma2 = linalg::min_eigenvalue(sys.w());
            let eta = match (eta, cfg.budget) {
                (Some(e), _) => *e,
                _ if sigma2 <= 0.0 => {
                    return Err(LqcError::Config("OGD step size needs W positive definite".into()));
                }
                (None, BudgetSpec::Stability { kappa, gamma }) => {
                    let lambda = sys.w().trace().sqrt();
                    ogd::recommended_params(kappa, gamma, lambda, sigma2.sqrt(), c, t).eta
                }
                (None, BudgetSpec::Nu { nu }) => sigma2.powf(1.5) / (2.0 * c * (nu * t as f64).sqrt()),
            };
            (Learner::Ogd(Box::new(OgdState::init(setup.prob.clone(), eta)?)), Some(eta))
        }
        ControllerSpec::Fll { eta, reset, reset_cost } => {
            let eta = match eta {
                Some(e) => *e,
                None => {
                    let c_r = match reset_cost {
                        Some(v) => *v,
                        None => estimate_reset_cost(sys, setup.nu, c, reset)?,
                    };
                    fll::recommended_eta(setup.nu, sys.state_dim(), sys.control_dim(), c, c_r, t)
                }
            };
            let config = FllConfig {
                eta,
                nu: setup.nu,
                reset: reset.clone(),
                oracle: OracleOptions::default(),
            };
            (Learner::Fll(Box::new(FllState::init(setup.prob.clone(), config, rng)?)), Some(eta))
        }
        ControllerSpec::Fixed { gain } => {
            let g = match gain {
                Some(rows) => {
                    let g = matrix_from_rows("controller.gain", rows)?;
                    sys.check_gain(&g).map_err(|e| LqcError::Config(e.to_string()))?;
                    g
                }
                None => setup.comparator.clone(),
            };
            (Learner::Fixed(GaussianPolicy::deterministic(g)), None)
        }
        ControllerSpec::Recent => {
            let base = schedule::CostBase::new(&cfg.costs, sys.state_dim(), sys.control_dim())?;
            let bank = RecentBank::new(&setup.prob, &base, &OracleOptions::default())?;
            let current = recent_strategy(0.5 * (schedule::R_MIN + schedule::R_MAX));
            (Learner::Recent { bank, current }, None)
        }
    })
}

#[derive(Default)]
struct NoiseHasher(Sha256);

impl NoiseHasher {
    fn draw(&mut self, sys: &LinearSystem, rng: &mut RandomStream) -> StateVector {
        let w = sys.sample_noise(rng);
        for v in w.iter() {
            self.0.update(v.to_le_bytes());
        }
        w
    }

    fn finish(self) -> String {
        self.0.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-round costs of a fixed deterministic gain on the replayed noise.
fn fixed_gain_costs(sys: &LinearSystem, gain: &DMatrix<f64>, costs: &[CostPair], seed: u64) -> (Vec<f64>, String) {
    let mut rng = lds::random_stream(seed, NOISE_STREAM);
    let mut hasher = NoiseHasher::default();
    let mut x = StateVector::zeros(sys.state_dim());
    let mut out = Vec::with_capacity(costs.len());
    for c in costs {
        let u = gain * &x;
        out.push(x.dot(&(&c.q * &x)) + u.dot(&(&c.r * &u)));
        x = sys.drift(&x, &u) + hasher.draw(sys, &mut rng);
    }
    (out, hasher.finish())
}

/// Runs replicate `replicate` with seed `cfg.seed ^ replicate`.
pub fn run_replicate(cfg: &ExperimentConfig, replicate: usize) -> Result<RegretTrace> {
    let seed = cfg.seed ^ replicate as u64;
    let setup = prepare(cfg, seed)?;
    run_prepared(cfg, &setup, seed, replicate)
}

pub fn run(cfg: &ExperimentConfig) -> Result<RegretTrace> {
    run_replicate(cfg, 0)
}

pub fn run_replicates(cfg: &ExperimentConfig) -> Result<Vec<RegretTrace>> {
    (0..cfg.replicates).into_par_iter().map(|i| run_replicate(cfg, i)).collect()
}

pub fn run_prepared(cfg: &ExperimentConfig, setup: &Setup, seed: u64, replicate: usize) -> Result<RegretTrace> {
    let start = Instant::now();
    let sys = &setup.sys;
    let costs = &setup.schedule.costs;
    let (comparator_costs, comparator_hash) = fixed_gain_costs(sys, &setup.comparator, costs, seed);

    let mut learner_rng = lds::random_stream(seed, LEARNER_STREAM);
    let (mut learner, eta) = build_learner(cfg, setup, &mut learner_rng)?;
    let mut noise_rng = lds::random_stream(seed, NOISE_STREAM);
    let mut hasher = NoiseHasher::default();

    let mut records = Vec::with_capacity(costs.len());
    let mut x = StateVector::zeros(sys.state_dim());
    let mut cum = 0.0;
    let mut error = None;
    for (i, c) in costs.iter().enumerate() {
        let round = (|| -> Result<(f64, bool, bool)> {
            let step = learner.act(&x, &mut learner_rng)?;
            let cost = lds::instantaneous_cost(c, &x, &step.control)?;
            let next = sys.drift(&x, &step.control) + hasher.draw(sys, &mut noise_rng);
            let switched = learner.update(c, setup.schedule.r[i], &mut learner_rng)?;
            x = next;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(LqcError::NumericalFailure(format!("state diverged at round {}", i + 1)));
            }
            Ok((cost, switched, step.resetting))
        })();
        match round {
            Ok((cost, switched, reset)) => {
                cum += cost - comparator_costs[i];
                records.push(RoundRecord {
                    t: i + 1,
                    cost,
                    comparator_cost: comparator_costs[i],
                    cum_regret: cum,
                    switched,
                    reset,
                });
            }
            Err(e) => {
                log::error!("run aborted at round {}: {e}", i + 1);
                error = Some(e.to_string());
                break;
            }
        }
    }
    let noise_hash = hasher.finish();
    if error.is_none() {
        assert_eq!(noise_hash, comparator_hash, "learner and comparator saw different noise");
    }

    let total_cost: f64 = records.iter().map(|r| r.cost).sum();
    let comparator_total: f64 = records.iter().map(|r| r.comparator_cost).sum();
    let regret = records.last().map_or(0.0, |r| r.cum_regret);
    let extra_comparator_regret = setup.extra_comparator.as_ref().map(|g| {
        let (extra, _) = fixed_gain_costs(sys, g, &costs[..records.len()], seed);
        total_cost - extra.iter().sum::<f64>()
    });
    let (oracle_calls, psd_clamps) = match &learner {
        Learner::Fll(s) => (s.oracle_calls(), s.psd_clamps()),
        Learner::Recent { .. } => (schedule::GRID_SIZE, 0),
        _ => (0, 0),
    };
    let completed = records.len();
    let summary = RegretSummary {
        controller: learner.name().to_string(),
        seed,
        replicate,
        horizon: cfg.horizon,
        rounds_completed: completed,
        nu: setup.nu,
        eta,
        trace_bound: setup.schedule.trace_bound,
        total_cost,
        comparator_total,
        regret,
        regret_per_round: if completed > 0 { regret / completed as f64 } else { 0.0 },
        switch_count: records.iter().filter(|r| r.switched).count(),
        reset_rounds: records.iter().filter(|r| r.reset).count(),
        oracle_calls,
        psd_clamps,
        comparator_gain: matrix_to_rows(&setup.comparator),
        extra_comparator_regret,
        noise_hash,
        wall_time_secs: start.elapsed().as_secs_f64(),
        error,
    };
    Ok(RegretTrace { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_config(controller: &str, horizon: usize) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"system": {{"kind": "explicit", "a": [[0.9]], "b": [[1.0]], "w": [[1.0]]}},
                "costs": {{"schedule": {{"kind": "uniform"}}}},
                "budget": {{"nu": 10.0}},
                "controller": {controller}, "horizon": {horizon}, "seed": 3}}"#
        ))
        .unwrap()
    }

    #[test]
    fn fixed_comparator_has_zero_regret() {
        let trace = run(&scalar_config(r#"{"kind": "fixed"}"#, 200)).unwrap();
        assert!(trace.records.iter().all(|r| r.cum_regret == 0.0 && r.cost == r.comparator_cost));
        assert_eq!(trace.summary.regret, 0.0);
    }

    #[test]
    fn first_round_cost_is_control_only() {
        let trace = run(&scalar_config(r#"{"kind": "ogd"}"#, 1)).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].comparator_cost, 0.0);
    }

    #[test]
    fn cumulative_column_is_prefix_sum() {
        let trace = run(&scalar_config(r#"{"kind": "fll", "eta": 0.05}"#, 300)).unwrap();
        let mut cum = 0.0;
        for r in &trace.records {
            cum += r.cost - r.comparator_cost;
            assert_eq!(cum, r.cum_regret);
        }
        assert_eq!(trace.summary.regret, trace.records.last().unwrap().cum_regret);
        assert!(trace.summary.error.is_none());
    }

    #[test]
    fn recent_on_constant_schedule_switches_once() {
        let mut cfg = scalar_config(r#"{"kind": "recent"}"#, 50);
        cfg.costs.schedule = super::super::config::ScheduleKind::Constant { r: 1.0 };
        let trace = run(&cfg).unwrap();
        assert!(trace.records.iter().skip(1).all(|r| !r.switched));
        assert!(trace.records[0].switched);
    }

    #[test]
    fn recent_strategy_examples() {
        assert_eq!(schedule::grid_value(recent_strategy(0.1)), 0.1);
        assert_eq!(schedule::grid_value(recent_strategy(0.25)), 0.3);
    }

    #[test]
    fn best_fixed_is_scale_invariant() {
        let cfg = scalar_config(r#"{"kind": "fixed"}"#, 100);
        let setup = prepare(&cfg, 3).unwrap();
        let doubled = CostSchedule {
            costs: setup.schedule.costs.iter().map(|c| c.scaled(2.0)).collect(),
            r: setup.schedule.r.clone(),
            trace_bound: 2.0 * setup.schedule.trace_bound,
        };
        let k2 = best_fixed_policy(&setup.prob, &doubled, &OracleOptions::default()).unwrap();
        assert!((k2 - &setup.comparator).norm() < 1e-6);
    }
}
