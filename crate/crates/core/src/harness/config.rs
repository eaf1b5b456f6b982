use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LqcError, Result};
use crate::fll::ResetMode;
use crate::lds::{self, LinearSystem};
use crate::linalg;
use crate::sdp::SdpTolerances;

/// Row-major matrix as it appears in config files.
pub type Rows = Vec<Vec<f64>>;

pub fn matrix_from_rows(context: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(LqcError::Config(format!("{context}: matrix is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(LqcError::Config(format!("{context}: rows have different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LqcError::Config(format!("{context}: non-finite entry")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Explicit {
        a: Rows,
        b: Rows,
        w: Rows,
    },
    /// Gaussian `A` rescaled to a given spectral radius, Gaussian `B` of full
    /// column rank, `W = σ² I`.
    Synthetic {
        #[serde(default = "defaults::state_dim")]
        state_dim: usize,
        #[serde(default = "defaults::control_dim")]
        control_dim: usize,
        #[serde(default = "defaults::spectral_radius")]
        spectral_radius: f64,
        #[serde(default = "defaults::one")]
        noise_std: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec::Synthetic {
            state_dim: defaults::state_dim(),
            control_dim: defaults::control_dim(),
            spectral_radius: defaults::spectral_radius(),
            noise_std: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    Constant {
        #[serde(default = "defaults::one")]
        r: f64,
    },
    /// `r_t` i.i.d. uniform on `[0.1, 1]`.
    Uniform,
    /// `r_t` on the grid `{0.1, …, 1}`: up w.p. 0.1, down w.p. 0.1, else stay,
    /// reflecting at the ends.
    RandomWalk {
        #[serde(default = "defaults::walk_start")]
        start: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// State cost; identity when absent.
    #[serde(default)]
    pub q: Option<Rows>,
    /// Control cost at `r = 1`; identity when absent.
    #[serde(default)]
    pub r_base: Option<Rows>,
    pub schedule: ScheduleKind,
    /// Per-round trace bound `C`; pairs are scaled down to meet it. Defaults
    /// to the larger trace of `Q` and `r_base`.
    #[serde(default)]
    pub trace_bound: Option<f64>,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            q: None,
            r_base: None,
            schedule: ScheduleKind::Uniform,
            trace_bound: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BudgetSpec {
    Nu {
        nu: f64,
    },
    /// `ν = 2κ⁴λ²/γ` with `λ² = trace W`.
    Stability {
        kappa: f64,
        gamma: f64,
    },
}

impl Default for BudgetSpec {
    fn default() -> Self {
        BudgetSpec::Stability { kappa: 1.0, gamma: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// Step size defaults to `σ³/(2C√(νT))`.
    Ogd {
        #[serde(default)]
        eta: Option<f64>,
    },
    /// `eta` defaults to the regret-optimal value given the reset cost
    /// `reset_cost`, itself estimated from the system when absent.
    Fll {
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default = "defaults::reset")]
        reset: ResetMode,
        #[serde(default)]
        reset_cost: Option<f64>,
    },
    /// Plays a fixed gain; the comparator gain when absent.
    Fixed {
        #[serde(default)]
        gain: Option<Rows>,
    },
    /// Oracle gains for `r ∈ {0.1, …, 1}`, choosing the one nearest the last
    /// observed `r_t`.
    Recent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub system: SystemSpec,
    #[serde(default)]
    pub costs: CostSpec,
    #[serde(default)]
    pub budget: BudgetSpec,
    pub controller: ControllerSpec,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::replicates")]
    pub replicates: usize,
    /// Extra fixed gain to report regret against.
    #[serde(default)]
    pub comparator_gain: Option<Rows>,
    #[serde(default)]
    pub sdp: SdpTolerances,
}

mod defaults {
    use crate::fll::ResetMode;

    pub fn state_dim() -> usize {
        3
    }
    pub fn control_dim() -> usize {
        2
    }
    pub fn spectral_radius() -> f64 {
        1.05
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn walk_start() -> f64 {
        0.5
    }
    pub fn replicates() -> usize {
        1
    }
    pub fn reset() -> ResetMode {
        ResetMode::Auto
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| LqcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LqcError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(LqcError::Config("horizon must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(LqcError::Config("replicates must be at least 1".into()));
        }
        match self.budget {
            BudgetSpec::Nu { nu } if !(nu > 0.0 && nu.is_finite()) => {
                return Err(LqcError::Config(format!("nu must be positive, got {nu}")));
            }
            BudgetSpec::Stability { kappa, gamma } if !(kappa > 0.0 && gamma > 0.0 && gamma < 1.0) => {
                return Err(LqcError::Config(format!("need kappa > 0 and 0 < gamma < 1, got ({kappa}, {gamma})")));
            }
            _ => {}
        }
        if let Some(c) = self.costs.trace_bound {
            if !(c > 0.0 && c.is_finite()) {
                return Err(LqcError::Config(format!("trace_bound must be positive, got {c}")));
            }
        }
        match self.costs.schedule {
            ScheduleKind::Constant { r } if !(r >= 0.0 && r.is_finite()) => {
                return Err(LqcError::Config(format!("constant r must be non-negative, got {r}")));
            }
            ScheduleKind::RandomWalk { start } if !(0.1..=1.0).contains(&start) => {
                return Err(LqcError::Config(format!("random walk start must lie in [0.1, 1], got {start}")));
            }
            _ => {}
        }
        if let ControllerSpec::Ogd { eta: Some(eta) } | ControllerSpec::Fll { eta: Some(eta), .. } = self.controller {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(LqcError::Config(format!("eta must be non-negative, got {eta}")));
            }
        }
        if let SystemSpec::Synthetic {
            state_dim,
            control_dim,
            spectral_radius,
            noise_std,
            ..
        } = self.system
        {
            if state_dim == 0 || control_dim == 0 {
                return Err(LqcError::Config("dimensions must be positive".into()));
            }
            if control_dim > state_dim {
                return Err(LqcError::Config("synthetic systems need control_dim <= state_dim".into()));
            }
            if !(spectral_radius >= 0.0 && noise_std > 0.0) {
                return Err(LqcError::Config("spectral_radius must be >= 0 and noise_std > 0".into()));
            }
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<LinearSystem> {
        build_system(&self.system)
    }
}

/// Stream used for the synthetic system draw.
const SYSTEM_STREAM: u64 = 7;

pub fn build_system(spec: &SystemSpec) -> Result<LinearSystem> {
    let sys = match spec {
        SystemSpec::Explicit { a, b, w } => {
            LinearSystem::new(matrix_from_rows("a", a)?, matrix_from_rows("b", b)?, matrix_from_rows("w", w)?)
        }
        SystemSpec::Synthetic {
            state_dim: d,
            control_dim: k,
            spectral_radius,
            noise_std,
            seed,
        } => synthetic_system(*d, *k, *spectral_radius, *noise_std, *seed),
    };
    sys.map_err(|e| match e {
        LqcError::DimensionMismatch { .. } | LqcError::Contract(_) => LqcError::Config(format!("system: {e}")),
        other => other,
    })
}

pub fn synthetic_system(d: usize, k: usize, spectral_radius: f64, noise_std: f64, seed: u64) -> Result<LinearSystem> {
    let mut rng = lds::random_stream(seed, SYSTEM_STREAM);
    let gauss = |rows: usize, cols: usize, rng: &mut lds::RandomStream| {
        let v = lds::standard_normal(rows * cols, rng);
        DMatrix::from_column_slice(rows, cols, v.as_slice())
    };
    let a = loop {
        let a = gauss(d, d, &mut rng);
        let rho = linalg::spectral_radius(&a)?;
        if rho > 1e-6 {
            break a * (spectral_radius / rho);
        }
    };
    let b = loop {
        let b = gauss(d, k, &mut rng);
        if linalg::pinv(&b, 1e-6).1 == k {
            break b;
        }
    };
    LinearSystem::new(a, b, DMatrix::identity(d, d) * (noise_std * noise_std))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"controller": {"kind": "ogd"}, "horizon": 10, "bogus": 1}"#).unwrap_err();
        assert!(err.is_config_error());
        let err = ExperimentConfig::from_json(r#"{"controller": {"kind": "ogd", "step": 1}, "horizon": 10}"#).unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(r#"{"controller": {"kind": "fll"}, "horizon": 10}"#).unwrap();
        assert_eq!(cfg.system, SystemSpec::default());
        assert_eq!(cfg.budget, BudgetSpec::Stability { kappa: 1.0, gamma: 0.25 });
        assert_eq!(cfg.replicates, 1);
        let sys = cfg.build_system().unwrap();
        assert_eq!((sys.state_dim(), sys.control_dim()), (3, 2));
        assert!((linalg::spectral_radius(sys.a()).unwrap() - 1.05).abs() < 1e-9);
    }

    #[test]
    fn zero_horizon_is_config_error() {
        assert!(ExperimentConfig::from_json(r#"{"controller": {"kind": "ogd"}, "horizon": 0}"#)
            .unwrap_err()
            .is_config_error());
    }

    #[test]
    fn ragged_matrix_is_config_error() {
        let text = r#"{"system": {"kind": "explicit", "a": [[1, 0], [0]], "b": [[1], [0]], "w": [[1, 0], [0, 1]]},
                       "controller": {"kind": "ogd"}, "horizon": 5}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert!(cfg.build_system().unwrap_err().is_config_error());
    }

    #[test]
    fn rows_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matrix_from_rows("m", &matrix_to_rows(&m)).unwrap(), m);
    }
}
