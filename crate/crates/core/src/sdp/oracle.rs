use nalgebra::DMatrix;

use super::{cost_matrix, extract, JointCovariance, SdpProblem};
use crate::error::{LqcError, Result};
use crate::lds::{CostPair, LinearSystem};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Stopping tolerance on the objective decrease and the gradient mapping,
    /// both measured for the cost normalized to unit Frobenius norm.
    pub tol: f64,
    pub max_iterations: usize,
    /// Starting point; projected before use. Defaults to the smallest-trace
    /// member of the feasible set.
    pub warm_start: Option<DMatrix<f64>>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            tol: 1e-6,
            max_iterations: 10_000,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub gain: DMatrix<f64>,
    pub sigma: JointCovariance,
    /// `J(Σ)` for the unnormalized costs.
    pub objective: f64,
    pub iterations: usize,
    /// Whether `trace Σ` sits on the budget ν at the solution.
    pub trace_binding: bool,
}

/// Minimizes `J(Σ) = blockdiag(Q, R) • Σ` over `S` by projected gradient
/// descent and returns the extracted gain.
pub fn oracle(sys: &LinearSystem, q: &DMatrix<f64>, r: &DMatrix<f64>, nu: f64, tol: f64) -> Result<DMatrix<f64>> {
    let prob = SdpProblem::new(sys.clone(), nu)?;
    let costs = CostPair::new(q.clone(), r.clone())?;
    let opts = OracleOptions {
        tol,
        ..OracleOptions::default()
    };
    solve_oracle(&prob, &costs, &opts).map(|s| s.gain)
}

pub fn solve_oracle(prob: &SdpProblem, costs: &CostPair, opts: &OracleOptions) -> Result<OracleSolution> {
    costs.check_for(prob.system())?;
    let n = prob.dim();
    let raw = cost_matrix(costs);
    let norm = raw.norm();
    let mut sigma = match &opts.warm_start {
        Some(s) if s.shape() == (n, n) => prob.project(s)?,
        Some(s) => return Err(LqcError::dims("oracle warm start", (n, n), s.shape())),
        None => prob.min_trace_point().clone(),
    };
    if norm == 0.0 {
        return finish(prob, sigma, &raw, 0);
    }
    // The argmin is invariant to scaling the costs, so work with unit norm.
    let grad = raw / norm;
    // The objective is linear, so any step length converges and stationarity
    // does not depend on it. Steps start at the scale of the smallest-trace
    // point, grow while they move freely and shrink when the projection of a
    // far-away point does not converge: Dykstra needs roughly distance/gap
    // iterations, so overshooting by much more than the set's size is costly.
    let min_step = 1e-6 * prob.min_trace_point().trace();
    let mut step = prob.min_trace_point().trace().min(prob.nu());
    let mut value = linalg::inner(&grad, sigma.matrix());

    for it in 1..=opts.max_iterations {
        let next = loop {
            match prob.project(&(sigma.matrix() - &grad * step)) {
                Ok(s) => break s,
                Err(LqcError::NonConvergence { residual, .. }) if step > min_step => {
                    log::debug!("oracle step {step:e} left the projection at gap {residual:e}; halving");
                    step *= 0.5;
                }
                Err(LqcError::NonConvergence { residual, .. }) => {
                    return Err(non_convergence(it, residual, sigma));
                }
                Err(e) => return Err(e),
            }
        };
        let next_value = linalg::inner(&grad, next.matrix());
        let decrease = value - next_value;
        let moved = (next.matrix() - sigma.matrix()).norm();
        let mapping = moved / step;
        sigma = next;
        value = next_value;
        if decrease.abs() <= opts.tol * value.abs().max(1.0) && mapping <= opts.tol {
            return finish(prob, sigma, &(grad * norm), it);
        }
        if moved >= 0.5 * step {
            step = (2.0 * step).min(prob.nu());
        }
    }
    Err(non_convergence(opts.max_iterations, value, sigma))
}

fn non_convergence(iterations: usize, residual: f64, best: JointCovariance) -> LqcError {
    LqcError::NonConvergence {
        what: "oracle projected gradient",
        iterations,
        residual,
        best: Some(Box::new(best.into_matrix())),
    }
}

fn finish(prob: &SdpProblem, sigma: JointCovariance, cost: &DMatrix<f64>, iterations: usize) -> Result<OracleSolution> {
    let gain = extract(&sigma)?;
    let objective = linalg::inner(cost, sigma.matrix());
    let trace_binding = sigma.trace() >= prob.nu() - 1e-6 * prob.nu().max(1.0);
    Ok(OracleSolution {
        gain,
        sigma,
        objective,
        iterations,
        trace_binding,
    })
}
