use nalgebra::DMatrix;
use rand::Rng;

use super::config::{matrix_from_rows, CostSpec, ScheduleKind};
use crate::error::{LqcError, Result};
use crate::lds::{CostPair, RandomStream};

pub const R_MIN: f64 = 0.1;
pub const R_MAX: f64 = 1.0;
/// Number of grid points `0.1, 0.2, …, 1.0`.
pub const GRID_SIZE: usize = 10;

pub fn grid_value(index: usize) -> f64 {
    (index + 1) as f64 / GRID_SIZE as f64
}

/// Cost sequence with the scalar `r_t` that generated each `R_t`.
#[derive(Debug, Clone)]
pub struct CostSchedule {
    pub costs: Vec<CostPair>,
    pub r: Vec<f64>,
    /// Per-round bound `C` on `trace Q_t` and `trace R_t`.
    pub trace_bound: f64,
}

impl CostSchedule {
    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn mean(&self) -> Result<CostPair> {
        let first = self.costs.first().ok_or_else(|| LqcError::Contract("empty cost schedule".into()))?;
        let n = self.costs.len() as f64;
        let mut q = DMatrix::zeros(first.q.nrows(), first.q.ncols());
        let mut r = DMatrix::zeros(first.r.nrows(), first.r.ncols());
        for c in &self.costs {
            q += &c.q;
            r += &c.r;
        }
        CostPair::new(q / n, r / n)
    }
}

/// Base matrices for a cost spec: `(Q, R at r = 1, C, scale)` where `scale`
/// shrinks both so that every generated pair meets the trace bound.
#[derive(Debug, Clone)]
pub struct CostBase {
    pub q: DMatrix<f64>,
    pub r_base: DMatrix<f64>,
    pub trace_bound: f64,
}

impl CostBase {
    pub fn new(spec: &CostSpec, d: usize, k: usize) -> Result<Self> {
        let q = match &spec.q {
            Some(rows) => matrix_from_rows("costs.q", rows)?,
            None => DMatrix::identity(d, d),
        };
        let r_base = match &spec.r_base {
            Some(rows) => matrix_from_rows("costs.r_base", rows)?,
            None => DMatrix::identity(k, k),
        };
        if q.shape() != (d, d) || r_base.shape() != (k, k) {
            return Err(LqcError::Config(format!(
                "cost matrices must be {d}x{d} and {k}x{k}, got {:?} and {:?}",
                q.shape(),
                r_base.shape()
            )));
        }
        CostPair::new(q.clone(), r_base.clone()).map_err(|e| LqcError::Config(format!("costs: {e}")))?;
        let r_max = match spec.schedule {
            ScheduleKind::Constant { r } => r,
            _ => R_MAX,
        };
        let natural = q.trace().max(r_max * r_base.trace());
        let trace_bound = spec.trace_bound.unwrap_or(natural);
        let scale = if natural > trace_bound { trace_bound / natural } else { 1.0 };
        Ok(CostBase {
            q: q * scale,
            r_base: r_base * scale,
            trace_bound,
        })
    }

    pub fn pair(&self, r: f64) -> CostPair {
        CostPair {
            q: self.q.clone(),
            r: &self.r_base * r,
        }
    }
}

/// Next grid index of the lazy random walk on `{0, …, 9}`.
fn walk_step(index: usize, rng: &mut RandomStream) -> usize {
    let u: f64 = rng.random();
    let up = u < 0.1;
    let down = (0.1..0.2).contains(&u);
    match (up, down) {
        (true, _) if index + 1 < GRID_SIZE => index + 1,
        (true, _) => index - 1,
        (_, true) if index > 0 => index - 1,
        (_, true) => index + 1,
        _ => index,
    }
}

pub fn generate_r(kind: ScheduleKind, horizon: usize, rng: &mut RandomStream) -> Vec<f64> {
    match kind {
        ScheduleKind::Constant { r } => vec![r; horizon],
        ScheduleKind::Uniform => (0..horizon).map(|_| rng.random_range(R_MIN..=R_MAX)).collect(),
        ScheduleKind::RandomWalk { start } => {
            let mut index = nearest_grid_index(start);
            (0..horizon)
                .map(|_| {
                    let r = grid_value(index);
                    index = walk_step(index, rng);
                    r
                })
                .collect()
        }
    }
}

pub fn generate_cost_schedule(spec: &CostSpec, d: usize, k: usize, horizon: usize, rng: &mut RandomStream) -> Result<CostSchedule> {
    let base = CostBase::new(spec, d, k)?;
    let r = generate_r(spec.schedule, horizon, rng);
    let costs: Vec<CostPair> = r.iter().map(|&ri| base.pair(ri)).collect();
    let slack = 1e-12 * base.trace_bound.max(1.0);
    if let Some(t) = costs
        .iter()
        .position(|c| c.q.trace() > base.trace_bound + slack || c.r.trace() > base.trace_bound + slack)
    {
        return Err(LqcError::Contract(format!("round {} exceeds the trace bound", t + 1)));
    }
    Ok(CostSchedule {
        costs,
        r,
        trace_bound: base.trace_bound,
    })
}

/// Grid index nearest to `r`, ties going to the larger value.
pub fn nearest_grid_index(r: f64) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for i in 0..GRID_SIZE {
        let dist = (r - grid_value(i)).abs();
        if dist <= best_dist + 1e-12 {
            best = i;
            best_dist = dist.min(best_dist);
        }
    }
    best
}
