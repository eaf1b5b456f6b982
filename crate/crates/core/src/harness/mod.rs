//! Experiment engine: configs, cost schedules, the interaction loop with a
//! common-random-numbers comparator, and result files.

pub mod config;
pub mod emit;
pub mod run;
pub mod schedule;

pub use config::{BudgetSpec, ControllerSpec, CostSpec, ExperimentConfig, ScheduleKind, SystemSpec};
pub use emit::{emit, emit_all, read_trace};
pub use run::{best_fixed_policy, recent_strategy, run, run_replicate, run_replicates, RegretSummary, RegretTrace, RoundRecord};
pub use schedule::{generate_cost_schedule, CostSchedule};
