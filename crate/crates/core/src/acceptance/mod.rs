//! The acceptance experiments, shared by the `acceptance` test target and
//! `lqc bench`.

mod criteria;
pub mod reference;

use std::fmt;
use std::time::Instant;

pub use criteria::ALL;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.seconds,
            self.detail
        )
    }
}

/// Outcome of one check: whether it passed and the measured numbers.
pub(crate) struct Outcome {
    pub passed: bool,
    pub detail: String,
}

pub struct Criterion {
    pub id: usize,
    pub title: &'static str,
    pub(crate) check: fn() -> Result<Outcome>,
}

impl Criterion {
    pub fn run(&self) -> CriterionResult {
        let start = Instant::now();
        let (passed, detail) = match (self.check)() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        CriterionResult {
            id: self.id,
            title: self.title,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

/// Runs every criterion in order, reporting each result as it completes.
pub fn run_all(mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    ALL.iter()
        .map(|c| {
            let r = c.run();
            report(&r);
            r
        })
        .collect()
}
