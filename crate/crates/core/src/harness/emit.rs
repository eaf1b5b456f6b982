use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{RegretSummary, RegretTrace, RoundRecord};
use crate::error::Result;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Serialize)]
struct SummaryDocument<'a> {
    #[serde(flatten)]
    summary: &'a RegretSummary,
    config: &'a ExperimentConfig,
}

/// Writes `trace.csv` and `summary.json` into `dir`, creating it if needed.
pub fn emit(trace: &RegretTrace, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trace(&trace.records, &dir.join(TRACE_FILE))?;
    let doc = SummaryDocument {
        summary: &trace.summary,
        config,
    };
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

pub fn write_trace(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["t", "cost", "comparator_cost", "cum_regret", "switched", "reset"])?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn replicate_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("replicate-{index:03}"))
}

#[derive(Serialize)]
struct Aggregate<'a> {
    replicates: usize,
    median_regret: f64,
    median_regret_per_round: f64,
    failed: usize,
    summaries: Vec<&'a RegretSummary>,
}

/// One trace: files go to `out`. Several: `out/replicate-NNN/` each, plus an
/// aggregate `out/summary.json`.
pub fn emit_all(traces: &[RegretTrace], config: &ExperimentConfig, out: &Path) -> Result<()> {
    if let [single] = traces {
        return emit(single, config, out);
    }
    for (i, t) in traces.iter().enumerate() {
        emit(t, config, &replicate_dir(out, i))?;
    }
    let mut regrets: Vec<f64> = traces.iter().map(|t| t.summary.regret).collect();
    let mut per_round: Vec<f64> = traces.iter().map(|t| t.summary.regret_per_round).collect();
    let agg = Aggregate {
        replicates: traces.len(),
        median_regret: median(&mut regrets),
        median_regret_per_round: median(&mut per_round),
        failed: traces.iter().filter(|t| t.summary.error.is_some()).count(),
        summaries: traces.iter().map(|t| &t.summary).collect(),
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&agg)? + "\n")?;
    Ok(())
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trace(&[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "t,cost,comparator_cost,cum_regret,switched,reset\n");
        assert!(read_trace(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let records = vec![
            RoundRecord {
                t: 1,
                cost: 0.1 + 0.2,
                comparator_cost: 1.0 / 3.0,
                cum_regret: 0.1 + 0.2 - 1.0 / 3.0,
                switched: true,
                reset: false,
            },
            RoundRecord {
                t: 2,
                cost: 1e-300,
                comparator_cost: 12345.678,
                cum_regret: -12345.0,
                switched: false,
                reset: true,
            },
        ];
        write_trace(&records, &path).unwrap();
        assert_eq!(read_trace(&path).unwrap(), records);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
