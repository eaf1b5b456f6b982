use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use lqc::harness::config::{matrix_from_rows, matrix_to_rows, Rows};
use lqc::harness::{self, run::prepare, ExperimentConfig};
use lqc::lds::{self, GaussianPolicy};
use lqc::sdp::{self, OracleOptions};
use lqc::{acceptance, linalg, LqcError};

#[derive(Parser)]
#[command(name = "lqc", version, about = "Online LQ control against adversarial quadratic costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trace.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the replicate count in the config.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Print the best fixed gain for the config's cost schedule.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Project one joint covariance onto the feasible set.
    Project {
        #[arg(long)]
        config: PathBuf,
        /// JSON array of rows.
        #[arg(long)]
        sigma: PathBuf,
    },
    /// Run the acceptance experiments and print the pass/fail table.
    Bench,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            replicates,
        } => run(&config, &out, seed, replicates),
        Command::Oracle { config } => oracle(&config),
        Command::Project { config, sigma } => project(&config, &sigma),
        Command::Bench => Ok(bench()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_NUMERICAL })
        }
    }
}

fn load(path: &Path) -> lqc::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(config: &Path, out: &Path, seed: Option<u64>, replicates: Option<usize>) -> lqc::Result<ExitCode> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    let traces = harness::run_replicates(&cfg)?;
    harness::emit_all(&traces, &cfg, out)?;
    let mut failed = false;
    for t in &traces {
        let s = &t.summary;
        match &s.error {
            Some(e) => {
                failed = true;
                eprintln!("replicate {}: failed after {} rounds: {e}", s.replicate, s.rounds_completed);
            }
            None => println!(
                "replicate {}: regret {:.6} ({:.6} per round), {} switches",
                s.replicate, s.regret, s.regret_per_round, s.switch_count
            ),
        }
    }
    Ok(if failed { ExitCode::from(EXIT_NUMERICAL) } else { ExitCode::SUCCESS })
}

fn oracle(config: &Path) -> lqc::Result<ExitCode> {
    let cfg = load(config)?;
    let setup = prepare(&cfg, cfg.seed)?;
    let mean = setup.schedule.mean()?;
    let sol = sdp::solve_oracle(&setup.prob, &mean, &OracleOptions::default())?;
    let k = setup.sys.control_dim();
    let policy = GaussianPolicy::new(sol.gain.clone(), DMatrix::zeros(k, k))?;
    let cost = lds::steady_state_cost(&setup.sys, &policy, &mean)?;
    println!("gain: {}", serde_json::to_string(&matrix_to_rows(&sol.gain))?);
    println!("steady_state_cost: {cost}");
    println!("relaxation_objective: {}", sol.objective);
    println!("trace: {} (budget {})", sol.sigma.trace(), setup.nu);
    println!("binding: {}", sol.trace_binding);
    println!("iterations: {}", sol.iterations);
    Ok(ExitCode::SUCCESS)
}

fn project(config: &Path, sigma: &Path) -> lqc::Result<ExitCode> {
    let cfg = load(config)?;
    let text = std::fs::read_to_string(sigma)
        .map_err(|e| LqcError::Config(format!("cannot read {}: {e}", sigma.display())))?;
    let rows: Rows = serde_json::from_str(&text)?;
    let input = matrix_from_rows("sigma", &rows)?;
    let sys = cfg.build_system()?;
    let nu = harness::run::resolve_budget(&cfg.budget, &sys);
    let prob = sdp::SdpProblem::with_tolerances(sys, nu, cfg.sdp)?;
    if !input.is_square() || input.nrows() != prob.dim() {
        return Err(LqcError::Config(format!(
            "sigma must be {0}x{0}, got {1}x{2}",
            prob.dim(),
            input.nrows(),
            input.ncols()
        )));
    }
    let input = linalg::symmetrize(&input);
    let (out, stats) = prob.project_with_stats(&input)?;
    let report = prob.is_feasible(out.matrix());
    println!("sigma: {}", serde_json::to_string(&matrix_to_rows(out.matrix()))?);
    println!("distance: {:e}", (out.matrix() - &input).norm());
    println!("equality_residual: {:e}", report.equality_residual);
    println!("min_eigenvalue: {:e}", report.min_eigenvalue);
    println!("trace_excess: {:e}", report.trace_excess);
    println!("feasible: {}", report.feasible);
    println!("iterations: {}", stats.iterations);
    Ok(ExitCode::SUCCESS)
}

fn bench() -> ExitCode {
    let results = acceptance::run_all(|r| println!("{r}"));
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
