//! Runs every acceptance criterion and prints one line per criterion.

use std::process::ExitCode;

fn main() -> ExitCode {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in lqc::acceptance::ALL.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let result = c.run();
        println!("{result}");
        if !result.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    }
}
