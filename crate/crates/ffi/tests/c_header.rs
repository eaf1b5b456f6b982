//! Builds a small C program against the generated header and the static
//! library, then runs it. Skipped when no C compiler is on the path.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "lqc.h"

int main(void) {
    double a = 0.9, b = 1.0, w = 1.0, q = 1.0, r = 1.0, k = 0.0;
    LqcSystem *sys = NULL;
    LqcProblem *prob = NULL;
    if (lqc_system_new(1, 1, &a, &b, &w, &sys) != LQC_STATUS_OK) return 1;
    if (lqc_problem_new(sys, 1.2, &prob) != LQC_STATUS_INFEASIBLE) return 2;
    if (lqc_last_error()[0] == '\0') return 3;
    if (lqc_problem_new(sys, 100.0, &prob) != LQC_STATUS_OK) return 4;
    if (lqc_oracle(prob, &q, &r, 1e-9, &k) != LQC_STATUS_OK) return 5;
    printf("%.9f\n", k);
    lqc_problem_free(prob);
    lqc_system_free(sys);
    return fabs(k + 0.537666558) < 1e-6 ? 0 : 6;
}
"#;

fn compiler() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(str::to_owned)
}

/// The static library is built into the `deps` directory holding this test
/// or into its parent.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    let found = [deps, deps.parent()?].into_iter().map(|d| d.join("liblqc_ffi.a")).find(|p| p.exists());
    found
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("lqc.h").exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();

    let syntax = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(syntax.status.success(), "{}", String::from_utf8_lossy(&syntax.stderr));

    let Some(lib) = static_lib() else {
        eprintln!("static library not found next to the test binary; skipping link step");
        return;
    };
    let bin = dir.path().join("main");
    let link = Command::new(&cc)
        .args(["-std=c99", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(link.status.success(), "{}", String::from_utf8_lossy(&link.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stdout));
}
