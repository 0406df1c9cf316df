//! End-to-end checks of the command-line interface: generate, solve,
//! oracle, eval, exit codes, and trace determinism.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bethe-admm"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bethe-admm-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Trace rows minus the wall-clock column.
fn stripped_trace(path: &PathBuf) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let mut fields: Vec<&str> = line.split(',').collect();
            if fields.len() == 8 {
                fields.remove(1);
            }
            fields.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn generate_solve_oracle_eval_pipeline() {
    let dir = workdir("pipeline");
    let model = dir.join("grid.pmrf");
    let trace = dir.join("trace.csv");
    let labels = dir.join("out.labels");

    let gen = bin()
        .args(["gen", "potts3d", "--m", "2", "--n", "2", "--t", "2", "--k", "2"])
        .args(["--a", "1.0", "--seed", "3", "-o"])
        .arg(&model)
        .output()
        .unwrap();
    assert!(gen.status.success());

    let output = bin()
        .arg("solve")
        .arg(&model)
        .args(["--decomp", "edge", "--max-iters", "4000", "--tol", "1e-5", "--trace-every", "10"])
        .arg("--trace")
        .arg(&trace)
        .arg("--out")
        .arg(&labels)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "solve failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("status: converged"), "{stdout}");

    let oracle = bin().arg("oracle").arg(&model).output().unwrap();
    assert!(oracle.status.success());
    let oracle_out = String::from_utf8_lossy(&oracle.stdout);
    let oracle_value: f64 = oracle_out
        .lines()
        .find_map(|l| l.strip_prefix("value: "))
        .unwrap()
        .parse()
        .unwrap();

    let eval = bin().arg("eval").arg(&model).arg(&labels).output().unwrap();
    assert!(eval.status.success());
    let eval_out = String::from_utf8_lossy(&eval.stdout);
    let decoded_value: f64 = eval_out
        .lines()
        .find_map(|l| l.strip_prefix("score: "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(decoded_value, oracle_value);

    let header = std::fs::read_to_string(&trace).unwrap();
    assert!(header.starts_with(
        "iter,seconds,lp_obj,decoded_value,max_violation,primal_residual,dual_bound,ergodic_consensus\n"
    ));

    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn solve_reruns_reproduce_trace() {
    let dir = workdir("rerun");
    let model = dir.join("cross.pmrf");
    let plan = dir.join("cross.plan");
    let gen = bin()
        .args(["gen", "treecross", "--trees", "3", "--size", "7", "--cross", "2"])
        .args(["--k", "2", "--a", "1.0", "--seed", "5", "-o"])
        .arg(&model)
        .arg("--plan")
        .arg(&plan)
        .output()
        .unwrap();
    assert!(gen.status.success());

    let mut traces = Vec::new();
    for i in 0..2 {
        let trace = dir.join(format!("trace{i}.csv"));
        let output = bin()
            .arg("solve")
            .arg(&model)
            .arg("--decomp")
            .arg(&plan)
            .args(["--max-iters", "50", "--tol", "0", "--trace-every", "5"])
            .arg("--trace")
            .arg(&trace)
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(2), "tol 0 never converges");
        traces.push(stripped_trace(&trace));
    }
    assert_eq!(traces[0], traces[1]);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn error_exit_code_and_message() {
    let dir = workdir("errors");
    let missing = dir.join("missing.pmrf");
    let output = bin().arg("oracle").arg(&missing).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).starts_with("error:"));

    let bad = dir.join("bad.pmrf");
    std::fs::write(&bad, "PMRF\n2\n2 2\n1\n0 1\n0 0\n0 0\n1 2\n").unwrap();
    let output = bin().arg("oracle").arg(&bad).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("expected 4 values, got 2"), "{err}");
    std::fs::remove_dir_all(dir).ok();
}
