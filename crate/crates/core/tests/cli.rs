//! End-to-end checks of the command-line interface: subcommands run,
//! outputs land on disk with the promised formats, exit codes reflect
//! hard assertions.

use std::process::Command;

fn cutflux() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cutflux"))
}

fn temp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("cutflux_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn adapt_writes_trace_and_artifacts() {
    let dir = temp_dir("adapt");
    let out = cutflux()
        .args([
            "adapt",
            "--mesh-n0",
            "8",
            "--max-dofs",
            "700",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .expect("run cutflux adapt");
    assert!(
        out.status.success(),
        "adapt failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iter,N,eta,eta_gamma,eps,error,effectivity,elements,cut_elements,seconds"
    );
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    // Per-iteration exports exist for every recorded row.
    for i in 0..rows.len() {
        for stem in ["mesh", "solution", "flux"] {
            let path = dir.join(format!("{stem}_{i}.vtk"));
            assert!(path.exists(), "{} missing", path.display());
        }
        assert!(dir.join(format!("estimators_{i}.csv")).exists());
    }
    assert!(dir.join("summary.json").exists());
    let summary = std::fs::read_to_string(dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"final_dofs\""));
}

#[test]
fn adapt_reads_config_file_with_overrides() {
    let dir = temp_dir("adapt_cfg");
    let cfg_path = dir.join("bench.cfg");
    std::fs::write(
        &cfg_path,
        "level_set = vertical_line:0.3\nmesh_n0 = 8\nmax_dofs = 5000\n",
    )
    .unwrap();
    let out = cutflux()
        .args([
            "adapt",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    // The piecewise-linear solution is exact: a single iteration.
    let trace = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2, "trace: {trace}");
}

#[test]
fn solve_exports_fields() {
    let dir = temp_dir("solve");
    let out = cutflux()
        .args([
            "solve",
            "--mesh-n0",
            "8",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "solve failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in [
        "mesh.vtk",
        "solution.vtk",
        "flux.vtk",
        "estimators.csv",
        "topology.csv",
        "multipliers.csv",
    ] {
        assert!(dir.join(name).exists(), "{name} missing");
    }
    let solution = std::fs::read_to_string(dir.join("solution.vtk")).unwrap();
    assert!(solution.contains("SCALARS u1 double 1"));
    assert!(solution.contains("SCALARS u2 double 1"));
    assert!(solution.contains("SCALARS class int 1"));
    let flux = std::fs::read_to_string(dir.join("flux.vtk")).unwrap();
    assert!(flux.contains("VECTORS sigma double"));
    assert!(flux.contains("SCALARS div_residual double 1"));
}

#[test]
fn verify_suite_passes() {
    let out = cutflux().arg("verify").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "verify failed:\n{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = temp_dir("bad_cfg");
    let cfg_path = dir.join("bad.cfg");
    std::fs::write(&cfg_path, "theta_mark = 7\n").unwrap();
    let out = cutflux()
        .args(["adapt", "--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta_mark"));
}

#[test]
fn deterministic_traces_across_runs() {
    // Two identical single-threaded runs produce identical traces up to
    // the wall-time column.
    let strip_seconds = |text: &str| -> String {
        text.lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut traces = Vec::new();
    for run in 0..2 {
        let dir = temp_dir(&format!("det_{run}"));
        let out = cutflux()
            .args([
                "adapt",
                "--mesh-n0",
                "8",
                "--max-dofs",
                "600",
                "--out",
                dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        traces.push(strip_seconds(
            &std::fs::read_to_string(dir.join("trace.csv")).unwrap(),
        ));
    }
    assert_eq!(traces[0], traces[1]);
}
