use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cordes-dg"))
}

#[test]
fn lists_registry_problems() {
    let out = bin().arg("--list-problems").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["poisson_singleton", "two_control_switch", "rotated_anisotropic"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn short_adaptive_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--problem", "two_control_switch", "--max-iters", "3", "--vtk", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iter,ndofs,h_min,h_max,eta_total,eta_residual,eta_gradjump,eta_valjump,err_norm_k,newton_iters,marked"
    );
    assert_eq!(lines.count(), 3);
    for f in ["trace.json", "summary.json", "mesh_0.txt", "mesh_2.vtk"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["problem"], "two_control_switch");
    assert_eq!(summary["levels"].as_array().unwrap().len(), 3);
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    fs::write(
        &cfg,
        "[problem]\nname = \"poisson_singleton\"\n\n[space]\np = 3\n\n[adapt]\nuniform = true\nmax_iters = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["--p", "2", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    // 8 elements with 6 DG coefficients each, then two bisection rounds
    assert_eq!(summary["levels"][0]["ndofs"], 48);
    assert_eq!(summary["levels"][1]["ndofs"], 192);
}

#[test]
fn custom_problem_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("custom.toml");
    fs::write(
        &cfg,
        "[problem.custom]\nfamily = \"constant_matrices\"\nname = \"diag\"\nmatrices = [[1.0, 0.0, 0.5]]\nswitching = false\n\n[adapt]\nmax_iters = 2\n",
    )
    .unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_input_exits_with_usage_code() {
    let out = bin().args(["--problem", "no_such_problem"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["--mark", "max:1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mark"));
}
