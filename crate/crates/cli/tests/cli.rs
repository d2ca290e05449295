use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bikeshare_cli::output::read_body;
use tempfile::TempDir;

const COMMON: &str = r#"
[model]
capacity = 20
initial_bikes = 10
waiting_room = 5
alpha = 0.5
beta = 0.5

[environment]
generator = [[-1.0, 1.0], [1.0, -1.0]]
lambda = [35.0, 50.0]
mu = [30.0, 20.0]
"#;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bikeshare"))
        .args(args)
        .output()
        .unwrap()
}

fn run_in(dir: &Path, cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cli(&args)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let t = read_body(path).unwrap();
    let i = t.column(name).unwrap_or_else(|| panic!("no column {name}"));
    t.rows.iter().map(|r| r[i].clone()).collect()
}

#[test]
fn seven_segment_day() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), "env-build", &configs().join("day.toml"), &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let theta: Vec<f64> = column(&tmp.path().join("environment.csv"), "theta")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let expected = [7.0, 2.0, 3.0, 2.5, 3.5, 2.0, 4.0].map(|d| d / 24.0);
    assert_eq!(theta.len(), 7);
    for (a, b) in theta.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    // the emitted spec is itself a usable [environment] section
    let spec = std::fs::read_to_string(tmp.path().join("environment.toml")).unwrap();
    let model = COMMON.split("[environment]").next().unwrap();
    let cfg = write_config(&tmp, "reuse.toml", &format!("{model}\n{spec}"));
    let out = run_in(&tmp.path().join("reuse"), "fixed-point", &cfg, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn rate_overrides_pass_through() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "c.toml",
        r#"
[environment]
lambda = [1.25, 2.5]
mu = [3.75, 0.125]
[environment.day]
segments = [[[0.0, 12.0]], [[12.0, 24.0]]]
rent = { kind = "constant", rate = 9.0 }
return = { kind = "constant", rate = 9.0 }
"#,
    );
    let out = run_in(tmp.path(), "env-build", &cfg, &[]);
    assert!(out.status.success());
    let csv = tmp.path().join("environment.csv");
    assert_eq!(column(&csv, "lambda"), vec!["1.25", "2.5"]);
    assert_eq!(column(&csv, "mu"), vec!["3.75", "0.125"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("lambda = [1.25, 2.5]"));
    assert!(text.starts_with(&format!("# bikeshare {}", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn single_phase_paper_literal_is_rejected_downstream() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
[model]
capacity = 6
initial_bikes = 3
waiting_room = 2
alpha = 0.5
beta = 0.5
[environment.day]
segments = [[[0.0, 24.0]]]
rent = { kind = "constant", rate = 4.0 }
return = { kind = "constant", rate = 5.0 }
"#;
    let cfg = write_config(&tmp, "c.toml", text);
    assert!(run_in(tmp.path(), "env-build", &cfg, &[]).status.success());
    assert!(run_in(tmp.path(), "fixed-point", &cfg, &[])
        .status
        .success());
    let out = run_in(
        tmp.path(),
        "fixed-point",
        &cfg,
        &["--mode", "paper-literal"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn fixed_point_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", COMMON);
    let mut first = Vec::new();
    for round in 0..2 {
        let out = run_in(tmp.path(), "fixed-point", &cfg, &["--plots", "on"]);
        assert!(out.status.success());
        let files: Vec<Vec<u8>> = ["report.csv", "pi.csv", "pi.svg"]
            .iter()
            .map(|f| std::fs::read(tmp.path().join(f)).unwrap())
            .collect();
        if round == 0 {
            first = files;
        } else {
            assert_eq!(first, files);
        }
    }
    assert_eq!(column(&tmp.path().join("report.csv"), "status"), vec!["ok"]);
    let residual: f64 = column(&tmp.path().join("report.csv"), "residual")[0]
        .parse()
        .unwrap();
    assert!(residual <= 1e-10);
}

#[test]
fn tiny_iteration_budget_fails_with_diagnostics() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "c.toml",
        &format!("{COMMON}\n[solver]\nmax_iter = 3\nnewton_fallback = false\n"),
    );
    let out = run_in(tmp.path(), "fixed-point", &cfg, &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("did not converge") && err.contains("residual"),
        "{err}"
    );
    let report = tmp.path().join("report.csv");
    assert_eq!(column(&report, "status"), vec!["not-converged"]);
    assert_eq!(column(&report, "iterations"), vec!["3"]);
}

#[test]
fn one_point_sweep_matches_fixed_point() {
    let tmp = TempDir::new().unwrap();
    let single = write_config(&tmp, "single.toml", COMMON);
    let sweep = write_config(
        &tmp,
        "sweep.toml",
        &format!("{COMMON}\n[sweep]\n[[sweep.axis]]\nparam = \"lambda1\"\nvalues = [35.0]\n"),
    );
    assert!(run_in(&tmp.path().join("a"), "fixed-point", &single, &[])
        .status
        .success());
    assert!(run_in(&tmp.path().join("b"), "sweep", &sweep, &[])
        .status
        .success());
    for col in [
        "EQ",
        "EN1",
        "EN2",
        "EN",
        "p_s",
        "p_w",
        "iterations",
        "residual",
    ] {
        assert_eq!(
            column(&tmp.path().join("a/report.csv"), col),
            column(&tmp.path().join("b/sweep.csv"), col),
            "{col}"
        );
    }
}

#[test]
fn sweep_rows_cover_the_grid_and_mark_failures() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        "{COMMON}\n[sweep]\nefficiency = true\n\
         [[sweep.axis]]\nparam = \"capacity\"\nvalues = [8.0, 20.0, 30.0]\n\
         [[sweep.axis]]\nparam = \"waiting_room\"\nvalues = [0.0, 1.0]\n\
         [[sweep.plot]]\nfile = \"u.svg\"\nx = \"waiting_room\"\ny = \"upsilon\"\nseries = \"capacity\"\n"
    );
    let cfg = write_config(&tmp, "c.toml", &text);
    let out = run_in(tmp.path(), "sweep", &cfg, &[]);
    // capacity 8 is below the ten initial bikes
    assert_eq!(out.status.code(), Some(3));
    let csv = tmp.path().join("sweep.csv");
    let status = column(&csv, "status");
    assert_eq!(status, vec!["error", "error", "ok", "ok", "ok", "ok"]);
    assert!(column(&csv, "error")[0].contains("invalid model parameters"));
    let upsilon = column(&csv, "upsilon");
    assert_eq!(upsilon[2], "NA");
    let u: f64 = upsilon[3].parse().unwrap();
    assert!(u > 0.0 && u < 1.0);
    assert!(tmp.path().join("u.svg").exists());
}

#[test]
fn plots_can_be_switched_off() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "c.toml", COMMON);
    assert!(run_in(tmp.path(), "fixed-point", &cfg, &["--plots", "off"])
        .status
        .success());
    assert!(!tmp.path().join("pi.svg").exists());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(cli(&["fixed-point"]).status.code(), Some(2));
    assert_eq!(cli(&["fixed-point", "--bogus"]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
    let bad = write_config(&tmp, "bad.toml", "[model]\ncapacity = \"many\"\n");
    assert_eq!(
        run_in(tmp.path(), "fixed-point", &bad, &[]).status.code(),
        Some(1)
    );
    let missing = tmp.path().join("nope.toml");
    assert_eq!(
        run_in(tmp.path(), "fixed-point", &missing, &[])
            .status
            .code(),
        Some(1)
    );
    // a sweep document is not a single-run document
    let sweep = configs().join("fig9-left.toml");
    assert_eq!(
        run_in(tmp.path(), "fixed-point", &sweep, &[]).status.code(),
        Some(1)
    );
}

#[test]
fn flags_override_config_in_echoed_header() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "c.toml",
        &format!("{COMMON}\n[simulation]\nseed = 5\nstations = 20\nhorizon = 2.0\n"),
    );
    let out = run_in(tmp.path(), "simulate", &cfg, &["--seed", "77"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert!(text.contains("#   seed = 77"), "{text}");
    assert_eq!(column(&tmp.path().join("summary.csv"), "seed"), vec!["77"]);
    // the two-phase switching generator makes paper-literal assembly reducible
    let out = run_in(
        tmp.path(),
        "fixed-point",
        &cfg,
        &["--mode", "paper-literal"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("simulate.toml");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run_in(&a, "simulate", &cfg, &[]).status.success());
    assert!(run_in(&b, "simulate", &cfg, &[]).status.success());
    for f in ["summary.csv", "time_average.csv", "trajectory.csv"] {
        let (x, y) = (
            read_body(&a.join(f)).unwrap(),
            read_body(&b.join(f)).unwrap(),
        );
        assert_eq!(x.rows, y.rows, "{f}");
    }
    let chaos = column(&a.join("summary.csv"), "chaos_tv");
    assert!(chaos.iter().all(|c| c.parse::<f64>().is_ok()));
}

#[test]
fn compare_reports_both_assembly_modes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "c.toml",
        &format!("{COMMON}\n[simulation]\nstations = 1000\nhorizon = 20.0\nseed = 3\nmode = \"paper-rates\"\n"),
    );
    let out = run_in(tmp.path(), "compare", &cfg, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let d = read_body(&tmp.path().join("distances.csv")).unwrap();
    assert_eq!(d.rows.len(), 6);
    let literal = "fixed_point_paper_literal";
    for r in d.rows.iter().filter(|r| r[0] != literal && r[1] != literal) {
        let sup: f64 = r[2].parse().unwrap();
        assert!(sup < 0.05, "{r:?}");
    }
    let header = read_body(&tmp.path().join("compare.csv")).unwrap().header;
    assert!(header.contains(&"fixed_point_paper_literal".to_string()));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("paper-literal assembly"), "{stdout}");
}

#[test]
fn integrate_writes_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "c.toml",
        &format!("{COMMON}\n[integrator]\nt_end = 3.0\nsample_every = 0.5\n"),
    );
    let out = run_in(tmp.path(), "integrate", &cfg, &[]);
    assert!(out.status.success());
    let t = column(&tmp.path().join("trajectory.csv"), "t");
    assert_eq!(t, vec!["0", "0.5", "1", "1.5", "2", "2.5", "3"]);
    let mass: Vec<f64> = column(&tmp.path().join("trajectory.csv"), "mass_error")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert!(mass.iter().all(|m| m.abs() <= 1e-9));
    let full = read_body(&tmp.path().join("trajectory_full.csv")).unwrap();
    assert_eq!(full.header.len(), 1 + 62);
}
