use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const PRESET: &str = include_str!("../../core/presets/batch-reactor.toml");

fn qdos(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdos"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn qdos")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn analyze_preset_reports_simple_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdos(&["analyze"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("frontier=nu_d < 0.106"), "{s}");
    assert!(s.contains("feasible=true"));
    let written = fs::read_to_string(dir.path().join("analyze.txt")).unwrap();
    assert!(written.starts_with("config_sha256="));
}

#[test]
fn analyze_full_scheme_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdos(&["analyze", "--scheme", "estimate-full"], dir.path());
    let s = stdout(&o);
    assert!(s.contains("frontier=nu_d < 0.229"), "{s}");
    assert!(s.contains("- 2.02"), "{s}");
}

#[test]
fn analyze_infeasible_budget_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &PRESET.replace("nu_d = 0.10 }", "nu_d = 0.12 }"),
    );
    let o = qdos(&["analyze", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("feasible=false"));
}

#[test]
fn schur_stable_plant_warns() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
name = "stable"
x0 = [1.0]
horizon = 50

[plant]
kind = "discrete"
a = [[0.5]]
b = [[1.0]]
c = [[1.0]]

[gains]
kind = "explicit"
k = [[0.1]]
l = [[0.2]]

[scheme]
variant = "estimate-simple"
levels = 11

[attack]
kind = "none"

[initial]
kind = "known"
e0 = 2.0
"#;
    let cfg = write_config(dir.path(), text);
    let o = qdos(&["analyze", "--config", &cfg], dir.path());
    assert!(
        stderr(&o).contains("trivially stabilizable"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn bad_config_exits_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &PRESET.replace(
            "levels = 71\nparity = \"any\"",
            "levels = 70\nparity = \"odd\"",
        ),
    );
    let o = qdos(&["analyze", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scheme.levels"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "name = 3");
    assert_eq!(
        qdos(&["simulate", "--config", &cfg], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unknown_preset_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        qdos(&["analyze", "--preset", "nope"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn simulate_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = qdos(&["simulate", "--preset", "fig8", "--seed", "7"], d.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["fig8.csv", "fig8.report.txt"] {
        let fa = fs::read(a.path().join(f)).unwrap();
        let fb = fs::read(b.path().join(f)).unwrap();
        assert!(fa == fb, "{f} differs between runs");
    }
    let report = fs::read_to_string(a.path().join("fig8.report.txt")).unwrap();
    assert!(report.contains("classification=Unstable"), "{report}");
}

#[test]
fn simulate_fig5_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdos(&["simulate", "--preset", "fig5"], dir.path());
    assert!(
        stdout(&o).contains("classification=Stable"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn zero_initial_state_gives_zero_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let text = PRESET
        .replace("x0 = [0.0, 0.5, 0.5, 1.0]", "x0 = [0.0, 0.0, 0.0, 0.0]")
        .replace("horizon = 2000", "horizon = 100");
    let cfg = write_config(dir.path(), &text);
    let o = qdos(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("batch-reactor.csv")).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mut rows = 0;
    for line in lines {
        for (name, cell) in header.iter().zip(line.split(',')) {
            let zero_col = name.starts_with('x') || name.starts_with('u') || name.starts_with('q');
            if zero_col && !cell.is_empty() {
                assert_eq!(cell.parse::<f64>().unwrap(), 0.0, "{name} in {line}");
            }
        }
        rows += 1;
    }
    assert!(rows >= 100);
}

#[test]
fn empty_sweep_grid_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let text = PRESET.replace(
        "nu_d = { start = 0.0, stop = 0.16, step = 0.005 }",
        "nu_d = { start = 0.2, stop = 0.1, step = 0.005 }",
    );
    let cfg = write_config(dir.path(), &text);
    let o = qdos(&["sweep", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(
        dir.path()
            .join("batch-reactor-estimate-simple-frontier.csv"),
    )
    .unwrap();
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data, vec!["nu_d,nu_f,min_N,feasible"]);
}

#[test]
fn reproduce_passes_all_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdos(&["reproduce"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(!summary.contains("FAIL"), "{summary}");
    for f in [
        "fig2-estimate-simple.csv",
        "fig3-estimate-full.csv",
        "fig4-origin-simple.csv",
        "fig5.csv",
        "fig8.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
