use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kenergy(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kenergy"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const SMALL: &str = "n_x = 257\nn_s = 1025\nsamples = 16\npairs = 3\nchen_pairs = 3\n";

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p.display().to_string()
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    for out in ["a", "b"] {
        let o = kenergy(
            &["convexity", "--config", &cfg, "--seed", "9", "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["convexity.csv", "convexity_summary.csv", "summary.txt"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let o = kenergy(
        &["convexity", "--config", &cfg, "--seed", "10", "--out", "c"],
        dir.path(),
    );
    assert!(o.status.success());
    assert_ne!(
        fs::read(dir.path().join("a/convexity.csv")).unwrap(),
        fs::read(dir.path().join("c/convexity.csv")).unwrap()
    );
}

#[test]
fn malformed_potential_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "x,f\n0,0\n0.5,oops\n1,0\n").unwrap();
    let o = kenergy(
        &["report", "--potential", "bad.csv", "--out", "o"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3"), "{err}");
}

#[test]
fn report_reads_a_potential() {
    let dir = tempfile::tempdir().unwrap();
    let u = kenergy_core::SymplecticPotential::round(129).unwrap();
    fs::write(dir.path().join("u.csv"), u.to_csv_string()).unwrap();
    let o = kenergy(
        &["report", "--potential", "u.csv", "--out", "o"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("o/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("E,E_ric,entropy,mabuchi,calabi,F"));
    let vals: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(vals[3].abs() < 1e-10 && vals[4].abs() < 1e-10);
}

#[test]
fn config_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s_list =\n");
    let o = kenergy(&["uniqueness", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("s_list"));

    let cfg = write_config(dir.path(), "colour = blue\n");
    let o = kenergy(&["orbit", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key 'colour'"));

    let o = kenergy(&["nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn violations_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "hrma_tol = 1e-30\n");
    let o = kenergy(&["geodesic", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let summary = fs::read_to_string(dir.path().join("o/summary.txt")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("FAIL geodesic:")));
}

#[test]
fn default_run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = kenergy(&["all", "--out", "o"], dir.path());
    let summary = fs::read_to_string(dir.path().join("o/summary.txt")).unwrap();
    assert!(o.status.success(), "{summary}");
    for f in [
        "geodesic.csv",
        "geodesic.svg",
        "convexity.csv",
        "chen.csv",
        "bergman_quadratic.csv",
        "bergman_psh.csv",
        "bergman_tk.csv",
        "lichnerowicz.csv",
        "orbit.csv",
        "orbit.svg",
        "uniqueness.csv",
        "uniqueness_summary.csv",
        "report.csv",
    ] {
        assert!(dir.path().join("o").join(f).exists(), "missing {f}");
    }
    let headers = [
        ("geodesic.csv", "t,mabuchi,E,entropy,speed,hrma_sup,ode_l1"),
        ("orbit.csv", "t,mabuchi,F,E,hrma_sup"),
        ("lichnerowicz.csv", "mode_m,eigenvalue_rank,eigenvalue"),
        ("bergman_quadratic.csv", "k,z,B,limit_density,gap"),
    ];
    for (f, h) in headers {
        let text = fs::read_to_string(dir.path().join("o").join(f)).unwrap();
        assert_eq!(text.lines().next(), Some(h), "{f}");
    }
    assert!(summary
        .lines()
        .last()
        .unwrap()
        .contains("assertions passed"));
    assert!(!summary.contains("FAIL"));
}
