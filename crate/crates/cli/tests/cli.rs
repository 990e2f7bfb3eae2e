use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use circsim_core::io::read_sidebands_csv;
use circsim_core::io::touchstone::read_touchstone;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_circsim"))
}

fn reference() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../netlists/circulator.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_at_every_level() {
    for args in [&["--help"][..], &["sim", "--help"], &["match", "--help"], &["validate", "--help"], &["metrics", "--help"]] {
        let o = run(args);
        assert_eq!(code(&o), 0, "{args:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["match", s(&reference())])), 1);
}

#[test]
fn unmodulated_sweep_is_reciprocal_and_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("off");
    let o = run(&["sim", s(&reference()), "--no-modulation", "--no-timestamp", "--out", s(&prefix)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = read_touchstone(&dir.path().join("off.s3p")).unwrap();
    assert_eq!(t.freqs.len(), 201);
    for n in 0..t.freqs.len() {
        assert!((t.s(n, 2, 1) - t.s(n, 3, 1)).norm() < 1e-10);
        for i in 1..=3 {
            for j in 1..=3 {
                assert!((t.s(n, i, j) - t.s(n, j, i)).norm() < 1e-10);
            }
        }
    }
    let csv = read_sidebands_csv(&dir.path().join("off.csv"), 0.0).unwrap();
    for p in &csv.points {
        let k = p.order as i64;
        for q in (-k..=k).filter(|&q| q != 0) {
            for i in 1..=3 {
                for j in 1..=3 {
                    assert!(p.s(i, j, q).norm() < 1e-12);
                }
            }
        }
    }
    assert!(dir.path().join("off_matched.s3p").exists());
    assert!(dir.path().join("off_metrics.csv").exists());
}

#[test]
fn modulated_sweep_is_nonreciprocal_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for p in [&a, &b] {
        let o = run(&["sim", s(&reference()), "--no-timestamp", "--out", s(p)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("isolation"));
    }
    for ext in [".s3p", ".csv", "_metrics.csv", "_matched.s3p", "_matched.csv"] {
        let x = std::fs::read(format!("{}{ext}", a.display())).unwrap();
        let y = std::fs::read(format!("{}{ext}", b.display())).unwrap();
        assert!(x == y, "{ext} differs between runs");
    }
    let t = read_touchstone(&dir.path().join("a.s3p")).unwrap();
    let worst = (0..t.freqs.len()).map(|n| (t.s(n, 2, 1) - t.s(n, 3, 1)).norm()).fold(0.0, f64::max);
    assert!(worst > 0.1, "S21 and S31 should differ under modulation, max diff {worst}");
    let header = std::fs::read_to_string(dir.path().join("a.s3p")).unwrap();
    assert!(header.starts_with("! circsim "));
    assert!(header.contains("! harmonics_k = 8"));
    assert!(!header.contains("generated"));

    let c = dir.path().join("c");
    run(&["sim", s(&reference()), "--out", s(&c)]);
    assert!(std::fs::read_to_string(dir.path().join("c.s3p")).unwrap().contains("! generated "));

    let o = run(&["metrics", s(&dir.path().join("a.csv")), "--level", "30"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.starts_with("f_notch_hz,isolation_db,il_db,rl_db,bw30_hz,intermod_frac\n"), "{out}");
    assert_eq!(code(&run(&["metrics", s(&dir.path().join("a.s3p"))])), 0);
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[fbar]\nkt2 = 2\n[modulation]\nduty = 1.5\n[sweep]\n").unwrap();
    let o = run(&["sim", s(&bad)]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2: fbar.kt2"), "{err}");
    assert!(err.contains("line 4: modulation.duty"), "{err}");
    assert_eq!(code(&run(&["sim", s(&dir.path().join("missing.toml"))])), 1);
    let o = run(&["sim", s(&reference()), "--out", "/nonexistent/dir/x"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/dir/x"));
}

#[test]
fn match_reports_and_optimizes() {
    let o = run(&["match", s(&reference()), "--freq", "2520.8e6", "--optimize"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("input impedance"));
    assert!(out.contains("optimized: l_series_h"));
    // the closed-form section cannot match Re(z) > z0, which is a solver-side failure
    let o = run(&["match", s(&reference()), "--freq", "2520.8e6"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let off = dir.path().join("off.toml");
    let text = std::fs::read_to_string(reference()).unwrap().replace("shape = \"square\"", "shape = \"off\"");
    std::fs::write(&off, text).unwrap();
    let o = run(&["validate", s(&off), "--freqs", "2502e6", "--harmonics", "2", "--steps", "128"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("max delta"));

    let o = run(&[
        "validate", s(&reference()), "--freqs", "2502e6", "--harmonics", "8", "--steps", "64", "--max-db", "1e-9",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
