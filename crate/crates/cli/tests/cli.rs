use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn densefield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densefield"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn metrics_of_identical_maps() {
    let dir = tempfile::tempdir().unwrap();
    let out = densefield(&["scene", "gen", "--canonical", "dense", "--out-dir", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let h = dir.path().join("height.pfm");
    let o = densefield(&["metrics", "--pred", p(&h), "--gt", p(&h)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "mae=0 rmse=0 ssim=1");
}

#[test]
fn gradcheck_passes() {
    let o = densefield(&["gradcheck", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5);
    for line in text.lines() {
        assert!(line.ends_with("PASS"), "{line}");
        let err: f64 = line
            .split_whitespace()
            .find_map(|t| t.strip_prefix("max_rel_err="))
            .unwrap()
            .parse()
            .unwrap();
        assert!(err < 1e-4, "{line}");
    }
}

#[test]
fn scene_then_height_only_optimize() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(densefield(&["scene", "gen", "--canonical", "two-box", "--out-dir", p(d)]).status.success());
    for f in ["height.pfm", "pano_depth.pfm", "sky.pgm", "scene.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let (field, trace) = (d.join("field.df32"), d.join("trace.csv"));
    let o = densefield(&[
        "optimize", "--gt", p(&d.join("height.pfm")), "--alpha", "0", "--epochs", "7", "--out", p(&field), "--trace",
        p(&trace),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&trace).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,l_h,l_rank,l_sky,l_total,lr"));
    assert_eq!(lines.count(), 7);

    let height = d.join("rendered.pfm");
    let o = densefield(&["render", "height", "--field", p(&field), "--out", p(&height)]);
    assert_eq!(o.status.code(), Some(0));
    let o = densefield(&["metrics", "--pred", p(&height), "--gt", p(&d.join("height.pfm"))]);
    assert!(stdout(&o).starts_with("mae="));
}

/// Street-supervised run, pairs and cutouts repeated with the same seed.
fn seeded_outputs(d: &Path) -> Vec<Vec<u8>> {
    let run = |args: &[&str]| {
        let o = densefield(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o.stdout
    };
    run(&["scene", "gen", "--canonical", "two-box", "--out-dir", p(d), "--pano-width", "64", "--pano-height", "32"]);
    run(&[
        "optimize", "--gt", p(&d.join("height.pfm")), "--pano", p(&d.join("pano_depth.pfm")), "--sky",
        p(&d.join("sky.pgm")), "--cam", "32,2,2", "--k", "256", "--epochs", "3", "--seed", "11", "--out",
        p(&d.join("f.df32")), "--trace", p(&d.join("t.csv")),
    ]);
    let pairs = run(&[
        "pairs", "--depth", p(&d.join("pano_depth.pfm")), "--exclude", p(&d.join("sky.pgm")), "--k", "100", "--min",
        "3", "--max", "9", "--seed", "4",
    ]);
    let cut = run(&["cutout", "--pano", p(&d.join("pano_depth.pfm")), "--heading", "90", "--fov", "90", "--size", "32"]);
    let pano = run(&["render", "pano", "--field", p(&d.join("f.df32")), "--cam", "32,2,2", "--width", "32", "--height", "16"]);
    let mut out: Vec<Vec<u8>> = ["height.pfm", "pano_depth.pfm", "sky.pgm", "f.df32", "t.csv"]
        .iter()
        .map(|f| fs::read(d.join(f)).unwrap())
        .collect();
    out.extend([pairs, cut, pano]);
    out
}

#[test]
fn repeated_seeded_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = seeded_outputs(a.path());
    assert!(String::from_utf8_lossy(&first[5]).starts_with("i_u,i_v,j_u,j_v,r\n"));
    assert_eq!(first, seeded_outputs(b.path()));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(densefield(&["metrics", "--bogus"]).status.code(), Some(1));
    assert_eq!(densefield(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(densefield(&["optimize", "--gt", "x.pfm"]).status.code(), Some(1));
    assert_eq!(densefield(&["render", "pano", "--field", "f", "--cam", "1,2"]).status.code(), Some(1));
    assert_eq!(densefield(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pfm");
    let o = densefield(&["metrics", "--pred", p(&missing), "--gt", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = densefield(&["scene", "gen", "--canonical", "nowhere", "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.pfm");
    fs::write(&bad, b"Pf\n2 2\n1.0\n").unwrap();
    let o = densefield(&["cutout", "--pano", p(&bad), "--heading", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte"));
}
