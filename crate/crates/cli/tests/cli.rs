//! End-to-end checks of the batch interface: exit codes, config validation,
//! reproducibility of CSV bodies, and the resolved-config echo.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_layerbound")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("layerbound_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn small_planar_config(out: &Path) -> String {
    format!(
        r#"
[potential]
name = "gaussian_well"
depth = 1.0
width = 1.0

[layer]
a = 1.5707963267948966

[coupling]
lambda = [0.08, 0.04]

[grid]
extent = 8.0
nodes = 65

[modes]
n = 8
bs = 3
direct = 2
nu = 12

[solver]
tol = 1e-7
box_half_length = 12.0
h = 0.25
l_budget = 200.0

[output]
dir = "{}"
"#,
        out.display()
    )
}

#[test]
fn unknown_keys_exit_1() {
    let dir = tmpdir("unknown");
    let cfg = write_config(&dir, "c.toml", "[layer]\na = 0.5\nwhatever = 1\n");
    let st = Command::new(bin())
        .args(["pipeline-layer", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn invalid_values_exit_1() {
    let dir = tmpdir("invalid");
    let cfg = write_config(&dir, "c.toml", "[layer]\na = -2.0\n");
    let st = Command::new(bin())
        .args(["pipeline-layer", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));
    // Missing required config entirely.
    let st = Command::new(bin()).args(["asymptotics"]).status().unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn planar_surface_exits_2_citing_mean_curvature() {
    let dir = tmpdir("plane");
    let out = dir.join("out");
    let cfg = write_config(
        &dir,
        "c.toml",
        &format!(
            "[surface]\nname = \"plane\"\nslope1 = 1.0\nslope2 = 0.5\n\n[layer]\na = 0.5\n\
             eps = [0.1]\n\n[grid]\nextent = 6.0\nnodes = 49\n\n[modes]\nn = 8\nbs = 3\n\
             direct = 2\nnu = 12\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    let outp = Command::new(bin())
        .args(["pipeline-layer", "--quiet", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(outp.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&outp.stderr);
    assert!(msg.contains("mean curvature"), "message was: {msg}");
}

#[test]
fn repulsive_potential_exits_2() {
    let dir = tmpdir("repulsive");
    let out = dir.join("out");
    let cfg = write_config(
        &dir,
        "c.toml",
        &format!(
            "[potential]\nname = \"gaussian_barrier\"\ndepth = 1.0\n\n[layer]\na = 1.0\n\n\
             [coupling]\nlambda = [0.05]\n\n[grid]\nextent = 6.0\nnodes = 49\n\n[modes]\n\
             n = 8\nbs = 3\ndirect = 2\nnu = 12\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    let st = Command::new(bin())
        .args(["pipeline-planar", "--quiet", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
    // The verdict table is still written, with none on every row.
    let body = std::fs::read_to_string(out.join("planar_compare.csv")).unwrap();
    for line in body.lines().skip(1) {
        assert!(line.contains(",none,"), "row without 'none': {line}");
    }
}

#[test]
fn reruns_are_bitwise_identical() {
    let dir = tmpdir("determinism");
    let out = dir.join("out");
    let cfg = write_config(&dir, "c.toml", &small_planar_config(&out));
    let run = || {
        let st = Command::new(bin())
            .args(["pipeline-planar", "--quiet", "--config"])
            .arg(&cfg)
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
        let mut files: Vec<_> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap()))
            .collect::<Vec<_>>()
    };
    let first = run();
    let second = run();
    assert!(!first.is_empty());
    assert_eq!(first.len(), second.len());
    for ((name_a, body_a), (name_b, body_b)) in first.iter().zip(second.iter()) {
        assert_eq!(name_a, name_b);
        assert_eq!(body_a, body_b, "file {name_a:?} differs between reruns");
    }
}

#[test]
fn resolved_config_echo_reproduces_the_run() {
    let dir = tmpdir("echo");
    let out1 = dir.join("out1");
    let cfg = write_config(&dir, "c.toml", &small_planar_config(&out1));
    let st = Command::new(bin())
        .args(["pipeline-planar", "--quiet", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    // The echo is itself a valid config; run from it into a second directory.
    let echo_path = out1.join("resolved_config.toml");
    let out2 = dir.join("out2");
    let st = Command::new(bin())
        .args(["pipeline-planar", "--quiet", "--config"])
        .arg(&echo_path)
        .arg("--out")
        .arg(&out2)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let a = std::fs::read(out1.join("planar_compare.csv")).unwrap();
    let b = std::fs::read(out2.join("planar_compare.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dipole_zero_mean_detected_by_bs() {
    let dir = tmpdir("dipole");
    let out = dir.join("out");
    let cfg = write_config(
        &dir,
        "c.toml",
        &format!(
            "[potential]\nname = \"dipole_uv\"\nstrength = 1.0\nwidth = 1.0\n\n[layer]\n\
             a = 0.7853981633974483\n\n[coupling]\nlambda = [0.3]\n\n[grid]\nextent = 7.0\n\
             nodes = 57\n\n[modes]\nn = 12\nbs = 8\ndirect = 2\nnu = 16\n\n[solver]\n\
             tol = 1e-7\nbox_half_length = 10.0\nh = 0.25\nl_budget = 100.0\n\n[output]\n\
             dir = \"{}\"\n",
            out.display()
        ),
    );
    let st = Command::new(bin())
        .args(["pipeline-planar", "--quiet", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let body = std::fs::read_to_string(out.join("planar_compare.csv")).unwrap();
    let row = body.lines().nth(1).unwrap();
    assert!(row.contains("exists_zero_mean"), "row: {row}");
    // w_bs column parses and is negative.
    let w_bs: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!(w_bs < 0.0, "w_bs = {w_bs}");
}
