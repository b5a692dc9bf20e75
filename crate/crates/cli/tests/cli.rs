use std::path::PathBuf;
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscdamp")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn six_bus() -> String {
    data("six_bus.grid").to_string_lossy().into_owned()
}

#[test]
fn missing_file_is_a_usage_error() {
    let o = run(&["modes", "/definitely/not/here.grid"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read"));
}

#[test]
fn unknown_flag_and_help() {
    assert_eq!(run(&["modes", "--bogus", &six_bus()]).status.code(), Some(64));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn bad_selectors() {
    let g = six_bus();
    assert_eq!(run(&["sens", &g]).status.code(), Some(64));
    assert_eq!(run(&["sens", &g, "--mode", "0"]).status.code(), Some(64));
    assert_eq!(run(&["sens", &g, "--mode", "99"]).status.code(), Some(64));
    assert_eq!(run(&["rank", &g, "--mode-hz", "40:50"]).status.code(), Some(64));
    assert_eq!(run(&["sweep", &g, "--mode", "6", "--pair", "1:4", "--r", "0.1"]).status.code(), Some(64));
    assert_eq!(run(&["sweep", &g, "--mode", "6", "--pair", "1:3", "--r", "x"]).status.code(), Some(64));
}

#[test]
fn malformed_grid_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.grid");
    std::fs::write(&path, "bus 1 G V=1 Pg=0.5 H=3 D=0\nline a 1 9 b=1\n").unwrap();
    let o = run(&["pf", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn six_bus_has_two_electromechanical_rows() {
    let o = run(&["modes", &six_bus()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let em: Vec<&str> = text.lines().filter(|l| l.contains(" yes ")).collect();
    assert_eq!(em.len(), 2, "{text}");
    assert!(em[0].contains("1.61350") && em[0].contains("1,2 <-> 3"), "{text}");
    assert!(em[1].contains("1.79898") && em[1].contains("1 <-> 2"), "{text}");
}

#[test]
fn output_is_deterministic() {
    let args = ["rank", &six_bus(), "--mode-hz", "1.7:1.9"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sweep_csv_has_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let o = run(&[
        "sweep",
        &six_bus(),
        "--mode-hz",
        "1.7:1.9",
        "--pair",
        "1:3",
        "--r=-0.003:0.003:0.003",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,sigma_exact,omega_exact,sigma_approx,omega_approx,zeta_exact,zeta_approx"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,"), "{}", rows[1]);
}

#[test]
fn dump_matrices_writes_six_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pf", &six_bus(), "--dump-matrices", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for name in ["L", "H", "M", "D", "E", "J"] {
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        assert!(!text.is_empty(), "{name}");
    }
}

#[test]
fn const_v_sensitivity_prints_split_coefficients() {
    let o = run(&["sens", &six_bus(), "--mode", "6", "--const-v", "--pair", "1:3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("a_r") && text.contains("a_i"), "{text}");
    assert!(text.contains("dlambda/dr"), "{text}");
}

#[test]
fn verify_passes() {
    let o = run(&["verify", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("fixture three_bus_s7") && text.contains("random network seed 5"));
    assert!(!text.contains("FAIL"));
}
