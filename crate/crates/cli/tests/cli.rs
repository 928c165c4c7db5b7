use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn aglab(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aglab"));
    c.args(args);
    match threads {
        Some(t) => c.env("AGLAB_THREADS", t),
        None => c.env_remove("AGLAB_THREADS"),
    };
    c.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"
seed = 5
output = "out/nested"

[domain]
kind = "ellipse"
a = 1.0
b = 0.5

[grid]
resolution = 32

[minimize]
eps_list = [0.4, 0.2, 0.1]
optimizer = "lbfgs"
max_iter = 50000
tol = 1e-5

[kinetic]
levels = [16, 32]

[characteristics]
ensemble = 500
curves = 2
"#;

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&read(p)).unwrap()
}

/// Numeric rows of a stamped CSV, skipping the comment lines and the header.
fn csv_rows(p: &Path) -> Vec<Vec<f64>> {
    read(p).lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn limit_table_writes_csv_and_dat_with_monotone_w11() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = aglab(&["limit-table", cfg.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let base = dir.path().join("out/nested");
    let csv = read(&base.join("limit_table.csv"));
    let dat = read(&base.join("limit_table.dat"));
    let hash = json(&base.join("limit_table.json"))["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for text in [&csv, &dat] {
        assert!(text.starts_with(&format!("# config_hash = {hash}\n# seed = 5\n")));
    }
    let rows = csv_rows(&base.join("limit_table.csv"));
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[1][4] < w[0][4], "w11 column {rows:?}");
    }
}

#[test]
fn kinetic_check_reports_identity_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "k.toml", SMALL);
    let out = aglab(&["kinetic-check", cfg.to_str().unwrap()], None);
    assert!(out.status.success());
    let j = json(&dir.path().join("out/nested/kinetic.json"));
    assert!(j["max_identity_error"].as_f64().unwrap() <= 1e-8);
    assert!(j["max_normalization_error"].as_f64().unwrap() <= 1e-10);
    assert_eq!(j["minimality"]["minimal"], j["minimality"]["outputs"]);
    assert_eq!(j["minimality"]["flagged"], j["minimality"]["perturbations"]);
    assert_eq!(j["tilted_control_flagged"], true);
    assert_eq!(j["seed"], 5);
}

#[test]
fn disk_reports_zero_jump_energy() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("a = 1.0", "a = 0.5").replace("eps_list = [0.4, 0.2, 0.1]", "eps_list = [0.4]");
    let cfg = write_config(dir.path(), "disk.toml", &body);
    let out = aglab(&["all", cfg.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let base = dir.path().join("out/nested");
    let e = json(&base.join("entropy.json"));
    assert_eq!(e["f0_jump"].as_f64().unwrap(), 0.0);
    assert_eq!(e["ridge_degenerate"], true);
    assert_eq!(json(&base.join("characteristics.json"))["skipped"], "degenerate ridge");
}

#[test]
fn same_config_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.toml", &SMALL.replace("out/nested", "run_a"));
    let b = write_config(dir.path(), "b.toml", &SMALL.replace("out/nested", "run_b"));
    assert!(aglab(&["all", a.to_str().unwrap()], Some("1")).status.success());
    assert!(aglab(&["all", b.to_str().unwrap()], Some("3")).status.success());
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("run_a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 20);
    for n in &names {
        let x = std::fs::read(dir.path().join("run_a").join(n)).unwrap();
        let y = std::fs::read(dir.path().join("run_b").join(n)).unwrap();
        // The two configs differ only in `output`, hence in the hash line.
        let strip = |v: Vec<u8>| String::from_utf8(v).unwrap().lines().filter(|l| !l.contains("config_hash")).collect::<Vec<_>>().join("\n");
        assert_eq!(strip(x), strip(y), "{n:?}");
    }
    // And literally identical for the very same config.
    let snapshot = std::fs::read(dir.path().join("run_a/limit_table.csv")).unwrap();
    assert!(aglab(&["limit-table", a.to_str().unwrap()], None).status.success());
    assert_eq!(std::fs::read(dir.path().join("run_a/limit_table.csv")).unwrap(), snapshot);
}

#[test]
fn config_errors_exit_three_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &SMALL.replace("resolution = 32", "resolution = 32\nspacing = 1"));
    let out = aglab(&["minimize", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:12:1"), "{err}");
    assert!(err.contains("spacing"), "{err}");

    let cfg = write_config(dir.path(), "syntax.toml", &SMALL.replace("b = 0.5", "b = = 0.5"));
    let out = aglab(&["minimize", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("syntax.toml:8:"));

    let out = aglab(&["minimize", dir.path().join("missing.toml").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn not_converged_exits_two_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "nc.toml", &SMALL.replace("max_iter = 50000", "max_iter = 3"));
    let out = aglab(&["minimize", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let j = json(&dir.path().join("out/nested/minimize.json"));
    assert_eq!(j["runs"][0]["converged"], false);
}

#[test]
fn bad_thread_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.toml", SMALL);
    assert_eq!(aglab(&["kinetic-check", cfg.to_str().unwrap()], Some("0")).status.code(), Some(1));
}

#[test]
fn warm_start_path_is_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = write_config(dir.path(), "first.toml", &SMALL.replace("eps_list = [0.4, 0.2, 0.1]", "eps_list = [0.4]"));
    assert!(aglab(&["minimize", first.to_str().unwrap()], None).status.success());
    let body = SMALL
        .replace("eps_list = [0.4, 0.2, 0.1]", "eps_list = [0.4]\nwarm_start = \"out/nested/u_eps0.dat\"")
        .replace("out/nested\"\n", "second\"\n");
    let sub = dir.path().join("sub");
    std::fs::create_dir(&sub).unwrap();
    let body = body.replace("out/nested/u_eps0.dat", "../out/nested/u_eps0.dat");
    let second = write_config(&sub, "second.toml", &body);
    let out = aglab(&["minimize", second.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = json(&dir.path().join("out/nested/minimize.json"));
    let b = json(&sub.join("second/minimize.json"));
    assert!(b["runs"][0]["iterations"].as_u64().unwrap() < a["runs"][0]["iterations"].as_u64().unwrap());
}

#[test]
fn characteristics_writes_stamped_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    assert!(aglab(&["characteristics", cfg.to_str().unwrap()], None).status.success());
    let base = dir.path().join("out/nested");
    let c = read(&base.join("curve_0.csv"));
    assert!(c.lines().nth(2) == Some("t,x1,x2,s"), "{c}");
    let j = json(&base.join("characteristics.json"));
    assert_eq!(j["report"]["n"], 500);
    assert_eq!(j["curves"].as_array().unwrap().len(), 2);
}
