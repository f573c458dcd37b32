use std::fs;
use std::path::Path;
use std::process::Command;

use gausson::ansatz::gausson;
use gausson::cli::{eps_dir, RunConfig, Sidecar};
use gausson::grid::Grid;
use gausson::io::{read_field, write_field};

const CONSTANT: &str = r#"
seed = 11
[potential]
family = "constant"
params = [1.0]
dim = 2
[peaks]
centres = [[0.0, 0.0]]
[sweep]
eps = [0.3, 0.2]
probe = false
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gausson"))
}

fn setup(dir: &Path, text: &str) -> std::path::PathBuf {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, text).unwrap();
    cfg
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> (i32, String) {
    let o = bin().args(args).arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr))
}

#[test]
fn constant_smoke_construct_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), CONSTANT);
    let out = dir.path().join("out");
    let (code, log) = run(&["construct"], &cfg, &out);
    assert_eq!(code, 0, "{log}");
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let hash = RunConfig::load(&cfg).unwrap().hash();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[0], hash);
        assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[5].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[12], "true");
    }
    let (code, log) = run(&["verify"], &cfg, &out);
    assert_eq!(code, 0, "{log}");
    assert!(fs::read_to_string(out.join("verify_summary.csv")).unwrap().lines().skip(1).all(|l| l.ends_with("PASS")));
    assert!(out.join("decay_eps0.2.csv").exists() && out.join("pohozaev_eps0.3.csv").exists());
}

#[test]
fn doubled_amplitude_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), CONSTANT);
    let out = dir.path().join("out");
    assert_eq!(run(&["construct"], &cfg, &out).0, 0);
    let f = eps_dir(&out, 0.2).join("u.gfld");
    let u = read_field(&f).unwrap();
    write_field(&f, &u.map(|v| 2.0 * v)).unwrap();
    let (code, log) = run(&["verify"], &cfg, &out);
    assert_eq!(code, 3, "{log}");
    assert!(log.contains("verify eps0.2: FAIL") && log.contains("verify eps0.3: PASS"), "{log}");
}

#[test]
fn exact_gausson_written_by_hand_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), CONSTANT);
    let sol = dir.path().join("hand");
    fs::create_dir_all(&sol).unwrap();
    let g = Grid::for_peaks(2, 0.25, &[vec![0.0, 0.0]]).unwrap();
    write_field(&sol.join("u.gfld"), &gausson(0.25, &[0.0, 0.0], 1.0, &g)).unwrap();
    Sidecar {
        config_hash: "manual".into(),
        eps: 0.25,
        delta: 0.5,
        xi: vec![vec![0.0, 0.0]],
        y: vec![vec![0.0, 0.0]],
        outer_iterations: 0,
        max_multiplier: 0.0,
        certified: true,
    }
    .write(&sol.join("meta.toml"))
    .unwrap();
    let out = dir.path().join("out");
    let o = bin().arg("verify").arg(&sol).arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn malformed_field_names_the_offset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), CONSTANT);
    let out = dir.path().join("out");
    assert_eq!(run(&["construct"], &cfg, &out).0, 0);
    let f = eps_dir(&out, 0.3).join("u.gfld");
    let mut bytes = fs::read(&f).unwrap();
    bytes.truncate(bytes.len() - 5);
    fs::write(&f, &bytes).unwrap();
    let (code, log) = run(&["verify"], &cfg, &out);
    assert_eq!(code, 3);
    assert!(log.contains(&format!("at byte {}", bytes.len())), "{log}");
}

#[test]
fn uniqueness_with_empty_battery_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &format!("{CONSTANT}[uniqueness]\nbattery = false\n"));
    let out = dir.path().join("out");
    assert_eq!(run(&["construct"], &cfg, &out).0, 0);
    let (code, log) = run(&["uniqueness"], &cfg, &out);
    assert_eq!(code, 0, "{log}");
    assert!(log.contains("smallest eps with PASS = 0.2"), "{log}");
}

const WELL: &str = r#"
seed = 5
[potential]
family = "quadratic-well"
params = [1.0, 0.0, 0.0]
dim = 2
[peaks]
seeds = [[0.1, 0.1]]
[sweep]
eps = [0.4]
probe = false
"#;

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), WELL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["construct", "--workers", "1"], &cfg, &a).0, 0);
    assert_eq!(run(&["construct", "--workers", "2"], &cfg, &b).0, 0);
    assert_eq!(run(&["uniqueness"], &cfg, &a).0, 0);
    assert_eq!(run(&["uniqueness"], &cfg, &b).0, 0);
    for name in ["summary.csv", "uniqueness_summary.csv", "uniqueness_runs_eps0.4.csv", "uniqueness_pairs_eps0.4.csv", "eps0.4/history.csv", "eps0.4/u.gfld"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_flag_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), CONSTANT);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["construct"], &cfg, &a).0, 0);
    assert_eq!(run(&["construct", "--seed", "12"], &cfg, &b).0, 0);
    let ha = fs::read_to_string(a.join("summary.csv")).unwrap();
    let hb = fs::read_to_string(b.join("summary.csv")).unwrap();
    assert_ne!(ha.lines().nth(1).unwrap()[..16], hb.lines().nth(1).unwrap()[..16]);
}

#[test]
fn construction_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(
        dir.path(),
        r#"
[potential]
family = "multi-well-polynomial"
params = [1.0, 1.0, 1.0, 1.0]
dim = 2
[peaks]
seeds = [[0.9, 0.1]]
[sweep]
eps = [0.2]
probe = false
"#,
    );
    let out = dir.path().join("out");
    let (code, log) = run(&["construct"], &cfg, &out);
    assert_eq!(code, 2, "{log}");
    let s = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(s.contains("trust region"), "{s}");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &CONSTANT.replace("seed = 11", "seed = 11\ntypo = 1"));
    let (code, log) = run(&["construct"], &cfg, &dir.path().join("out"));
    assert_eq!(code, 1);
    assert!(log.contains("typo"), "{log}");
    let o = bin().arg("construct").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn experiment_selector_runs_without_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &format!("experiment = \"spectrum\"\n{CONSTANT}[spectrum]\nns = [15, 21, 27]\nhalf_width = 4.0\nmin_rate = 1.5\n"));
    let out = dir.path().join("out");
    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("spectrum.csv").exists());
}
