use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures");
const FIXTURES_LIFTING: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/lifting.json");

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}):\n{}", self.stdout))
    }
}

fn run_with(args: &[&str], seed_env: Option<&str>) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_algpaths"));
    cmd.args(args).env_remove("ALGPATHS_SEED");
    if let Some(s) = seed_env {
        cmd.env("ALGPATHS_SEED", s);
    }
    let out = cmd.output().expect("binary runs");
    Run {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn run(args: &[&str]) -> Run {
    run_with(args, None)
}

fn fixture(name: &str) -> String {
    format!("{FIXTURES}/{name}")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("algpaths-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn sheets_prints_bare_count() {
    let r = run(&["example3", "sheets", "--nu", "1/3"]);
    assert_eq!(r.code, 0);
    assert_eq!(r.stdout.trim(), "3");
    let r = run(&["example3", "sheets", "--nu", "sqrt(2)-1"]);
    assert_eq!(r.stdout.trim(), "inf");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let r = run(&["frobnicate"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("Usage"), "{}", r.stderr);
}

#[test]
fn config_errors_carry_pointers() {
    for (file, pointer) in [
        ("invalid/dangling.json", "/comorphisms/0/source"),
        ("invalid/bracket_key.json", "/algebroids/0/bracket/1,2,2"),
        ("invalid/schema.json", "/poisson/0/dim"),
        ("invalid/malformed.json", "/algebroids"),
    ] {
        let r = run(&["check-algebroid", "--config", &fixture(file)]);
        assert_eq!(r.code, 2, "{file}: {}", r.stderr);
        assert!(r.stderr.contains(pointer), "{file}: {}", r.stderr);
    }
}

#[test]
fn failed_checks_exit_one_with_report() {
    let r = run(&["check-algebroid", "--config", &fixture("invalid/not_jacobi.json")]);
    assert_eq!(r.code, 1);
    assert_eq!(r.json()["algebroids"][0]["pass"], false);

    let cfg = fixture("invalid/not_poisson_map.json");
    let r = run(&["poisson", "check-map", "--config", &cfg, "--map", "scaling"]);
    assert_eq!(r.code, 1);
    let v = r.json();
    assert_eq!(v["pass"], false);
    assert_eq!(v["witness"].as_array().unwrap().len(), 2);

    // Spot checks at load time reject the same file for commands that use it.
    let r = run(&["poisson", "lift", "--config", &cfg, "--map", "scaling"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("/poisson_maps/0"), "{}", r.stderr);
}

#[test]
fn valid_fixtures_pass_checks() {
    let r = run(&["check-algebroid", "--config", &fixture("so3.json")]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.json()["algebroids"].as_array().unwrap().iter().all(|a| a["pass"] == true));
    for map in ["projection", "identity", "disk_inclusion"] {
        let r = run(&["poisson", "check-map", "--config", &fixture("poisson.json"), "--map", map]);
        assert_eq!(r.code, 0, "{map}: {}", r.stderr);
    }
}

#[test]
fn unknown_name_lists_known_ones() {
    let r = run(&["compose", "--config", &fixture("lifting.json"), "--first", "c1", "--second", "nope"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("c2"), "{}", r.stderr);
}

#[test]
fn integrate_path_csv_has_grid_plus_one_rows() {
    let r = run(&[
        "integrate-path",
        "--config",
        &fixture("lifting.json"),
        "--algebroid",
        "T2",
        "--section",
        "1",
        "--section",
        "t",
        "--x0",
        "0,0",
        "--grid",
        "50",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows: Vec<_> = r.stdout.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "t,x1,x2,eta1,eta2");
    assert_eq!(rows.len(), 1 + 51);
    let last: Vec<f64> = rows[51].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[1] - 1.0).abs() < 1e-9 && (last[2] - 0.5).abs() < 1e-9, "{last:?}");
}

#[test]
fn lift_round_trip_through_files() {
    let path = scratch("g.csv");
    let r = run(&[
        "integrate-path",
        "--config",
        &fixture("lifting.json"),
        "--algebroid",
        "T1",
        "--section",
        "cos(t)",
        "--x0",
        "0",
        "--grid",
        "200",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["csv"], path.to_str().unwrap());

    let r = run(&[
        "lift-path",
        "--config",
        &fixture("lifting.json"),
        "--comorphism",
        "c2",
        "--path",
        path.to_str().unwrap(),
        "--x0",
        "0,0",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows: Vec<_> = r.stdout.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 201);
    // x1 follows sin(t); x2' = cos(x1) cos(t).
    let last: Vec<f64> = rows[201].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[1] - 1f64.sin()).abs() < 1e-6, "{last:?}");
    assert!((last[2] - 1f64.sin().sin()).abs() < 1e-6, "{last:?}");
}

#[test]
fn disk_probe_exits_one_with_witness() {
    let r = run(&[
        "completeness-probe",
        "--config",
        &fixture("lifting.json"),
        "--comorphism",
        "disk_inclusion",
        "--section",
        "1",
        "--section",
        "0",
        "--seeds",
        "0.2,0.3",
    ]);
    assert_eq!(r.code, 1);
    let v = r.json();
    let t = v["probe"]["witness"]["status"]["t_star"].as_f64().unwrap();
    let expected = (1.0f64 - 0.09).sqrt() - 0.2;
    assert!((t - expected).abs() < 1e-3, "t* = {t}, expected {expected}");
}

#[test]
fn composite_reloads_as_config() {
    let r = run(&["compose", "--config", &fixture("lifting.json"), "--first", "c1", "--second", "c2", "--name", "c12"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v = r.json();
    assert!(v["anchor_compat_residual"].as_f64().unwrap() < 1e-10);
    let comorphism = v["comorphism"].clone();
    assert_eq!(comorphism["source"], "T3");
    assert_eq!(comorphism["target"], "T1");

    let cfg = serde_json::json!({
        "algebroids": [{ "name": "T1", "tangent": 1 }, { "name": "T3", "tangent": 3 }],
        "comorphisms": [comorphism],
    });
    let path = scratch("composite.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let r = run(&[
        "completeness-probe",
        "--config",
        path.to_str().unwrap(),
        "--comorphism",
        "c12",
        "--section",
        "1",
        "--seeds",
        "0,0,0",
        "--horizon",
        "1",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["probe"]["verdict"], "no_escape_detected");
}

#[test]
fn rotation_holonomy_around_circle() {
    let r = run(&[
        "holonomy",
        "--config",
        &fixture("lifting.json"),
        "--comorphism",
        "rotation",
        "--x0",
        "1,0,1,0,0",
        "--circle",
        "0,0,1",
        "--grid",
        "400",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let end = r.json()["holonomy"]["end"].clone();
    let (u, w) = (end[2].as_f64().unwrap(), end[3].as_f64().unwrap());
    let a = std::f64::consts::TAU / 3.0;
    assert!((u - a.cos()).abs() < 1e-6 && (w - a.sin()).abs() < 1e-6, "z = ({u}, {w})");
}

#[test]
fn develop_then_logderiv_recovers_path() {
    let (p, g, l) = (scratch("so3p.csv"), scratch("so3g.csv"), scratch("so3l.csv"));
    let cfg = fixture("so3.json");
    let r = run(&[
        "integrate-path",
        "--config",
        &cfg,
        "--algebroid",
        "so3",
        "--section",
        "1",
        "--section",
        "t",
        "--section",
        "cos(t)",
        "--x0",
        "",
        "--grid",
        "100",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let r = run(&["develop", "--config", &cfg, "--algebroid", "so3", "--path", p.to_str().unwrap(), "--out", g.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let r = run(&[
        "logderiv",
        "--config",
        &cfg,
        "--algebroid",
        "so3",
        "--matrix-path",
        g.to_str().unwrap(),
        "--out",
        l.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let read = |p: &PathBuf| -> Vec<Vec<f64>> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let (a, b) = (read(&p), read(&l));
    assert_eq!(a.len(), b.len());
    let err = a.iter().zip(&b).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max);
    assert!(err < 1e-6, "round trip error {err}");
}

#[test]
fn poisson_flow_blowup_exits_one() {
    let r = run(&[
        "poisson",
        "flow",
        "--config",
        &fixture("poisson.json"),
        "--manifold",
        "sym",
        "--hamiltonian",
        "x1^2*x2",
        "--x0",
        "2,0",
        "--horizon",
        "2",
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("# status=blowup"), "{}", r.stdout);
}

#[test]
fn poisson_probe_agrees_with_lift() {
    let r = run(&[
        "poisson",
        "probe",
        "--config",
        &fixture("poisson.json"),
        "--map",
        "identity",
        "--function",
        "x1",
        "--random-seeds",
        "3",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["report"]["all_agree"], true);
}

#[test]
fn seed_flag_overrides_env() {
    let args = |extra: &[&'static str]| {
        let mut v = vec![
            "completeness-probe",
            "--config",
            FIXTURES_LIFTING,
            "--comorphism",
            "c1",
            "--section",
            "1",
            "--section",
            "0",
            "--random-seeds",
            "2",
            "--horizon",
            "0.1",
        ];
        v.extend_from_slice(extra);
        v
    };
    let points = |r: Run| {
        assert_eq!(r.code, 0, "{}", r.stderr);
        r.json()["seed_points"].clone()
    };
    let default = points(run(&args(&[])));
    let again = points(run(&args(&[])));
    assert_eq!(default, again);
    let seven_env = points(run_with(&args(&[]), Some("7")));
    let seven_flag = points(run(&args(&["--seed", "7"])));
    assert_eq!(seven_env, seven_flag);
    assert_ne!(seven_env, default);
    let flag_wins = points(run_with(&args(&["--seed", "7"]), Some("8")));
    assert_eq!(flag_wins, seven_flag);

    let r = run_with(&args(&[]), Some("not-a-number"));
    assert_eq!(r.code, 2);
}

#[test]
fn sweep_writes_csv_and_report() {
    let out = scratch("sweep.csv");
    let r = run(&[
        "example3",
        "sweep",
        "--nu0",
        "1/3",
        "--levels",
        "-0.6,0,0.6",
        "--grid",
        "200",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json()["grid"], 200);
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<_> = csv.lines().collect();
    assert_eq!(rows[0], "h,nu,holonomy_angle,sheets");
    assert_eq!(rows.len(), 4);
    assert!(rows[2].ends_with(",3"), "{}", rows[2]);
    assert!(rows[1].ends_with(",1") && rows[3].ends_with(",1"));
}
