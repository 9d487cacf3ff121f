use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mflq::cli::{parse_config, Command as Cmd, Overrides};
use mflq::MflqError;

const SP1: &str = r#"{"problem": {"n": 1, "m": 1, "A": [-1], "B": [1], "Q": [1], "R": [1]}}"#;
const SP2_SMALL: &str = r#"{
  "problem": {"n": 1, "m": 1, "A": [-1], "B": [1], "Q": [1], "R": [1], "b": [1], "sigma": [0.5]},
  "T": 2, "x0": [1.5], "dt": 0.01, "n_paths": 700, "seed": 3
}"#;

fn mflq(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_mflq"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn defaults_are_filled() {
    let cfg = parse_config(
        r#"{"n":1,"m":1,"A":[-1],"B":[1],"Q":[1],"R":[1],"b":[1],"sigma":[0.5],"T":10,"x0":[1.5]}"#,
        Cmd::Turnpike,
        &Overrides::default(),
    )
    .unwrap();
    assert_eq!(cfg.dt, 1e-3);
    assert_eq!(cfg.n_paths, 10_000);
    assert_eq!(cfg.seed, 42);
    assert_eq!(cfg.steps_per_unit, 1000);
    assert!(cfg.coupled);
    assert_eq!(cfg.problem.as_ref().unwrap().sigma[0], 0.5);
}

#[test]
fn flags_override_config_and_change_the_digest() {
    let base = parse_config(SP2_SMALL, Cmd::Turnpike, &Overrides::default()).unwrap();
    let o = Overrides {
        seed: Some(9),
        paths: Some(5),
        dt: Some(0.02),
        horizon: Some(4.0),
        ..Overrides::default()
    };
    let cfg = parse_config(SP2_SMALL, Cmd::Turnpike, &o).unwrap();
    assert_eq!((cfg.seed, cfg.n_paths, cfg.dt, cfg.T), (9, 5, 0.02, Some(4.0)));
    assert_ne!(base.digest(), cfg.digest());
    assert_eq!(
        base.digest(),
        parse_config(SP2_SMALL, Cmd::Turnpike, &Overrides::default())
            .unwrap()
            .digest()
    );
}

#[test]
fn config_errors_carry_json_paths() {
    let o = Overrides::default();
    let e = parse_config(r#"{"problem":{"n":2,"m":1,"A":[1,2,3]}}"#, Cmd::Are, &o).unwrap_err();
    assert!(matches!(&e, MflqError::Shape { path, .. } if path == "$.problem.A"));
    let e = parse_config(r#"{"n":1,"m":1,"R":[1],"Q":[1],"x0":[1,2],"T":1}"#, Cmd::Turnpike, &o).unwrap_err();
    assert!(matches!(&e, MflqError::Shape { path, .. } if path == "$.x0"));
    let e = parse_config(r#"{"n":1,"m":1,"R":[1],"Q":[1]}"#, Cmd::Turnpike, &o).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    let e = parse_config(
        r#"{"n":1,"m":1,"R":[1],"Q":[1],"T":1,"x0":[0],"dt":0.3}"#,
        Cmd::Turnpike,
        &o,
    )
    .unwrap_err();
    assert!(matches!(e, MflqError::Config(_)));
    assert!(parse_config("{}", Cmd::LemmaSuite, &o).is_ok());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let o = mflq(d, "{\"n\": 1,", &["are"]);
    assert_eq!(o.status.code(), Some(2));

    let o = mflq(d, r#"{"n":2,"m":1,"A":[1,2,3],"Q":[1,0,0,1],"R":[1]}"#, &["are"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("$.A"));

    let o = mflq(d, r#"{"n":1,"m":1,"A":[-1],"B":[1],"Q":[1]}"#, &["are"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("R ≻ 0"), "{}", stderr(&o));

    let o = mflq(
        d,
        r#"{"n":1,"m":1,"A":[1],"B":[0],"Q":[1],"R":[1],"T":2,"x0":[0]}"#,
        &["turnpike", "--out", "o"],
    );
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("ARE divergence (check A2)"), "{}", stderr(&o));
}

#[test]
fn are_reports_scalar_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = mflq(dir.path(), SP1, &["are", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out/are.json")).unwrap()).unwrap();
    let p = doc["result"]["P"][0][0].as_f64().unwrap();
    assert!((p - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["config_digest"].as_str().unwrap().len(), 64);
    assert!(doc["tolerances"]["are_residual"].as_f64().is_some());
}

#[test]
fn static_prints_full_precision_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = mflq(dir.path(), SP2_SMALL, &["static", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let v = doc["V"].as_f64().unwrap();
    assert!((v - (0.5 + 0.25 * (2f64.sqrt() - 1.0))).abs() < 1e-12);
    for key in ["x_star", "u_star", "lambda_star", "sigma_star"] {
        assert!(doc[key].is_array(), "{key}");
    }
}

#[test]
fn lemma_suite_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = mflq(
        dir.path(),
        r#"{"trials": 1000, "seed": 42}"#,
        &["lemma-suite", "--out", "out"],
    );
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.matches("1000/1000 passed").count(), 2, "{text}");
}

#[test]
fn riccati_profile_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        r#"{"problem": {"n": 1, "m": 1, "A": [-1], "B": [1], "Q": [1], "R": [1]}, "T": 5, "steps_per_unit": 200}"#;
    let o = mflq(dir.path(), cfg, &["riccati-profile", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let profile = fs::read_to_string(dir.path().join("out/riccati_profile.csv")).unwrap();
    let mut lines = profile.lines();
    assert!(lines.next().unwrap().starts_with("# mflq schema=1 config_digest="));
    assert_eq!(lines.next().unwrap(), "t,err_P,err_Pi");
    assert_eq!(lines.count(), 1001);
    let mono = fs::read_to_string(dir.path().join("out/monotonicity.csv")).unwrap();
    assert_eq!(mono.lines().nth(1).unwrap(), "T,Pi00");
    assert_eq!(mono.lines().count(), 6);
}

#[test]
fn turnpike_artifacts_are_reproducible_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = mflq(d, SP2_SMALL, &["turnpike", "--out", "a", "--threads", "1", "--raw"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = mflq(d, SP2_SMALL, &["turnpike", "--out", "b", "--threads", "4", "--raw"]);
    assert_eq!(b.status.code(), Some(0));
    let names = [
        "turnpike.json",
        "optimal_stats.csv",
        "turnpike_stats.csv",
        "riccati_profile.csv",
        "optimal_paths.bin",
    ];
    for name in names {
        let x = fs::read(d.join("a").join(name)).unwrap();
        let y = fs::read(d.join("b").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
    let raw = fs::read(d.join("a/optimal_paths.bin")).unwrap();
    let header: Vec<u64> = raw[..32]
        .chunks(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(header, vec![1, 1, 201, 700]);
    let stats = fs::read_to_string(d.join("a/optimal_stats.csv")).unwrap();
    assert_eq!(stats.lines().nth(1).unwrap(), "t,meanX0,m2X,m2u,gapX,gapu,gapY,gapZ");
}

#[test]
fn value_convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"problem": {"n": 1, "m": 1, "A": [-1], "B": [1], "Q": [1], "R": [1]},
                  "horizons": [1, 2], "x0": [0], "dt": 0.01, "n_paths": 10}"#;
    let o = mflq(dir.path(), cfg, &["value-convergence", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/value_convergence.csv")).unwrap();
    assert_eq!(
        csv.lines().nth(1).unwrap(),
        "T,estimate_over_T,standard_error_over_T,V,difference"
    );
    assert_eq!(csv.lines().count(), 4);
}
