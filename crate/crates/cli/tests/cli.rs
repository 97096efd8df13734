use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn ntkms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntkms"))
        .args(args)
        .env_remove("NTKMS_THREADS")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_str(stdout(o).trim()).unwrap()
}

fn value(v: &Value) -> (f64, f64) {
    (v["value"][0].as_f64().unwrap(), v["value"][1].as_f64().unwrap())
}

const AFFINE: [&str; 9] = ["--system", "affine-toeplitz", "--trace", "haar", "--beta", "3", "-B", "1000", "--"];

fn eval(expr: &str, extra: &[&str]) -> Output {
    let mut args = vec!["eval"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&AFFINE);
    args.push(expr);
    ntkms(&args)
}

#[test]
fn eval_examples() {
    let o = eval("i[2](1@0) * adj(i[2](1@0))", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&o);
    let (re, im) = value(&v);
    let tail = v["tail"].as_f64().unwrap();
    assert!((re - 0.125).abs() <= tail && tail < 2e-3, "{v}");
    assert_eq!(im, 0.0);
    assert_eq!(v["truncation"], 1000);

    let o = eval("E(i[2](1@0) * adj(i[3](1@0)))", &[]);
    assert_eq!(value(&json(&o)), (0.0, 0.0));

    let o = eval("i[1]((S^1 S*^0)@0) * adj(i[1](1@0))", &["--ground"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(value(&v), (0.0, 0.0));
    assert_eq!(v["tail"], 0.0);

    let o = eval("1", &["--format", "csv"]);
    assert_eq!(
        stdout(&o),
        "value,tail,truncation\n1.0000000000000000e0+0.0000000000000000e0i,1.2165934341518169e-3,1000\n"
    );
}

#[test]
fn eval_errors_and_exit_codes() {
    let o = ntkms(&["eval", "--beta", "1.5", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("β = 1.5 is not above the critical exponent 2"), "{}", stderr(&o));

    let o = eval("i[2](1@0) * adj(i[2](1@0)", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("parse error at position 25"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());

    let o = eval("alpha[6](1) * alpha[10](1) * i[7](1@0)", &["--budget", "3"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("budget"));

    let o = ntkms(&["eval", "--no-such-flag", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ntkms(&["eval", "--system", "cuntz", "--d", "2", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ntkms(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn strict_config() {
    let dir = std::env::temp_dir().join(format!("ntkms-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"system": "affine-toeplitz", "betta": 3}"#).unwrap();
    let o = ntkms(&["eval", "--config", bad.to_str().unwrap(), "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));

    let good = dir.join("good.json");
    std::fs::write(
        &good,
        r#"{"system": "affine-toeplitz", "trace": "point_mass", "theta": 0, "beta": 4, "bound": 500}"#,
    )
    .unwrap();
    let from_file = ntkms(&["eval", "--config", good.to_str().unwrap(), "i[3](1@1) * adj(i[3](1@1))"]);
    let from_flags = ntkms(&[
        "eval",
        "--trace",
        "point_mass",
        "--theta",
        "0",
        "--beta",
        "4",
        "-B",
        "500",
        "i[3](1@1) * adj(i[3](1@1))",
    ]);
    assert!(from_file.status.success(), "{}", stderr(&from_file));
    assert_eq!(from_file.stdout, from_flags.stdout);
    let overridden = ntkms(&["eval", "--config", good.to_str().unwrap(), "--beta", "3", "1"]);
    assert!(overridden.status.success());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_examples() {
    let o = ntkms(&[
        "sweep",
        "--betas",
        "3,4,5",
        "--observable",
        "a2=alpha[2](1)",
        "--observable",
        "one=1",
        "-B",
        "10000",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for (row, beta) in rows.iter().zip([3.0f64, 4.0, 5.0]) {
        assert_eq!(row["beta"].as_f64().unwrap(), beta);
        let a2 = &row["observables"]["a2"];
        let (re, _) = value(a2);
        assert!((re - 2.0 * 2f64.powf(-beta)).abs() <= a2["tail"].as_f64().unwrap(), "{row}");
        assert_eq!(value(&row["observables"]["one"]), (1.0, 0.0));
    }
    let zeta = &rows[0]["zeta"];
    let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
    assert!((value(zeta).0 - pi2_6).abs() <= zeta["tail"].as_f64().unwrap());

    let csv = ntkms(&["sweep", "--betas", "3,4", "--observable", "alpha[2](1)", "--format", "csv"]);
    let text = stdout(&csv);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "beta,zeta,zeta_tail,alpha[2](1),alpha[2](1)_tail");
    assert_eq!(lines.count(), 2);

    let o = ntkms(&["sweep", "--betas", "2,3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).is_empty());
}

#[test]
fn verify_cuntz_all() {
    let o = ntkms(&["verify", "--system", "cuntz", "--k", "2", "--suite", "all", "--seed", "7", "--beta", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reports: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(reports.iter().all(|r| r["passed"] == true));
    for name in ["kms_condition", "core_trace", "ground_state", "reconstruction", "fock_product", "structure.coprime_pairs"] {
        assert!(reports.iter().any(|r| r["name"] == name), "{name} missing");
    }
    assert!(reports.iter().filter(|r| r["name"] == "kms_condition").all(|r| r["seed"] == 7));
    assert!(stderr(&o).contains("0 failed"));
}

#[test]
fn verify_euler() {
    let o = ntkms(&["verify", "--suite", "euler", "--beta", "3", "--primes", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&o);
    let dev = r["max_deviation"].as_f64().unwrap();
    assert!((dev - 2.98e-3).abs() < 1e-4, "{r}");

    let o = ntkms(&["verify", "--system", "cuntz", "--suite", "euler"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupted_fixture_fails_with_witness() {
    let o = ntkms(&["verify", "--config", &fixture("corrupted.json"), "--suite", "structure"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let reports: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let bij = reports.iter().find(|r| r["name"] == "structure.index_map_bijective").unwrap();
    assert_eq!(bij["passed"], true);
    let assoc = reports.iter().find(|r| r["name"] == "structure.index_map_associative").unwrap();
    assert_eq!(assoc["passed"], false);
    assert!(assoc["witness"].is_string());
    assert!(stderr(&o).contains("FAIL"));
}

#[test]
fn identical_inputs_give_identical_bytes() {
    let args = ["verify", "--system", "affine-toeplitz", "--suite", "kms", "--seed", "11", "--samples", "50"];
    let a = ntkms(&args);
    let b = ntkms(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = Command::new(env!("CARGO_BIN_EXE_ntkms"))
        .args(args)
        .env("NTKMS_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(a.stdout, c.stdout);
    let sweep = ["sweep", "--betas", "3,3.5,4", "--observable", "i[2](1@1) * adj(i[2](1@1))", "--format", "csv"];
    assert_eq!(ntkms(&sweep).stdout, ntkms(&sweep).stdout);

    let bad = Command::new(env!("CARGO_BIN_EXE_ntkms"))
        .args(["systems"])
        .env("NTKMS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn parse_echoes_canonical_form() {
    for expr in [
        "i[2](1@0)",
        "adj(i[3](S^1 S*^0 @ 2))",
        "E(i[2](1@0) * adj(i[3](1@0)))",
        "(1.5+2i) * alpha[2](i[3](S^2@1) * adj(i[3](S*^1@2))) - 0.5i",
    ] {
        let o = ntkms(&["parse", expr]);
        assert!(o.status.success(), "{expr}: {}", stderr(&o));
        let canonical = stdout(&o);
        let again = ntkms(&["parse", canonical.trim()]);
        assert_eq!(stdout(&again), canonical, "{expr}");
    }
    let o = ntkms(&["parse", "--system", "lattice-dilation", "--d", "2", "i[2](z1^2 z2^-1@3)"]);
    assert_eq!(stdout(&o).trim(), "i[2]((1+0i) z1^2 z2^-1@3) * adj(i[1](1@0))");
}

#[test]
fn systems_lists_builtins() {
    let o = ntkms(&["systems"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["name"].as_str().unwrap().to_string())
        .collect();
    for n in ["affine-toeplitz", "additive-toeplitz", "cuntz(2)", "lattice-dilation(d=1,diagonal)"] {
        assert!(names.iter().any(|x| x == n), "{n}");
    }
    let first: Value = serde_json::from_str(stdout(&o).lines().nth(2).unwrap()).unwrap();
    assert_eq!(first["config"], serde_json::json!({"system": "cuntz", "k": 2}));
}
