//! Black-box checks of the command-line contract: output shapes, numerical
//! pins, and exit codes.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tiltrisk"))
}

fn run(args: &[&str]) -> (String, String, i32) {
    let out = bin().args(args).output().expect("spawn tiltrisk");
    (
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
        out.status.code().unwrap_or(-1),
    )
}

/// Parse the single CSV data row into (header -> value) pairs.
fn csv_record(stdout: &str, row_index: usize) -> Vec<(String, String)> {
    let lines: Vec<&str> = stdout.lines().filter(|l| !l.starts_with('#')).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let cells: Vec<&str> = lines[1 + row_index].split(',').collect();
    header
        .iter()
        .zip(cells)
        .map(|(h, c)| (h.to_string(), c.to_string()))
        .collect()
}

fn field(rec: &[(String, String)], name: &str) -> f64 {
    rec.iter()
        .find(|(h, _)| h == name)
        .unwrap_or_else(|| panic!("missing column {name}"))
        .1
        .parse()
        .unwrap()
}

#[test]
fn limit_treatment_matches_closed_form() {
    let (out, _, code) = run(&["limit", "--loss", "treatment", "--lambda", "1", "--sigma", "1"]);
    assert_eq!(code, 0);
    let rec = csv_record(&out, 0);
    let d = field(&rec, "delta_star");
    let v = field(&rec, "v_star");
    assert!((d - 1.0336113384790282).abs() < 1e-6, "delta_star {d}");
    // v_star = 1 + (e^d - 1)Φ(-d) at the reported maximizer.
    let phi = 0.5 * libm::erfc(d / std::f64::consts::SQRT_2);
    assert!((v - (1.0 + (d.exp() - 1.0) * phi)).abs() < 1e-9, "v_star {v}");
}

#[test]
fn limit_estimation_zero_noise() {
    let (out, _, code) = run(&[
        "limit", "--loss", "estimation", "--lambda", "1", "--sigma", "1e-8", "--bound-c", "25",
    ]);
    assert_eq!(code, 0);
    let v = field(&csv_record(&out, 0), "v_star");
    assert!((v - 1.0).abs() < 5e-7, "v_star {v}");
}

#[test]
fn limit_missing_lambda_is_usage_error() {
    let (_, _, code) = run(&["limit", "--loss", "treatment", "--sigma", "1"]);
    assert_eq!(code, 2);
}

#[test]
fn limit_sweep_emits_one_row_per_lambda() {
    let (out, _, code) = run(&[
        "limit", "--loss", "treatment", "--lambda", "1", "--sigma", "1", "--sweep-lambda",
        "0.5:2:4",
    ]);
    assert_eq!(code, 0);
    let data_lines = out.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(data_lines, 5); // header + 4 rows
}

#[test]
fn game_agrees_with_limit_and_verifies() {
    let (lim_out, _, _) = run(&["limit", "--loss", "treatment", "--lambda", "1", "--sigma", "1"]);
    let v_star = field(&csv_record(&lim_out, 0), "v_star");
    let (out, _, code) = run(&[
        "game", "--lambda", "1", "--sigma", "1", "--budget", "10", "--tol", "1e-4",
    ]);
    assert_eq!(code, 0);
    let rec = csv_record(&out, 0);
    assert!(field(&rec, "gap") <= 1e-4);
    assert!((field(&rec, "upper_value") - v_star).abs() <= 1e-3);
    let ok = rec.iter().find(|(h, _)| h == "bayes_ok").unwrap().1.clone();
    assert_eq!(ok, "true");
}

#[test]
fn game_tiny_budget_value_near_one() {
    let (out, _, code) = run(&[
        "game", "--lambda", "1", "--sigma", "1", "--budget", "1e-6", "--tol", "1e-4",
    ]);
    assert_eq!(code, 0);
    let v = field(&csv_record(&out, 0), "upper_value");
    assert!((v - 1.0).abs() < 1e-5, "value {v}");
}

#[test]
fn game_forced_nonconvergence_exits_4() {
    let (out, _, code) = run(&[
        "game", "--lambda", "1", "--sigma", "1", "--budget", "10", "--tol", "1e-9",
        "--max-iters", "1",
    ]);
    assert_eq!(code, 4);
    // Partial solution still emitted.
    assert!(out.contains("solution"));
}

#[test]
fn mc_small_smoke_and_unknown_rule() {
    let (out, _, code) = run(&[
        "mc", "--model", "bernoulli", "--theta0", "0.5", "--loss", "estimation", "--lambda",
        "2", "--n-list", "100", "--reps", "10", "--rules", "mle", "--seed", "3",
    ]);
    assert_eq!(code, 0);
    assert!(field(&csv_record(&out, 0), "stderr") > 0.0);

    let (_, err, code) = run(&[
        "mc", "--model", "bernoulli", "--loss", "estimation", "--lambda", "2", "--n-list",
        "100", "--reps", "10", "--rules", "winsorized", "--seed", "3",
    ]);
    assert_eq!(code, 5);
    assert!(err.contains("winsorized"));
}

#[test]
fn profile_treatment_single_admissible_point() {
    let (out, _, code) = run(&[
        "profile", "--loss", "treatment", "--lambda", "1", "--theta-grid", "0.1:0.9:9",
        "--mu-shift", "0.5",
    ]);
    assert_eq!(code, 0);
    // Only theta = 0.5 carries a value; others are inadmissible (empty cell).
    let valued: Vec<Vec<(String, String)>> = (0..9)
        .map(|i| csv_record(&out, i))
        .filter(|r| !r.iter().find(|(h, _)| h == "v_star_theta").unwrap().1.is_empty())
        .collect();
    assert_eq!(valued.len(), 1);
    assert!((field(&valued[0], "theta") - 0.5).abs() < 1e-12);
}

#[test]
fn profile_interior_grid_argmax() {
    let (out, _, code) = run(&[
        "profile", "--loss", "estimation", "--lambda", "1", "--theta-grid", "0.4:0.6:3",
    ]);
    assert_eq!(code, 0);
    let sup_row = csv_record(&out, 3);
    assert!((field(&sup_row, "theta") - 0.5).abs() < 1e-12);
}

#[test]
fn profile_empty_zero_set_exits_3() {
    let (_, _, code) = run(&[
        "profile", "--loss", "treatment", "--lambda", "1", "--theta-grid", "0.1:0.4:4",
        "--mu-shift", "0.9",
    ]);
    assert_eq!(code, 3);
}

#[test]
fn csv_and_json_carry_identical_numerals() {
    let args = ["limit", "--loss", "treatment", "--lambda", "1.5", "--sigma", "0.8"];
    let (csv, _, _) = run(&args);
    let mut jargs = args.to_vec();
    jargs.extend(["--format", "json"]);
    let (json, _, _) = run(&jargs);
    let rec = csv_record(&csv, 0);
    let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
    let row = &doc["rows"][0];
    for (h, v) in &rec {
        assert_eq!(row[h].as_str().unwrap(), v, "column {h}");
    }
}

#[test]
fn out_flag_writes_manifest_and_rows() {
    let dir = std::env::temp_dir().join("tiltrisk-cli-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("limit.csv");
    let (_, _, code) = run(&[
        "limit", "--loss", "estimation", "--lambda", "1", "--sigma", "1", "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# command=limit"));
    assert!(text.contains("v_star"));
}
