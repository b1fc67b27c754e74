use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mlar::likelihood::loglik_at;
use mlar::{ModelSpec, Parameters};
use serde_json::Value;

fn mlar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlar")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Simulate a small MLAR(1) ordinal panel with the CLI itself.
fn toy(dir: &Path, n: usize, t: usize) {
    let truth = r#"{"cut":[0.8,-0.8],"beta":[0.6],"sigma":1.5,"xi":[0.0],"rho":[0.7],"pi":[1.0]}"#;
    fs::write(dir.join("truth.json"), truth).unwrap();
    let out = mlar(&[
        "simulate", "--params", path(&dir.join("truth.json")), "--family", "ordinal-logit", "--categories", "3",
        "--n", &n.to_string(), "--t", &t.to_string(), "--seed", "5", "--out", path(dir),
    ]);
    ok(&out);
}

#[test]
fn fit_writes_valid_json_that_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path(), 150, 4);
    let res = dir.path().join("res");
    let out = mlar(&[
        "fit", "--input", path(&dir.path().join("data.csv")), "--out", path(&res), "--family", "ordinal-logit",
        "--categories", "3",
    ]);
    ok(&out);
    let v = read_json(&res.join("fit.json"));
    let fit = &v["fit"];
    let spec: ModelSpec = serde_json::from_value(fit["spec"].clone()).unwrap();
    let params: Parameters = serde_json::from_value(fit["params"].clone()).unwrap();
    let stored = fit["loglik"].as_f64().unwrap();
    let panel = mlar::io::read_panel_csv(dir.path().join("data.csv")).unwrap();
    let again = loglik_at(&spec, &panel.data, &params).unwrap();
    assert!((again - stored).abs() < 1e-8, "{again} vs {stored}");

    assert_eq!(v["covariates"], serde_json::json!(["x1"]));
    assert_eq!(v["controls"]["model"]["q"], 21);
    assert_eq!(v["controls"]["model"]["bound"], 5.0);
    assert!(fit["standard_errors"]["estimates"].as_array().unwrap().len() == 6);
    assert!(fit["diagnostics"]["converged"].as_bool().unwrap());
    assert!(!fit["trajectory"].as_array().unwrap().is_empty());
    assert!(fit["bic"].as_f64().unwrap() > 0.0);

    let alpha = fs::read_to_string(res.join("alpha_hat.csv")).unwrap();
    assert!(alpha.starts_with("id,time,alpha_hat,component"));
    assert_eq!(alpha.lines().count(), 1 + 150 * 4);

    // predict from the saved fit reproduces the file written by fit
    let pred = dir.path().join("pred");
    ok(&mlar(&[
        "predict", "--input", path(&dir.path().join("data.csv")), "--fit", path(&res.join("fit.json")), "--out", path(&pred),
    ]));
    assert_eq!(alpha, fs::read_to_string(pred.join("alpha_hat.csv")).unwrap());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path(), 60, 3);
    let data = dir.path().join("data.csv");
    let run = |threads: &str, sub: &str| {
        let res = dir.path().join(sub);
        ok(&mlar(&[
            "fit", "--input", path(&data), "--out", path(&res), "--family", "ordinal-logit", "--categories", "3",
            "--threads", threads, "--deterministic",
        ]));
        read_json(&res.join("fit.json"))["fit"].clone()
    };
    assert_eq!(run("1", "a"), run("3", "b"));
}

#[test]
fn low_memory_mode_gives_the_same_fit() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path(), 60, 3);
    let data = dir.path().join("data.csv");
    let run = |cells: &str, sub: &str| {
        let res = dir.path().join(sub);
        ok(&mlar(&[
            "fit", "--input", path(&data), "--out", path(&res), "--family", "ordinal-logit", "--categories", "3",
            "--max-cached-cells", cells,
        ]));
        read_json(&res.join("fit.json"))["fit"].clone()
    };
    assert_eq!(run("0", "a"), run("100000000", "b"));
}

#[test]
fn select_with_one_component_cap_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path(), 80, 3);
    let res = dir.path().join("sel");
    let out = mlar(&[
        "select", "--input", path(&dir.path().join("data.csv")), "--out", path(&res), "--family", "ordinal-logit",
        "--categories", "3", "--k-max", "1",
    ]);
    ok(&out);
    let v = read_json(&res.join("selection.json"));
    let sel = &v["selection"];
    assert_eq!(sel["chosen_k"], 1);
    assert_eq!(sel["k_flagged"], true);
    assert!(!sel["k_path"][0]["q_path"].as_array().unwrap().is_empty());
    assert_eq!(v["controls"]["select"]["q0"], 21);
    assert_eq!(v["controls"]["select"]["q_step"], 10);
    assert_eq!(v["controls"]["select"]["k_threshold"], 0.99);
    assert!(res.join("fit.json").exists() && res.join("alpha_hat.csv").exists());
}

#[test]
fn malformed_csv_is_a_user_error_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,time,y,x1\n1,1,2,0.5\n1,2,two,0.1\n").unwrap();
    let out = mlar(&["fit", "--input", path(&bad), "--out", path(&dir.path().join("o")), "--family", "ordinal-logit", "--categories", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":3:"), "{err}");
}

#[test]
fn incomplete_panel_and_bad_options_are_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    let gap = dir.path().join("gap.csv");
    fs::write(&gap, "id,time,y\na,1,1\na,2,2\nb,1,1\n").unwrap();
    let out = mlar(&["summarize", "--input", path(&gap), "--family", "ordinal-logit", "--categories", "3", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("id b"));

    let out = mlar(&["fit", "--input", path(&gap), "--out", path(dir.path()), "--family", "poisson"]);
    assert_eq!(out.status.code(), Some(1));
    let out = mlar(&["fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn out_of_range_category_lists_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("d.csv");
    fs::write(&f, "id,time,y\n1,1,1\n1,2,6\n2,1,2\n2,2,3\n").unwrap();
    let out = mlar(&["fit", "--input", path(&f), "--out", path(dir.path()), "--family", "ordinal-logit", "--categories", "5"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("subject 1, time 2"), "{err}");
}

#[test]
fn summary_of_persistent_panel_is_diagonal() {
    // one dominant, highly persistent component whose latent scale swamps
    // the unit response noise
    let dir = tempfile::tempdir().unwrap();
    let truth = r#"{"cut":[6.0,2.0,-2.0,-6.0],"beta":[],"sigma":6.0,"xi":[0.0,3.0],"rho":[0.97,0.2],"pi":[0.9,0.1]}"#;
    fs::write(dir.path().join("truth.json"), truth).unwrap();
    ok(&mlar(&[
        "simulate", "--params", path(&dir.path().join("truth.json")), "--family", "ordinal-logit", "--categories", "5",
        "--n", "2000", "--t", "6", "--seed", "9", "--out", path(dir.path()),
    ]));
    ok(&mlar(&[
        "summarize", "--input", path(&dir.path().join("data.csv")), "--family", "ordinal-logit", "--categories", "5",
        "--out", path(dir.path()),
    ]));
    let v = read_json(&dir.path().join("summary.json"));
    let tm: Vec<Vec<f64>> = serde_json::from_value(v["transition_matrix"].clone()).unwrap();
    for (a, row) in tm.iter().enumerate() {
        assert!((row.iter().sum::<f64>() - 100.0).abs() < 0.05);
        for (b, x) in row.iter().enumerate() {
            if a != b {
                assert!(row[a] > *x, "row {a}: {row:?}");
            }
        }
    }
    let occ: Vec<Vec<f64>> = serde_json::from_value(v["occasion_distribution"].clone()).unwrap();
    assert_eq!(occ.len(), 6);
    let truth_csv = fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    assert!(truth_csv.starts_with("id,time,component,alpha"));
}

#[test]
fn density_grids_are_written() {
    let dir = tempfile::tempdir().unwrap();
    toy(dir.path(), 80, 3);
    let res = dir.path().join("res");
    ok(&mlar(&[
        "fit", "--input", path(&dir.path().join("data.csv")), "--out", path(&res), "--family", "ordinal-logit", "--categories", "3",
    ]));
    ok(&mlar(&["density", "--fit", path(&res.join("fit.json")), "--out", path(&res), "--points", "101", "--points-2d", "21"]));
    let uni = fs::read_to_string(res.join("density_univariate.csv")).unwrap();
    let rows: Vec<(f64, f64)> = uni
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',').map(|x| x.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 101);
    // k = 1: symmetric about xi = 0 on the default range
    for j in 0..rows.len() {
        assert!((rows[j].1 - rows[rows.len() - 1 - j].1).abs() < 1e-12);
    }
    let bi = fs::read_to_string(res.join("density_bivariate.csv")).unwrap();
    assert!(bi.starts_with("a,b,density"));
    assert_eq!(bi.lines().count(), 1 + 21 * 21);

    let out = mlar(&["density", "--fit", path(&res.join("fit.json")), "--out", path(&res), "--lo", "2", "--hi", "-2"]);
    assert_eq!(out.status.code(), Some(1));
}
