//! Command-line round trips on files in a temporary directory.

mod common;

use std::path::Path;

use common::{random_panel, within_balanced, Fam};
use fepanel::cli::dispatch;
use fepanel::panel::{Observation, PanelData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("fepanel").chain(args.iter().copied()))
}

fn write_panel(dir: &Path, name: &str, fam: Fam, n: usize, t: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..100)
        .find_map(|_| random_panel(&mut rng, fam, n, t, 2, 1.0))
        .unwrap();
    let path = dir.join(name);
    data.write_csv(&path).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_output_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), "p.csv", Fam::Poisson, 30, 6, 1);
    let out = dir.path().join("fit.json");
    let out_s = out.to_str().unwrap();
    assert_eq!(run(&["fit", "--family", "poisson", "--data", &data, "--output", out_s]), 0);
    let v = read_json(&out);
    assert_eq!(v["config"]["subcommand"], "fit");
    assert_eq!(v["result"]["beta"].as_array().unwrap().len(), 2);
    assert_eq!(run(&["rerun", out_s, "--check"]), 0);

    // A tampered coefficient no longer matches.
    let text = std::fs::read_to_string(&out).unwrap();
    let beta0 = v["result"]["beta"][0].as_f64().unwrap();
    let tampered = text.replacen(&format!("{beta0:?}"), &format!("{:?}", beta0 + 1e-12), 1);
    assert_ne!(tampered, text);
    std::fs::write(&out, tampered).unwrap();
    assert_eq!(run(&["rerun", out_s, "--check"]), 3);
}

#[test]
fn json_floats_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), "p.csv", Fam::Logit, 40, 8, 2);
    let out = dir.path().join("c.json");
    let args = ["correct", "--method", "abc", "--trim", "1", "--family", "logit", "--data", &data];
    assert_eq!(run(&[&args[..], &["--output", out.to_str().unwrap()]].concat()), 0);
    let v = read_json(&out);
    let beta: Vec<f64> = serde_json::from_value(v["result"]["beta"].clone()).unwrap();
    // Same computation through the library.
    let panel = fepanel::panel::load_csv(&data, &Default::default()).unwrap();
    let est = fepanel::correction::correct(
        &panel,
        &fepanel::family::Family::Logit,
        &fepanel::correction::Method::Abc { trim: 1, iterations: 1 },
        &Default::default(),
    )
    .unwrap();
    assert_eq!(beta, est.beta);
}

#[test]
fn jackknife_ignores_trim_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), "p.csv", Fam::Linear, 12, 6, 3);
    let out = dir.path().join("j.json");
    let code = run(&[
        "correct", "--method", "jbc", "--trim", "2", "--family", "linear", "--data", &data, "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let v = read_json(&out);
    assert_eq!(v["result"]["method"]["name"], "jbc");
    assert!(v["result"]["warnings"][0].as_str().unwrap().contains("--trim"));
}

#[test]
fn project_with_unit_weights_is_two_way_demeaning() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), "p.csv", Fam::Linear, 7, 5, 4);
    let out = dir.path().join("x.csv");
    assert_eq!(
        run(&["project", "--family", "linear", "--data", &data, "--output", out.to_str().unwrap()]),
        0
    );
    let panel = fepanel::panel::load_csv(&data, &Default::default()).unwrap();
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["unit", "period", "x1", "x2"]);
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().skip(2).map(|v| v.parse().unwrap()).collect())
        .collect();
    for j in 0..2 {
        let want = within_balanced(&panel.x_col(j), 7, 5);
        for (k, w) in want.iter().enumerate() {
            assert!((rows[k][j] - w).abs() < 1e-10);
        }
    }
}

#[test]
fn disconnected_panel_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    // Units 0,1 only in periods 0,1; units 2,3 only in periods 2,3.
    let mut obs = Vec::new();
    for i in 0..4usize {
        for t in 0..4usize {
            if (i < 2) == (t < 2) {
                obs.push(Observation {
                    unit: i,
                    period: t,
                    y: (i + 2 * t) as f64 * 0.3 + if (i + t) % 2 == 0 { 0.1 } else { -0.2 },
                    x: vec![(i * t) as f64 * 0.7 - (t as f64).sin()],
                });
            }
        }
    }
    let panel = PanelData::new(4, 4, obs, vec!["x1".into()]).unwrap();
    let path = dir.path().join("d.csv");
    panel.write_csv(&path).unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(run(&["fit", "--family", "linear", "--data", p]), 3);
    assert_eq!(run(&["project", "--family", "linear", "--data", p, "--weights", "ones"]), 3);
    let rep = dir.path().join("v.json");
    assert_eq!(
        run(&["validate", "--family", "linear", "--data", p, "--output", rep.to_str().unwrap()]),
        3
    );
    assert_eq!(read_json(&rep)["result"]["components"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_file_is_an_input_error() {
    assert_eq!(run(&["fit", "--family", "logit", "--data", "/nonexistent/panel.csv"]), 2);
}

#[test]
fn simulate_writes_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("d.cfg");
    let mut d = fepanel::simlab::calibrated_logit_design(30, 6, 1, 5);
    d.reps = 4;
    std::fs::write(&design, d.to_config_string()).unwrap();
    let ds = design.to_str().unwrap();
    let table = dir.path().join("t.txt");
    assert_eq!(run(&["simulate", "--design", ds, "--output", table.to_str().unwrap()]), 0);
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.contains("Bias") && text.contains("cov95"), "{text}");
    let js = dir.path().join("s.json");
    let js_s = js.to_str().unwrap();
    assert_eq!(
        run(&["simulate", "--design", ds, "--reps", "3", "--workers", "2", "--format", "json", "--output", js_s]),
        0
    );
    assert_eq!(read_json(&js)["result"]["reps"], 3);
    assert_eq!(run(&["rerun", js_s, "--check"]), 0);
}
