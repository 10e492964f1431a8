//! Writes a panel to CSV, reads it back with an explicit column schema and
//! runs the pre-estimation checks.
//!
//! `cargo run --release --example csv_validate`

use fepanel::family::Family;
use fepanel::panel::{load_csv, CsvSchema, Observation, PanelData};
use fepanel::simlab::{calibrated_logit_design, simulate_panel};
use fepanel::validate::{validate, ValidateOptions};

fn main() -> fepanel::Result<()> {
    let design = calibrated_logit_design(60, 5, 2, 9);
    let sim = simulate_panel(&design, 0)?;
    // Append a unit that is never employed and one observed only once.
    let (n, t) = (sim.data.n_units(), sim.data.n_periods());
    let mut obs = sim.data.observations();
    for s in 0..t {
        obs.push(Observation { unit: n, period: s, y: 0.0, x: vec![0.1 * s as f64, 0.0] });
    }
    obs.push(Observation { unit: n + 1, period: 0, y: 1.0, x: vec![0.3, 1.0] });
    let panel = PanelData::new(n + 2, t, obs, sim.data.covariate_names().to_vec())?;
    let path = std::env::temp_dir().join("fepanel_example.csv");
    panel.write_csv(&path)?;
    println!("wrote {}", path.display());

    let schema = CsvSchema {
        covariates: Some(vec!["x1".into(), "x2".into()]),
        ..Default::default()
    };
    let data = load_csv(&path, &schema)?;
    println!("covariate kinds: {:?}", data.covariate_kinds());

    let report = validate(&data, &Family::Logit, &ValidateOptions::default());
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
