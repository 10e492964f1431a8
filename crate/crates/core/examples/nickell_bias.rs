//! Dynamic linear panel: the fixed-effects estimate of the autoregressive
//! coefficient is biased downwards by about (1 + ρ)/T. The analytical
//! correction needs a lag window of at least one period to see the
//! feedback; the jackknives need no tuning.
//!
//! `cargo run --release --example nickell_bias [reps]`

use fepanel::correction::Method;
use fepanel::family::Family;
use fepanel::simlab::{run_mc, McDesign, Regressor};

fn main() -> fepanel::Result<()> {
    let reps = std::env::args().nth(1).map_or(Ok(50), |s| s.parse()).expect("reps must be an integer");
    let rho = 0.5;
    let mut design = McDesign::new(300, 10, Family::linear()).with_regressor(Regressor::LaggedOutcome, rho);
    design.label = "linear AR(1)".into();
    design.reps = reps;
    design.seed = 31;
    design.estimators = vec![
        Method::Fe,
        Method::Abc { trim: 0, iterations: 1 },
        Method::Abc { trim: 1, iterations: 1 },
        Method::Abc { trim: 3, iterations: 1 },
        Method::Sbc { splits: 1, seed: 0 },
        Method::Hbc,
    ];
    let report = run_mc(&design, 0)?;
    println!("(1 + rho)/T = {:.3}", (1.0 + rho) / 10.0);
    for e in &report.estimators {
        let c = &e.coefficients[0];
        let trim = match e.method {
            Method::Abc { trim, .. } => format!(" M={trim}"),
            _ => String::new(),
        };
        println!("{:>8} bias {:+.4} (± {:.4})  sd {:.4}", format!("{}{trim}", e.label), c.bias, c.bias_mc_se, c.sd);
    }
    Ok(())
}
