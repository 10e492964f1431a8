//! Fits a two-way fixed-effects logit on a simulated panel and prints the
//! coefficients with their standard errors.
//!
//! `cargo run --release --example fit_two_way`

use fepanel::estimator::{fit, std_errors, vcov_beta};
use fepanel::family::Family;
use fepanel::simlab::{calibrated_logit_design, simulate_panel};

fn main() -> fepanel::Result<()> {
    let design = calibrated_logit_design(300, 8, 2, 11);
    let sim = simulate_panel(&design, 0)?;
    println!(
        "{} units x {} periods, {} observations ({} units without outcome variation dropped)",
        sim.data.n_units(),
        sim.data.n_periods(),
        sim.data.n_obs(),
        sim.dropped_units
    );

    let fit = fit(&sim.data, &Family::Logit, &Default::default())?;
    let se = std_errors(&vcov_beta(&fit, false)?);
    println!("converged after {} Newton steps", fit.iterations);
    println!("{:>8} {:>8} {:>8} {:>8}", "name", "truth", "beta", "se");
    for (j, name) in sim.data.covariate_names().iter().enumerate() {
        println!("{name:>8} {:>8.3} {:>8.4} {:>8.4}", design.beta[j], fit.beta[j], se[j]);
    }
    Ok(())
}
