//! Solves the bias-corrected score instead of subtracting the bias from the
//! estimate, and reports whether the root stayed inside the trust region
//! around the fixed-effects estimate.
//!
//! `cargo run --release --example profile_score`

use fepanel::correction::{correct_fit, CorrectionOptions, Method};
use fepanel::estimator::fit;
use fepanel::family::Family;
use fepanel::simlab::{calibrated_logit_design, simulate_panel};

fn main() -> fepanel::Result<()> {
    let design = calibrated_logit_design(250, 6, 2, 8);
    let opts = CorrectionOptions::default();
    println!("{:>4} {:>22} {:>22} {:>22}", "rep", "fixed effects", "one-step", "corrected score");
    for rep in 0..5 {
        let sim = simulate_panel(&design, rep)?;
        let full = fit(&sim.data, &Family::Logit, &opts.solve)?;
        let abc = correct_fit(&sim.data, &Family::Logit, &full, &Method::Abc { trim: 0, iterations: 1 }, &opts)?;
        let psbc = correct_fit(&sim.data, &Family::Logit, &full, &Method::Psbc { trim: 0 }, &opts)?;
        let show = |b: &[f64]| format!("({:+.4}, {:+.4})", b[0], b[1]);
        let flag = if psbc.left_trust_region == Some(true) { " (outside trust region)" } else { "" };
        println!(
            "{rep:>4} {:>22} {:>22} {:>22}{flag}",
            show(&full.beta),
            show(&abc.beta),
            show(&psbc.beta)
        );
    }
    println!("truth ({:+.4}, {:+.4})", design.beta[0], design.beta[1]);
    Ok(())
}
