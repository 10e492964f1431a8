//! Estimates the two leading bias terms of the fixed-effects logit and
//! subtracts them, once and iterated.
//!
//! `cargo run --release --example analytical_correction`

use fepanel::correction::{correct_fit, estimate_bias, BiasOptions, CorrectionOptions, Method};
use fepanel::estimator::fit;
use fepanel::family::Family;
use fepanel::simlab::{calibrated_logit_design, simulate_panel};

fn main() -> fepanel::Result<()> {
    let design = calibrated_logit_design(400, 6, 2, 3);
    let sim = simulate_panel(&design, 0)?;
    let data = &sim.data;
    let full = fit(data, &Family::Logit, &Default::default())?;

    let bias = estimate_bias(data, &full, &BiasOptions::default())?;
    println!("T̄ = {:.2}, N̄ = {:.2}", bias.tbar, bias.nbar);
    println!("unit term   B̂ = {:?}", bias.b_hat);
    println!("period term D̂ = {:?}", bias.d_hat);
    println!("correction  B̂/T̄ + D̂/N̄ = {:?}", bias.correction());

    let opts = CorrectionOptions::default();
    println!("{:>6} {:>10} {:>10}", "method", "beta[0]", "beta[1]");
    println!("{:>6} {:>10.4} {:>10.4}", "truth", design.beta[0], design.beta[1]);
    for method in [
        Method::Fe,
        Method::Abc { trim: 0, iterations: 1 },
        Method::Abc { trim: 0, iterations: 3 },
        Method::Psbc { trim: 0 },
    ] {
        let est = correct_fit(data, &Family::Logit, &full, &method, &opts)?;
        println!("{:>6} {:>10.4} {:>10.4}", est.method.label(), est.beta[0], est.beta[1]);
    }
    Ok(())
}
