//! Compares the leave-one-out, split-panel and hybrid jackknife corrections
//! on one panel, together with the subpanel estimates they combine.
//!
//! `cargo run --release --example jackknife_corrections`

use fepanel::correction::{correct_fit, CorrectionOptions, Method, SubpanelPolicy};
use fepanel::estimator::fit;
use fepanel::family::Family;
use fepanel::simlab::{calibrated_logit_design, simulate_panel};

fn main() -> fepanel::Result<()> {
    let design = calibrated_logit_design(150, 8, 1, 21);
    let sim = simulate_panel(&design, 0)?;
    let data = &sim.data;
    let opts = CorrectionOptions {
        // Subpanels may lose outcome variation for some units; drop them there.
        policy: SubpanelPolicy::DropNonVarying,
        ..Default::default()
    };
    let full = fit(data, &Family::Logit, &opts.solve)?;
    println!("truth {:.3}, fixed effects {:.4}", design.beta[0], full.beta[0]);

    for method in [Method::Jbc, Method::Sbc { splits: 4, seed: 1 }, Method::Hbc] {
        let est = correct_fit(data, &Family::Logit, &full, &method, &opts)?;
        let subs = est.subestimates.as_ref().map_or(0, |s| s.subpanel_fits);
        println!("{:>4} {:.4}  from {subs} subpanel fits", est.method.label(), est.beta[0]);
        for w in &est.warnings {
            println!("     warning: {w}");
        }
    }
    Ok(())
}
