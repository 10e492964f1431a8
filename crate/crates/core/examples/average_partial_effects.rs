//! Average partial effects of a probit: plug-in and jackknife corrected, with standard errors for the three averaging
//! targets.
//!
//! `cargo run --release --example average_partial_effects`

use fepanel::correction::{CorrectionOptions, Method, SubpanelPolicy};
use fepanel::effects::{ape, corrected_ape_from_fit, ApeTarget};
use fepanel::estimator::fit;
use fepanel::family::{EffectSpec, Family};
use fepanel::simlab::{calibrated_logit_design, simulate_panel};

fn main() -> fepanel::Result<()> {
    let mut design = calibrated_logit_design(300, 8, 2, 17);
    design.family = Family::Probit;
    let sim = simulate_panel(&design, 0)?;
    let data = &sim.data;
    let full = fit(data, &Family::Probit, &Default::default())?;

    // Covariate 0 is continuous, covariate 1 is an indicator.
    let specs = [EffectSpec::marginal(0), EffectSpec::discrete(1)];
    for spec in &specs {
        let name = &data.covariate_names()[spec.covariate];
        println!("{name} ({:?})", spec.mode);
        for target in [ApeTarget::InSample, ApeTarget::SamplePeriods, ApeTarget::Population] {
            let r = ape(data, &full, spec, target)?;
            println!("  plug-in {:.5}  se[{target:?}] {:.5}", r.estimate, r.se);
        }
    }

    let opts = CorrectionOptions {
        policy: SubpanelPolicy::DropNonVarying,
        ..Default::default()
    };
    for method in [Method::Jbc, Method::Sbc { splits: 1, seed: 0 }] {
        for spec in &specs {
            let r = corrected_ape_from_fit(data, &Family::Probit, &full, spec, ApeTarget::InSample, &method, &opts)?;
            println!(
                "{:>4} {}: {:.5} (fixed effects {:.5})",
                method.label(),
                r.covariate,
                r.estimate,
                r.fe_estimate
            );
        }
    }
    Ok(())
}
