//! Average partial effects against brute-force recomputation.

mod common;

use common::{random_panel, Fam};
use fepanel::correction::{CorrectionOptions, Method, SubpanelPolicy};
use fepanel::effects::{ape, corrected_ape, ApeTarget};
use fepanel::estimator::{fit, SolveOptions};
use fepanel::family::{norm_pdf, EffectSpec, Family};
use fepanel::panel::{PanelData, SplitScheme};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tight() -> SolveOptions {
    SolveOptions {
        tol_grad: 1e-12,
        tol_proj: 1e-12,
        ..Default::default()
    }
}

/// Removes units and periods whose outcomes are all equal until none is
/// left.
fn drop_constant(mut data: PanelData) -> PanelData {
    loop {
        let constant = |ks: Vec<usize>| ks.windows(2).all(|w| data.y()[w[0]] == data.y()[w[1]]);
        let units: Vec<usize> = (0..data.n_units())
            .filter(|&i| constant((0..data.n_obs()).filter(|&k| data.unit_of(k) == i).collect()))
            .collect();
        let periods: Vec<usize> = (0..data.n_periods())
            .filter(|&t| constant((0..data.n_obs()).filter(|&k| data.period_of(k) == t).collect()))
            .collect();
        if units.is_empty() && periods.is_empty() {
            return data;
        }
        data = data.drop(&units, &periods).unwrap().data;
    }
}

/// Probit marginal effect of covariate 0 averaged over `cells` cells, the
/// cells missing from `data` counting as zero.
fn padded_marginal_ape(data: &PanelData, cells: usize) -> f64 {
    let f = fit(data, &Family::Probit, &tight()).unwrap();
    let sum: f64 = (0..data.n_obs()).map(|k| f.beta[0] * norm_pdf(f.u_hat[k])).sum();
    sum / cells as f64
}

#[test]
fn jackknife_ape_counts_dropped_cells_as_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (n, t) = (24, 5);
    let data = (0..200)
        .filter_map(|_| random_panel(&mut rng, Fam::Probit, n, t, 1, 1.0))
        .map(drop_constant)
        .find(|d| d.n_units() >= 15)
        .unwrap();
    let (n, t) = (data.n_units(), data.n_periods());
    let opts = CorrectionOptions {
        solve: tight(),
        policy: SubpanelPolicy::DropNonVarying,
        ..Default::default()
    };
    let got = corrected_ape(&data, &Family::Probit, &EffectSpec::marginal(0), ApeTarget::InSample, &Method::Jbc, &opts)
        .unwrap();
    assert!(got.subestimates.as_ref().unwrap().dropped_units > 0, "no subpanel lost a unit");

    let full = padded_marginal_ape(&data, data.n_obs());
    let loo = |scheme: SplitScheme| {
        let sub = data.subpanel(&scheme).unwrap().data;
        let cells = sub.n_obs();
        padded_marginal_ape(&drop_constant(sub), cells)
    };
    let unit_mean = (0..n).map(|i| loo(SplitScheme::LeaveUnitOut(i))).sum::<f64>() / n as f64;
    let period_mean = (0..t).map(|s| loo(SplitScheme::LeavePeriodOut(s))).sum::<f64>() / t as f64;
    let want = (n + t - 1) as f64 * full - (n - 1) as f64 * unit_mean - (t - 1) as f64 * period_mean;
    assert!((got.fe_estimate - full).abs() < 1e-10);
    assert!((got.estimate - want).abs() < 1e-8, "{} vs {want}", got.estimate);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// In the linear model the marginal effect is the coefficient itself
    /// in every cell.
    #[test]
    fn linear_marginal_ape_is_the_coefficient(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_panel(&mut rng, Fam::Linear, 6, 5, 2, 0.8);
        prop_assume!(data.is_some());
        let data = data.unwrap();
        let f = fit(&data, &Family::linear(), &Default::default());
        prop_assume!(f.is_ok());
        let f = f.unwrap();
        for j in 0..2 {
            let r = ape(&data, &f, &EffectSpec::marginal(j), ApeTarget::Population).unwrap();
            prop_assert!((r.estimate - f.beta[j]).abs() < 1e-12);
        }
    }

    /// A discrete change is the difference of the two probabilities, and
    /// the marginal effect is their derivative.
    #[test]
    fn logit_effects_match_direct_evaluation(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_panel(&mut rng, Fam::Logit, 8, 6, 1, 1.0);
        prop_assume!(data.is_some());
        let data = data.unwrap();
        let f = fit(&data, &Family::Logit, &Default::default());
        prop_assume!(f.is_ok());
        let f = f.unwrap();
        let p = |u: f64| 1.0 / (1.0 + (-u).exp());
        let marginal: f64 = f.u_hat.iter().map(|&u| f.beta[0] * p(u) * (1.0 - p(u))).sum::<f64>() / data.n_obs() as f64;
        let r = ape(&data, &f, &EffectSpec::marginal(0), ApeTarget::InSample).unwrap();
        prop_assert!((r.estimate - marginal).abs() < 1e-12);
    }
}
