//! Property tests of the fit, the projection, the corrections and the file formats.

mod common;

use common::{dense_design_full_rank, dense_newton, random_panel, within_balanced, Fam};
use fepanel::correction::Method;
use fepanel::estimator::{fit, two_way_project, SolveOptions};
use fepanel::family::Family;
use fepanel::panel::{read_csv, CsvSchema, Observation, PanelData};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tight() -> SolveOptions {
    SolveOptions {
        tol_grad: 1e-13,
        tol_proj: 1e-13,
        ..Default::default()
    }
}

fn panel(seed: u64, fam: Fam, n: usize, t: usize, d: usize, p_obs: f64) -> Option<PanelData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_panel(&mut rng, fam, n, t, d, p_obs)
}

/// The same panel with outcomes (or covariate `j`) shifted by `a_i + g_t`.
fn shifted(data: &PanelData, a: &[f64], g: &[f64], covariate: Option<usize>) -> PanelData {
    let obs = data
        .observations()
        .into_iter()
        .map(|mut o| {
            let s = a[o.unit] + g[o.period];
            match covariate {
                Some(j) => o.x[j] += s,
                None => o.y += s,
            }
            o
        })
        .collect();
    PanelData::new(data.n_units(), data.n_periods(), obs, data.covariate_names().to_vec()).unwrap()
}

fn fam_strategy() -> impl Strategy<Value = Fam> {
    prop_oneof![Just(Fam::Linear), Just(Fam::Probit), Just(Fam::Logit), Just(Fam::Poisson)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Agreement with full Newton on the dense dummy-variable likelihood.
    #[test]
    fn fit_matches_dense_newton(seed in 0u64..10_000, fam in fam_strategy(), n in 3usize..7, t in 3usize..7) {
        let data = panel(seed, fam, n, t, 2, 0.85);
        prop_assume!(data.is_some());
        let data = data.unwrap();
        prop_assume!(dense_design_full_rank(&data), "coefficients not identified");
        let ours = fit(&data, &fam.family(), &tight());
        let oracle = dense_newton(&data, fam);
        match (ours, oracle) {
            (Ok(f), Some((beta, u))) => {
                for (a, b) in f.beta.iter().zip(&beta) {
                    prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
                }
                for (a, b) in f.u_hat.iter().zip(&u) {
                    prop_assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
                }
            }
            (Err(_), None) => {}
            (Ok(f), None) => prop_assert!(false, "oracle failed where fit gave {:?}", f.beta),
            // On a separated panel the oracle's gradient underflows along the
            // recession direction; its "solution" then has indices in the
            // far tails.
            (Err(e), Some((beta, u))) => {
                let tails = u.iter().any(|v| v.abs() > 6.0);
                // A linear model with as many parameters as observations
                // fits exactly and leaves no variance to estimate.
                let exact = fam == Fam::Linear && data.y().iter().zip(&u).all(|(y, u)| (y - u).abs() < 1e-8);
                prop_assert!(tails || exact, "fit failed ({e}) where the oracle found an interior maximum {beta:?}");
            }
        }
    }

    /// On a balanced panel the linear fit is least squares on two-way
    /// demeaned data.
    #[test]
    fn linear_fit_is_within_least_squares(seed in 0u64..10_000, n in 3usize..9, t in 3usize..9) {
        let data = panel(seed, Fam::Linear, n, t, 2, 1.0);
        prop_assume!(data.is_some());
        let data = data.unwrap();
        let f = fit(&data, &Family::linear(), &tight());
        prop_assume!(f.is_ok());
        let f = f.unwrap();
        let xt: Vec<Vec<f64>> = (0..2).map(|j| within_balanced(&data.x_col(j), n, t)).collect();
        let yt = within_balanced(data.y(), n, t);
        let x = DMatrix::from_fn(n * t, 2, |k, j| xt[j][k]);
        let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * DVector::from_column_slice(&yt))).unwrap();
        for j in 0..2 {
            prop_assert!((f.beta[j] - beta[j]).abs() < 1e-9 * (1.0 + beta[j].abs()));
        }
    }

    /// Outcome shifts absorbed by the effects leave the linear coefficients
    /// unchanged.
    #[test]
    fn linear_fit_ignores_effect_shifts(seed in 0u64..10_000, shift in -5.0f64..5.0) {
        let data = panel(seed, Fam::Linear, 6, 5, 2, 0.8);
        prop_assume!(data.is_some());
        let data = data.unwrap();
        let a: Vec<f64> = (0..6).map(|i| shift * (i as f64).sin()).collect();
        let g: Vec<f64> = (0..5).map(|t| shift * (t as f64 * 0.7).cos()).collect();
        let f0 = fit(&data, &Family::linear(), &tight());
        prop_assume!(f0.is_ok());
        let f1 = fit(&shifted(&data, &a, &g, None), &Family::linear(), &tight()).unwrap();
        for (b0, b1) in f0.unwrap().beta.iter().zip(&f1.beta) {
            prop_assert!((b0 - b1).abs() < 1e-9);
        }
    }

    /// The outer iteration never lowers the profile likelihood.
    #[test]
    fn loglik_path_is_nondecreasing(seed in 0u64..10_000, fam in fam_strategy()) {
        let data = panel(seed, fam, 10, 6, 2, 0.9);
        prop_assume!(data.is_some());
        let f = fit(&data.unwrap(), &fam.family(), &Default::default());
        prop_assume!(f.is_ok());
        let path = f.unwrap().loglik_path;
        for w in path.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10 * (1.0 + w[0].abs()), "{path:?}");
        }
    }

    /// Adding unit and period terms to a covariate does not change its
    /// projection.
    #[test]
    fn projection_annihilates_effects(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let data = panel(seed, Fam::Linear, 7, 5, 1, 0.75);
        prop_assume!(data.is_some());
        let data = data.unwrap();
        let w: Vec<f64> = (0..data.n_obs()).map(|k| 0.2 + scale * ((k as f64) * 0.37).sin().abs()).collect();
        let a: Vec<f64> = (0..7).map(|i| i as f64 - 3.0).collect();
        let g: Vec<f64> = (0..5).map(|t| (t * t) as f64 * 0.1).collect();
        let x0 = two_way_project(&data, &data.x_col(0), &w, &tight());
        prop_assume!(x0.is_ok(), "disconnected panel");
        let x0 = x0.unwrap();
        let moved = shifted(&data, &a, &g, Some(0));
        let x1 = two_way_project(&moved, &moved.x_col(0), &w, &tight()).unwrap();
        for (p, q) in x0.iter().zip(&x1) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    /// Writing a panel and reading it back reproduces every observation
    /// exactly.
    #[test]
    fn csv_round_trip(seed in 0u64..10_000, d in 1usize..4) {
        let data = panel(seed, Fam::Poisson, 5, 4, d, 0.7);
        prop_assume!(data.is_some());
        let data = data.unwrap();
        let mut buf = Vec::new();
        data.write_csv_to(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        let key = |o: &Observation| (o.unit, o.period);
        let mut a = data.observations();
        let mut b = back.observations();
        a.sort_by_key(key);
        b.sort_by_key(key);
        prop_assert_eq!(a, b);
        prop_assert_eq!(data.covariate_names(), back.covariate_names());
    }

    /// Method specifications parse back to the same method.
    #[test]
    fn method_spec_round_trip(trim in 0usize..5, iterations in 1usize..5, splits in 1usize..9, seed in any::<u64>()) {
        let cases = [
            (format!("abc(trim={trim}, iterations={iterations})"), Method::Abc { trim, iterations }),
            (format!("sbc(splits={splits}, seed={seed})"), Method::Sbc { splits, seed }),
            (format!("psbc(trim={trim})"), Method::Psbc { trim }),
            ("jbc".to_string(), Method::Jbc),
            ("hbc".to_string(), Method::Hbc),
            ("fe".to_string(), Method::Fe),
        ];
        for (text, want) in cases {
            prop_assert_eq!(text.parse::<Method>().unwrap(), want);
        }
    }
}

/// Part of this panel is perfectly separated: the likelihood levels off
/// with some indices near ±300 while the scores of those observations
/// underflow to zero.
#[test]
fn quasi_separated_logit_is_rejected() {
    let data = panel(1160, Fam::Logit, 5, 4, 2, 0.85).unwrap();
    let err = fit(&data, &Family::Logit, &Default::default()).unwrap_err();
    assert!(matches!(err, fepanel::Error::Separation { .. }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The one-step analytical correction subtracts exactly the reported
    /// bias estimate.
    #[test]
    fn abc_subtracts_reported_bias(seed in 0u64..10_000, trim in 0usize..3) {
        use fepanel::correction::{correct, CorrectionOptions};
        let data = panel(seed, Fam::Logit, 30, 6, 2, 0.9);
        prop_assume!(data.is_some());
        let est = correct(&data.unwrap(), &Family::Logit, &Method::Abc { trim, iterations: 1 }, &CorrectionOptions::default());
        prop_assume!(est.is_ok());
        let est = est.unwrap();
        let bias = est.bias.as_ref().unwrap();
        let corr = bias.correction();
        for j in 0..2 {
            let want = est.fe_beta[j] - (bias.b_hat[j] / bias.tbar + bias.d_hat[j] / bias.nbar);
            prop_assert!((est.beta[j] - want).abs() < 1e-14 * (1.0 + want.abs()));
            prop_assert!((corr[j] - (est.fe_beta[j] - est.beta[j])).abs() < 1e-14 * (1.0 + corr[j].abs()));
        }
    }
}
