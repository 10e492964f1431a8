//! Analytical corrections: bias subtraction and profile-score correction.

use nalgebra::DVector;

use super::plugin::{b_score, d_score, estimate_bias, BiasOptions};
use super::{check_trim, CorrectedEstimate, CorrectionOptions, Method};
use crate::error::{Error, Result};
use crate::estimator::{evaluate_at, fit, spd_solve, FitResult};
use crate::family::Family;
use crate::panel::PanelData;

/// `β̂ − B̂/T̄ − D̂/N̄`. With `iterations = k > 1` the bias terms are
/// re-evaluated at the previous corrected value, with the effects
/// re-profiled there, and subtracted from β̂ again.
pub fn abc(
    data: &PanelData,
    family: &Family,
    trim: usize,
    iterations: usize,
    opts: &CorrectionOptions,
) -> Result<CorrectedEstimate> {
    let full = fit(data, family, &opts.solve)?;
    abc_from_fit(data, family, &full, trim, iterations, opts)
}

pub fn abc_from_fit(
    data: &PanelData,
    family: &Family,
    full: &FitResult,
    trim: usize,
    iterations: usize,
    opts: &CorrectionOptions,
) -> Result<CorrectedEstimate> {
    if iterations == 0 {
        return Err(Error::InvalidOption("ABC needs at least one iteration".into()));
    }
    check_trim(data, trim)?;
    let bopts = BiasOptions {
        trim,
        moments: opts.moments,
        sandwich: opts.sandwich,
    };
    let mut bias = estimate_bias(data, full, &bopts)?;
    let mut beta = subtract(&full.beta, &bias.correction());
    for _ in 1..iterations {
        let at = evaluate_at(data, family, &beta, Some(&full.alpha), Some(&full.gamma), &opts.solve)?;
        bias = estimate_bias(data, &at, &bopts)?;
        beta = subtract(&full.beta, &bias.correction());
    }
    let mut out = CorrectedEstimate::new(Method::Abc { trim, iterations }, beta, full, opts)?;
    if !bias.skipped_units.is_empty() {
        out.warnings.push(format!(
            "{} unit(s) with at most {trim} observations left out of the unit bias term",
            bias.skipped_units.len()
        ));
    }
    out.bias = Some(bias);
    Ok(out)
}

fn subtract(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Root of the corrected profile score
/// `E_n[g1 x](β) − b̂(β)/T̄ − d̂(β)/N̄`, where `b̂ = Ĥ B̂` and `d̂ = Ĥ D̂`
/// are re-evaluated at every iterate. Newton steps use `Ĥ(β)`; the search
/// starts at β̂ and therefore finds the root nearest to it in the usual
/// case.
pub fn psbc(data: &PanelData, family: &Family, trim: usize, opts: &CorrectionOptions) -> Result<CorrectedEstimate> {
    let full = fit(data, family, &opts.solve)?;
    psbc_from_fit(data, family, &full, trim, opts)
}

pub fn psbc_from_fit(
    data: &PanelData,
    family: &Family,
    full: &FitResult,
    trim: usize,
    opts: &CorrectionOptions,
) -> Result<CorrectedEstimate> {
    check_trim(data, trim)?;
    let idx = data.index();
    let (tbar, nbar) = (idx.tbar(), idx.nbar());
    let tol = 10.0 * opts.solve.tol_grad;
    let bopts = BiasOptions {
        trim,
        moments: opts.moments,
        sandwich: opts.sandwich,
    };
    let fe_bias = estimate_bias(data, full, &bopts)?;
    let fe_se = super::CorrectedEstimate::new(Method::Fe, full.beta.clone(), full, opts)?.se;
    // Trust region: a few multiples of the analytical correction or of the
    // standard errors, whichever is larger.
    let radius: Vec<f64> = fe_bias
        .correction()
        .iter()
        .zip(&fe_se)
        .map(|(c, s)| (3.0 * c.abs()).max(10.0 * s))
        .collect();

    let mut beta = full.beta.clone();
    let mut at = full.clone();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let score = mean_score(data, &at)?;
        let (b, _) = b_score(data, &at, trim, opts.moments)?;
        let dd = d_score(data, &at, opts.moments)?;
        let s: Vec<f64> = (0..beta.len()).map(|j| score[j] - b[j] / tbar - dd[j] / nbar).collect();
        if s.iter().all(|v| v.abs() <= tol) {
            converged = true;
            break;
        }
        let step = spd_solve(&at.h_hat, &DVector::from_vec(s))?;
        for (bj, sj) in beta.iter_mut().zip(step.iter()) {
            *bj += sj;
        }
        at = evaluate_at(data, family, &beta, Some(&at.alpha), Some(&at.gamma), &opts.solve)?;
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "root search of the corrected profile score".into(),
            iterations: opts.max_iter,
        });
    }
    let outside = beta
        .iter()
        .zip(&full.beta)
        .zip(&radius)
        .any(|((b, f), r)| (b - f).abs() > *r);
    let mut out = CorrectedEstimate::new(Method::Psbc { trim }, beta, full, opts)?;
    out.left_trust_region = Some(outside);
    if outside {
        out.warnings.push(
            "corrected score root lies outside the trust region around the fixed-effects estimate; \
             the corrected score may have several roots"
                .into(),
        );
    }
    out.bias = Some(fe_bias);
    Ok(out)
}

/// `E_n[g1 x]` at a fit.
pub(crate) fn mean_score(data: &PanelData, fit: &FitResult) -> Result<Vec<f64>> {
    let d = fit.n_covariates();
    let y = data.y();
    let mut s = vec![0.0; d];
    for k in 0..data.n_obs() {
        let g1 = fit.family.index_derivs(y[k], fit.u_hat[k])?.g1;
        for (sj, xj) in s.iter_mut().zip(data.x_row(k)) {
            *sj += g1 * xj;
        }
    }
    let n = data.n_obs() as f64;
    Ok(s.into_iter().map(|v| v / n).collect())
}
