//! Plug-in estimates of the leading bias terms `B/T̄ + D/N̄` of the
//! fixed-effects estimator.
//!
//! With single-index likelihoods every derivative in the bias expressions
//! is a scalar derivative of the log-density times a covariate factor:
//! `ℓ^α = g1`, `ℓ^{αα} = g2`, `ℓ*^{βα} = x̃ g2`, `ℓ*^{βαα} = x̃ g3`, and
//! symmetrically for the period effects. Per unit `i`
//!
//! ```text
//! B_i = Σ_{t ∈ D_i} [ g1_t Σ_{s ∈ D_i, t ≤ s ≤ t+M} x̃_s g2_s + x̃_t g3_t / 2 ] / Σ_{t ∈ D_i} ω_t
//! ```
//!
//! and `B̂ = Ĥ⁻¹ mean_i B_i`; the period term is the same without the lag
//! window. Denominators use the expected weights ω. Unbalanced panels need
//! no special case: every sum runs over observed cells only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{serialize_matrix, spd_inverse, FitResult};
use crate::family::Family;
use crate::panel::PanelData;

/// Which moments enter the numerators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Moments {
    /// Realized derivatives at the fitted values (valid with predetermined
    /// covariates through the lag window).
    #[default]
    Realized,
    /// Conditional expectations `E[g1 g2 | u]` and `E[g3 | u]` at the
    /// fitted index. Only for strictly exogenous covariates (`trim = 0`).
    Expected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasOptions {
    /// Lag window `M` of the unit term.
    pub trim: usize,
    pub moments: Moments,
    /// Use the sandwich `Ĥ⁻¹ Ω̂ Ĥ⁻¹/n` for the covariance of corrected
    /// estimates instead of `Ĥ⁻¹/n`.
    pub sandwich: bool,
}

impl Default for BiasOptions {
    fn default() -> Self {
        BiasOptions {
            trim: 0,
            moments: Moments::Realized,
            sandwich: false,
        }
    }
}

/// Bias estimates at one fit.
#[derive(Clone, Debug, Serialize)]
pub struct BiasEstimates {
    pub b_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    /// `Ĥ B̂`, the unit term on the score scale.
    pub b_score: Vec<f64>,
    /// `Ĥ D̂`.
    pub d_score: Vec<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub h_hat: DMatrix<f64>,
    pub trim: usize,
    pub moments: Moments,
    pub info_equality_used: bool,
    /// Labels of units left out of the unit average because `|D_i| ≤ M`.
    pub skipped_units: Vec<String>,
    pub tbar: f64,
    pub nbar: f64,
}

impl BiasEstimates {
    /// `B̂/T̄ + D̂/N̄`.
    pub fn correction(&self) -> Vec<f64> {
        self.b_hat
            .iter()
            .zip(&self.d_hat)
            .map(|(b, d)| b / self.tbar + d / self.nbar)
            .collect()
    }
}

/// Per-observation derivative terms shared by the unit and period sums.
struct Terms {
    g1: Vec<f64>,
    g2: Vec<f64>,
    /// Expected-mode numerator factor `E[g1 g2] + E[g3]/2`, or the realized
    /// `g3/2`.
    local: Vec<f64>,
}

fn terms(data: &PanelData, fit: &FitResult, moments: Moments) -> Result<Terms> {
    let n = data.n_obs();
    let fam: &Family = &fit.family;
    let y = data.y();
    let (mut g1, mut g2, mut local) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        let u = fit.u_hat[k];
        match moments {
            Moments::Realized => {
                let d = fam.index_derivs(y[k], u)?;
                g1[k] = d.g1;
                g2[k] = d.g2;
                local[k] = 0.5 * d.g3;
            }
            Moments::Expected => {
                let (e12, e3) = fam.expected_bias_moments(u).ok_or_else(|| {
                    Error::InvalidOption(format!("family {} has no expected bias moments", fam.name()))
                })?;
                local[k] = e12 + 0.5 * e3;
            }
        }
    }
    Ok(Terms { g1, g2, local })
}

fn check_fit(data: &PanelData, fit: &FitResult) -> Result<()> {
    if fit.n_obs() != data.n_obs() || fit.n_covariates() != data.n_covariates() {
        return Err(Error::Input("fit does not belong to this panel".into()));
    }
    Ok(())
}

/// Unit term on the score scale, `mean_i B_i`, and the skipped units.
pub fn b_score(data: &PanelData, fit: &FitResult, trim: usize, moments: Moments) -> Result<(Vec<f64>, Vec<usize>)> {
    check_fit(data, fit)?;
    if moments == Moments::Expected && trim > 0 {
        return Err(Error::InvalidOption(
            "expected moments assume strictly exogenous covariates; use trim 0".into(),
        ));
    }
    let tm = terms(data, fit, moments)?;
    let d = fit.n_covariates();
    let idx = data.index();
    let periods = data.periods();
    let mut total = vec![0.0; d];
    let mut used = 0usize;
    let mut skipped = Vec::new();
    let mut num = vec![0.0; d];
    for i in 0..idx.n_units() {
        let r = idx.unit_obs(i);
        if r.len() <= trim {
            skipped.push(i);
            continue;
        }
        num.fill(0.0);
        let mut den = 0.0;
        for a in r.clone() {
            den += fit.omega_hat[a];
            let xa = fit.xtilde_row(a);
            for j in 0..d {
                num[j] += tm.local[a] * xa[j];
            }
            if moments == Moments::Realized {
                let ta = periods[a];
                for b in a..r.end {
                    if periods[b] > ta + trim {
                        break;
                    }
                    let xb = fit.xtilde_row(b);
                    let f = tm.g1[a] * tm.g2[b];
                    for j in 0..d {
                        num[j] += f * xb[j];
                    }
                }
            }
        }
        if !(den > 0.0) {
            return Err(Error::Singular(format!("zero weight sum for unit {}", data.unit_labels()[i])));
        }
        for j in 0..d {
            total[j] += num[j] / den;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidOption(format!("every unit has at most {trim} observations")));
    }
    for v in total.iter_mut() {
        *v /= used as f64;
    }
    Ok((total, skipped))
}

/// Period term on the score scale, `mean_t D_t`.
pub fn d_score(data: &PanelData, fit: &FitResult, moments: Moments) -> Result<Vec<f64>> {
    check_fit(data, fit)?;
    let tm = terms(data, fit, moments)?;
    let d = fit.n_covariates();
    let idx = data.index();
    let mut total = vec![0.0; d];
    let mut num = vec![0.0; d];
    for t in 0..idx.n_periods() {
        num.fill(0.0);
        let mut den = 0.0;
        for &k in idx.period_obs(t) {
            den += fit.omega_hat[k];
            let f = tm.local[k] + tm.g1[k] * tm.g2[k];
            for (nj, xj) in num.iter_mut().zip(fit.xtilde_row(k)) {
                *nj += f * xj;
            }
        }
        if !(den > 0.0) {
            return Err(Error::Singular(format!("zero weight sum for period {}", data.period_labels()[t])));
        }
        for j in 0..d {
            total[j] += num[j] / den;
        }
    }
    for v in total.iter_mut() {
        *v /= idx.n_periods() as f64;
    }
    Ok(total)
}

/// `B̂ = Ĥ⁻¹ mean_i B_i`.
pub fn estimate_b(data: &PanelData, fit: &FitResult, trim: usize, moments: Moments) -> Result<Vec<f64>> {
    let (b, _) = b_score(data, fit, trim, moments)?;
    premultiply(&fit.h_hat, &b)
}

/// `D̂ = Ĥ⁻¹ mean_t D_t`.
pub fn estimate_d(data: &PanelData, fit: &FitResult, moments: Moments) -> Result<Vec<f64>> {
    let dd = d_score(data, fit, moments)?;
    premultiply(&fit.h_hat, &dd)
}

fn premultiply(h: &DMatrix<f64>, v: &[f64]) -> Result<Vec<f64>> {
    let hinv = spd_inverse(h)?;
    Ok((hinv * DVector::from_column_slice(v)).iter().copied().collect())
}

/// Both bias terms with their metadata. Units skipped for `|D_i| ≤ M` are
/// logged as warnings and listed in the result.
pub fn estimate_bias(data: &PanelData, fit: &FitResult, opts: &BiasOptions) -> Result<BiasEstimates> {
    let (b, skipped) = b_score(data, fit, opts.trim, opts.moments)?;
    let dd = d_score(data, fit, opts.moments)?;
    if !skipped.is_empty() {
        log::warn!(
            "{} unit(s) with at most {} observations left out of the unit bias term",
            skipped.len(),
            opts.trim
        );
    }
    let hinv = spd_inverse(&fit.h_hat)?;
    let b_hat = (&hinv * DVector::from_column_slice(&b)).iter().copied().collect();
    let d_hat = (&hinv * DVector::from_column_slice(&dd)).iter().copied().collect();
    Ok(BiasEstimates {
        b_hat,
        d_hat,
        b_score: b,
        d_score: dd,
        h_hat: fit.h_hat.clone(),
        trim: opts.trim,
        moments: opts.moments,
        info_equality_used: !opts.sandwich,
        skipped_units: skipped.iter().map(|&i| data.unit_labels()[i].clone()).collect(),
        tbar: data.index().tbar(),
        nbar: data.index().nbar(),
    })
}

/// Closed-form probit bias for strictly exogenous covariates:
/// `B = ½ Ĥ⁻¹ mean_i{ E_T[ω x̃ x̃'] / E_T ω } β̂` and the period analogue.
pub fn probit_closed_form(data: &PanelData, fit: &FitResult) -> Result<(Vec<f64>, Vec<f64>)> {
    check_fit(data, fit)?;
    if !matches!(fit.family, Family::Probit) {
        return Err(Error::InvalidOption("closed-form bias is specific to the probit family".into()));
    }
    let d = fit.n_covariates();
    let idx = data.index();
    let beta = DVector::from_column_slice(&fit.beta);
    let block = |obs: &mut dyn Iterator<Item = usize>| {
        let mut m = DMatrix::<f64>::zeros(d, d);
        let mut den = 0.0;
        for k in obs {
            let w = fit.omega_hat[k];
            let x = DVector::from_column_slice(fit.xtilde_row(k));
            m += w * &x * x.transpose();
            den += w;
        }
        m / den
    };
    let mut mb = DMatrix::<f64>::zeros(d, d);
    for i in 0..idx.n_units() {
        mb += block(&mut idx.unit_obs(i));
    }
    mb /= idx.n_units() as f64;
    let mut md = DMatrix::<f64>::zeros(d, d);
    for t in 0..idx.n_periods() {
        md += block(&mut idx.period_obs(t).iter().copied());
    }
    md /= idx.n_periods() as f64;
    let hinv = spd_inverse(&fit.h_hat)?;
    let b = 0.5 * &hinv * mb * &beta;
    let dd = 0.5 * &hinv * md * &beta;
    Ok((b.iter().copied().collect(), dd.iter().copied().collect()))
}
