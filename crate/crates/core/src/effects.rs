//! Average partial effects (APEs) and their standard errors.
//!
//! The plug-in APE is the mean of the per-observation partial effects at
//! the fitted parameters and effects. Its standard error depends on the
//! target:
//!
//! * in-sample (`nt`): parameter-estimation noise only, by the delta method
//!   with the covariance `Ĥ⁻¹/n` of β̂;
//! * population (`pop`): adds the two-way cluster variance of the
//!   per-observation effects, `N⁻² Σ_i (δ̄_i − δ̂)² N/(N−1) + T⁻² Σ_t (δ̄_t − δ̂)² T/(T−1)`;
//! * sample periods (`t`): adds only the unit-cluster term, the sampling
//!   variation over units when the periods are held fixed.
//!
//! For the delta method the effects respond to β through the profiled
//! effects: `φ_it(β) = φ̂_it + (x̃_it − x_it)'(β − β̂)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::correction::jackknife::{combine_statistic, Context};
use crate::correction::{CorrectionOptions, Method, Subestimates};
use crate::error::{Error, Result};
use crate::estimator::{fit, vcov_beta, Estimates, FitResult};
use crate::family::{EffectSpec, Family};
use crate::panel::PanelData;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum ApeTarget {
    /// Average over the observed cells.
    #[serde(rename = "nt")]
    #[value(name = "nt")]
    InSample,
    /// Average in the population of units and periods.
    #[serde(rename = "pop")]
    #[value(name = "pop")]
    Population,
    /// Average over the population of units in the sample periods.
    #[serde(rename = "t")]
    #[value(name = "t")]
    SamplePeriods,
}

#[derive(Clone, Debug, Serialize)]
pub struct ApeResult {
    pub covariate: String,
    pub spec: EffectSpec,
    pub target: ApeTarget,
    pub method: Method,
    pub estimate: f64,
    /// Uncorrected plug-in APE.
    pub fe_estimate: f64,
    pub se: f64,
    pub n_obs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subestimates: Option<Subestimates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<f64>>,
}

fn check_spec(data: &PanelData, spec: &EffectSpec) -> Result<()> {
    let kinds = data.covariate_kinds();
    if spec.covariate >= kinds.len() {
        return Err(Error::EffectSpec(format!(
            "covariate index {} out of range for {} covariates",
            spec.covariate,
            kinds.len()
        )));
    }
    spec.check_kind(kinds[spec.covariate])
}

/// Per-observation effects at given parameters and effects.
fn effects_at(data: &PanelData, family: &Family, beta: &[f64], phi: impl Fn(usize) -> f64, spec: &EffectSpec) -> Vec<f64> {
    (0..data.n_obs())
        .map(|k| family.partial_effect_unchecked(data.x_row(k), beta, phi(k), spec))
        .collect()
}

/// Partial effect `δ_it(α̂_i, γ̂_t, β̂)` for every observed cell.
pub fn effect_matrix(data: &PanelData, fit: &FitResult, spec: &EffectSpec) -> Result<Vec<f64>> {
    check_spec(data, spec)?;
    Ok(effects_at(
        data,
        &fit.family,
        &fit.beta,
        |k| fit.alpha[data.unit_of(k)] + fit.gamma[data.period_of(k)],
        spec,
    ))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Plug-in APE with the standard error of the chosen target.
pub fn ape(data: &PanelData, fit: &FitResult, spec: &EffectSpec, target: ApeTarget) -> Result<ApeResult> {
    let delta = effect_matrix(data, fit, spec)?;
    if delta.is_empty() {
        return Err(Error::Empty("no observations to average".into()));
    }
    let est = mean(&delta);
    let se = ape_se(data, fit, spec, target, &delta)?;
    Ok(ApeResult {
        covariate: data.covariate_names()[spec.covariate].clone(),
        spec: *spec,
        target,
        method: Method::Fe,
        estimate: est,
        fe_estimate: est,
        se,
        n_obs: data.n_obs(),
        subestimates: None,
        components: Some(delta),
    })
}

/// Standard error of the plug-in APE for `target`, given the
/// per-observation effects at the fit.
pub fn ape_se(data: &PanelData, fit: &FitResult, spec: &EffectSpec, target: ApeTarget, delta: &[f64]) -> Result<f64> {
    let v = vcov_beta(fit, false)?;
    let jac = DVector::from_vec(jacobian(data, fit, spec));
    let mut var = (jac.transpose() * &v * &jac)[(0, 0)].max(0.0);
    if target != ApeTarget::InSample {
        var += cluster_terms(data, delta, target);
    }
    Ok(var.sqrt())
}

/// Cluster variance terms of the mean of `delta`.
pub fn cluster_terms(data: &PanelData, delta: &[f64], target: ApeTarget) -> f64 {
    let idx = data.index();
    let est = mean(delta);
    let (n, t) = (idx.n_units() as f64, idx.n_periods() as f64);
    let mut var = 0.0;
    if target != ApeTarget::InSample && n > 1.0 {
        let ss: f64 = (0..idx.n_units())
            .map(|i| {
                let r = idx.unit_obs(i);
                let m = mean(&delta[r]);
                (m - est) * (m - est)
            })
            .sum();
        var += ss / (n * n) * n / (n - 1.0);
    }
    if target == ApeTarget::Population && t > 1.0 {
        let ss: f64 = (0..idx.n_periods())
            .map(|s| {
                let obs = idx.period_obs(s);
                let m = obs.iter().map(|&k| delta[k]).sum::<f64>() / obs.len() as f64;
                (m - est) * (m - est)
            })
            .sum();
        var += ss / (t * t) * t / (t - 1.0);
    }
    var
}

/// Derivative of the APE with respect to β with the effects profiled,
/// by central differences.
fn jacobian(data: &PanelData, fit: &FitResult, spec: &EffectSpec) -> Vec<f64> {
    let d = fit.n_covariates();
    let phi_hat: Vec<f64> = (0..data.n_obs())
        .map(|k| fit.alpha[data.unit_of(k)] + fit.gamma[data.period_of(k)])
        .collect();
    let at = |beta: &[f64]| {
        let db: Vec<f64> = beta.iter().zip(&fit.beta).map(|(a, b)| a - b).collect();
        let phi = |k: usize| {
            let shift: f64 = fit
                .xtilde_row(k)
                .iter()
                .zip(data.x_row(k))
                .zip(&db)
                .map(|((xt, x), b)| (xt - x) * b)
                .sum();
            phi_hat[k] + shift
        };
        mean(&effects_at(data, &fit.family, beta, phi, spec))
    };
    (0..d)
        .map(|j| {
            let h = 1e-5 * fit.beta[j].abs().max(1.0);
            let mut up = fit.beta.clone();
            let mut dn = fit.beta.clone();
            up[j] += h;
            dn[j] -= h;
            (at(&up) - at(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Jackknife-corrected APE. Every subpanel contributes the plug-in APE over
/// its own observed cells, where cells of units or periods dropped for lack
/// of outcome variation count with effect zero. The standard error is that
/// of the full-panel plug-in for the same target.
pub fn corrected_ape(
    data: &PanelData,
    family: &Family,
    spec: &EffectSpec,
    target: ApeTarget,
    method: &Method,
    opts: &CorrectionOptions,
) -> Result<ApeResult> {
    let full = fit(data, family, &opts.solve)?;
    corrected_ape_from_fit(data, family, &full, spec, target, method, opts)
}

pub fn corrected_ape_from_fit(
    data: &PanelData,
    family: &Family,
    full: &FitResult,
    spec: &EffectSpec,
    target: ApeTarget,
    method: &Method,
    opts: &CorrectionOptions,
) -> Result<ApeResult> {
    let mut base = ape(data, full, spec, target)?;
    base.components = None;
    match method {
        Method::Fe => Ok(base),
        Method::Jbc | Method::Sbc { .. } | Method::Hbc => {
            let ctx = Context::from_fit(data, family, full, &opts.solve, opts.policy);
            let fam_at = full.family.clone();
            // A unit or period dropped for lack of outcome variation has its
            // effect at ±∞, where every partial effect is zero. Its cells stay
            // in the denominator so that all subpanels average over the same
            // population as the full panel.
            let stat = |sub: &PanelData, est: &Estimates, cells: usize| -> Result<Vec<f64>> {
                let delta = effects_at(
                    sub,
                    &fam_at,
                    &est.beta,
                    |k| est.alpha[sub.unit_of(k)] + est.gamma[sub.period_of(k)],
                    spec,
                );
                Ok(vec![delta.iter().sum::<f64>() / cells as f64])
            };
            let (value, sub) = combine_statistic(&ctx, method, vec![base.estimate], &stat)?;
            base.estimate = value[0];
            base.method = method.clone();
            base.subestimates = Some(sub);
            Ok(base)
        }
        other => Err(Error::InvalidOption(format!(
            "APE corrections are available for FE, JBC, SBC and HBC, not {}",
            other.label()
        ))),
    }
}
