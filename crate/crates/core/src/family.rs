//! Single-index likelihood families.
//!
//! Every family is described by the log-density `g(y, u)` of an outcome `y`
//! at the scalar index `u = x'β + α_i + γ_t`, together with its first three
//! derivatives in `u`. All derivatives that the estimator and the bias
//! plug-ins need (with respect to β, α_i or γ_t) are these scalars times a
//! covariate factor, so nothing else about a family has to be known.
//!
//! The built-in families are dispatched through [`Family`]; a new family can
//! be added without touching any other module by implementing
//! [`IndexLikelihood`] and wrapping it in [`Family::Custom`].

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson as PoissonDist, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::panel::CovariateKind;

/// Floor applied to expected information weights.
pub const WEIGHT_FLOOR: f64 = 1e-10;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `g` and its first three derivatives with respect to the index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexDerivs {
    pub g: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

/// Extension point for user-supplied single-index families.
pub trait IndexLikelihood: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn in_support(&self, y: f64) -> bool;
    /// Derivatives of the log-density; `y` is assumed to be in the support.
    fn derivs(&self, y: f64, u: f64) -> IndexDerivs;
    /// Expected information `-E[g2 | u]` before flooring.
    fn expected_weight(&self, u: f64) -> f64;
    /// Conditional mean of the outcome, `m(u) = E[y | u]`.
    fn mean(&self, u: f64) -> f64;
    /// Derivative of [`IndexLikelihood::mean`].
    fn mean_derivative(&self, u: f64) -> f64;
    /// `(E[g1 g2 | u], E[g3 | u])`, used by the expected-moment bias
    /// plug-ins. Families that cannot provide them return `None`.
    fn expected_bias_moments(&self, _u: f64) -> Option<(f64, f64)> {
        None
    }
    fn sample(&self, u: f64, rng: &mut dyn RngCore) -> f64;
    /// Whether units or periods without outcome variation have divergent
    /// effects (true for binary responses).
    fn binary_outcome(&self) -> bool {
        false
    }
    /// Index whose mean equals `mean_y`; used for starting values.
    fn starting_index(&self, mean_y: f64) -> f64;
}

/// Likelihood family of the panel model.
#[derive(Clone, Debug)]
pub enum Family {
    /// Normal linear model. The variance is concentrated out: estimation
    /// uses `sigma2 = 1` and the fitted family carries the mean squared
    /// residual.
    Linear { sigma2: f64 },
    Probit,
    Logit,
    Poisson,
    Custom(Arc<dyn IndexLikelihood>),
}

/// Names accepted on the command line and in design files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Linear,
    Probit,
    Logit,
    Poisson,
}

impl FamilyKind {
    pub fn family(self) -> Family {
        match self {
            FamilyKind::Linear => Family::linear(),
            FamilyKind::Probit => Family::Probit,
            FamilyKind::Logit => Family::Logit,
            FamilyKind::Poisson => Family::Poisson,
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "normal" => Ok(FamilyKind::Linear),
            "probit" => Ok(FamilyKind::Probit),
            "logit" => Ok(FamilyKind::Logit),
            "poisson" => Ok(FamilyKind::Poisson),
            other => Err(Error::InvalidOption(format!("unknown family {other:?}"))),
        }
    }
}

impl PartialEq for Family {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Family::Linear { sigma2: a }, Family::Linear { sigma2: b }) => a == b,
            (Family::Probit, Family::Probit)
            | (Family::Logit, Family::Logit)
            | (Family::Poisson, Family::Poisson) => true,
            (Family::Custom(a), Family::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Serialize for Family {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// Effect of a covariate on the conditional mean of the outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EffectMode {
    /// Change of the covariate from `from` to `to` (binary covariates).
    Discrete { from: f64, to: f64 },
    /// Derivative with respect to the covariate (continuous covariates).
    Marginal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectSpec {
    pub covariate: usize,
    #[serde(flatten)]
    pub mode: EffectMode,
}

impl EffectSpec {
    pub fn discrete(covariate: usize) -> Self {
        EffectSpec {
            covariate,
            mode: EffectMode::Discrete { from: 0.0, to: 1.0 },
        }
    }

    pub fn marginal(covariate: usize) -> Self {
        EffectSpec {
            covariate,
            mode: EffectMode::Marginal,
        }
    }

    pub fn check_kind(&self, kind: CovariateKind) -> Result<()> {
        match (self.mode, kind) {
            (EffectMode::Discrete { .. }, CovariateKind::Binary)
            | (EffectMode::Marginal, CovariateKind::Continuous) => Ok(()),
            (EffectMode::Discrete { .. }, CovariateKind::Continuous) => Err(Error::EffectSpec(
                "discrete effects require a binary covariate".into(),
            )),
            (EffectMode::Marginal, CovariateKind::Binary) => Err(Error::EffectSpec(
                "marginal effects require a continuous covariate".into(),
            )),
        }
    }
}

impl Family {
    pub fn linear() -> Self {
        Family::Linear { sigma2: 1.0 }
    }

    pub fn name(&self) -> &str {
        match self {
            Family::Linear { .. } => "linear",
            Family::Probit => "probit",
            Family::Logit => "logit",
            Family::Poisson => "poisson",
            Family::Custom(c) => c.name(),
        }
    }

    pub fn in_support(&self, y: f64) -> bool {
        match self {
            Family::Linear { .. } => y.is_finite(),
            Family::Probit | Family::Logit => y == 0.0 || y == 1.0,
            Family::Poisson => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
            Family::Custom(c) => c.in_support(y),
        }
    }

    /// True when units or periods with a constant outcome have divergent
    /// effects.
    pub fn binary_outcome(&self) -> bool {
        match self {
            Family::Probit | Family::Logit => true,
            Family::Linear { .. } | Family::Poisson => false,
            Family::Custom(c) => c.binary_outcome(),
        }
    }

    /// Whether the effect of a unit or period with these outcomes diverges:
    /// binary outcomes without variation, or counts that are all zero.
    pub fn effect_diverges(&self, outcomes: impl IntoIterator<Item = f64>) -> bool {
        let mut it = outcomes.into_iter();
        match self {
            Family::Poisson => it.all(|v| v == 0.0),
            f if f.binary_outcome() => match it.next() {
                Some(first) => it.all(|v| v == first),
                None => false,
            },
            _ => false,
        }
    }

    /// Checked derivatives of the log-density at `(y, u)`.
    pub fn index_derivs(&self, y: f64, u: f64) -> Result<IndexDerivs> {
        if !self.in_support(y) {
            return Err(Error::OutOfSupport {
                family: self.name().to_string(),
                y,
            });
        }
        Ok(self.derivs(y, u))
    }

    #[inline]
    pub(crate) fn derivs(&self, y: f64, u: f64) -> IndexDerivs {
        match self {
            Family::Linear { sigma2 } => {
                let r = y - u;
                IndexDerivs {
                    g: -0.5 * (r * r / sigma2 + sigma2.ln()) - LN_SQRT_2PI,
                    g1: r / sigma2,
                    g2: -1.0 / sigma2,
                    g3: 0.0,
                }
            }
            Family::Logit => {
                let f = logistic(u);
                let w = f * (1.0 - f);
                let g = if y > 0.5 { -softplus(-u) } else { -softplus(u) };
                IndexDerivs {
                    g,
                    g1: y - f,
                    g2: -w,
                    g3: -w * (1.0 - 2.0 * f),
                }
            }
            Family::Probit => {
                let q = if y > 0.5 { 1.0 } else { -1.0 };
                let v = q * u;
                let lam = inverse_mills(v);
                let a = v + lam;
                IndexDerivs {
                    g: ln_norm_cdf(v),
                    g1: q * lam,
                    g2: -lam * a,
                    g3: q * lam * (a * (v + 2.0 * lam) - 1.0),
                }
            }
            Family::Poisson => {
                let lam = u.exp();
                IndexDerivs {
                    g: y * u - lam - ln_gamma(y + 1.0),
                    g1: y - lam,
                    g2: -lam,
                    g3: -lam,
                }
            }
            Family::Custom(c) => c.derivs(y, u),
        }
    }

    /// Log-density only; cheaper than [`Family::derivs`] for line searches.
    #[inline]
    pub(crate) fn log_density(&self, y: f64, u: f64) -> f64 {
        match self {
            Family::Logit => {
                if y > 0.5 {
                    -softplus(-u)
                } else {
                    -softplus(u)
                }
            }
            Family::Probit => ln_norm_cdf(if y > 0.5 { u } else { -u }),
            Family::Poisson => y * u - u.exp() - ln_gamma(y + 1.0),
            _ => self.derivs(y, u).g,
        }
    }

    /// First and minus-second derivative, the pair needed by scalar Newton
    /// updates of the effects.
    #[inline]
    pub(crate) fn score_curvature(&self, y: f64, u: f64) -> (f64, f64) {
        match self {
            Family::Linear { sigma2 } => ((y - u) / sigma2, 1.0 / sigma2),
            Family::Logit => {
                let f = logistic(u);
                (y - f, f * (1.0 - f))
            }
            Family::Poisson => {
                let lam = u.exp();
                (y - lam, lam)
            }
            _ => {
                let d = self.derivs(y, u);
                (d.g1, -d.g2)
            }
        }
    }

    /// Expected information weight `ω(u) = -E[g2 | u]`, floored at
    /// [`WEIGHT_FLOOR`].
    pub fn expected_weight(&self, u: f64) -> f64 {
        let w = match self {
            Family::Linear { sigma2 } => 1.0 / sigma2,
            Family::Logit => {
                let f = logistic(u);
                f * (1.0 - f)
            }
            Family::Probit => {
                // φ²/(Φ(1-Φ)) = λ(u) λ(-u) with λ the inverse Mills ratio.
                inverse_mills(u) * inverse_mills(-u)
            }
            Family::Poisson => u.exp(),
            Family::Custom(c) => c.expected_weight(u),
        };
        w.max(WEIGHT_FLOOR)
    }

    /// Conditional mean `E[y | u]`.
    pub fn mean(&self, u: f64) -> f64 {
        match self {
            Family::Linear { .. } => u,
            Family::Logit => logistic(u),
            Family::Probit => norm_cdf(u),
            Family::Poisson => u.exp(),
            Family::Custom(c) => c.mean(u),
        }
    }

    pub fn mean_derivative(&self, u: f64) -> f64 {
        match self {
            Family::Linear { .. } => 1.0,
            Family::Logit => {
                let f = logistic(u);
                f * (1.0 - f)
            }
            Family::Probit => norm_pdf(u),
            Family::Poisson => u.exp(),
            Family::Custom(c) => c.mean_derivative(u),
        }
    }

    /// `(E[g1 g2 | u], E[g3 | u])` under the model at index `u`.
    pub fn expected_bias_moments(&self, u: f64) -> Option<(f64, f64)> {
        match self {
            // g2 is non-random for these three families, so E[g1 g2] = 0.
            Family::Linear { .. } => Some((0.0, 0.0)),
            Family::Logit => Some((0.0, self.derivs(1.0, u).g3)),
            Family::Poisson => Some((0.0, -u.exp())),
            Family::Probit => {
                // With l1 = λ(u), l0 = λ(-u) and ω = l0 l1 the averages over
                // y collapse to ω(l0 - l1 - u) and ω(3u - 2(l0 - l1)), which
                // avoids cancelling two large terms in the tails. ω is the
                // floored weight used by the projection, so that
                // E[g1 g2] + E[g3]/2 = ω u/2 holds with the same ω.
                let (l1, l0) = (inverse_mills(u), inverse_mills(-u));
                let w = self.expected_weight(u);
                Some((w * (l0 - l1 - u), w * (3.0 * u - 2.0 * (l0 - l1))))
            }
            Family::Custom(c) => c.expected_bias_moments(u),
        }
    }

    /// Index at which the conditional mean equals `mean_y`, clipped to the
    /// interior of the outcome range.
    pub(crate) fn starting_index(&self, mean_y: f64) -> f64 {
        match self {
            Family::Linear { .. } => mean_y,
            Family::Logit => {
                let p = mean_y.clamp(0.05, 0.95);
                (p / (1.0 - p)).ln()
            }
            Family::Probit => norm_quantile(mean_y.clamp(0.05, 0.95)),
            Family::Poisson => mean_y.max(0.1).ln(),
            Family::Custom(c) => c.starting_index(mean_y),
        }
    }

    /// Partial effect of covariate `spec.covariate` at covariate vector `x`,
    /// parameters `beta` and combined effect `phi = α_i + γ_t`.
    pub fn partial_effect(
        &self,
        x: &[f64],
        beta: &[f64],
        phi: f64,
        spec: &EffectSpec,
        kind: CovariateKind,
    ) -> Result<f64> {
        spec.check_kind(kind)?;
        let k = spec.covariate;
        if k >= beta.len() || x.len() != beta.len() {
            return Err(Error::EffectSpec(format!(
                "covariate index {k} out of range for {} coefficients",
                beta.len()
            )));
        }
        Ok(self.partial_effect_unchecked(x, beta, phi, spec))
    }

    #[inline]
    pub(crate) fn partial_effect_unchecked(
        &self,
        x: &[f64],
        beta: &[f64],
        phi: f64,
        spec: &EffectSpec,
    ) -> f64 {
        let k = spec.covariate;
        match spec.mode {
            EffectMode::Discrete { from, to } => {
                let rest: f64 = x
                    .iter()
                    .zip(beta)
                    .enumerate()
                    .filter(|(j, _)| *j != k)
                    .map(|(_, (a, b))| a * b)
                    .sum::<f64>()
                    + phi;
                self.mean(beta[k] * to + rest) - self.mean(beta[k] * from + rest)
            }
            EffectMode::Marginal => {
                let u: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + phi;
                beta[k] * self.mean_derivative(u)
            }
        }
    }

    /// Draws an outcome at index `u`.
    pub fn simulate<R: RngCore>(&self, u: f64, rng: &mut R) -> f64 {
        match self {
            Family::Linear { sigma2 } => {
                let e: f64 = rng.sample(StandardNormal);
                u + sigma2.sqrt() * e
            }
            Family::Probit => {
                let e: f64 = rng.sample(StandardNormal);
                if u >= e {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Logit => {
                let v: f64 = rng.gen();
                if v < logistic(u) {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Poisson => {
                let lam = u.exp();
                if lam <= 0.0 {
                    0.0
                } else {
                    PoissonDist::new(lam).map(|d| d.sample(rng)).unwrap_or(0.0)
                }
            }
            Family::Custom(c) => c.sample(u, rng),
        }
    }
}

/// Standard logistic CDF, evaluated without overflow.
#[inline]
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn norm_pdf(u: f64) -> f64 {
    (-0.5 * u * u - LN_SQRT_2PI).exp()
}

#[inline]
pub fn norm_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / SQRT_2)
}

/// `φ(v)/Φ(v)`, accurate far into the lower tail.
#[inline]
pub(crate) fn inverse_mills(v: f64) -> f64 {
    if v > -25.0 {
        norm_pdf(v) / norm_cdf(v)
    } else {
        let r = 1.0 / (v * v);
        -v / (1.0 - r + 3.0 * r * r - 15.0 * r * r * r)
    }
}

#[inline]
fn ln_norm_cdf(v: f64) -> f64 {
    if v > -25.0 {
        norm_cdf(v).ln()
    } else {
        let r = 1.0 / (v * v);
        -0.5 * v * v - LN_SQRT_2PI - (-v).ln() + (1.0 - r + 3.0 * r * r).ln()
    }
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0)
        .map(|n| n.inverse_cdf(p))
        .unwrap_or(f64::NAN)
}
