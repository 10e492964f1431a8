//! Panel jackknife corrections.
//!
//! Every correction is an affine combination of a statistic on the full
//! panel and its averages over subpanels:
//!
//! ```text
//! JBC = (N+T−1) θ̂ − (N−1) θ̄_{N−1,T} − (T−1) θ̄_{N,T−1}
//! SBC = 3 θ̂ − θ̃_{N/2,T} − θ̃_{N,T/2}
//! HBC = (N+1) θ̂ − (N−1) θ̄_{N−1,T} − θ̃_{N,T/2}
//! ```
//!
//! The statistic is β̂ for coefficient corrections and an average partial
//! effect for [`crate::effects`]. Subpanel fits start from the full-panel
//! estimates and reuse the full-panel information matrix for their β steps.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorrectedEstimate, CorrectionOptions, Method};
use crate::error::{Error, Result};
use crate::estimator::{solve, Estimates, FitResult, FitStart, SolveOptions};
use crate::family::Family;
use crate::panel::{PanelData, SplitScheme, Subpanel};

/// Handling of subpanels in which some unit or period has an outcome
/// without variation (binary outcomes) or only zeros (counts).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SubpanelPolicy {
    /// Such a subpanel is an error naming it.
    #[default]
    Strict,
    /// Such units and periods are dropped from the subpanel, where their
    /// effect estimates would diverge; the count is recorded.
    DropNonVarying,
}

/// Subpanel averages entering a jackknife combination.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Subestimates {
    pub full: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leave_unit_out_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leave_period_out_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_half_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period_halves: Option<[Vec<f64>; 2]>,
    pub subpanel_fits: usize,
    /// Units and periods removed under [`SubpanelPolicy::DropNonVarying`],
    /// summed over subpanels.
    pub dropped_units: usize,
    pub dropped_periods: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splits: Option<usize>,
}

pub fn jbc_combine(full: &[f64], unit_loo: &[f64], period_loo: &[f64], n_units: usize, n_periods: usize) -> Vec<f64> {
    let (n, t) = (n_units as f64, n_periods as f64);
    (0..full.len())
        .map(|j| (n + t - 1.0) * full[j] - (n - 1.0) * unit_loo[j] - (t - 1.0) * period_loo[j])
        .collect()
}

pub fn sbc_combine(full: &[f64], unit_half: &[f64], period_half: &[f64]) -> Vec<f64> {
    (0..full.len())
        .map(|j| 3.0 * full[j] - unit_half[j] - period_half[j])
        .collect()
}

pub fn hbc_combine(full: &[f64], unit_loo: &[f64], period_half: &[f64], n_units: usize) -> Vec<f64> {
    let n = n_units as f64;
    (0..full.len())
        .map(|j| (n + 1.0) * full[j] - (n - 1.0) * unit_loo[j] - period_half[j])
        .collect()
}

/// `Ĥ` of the problem the solver sees. The linear family is estimated
/// with unit variance, while the fitted `Ĥ` carries the weight `1/σ̂²`.
fn estimation_information(full: &FitResult) -> DMatrix<f64> {
    match full.sigma2() {
        Some(s2) => &full.h_hat * s2,
        None => full.h_hat.clone(),
    }
}

/// A statistic computed from a subpanel, its fit and the number of cells
/// the subpanel had before units or periods without outcome variation were
/// dropped.
pub(crate) type Statistic<'a> = dyn Fn(&PanelData, &Estimates, usize) -> Result<Vec<f64>> + Sync + 'a;

/// Everything a subpanel refit needs from the full-panel fit.
pub(crate) struct Context<'a> {
    pub data: &'a PanelData,
    pub family: &'a Family,
    pub solve: &'a SolveOptions,
    pub policy: SubpanelPolicy,
    pub beta: &'a [f64],
    pub alpha: &'a [f64],
    pub gamma: &'a [f64],
    /// Information of the estimation problem, mean form.
    pub hessian: Option<DMatrix<f64>>,
}

impl<'a> Context<'a> {
    pub fn from_fit(
        data: &'a PanelData,
        family: &'a Family,
        full: &'a FitResult,
        solve: &'a SolveOptions,
        policy: SubpanelPolicy,
    ) -> Self {
        Context {
            data,
            family,
            solve,
            policy,
            beta: &full.beta,
            alpha: &full.alpha,
            gamma: &full.gamma,
            hessian: Some(estimation_information(full)),
        }
    }

    /// Fits one subpanel and evaluates the statistic on it. Returns the
    /// statistic and the numbers of dropped units and periods.
    fn subfit(&self, scheme: &SplitScheme, stat: &Statistic) -> Result<(Vec<f64>, usize, usize)> {
        let label = scheme.label();
        let wrap = |e: Error| match e {
            Error::Subpanel { .. } => e,
            other => Error::Subpanel {
                label: label.clone(),
                reason: other.to_string(),
            },
        };
        let mut sub = self.data.subpanel(scheme)?;
        let cells = sub.data.n_obs();
        let (mut du, mut dp) = (0, 0);
        loop {
            let (bad_u, bad_p) = degenerate_sets(&sub.data, self.family);
            if bad_u.is_empty() && bad_p.is_empty() {
                break;
            }
            if self.policy == SubpanelPolicy::Strict {
                let what = match (bad_u.first(), bad_p.first()) {
                    (Some(&i), _) => format!("unit {}", sub.data.unit_labels()[i]),
                    (None, Some(&t)) => format!("period {}", sub.data.period_labels()[t]),
                    (None, None) => unreachable!(),
                };
                return Err(Error::Subpanel {
                    label,
                    reason: format!("{what} has no outcome variation"),
                });
            }
            du += bad_u.len();
            dp += bad_p.len();
            let inner = sub.data.drop(&bad_u, &bad_p).map_err(wrap)?;
            sub = Subpanel {
                unit_map: inner.unit_map.iter().map(|&i| sub.unit_map[i]).collect(),
                period_map: inner.period_map.iter().map(|&t| sub.period_map[t]).collect(),
                data: inner.data,
            };
        }
        let start = FitStart {
            beta: Some(self.beta.to_vec()),
            alpha: Some(sub.unit_map.iter().map(|&i| self.alpha[i]).collect()),
            gamma: Some(sub.period_map.iter().map(|&t| self.gamma[t]).collect()),
            hessian: self.hessian.clone(),
        };
        let est = solve(&sub.data, self.family, self.solve, &start).map_err(wrap)?;
        let value = stat(&sub.data, &est, cells).map_err(wrap)?;
        Ok((value, du, dp))
    }

    /// Mean of the statistic over subpanels, fitted in parallel and reduced
    /// in scheme order.
    fn mean_over(&self, schemes: &[SplitScheme], stat: &Statistic, acc: &mut Subestimates) -> Result<Vec<f64>> {
        let results: Vec<Result<(Vec<f64>, usize, usize)>> =
            schemes.par_iter().map(|s| self.subfit(s, stat)).collect();
        let mut sum: Option<Vec<f64>> = None;
        for r in results {
            let (v, du, dp) = r?;
            acc.dropped_units += du;
            acc.dropped_periods += dp;
            acc.subpanel_fits += 1;
            match &mut sum {
                None => sum = Some(v),
                Some(s) => s.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
            }
        }
        let m = schemes.len() as f64;
        Ok(sum.unwrap_or_default().into_iter().map(|v| v / m).collect())
    }

    fn values_over(&self, schemes: &[SplitScheme], stat: &Statistic, acc: &mut Subestimates) -> Result<Vec<Vec<f64>>> {
        let results: Vec<Result<(Vec<f64>, usize, usize)>> =
            schemes.par_iter().map(|s| self.subfit(s, stat)).collect();
        let mut out = Vec::with_capacity(schemes.len());
        for r in results {
            let (v, du, dp) = r?;
            acc.dropped_units += du;
            acc.dropped_periods += dp;
            acc.subpanel_fits += 1;
            out.push(v);
        }
        Ok(out)
    }
}

/// Units and periods of a panel whose effect would diverge.
fn degenerate_sets(data: &PanelData, family: &Family) -> (Vec<usize>, Vec<usize>) {
    let idx = data.index();
    let y = data.y();
    let units = (0..idx.n_units()).filter(|&i| family.effect_diverges(idx.unit_obs(i).map(|k| y[k]))).collect();
    let periods = (0..idx.n_periods())
        .filter(|&t| family.effect_diverges(idx.period_obs(t).iter().map(|&k| y[k])))
        .collect();
    (units, periods)
}

/// Runs a jackknife combination for a statistic whose full-panel value is
/// `full`.
pub(crate) fn combine_statistic(
    ctx: &Context,
    method: &Method,
    full: Vec<f64>,
    stat: &Statistic,
) -> Result<(Vec<f64>, Subestimates)> {
    let data = ctx.data;
    let (n, t) = (data.n_units(), data.n_periods());
    let mut acc = Subestimates {
        full: full.clone(),
        ..Default::default()
    };
    let unit_loo = |acc: &mut Subestimates| -> Result<Vec<f64>> {
        if n < 2 {
            return Err(Error::InvalidOption("leave-one-unit-out needs at least 2 units".into()));
        }
        let schemes: Vec<SplitScheme> = (0..n).map(SplitScheme::LeaveUnitOut).collect();
        ctx.mean_over(&schemes, stat, acc)
    };
    let period_half = |acc: &mut Subestimates| -> Result<Vec<f64>> {
        if t < 4 {
            return Err(Error::InvalidOption("half-panels over time need at least 4 periods".into()));
        }
        let halves = SplitScheme::period_halves(t);
        let v = ctx.values_over(&halves, stat, acc)?;
        let mean = (0..full.len()).map(|j| 0.5 * (v[0][j] + v[1][j])).collect();
        acc.period_halves = Some([v[0].clone(), v[1].clone()]);
        Ok(mean)
    };
    let value = match method {
        Method::Jbc => {
            if t < 2 {
                return Err(Error::InvalidOption("leave-one-period-out needs at least 2 periods".into()));
            }
            let u = unit_loo(&mut acc)?;
            let schemes: Vec<SplitScheme> = (0..t).map(SplitScheme::LeavePeriodOut).collect();
            let p = ctx.mean_over(&schemes, stat, &mut acc)?;
            let out = jbc_combine(&full, &u, &p, n, t);
            acc.leave_unit_out_mean = Some(u);
            acc.leave_period_out_mean = Some(p);
            out
        }
        Method::Sbc { splits, seed } => {
            if n < 4 {
                return Err(Error::InvalidOption("half-panels over units need at least 4 units".into()));
            }
            if *splits == 0 {
                return Err(Error::InvalidOption("at least one unit partition is required".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut schemes = Vec::with_capacity(2 * splits);
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..*splits {
                order.shuffle(&mut rng);
                schemes.extend(SplitScheme::unit_halves(&order));
            }
            let u = ctx.mean_over(&schemes, stat, &mut acc)?;
            let p = period_half(&mut acc)?;
            let out = sbc_combine(&full, &u, &p);
            acc.unit_half_mean = Some(u);
            acc.seed = Some(*seed);
            acc.splits = Some(*splits);
            out
        }
        Method::Hbc => {
            let u = unit_loo(&mut acc)?;
            let p = period_half(&mut acc)?;
            let out = hbc_combine(&full, &u, &p, n);
            acc.leave_unit_out_mean = Some(u);
            out
        }
        other => {
            return Err(Error::Internal(format!("{} is not a jackknife method", other.label())));
        }
    };
    Ok((value, acc))
}

pub(crate) fn correct_beta(
    data: &PanelData,
    family: &Family,
    full: &FitResult,
    method: &Method,
    opts: &CorrectionOptions,
) -> Result<CorrectedEstimate> {
    let ctx = Context::from_fit(data, family, full, &opts.solve, opts.policy);
    let stat = |_: &PanelData, est: &Estimates, _: usize| Ok(est.beta.clone());
    let (beta, sub) = combine_statistic(&ctx, method, full.beta.clone(), &stat)?;
    let mut out = CorrectedEstimate::new(method.clone(), beta, full, opts)?;
    if sub.dropped_units + sub.dropped_periods > 0 {
        out.warnings.push(format!(
            "{} unit(s) and {} period(s) without outcome variation dropped across subpanels",
            sub.dropped_units, sub.dropped_periods
        ));
    }
    out.subestimates = Some(sub);
    Ok(out)
}

/// Leave-one-out jackknife in both dimensions.
pub fn jbc(data: &PanelData, family: &Family, opts: &CorrectionOptions) -> Result<CorrectedEstimate> {
    super::correct(data, family, &Method::Jbc, opts)
}

/// Split-panel jackknife averaging `splits` seeded unit partitions.
pub fn sbc(data: &PanelData, family: &Family, splits: usize, seed: u64, opts: &CorrectionOptions) -> Result<CorrectedEstimate> {
    super::correct(data, family, &Method::Sbc { splits, seed }, opts)
}

/// Leave-one-unit-out combined with half-panels over time.
pub fn hbc(data: &PanelData, family: &Family, opts: &CorrectionOptions) -> Result<CorrectedEstimate> {
    super::correct(data, family, &Method::Hbc, opts)
}
