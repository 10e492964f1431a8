//! Bias-corrected estimators of the common parameters.
//!
//! Analytical corrections subtract the plug-in bias estimate (ABC) or
//! correct the profile score (PSBC). Jackknife corrections combine
//! estimates on subpanels: leave-one-out in both dimensions (JBC),
//! half-panels in both dimensions (SBC), or leave-one-unit-out with
//! half-panels over time (HBC).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, serialize_matrix, std_errors, vcov_beta, FitResult, SolveOptions};
use crate::family::Family;
use crate::panel::PanelData;

mod analytical;
pub mod jackknife;
pub mod plugin;

pub use analytical::{abc, abc_from_fit, psbc, psbc_from_fit};
pub use jackknife::{hbc, hbc_combine, jbc, jbc_combine, sbc, sbc_combine, SubpanelPolicy, Subestimates};
pub use plugin::{estimate_b, estimate_bias, estimate_d, probit_closed_form, BiasEstimates, BiasOptions, Moments};

/// Estimator and its tuning parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Method {
    /// Uncorrected fixed effects.
    Fe,
    Abc { trim: usize, iterations: usize },
    Jbc,
    Sbc { splits: usize, seed: u64 },
    Hbc,
    Psbc { trim: usize },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Fe => "FE".into(),
            Method::Abc { iterations: 1, .. } => "ABC".into(),
            Method::Abc { iterations, .. } => format!("ABC{iterations}"),
            Method::Jbc => "JBC".into(),
            Method::Sbc { .. } => "SBC".into(),
            Method::Hbc => "HBC".into(),
            Method::Psbc { .. } => "PSBC".into(),
        }
    }

    pub fn is_jackknife(&self) -> bool {
        matches!(self, Method::Jbc | Method::Sbc { .. } | Method::Hbc)
    }
}

/// Parses `fe`, `abc`, `abc(trim=1, iterations=2)`, `jbc`,
/// `sbc(splits=1, seed=7)`, `hbc` or `psbc(trim=0)`. Omitted arguments take
/// their defaults: trim 0, one iteration, one split, seed 0.
impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = crate::config::call(s)?;
        let mut trim = 0usize;
        let mut iterations = 1usize;
        let mut splits = 1usize;
        let mut seed = 0u64;
        for (k, v) in &args {
            match k.as_str() {
                "trim" | "m" => trim = crate::config::number(k, v)?,
                "iterations" | "k" => iterations = crate::config::number(k, v)?,
                "splits" => splits = crate::config::number(k, v)?,
                "seed" => seed = crate::config::number(k, v)?,
                _ => return Err(Error::InvalidOption(format!("unknown argument {k:?} in {s:?}"))),
            }
        }
        let allowed: &[&str] = match name.as_str() {
            "fe" | "jbc" | "hbc" => &[],
            "abc" => &["trim", "m", "iterations", "k"],
            "sbc" => &["splits", "seed"],
            "psbc" => &["trim", "m"],
            _ => return Err(Error::InvalidOption(format!("unknown method {name:?}"))),
        };
        if let Some((k, _)) = args.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidOption(format!("{name} takes no argument {k:?}")));
        }
        Ok(match name.as_str() {
            "fe" => Method::Fe,
            "abc" => Method::Abc { trim, iterations },
            "jbc" => Method::Jbc,
            "sbc" => Method::Sbc { splits, seed },
            "hbc" => Method::Hbc,
            _ => Method::Psbc { trim },
        })
    }
}

/// Options shared by all corrections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionOptions {
    pub solve: SolveOptions,
    pub moments: Moments,
    /// Report the sandwich covariance instead of `Ĥ⁻¹/n`.
    pub sandwich: bool,
    pub policy: SubpanelPolicy,
    /// Iteration limit of the profile-score correction.
    pub max_iter: usize,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        CorrectionOptions {
            solve: SolveOptions::default(),
            moments: Moments::Realized,
            sandwich: false,
            policy: SubpanelPolicy::Strict,
            max_iter: 50,
        }
    }
}

/// A corrected coefficient vector with its provenance.
#[derive(Clone, Debug, Serialize)]
pub struct CorrectedEstimate {
    pub method: Method,
    pub beta: Vec<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub vcov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub fe_beta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasEstimates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subestimates: Option<Subestimates>,
    /// Profile-score correction: whether the root lies outside the trust
    /// region around the fixed-effects estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left_trust_region: Option<bool>,
    pub warnings: Vec<String>,
}

impl CorrectedEstimate {
    pub(crate) fn new(method: Method, beta: Vec<f64>, full: &FitResult, opts: &CorrectionOptions) -> Result<Self> {
        let vcov = vcov_beta(full, opts.sandwich)?;
        Ok(CorrectedEstimate {
            method,
            se: std_errors(&vcov),
            beta,
            vcov,
            fe_beta: full.beta.clone(),
            bias: None,
            subestimates: None,
            left_trust_region: None,
            warnings: Vec::new(),
        })
    }
}

/// Fits the model and applies `method`.
pub fn correct(data: &PanelData, family: &Family, method: &Method, opts: &CorrectionOptions) -> Result<CorrectedEstimate> {
    let full = fit(data, family, &opts.solve)?;
    correct_fit(data, family, &full, method, opts)
}

/// Applies `method` given the full-panel fit.
pub fn correct_fit(
    data: &PanelData,
    family: &Family,
    full: &FitResult,
    method: &Method,
    opts: &CorrectionOptions,
) -> Result<CorrectedEstimate> {
    match method {
        Method::Fe => CorrectedEstimate::new(Method::Fe, full.beta.clone(), full, opts),
        Method::Abc { trim, iterations } => abc_from_fit(data, family, full, *trim, *iterations, opts),
        Method::Psbc { trim } => psbc_from_fit(data, family, full, *trim, opts),
        Method::Jbc | Method::Sbc { .. } | Method::Hbc => jackknife::correct_beta(data, family, full, method, opts),
    }
}

pub(crate) fn check_trim(data: &PanelData, trim: usize) -> Result<()> {
    let max = data.index().max_unit_count();
    if trim + 1 > max {
        return Err(Error::InvalidOption(format!(
            "trim {trim} must be below the longest unit length {max}"
        )));
    }
    Ok(())
}
