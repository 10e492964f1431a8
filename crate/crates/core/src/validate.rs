//! Diagnostics that flag units, periods and covariates which break
//! identification. Validation never modifies a panel; dropping the
//! reported units and periods is an explicit separate step.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimator::{components, two_way_project, SolveOptions};
use crate::family::Family;
use crate::panel::{PanelData, Subpanel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateOptions {
    /// Units and periods with fewer observations are reported as sparse.
    pub min_obs: usize,
    /// Relative squared norm of `x̃` below which a covariate is reported as
    /// collinear with the effects and the preceding covariates.
    pub collinearity_tol: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            min_obs: 2,
            collinearity_tol: 1e-10,
        }
    }
}

/// A flagged unit, period or covariate with its reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    /// Dense zero-based index in the validated panel.
    pub id: usize,
    pub label: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub family: String,
    pub sparse_units: Vec<Finding>,
    pub sparse_periods: Vec<Finding>,
    pub no_variation_units: Vec<Finding>,
    pub no_variation_periods: Vec<Finding>,
    pub collinear_covariates: Vec<Finding>,
    /// Components of the unit–period graph when it is disconnected.
    pub components: Vec<String>,
    pub drop_units: Vec<usize>,
    pub drop_periods: Vec<usize>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.drop_units.is_empty()
            && self.drop_periods.is_empty()
            && self.collinear_covariates.is_empty()
            && self.components.len() <= 1
    }

    /// Panel without the units and periods listed for dropping.
    pub fn apply(&self, data: &PanelData) -> Result<Subpanel> {
        data.drop(&self.drop_units, &self.drop_periods)
    }
}

/// Reports sparse units and periods, units and periods whose effects
/// diverge for the family, dummy-collinear covariates and disconnected
/// panels.
pub fn validate(data: &PanelData, family: &Family, opts: &ValidateOptions) -> ValidationReport {
    let idx = data.index();
    let y = data.y();
    let mut rep = ValidationReport {
        family: family.name().to_string(),
        ..Default::default()
    };
    for i in 0..idx.n_units() {
        let m = idx.unit_count(i);
        if m < opts.min_obs {
            rep.sparse_units.push(finding(i, &data.unit_labels()[i], format!("{m} observations")));
        }
        if let Some(reason) = degenerate(family, idx.unit_obs(i).map(|k| y[k])) {
            rep.no_variation_units.push(finding(i, &data.unit_labels()[i], reason));
        }
    }
    for t in 0..idx.n_periods() {
        let m = idx.period_count(t);
        if m < opts.min_obs {
            rep.sparse_periods.push(finding(t, &data.period_labels()[t], format!("{m} observations")));
        }
        if let Some(reason) = degenerate(family, idx.period_obs(t).iter().map(|&k| y[k])) {
            rep.no_variation_periods.push(finding(t, &data.period_labels()[t], reason));
        }
    }
    let comps = components(data);
    if comps.len() > 1 {
        rep.components = comps
            .iter()
            .map(|(us, ts)| format!("{} units × {} periods", us.len(), ts.len()))
            .collect();
    } else {
        rep.collinear_covariates = collinear(data, opts.collinearity_tol);
    }
    let mut du: Vec<usize> = rep.sparse_units.iter().chain(&rep.no_variation_units).map(|f| f.id).collect();
    du.sort_unstable();
    du.dedup();
    let mut dp: Vec<usize> = rep.sparse_periods.iter().chain(&rep.no_variation_periods).map(|f| f.id).collect();
    dp.sort_unstable();
    dp.dedup();
    rep.drop_units = du;
    rep.drop_periods = dp;
    rep
}

fn finding(id: usize, label: &str, reason: String) -> Finding {
    Finding {
        id,
        label: label.to_string(),
        reason,
    }
}

fn degenerate(family: &Family, vals: impl Iterator<Item = f64> + Clone) -> Option<String> {
    if !family.effect_diverges(vals.clone()) {
        return None;
    }
    Some(match family {
        Family::Poisson => "all outcomes zero".to_string(),
        _ => "no outcome variation".to_string(),
    })
}

/// Covariates whose residual on the dummies and on earlier covariates
/// (unit weights, sequential Gram–Schmidt) is numerically zero.
fn collinear(data: &PanelData, tol: f64) -> Vec<Finding> {
    let n = data.n_obs();
    let w = vec![1.0; n];
    let opts = SolveOptions::default();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..data.n_covariates() {
        let col = data.x_col(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let scale: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let Ok(mut r) = two_way_project(data, &col, &w, &opts) else {
            continue;
        };
        for b in &basis {
            let c: f64 = r.iter().zip(b).map(|(a, b)| a * b).sum();
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= c * bi;
            }
        }
        let norm: f64 = r.iter().map(|v| v * v).sum();
        if norm <= tol * scale.max(f64::MIN_POSITIVE) {
            out.push(finding(
                j,
                &data.covariate_names()[j],
                "collinear with the fixed effects or earlier covariates".into(),
            ));
        } else {
            let s = norm.sqrt();
            basis.push(r.into_iter().map(|v| v / s).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Observation;

    fn make(n: usize, t: usize, f: impl Fn(usize, usize) -> (f64, Vec<f64>), names: &[&str]) -> PanelData {
        let mut obs = Vec::new();
        for i in 0..n {
            for s in 0..t {
                let (y, x) = f(i, s);
                obs.push(Observation { unit: i, period: s, y, x });
            }
        }
        PanelData::new(n, t, obs, names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn all_ones_unit_is_flagged() {
        let p = make(4, 5, |i, s| (if i == 2 { 1.0 } else { ((i + s) % 2) as f64 }, vec![(i * s) as f64]), &["x"]);
        let r = validate(&p, &Family::Logit, &ValidateOptions::default());
        assert_eq!(r.no_variation_units.len(), 1);
        assert_eq!(r.no_variation_units[0].label, "3");
        assert_eq!(r.drop_units, vec![2]);
        let cleaned = r.apply(&p).unwrap();
        assert_eq!(cleaned.data.n_units(), 3);
    }

    #[test]
    fn clean_linear_panel() {
        let p = make(4, 5, |i, s| ((i + s) as f64, vec![((i * 7 + s * s) % 5) as f64]), &["x"]);
        let r = validate(&p, &Family::linear(), &ValidateOptions::default());
        assert!(r.is_clean(), "{r:?}");
    }

    #[test]
    fn dummy_covariate_is_collinear() {
        let p = make(
            4,
            5,
            |i, s| ((i + s) as f64, vec![((i * 7 + s * s) % 5) as f64, if i == 1 { 1.0 } else { 0.0 }]),
            &["x", "d"],
        );
        let r = validate(&p, &Family::linear(), &ValidateOptions::default());
        assert_eq!(r.collinear_covariates.len(), 1);
        assert_eq!(r.collinear_covariates[0].label, "d");
    }
}
