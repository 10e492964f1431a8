//! Panel data: storage, indexing, CSV input/output, subpanels and lags.
//!
//! Units and periods are stored with dense zero-based indices. The original
//! identifiers are kept as labels so that results can be reported in the
//! caller's terms. Observations are sorted by `(unit, period)`.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Binary,
}

impl CovariateKind {
    /// Binary when every value is 0 or 1.
    pub fn detect(values: impl IntoIterator<Item = f64>) -> Self {
        if values.into_iter().all(|v| v == 0.0 || v == 1.0) {
            CovariateKind::Binary
        } else {
            CovariateKind::Continuous
        }
    }
}

/// One observation with dense ids, used to build a [`PanelData`].
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub unit: usize,
    pub period: usize,
    pub y: f64,
    pub x: Vec<f64>,
}

/// Index sets of the observed cells.
///
/// `unit_start` is a CSR offset array into the observation order (which is
/// sorted by unit and then period); `period_obs` lists the observations of
/// every period, again through CSR offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelIndex {
    n_units: usize,
    n_periods: usize,
    unit_start: Vec<usize>,
    period_start: Vec<usize>,
    period_obs: Vec<usize>,
}

impl PanelIndex {
    fn build(n_units: usize, n_periods: usize, unit: &[usize], period: &[usize]) -> Self {
        let n = unit.len();
        let mut unit_start = vec![0; n_units + 1];
        for &i in unit {
            unit_start[i + 1] += 1;
        }
        for i in 0..n_units {
            unit_start[i + 1] += unit_start[i];
        }
        let mut period_start = vec![0; n_periods + 1];
        for &t in period {
            period_start[t + 1] += 1;
        }
        for t in 0..n_periods {
            period_start[t + 1] += period_start[t];
        }
        let mut fill = period_start.clone();
        let mut period_obs = vec![0; n];
        for (k, &t) in period.iter().enumerate() {
            period_obs[fill[t]] = k;
            fill[t] += 1;
        }
        PanelIndex {
            n_units,
            n_periods,
            unit_start,
            period_start,
            period_obs,
        }
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    /// Number of observed cells `n = |D|`.
    pub fn n_obs(&self) -> usize {
        self.period_obs.len()
    }

    /// Observations of unit `i`, in increasing period order.
    #[inline]
    pub fn unit_obs(&self, i: usize) -> Range<usize> {
        self.unit_start[i]..self.unit_start[i + 1]
    }

    /// Observations of period `t`, in increasing unit order.
    #[inline]
    pub fn period_obs(&self, t: usize) -> &[usize] {
        &self.period_obs[self.period_start[t]..self.period_start[t + 1]]
    }

    pub fn unit_count(&self, i: usize) -> usize {
        self.unit_start[i + 1] - self.unit_start[i]
    }

    pub fn period_count(&self, t: usize) -> usize {
        self.period_start[t + 1] - self.period_start[t]
    }

    /// Average number of observations per unit, `n / N`.
    pub fn tbar(&self) -> f64 {
        self.n_obs() as f64 / self.n_units as f64
    }

    /// Average number of observations per period, `n / T`.
    pub fn nbar(&self) -> f64 {
        self.n_obs() as f64 / self.n_periods as f64
    }

    pub fn is_balanced(&self) -> bool {
        self.n_obs() == self.n_units * self.n_periods
    }

    pub fn max_unit_count(&self) -> usize {
        (0..self.n_units).map(|i| self.unit_count(i)).max().unwrap_or(0)
    }
}

/// A (possibly unbalanced) panel with dense ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelData {
    unit: Vec<usize>,
    period: Vec<usize>,
    y: Vec<f64>,
    /// Row-major `n × d` covariate matrix.
    x: Vec<f64>,
    covariate_names: Vec<String>,
    covariate_kinds: Vec<CovariateKind>,
    unit_labels: Vec<String>,
    period_labels: Vec<String>,
    index: PanelIndex,
}

impl PanelData {
    /// Builds a panel from observations with dense ids `0..n_units` and
    /// `0..n_periods`. Covariate kinds are detected from the values.
    pub fn new(
        n_units: usize,
        n_periods: usize,
        obs: Vec<Observation>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let d = covariate_names.len();
        let mut kinds = vec![CovariateKind::Binary; d];
        for (j, kind) in kinds.iter_mut().enumerate() {
            *kind = CovariateKind::detect(obs.iter().filter_map(|o| o.x.get(j).copied()));
        }
        let unit_labels = (1..=n_units).map(|i| i.to_string()).collect();
        let period_labels = (1..=n_periods).map(|t| t.to_string()).collect();
        Self::from_parts(obs, covariate_names, kinds, unit_labels, period_labels)
    }

    /// Builds a panel with explicit kinds and labels.
    pub fn from_parts(
        mut obs: Vec<Observation>,
        covariate_names: Vec<String>,
        covariate_kinds: Vec<CovariateKind>,
        unit_labels: Vec<String>,
        period_labels: Vec<String>,
    ) -> Result<Self> {
        let (n_units, n_periods) = (unit_labels.len(), period_labels.len());
        let d = covariate_names.len();
        if obs.is_empty() {
            return Err(Error::Empty("panel has no observations".into()));
        }
        if covariate_kinds.len() != d {
            return Err(Error::Input("one kind per covariate is required".into()));
        }
        for o in &obs {
            if o.unit >= n_units || o.period >= n_periods {
                return Err(Error::Input(format!(
                    "observation ({}, {}) outside {n_units} units × {n_periods} periods",
                    o.unit, o.period
                )));
            }
            if o.x.len() != d {
                return Err(Error::Input(format!(
                    "observation ({}, {}) has {} covariates, expected {d}",
                    o.unit,
                    o.period,
                    o.x.len()
                )));
            }
            if !o.y.is_finite() || o.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "non-finite value at ({}, {})",
                    unit_labels[o.unit], period_labels[o.period]
                )));
            }
        }
        obs.sort_by_key(|o| (o.unit, o.period));
        for w in obs.windows(2) {
            if w[0].unit == w[1].unit && w[0].period == w[1].period {
                return Err(Error::DuplicateObservation {
                    unit: unit_labels[w[0].unit].clone(),
                    period: period_labels[w[0].period].clone(),
                });
            }
        }
        let n = obs.len();
        let mut data = PanelData {
            unit: Vec::with_capacity(n),
            period: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            x: Vec::with_capacity(n * d),
            covariate_names,
            covariate_kinds,
            unit_labels,
            period_labels,
            index: PanelIndex::build(0, 0, &[], &[]),
        };
        for o in obs {
            data.unit.push(o.unit);
            data.period.push(o.period);
            data.y.push(o.y);
            data.x.extend_from_slice(&o.x);
        }
        data.index = PanelIndex::build(n_units, n_periods, &data.unit, &data.period);
        for i in 0..n_units {
            if data.index.unit_count(i) == 0 {
                return Err(Error::Input(format!("unit {} has no observations", data.unit_labels[i])));
            }
        }
        for t in 0..n_periods {
            if data.index.period_count(t) == 0 {
                return Err(Error::Input(format!(
                    "period {} has no observations",
                    data.period_labels[t]
                )));
            }
        }
        data.check_covariates()?;
        Ok(data)
    }

    fn check_covariates(&self) -> Result<()> {
        let d = self.n_covariates();
        for j in 0..d {
            let first = self.x[j];
            if (0..self.n_obs()).all(|k| self.x[k * d + j] == first) {
                return Err(Error::ConstantCovariate(self.covariate_names[j].clone()));
            }
        }
        Ok(())
    }

    pub fn index(&self) -> &PanelIndex {
        &self.index
    }

    pub fn n_units(&self) -> usize {
        self.index.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.index.n_periods
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Row-major covariate matrix.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    #[inline]
    pub fn x_row(&self, k: usize) -> &[f64] {
        let d = self.n_covariates();
        &self.x[k * d..(k + 1) * d]
    }

    pub fn x_col(&self, j: usize) -> Vec<f64> {
        let d = self.n_covariates();
        (0..self.n_obs()).map(|k| self.x[k * d + j]).collect()
    }

    #[inline]
    pub fn unit_of(&self, k: usize) -> usize {
        self.unit[k]
    }

    #[inline]
    pub fn period_of(&self, k: usize) -> usize {
        self.period[k]
    }

    pub fn units(&self) -> &[usize] {
        &self.unit
    }

    pub fn periods(&self) -> &[usize] {
        &self.period
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_kinds(&self) -> &[CovariateKind] {
        &self.covariate_kinds
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    /// Overrides the detected kind of covariate `j`.
    pub fn set_covariate_kind(&mut self, j: usize, kind: CovariateKind) -> Result<()> {
        if kind == CovariateKind::Binary && CovariateKind::detect(self.x_col(j)) != kind {
            return Err(Error::Input(format!(
                "covariate {} takes values other than 0 and 1",
                self.covariate_names[j]
            )));
        }
        self.covariate_kinds[j] = kind;
        Ok(())
    }

    /// Position of a covariate given by name or zero-based index.
    pub fn covariate_position(&self, key: &str) -> Result<usize> {
        if let Some(j) = self.covariate_names.iter().position(|n| n == key) {
            return Ok(j);
        }
        match key.parse::<usize>() {
            Ok(j) if j < self.n_covariates() => Ok(j),
            _ => Err(Error::Input(format!("unknown covariate {key:?}"))),
        }
    }

    /// Observations as owned records (dense ids).
    pub fn observations(&self) -> Vec<Observation> {
        (0..self.n_obs())
            .map(|k| Observation {
                unit: self.unit[k],
                period: self.period[k],
                y: self.y[k],
                x: self.x_row(k).to_vec(),
            })
            .collect()
    }

    /// Restricts the panel to kept units and periods. Units or periods left
    /// without observations are removed and the ids re-densified.
    pub fn restrict(&self, keep_unit: &[bool], keep_period: &[bool]) -> Result<Subpanel> {
        let d = self.n_covariates();
        let mut kept = Vec::new();
        let mut unit_used = vec![false; self.n_units()];
        let mut period_used = vec![false; self.n_periods()];
        for k in 0..self.n_obs() {
            let (i, t) = (self.unit[k], self.period[k]);
            if keep_unit[i] && keep_period[t] {
                kept.push(k);
                unit_used[i] = true;
                period_used[t] = true;
            }
        }
        if kept.is_empty() {
            return Err(Error::Empty("subpanel has no observations".into()));
        }
        let (unit_new, unit_map) = densify(&unit_used);
        let (period_new, period_map) = densify(&period_used);
        let mut sub = PanelData {
            unit: Vec::with_capacity(kept.len()),
            period: Vec::with_capacity(kept.len()),
            y: Vec::with_capacity(kept.len()),
            x: Vec::with_capacity(kept.len() * d),
            covariate_names: self.covariate_names.clone(),
            covariate_kinds: self.covariate_kinds.clone(),
            unit_labels: unit_map.iter().map(|&i| self.unit_labels[i].clone()).collect(),
            period_labels: period_map.iter().map(|&t| self.period_labels[t].clone()).collect(),
            index: PanelIndex::build(0, 0, &[], &[]),
        };
        for &k in &kept {
            sub.unit.push(unit_new[self.unit[k]]);
            sub.period.push(period_new[self.period[k]]);
            sub.y.push(self.y[k]);
            sub.x.extend_from_slice(self.x_row(k));
        }
        sub.index = PanelIndex::build(unit_map.len(), period_map.len(), &sub.unit, &sub.period);
        sub.check_covariates()?;
        Ok(Subpanel {
            data: sub,
            unit_map,
            period_map,
        })
    }

    /// Drops the listed units and periods (dense ids of this panel).
    pub fn drop(&self, units: &[usize], periods: &[usize]) -> Result<Subpanel> {
        let mut keep_unit = vec![true; self.n_units()];
        let mut keep_period = vec![true; self.n_periods()];
        for &i in units {
            keep_unit[i] = false;
        }
        for &t in periods {
            keep_period[t] = false;
        }
        self.restrict(&keep_unit, &keep_period)
    }

    /// Adds the `k`-th lag of a column. Observations whose lag period is not
    /// observed for the same unit are dropped; lags never bridge gaps.
    pub fn derive_lags(&self, source: LagSource, k: usize) -> Result<PanelData> {
        if k == 0 {
            return Err(Error::InvalidOption("lag order must be at least 1".into()));
        }
        if k >= self.index.max_unit_count() {
            return Err(Error::InvalidOption(format!(
                "lag order {k} leaves no observations (longest unit has {} periods)",
                self.index.max_unit_count()
            )));
        }
        let (name, values, kind) = match source {
            LagSource::Outcome => (
                format!("lag{k}_y"),
                self.y.clone(),
                CovariateKind::detect(self.y.iter().copied()),
            ),
            LagSource::Covariate(j) => {
                if j >= self.n_covariates() {
                    return Err(Error::Input(format!("covariate index {j} out of range")));
                }
                (
                    format!("lag{k}_{}", self.covariate_names[j]),
                    self.x_col(j),
                    self.covariate_kinds[j],
                )
            }
        };
        let mut obs = Vec::new();
        for i in 0..self.n_units() {
            let r = self.index.unit_obs(i);
            for a in r.clone() {
                let t = self.period[a];
                if t < k {
                    continue;
                }
                let lag = self.period[r.start..a]
                    .binary_search(&(t - k))
                    .ok()
                    .map(|p| values[r.start + p]);
                if let Some(v) = lag {
                    let mut x = self.x_row(a).to_vec();
                    x.push(v);
                    obs.push(Observation {
                        unit: i,
                        period: t,
                        y: self.y[a],
                        x,
                    });
                }
            }
        }
        if obs.is_empty() {
            return Err(Error::Empty(format!("no observation has its lag {k} observed")));
        }
        let mut unit_used = vec![false; self.n_units()];
        let mut period_used = vec![false; self.n_periods()];
        for o in &obs {
            unit_used[o.unit] = true;
            period_used[o.period] = true;
        }
        let (unit_new, unit_map) = densify(&unit_used);
        let (period_new, period_map) = densify(&period_used);
        for o in &mut obs {
            o.unit = unit_new[o.unit];
            o.period = period_new[o.period];
        }
        let mut names = self.covariate_names.clone();
        names.push(name);
        let mut kinds = self.covariate_kinds.clone();
        kinds.push(kind);
        PanelData::from_parts(
            obs,
            names,
            kinds,
            unit_map.iter().map(|&i| self.unit_labels[i].clone()).collect(),
            period_map.iter().map(|&t| self.period_labels[t].clone()).collect(),
        )
    }

    /// Writes the panel as CSV with columns `unit, period, y, <covariates>`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["unit".to_string(), "period".to_string(), "y".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        wr.write_record(&header)?;
        for k in 0..self.n_obs() {
            let mut rec = vec![
                self.unit_labels[self.unit[k]].clone(),
                self.period_labels[self.period[k]].clone(),
                self.y[k].to_string(),
            ];
            rec.extend(self.x_row(k).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

/// Column whose lag is added by [`PanelData::derive_lags`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LagSource {
    Outcome,
    Covariate(usize),
}

/// Returns `(old -> new, new -> old)` maps for the flagged entries.
fn densify(used: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut forward = vec![usize::MAX; used.len()];
    let mut back = Vec::new();
    for (old, &u) in used.iter().enumerate() {
        if u {
            forward[old] = back.len();
            back.push(old);
        }
    }
    (forward, back)
}

/// A restricted panel and the maps from its dense ids to the parent's.
#[derive(Clone, Debug)]
pub struct Subpanel {
    pub data: PanelData,
    pub unit_map: Vec<usize>,
    pub period_map: Vec<usize>,
}

/// Index sets defining a subpanel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    LeaveUnitOut(usize),
    LeavePeriodOut(usize),
    /// Keep only the listed units.
    Units(Vec<usize>),
    /// Keep only the listed periods.
    Periods(Vec<usize>),
}

impl SplitScheme {
    /// The two period halves `{t ≤ ⌈T/2⌉}` and `{t ≥ ⌊T/2 + 1⌋}` (one-based),
    /// which share the middle period when `T` is odd.
    pub fn period_halves(n_periods: usize) -> [SplitScheme; 2] {
        let first_end = n_periods.div_ceil(2);
        let second_start = n_periods / 2;
        [
            SplitScheme::Periods((0..first_end).collect()),
            SplitScheme::Periods((second_start..n_periods).collect()),
        ]
    }

    /// Splits an ordering of the units into halves of sizes `⌈N/2⌉` and
    /// `⌊N/2⌋`.
    pub fn unit_halves(order: &[usize]) -> [SplitScheme; 2] {
        let cut = order.len().div_ceil(2);
        let mut a = order[..cut].to_vec();
        let mut b = order[cut..].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        [SplitScheme::Units(a), SplitScheme::Units(b)]
    }

    pub fn label(&self) -> String {
        match self {
            SplitScheme::LeaveUnitOut(i) => format!("leave-unit-out({i})"),
            SplitScheme::LeavePeriodOut(t) => format!("leave-period-out({t})"),
            SplitScheme::Units(u) => format!("units[{} of them]", u.len()),
            SplitScheme::Periods(p) => match (p.first(), p.last()) {
                (Some(a), Some(b)) => format!("periods[{a}..={b}]"),
                _ => "periods[]".into(),
            },
        }
    }
}

impl PanelData {
    /// Restriction of the panel to a split scheme's index sets.
    pub fn subpanel(&self, scheme: &SplitScheme) -> Result<Subpanel> {
        let mut keep_unit = vec![true; self.n_units()];
        let mut keep_period = vec![true; self.n_periods()];
        match scheme {
            SplitScheme::LeaveUnitOut(i) => *keep_unit.get_mut(*i).ok_or_else(|| bad_index(scheme))? = false,
            SplitScheme::LeavePeriodOut(t) => {
                *keep_period.get_mut(*t).ok_or_else(|| bad_index(scheme))? = false
            }
            SplitScheme::Units(list) => {
                keep_unit.fill(false);
                for &i in list {
                    *keep_unit.get_mut(i).ok_or_else(|| bad_index(scheme))? = true;
                }
            }
            SplitScheme::Periods(list) => {
                keep_period.fill(false);
                for &t in list {
                    *keep_period.get_mut(t).ok_or_else(|| bad_index(scheme))? = true;
                }
            }
        }
        self.restrict(&keep_unit, &keep_period).map_err(|e| Error::Subpanel {
            label: scheme.label(),
            reason: e.to_string(),
        })
    }
}

fn bad_index(scheme: &SplitScheme) -> Error {
    Error::Subpanel {
        label: scheme.label(),
        reason: "index out of range".into(),
    }
}

/// Column mapping for [`load_csv`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    /// Covariate columns; `None` takes every other column in file order.
    pub covariates: Option<Vec<String>>,
    /// Covariates forced to the continuous kind even if they only take the
    /// values 0 and 1.
    #[serde(default)]
    pub continuous: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            unit: "unit".into(),
            period: "period".into(),
            outcome: "y".into(),
            covariates: None,
            continuous: Vec::new(),
        }
    }
}

/// Loads a panel from a CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PanelData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_csv(file, schema)
}

/// Reads a panel from any CSV source; see [`load_csv`].
pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("missing column {name:?}")))
    };
    let (cu, cp, cy) = (col(&schema.unit)?, col(&schema.period)?, col(&schema.outcome)?);
    let cov_names: Vec<String> = match &schema.covariates {
        Some(list) => list.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != cu && *c != cp && *c != cy)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_cols = cov_names.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;

    let mut raw = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>().map_err(|_| Error::NonNumeric {
                column: header[c].clone(),
                row: row + 1,
                value: s.to_string(),
            })
        };
        let y = num(cy)?;
        let x = cov_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        raw.push((rec[cu].to_string(), rec[cp].to_string(), y, x));
    }
    if raw.is_empty() {
        return Err(Error::Empty("CSV file has no data rows".into()));
    }
    let unit_labels = sorted_labels(raw.iter().map(|r| r.0.as_str()));
    let period_labels = sorted_labels(raw.iter().map(|r| r.1.as_str()));
    let unit_id: HashMap<&str, usize> =
        unit_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let period_id: HashMap<&str, usize> =
        period_labels.iter().enumerate().map(|(t, l)| (l.as_str(), t)).collect();
    let obs: Vec<Observation> = raw
        .iter()
        .map(|(u, p, y, x)| Observation {
            unit: unit_id[u.as_str()],
            period: period_id[p.as_str()],
            y: *y,
            x: x.clone(),
        })
        .collect();
    let kinds = (0..cov_names.len())
        .map(|j| {
            if schema.continuous.contains(&cov_names[j]) {
                CovariateKind::Continuous
            } else {
                CovariateKind::detect(obs.iter().map(|o| o.x[j]))
            }
        })
        .collect();
    PanelData::from_parts(obs, cov_names, kinds, unit_labels, period_labels)
}

/// Distinct labels, ordered numerically when all parse as numbers and
/// lexicographically otherwise.
fn sorted_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut uniq: Vec<String> = labels.map(str::to_string).collect();
    uniq.sort();
    uniq.dedup();
    let numeric: Option<Vec<f64>> = uniq.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(vals) = numeric {
        let mut pairs: Vec<(f64, String)> = vals.into_iter().zip(uniq).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        pairs.into_iter().map(|(_, s)| s).collect()
    } else {
        uniq
    }
}
