//! Monte Carlo lab: panel designs, a replication loop with per-replication
//! random streams, bias/dispersion/coverage reports, and exact oracles for
//! coverage distortion and for the normal-variance example.
//!
//! Every replication draws from its own ChaCha8 stream (stream `r + 1` of
//! the design seed); a design held fixed across replications is drawn from
//! stream 0. Results are collected in replication order, so a report does
//! not depend on the number of worker threads.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::config;
use crate::correction::{correct_fit, CorrectionOptions, Method, Moments, SubpanelPolicy};
use crate::error::{Error, Result};
use crate::estimator::fit;
use crate::family::{norm_cdf, norm_quantile, Family, FamilyKind};
use crate::panel::{Observation, PanelData};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.2;

/// Process generating one covariate.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum Regressor {
    /// `loading·α_i + sd·e_it`, i.i.d. over periods.
    Gaussian { sd: f64, loading: f64 },
    /// `loading·α_i + v_it` with `v_it = rho·v_i,t−1 + sd·e_it`, started
    /// from its stationary law.
    Ar1 { rho: f64, sd: f64, loading: f64 },
    /// Persistent indicator: in the first period and, with probability
    /// `1 − stay`, in every later one it is redrawn as
    /// `1(base + loading·α_i + e_it > 0)`; otherwise it keeps its value.
    Binary { base: f64, loading: f64, stay: f64 },
    /// The outcome of the previous period.
    LaggedOutcome,
}

impl Regressor {
    fn parse(s: &str) -> Result<Self> {
        let mut parts = s.splitn(2, char::is_whitespace);
        let kind = parts.next().unwrap_or("").to_ascii_lowercase();
        let args = config::tokens(parts.next().unwrap_or(""))?;
        let get = |key: &str, default: Option<f64>| -> Result<f64> {
            match args.iter().find(|(k, _)| k == key) {
                Some((k, v)) => config::number(k, v),
                None => default.ok_or_else(|| Error::Input(format!("regressor {kind} needs {key}="))),
            }
        };
        let known: &[&str] = match kind.as_str() {
            "gaussian" => &["sd", "loading"],
            "ar1" => &["rho", "sd", "loading"],
            "binary" => &["base", "loading", "stay"],
            "lagged_outcome" | "lag" => &[],
            _ => return Err(Error::Input(format!("unknown regressor process {kind:?}"))),
        };
        if let Some((k, _)) = args.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            return Err(Error::Input(format!("regressor {kind} takes no argument {k:?}")));
        }
        Ok(match kind.as_str() {
            "gaussian" => Regressor::Gaussian {
                sd: get("sd", Some(1.0))?,
                loading: get("loading", Some(0.0))?,
            },
            "ar1" => Regressor::Ar1 {
                rho: get("rho", None)?,
                sd: get("sd", Some(1.0))?,
                loading: get("loading", Some(0.0))?,
            },
            "binary" => Regressor::Binary {
                base: get("base", Some(0.0))?,
                loading: get("loading", Some(0.0))?,
                stay: get("stay", Some(0.0))?,
            },
            _ => Regressor::LaggedOutcome,
        })
    }

    fn name(&self, j: usize) -> String {
        match self {
            Regressor::LaggedOutcome => "lag1_y".into(),
            _ => format!("x{}", j + 1),
        }
    }
}

/// Law of the unit or period effects.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum EffectLaw {
    Normal { mean: f64, sd: f64 },
    Fixed { values: Vec<f64> },
}

impl EffectLaw {
    fn parse(s: &str) -> Result<Self> {
        let mut parts = s.splitn(2, char::is_whitespace);
        let kind = parts.next().unwrap_or("").to_ascii_lowercase();
        let rest = parts.next().unwrap_or("");
        match kind.as_str() {
            "normal" => {
                let mut law = (0.0, 1.0);
                for (k, v) in config::tokens(rest)? {
                    match k.as_str() {
                        "mean" => law.0 = config::number(&k, &v)?,
                        "sd" => law.1 = config::number(&k, &v)?,
                        _ => return Err(Error::Input(format!("normal effects take no argument {k:?}"))),
                    }
                }
                Ok(EffectLaw::Normal { mean: law.0, sd: law.1 })
            }
            "zero" => Ok(EffectLaw::Normal { mean: 0.0, sd: 0.0 }),
            "fixed" => Ok(EffectLaw::Fixed {
                values: config::numbers("fixed", rest)?,
            }),
            _ => Err(Error::Input(format!("unknown effect law {kind:?}"))),
        }
    }

    fn draw<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            EffectLaw::Normal { mean, sd } => (0..n)
                .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            EffectLaw::Fixed { values } => values.clone(),
        }
    }
}

/// A Monte Carlo experiment. Together with its seed it determines the joint
/// law of every replication.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McDesign {
    pub label: String,
    pub n_units: usize,
    pub n_periods: usize,
    pub family: Family,
    /// Variance of the outcome noise for the linear family.
    pub sigma2: f64,
    /// True coefficients, one per regressor.
    pub beta: Vec<f64>,
    pub regressors: Vec<Regressor>,
    pub alpha: EffectLaw,
    pub gamma: EffectLaw,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<Method>,
    /// Draw the effects and the exogenous covariates once and keep them
    /// across replications; only outcomes (and lagged outcomes) are redrawn.
    pub fixed_design: bool,
    /// Periods simulated before the sample in dynamic designs. They use
    /// only the unit effect and the lagged outcome.
    pub burn_in: usize,
    /// Nominal coverage of the reported intervals.
    pub level: f64,
    pub correction: CorrectionOptions,
}

impl McDesign {
    /// A design with no regressors, standard normal effects and FE only.
    pub fn new(n_units: usize, n_periods: usize, family: Family) -> Self {
        let sigma2 = match &family {
            Family::Linear { sigma2 } => *sigma2,
            _ => 1.0,
        };
        McDesign {
            label: "design".into(),
            n_units,
            n_periods,
            family,
            sigma2,
            beta: Vec::new(),
            regressors: Vec::new(),
            alpha: EffectLaw::Normal { mean: 0.0, sd: 1.0 },
            gamma: EffectLaw::Normal { mean: 0.0, sd: 1.0 },
            reps: 100,
            seed: 0,
            estimators: vec![Method::Fe],
            fixed_design: false,
            burn_in: 50,
            level: 0.95,
            correction: CorrectionOptions::default(),
        }
    }

    pub fn with_regressor(mut self, r: Regressor, beta: f64) -> Self {
        self.regressors.push(r);
        self.beta.push(beta);
        self
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidOption(m));
        if self.reps == 0 {
            return bad("a design needs at least one replication".into());
        }
        if self.n_units < 2 || self.n_periods < 2 {
            return bad("a design needs at least two units and two periods".into());
        }
        if self.regressors.is_empty() || self.beta.len() != self.regressors.len() {
            return bad(format!(
                "{} coefficients for {} regressors",
                self.beta.len(),
                self.regressors.len()
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("coverage level {} outside (0, 1)", self.level));
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        if matches!(self.family, Family::Custom(_)) {
            return bad("designs support the built-in families only".into());
        }
        for (law, n, what) in [(&self.alpha, self.n_units, "unit"), (&self.gamma, self.n_periods, "period")] {
            if let EffectLaw::Fixed { values } = law {
                if values.len() != n {
                    return bad(format!("{} fixed {what} effects for {n} {what}s", values.len()));
                }
            }
        }
        for r in &self.regressors {
            match *r {
                Regressor::Ar1 { rho, .. } if rho.abs() >= 1.0 => {
                    return bad(format!("AR(1) coefficient {rho} is not stationary"));
                }
                Regressor::Binary { stay, .. } if !(0.0..=1.0).contains(&stay) => {
                    return bad(format!("stay probability {stay} outside [0, 1]"));
                }
                _ => {}
            }
        }
        self.correction.solve.check()
    }

    fn simulation_family(&self) -> Family {
        match self.family {
            Family::Linear { .. } => Family::Linear { sigma2: self.sigma2 },
            ref f => f.clone(),
        }
    }

    /// Reads a design from `key = value` text. Keys: `label`, `n_units`,
    /// `n_periods`, `family`, `sigma2`, `beta` (comma list), `regressor`
    /// (repeatable, e.g. `ar1 rho=0.5 sd=1 loading=0.5`), `alpha`, `gamma`
    /// (`normal mean=0 sd=1`, `zero` or `fixed v1, v2, ...`), `reps`,
    /// `seed`, `estimators` (e.g. `fe, abc(trim=1), sbc, hbc`),
    /// `fixed_design`, `burn_in`, `level`, `policy`
    /// (`strict`/`drop_non_varying`), `moments` (`realized`/`expected`),
    /// `tol_grad`, `max_outer`.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut d = McDesign::new(0, 0, Family::linear());
        let mut family = FamilyKind::Linear;
        let mut beta = None;
        let mut policy = None;
        for e in config::parse(text)? {
            let (k, v) = (e.key.as_str(), e.value.as_str());
            let at = |err: Error| Error::Input(format!("line {}: {err}", e.line));
            let res: Result<()> = (|| {
                match k {
                    "label" => d.label = v.to_string(),
                    "n_units" | "n" => d.n_units = config::number(k, v)?,
                    "n_periods" | "t" => d.n_periods = config::number(k, v)?,
                    "family" => family = v.parse()?,
                    "sigma2" => d.sigma2 = config::number(k, v)?,
                    "beta" => beta = Some(config::numbers(k, v)?),
                    "regressor" => d.regressors.push(Regressor::parse(v)?),
                    "alpha" => d.alpha = EffectLaw::parse(v)?,
                    "gamma" => d.gamma = EffectLaw::parse(v)?,
                    "reps" => d.reps = config::number(k, v)?,
                    "seed" => d.seed = config::number(k, v)?,
                    "estimators" => {
                        d.estimators = config::split_list(v).iter().map(|m| m.parse()).collect::<Result<_>>()?
                    }
                    "fixed_design" => d.fixed_design = config::boolean(k, v)?,
                    "burn_in" => d.burn_in = config::number(k, v)?,
                    "level" => d.level = config::number(k, v)?,
                    "policy" => {
                        policy = Some(match v.to_ascii_lowercase().as_str() {
                            "strict" => SubpanelPolicy::Strict,
                            "drop_non_varying" | "drop-non-varying" => SubpanelPolicy::DropNonVarying,
                            _ => return Err(Error::Input(format!("unknown policy {v:?}"))),
                        })
                    }
                    "moments" => {
                        d.correction.moments = match v.to_ascii_lowercase().as_str() {
                            "realized" => Moments::Realized,
                            "expected" => Moments::Expected,
                            _ => return Err(Error::Input(format!("unknown moments {v:?}"))),
                        }
                    }
                    "tol_grad" => d.correction.solve.tol_grad = config::number(k, v)?,
                    "max_outer" => d.correction.solve.max_outer = config::number(k, v)?,
                    _ => return Err(Error::Input(format!("unknown design key {k:?}"))),
                }
                Ok(())
            })();
            res.map_err(at)?;
        }
        d.family = match family {
            FamilyKind::Linear => Family::Linear { sigma2: d.sigma2 },
            other => other.family(),
        };
        d.beta = beta.ok_or_else(|| Error::Input("design needs `beta`".into()))?;
        d.correction.policy = policy.unwrap_or(if d.family.binary_outcome() || d.family == Family::Poisson {
            SubpanelPolicy::DropNonVarying
        } else {
            SubpanelPolicy::Strict
        });
        d.check()?;
        Ok(d)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_config_str(&text)
    }

    /// The design as `key = value` text accepted by [`McDesign::from_config_str`].
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let law = |l: &EffectLaw| match l {
            EffectLaw::Normal { mean, sd } => format!("normal mean={mean:?} sd={sd:?}"),
            EffectLaw::Fixed { values } => format!("fixed {}", list(values)),
        };
        let _ = writeln!(s, "label = {}", self.label);
        let _ = writeln!(s, "n_units = {}", self.n_units);
        let _ = writeln!(s, "n_periods = {}", self.n_periods);
        let _ = writeln!(s, "family = {}", self.family.name());
        let _ = writeln!(s, "sigma2 = {:?}", self.sigma2);
        let _ = writeln!(s, "beta = {}", list(&self.beta));
        for r in &self.regressors {
            let line = match r {
                Regressor::Gaussian { sd, loading } => format!("gaussian sd={sd:?} loading={loading:?}"),
                Regressor::Ar1 { rho, sd, loading } => format!("ar1 rho={rho:?} sd={sd:?} loading={loading:?}"),
                Regressor::Binary { base, loading, stay } => {
                    format!("binary base={base:?} loading={loading:?} stay={stay:?}")
                }
                Regressor::LaggedOutcome => "lagged_outcome".into(),
            };
            let _ = writeln!(s, "regressor = {line}");
        }
        let _ = writeln!(s, "alpha = {}", law(&self.alpha));
        let _ = writeln!(s, "gamma = {}", law(&self.gamma));
        let _ = writeln!(s, "reps = {}", self.reps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let methods: Vec<String> = self.estimators.iter().map(method_spec).collect();
        let _ = writeln!(s, "estimators = {}", methods.join(", "));
        let _ = writeln!(s, "fixed_design = {}", self.fixed_design);
        let _ = writeln!(s, "burn_in = {}", self.burn_in);
        let _ = writeln!(s, "level = {:?}", self.level);
        let policy = match self.correction.policy {
            SubpanelPolicy::Strict => "strict",
            SubpanelPolicy::DropNonVarying => "drop_non_varying",
        };
        let _ = writeln!(s, "policy = {policy}");
        let moments = match self.correction.moments {
            Moments::Realized => "realized",
            Moments::Expected => "expected",
        };
        let _ = writeln!(s, "moments = {moments}");
        let _ = writeln!(s, "tol_grad = {:?}", self.correction.solve.tol_grad);
        let _ = writeln!(s, "max_outer = {}", self.correction.solve.max_outer);
        s
    }
}

fn method_spec(m: &Method) -> String {
    match m {
        Method::Fe => "fe".into(),
        Method::Abc { trim, iterations } => format!("abc(trim={trim}, iterations={iterations})"),
        Method::Jbc => "jbc".into(),
        Method::Sbc { splits, seed } => format!("sbc(splits={splits}, seed={seed})"),
        Method::Hbc => "hbc".into(),
        Method::Psbc { trim } => format!("psbc(trim={trim})"),
    }
}

/// Synthetic stand-in for a calibrated logit labour-force design, used
/// because the calibration data are not distributed.
///
/// Unit and period effects are i.i.d. standard normal. The first
/// covariate is a continuous AR(1) process (ρ = 0.6) loaded on the unit
/// effect; every further covariate is a persistent indicator (stay
/// probability 0.5) whose propensity also loads on the unit effect. True
/// coefficients are ±1 with alternating signs. The effects and covariates
/// are drawn once from `seed` and held fixed; only the outcomes are
/// redrawn. Estimators: FE, ABC (trim 0), SBC and HBC.
pub fn calibrated_logit_design(n_units: usize, n_periods: usize, d_beta: usize, seed: u64) -> McDesign {
    let mut d = McDesign::new(n_units, n_periods, Family::Logit);
    d.label = format!("synthetic logit design (N={n_units}, T={n_periods})");
    for j in 0..d_beta {
        let r = match j {
            0 => Regressor::Ar1 {
                rho: 0.6,
                sd: 1.0,
                loading: 0.5,
            },
            _ => Regressor::Binary {
                base: 0.0,
                loading: 0.5,
                stay: 0.5,
            },
        };
        d = d.with_regressor(r, if j % 2 == 0 { 1.0 } else { -1.0 });
    }
    d.seed = seed;
    d.fixed_design = true;
    d.estimators = vec![
        Method::Fe,
        Method::Abc { trim: 0, iterations: 1 },
        Method::Sbc { splits: 1, seed },
        Method::Hbc,
    ];
    d.correction.policy = SubpanelPolicy::DropNonVarying;
    d
}

/// Effects and exogenous covariates of one draw of the design.
#[derive(Clone, Debug)]
struct DesignDraw {
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    /// Row `(i·T + t)·k + j`; lagged-outcome slots are left at zero.
    x: Vec<f64>,
}

fn draw_design<R: Rng>(d: &McDesign, rng: &mut R) -> DesignDraw {
    let (n, t, k) = (d.n_units, d.n_periods, d.regressors.len());
    let alpha = d.alpha.draw(n, rng);
    let gamma = d.gamma.draw(t, rng);
    let mut x = vec![0.0; n * t * k];
    for (i, &a) in alpha.iter().enumerate() {
        for (j, r) in d.regressors.iter().enumerate() {
            let mut state = 0.0;
            for s in 0..t {
                let e: f64 = rng.sample(StandardNormal);
                let v = match *r {
                    Regressor::Gaussian { sd, loading } => loading * a + sd * e,
                    Regressor::Ar1 { rho, sd, loading } => {
                        state = if s == 0 {
                            sd / (1.0 - rho * rho).sqrt() * e
                        } else {
                            rho * state + sd * e
                        };
                        loading * a + state
                    }
                    Regressor::Binary { base, loading, stay } => {
                        let keep: f64 = rng.gen();
                        if s == 0 || keep >= stay {
                            state = if base + loading * a + e > 0.0 { 1.0 } else { 0.0 };
                        }
                        state
                    }
                    Regressor::LaggedOutcome => 0.0,
                };
                x[(i * t + s) * k + j] = v;
            }
        }
    }
    DesignDraw { alpha, gamma, x }
}

/// Simulated panel of one replication.
#[derive(Clone, Debug)]
pub struct SimulatedPanel {
    pub data: PanelData,
    /// Units and periods removed because their effects diverge.
    pub dropped_units: usize,
    pub dropped_periods: usize,
}

fn draw_outcomes<R: Rng>(d: &McDesign, draw: &DesignDraw, rng: &mut R) -> Result<SimulatedPanel> {
    let (n, t, k) = (d.n_units, d.n_periods, d.regressors.len());
    let fam = d.simulation_family();
    let lag_slots: Vec<usize> = (0..k).filter(|&j| d.regressors[j] == Regressor::LaggedOutcome).collect();
    let lag_coef: f64 = lag_slots.iter().map(|&j| d.beta[j]).sum();
    let mut obs = Vec::with_capacity(n * t);
    for i in 0..n {
        let a = draw.alpha[i];
        let mut prev = 0.0;
        if !lag_slots.is_empty() {
            for _ in 0..d.burn_in {
                prev = fam.simulate(lag_coef * prev + a, rng);
            }
        }
        for s in 0..t {
            let mut x = draw.x[(i * t + s) * k..(i * t + s + 1) * k].to_vec();
            for &j in &lag_slots {
                x[j] = prev;
            }
            let u: f64 = x.iter().zip(&d.beta).map(|(a, b)| a * b).sum::<f64>() + a + draw.gamma[s];
            let y = fam.simulate(u, rng);
            obs.push(Observation { unit: i, period: s, y, x });
            prev = y;
        }
    }
    let names = d.regressors.iter().enumerate().map(|(j, r)| r.name(j)).collect();
    let mut data = PanelData::new(n, t, obs, names)?;
    let (mut du, mut dp) = (0, 0);
    loop {
        let idx = data.index();
        let y = data.y();
        let keep_u: Vec<bool> = (0..idx.n_units())
            .map(|i| !fam.effect_diverges(idx.unit_obs(i).map(|k| y[k])))
            .collect();
        let keep_p: Vec<bool> = (0..idx.n_periods())
            .map(|s| !fam.effect_diverges(idx.period_obs(s).iter().map(|&k| y[k])))
            .collect();
        let bad_u = keep_u.iter().filter(|k| !**k).count();
        let bad_p = keep_p.iter().filter(|k| !**k).count();
        if bad_u == 0 && bad_p == 0 {
            break;
        }
        if bad_u == keep_u.len() || bad_p == keep_p.len() {
            return Err(Error::Empty("every unit or period lacks outcome variation".into()));
        }
        data = data.restrict(&keep_u, &keep_p)?.data;
        du += bad_u;
        dp += bad_p;
    }
    Ok(SimulatedPanel {
        data,
        dropped_units: du,
        dropped_periods: dp,
    })
}

fn rep_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Panel of replication `rep` (zero-based), exactly as [`run_mc`] draws it.
pub fn simulate_panel(design: &McDesign, rep: usize) -> Result<SimulatedPanel> {
    design.check()?;
    let fixed = design.fixed_design.then(|| draw_design(design, &mut rep_rng(design.seed, 0)));
    simulate_with(design, fixed.as_ref(), rep)
}

fn simulate_with(design: &McDesign, fixed: Option<&DesignDraw>, rep: usize) -> Result<SimulatedPanel> {
    let mut rng = rep_rng(design.seed, rep as u64 + 1);
    match fixed {
        Some(draw) => draw_outcomes(design, draw, &mut rng),
        None => {
            let draw = draw_design(design, &mut rng);
            draw_outcomes(design, &draw, &mut rng)
        }
    }
}

/// Coefficients and standard errors of one estimator, or its error.
type EstimatorDraw = std::result::Result<(Vec<f64>, Vec<f64>), String>;

/// Outcome of one replication.
#[derive(Clone, Debug)]
struct Replication {
    /// Per estimator: coefficients and standard errors, or the error.
    estimates: Vec<EstimatorDraw>,
    dropped_units: usize,
    dropped_periods: usize,
}

fn replicate(design: &McDesign, fixed: Option<&DesignDraw>, rep: usize) -> std::result::Result<Replication, String> {
    let sim = simulate_with(design, fixed, rep).map_err(|e| e.to_string())?;
    let full = fit(&sim.data, &design.family, &design.correction.solve).map_err(|e| e.to_string())?;
    let estimates = design
        .estimators
        .iter()
        .map(|m| {
            correct_fit(&sim.data, &design.family, &full, m, &design.correction)
                .map(|c| (c.beta, c.se))
                .map_err(|e| e.to_string())
        })
        .collect();
    Ok(Replication {
        estimates,
        dropped_units: sim.dropped_units,
        dropped_periods: sim.dropped_periods,
    })
}

/// Monte Carlo summary of one coefficient under one estimator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    /// Mean minus truth.
    pub bias: f64,
    /// Standard deviation over replications (divisor R), so that
    /// `rmse² = bias² + sd²`.
    pub sd: f64,
    pub rmse: f64,
    /// Share of nominal intervals `β̂ ± z·se` covering the truth.
    pub coverage: f64,
    /// Mean of the reported standard errors.
    pub mean_se: f64,
    /// Monte Carlo standard error of `bias`.
    pub bias_mc_se: f64,
    /// Bias relative to the true value, in percent; positive when the
    /// estimates are pushed away from zero. `None` for a zero truth.
    pub bias_pct: Option<f64>,
    pub sd_pct: Option<f64>,
    pub rmse_pct: Option<f64>,
    /// Coverage predicted by the normal approximation at the measured
    /// bias-to-dispersion ratio.
    pub predicted_coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub method: Method,
    pub label: String,
    pub successes: usize,
    pub failures: usize,
    pub coefficients: Vec<CoefficientSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub design: McDesign,
    pub reps: usize,
    /// Replications lost before any estimator ran (simulation or fit).
    pub failed_reps: usize,
    /// First few failure messages, in replication order.
    pub failure_examples: Vec<String>,
    pub mean_dropped_units: f64,
    pub mean_dropped_periods: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl SimReport {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.label == label)
    }

    /// Aligned text table: one row per estimator, and for every
    /// coefficient the bias, SD and RMSE in percent of the true value and
    /// the coverage of the nominal intervals. Analytical corrections with a
    /// lag window show it as `M=`.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let d = &self.design;
        let _ = writeln!(
            s,
            "{}: {} family, N={}, T={}, {} replications ({} failed), mean dropped units {:.1}",
            d.label,
            d.family.name(),
            d.n_units,
            d.n_periods,
            self.reps,
            self.failed_reps,
            self.mean_dropped_units
        );
        let cov = format!("cov{:.0}", 100.0 * d.level);
        let width = 8;
        let block = 4 * width;
        let _ = write!(s, "{:<10}", "");
        for (j, r) in d.regressors.iter().enumerate() {
            let head = format!("{} (β={})", r.name(j), d.beta[j]);
            let _ = write!(s, " | {head:^block$}");
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<10}", "Estimator");
        for _ in &d.regressors {
            let _ = write!(s, " | {:>width$}{:>width$}{:>width$}{:>width$}", "Bias", "SD", "RMSE", cov);
        }
        let _ = writeln!(s);
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        for e in &self.estimators {
            let label = match e.method {
                Method::Abc { trim, .. } | Method::Psbc { trim } if trim > 0 => format!("{} M={trim}", e.label),
                _ => e.label.clone(),
            };
            let _ = write!(s, "{label:<10}");
            for c in &e.coefficients {
                let _ = write!(
                    s,
                    " | {:>width$}{:>width$}{:>width$}{:>width$.2}",
                    pct(c.bias_pct),
                    pct(c.sd_pct),
                    pct(c.rmse_pct),
                    c.coverage
                );
            }
            if e.failures > 0 {
                let _ = write!(s, "  ({} failed)", e.failures);
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "Bias, SD and RMSE in percent of the true value; {cov}: coverage of nominal intervals.");
        s
    }
}

impl std::fmt::Display for SimReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.table())
    }
}

/// Runs the experiment on `workers` threads (0: all available). The report
/// is a function of the design and its seed only.
pub fn run_mc(design: &McDesign, workers: usize) -> Result<SimReport> {
    design.check()?;
    let fixed = design.fixed_design.then(|| draw_design(design, &mut rep_rng(design.seed, 0)));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("cannot build worker pool: {e}")))?;
    let reps: Vec<std::result::Result<Replication, String>> = pool.install(|| {
        (0..design.reps)
            .into_par_iter()
            .map(|r| replicate(design, fixed.as_ref(), r))
            .collect()
    });
    summarize(design, &reps)
}

fn summarize(design: &McDesign, reps: &[std::result::Result<Replication, String>]) -> Result<SimReport> {
    let total = reps.len();
    let ok: Vec<&Replication> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failure_examples: Vec<String> = reps
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| format!("replication {i}: {e}")))
        .take(5)
        .collect();
    let failed = total - ok.len();
    if failed as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(Error::Simulation(format!(
            "{failed} of {total} replications failed; first: {}",
            failure_examples.first().map_or("", String::as_str)
        )));
    }
    let z = norm_quantile(0.5 + design.level / 2.0);
    let names: Vec<String> = design.regressors.iter().enumerate().map(|(j, r)| r.name(j)).collect();
    let mut estimators = Vec::new();
    for (e, method) in design.estimators.iter().enumerate() {
        let draws: Vec<&(Vec<f64>, Vec<f64>)> = ok.iter().filter_map(|r| r.estimates[e].as_ref().ok()).collect();
        let failures = ok.len() - draws.len();
        if failures as f64 > MAX_FAILURE_RATE * total as f64 {
            let first = ok.iter().find_map(|r| r.estimates[e].as_ref().err()).cloned().unwrap_or_default();
            return Err(Error::Simulation(format!(
                "{} failed in {failures} of {total} replications; first: {first}",
                method.label()
            )));
        }
        let r = draws.len() as f64;
        let coefficients = (0..design.beta.len())
            .map(|j| {
                let truth = design.beta[j];
                let mean = draws.iter().map(|(b, _)| b[j]).sum::<f64>() / r;
                let sd = (draws.iter().map(|(b, _)| (b[j] - mean).powi(2)).sum::<f64>() / r).sqrt();
                let mse = draws.iter().map(|(b, _)| (b[j] - truth).powi(2)).sum::<f64>() / r;
                let hits = draws.iter().filter(|(b, se)| (b[j] - truth).abs() <= z * se[j]).count();
                let bias = mean - truth;
                let rel = |v: f64| (truth != 0.0).then(|| 100.0 * v / truth.abs());
                CoefficientSummary {
                    name: names[j].clone(),
                    truth,
                    mean,
                    bias,
                    sd,
                    rmse: mse.sqrt(),
                    coverage: hits as f64 / r,
                    mean_se: draws.iter().map(|(_, se)| se[j]).sum::<f64>() / r,
                    bias_mc_se: sd / r.sqrt(),
                    bias_pct: (truth != 0.0).then(|| 100.0 * bias / truth),
                    sd_pct: rel(sd),
                    rmse_pct: rel(mse.sqrt()),
                    predicted_coverage: if sd > 0.0 {
                        coverage_theory(bias / sd, design.level).unwrap_or(f64::NAN)
                    } else {
                        f64::NAN
                    },
                }
            })
            .collect();
        estimators.push(EstimatorSummary {
            method: method.clone(),
            label: method.label(),
            successes: draws.len(),
            failures,
            coefficients,
        });
    }
    let k = ok.len().max(1) as f64;
    Ok(SimReport {
        design: design.clone(),
        reps: total,
        failed_reps: failed,
        failure_examples,
        mean_dropped_units: ok.iter().map(|r| r.dropped_units as f64).sum::<f64>() / k,
        mean_dropped_periods: ok.iter().map(|r| r.dropped_periods as f64).sum::<f64>() / k,
        estimators,
    })
}

/// Asymptotic coverage of a nominal `level` interval when the estimator is
/// centred `shift` standard deviations away from the truth:
/// `Φ(z − shift) − Φ(−z − shift)` with `z` the `(1 + level)/2` quantile.
pub fn coverage_theory(shift: f64, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidOption(format!("coverage level {level} outside (0, 1)")));
    }
    if shift.is_nan() {
        return Err(Error::InvalidOption("shift is not a number".into()));
    }
    let z = norm_quantile(0.5 + level / 2.0);
    Ok((norm_cdf(z - shift) - norm_cdf(-z - shift)).max(0.0))
}

/// Estimators of a normal variance from an i.i.d. sample, used as an exact
/// benchmark for the corrections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalEstimator {
    /// Sample variance with divisor n.
    Mle,
    /// Bias-corrected once with the plug-in bias `−σ̂²/n`.
    Abc,
    /// Plug-in correction iterated `k` times.
    AbcIterated(usize),
    /// Leave-one-out jackknife.
    Jbc,
    /// Split-sample jackknife over the two halves.
    Sbc,
}

impl NormalEstimator {
    pub fn label(&self) -> String {
        match self {
            NormalEstimator::Mle => "MLE".into(),
            NormalEstimator::Abc => "ABC".into(),
            NormalEstimator::AbcIterated(k) => format!("ABC{k}"),
            NormalEstimator::Jbc => "JBC".into(),
            NormalEstimator::Sbc => "SBC".into(),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::InvalidOption(format!("sample size {n} below 4")));
        }
        match self {
            NormalEstimator::Sbc if n % 2 == 1 => {
                Err(Error::InvalidOption(format!("split-sample jackknife needs an even sample size, got {n}")))
            }
            NormalEstimator::AbcIterated(0) => Err(Error::InvalidOption("iterated correction needs k ≥ 1".into())),
            _ => Ok(()),
        }
    }
}

/// Exact bias and variance of `est` for a sample of size `n` from a normal
/// law with variance `sigma2`.
///
/// With `V = 2σ⁴(n−1)/n²` the variance of the sample variance:
/// MLE has bias `−σ²/n`; ABC is `(1 + 1/n)σ̂²`; the k-times iterated ABC is
/// `(Σ_{r≤k} n^{−r})σ̂²` with bias `−σ²/n^{k+1}`; JBC is `nσ̂²/(n−1)`; SBC
/// equals `σ̂² + (z̄₁ − z̄₂)²/4`, unbiased with variance `2(n+2)σ⁴/n² =
/// (n+2)V/(n−1)` because the within-half sum of squares is independent of
/// the difference of the half means.
pub fn normal_variance_oracle(n: usize, sigma2: f64, est: NormalEstimator) -> Result<(f64, f64)> {
    est.check(n)?;
    let nf = n as f64;
    let v = 2.0 * sigma2 * sigma2 * (nf - 1.0) / (nf * nf);
    let scaled = |c: f64| (sigma2 * (c * (nf - 1.0) / nf - 1.0), c * c * v);
    Ok(match est {
        NormalEstimator::Mle => (-sigma2 / nf, v),
        NormalEstimator::Abc => {
            let (_, var) = scaled(1.0 + 1.0 / nf);
            (-sigma2 / (nf * nf), var)
        }
        NormalEstimator::AbcIterated(k) => {
            let c: f64 = (0..=k).map(|r| nf.powi(-(r as i32))).sum();
            (-sigma2 * nf.powi(-(k as i32 + 1)), c * c * v)
        }
        NormalEstimator::Jbc => (0.0, (nf / (nf - 1.0)).powi(2) * v),
        NormalEstimator::Sbc => (0.0, 2.0 * (nf + 2.0) * sigma2 * sigma2 / (nf * nf)),
    })
}

fn sample_variance(z: &[f64]) -> f64 {
    let m = z.iter().sum::<f64>() / z.len() as f64;
    z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / z.len() as f64
}

/// Applies the estimator's recipe to one sample: the iterated plug-in
/// correction, the leave-one-out jackknife over all n deletions and the
/// split-sample jackknife over the two halves, computed from the data
/// rather than from their closed forms.
pub fn normal_variance_estimate(z: &[f64], est: NormalEstimator) -> f64 {
    let n = z.len();
    let nf = n as f64;
    let mle = sample_variance(z);
    match est {
        NormalEstimator::Mle => mle,
        NormalEstimator::Abc => mle + mle / nf,
        NormalEstimator::AbcIterated(k) => {
            // Each step subtracts the plug-in bias −σ̃²/n at the current value.
            let mut cur = mle;
            for _ in 0..k {
                cur = mle + cur / nf;
            }
            cur
        }
        NormalEstimator::Jbc => {
            let m = z.iter().sum::<f64>() / nf;
            let ss: f64 = z.iter().map(|v| (v - m) * (v - m)).sum();
            let m1 = nf - 1.0;
            let loo: f64 = z
                .iter()
                .map(|v| {
                    // Deleting z_j shifts the mean of the deviations by −d_j/(n−1).
                    let d = v - m;
                    let mean = -d / m1;
                    (ss - d * d) / m1 - mean * mean
                })
                .sum::<f64>()
                / nf;
            nf * mle - (nf - 1.0) * loo
        }
        NormalEstimator::Sbc => {
            let (a, b) = z.split_at(n / 2);
            2.0 * mle - 0.5 * (sample_variance(a) + sample_variance(b))
        }
    }
}

/// Monte Carlo moments of a normal-variance estimator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalMoments {
    pub estimator: NormalEstimator,
    pub bias: f64,
    pub variance: f64,
    /// Monte Carlo standard errors of `bias` and `variance`.
    pub bias_se: f64,
    pub variance_se: f64,
    pub reps: usize,
}

/// Simulates `reps` samples of size `n` (mean zero, variance `sigma2`) and
/// applies every estimator to the same samples, so differences between
/// estimators carry no independent simulation noise.
pub fn normal_variance_mc(
    n: usize,
    sigma2: f64,
    estimators: &[NormalEstimator],
    reps: usize,
    seed: u64,
) -> Result<Vec<NormalMoments>> {
    for e in estimators {
        e.check(n)?;
    }
    if reps < 2 {
        return Err(Error::InvalidOption("at least two replications are needed".into()));
    }
    let sd = sigma2.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; n];
    // Power sums of the estimation errors, for bias, variance and the
    // fourth central moment.
    let mut sums = vec![[0.0f64; 4]; estimators.len()];
    for _ in 0..reps {
        for v in z.iter_mut() {
            *v = sd * rng.sample::<f64, _>(StandardNormal);
        }
        for (e, acc) in estimators.iter().zip(sums.iter_mut()) {
            let d = normal_variance_estimate(&z, *e) - sigma2;
            let d2 = d * d;
            acc[0] += d;
            acc[1] += d2;
            acc[2] += d2 * d;
            acc[3] += d2 * d2;
        }
    }
    let r = reps as f64;
    Ok(estimators
        .iter()
        .zip(&sums)
        .map(|(e, s)| {
            let (m1, m2, m3, m4) = (s[0] / r, s[1] / r, s[2] / r, s[3] / r);
            let var_pop = m2 - m1 * m1;
            let c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
            NormalMoments {
                estimator: *e,
                bias: m1,
                variance: var_pop * r / (r - 1.0),
                bias_se: (var_pop / r).sqrt(),
                variance_se: ((c4 - var_pop * var_pop).max(0.0) / r).sqrt(),
                reps,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_worked_values() {
        assert!((coverage_theory(0.0, 0.95).unwrap() - 0.95).abs() < 1e-10);
        assert!((coverage_theory(1.0, 0.95).unwrap() - 0.8300).abs() < 1e-4);
        assert!(coverage_theory(40.0, 0.95).unwrap() < 1e-12);
        assert_eq!(coverage_theory(f64::INFINITY, 0.95).unwrap(), 0.0);
        assert!(coverage_theory(0.5, 1.0).is_err());
    }

    #[test]
    fn coverage_is_symmetric_in_shift() {
        for s in [0.3, 1.2, 2.5] {
            let a = coverage_theory(s, 0.9).unwrap();
            let b = coverage_theory(-s, 0.9).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn oracle_worked_values() {
        let (b, v) = normal_variance_oracle(100, 1.0, NormalEstimator::Mle).unwrap();
        assert!((b + 0.01).abs() < 1e-15);
        assert!((v - 0.0198).abs() < 1e-15);
        let (b, v) = normal_variance_oracle(100, 1.0, NormalEstimator::Jbc).unwrap();
        assert_eq!(b, 0.0);
        assert!((v - 0.0198 * (100.0f64 / 99.0).powi(2)).abs() < 1e-15);
        let (b, v) = normal_variance_oracle(100, 1.0, NormalEstimator::Sbc).unwrap();
        assert_eq!(b, 0.0);
        assert!((v - 0.0204).abs() < 1e-15);
        let (b1, v1) = normal_variance_oracle(100, 1.0, NormalEstimator::Abc).unwrap();
        let (b2, v2) = normal_variance_oracle(100, 1.0, NormalEstimator::AbcIterated(1)).unwrap();
        assert!((b1 - b2).abs() < 1e-18 && (v1 - v2).abs() < 1e-15);
        assert!(normal_variance_oracle(3, 1.0, NormalEstimator::Mle).is_err());
        assert!(normal_variance_oracle(7, 1.0, NormalEstimator::Sbc).is_err());
    }

    #[test]
    fn recipes_match_closed_forms_per_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4usize, 10, 100] {
            let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let nf = n as f64;
            let s2 = sample_variance(&z);
            let jbc = normal_variance_estimate(&z, NormalEstimator::Jbc);
            assert!((jbc - nf * s2 / (nf - 1.0)).abs() < 1e-12);
            let m = z.iter().sum::<f64>() / nf;
            let m1 = z[..n / 2].iter().sum::<f64>() / (nf / 2.0);
            let m2 = z[n / 2..].iter().sum::<f64>() / (nf / 2.0);
            let sbc = normal_variance_estimate(&z, NormalEstimator::Sbc);
            assert!((sbc - (s2 + m * m - m1 * m2)).abs() < 1e-12);
            let k3 = normal_variance_estimate(&z, NormalEstimator::AbcIterated(3));
            assert!((k3 - (1.0 + 1.0 / nf + 1.0 / nf.powi(2) + 1.0 / nf.powi(3)) * s2).abs() < 1e-12);
        }
    }

    #[test]
    fn design_config_round_trip() {
        let text = "\
# table layout
label = demo
n_units = 50
n_periods = 6
family = logit
beta = 1.0, -0.5
regressor = ar1 rho=0.5 sd=1 loading=0.5
regressor = binary base=0.2 loading=0.5 stay=0.8
alpha = normal mean=0 sd=1
gamma = zero
reps = 7
seed = 11
estimators = fe, abc(trim=1, iterations=2), sbc(splits=2, seed=3), hbc
fixed_design = true
";
        let d = McDesign::from_config_str(text).unwrap();
        assert_eq!(d.n_units, 50);
        assert_eq!(d.family, Family::Logit);
        assert_eq!(d.correction.policy, SubpanelPolicy::DropNonVarying);
        assert_eq!(d.estimators[1], Method::Abc { trim: 1, iterations: 2 });
        let again = McDesign::from_config_str(&d.to_config_string()).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn design_errors() {
        assert!(McDesign::from_config_str("n_units = 5\nn_periods = 5\nbeta = 1\n").is_err());
        assert!(McDesign::from_config_str("n_units = 5\nn_periods = 5\nbeta = 1\nregressor = wiener\n").is_err());
        assert!(McDesign::from_config_str("colour = blue\n").is_err());
    }

    #[test]
    fn fixed_design_repeats_covariates() {
        let d = calibrated_logit_design(30, 6, 3, 5);
        let a = simulate_panel(&d, 0).unwrap();
        let b = simulate_panel(&d, 0).unwrap();
        assert_eq!(a.data.y(), b.data.y());
        let c = simulate_panel(&d, 1).unwrap();
        assert_ne!(a.data.y(), c.data.y());
    }
}
