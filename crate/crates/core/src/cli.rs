//! Command line: `fit`, `correct`, `ape`, `simulate`, `project`,
//! `validate` and `rerun`.
//!
//! Every JSON output is an envelope `{"config": …, "result": …}` whose
//! `config` is the parsed command line. `rerun` executes such a config
//! again; with the same input files the regenerated output is identical
//! byte for byte. Floats are written in the shortest form that parses back
//! to the same value.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::correction::{correct_fit, CorrectionOptions, Method, Moments, SubpanelPolicy};
use crate::effects::{corrected_ape_from_fit, ApeTarget};
use crate::error::{Error, Result};
use crate::estimator::{fit, two_way_project, SolveOptions};
use crate::family::{EffectSpec, FamilyKind};
use crate::panel::{load_csv, CsvSchema, PanelData};
use crate::simlab::{run_mc, McDesign};
use crate::validate::{validate, ValidateOptions};

#[derive(Parser, Debug)]
#[command(name = "fepanel", version, about = "Two-way fixed-effects panel models with bias corrections")]
pub struct Cli {
    #[command(subcommand)]
    pub run: RunConfig,
}

/// A complete, serializable description of one run.
#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum RunConfig {
    /// Fit the two-way fixed-effects model.
    Fit(FitArgs),
    /// Fit and apply a bias correction to the coefficients.
    Correct(CorrectArgs),
    /// Average partial effect of one covariate, optionally corrected.
    Ape(ApeArgs),
    /// Run a Monte Carlo experiment from a design file.
    Simulate(SimulateArgs),
    /// Export covariates projected on the complement of the effects.
    Project(ProjectArgs),
    /// Report units, periods and covariates that break identification.
    Validate(ValidateArgs),
    /// Execute the configuration embedded in a JSON output again.
    Rerun(RerunArgs),
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub family: FamilyKind,
    #[arg(long, default_value = "unit")]
    pub unit_col: String,
    #[arg(long, default_value = "period")]
    pub period_col: String,
    #[arg(long, default_value = "y")]
    pub outcome_col: String,
    /// Covariate columns, comma separated [default: all other columns].
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Covariates treated as continuous even if they only take 0 and 1.
    #[arg(long, value_delimiter = ',')]
    pub continuous: Vec<String>,
    /// Bound on the max-norm of the mean score at convergence.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Maximum number of outer Newton iterations.
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
}

impl DataArgs {
    fn load(&self) -> Result<PanelData> {
        let schema = CsvSchema {
            unit: self.unit_col.clone(),
            period: self.period_col.clone(),
            outcome: self.outcome_col.clone(),
            covariates: self.covariates.clone(),
            continuous: self.continuous.clone(),
        };
        load_csv(&self.data, &schema)
    }

    fn solve(&self) -> SolveOptions {
        SolveOptions {
            tol_grad: self.tol,
            max_outer: self.max_iter,
            ..SolveOptions::default()
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputArgs {
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    /// Aligned text.
    Table,
    Csv,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Fe,
    Abc,
    Jbc,
    Sbc,
    Hbc,
    Psbc,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JackknifeArgs {
    /// Number of random half-panel splits averaged by SBC.
    #[arg(long, default_value_t = 1)]
    pub splits: usize,
    /// Seed of the SBC unit halves.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subpanels in which a unit or period loses outcome variation.
    #[arg(long, value_enum, default_value_t = SubpanelPolicy::Strict)]
    pub policy: SubpanelPolicy,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub method: MethodName,
    /// Lag window of the analytical corrections (ABC, PSBC) [default: 0].
    #[arg(long)]
    pub trim: Option<usize>,
    /// Number of ABC iterations [default: 1].
    #[arg(long)]
    pub iterations: Option<usize>,
    #[command(flatten)]
    pub jackknife: JackknifeArgs,
    /// Moments in the plug-in bias estimates.
    #[arg(long, value_enum, default_value_t = Moments::Realized)]
    pub moments: Moments,
    /// Report the sandwich covariance instead of the inverse information.
    #[arg(long)]
    pub sandwich: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    /// Change of a binary covariate from 0 to 1.
    Discrete,
    /// Derivative with respect to a continuous covariate.
    Marginal,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Covariate name or zero-based position.
    #[arg(long)]
    pub covariate: String,
    #[arg(long, value_enum)]
    pub mode: ModeName,
    /// Population the standard error refers to.
    #[arg(long, value_enum, default_value_t = ApeTarget::InSample)]
    pub target: ApeTarget,
    /// fe, jbc, sbc or hbc.
    #[arg(long, value_enum, default_value_t = MethodName::Fe)]
    pub method: MethodName,
    #[command(flatten)]
    pub jackknife: JackknifeArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Plain-text `key = value` design file.
    #[arg(long)]
    pub design: PathBuf,
    /// Overrides the number of replications of the design.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Overrides the seed of the design.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for all cores. Does not affect the results.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Output path.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    /// Expected information at the fitted model.
    Fit,
    /// Unit weights: plain two-way demeaning.
    Ones,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = WeightSource::Fit)]
    pub weights: WeightSource,
    /// Output path.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Units and periods with fewer observations are flagged.
    #[arg(long, default_value_t = 2)]
    pub min_obs: usize,
    /// Write the panel without the flagged units and periods here.
    #[arg(long)]
    pub clean_output: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerunArgs {
    /// JSON output of an earlier run.
    pub input: PathBuf,
    /// Fail unless the regenerated output equals the input byte for byte.
    #[arg(long)]
    pub check: bool,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config: &'a RunConfig,
    result: T,
}

/// Parses `argv`, runs the subcommand and returns the exit code: 0 on
/// success, 2 for input errors, 3 for validation failures, 4 for
/// non-convergence and 5 for internal errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.run) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a configuration and writes its artifacts.
pub fn execute(cfg: &RunConfig) -> Result<()> {
    if let RunConfig::Rerun(args) = cfg {
        return rerun(args);
    }
    let (text, path) = render(cfg)?;
    emit(&text, path.as_ref())
}

fn emit(text: &str, path: Option<&PathBuf>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p.display().to_string(), e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("standard output", e)),
    }
}

fn json<T: Serialize>(cfg: &RunConfig, result: T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Envelope { config: cfg, result })?;
    s.push('\n');
    Ok(s)
}

fn unsupported(cmd: &str, f: Format) -> Error {
    Error::InvalidOption(format!("{cmd} does not write {f:?} output"))
}

/// Output text and destination of a configuration other than `rerun`.
fn render(cfg: &RunConfig) -> Result<(String, Option<PathBuf>)> {
    match cfg {
        RunConfig::Fit(a) => {
            let data = a.data.load()?;
            let f = fit(&data, &a.data.family.family(), &a.data.solve())?;
            let text = match a.out.format {
                Format::Json => json(cfg, &f)?,
                Format::Table => {
                    let se = crate::estimator::std_errors(&crate::estimator::vcov_beta(&f, false)?);
                    coefficient_table(data.covariate_names(), &f.beta, &se)
                }
                Format::Csv => return Err(unsupported("fit", Format::Csv)),
            };
            Ok((text, a.out.output.clone()))
        }
        RunConfig::Correct(a) => {
            let data = a.data.load()?;
            let family = a.data.family.family();
            let opts = CorrectionOptions {
                solve: a.data.solve(),
                moments: a.moments,
                sandwich: a.sandwich,
                policy: a.jackknife.policy,
                ..CorrectionOptions::default()
            };
            let (method, warnings) = method_from(a.method, a.trim, a.iterations, &a.jackknife);
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let full = fit(&data, &family, &opts.solve)?;
            let mut est = correct_fit(&data, &family, &full, &method, &opts)?;
            est.warnings.extend(warnings);
            let text = match a.out.format {
                Format::Json => json(cfg, &est)?,
                Format::Table => coefficient_table(data.covariate_names(), &est.beta, &est.se),
                Format::Csv => return Err(unsupported("correct", Format::Csv)),
            };
            Ok((text, a.out.output.clone()))
        }
        RunConfig::Ape(a) => {
            let data = a.data.load()?;
            let family = a.data.family.family();
            let j = data.covariate_position(&a.covariate)?;
            let spec = match a.mode {
                ModeName::Discrete => EffectSpec::discrete(j),
                ModeName::Marginal => EffectSpec::marginal(j),
            };
            let opts = CorrectionOptions {
                solve: a.data.solve(),
                policy: a.jackknife.policy,
                ..CorrectionOptions::default()
            };
            let (method, _) = method_from(a.method, None, None, &a.jackknife);
            let full = fit(&data, &family, &opts.solve)?;
            let r = corrected_ape_from_fit(&data, &family, &full, &spec, a.target, &method, &opts)?;
            let text = match a.out.format {
                Format::Json => json(cfg, &r)?,
                Format::Table => format!(
                    "{} APE of {} ({:?} target): {:.6} (se {:.6}; uncorrected {:.6})\n",
                    r.method.label(),
                    r.covariate,
                    r.target,
                    r.estimate,
                    r.se,
                    r.fe_estimate
                ),
                Format::Csv => return Err(unsupported("ape", Format::Csv)),
            };
            Ok((text, a.out.output.clone()))
        }
        RunConfig::Simulate(a) => {
            let mut design = McDesign::load(&a.design)?;
            if let Some(r) = a.reps {
                design.reps = r;
            }
            if let Some(s) = a.seed {
                design.seed = s;
            }
            let report = run_mc(&design, a.workers)?;
            let text = match a.format {
                Format::Json => json(cfg, &report)?,
                Format::Table => report.table(),
                Format::Csv => return Err(unsupported("simulate", Format::Csv)),
            };
            Ok((text, a.output.clone()))
        }
        RunConfig::Project(a) => {
            let data = a.data.load()?;
            let solve = a.data.solve();
            let w = match a.weights {
                WeightSource::Fit => fit(&data, &a.data.family.family(), &solve)?.omega_hat,
                WeightSource::Ones => vec![1.0; data.n_obs()],
            };
            let cols = (0..data.n_covariates())
                .map(|j| two_way_project(&data, &data.x_col(j), &w, &solve))
                .collect::<Result<Vec<_>>>()?;
            let text = match a.format {
                Format::Csv => projection_csv(&data, &cols)?,
                Format::Json => json(cfg, ProjectionOutput::new(&data, cols))?,
                Format::Table => return Err(unsupported("project", Format::Table)),
            };
            Ok((text, a.output.clone()))
        }
        RunConfig::Validate(a) => {
            let data = a.data.load()?;
            let opts = ValidateOptions {
                min_obs: a.min_obs,
                ..ValidateOptions::default()
            };
            let report = validate(&data, &a.data.family.family(), &opts);
            if let Some(p) = &a.clean_output {
                report.apply(&data)?.data.write_csv(p)?;
            }
            let text = match a.out.format {
                Format::Json => json(cfg, &report)?,
                Format::Table | Format::Csv => return Err(unsupported("validate", a.out.format)),
            };
            // A report with findings is still written before failing.
            if !report.is_clean() {
                emit(&text, a.out.output.as_ref())?;
                return Err(Error::Validation(format!(
                    "{} units and {} periods to drop, {} collinear covariates, {} components",
                    report.drop_units.len(),
                    report.drop_periods.len(),
                    report.collinear_covariates.len(),
                    report.components.len().max(1)
                )));
            }
            Ok((text, a.out.output.clone()))
        }
        RunConfig::Rerun(_) => Err(Error::Internal("rerun cannot be rendered".into())),
    }
}

fn rerun(args: &RerunArgs) -> Result<()> {
    let path = &args.input;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let cfg: RunConfig = serde_json::from_value(
        value
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Input(format!("{} has no embedded config", path.display())))?,
    )?;
    if matches!(cfg, RunConfig::Rerun(_)) {
        return Err(Error::Input("a rerun config cannot be rerun".into()));
    }
    let (again, out) = render(&cfg)?;
    if args.check {
        if again != text {
            return Err(Error::Validation(format!(
                "regenerated output differs from {}",
                path.display()
            )));
        }
        eprintln!("identical to {}", path.display());
        return Ok(());
    }
    emit(&again, out.as_ref())
}

/// Builds the method from the flags. Returns warnings for flags the method
/// ignores.
fn method_from(
    name: MethodName,
    trim: Option<usize>,
    iterations: Option<usize>,
    jk: &JackknifeArgs,
) -> (Method, Vec<String>) {
    let mut warnings = Vec::new();
    let analytical = matches!(name, MethodName::Abc | MethodName::Psbc);
    if !analytical && trim.is_some() {
        warnings.push(format!("--trim is ignored by {name:?}"));
    }
    if name != MethodName::Abc && iterations.is_some() {
        warnings.push(format!("--iterations is ignored by {name:?}"));
    }
    let trim = trim.unwrap_or(0);
    let method = match name {
        MethodName::Fe => Method::Fe,
        MethodName::Abc => Method::Abc {
            trim,
            iterations: iterations.unwrap_or(1),
        },
        MethodName::Jbc => Method::Jbc,
        MethodName::Sbc => Method::Sbc {
            splits: jk.splits,
            seed: jk.seed,
        },
        MethodName::Hbc => Method::Hbc,
        MethodName::Psbc => Method::Psbc { trim },
    };
    (method, warnings)
}

fn coefficient_table(names: &[String], beta: &[f64], se: &[f64]) -> String {
    let mut s = format!("{:<16}{:>14}{:>14}\n", "covariate", "estimate", "std. error");
    for ((n, b), e) in names.iter().zip(beta).zip(se) {
        let _ = writeln!(s, "{n:<16}{b:>14.6}{e:>14.6}");
    }
    s
}

#[derive(Serialize)]
struct ProjectionOutput {
    unit: Vec<String>,
    period: Vec<String>,
    covariates: Vec<String>,
    /// One column per covariate.
    xtilde: Vec<Vec<f64>>,
}

impl ProjectionOutput {
    fn new(data: &PanelData, cols: Vec<Vec<f64>>) -> Self {
        ProjectionOutput {
            unit: (0..data.n_obs()).map(|k| data.unit_labels()[data.unit_of(k)].clone()).collect(),
            period: (0..data.n_obs())
                .map(|k| data.period_labels()[data.period_of(k)].clone())
                .collect(),
            covariates: data.covariate_names().to_vec(),
            xtilde: cols,
        }
    }
}

fn projection_csv(data: &PanelData, cols: &[Vec<f64>]) -> Result<String> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["unit".to_string(), "period".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    wr.write_record(&header)?;
    for k in 0..data.n_obs() {
        let mut rec = vec![
            data.unit_labels()[data.unit_of(k)].clone(),
            data.period_labels()[data.period_of(k)].clone(),
        ];
        rec.extend(cols.iter().map(|c| c[k].to_string()));
        wr.write_record(&rec)?;
    }
    let bytes = wr.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_subcommand_parses() {
        for argv in [
            "fepanel fit --family logit --data p.csv",
            "fepanel correct --method abc --trim 2 --data p.csv --family probit",
            "fepanel ape --data p.csv --family probit --covariate x1 --mode marginal --target pop --method jbc",
            "fepanel simulate --design d.cfg --reps 10 --seed 7 --workers 2",
            "fepanel project --data p.csv --family linear --weights ones",
            "fepanel validate --data p.csv --family poisson --min-obs 3",
            "fepanel rerun out.json --check",
        ] {
            Cli::try_parse_from(argv.split_whitespace()).unwrap_or_else(|e| panic!("{argv}: {e}"));
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cli = Cli::try_parse_from(
            "fepanel correct --method sbc --splits 3 --seed 9 --data p.csv --family logit --tol 1e-10".split_whitespace(),
        )
        .unwrap();
        let text = serde_json::to_string(&cli.run).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cli.run);
    }

    #[test]
    fn ignored_flags_warn() {
        let jk = JackknifeArgs {
            splits: 1,
            seed: 0,
            policy: SubpanelPolicy::Strict,
        };
        let (m, w) = method_from(MethodName::Jbc, Some(2), None, &jk);
        assert_eq!(m, Method::Jbc);
        assert_eq!(w.len(), 1);
        let (m, w) = method_from(MethodName::Abc, Some(2), Some(3), &jk);
        assert_eq!(m, Method::Abc { trim: 2, iterations: 3 });
        assert!(w.is_empty());
    }

    #[test]
    fn unknown_flags_exit_with_input_code() {
        assert_eq!(dispatch(["fepanel", "fit", "--bogus"]), 2);
        assert_eq!(dispatch(["fepanel", "--help"]), 0);
    }
}
