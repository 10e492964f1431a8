//! Two-way fixed-effects maximum likelihood.
//!
//! The effects are concentrated out: for a given β the unit effects α and
//! period effects γ are profiled by block Gauss–Seidel sweeps (every α_i,
//! then every γ_t, each a scalar Newton step given the other block). The
//! outer β step uses the partialled-out information
//! `Ĥ = E_n[ω x̃ x̃']`, where `x̃` is the ω-weighted residual of `x` on the
//! unit and period dummies, followed by step halving on the profile
//! log-likelihood. Updates are sequential, so a fit is deterministic.
//!
//! Normalization: `Σ_t |D_t| γ_t = 0`; the overall level lives in α.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{logistic, softplus, Family, LN_SQRT_2PI};
use crate::panel::PanelData;

/// Largest change of a single effect in one sweep.
const EFFECT_STEP_CAP: f64 = 5.0;

/// Largest smaller panel dimension for which profiling adds joint Newton
/// steps on the effects.
const JOINT_NEWTON_MAX_DIM: usize = 400;

/// Relative accuracy of a computed score term. A term with curvature `c`
/// at index `u` carries a rounding error of about `ε·|c|·(1 + |u|)`, and
/// scores within that many multiples of their rounding noise count as zero.
/// Without it, large counts or outcomes make small tolerances unreachable.
const SCORE_ROUNDING: f64 = 64.0 * f64::EPSILON;

/// Solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Bound on the max-norm of the mean score of every parameter block.
    pub tol_grad: f64,
    /// Bound on the weighted orthogonality residuals of `x̃`.
    pub tol_proj: f64,
    pub max_outer: usize,
    /// Maximum number of α/γ sweeps per profile evaluation.
    pub max_inner: usize,
    pub max_proj_sweeps: usize,
    /// Fitted indices beyond this magnitude that keep moving outward are
    /// reported as separation.
    pub separation_bound: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_grad: 1e-9,
            tol_proj: 1e-10,
            max_outer: 100,
            max_inner: 500,
            max_proj_sweeps: 20_000,
            separation_bound: 30.0,
        }
    }
}

impl SolveOptions {
    pub fn check(&self) -> Result<()> {
        if !(self.tol_grad > 0.0 && self.tol_proj > 0.0) {
            return Err(Error::InvalidOption("tolerances must be positive".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.max_proj_sweeps == 0 {
            return Err(Error::InvalidOption("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Starting point for a fit, typically taken from a related fit.
#[derive(Clone, Debug, Default)]
pub struct FitStart {
    pub beta: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    /// Information matrix (mean form) used for the β steps instead of the
    /// one recomputed at every iterate. Used for subpanel refits, whose
    /// information is close to the parent panel's. For the linear family
    /// it refers to the unit-variance problem the solver works on.
    pub hessian: Option<DMatrix<f64>>,
}

/// Point estimates without the post-estimation quantities of [`FitResult`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimates {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Profile log-likelihood after every accepted outer step.
    pub loglik_path: Vec<f64>,
}

/// Output of [`fit`].
#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    /// Family at the estimate; for the linear family it carries σ̂².
    pub family: Family,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub omega_hat: Vec<f64>,
    /// Row-major `n × d` projected covariates.
    pub xtilde: Vec<f64>,
    /// `E_n[ω̂ x̃ x̃']`.
    #[serde(serialize_with = "serialize_matrix")]
    pub h_hat: DMatrix<f64>,
    /// `E_n[ĝ1² x̃ x̃']`, the outer-product counterpart of `h_hat`.
    #[serde(serialize_with = "serialize_matrix")]
    pub score_outer: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub loglik_path: Vec<f64>,
}

impl FitResult {
    pub fn n_obs(&self) -> usize {
        self.u_hat.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.beta.len()
    }

    #[inline]
    pub fn xtilde_row(&self, k: usize) -> &[f64] {
        let d = self.beta.len();
        &self.xtilde[k * d..(k + 1) * d]
    }

    /// σ̂² of the linear family.
    pub fn sigma2(&self) -> Option<f64> {
        match self.family {
            Family::Linear { sigma2 } => Some(sigma2),
            _ => None,
        }
    }

    pub fn estimates(&self) -> Estimates {
        Estimates {
            beta: self.beta.clone(),
            alpha: self.alpha.clone(),
            gamma: self.gamma.clone(),
            loglik: self.loglik,
            iterations: self.iterations,
            converged: self.converged,
            loglik_path: self.loglik_path.clone(),
        }
    }
}

pub(crate) fn serialize_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        seq.serialize_element(&m.row(r).iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

/// Fits the two-way fixed-effects model.
pub fn fit(data: &PanelData, family: &Family, opts: &SolveOptions) -> Result<FitResult> {
    fit_from(data, family, opts, &FitStart::default())
}

/// Fits the model from a given starting point.
pub fn fit_from(
    data: &PanelData,
    family: &Family,
    opts: &SolveOptions,
    start: &FitStart,
) -> Result<FitResult> {
    let est = solve(data, family, opts, start)?;
    complete(data, family, est, opts)
}

/// Profiles the effects at a fixed β and evaluates the fit quantities
/// there. `converged` refers to the profile step only.
pub fn evaluate_at(
    data: &PanelData,
    family: &Family,
    beta: &[f64],
    alpha: Option<&[f64]>,
    gamma: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<FitResult> {
    let p = Problem::new(data, family)?;
    if beta.len() != p.d {
        return Err(Error::Input("coefficient vector has the wrong length".into()));
    }
    let (mut a, mut g) = p.starting_effects();
    if let Some(a0) = alpha {
        a.copy_from_slice(a0);
    }
    if let Some(g0) = gamma {
        g.copy_from_slice(g0);
    }
    let off = p.offsets(beta);
    p.profile(&off, &mut a, &mut g, opts)?;
    let loglik = p.loglik(&off, &a, &g);
    let est = Estimates {
        beta: beta.to_vec(),
        alpha: a,
        gamma: g,
        loglik,
        iterations: 0,
        converged: true,
        loglik_path: vec![loglik],
    };
    complete(data, family, est, opts)
}

/// Runs the concentrated Newton iteration and returns point estimates.
pub fn solve(
    data: &PanelData,
    family: &Family,
    opts: &SolveOptions,
    start: &FitStart,
) -> Result<Estimates> {
    opts.check()?;
    if data.n_covariates() == 0 {
        return Err(Error::Input("at least one covariate is required".into()));
    }
    check_connected(data)?;
    check_outcome_variation(data, family)?;
    let estimation_family = match family {
        Family::Linear { .. } => Family::linear(),
        f => f.clone(),
    };
    let p = Problem::new(data, &estimation_family)?;
    let n = data.n_obs() as f64;
    let d = p.d;

    let mut beta = match &start.beta {
        Some(b) if b.len() == d => b.clone(),
        Some(_) => return Err(Error::Input("starting β has the wrong length".into())),
        None => vec![0.0; d],
    };
    let (mut alpha, mut gamma) = p.starting_effects();
    if let Some(a) = &start.alpha {
        if a.len() != alpha.len() {
            return Err(Error::Input("starting α has the wrong length".into()));
        }
        alpha.copy_from_slice(a);
    }
    if let Some(g) = &start.gamma {
        if g.len() != gamma.len() {
            return Err(Error::Input("starting γ has the wrong length".into()));
        }
        gamma.copy_from_slice(g);
    }

    let mut off = p.offsets(&beta);
    p.profile(&off, &mut alpha, &mut gamma, opts)?;
    let mut ll = p.loglik(&off, &alpha, &gamma);
    let mut path = vec![ll];
    let mut fixed_hessian = start.hessian.clone();
    let mut proj = ProjectionState::new(data, d);
    let mut converged = false;
    let mut iterations = 0;
    let mut tol = opts.tol_grad;
    let mut limit = opts.max_outer;
    // β at the first convergence when the fit looks separated.
    let mut probe: Option<Vec<f64>> = None;

    loop {
        if iterations >= limit {
            break;
        }
        let grad = p.beta_score(&off, &alpha, &gamma);
        let mut gmax = grad.iter().fold(0.0f64, |m, g| m.max((g / n).abs()));
        if gmax > tol && gmax <= 1e6 * tol {
            let noise = p.beta_score_noise(&off, &alpha, &gamma);
            gmax = grad.iter().zip(&noise).fold(0.0f64, |m, (g, e)| m.max(above_noise(*g, *e) / n));
        }
        if gmax <= tol {
            converged = true;
            // Binary outcomes: a recession direction of the likelihood lets
            // the score fall below any tolerance while some observations
            // become perfectly predicted. Such fits are refined with a much
            // tighter tolerance; a genuine maximum barely moves.
            if probe.is_none() && p.perfectly_predicted(&off, &alpha, &gamma) {
                probe = Some(beta.clone());
                tol *= 1e-4;
                limit = iterations + opts.max_outer;
                fixed_hessian = None;
                converged = false;
                continue;
            }
            break;
        }
        iterations += 1;
        let h = match &fixed_hessian {
            Some(h) => h * n,
            None => {
                let w = p.weights(&off, &alpha, &gamma);
                let xt = proj.project(data, &w, opts.tol_proj * 1e2, opts.max_proj_sweeps)?;
                information(&xt, &w, d) * n
            }
        };
        let step = spd_solve(&h, &DVector::from_vec(grad))?;

        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let toff = p.offsets(&trial);
            let mut ta = alpha.clone();
            let mut tg = gamma.clone();
            let outcome = p
                .profile(&toff, &mut ta, &mut tg, opts)
                .map(|_| p.loglik(&toff, &ta, &tg));
            match outcome {
                Ok(tll) if tll >= ll - 1e-12 * (1.0 + ll.abs()) => {
                    beta = trial;
                    off = toff;
                    alpha = ta;
                    gamma = tg;
                    ll = tll;
                    break;
                }
                // A full step may push a profile into a separated region;
                // shorter steps are tried before reporting it.
                Err(e @ Error::Separation { .. }) if scale < 1e-3 => return Err(e),
                Ok(_) | Err(Error::Separation { .. }) => {}
                Err(e) => return Err(e),
            }
            scale *= 0.5;
            if scale < 1e-10 && probe.is_some() {
                // The tighter tolerance is beyond the reach of the line
                // search; the first solution stands unless it moved.
                converged = true;
                break;
            }
            if scale < 1e-10 {
                return Err(Error::NoConvergence {
                    what: "line search on the profile likelihood".into(),
                    iterations,
                });
            }
        }
        if scale < 1.0 || iterations > 20 {
            fixed_hessian = None;
        }
        path.push(ll);
        if converged {
            break;
        }
    }
    if let Some(first) = &probe {
        let moved = beta.iter().zip(first).any(|(b, f)| (b - f).abs() > 1e-4 * (1.0 + f.abs()));
        if moved || !converged {
            return Err(Error::Separation {
                which: "covariates (perfectly predicted observations along a recession direction)".into(),
            });
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "outer Newton iteration on β".into(),
            iterations,
        });
    }
    if probe.is_some() && p.fitted_in_tail(&off, &alpha, &gamma, opts.separation_bound) {
        return Err(Error::Separation {
            which: "covariates (observations fitted in the far tail)".into(),
        });
    }
    Ok(Estimates {
        beta,
        alpha,
        gamma,
        loglik: ll,
        iterations,
        converged,
        loglik_path: path,
    })
}

/// Post-estimation quantities at a set of estimates.
fn complete(data: &PanelData, family: &Family, est: Estimates, opts: &SolveOptions) -> Result<FitResult> {
    let d = data.n_covariates();
    let n = data.n_obs();
    let y = data.y();
    let u_hat: Vec<f64> = (0..n)
        .map(|k| {
            let xb: f64 = data.x_row(k).iter().zip(&est.beta).map(|(a, b)| a * b).sum();
            xb + est.alpha[data.unit_of(k)] + est.gamma[data.period_of(k)]
        })
        .collect();
    let family = match family {
        Family::Linear { .. } => {
            let s2 = u_hat.iter().zip(y).map(|(u, y)| (y - u) * (y - u)).sum::<f64>() / n as f64;
            let ss: f64 = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
            if s2 <= 1e-20 * ss.max(f64::MIN_POSITIVE) {
                return Err(Error::Singular("linear fit has zero residual variance".into()));
            }
            Family::Linear { sigma2: s2 }
        }
        f => f.clone(),
    };
    let omega_hat: Vec<f64> = u_hat.iter().map(|&u| family.expected_weight(u)).collect();
    let mut proj = ProjectionState::new(data, d);
    let xtilde = proj.project(data, &omega_hat, opts.tol_proj, opts.max_proj_sweeps)?;
    let h_hat = information(&xtilde, &omega_hat, d);
    check_projected_scale(data, &xtilde, &omega_hat)?;
    checked_cholesky(&h_hat)?;
    let g1: Vec<f64> = (0..n).map(|k| family.derivs(y[k], u_hat[k]).g1).collect();
    let g1sq: Vec<f64> = g1.iter().map(|g| g * g).collect();
    let score_outer = information(&xtilde, &g1sq, d);
    let loglik = (0..n).map(|k| family.log_density(y[k], u_hat[k])).sum();
    Ok(FitResult {
        family,
        beta: est.beta,
        alpha: est.alpha,
        gamma: est.gamma,
        u_hat,
        omega_hat,
        xtilde,
        h_hat,
        score_outer,
        loglik,
        iterations: est.iterations,
        converged: est.converged,
        loglik_path: est.loglik_path,
    })
}

/// Fails when a projected covariate has lost all but a rounding-sized
/// share of its weighted variation, i.e. is spanned by the effects.
fn check_projected_scale(data: &PanelData, xt: &[f64], w: &[f64]) -> Result<()> {
    let (n, d) = (data.n_obs(), data.n_covariates());
    let wsum: f64 = w.iter().sum();
    for j in 0..d {
        let col = data.x_col(j);
        let mean = col.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / wsum;
        let raw: f64 = col.iter().zip(w).map(|(x, w)| w * (x - mean).powi(2)).sum();
        let left: f64 = (0..n).map(|k| w[k] * xt[k * d + j].powi(2)).sum();
        if !(left > 1e-12 * raw) {
            return Err(Error::Singular(format!(
                "covariate {} is (nearly) collinear with the fixed effects",
                data.covariate_names()[j]
            )));
        }
    }
    Ok(())
}

/// `E_n[w x̃ x̃']` for row-major `x̃`.
fn information(xt: &[f64], w: &[f64], d: usize) -> DMatrix<f64> {
    let n = w.len();
    let mut h = DMatrix::zeros(d, d);
    for k in 0..n {
        let row = &xt[k * d..(k + 1) * d];
        for a in 0..d {
            let wa = w[k] * row[a];
            for b in 0..=a {
                h[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    h / n as f64
}

/// Solves `H s = g` for symmetric positive definite `H`.
pub(crate) fn spd_solve(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = checked_cholesky(h)?;
    Ok(chol.solve(g))
}

pub(crate) fn spd_inverse(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = checked_cholesky(h)?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn checked_cholesky(h: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("information matrix has non-finite entries".into()));
    }
    let scale = (0..h.nrows()).map(|j| h[(j, j)].abs()).fold(0.0f64, f64::max);
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("information matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    for j in 0..h.nrows() {
        if !(l[(j, j)] * l[(j, j)] > 1e-12 * scale) || scale == 0.0 {
            return Err(Error::Singular(format!(
                "covariate {j} is (nearly) collinear with the fixed effects or other covariates"
            )));
        }
    }
    Ok(chol)
}

/// Covariance of β̂: `Ĥ⁻¹/n`, or the sandwich `Ĥ⁻¹ Ω̂ Ĥ⁻¹/n` with
/// `Ω̂ = E_n[ĝ1² x̃ x̃']`.
pub fn vcov_beta(fit: &FitResult, sandwich: bool) -> Result<DMatrix<f64>> {
    let n = fit.n_obs() as f64;
    let hinv = spd_inverse(&fit.h_hat)?;
    if sandwich {
        let v = &hinv * &fit.score_outer * &hinv / n;
        Ok((&v + v.transpose()) * 0.5)
    } else {
        Ok(hinv / n)
    }
}

/// Standard errors from a covariance matrix.
pub fn std_errors(vcov: &DMatrix<f64>) -> Vec<f64> {
    (0..vcov.nrows()).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect()
}

/// ω-weighted residual of `x` on the unit and period dummies.
pub fn two_way_project(data: &PanelData, x: &[f64], w: &[f64], opts: &SolveOptions) -> Result<Vec<f64>> {
    if x.len() != data.n_obs() || w.len() != data.n_obs() {
        return Err(Error::Input("projection inputs must have one entry per observation".into()));
    }
    if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Input("projection weights must be positive".into()));
    }
    check_connected(data)?;
    let mut kappa = vec![0.0; data.n_units()];
    let mut rho = vec![0.0; data.n_periods()];
    project_column(data, x, w, &mut kappa, &mut rho, opts.tol_proj, opts.max_proj_sweeps)
}

/// Per-column effect vectors kept between projections at nearby weights.
struct ProjectionState {
    kappa: Vec<Vec<f64>>,
    rho: Vec<Vec<f64>>,
}

impl ProjectionState {
    fn new(data: &PanelData, d: usize) -> Self {
        ProjectionState {
            kappa: vec![vec![0.0; data.n_units()]; d],
            rho: vec![vec![0.0; data.n_periods()]; d],
        }
    }

    /// Projects every covariate column; returns row-major `x̃`.
    fn project(&mut self, data: &PanelData, w: &[f64], tol: f64, max_sweeps: usize) -> Result<Vec<f64>> {
        let d = data.n_covariates();
        let n = data.n_obs();
        let mut out = vec![0.0; n * d];
        for j in 0..d {
            let col = data.x_col(j);
            let xt = project_column(data, &col, w, &mut self.kappa[j], &mut self.rho[j], tol, max_sweeps)?;
            for k in 0..n {
                out[k * d + j] = xt[k];
            }
        }
        Ok(out)
    }
}

/// Alternating weighted demeaning. Converges when every unit's weighted
/// residual mean is within `tol`, which does not depend on the scale of the
/// weights; period sums are exactly zero after each period update.
fn project_column(
    data: &PanelData,
    x: &[f64],
    w: &[f64],
    kappa: &mut [f64],
    rho: &mut [f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    let idx = data.index();
    let periods = data.periods();
    let units = data.units();
    let sw_unit: Vec<f64> = (0..idx.n_units()).map(|i| idx.unit_obs(i).map(|k| w[k]).sum()).collect();
    let sw_period: Vec<f64> = (0..idx.n_periods())
        .map(|t| idx.period_obs(t).iter().map(|&k| w[k]).sum())
        .collect();
    let mut sweeps = 0;
    loop {
        let mut worst = 0.0f64;
        for i in 0..idx.n_units() {
            let mut s = 0.0;
            for k in idx.unit_obs(i) {
                s += w[k] * (x[k] + kappa[i] + rho[periods[k]]);
            }
            let mean = s / sw_unit[i];
            worst = worst.max(mean.abs());
            kappa[i] -= mean;
        }
        for t in 0..idx.n_periods() {
            let mut s = 0.0;
            for &k in idx.period_obs(t) {
                s += w[k] * (x[k] + kappa[units[k]] + rho[t]);
            }
            rho[t] -= s / sw_period[t];
        }
        sweeps += 1;
        if worst <= tol {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(Error::NoConvergence {
                what: "two-way projection".into(),
                iterations: sweeps,
            });
        }
    }
    Ok((0..x.len()).map(|k| x[k] + kappa[units[k]] + rho[periods[k]]).collect())
}

/// Fails when a unit or period has an outcome pattern whose effect
/// estimate diverges: no variation for binary outcomes, all zeros for
/// counts.
pub fn check_outcome_variation(data: &PanelData, family: &Family) -> Result<()> {
    let idx = data.index();
    let y = data.y();
    for i in 0..idx.n_units() {
        if family.effect_diverges(idx.unit_obs(i).map(|k| y[k])) {
            return Err(Error::Separation {
                which: format!("unit {} (outcome without variation)", data.unit_labels()[i]),
            });
        }
    }
    for t in 0..idx.n_periods() {
        if family.effect_diverges(idx.period_obs(t).iter().map(|&k| y[k])) {
            return Err(Error::Separation {
                which: format!("period {} (outcome without variation)", data.period_labels()[t]),
            });
        }
    }
    Ok(())
}

/// Fails with the list of components when the unit–period graph is not
/// connected.
pub fn check_connected(data: &PanelData) -> Result<()> {
    let comps = components(data);
    if comps.len() <= 1 {
        return Ok(());
    }
    let describe = |(us, ts): &(Vec<usize>, Vec<usize>)| {
        let show = |labels: &[String], ids: &[usize]| {
            let mut s: Vec<String> = ids.iter().take(5).map(|&i| labels[i].clone()).collect();
            if ids.len() > 5 {
                s.push(format!("… {} total", ids.len()));
            }
            s.join(",")
        };
        format!(
            "units {{{}}} × periods {{{}}}",
            show(data.unit_labels(), us),
            show(data.period_labels(), ts)
        )
    };
    Err(Error::Disconnected {
        components: comps.iter().map(describe).collect(),
    })
}

/// Connected components of the bipartite unit–period graph as
/// `(units, periods)` lists.
pub fn components(data: &PanelData) -> Vec<(Vec<usize>, Vec<usize>)> {
    let nu = data.n_units();
    let nt = data.n_periods();
    let mut parent: Vec<usize> = (0..nu + nt).collect();
    fn find(p: &mut [usize], mut a: usize) -> usize {
        while p[a] != a {
            p[a] = p[p[a]];
            a = p[a];
        }
        a
    }
    for k in 0..data.n_obs() {
        let a = find(&mut parent, data.unit_of(k));
        let b = find(&mut parent, nu + data.period_of(k));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut roots: Vec<usize> = Vec::new();
    let mut out: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for v in 0..nu + nt {
        let r = find(&mut parent, v);
        let c = match roots.iter().position(|&x| x == r) {
            Some(c) => c,
            None => {
                roots.push(r);
                out.push((Vec::new(), Vec::new()));
                out.len() - 1
            }
        };
        if v < nu {
            out[c].0.push(v);
        } else {
            out[c].1.push(v - nu);
        }
    }
    out
}

/// Shared state of one estimation problem.
struct Problem<'a> {
    data: &'a PanelData,
    family: &'a Family,
    d: usize,
    /// `0..n`, so that unit ranges can be borrowed as index slices.
    unit_rows: Vec<usize>,
}

impl<'a> Problem<'a> {
    fn new(data: &'a PanelData, family: &'a Family) -> Result<Self> {
        for &y in data.y() {
            if !family.in_support(y) {
                return Err(Error::OutOfSupport {
                    family: family.name().to_string(),
                    y,
                });
            }
        }
        Ok(Problem {
            data,
            family,
            d: data.n_covariates(),
            unit_rows: (0..data.n_obs()).collect(),
        })
    }

    /// Whether some observation is fitted with likelihood numerically one,
    /// the footprint of separation in binary and count models.
    fn perfectly_predicted(&self, off: &[f64], alpha: &[f64], gamma: &[f64]) -> bool {
        if matches!(self.family, Family::Linear { .. }) {
            return false;
        }
        let (y, units, periods) = (self.data.y(), self.data.units(), self.data.periods());
        (0..y.len()).any(|k| {
            let u = off[k] + alpha[units[k]] + gamma[periods[k]];
            self.family.log_density(y[k], u) > -1e-6
        })
    }

    /// Whether some fitted index lies beyond `bound` on a side where the
    /// likelihood only flattens out: either side for binary outcomes, the
    /// lower side for counts. No interior maximum puts a probability or a
    /// mean within `e^-bound` of its boundary, but under quasi-complete
    /// separation the scores of such observations underflow and the
    /// iteration stops there.
    fn fitted_in_tail(&self, off: &[f64], alpha: &[f64], gamma: &[f64], bound: f64) -> bool {
        let (units, periods) = (self.data.units(), self.data.periods());
        let index = |k: usize| off[k] + alpha[units[k]] + gamma[periods[k]];
        match self.family {
            Family::Linear { .. } => false,
            Family::Poisson => (0..off.len()).any(|k| index(k) < -bound),
            _ => (0..off.len()).any(|k| index(k).abs() > bound),
        }
    }

    fn offsets(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.data.n_obs())
            .map(|k| self.data.x_row(k).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Effects from inverting the link at unit and period outcome means.
    fn starting_effects(&self) -> (Vec<f64>, Vec<f64>) {
        let idx = self.data.index();
        let y = self.data.y();
        let n = self.data.n_obs() as f64;
        let overall = self.family.starting_index(y.iter().sum::<f64>() / n);
        let alpha: Vec<f64> = (0..idx.n_units())
            .map(|i| {
                let r = idx.unit_obs(i);
                let m = y[r.clone()].iter().sum::<f64>() / r.len() as f64;
                self.family.starting_index(m)
            })
            .collect();
        let mut gamma: Vec<f64> = (0..idx.n_periods())
            .map(|t| {
                let obs = idx.period_obs(t);
                let m = obs.iter().map(|&k| y[k]).sum::<f64>() / obs.len() as f64;
                self.family.starting_index(m) - overall
            })
            .collect();
        let mut alpha = alpha;
        normalize(self.data, &mut alpha, &mut gamma);
        (alpha, gamma)
    }

    /// Maximizes the log-likelihood over α and γ at fixed offsets `x'β`.
    fn profile(&self, off: &[f64], alpha: &mut [f64], gamma: &mut [f64], opts: &SolveOptions) -> Result<usize> {
        // One monomorphized loop per built-in family; the per-observation
        // family dispatch otherwise dominates the sweep.
        match *self.family {
            Family::Linear { sigma2 } => {
                let p = 1.0 / sigma2;
                self.profile_with(off, alpha, gamma, opts, false, move |y, u| ((y - u) * p, p))
            }
            Family::Logit => self.profile_with(off, alpha, gamma, opts, true, |y, u| {
                let f = logistic(u);
                (y - f, f * (1.0 - f))
            }),
            Family::Poisson => self.profile_with(off, alpha, gamma, opts, true, |y, u| {
                let lam = u.exp();
                (y - lam, lam)
            }),
            ref fam => self.profile_with(off, alpha, gamma, opts, true, |y, u| fam.score_curvature(y, u)),
        }
    }

    fn profile_with(
        &self,
        off: &[f64],
        alpha: &mut [f64],
        gamma: &mut [f64],
        opts: &SolveOptions,
        diverges: bool,
        score: impl Fn(f64, f64) -> (f64, f64),
    ) -> Result<usize> {
        let data = self.data;
        let idx = data.index();
        let y = data.y();
        let periods = data.periods();
        let units = data.units();
        let tol = 0.1 * opts.tol_grad;
        let bound = opts.separation_bound;
        // Gauss–Seidel sweeps converge linearly at a rate set by the
        // coupling of α and γ; a joint Newton step after each sweep makes
        // the convergence quadratic when the smaller side is small enough
        // for a dense Schur complement.
        let mut joint = idx.n_units().min(idx.n_periods()) <= JOINT_NEWTON_MAX_DIM;
        for sweep in 1..=opts.max_inner {
            // A converged joint step ends the profile unless some index is
            // beyond the separation bound; the sweeps below check those.
            if joint {
                match self.joint_newton(off, alpha, gamma, &score) {
                    Some((after, reach)) if after <= tol && (!diverges || reach <= bound) => return Ok(sweep),
                    Some(_) => {}
                    None => joint = false,
                }
            }
            let mut worst = 0.0f64;
            for i in 0..idx.n_units() {
                let (mut s1, mut s2, mut noise) = (0.0, 0.0, 0.0);
                let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
                let r = idx.unit_obs(i);
                let m = r.len() as f64;
                for k in r {
                    let u = off[k] + alpha[i] + gamma[periods[k]];
                    let (a, b) = score(y[k], u);
                    s1 += a;
                    s2 += b;
                    noise += b.abs() * (1.0 + u.abs());
                    umin = umin.min(u);
                    umax = umax.max(u);
                }
                worst = worst.max(above_noise(s1, noise) / m);
                let step = newton_step(s1, s2);
                if diverges && ((step > 0.0 && umin > bound) || (step < 0.0 && umax < -bound)) {
                    return Err(Error::Separation {
                        which: format!("unit {}", data.unit_labels()[i]),
                    });
                }
                alpha[i] += step;
            }
            for t in 0..idx.n_periods() {
                let (mut s1, mut s2, mut noise) = (0.0, 0.0, 0.0);
                let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
                let obs = idx.period_obs(t);
                for &k in obs {
                    let u = off[k] + alpha[units[k]] + gamma[t];
                    let (a, b) = score(y[k], u);
                    s1 += a;
                    s2 += b;
                    noise += b.abs() * (1.0 + u.abs());
                    umin = umin.min(u);
                    umax = umax.max(u);
                }
                worst = worst.max(above_noise(s1, noise) / obs.len() as f64);
                let step = newton_step(s1, s2);
                if diverges && ((step > 0.0 && umin > bound) || (step < 0.0 && umax < -bound)) {
                    return Err(Error::Separation {
                        which: format!("period {}", data.period_labels()[t]),
                    });
                }
                gamma[t] += step;
            }
            normalize(data, alpha, gamma);
            if worst <= tol {
                return Ok(sweep);
            }
        }
        Err(Error::NoConvergence {
            what: "profiling of the fixed effects".into(),
            iterations: opts.max_inner,
        })
    }

    /// One Newton step on all effects jointly, kept only if it lowers the
    /// largest mean score of a unit or period. Returns that score after an
    /// accepted step and the largest absolute fitted index. The effects of the larger
    /// side are eliminated; the Schur complement on the smaller side is
    /// singular along the level shift, which is removed by fixing the step
    /// of its first member at zero.
    fn joint_newton(
        &self,
        off: &[f64],
        alpha: &mut [f64],
        gamma: &mut [f64],
        score: &impl Fn(f64, f64) -> (f64, f64),
    ) -> Option<(f64, f64)> {
        let data = self.data;
        let idx = data.index();
        let (y, units, periods) = (data.y(), data.units(), data.periods());
        let n = y.len();
        let (nu, nt) = (idx.n_units(), idx.n_periods());
        let mut s1 = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut noise = vec![0.0; n];
        for k in 0..n {
            let u = off[k] + alpha[units[k]] + gamma[periods[k]];
            let (a, b) = score(y[k], u);
            s1[k] = a;
            h[k] = b.max(1e-300);
            noise[k] = b.abs() * (1.0 + u.abs());
        }
        let (r_u, a_u) = group_sums(nu, units, &s1, &h);
        let (r_t, a_t) = group_sums(nt, periods, &s1, &h);
        let before = max_mean_score(data, &s1, &noise);

        // `big` is eliminated; `small` keeps the dense system.
        let eliminate_units = nu >= nt;
        let (small_n, small_of, big_of) = if eliminate_units {
            (nt, periods, units)
        } else {
            (nu, units, periods)
        };
        let (r_big, a_big, r_small, a_small) = if eliminate_units {
            (&r_u, &a_u, &r_t, &a_t)
        } else {
            (&r_t, &a_t, &r_u, &a_u)
        };
        let m = small_n - 1;
        if m == 0 {
            return None;
        }
        let mut sys = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for j in 1..small_n {
            sys[(j - 1, j - 1)] = a_small[j];
            rhs[j - 1] = r_small[j];
        }
        for (b, &ab) in a_big.iter().enumerate() {
            let obs: &[usize] = if eliminate_units {
                &self.unit_rows[idx.unit_obs(b)]
            } else {
                idx.period_obs(b)
            };
            for &k in obs {
                let sk = small_of[k];
                if sk == 0 {
                    continue;
                }
                rhs[sk - 1] -= h[k] * r_big[b] / ab;
                for &l in obs {
                    let sl = small_of[l];
                    if sl != 0 {
                        sys[(sk - 1, sl - 1)] -= h[k] * h[l] / ab;
                    }
                }
            }
        }
        let chol = sys.cholesky()?;
        let ds = chol.solve(&rhs);
        let mut d_small = vec![0.0; small_n];
        d_small[1..].copy_from_slice(ds.as_slice());
        let mut d_big: Vec<f64> = r_big.iter().zip(a_big.iter()).map(|(r, a)| r / a).collect();
        for k in 0..n {
            d_big[big_of[k]] -= h[k] * d_small[small_of[k]] / a_big[big_of[k]];
        }
        let largest = d_small.iter().chain(&d_big).fold(0.0f64, |m, v| m.max(v.abs()));
        if !largest.is_finite() {
            return None;
        }
        let scale = if largest > EFFECT_STEP_CAP { EFFECT_STEP_CAP / largest } else { 1.0 };
        let (d_alpha, d_gamma) = if eliminate_units { (&d_big, &d_small) } else { (&d_small, &d_big) };
        let trial_a: Vec<f64> = alpha.iter().zip(d_alpha).map(|(a, d)| a + scale * d).collect();
        let trial_g: Vec<f64> = gamma.iter().zip(d_gamma).map(|(g, d)| g + scale * d).collect();
        let mut reach = 0.0f64;
        for k in 0..n {
            let u = off[k] + trial_a[units[k]] + trial_g[periods[k]];
            reach = reach.max(u.abs());
            let (a, b) = score(y[k], u);
            s1[k] = a;
            noise[k] = b.abs() * (1.0 + u.abs());
        }
        let after = max_mean_score(data, &s1, &noise);
        if after >= before {
            return None;
        }
        alpha.copy_from_slice(&trial_a);
        gamma.copy_from_slice(&trial_g);
        normalize(data, alpha, gamma);
        Some((after, reach))
    }

    fn loglik(&self, off: &[f64], alpha: &[f64], gamma: &[f64]) -> f64 {
        let y = self.data.y();
        let (units, periods) = (self.data.units(), self.data.periods());
        let index = |k: usize| off[k] + alpha[units[k]] + gamma[periods[k]];
        match *self.family {
            Family::Linear { sigma2 } => {
                let ss: f64 = (0..y.len()).map(|k| (y[k] - index(k)).powi(2)).sum();
                -0.5 * ss / sigma2 - y.len() as f64 * (0.5 * sigma2.ln() + LN_SQRT_2PI)
            }
            Family::Logit => (0..y.len())
                .map(|k| {
                    let u = index(k);
                    if y[k] > 0.5 {
                        -softplus(-u)
                    } else {
                        -softplus(u)
                    }
                })
                .sum(),
            ref fam => (0..y.len()).map(|k| fam.log_density(y[k], index(k))).sum(),
        }
    }

    /// `Σ g1 x`, the β-gradient of the profile log-likelihood when the
    /// effects are at their profile values.
    fn beta_score(&self, off: &[f64], alpha: &[f64], gamma: &[f64]) -> Vec<f64> {
        match *self.family {
            Family::Linear { sigma2 } => self.beta_score_with(off, alpha, gamma, |y, u| (y - u) / sigma2),
            Family::Logit => self.beta_score_with(off, alpha, gamma, |y, u| y - logistic(u)),
            Family::Poisson => self.beta_score_with(off, alpha, gamma, |y, u| y - u.exp()),
            ref fam => self.beta_score_with(off, alpha, gamma, |y, u| fam.score_curvature(y, u).0),
        }
    }

    fn beta_score_with(&self, off: &[f64], alpha: &[f64], gamma: &[f64], g1: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let y = self.data.y();
        let (units, periods) = (self.data.units(), self.data.periods());
        let x = self.data.x();
        let d = self.d;
        let mut g = vec![0.0; d];
        for k in 0..y.len() {
            let s = g1(y[k], off[k] + alpha[units[k]] + gamma[periods[k]]);
            for (gj, xj) in g.iter_mut().zip(&x[k * d..(k + 1) * d]) {
                *gj += s * xj;
            }
        }
        g
    }

    /// Rounding noise of each component of [`Problem::beta_score`], with the
    /// expected weight standing in for the curvature.
    fn beta_score_noise(&self, off: &[f64], alpha: &[f64], gamma: &[f64]) -> Vec<f64> {
        let (units, periods) = (self.data.units(), self.data.periods());
        let x = self.data.x();
        let d = self.d;
        let mut e = vec![0.0; d];
        for k in 0..off.len() {
            let u = off[k] + alpha[units[k]] + gamma[periods[k]];
            let c = self.family.expected_weight(u) * (1.0 + u.abs());
            for (ej, xj) in e.iter_mut().zip(&x[k * d..(k + 1) * d]) {
                *ej += c * xj.abs();
            }
        }
        e
    }

    fn weights(&self, off: &[f64], alpha: &[f64], gamma: &[f64]) -> Vec<f64> {
        (0..off.len())
            .map(|k| {
                let u = off[k] + alpha[self.data.unit_of(k)] + gamma[self.data.period_of(k)];
                self.family.expected_weight(u)
            })
            .collect()
    }
}

#[inline]
/// Per-group sums of `a` and `b` for the group ids in `of`.
fn group_sums(groups: usize, of: &[usize], a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut sa = vec![0.0; groups];
    let mut sb = vec![0.0; groups];
    for k in 0..of.len() {
        sa[of[k]] += a[k];
        sb[of[k]] += b[k];
    }
    (sa, sb)
}

/// Part of a score sum beyond its rounding noise.
fn above_noise(sum: f64, noise: f64) -> f64 {
    (sum.abs() - SCORE_ROUNDING * noise).max(0.0)
}

/// Largest mean score of a unit or period, net of rounding noise, from
/// per-observation scores and noise magnitudes.
fn max_mean_score(data: &PanelData, score: &[f64], noise: &[f64]) -> f64 {
    let idx = data.index();
    let (s_u, n_u) = group_sums(idx.n_units(), data.units(), score, noise);
    let (s_t, n_t) = group_sums(idx.n_periods(), data.periods(), score, noise);
    let u = (0..s_u.len()).map(|i| above_noise(s_u[i], n_u[i]) / idx.unit_count(i) as f64);
    let t = (0..s_t.len()).map(|t| above_noise(s_t[t], n_t[t]) / idx.period_count(t) as f64);
    u.chain(t).fold(0.0, f64::max)
}

fn newton_step(s1: f64, s2: f64) -> f64 {
    let s2 = s2.max(1e-300);
    (s1 / s2).clamp(-EFFECT_STEP_CAP, EFFECT_STEP_CAP)
}

/// Shifts γ to satisfy `Σ_t |D_t| γ_t = 0`, moving the level into α.
fn normalize(data: &PanelData, alpha: &mut [f64], gamma: &mut [f64]) {
    let idx = data.index();
    let c = (0..idx.n_periods())
        .map(|t| idx.period_count(t) as f64 * gamma[t])
        .sum::<f64>()
        / data.n_obs() as f64;
    for g in gamma.iter_mut() {
        *g -= c;
    }
    for a in alpha.iter_mut() {
        *a += c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Observation;

    fn panel(rows: &[(usize, usize, f64, f64)], n: usize, t: usize) -> PanelData {
        let obs = rows
            .iter()
            .map(|&(i, s, y, x)| Observation { unit: i, period: s, y, x: vec![x] })
            .collect();
        PanelData::new(n, t, obs, vec!["x".into()]).unwrap()
    }

    #[test]
    fn two_by_two_demeaning() {
        let p = panel(&[(0, 0, 0.0, 1.0), (0, 1, 0.0, 2.0), (1, 0, 0.0, 3.0), (1, 1, 0.0, 5.0)], 2, 2);
        let xt = two_way_project(&p, &p.x_col(0), &[1.0; 4], &SolveOptions::default()).unwrap();
        let want = [0.25, -0.25, -0.25, 0.25];
        for (a, b) in xt.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_and_single_unit_project_to_zero() {
        let p = panel(&[(0, 0, 0.0, 1.0), (0, 1, 0.0, 2.0), (1, 1, 0.0, 3.0), (1, 2, 0.0, 5.0)], 2, 3);
        let w = [0.3, 1.2, 0.7, 2.0];
        let xt = two_way_project(&p, &[4.0; 4], &w, &SolveOptions::default()).unwrap();
        assert!(xt.iter().all(|v| v.abs() < 1e-10));

        let p = panel(&[(0, 0, 0.0, 1.0), (0, 1, 0.0, 2.0), (0, 2, 0.0, 7.0)], 1, 3);
        let xt = two_way_project(&p, &p.x_col(0), &[1.0, 2.0, 3.0], &SolveOptions::default()).unwrap();
        assert!(xt.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let p = panel(&[(0, 0, 0.0, 1.0), (0, 1, 0.0, 2.0), (1, 2, 0.0, 3.0), (1, 3, 0.0, 5.0)], 2, 4);
        let err = two_way_project(&p, &p.x_col(0), &[1.0; 4], &SolveOptions::default()).unwrap_err();
        match err {
            Error::Disconnected { components } => assert_eq!(components.len(), 2),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(err_code(fit(&p, &Family::linear(), &SolveOptions::default())), 3);
    }

    fn err_code<T>(r: Result<T>) -> i32 {
        r.err().map(|e| e.exit_code()).unwrap_or(0)
    }

    #[test]
    fn collinear_covariate_is_singular() {
        // x equals the unit dummy of the first unit.
        let mut rows = Vec::new();
        for i in 0..3 {
            for t in 0..4 {
                rows.push((i, t, ((i + 2 * t) % 3) as f64, if i == 0 { 1.0 } else { 0.0 }));
            }
        }
        let p = panel(&rows, 3, 4);
        let r = fit(&p, &Family::linear(), &SolveOptions::default());
        assert!(matches!(r, Err(Error::Singular(_))), "{r:?}");
    }

    #[test]
    fn all_ones_unit_is_separation() {
        let mut rows = Vec::new();
        for i in 0..4 {
            for t in 0..5 {
                let y = if i == 0 { 1.0 } else { ((i + t) % 2) as f64 };
                rows.push((i, t, y, ((i * 3 + t * 7) % 5) as f64));
            }
        }
        let p = panel(&rows, 4, 5);
        let r = fit(&p, &Family::Logit, &SolveOptions::default());
        assert!(matches!(r, Err(Error::Separation { .. })), "{r:?}");
    }
}
