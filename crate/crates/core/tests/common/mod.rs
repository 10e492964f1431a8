//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls the estimator, projection or bias code of the crate:
//! the oracles use dense dummy-variable algebra and their own
//! log-density derivatives.

#![allow(dead_code)]

use fepanel::panel::{Observation, PanelData};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fam {
    Linear,
    Probit,
    Logit,
    Poisson,
}

impl Fam {
    pub const ALL: [Fam; 4] = [Fam::Linear, Fam::Probit, Fam::Logit, Fam::Poisson];

    pub fn family(self) -> fepanel::family::Family {
        use fepanel::family::Family;
        match self {
            Fam::Linear => Family::linear(),
            Fam::Probit => Family::Probit,
            Fam::Logit => Family::Logit,
            Fam::Poisson => Family::Poisson,
        }
    }

    /// Log-density and its first two index derivatives (σ² = 1 for the
    /// linear family).
    pub fn g012(self, y: f64, u: f64) -> (f64, f64, f64) {
        match self {
            Fam::Linear => (-0.5 * (y - u).powi(2), y - u, -1.0),
            Fam::Logit => {
                let p = 1.0 / (1.0 + (-u).exp());
                let g = y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                (g, y - p, -p * (1.0 - p))
            }
            Fam::Probit => {
                let n = Normal::new(0.0, 1.0).unwrap();
                let q = 2.0 * y - 1.0;
                let v = q * u;
                let cdf = n.cdf(v);
                let lam = n.pdf(v) / cdf;
                (cdf.ln(), q * lam, -lam * (v + lam))
            }
            Fam::Poisson => {
                let l = u.exp();
                (y * u - l, y - l, -l)
            }
        }
    }

    pub fn draw<R: Rng>(self, u: f64, rng: &mut R) -> f64 {
        match self {
            Fam::Linear => u + rng.sample::<f64, _>(StandardNormal),
            Fam::Probit => (u + rng.sample::<f64, _>(StandardNormal) > 0.0) as u8 as f64,
            Fam::Logit => (rng.gen::<f64>() < 1.0 / (1.0 + (-u).exp())) as u8 as f64,
            Fam::Poisson => {
                // Knuth's multiplication method; indices stay moderate here.
                let l = (-u.exp()).exp();
                let mut k = 0.0;
                let mut p = rng.gen::<f64>();
                while p > l {
                    k += 1.0;
                    p *= rng.gen::<f64>();
                }
                k
            }
        }
    }
}

/// Random panel with `n × t` cells, each observed with probability
/// `p_obs`, `d` standard normal covariates and outcomes from `fam` at
/// random coefficients and effects. Returns `None` when some unit or
/// period ends up empty.
pub fn random_panel<R: Rng>(rng: &mut R, fam: Fam, n: usize, t: usize, d: usize, p_obs: f64) -> Option<PanelData> {
    let beta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let alpha: Vec<f64> = (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let gamma: Vec<f64> = (0..t).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut obs = Vec::new();
    for i in 0..n {
        for s in 0..t {
            if rng.gen::<f64>() >= p_obs {
                continue;
            }
            let x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let u = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + alpha[i] + gamma[s];
            obs.push(Observation {
                unit: i,
                period: s,
                y: fam.draw(u, rng),
                x,
            });
        }
    }
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    PanelData::new(n, t, obs, names).ok()
}

/// Dense design `[x, unit dummies, period dummies 2..T]`.
fn dense_design(data: &PanelData) -> DMatrix<f64> {
    let (n, d) = (data.n_obs(), data.n_covariates());
    let (nu, nt) = (data.n_units(), data.n_periods());
    let mut z = DMatrix::zeros(n, d + nu + nt - 1);
    for k in 0..n {
        for j in 0..d {
            z[(k, j)] = data.x_row(k)[j];
        }
        z[(k, d + data.unit_of(k))] = 1.0;
        let t = data.period_of(k);
        if t > 0 {
            z[(k, d + nu + t - 1)] = 1.0;
        }
    }
    z
}

/// Whether the coefficients are identified, i.e. the dense design
/// `[x, dummies]` has full column rank.
pub fn dense_design_full_rank(data: &PanelData) -> bool {
    let z = dense_design(data);
    let p = z.ncols();
    z.nrows() >= p && z.svd(false, false).rank(1e-9) == p
}

/// Joint maximum likelihood over coefficients and all dummies by full
/// Newton with step halving. Returns the coefficients and the fitted
/// indices, or `None` without convergence.
pub fn dense_newton(data: &PanelData, fam: Fam) -> Option<(Vec<f64>, Vec<f64>)> {
    let z = dense_design(data);
    let (n, p) = z.shape();
    let y = data.y();
    let mut theta = DVector::zeros(p);
    let eval = |th: &DVector<f64>| -> (f64, DVector<f64>, DMatrix<f64>) {
        let u = &z * th;
        let mut ll = 0.0;
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for k in 0..n {
            let (a, b, c) = fam.g012(y[k], u[k]);
            ll += a;
            let row = z.row(k).transpose();
            g += b * &row;
            h += c * &row * row.transpose();
        }
        (ll, g, h)
    };
    let (mut ll, mut g, mut h) = eval(&theta);
    for _ in 0..500 {
        if g.amax() < 1e-12 * n as f64 {
            let d = data.n_covariates();
            let u = &z * &theta;
            return Some((theta.rows(0, d).iter().copied().collect(), u.iter().copied().collect()));
        }
        let step = (-&h).lu().solve(&g)?;
        let mut s = 1.0;
        loop {
            let trial = &theta + s * &step;
            let (tll, tg, th) = eval(&trial);
            if tll.is_finite() && tll >= ll - 1e-13 * ll.abs() {
                theta = trial;
                ll = tll;
                g = tg;
                h = th;
                break;
            }
            s *= 0.5;
            if s < 1e-12 {
                return None;
            }
        }
    }
    None
}

/// Weighted least-squares residual of `x` on unit and period dummies.
pub fn dense_wls_residual(data: &PanelData, x: &[f64], w: &[f64]) -> Vec<f64> {
    let full = dense_design(data);
    let d = data.n_covariates();
    let dm = full.columns(d, full.ncols() - d).into_owned();
    let n = dm.nrows();
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let lhs = dm.transpose() * &wm * &dm;
    let rhs = dm.transpose() * &wm * DVector::from_column_slice(x);
    let coef = lhs.cholesky().expect("dummy Gram matrix is positive definite").solve(&rhs);
    let fitted = &dm * coef;
    (0..n).map(|k| x[k] - fitted[k]).collect()
}

/// Balanced-panel two-way within transformation `z − z̄_i − z̄_t + z̄`.
pub fn within_balanced(z: &[f64], n: usize, t: usize) -> Vec<f64> {
    let mean = z.iter().sum::<f64>() / (n * t) as f64;
    let unit: Vec<f64> = (0..n).map(|i| z[i * t..(i + 1) * t].iter().sum::<f64>() / t as f64).collect();
    let period: Vec<f64> = (0..t).map(|s| (0..n).map(|i| z[i * t + s]).sum::<f64>() / n as f64).collect();
    (0..n * t).map(|k| z[k] - unit[k / t] - period[k % t] + mean).collect()
}
