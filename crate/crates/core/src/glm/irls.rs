//! IRLS for log-link Poisson and NB2 with absorbed fixed effects, and the
//! profile-likelihood search for the NB2 dispersion.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};

use super::demean::{demean_columns, DemeanOptions, Factors};
use crate::error::{Error, Result};

/// Response, predictor columns and absorbed factors for one fit.
#[derive(Debug, Clone)]
pub struct Design {
    pub y: Vec<f64>,
    pub names: Vec<String>,
    /// Column-major predictor values, `x[k][i]`.
    pub x: Vec<Vec<f64>>,
    pub factors: Factors,
}

impl Design {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty design".into()));
        }
        if self.names.len() != self.x.len() || self.x.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument("predictor columns do not match the response".into()));
        }
        if self.y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("response must be finite and non-negative".into()));
        }
        if self.x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite predictor value".into()));
        }
        if self.y.iter().all(|v| *v == 0.0) {
            return Err(Error::Data("response is identically zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub demean: DemeanOptions,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions { max_iter: 300, tol: 1e-8, demean: DemeanOptions::default() }
    }
}

/// Warm-start state carried between IRLS calls on the same design.
#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    eta: Vec<f64>,
    fe_parts: Vec<Vec<f64>>,
}

impl WarmStart {
    /// Fixed-effect components of the predictor columns.
    pub(crate) fn fe_parts_x(&self) -> Vec<Vec<f64>> {
        self.fe_parts[1..].to_vec()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct IrlsFit {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub demean_ok: bool,
    pub warm: WarmStart,
}

/// NB2 weight `μ / (1 + μ/θ)`; `theta = None` is Poisson.
#[inline]
fn weight(mu: f64, theta: Option<f64>) -> f64 {
    match theta {
        Some(t) => mu / (1.0 + mu / t),
        None => mu,
    }
}

/// Score residual `(y − μ) / (1 + μ/θ)`.
#[inline]
pub(crate) fn score_resid(y: f64, mu: f64, theta: Option<f64>) -> f64 {
    match theta {
        Some(t) => (y - mu) / (1.0 + mu / t),
        None => y - mu,
    }
}

pub(crate) fn deviance(y: &[f64], mu: &[f64], theta: Option<f64>) -> f64 {
    let mut d = 0.0;
    for (&y, &m) in y.iter().zip(mu) {
        let a = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
        d += match theta {
            None => a - (y - m),
            Some(t) => a - (y + t) * ((y - m) / (m + t)).ln_1p(),
        };
    }
    2.0 * d
}

/// Full log-likelihood including the constant terms.
pub fn log_likelihood(y: &[f64], mu: &[f64], theta: Option<f64>) -> f64 {
    let mut ll = 0.0;
    for (&y, &m) in y.iter().zip(mu) {
        ll += match theta {
            None => y * m.ln() - m - ln_gamma(y + 1.0),
            Some(t) => {
                lgamma_ratio(y, t) - ln_gamma(y + 1.0) - t * (m / t).ln_1p()
                    + if y > 0.0 { y * (m / (t + m)).ln() } else { 0.0 }
            }
        };
    }
    ll
}

/// `lnΓ(y + θ) − lnΓ(θ)`, summed exactly for small integer `y` so the
/// difference stays accurate when θ is huge.
fn lgamma_ratio(y: f64, t: f64) -> f64 {
    if y.fract() == 0.0 && y < 1000.0 {
        (0..y as u32).map(|j| (t + j as f64).ln()).sum()
    } else {
        ln_gamma(y + t) - ln_gamma(t)
    }
}

/// `∂ℓ/∂θ` of the NB2 log-likelihood.
pub fn theta_score(y: &[f64], mu: &[f64], t: f64) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let psi = if y.fract() == 0.0 && y < 1000.0 {
                (0..y as u32).map(|j| 1.0 / (t + j as f64)).sum()
            } else {
                digamma(y + t) - digamma(t)
            };
            psi - (m / t).ln_1p() + (m - y) / (m + t)
        })
        .sum()
}

fn cold_start(d: &Design) -> WarmStart {
    let ybar = d.y.iter().sum::<f64>() / d.n_obs() as f64;
    WarmStart {
        eta: d.y.iter().map(|y| ((y + ybar) / 2.0).ln()).collect(),
        fe_parts: vec![vec![0.0; d.n_obs()]; d.x.len() + 1],
    }
}

/// Weighted Gram matrix and cross-product of the demeaned columns.
fn normal_equations(xw: &[Vec<f64>], zw: &[f64], w: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let p = xw.len();
    let mut g = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for j in 0..p {
        for k in 0..=j {
            let s: f64 = (0..w.len()).map(|i| w[i] * xw[j][i] * xw[k][i]).sum();
            g[(j, k)] = s;
            g[(k, j)] = s;
        }
        b[j] = (0..w.len()).map(|i| w[i] * xw[j][i] * zw[i]).sum();
    }
    (g, b)
}

pub(crate) fn solve_spd(g: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if g.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    g.clone()
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::Numerical("weighted normal equations are not positive definite".into()))
}

/// IRLS with fixed dispersion. Each iteration demeans the working response
/// and the predictors under the current weights, solves the within WLS
/// problem and recovers the full linear predictor as `z − (z̃ − X̃β)`.
pub(crate) fn irls(
    d: &Design,
    theta: Option<f64>,
    start: Option<&WarmStart>,
    opts: &IrlsOptions,
) -> Result<IrlsFit> {
    let n = d.n_obs();
    let mut warm = start.cloned().unwrap_or_else(|| cold_start(d));
    let mut eta = warm.eta.clone();
    let mut mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let mut dev = deviance(&d.y, &mu, theta);
    let mut beta = vec![0.0; d.x.len()];
    let mut converged = false;
    let mut demean_ok = true;
    let mut iterations = 0;
    let mut z = vec![0.0; n];
    let mut w = vec![0.0; n];
    for it in 1..=opts.max_iter {
        iterations = it;
        for i in 0..n {
            w[i] = weight(mu[i], theta);
            z[i] = eta[i] + (d.y[i] - mu[i]) / mu[i];
        }
        let mut cols: Vec<&[f64]> = vec![&z];
        cols.extend(d.x.iter().map(|c| c.as_slice()));
        let (within, ok) = demean_columns(&d.factors, &w, &cols, &mut warm.fe_parts, opts.demean);
        demean_ok &= ok;
        let (zw, xw) = within.split_first().expect("response column");
        let (g, b) = normal_equations(xw, zw, &w);
        let bvec = solve_spd(&g, &b)?;
        let mut new_eta: Vec<f64> = (0..n)
            .map(|i| {
                let fitted_within: f64 = (0..xw.len()).map(|k| xw[k][i] * bvec[k]).sum();
                z[i] - (zw[i] - fitted_within)
            })
            .collect();
        let mut new_mu: Vec<f64> = new_eta.iter().map(|e| e.exp()).collect();
        let mut new_dev = deviance(&d.y, &new_mu, theta);
        // step halving guards against overshoot from poor starts
        let mut halvings = 0;
        while (!new_dev.is_finite() || (it > 1 && new_dev > dev * (1.0 + 1e-6) + 1e-8)) && halvings < 30 {
            halvings += 1;
            for i in 0..n {
                new_eta[i] = 0.5 * (new_eta[i] + eta[i]);
                new_mu[i] = new_eta[i].exp();
            }
            new_dev = deviance(&d.y, &new_mu, theta);
        }
        if !new_dev.is_finite() {
            return Err(Error::Numerical("deviance became non-finite".into()));
        }
        let step = 0.5f64.powi(halvings);
        for (b, nb) in beta.iter_mut().zip(bvec.iter()) {
            *b += step * (nb - *b);
        }
        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        eta = new_eta;
        mu = new_mu;
        dev = new_dev;
        if change < opts.tol && it > 1 {
            converged = true;
            break;
        }
    }
    warm.eta = eta.clone();
    Ok(IrlsFit { beta, eta, mu, iterations, converged, demean_ok, warm })
}

/// Brent's derivative-free minimizer on `[a, b]`. Returns `(x, f(x), evals)`.
pub fn brent_minimize<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64, usize) {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    let mut evals = 1;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x) {
                e = if x >= xm { a - x } else { b - x };
                d = CGOLD * e;
            } else {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
            }
        } else {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        evals += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx, evals)
}

pub(crate) const LOG_THETA_BRACKET: (f64, f64) = (-9.210_340_371_976_182, 13.815_510_557_964_274);

pub(crate) struct ProfileFit {
    pub theta: f64,
    pub fit: IrlsFit,
    pub evals: usize,
    pub total_iterations: usize,
    pub all_converged: bool,
}

/// Maximizes the profile log-likelihood over log θ, warm-starting each
/// inner IRLS from the previous evaluation.
pub(crate) fn profile_theta(d: &Design, start: Option<&WarmStart>, opts: &IrlsOptions) -> Result<ProfileFit> {
    let mut warm = match start {
        Some(w) => w.clone(),
        None => irls(d, None, None, opts)?.warm,
    };
    let mut total_iterations = 0;
    let mut all_converged = true;
    let mut failure: Option<Error> = None;
    let objective = |s: f64| -> f64 {
        match irls(d, Some(s.exp()), Some(&warm), opts) {
            Ok(f) => {
                total_iterations += f.iterations;
                all_converged &= f.converged;
                let ll = log_likelihood(&d.y, &f.mu, Some(s.exp()));
                warm = f.warm;
                -ll
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        }
    };
    let (s, _, evals) = brent_minimize(objective, LOG_THETA_BRACKET.0, LOG_THETA_BRACKET.1, 1e-9, 200);
    if let Some(e) = failure {
        log::debug!("inner fit failed during the dispersion search: {e}");
    }
    let theta = s.exp();
    let tight = IrlsOptions { tol: opts.tol * 1e-2, ..*opts };
    let fit = irls(d, Some(theta), Some(&warm), &tight)?;
    total_iterations += fit.iterations;
    Ok(ProfileFit { theta, fit, evals, total_iterations, all_converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_parabola_minimum() {
        let (x, fx, _) = brent_minimize(|x| (x - 1.234).powi(2) + 3.0, -10.0, 10.0, 1e-10, 200);
        assert!((x - 1.234).abs() < 1e-7);
        assert!((fx - 3.0).abs() < 1e-12);
        let (x, _, _) = brent_minimize(|x| (x - 5.0).abs(), 0.0, 2.0, 1e-10, 200);
        assert!((x - 2.0).abs() < 1e-6);
    }

    #[test]
    fn nb_loglik_matches_gamma_form() {
        let y = [0.0, 1.0, 4.0, 17.0];
        let mu = [0.5, 2.0, 3.5, 12.0];
        let t = 2.7;
        let direct: f64 = y
            .iter()
            .zip(&mu)
            .map(|(&y, &m)| {
                ln_gamma(y + t) - ln_gamma(t) - ln_gamma(y + 1.0)
                    + t * (t / (t + m)).ln()
                    + y * (m / (t + m)).ln()
            })
            .sum();
        assert!((log_likelihood(&y, &mu, Some(t)) - direct).abs() < 1e-10);
        // the score is the derivative of the log-likelihood in θ
        let h = 1e-6;
        let num = (log_likelihood(&y, &mu, Some(t + h)) - log_likelihood(&y, &mu, Some(t - h))) / (2.0 * h);
        assert!((theta_score(&y, &mu, t) - num).abs() < 1e-6);
        // Poisson limit
        let p = log_likelihood(&y, &mu, None);
        assert!((log_likelihood(&y, &mu, Some(1e9)) - p).abs() < 1e-6);
    }

    #[test]
    fn deviance_zero_at_saturation() {
        let y = [1.0, 3.0, 8.0];
        assert_eq!(deviance(&y, &y, None), 0.0);
        assert!(deviance(&y, &y, Some(3.0)).abs() < 1e-14);
    }
}
