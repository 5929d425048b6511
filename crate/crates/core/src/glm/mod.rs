//! Fixed-effects Poisson and NB2 count models on dyad tables.
//!
//! Neighborhood and year effects are absorbed by weighted demeaning inside
//! each IRLS iteration, so only the similarity coefficients are solved for
//! explicitly.

pub mod demean;
pub mod irls;
pub mod predict;
pub mod vcov;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use demean::{DemeanOptions, Factors};
pub use irls::{brent_minimize, log_likelihood, theta_score, Design, IrlsOptions};
pub use predict::{
    curve_slopes, empirical_quantile, irr, marginal_slope, moderator_value, predict_curve, CurvePoint,
    PercentileSource, Scenario,
};
pub use vcov::{clustered_vcov, ClusterGroups};

use crate::error::{Error, Result};
use crate::ingest::CsvOut;
use crate::model::CountryMode;
use crate::similarity::{DyadTable, Feature};
use crate::stats::{normal_two_sided_p, pearson};
use irls::{irls, profile_theta, score_resid, solve_spd, IrlsFit, LOG_THETA_BRACKET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    #[serde(alias = "nb", alias = "nb2")]
    NegBin,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::NegBin => "negbin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// Profile-likelihood estimate.
    #[default]
    Estimate,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSpec {
    /// One-way by unordered dyad, pooled over years.
    Dyad,
    /// Two-way by n1 and n2 (origin and destination when directed).
    #[default]
    TwoWay,
}

impl ClusterSpec {
    pub fn label(self) -> &'static str {
        match self {
            ClusterSpec::Dyad => "dyad",
            ClusterSpec::TwoWay => "n1+n2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub response: String,
    pub predictors: Vec<String>,
    pub fixed_effects: Vec<String>,
    pub family: Family,
    pub theta: ThetaMode,
    pub cluster: ClusterSpec,
    /// Apply `G/(G−1)` per clustering dimension.
    pub small_sample: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::standard(CountryMode::Us, Family::NegBin)
    }
}

impl ModelSpec {
    /// All nine similarities plus the scene × amenity interaction, with
    /// n1, n2 and year effects.
    pub fn standard(country: CountryMode, family: Family) -> Self {
        ModelSpec {
            response: "strength".into(),
            predictors: Feature::ALL.iter().map(|f| f.column(country).to_string()).collect(),
            fixed_effects: vec!["n1".into(), "n2".into(), "year".into()],
            family,
            theta: ThetaMode::Estimate,
            cluster: ClusterSpec::TwoWay,
            small_sample: true,
        }
    }

    pub fn with_family(&self, family: Family) -> Self {
        ModelSpec { family, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.predictors.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one predictor".into()));
        }
        for fe in &self.fixed_effects {
            let canonical = canonical_fe(fe)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown fixed effect `{fe}`")))?;
            if self.predictors.iter().any(|p| p == fe || p == canonical) {
                return Err(Error::InvalidArgument(format!("`{fe}` is both a predictor and a fixed effect")));
            }
        }
        if let ThetaMode::Fixed(t) = self.theta {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("fixed theta {t} must be positive")));
            }
        }
        Ok(())
    }
}

fn canonical_fe(name: &str) -> Option<&'static str> {
    match name {
        "n1" | "origin" => Some("n1"),
        "n2" | "destination" => Some("n2"),
        "year" => Some("year"),
        "metro" => Some("metro"),
        _ => None,
    }
}

fn index_levels<K: Ord + Clone>(keys: impl Iterator<Item = K>) -> Vec<usize> {
    let keys: Vec<K> = keys.collect();
    let mut map: BTreeMap<K, usize> = BTreeMap::new();
    for k in &keys {
        let next = map.len();
        map.entry(k.clone()).or_insert(next);
    }
    // renumber in sorted order so level indices do not depend on row order
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    keys.iter().map(|k| map[k]).collect()
}

/// Response, predictors, absorbed factors and cluster ids for a table.
pub fn design_from_table(table: &DyadTable, spec: &ModelSpec) -> Result<(Design, ClusterGroups)> {
    spec.validate()?;
    if spec.response != "strength" {
        return Err(Error::InvalidArgument(format!("unsupported response `{}`", spec.response)));
    }
    let rows = &table.rows;
    let x = spec
        .predictors
        .iter()
        .map(|p| {
            if p == "strength" {
                return Err(Error::InvalidArgument("strength cannot be a predictor".into()));
            }
            table
                .named_column(p)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown predictor `{p}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let factors = spec
        .fixed_effects
        .iter()
        .map(|fe| match canonical_fe(fe) {
            Some("n1") => index_levels(rows.iter().map(|r| r.n1.clone())),
            Some("n2") => index_levels(rows.iter().map(|r| r.n2.clone())),
            Some("year") => index_levels(rows.iter().map(|r| r.year)),
            _ => index_levels(rows.iter().map(|r| r.metro.clone())),
        })
        .collect();
    let dyad = index_levels(rows.iter().map(|r| (r.n1.clone(), r.n2.clone())));
    let groups = match spec.cluster {
        ClusterSpec::Dyad => ClusterGroups::OneWay(dyad),
        ClusterSpec::TwoWay => ClusterGroups::TwoWay {
            a: index_levels(rows.iter().map(|r| r.n1.clone())),
            b: index_levels(rows.iter().map(|r| r.n2.clone())),
            both: dyad,
        },
    };
    let design = Design {
        y: table.strengths(),
        names: spec.predictors.clone(),
        x,
        factors: Factors::new(factors),
    };
    Ok((design, groups))
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub family: Family,
    pub cluster: String,
    /// Retained predictors, in specification order.
    pub predictors: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub vcov: DMatrix<f64>,
    /// NB2 dispersion (variance `μ + μ²/θ`); `None` for Poisson.
    pub theta: Option<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub sq_corr: f64,
    pub n_obs: usize,
    pub n_fe_levels: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Predictors removed as collinear with the fixed effects or each other.
    pub dropped: Vec<String>,
    pub diagnostics: Vec<String>,
    /// Largest absolute score component relative to `max(1, |loglik|)`.
    pub score_norm: f64,
    pub fitted: Vec<f64>,
    /// Absorbed fixed-effect contribution to each linear predictor.
    pub fe_component: Vec<f64>,
    pub(crate) within: Vec<Vec<f64>>,
    pub(crate) score_resid: Vec<f64>,
    pub(crate) bread: DMatrix<f64>,
}

impl FitResult {
    fn position(&self, name: &str) -> Option<usize> {
        self.predictors.iter().position(|p| p == name)
    }

    pub fn beta(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.beta[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.se[i])
    }

    pub fn z(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.beta[i] / self.se[i])
    }

    /// The model's `(X̃ᵀWX̃)⁻¹`.
    pub fn bread(&self) -> &DMatrix<f64> {
        &self.bread
    }

    pub fn with_vcov(mut self, vcov: DMatrix<f64>) -> Self {
        self.se = (0..vcov.nrows())
            .map(|i| {
                let v = vcov[(i, i)];
                if v >= 0.0 {
                    v.sqrt()
                } else {
                    f64::NAN
                }
            })
            .collect();
        if self.se.iter().any(|s| s.is_nan()) {
            self.diagnostics
                .push("clustered covariance has a negative diagonal; SE reported as NaN".into());
        }
        self.vcov = vcov;
        self
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub irls: IrlsOptions,
}

const COLLINEAR_TOL: f64 = 1e-10;

/// Drops predictors whose within-transformed column is numerically zero
/// or lies in the span of earlier retained columns.
fn screen_collinear(d: &Design, opts: &IrlsOptions) -> (Design, Vec<String>) {
    let n = d.n_obs();
    let w = vec![1.0; n];
    let cols: Vec<&[f64]> = d.x.iter().map(|c| c.as_slice()).collect();
    let mut fe = vec![vec![0.0; n]; cols.len()];
    let (within, _) = demean::demean_columns(&d.factors, &w, &cols, &mut fe, opts.demean);
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for k in 0..within.len() {
        let base = rms(&within[k]);
        let resid = if base < COLLINEAR_TOL * rms(&d.x[k]).max(1.0) {
            0.0
        } else if kept.is_empty() {
            base
        } else {
            let p = kept.len();
            let g = DMatrix::from_fn(p, p, |a, b| {
                (0..n).map(|i| within[kept[a]][i] * within[kept[b]][i]).sum::<f64>()
            });
            let rhs = nalgebra::DVector::from_fn(p, |a, _| {
                (0..n).map(|i| within[kept[a]][i] * within[k][i]).sum::<f64>()
            });
            match solve_spd(&g, &rhs) {
                Ok(c) => rms(
                    &(0..n)
                        .map(|i| within[k][i] - (0..p).map(|a| c[a] * within[kept[a]][i]).sum::<f64>())
                        .collect::<Vec<_>>(),
                ),
                Err(_) => 0.0,
            }
        };
        if resid < COLLINEAR_TOL * base.max(1.0) || resid == 0.0 {
            log::warn!("dropping collinear predictor `{}`", d.names[k]);
            dropped.push(d.names[k].clone());
        } else {
            kept.push(k);
        }
    }
    let out = Design {
        y: d.y.clone(),
        names: kept.iter().map(|&k| d.names[k].clone()).collect(),
        x: kept.iter().map(|&k| d.x[k].clone()).collect(),
        factors: d.factors.clone(),
    };
    (out, dropped)
}

/// Fits a design directly. Most callers want [`fit`].
pub fn fit_design(
    design: &Design,
    family: Family,
    theta_mode: ThetaMode,
    groups: &ClusterGroups,
    small_sample: bool,
    opts: &FitOptions,
) -> Result<FitResult> {
    design.validate()?;
    let (d, dropped) = screen_collinear(design, &opts.irls);
    let mut diagnostics = Vec::new();
    let (f, theta, iterations, estimated): (IrlsFit, Option<f64>, usize, bool) = match (family, theta_mode) {
        (Family::Poisson, _) => {
            let f = irls(&d, None, None, &opts.irls)?;
            let it = f.iterations;
            (f, None, it, false)
        }
        (Family::NegBin, ThetaMode::Fixed(t)) => {
            let f = irls(&d, Some(t), None, &opts.irls)?;
            let it = f.iterations;
            (f, Some(t), it, false)
        }
        (Family::NegBin, ThetaMode::Estimate) => {
            let pf = profile_theta(&d, None, &opts.irls)?;
            if !pf.all_converged {
                diagnostics.push(format!("some inner fits hit the iteration cap during {} θ evaluations", pf.evals));
            }
            (pf.fit, Some(pf.theta), pf.total_iterations, true)
        }
    };
    if !f.converged {
        diagnostics.push(format!("IRLS did not converge in {} iterations", f.iterations));
    }
    if !f.demean_ok {
        diagnostics.push("fixed-effect demeaning hit its sweep cap".into());
    }
    let n = d.n_obs();
    let mu = f.mu.clone();
    let w: Vec<f64> = mu
        .iter()
        .map(|&m| match theta {
            Some(t) => m / (1.0 + m / t),
            None => m,
        })
        .collect();
    let cols: Vec<&[f64]> = d.x.iter().map(|c| c.as_slice()).collect();
    let mut fe = f.warm.fe_parts_x();
    let tight = DemeanOptions { tol: opts.irls.demean.tol * 1e-3, ..opts.irls.demean };
    let (within, _) = demean::demean_columns(&d.factors, &w, &cols, &mut fe, tight);
    let p = within.len();
    let gram = DMatrix::from_fn(p, p, |a, b| (0..n).map(|i| w[i] * within[a][i] * within[b][i]).sum::<f64>());
    let bread = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        gram.clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("information matrix is singular".into()))?
            .inverse()
    };
    let resid: Vec<f64> = (0..n).map(|i| score_resid(d.y[i], mu[i], theta)).collect();
    let loglik = log_likelihood(&d.y, &mu, theta);

    // stationarity: slope, fixed-effect and dispersion scores
    let mut worst = 0.0f64;
    for col in &d.x {
        worst = worst.max((0..n).map(|i| col[i] * resid[i]).sum::<f64>().abs());
    }
    for fac in 0..d.factors.n_factors() {
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, &l) in d.factors.ids(fac).iter().enumerate() {
            *sums.entry(l).or_insert(0.0) += resid[i];
        }
        worst = sums.values().fold(worst, |m, s| m.max(s.abs()));
    }
    if estimated {
        let t = theta.expect("estimated theta");
        let s = t.ln();
        if s - LOG_THETA_BRACKET.0 < 1e-3 || LOG_THETA_BRACKET.1 - s < 1e-3 {
            diagnostics.push(format!("theta {t:.4e} at the search bound"));
        } else {
            worst = worst.max((t * theta_score(&d.y, &mu, t)).abs());
        }
    }
    let score_norm = worst / loglik.abs().max(1.0);
    if score_norm > 1e-6 {
        diagnostics.push(format!("relative score norm {score_norm:.2e} above 1e-6"));
    }

    let levels: usize = d.factors.realized_levels().iter().sum();
    let k = p + levels - d.factors.n_factors().saturating_sub(1) + usize::from(estimated);
    let bic = -2.0 * loglik + k as f64 * (n as f64).ln();
    let sq_corr = pearson(&d.y, &mu).map_or(0.0, |r| r * r);
    let fe_component: Vec<f64> = (0..n)
        .map(|i| f.eta[i] - (0..p).map(|k| d.x[k][i] * f.beta[k]).sum::<f64>())
        .collect();
    for msg in &diagnostics {
        log::warn!("{msg}");
    }
    let result = FitResult {
        family,
        cluster: String::new(),
        predictors: d.names.clone(),
        beta: f.beta.clone(),
        se: Vec::new(),
        vcov: DMatrix::zeros(p, p),
        theta,
        loglik,
        bic,
        sq_corr,
        n_obs: n,
        n_fe_levels: levels,
        converged: f.converged,
        iterations,
        dropped,
        diagnostics,
        score_norm,
        fitted: mu,
        fe_component,
        within,
        score_resid: resid,
        bread,
    };
    let vcov = clustered_vcov(&result, groups, small_sample)?;
    Ok(result.with_vcov(vcov))
}

/// Fits `spec` on a standardized dyad table.
pub fn fit(table: &DyadTable, spec: &ModelSpec) -> Result<FitResult> {
    fit_with(table, spec, &FitOptions::default())
}

pub fn fit_with(table: &DyadTable, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    if !table.standardized {
        log::warn!("fitting an unstandardized dyad table");
    }
    let (design, groups) = design_from_table(table, spec)?;
    let mut r = fit_design(&design, spec.family, spec.theta, &groups, spec.small_sample, opts)?;
    r.cluster = spec.cluster.label().to_string();
    Ok(r)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_fit(path: &Path, fit: &FitResult) -> Result<()> {
    let mut w = CsvOut::create(path, &["predictor", "beta", "se", "z", "p", "irr"])?;
    for (i, name) in fit.predictors.iter().enumerate() {
        let (b, se) = (fit.beta[i], fit.se[i]);
        let z = b / se;
        w.row([
            name.clone(),
            format!("{b}"),
            format!("{se}"),
            format!("{z}"),
            format!("{}", normal_two_sided_p(z)),
            format!("{}", irr(b).0),
        ])?;
    }
    w.finish()
}

pub fn write_fitstats(path: &Path, fits: &[&FitResult]) -> Result<()> {
    let mut w = CsvOut::create(
        path,
        &["family", "cluster", "n_obs", "theta", "loglik", "bic", "sq_corr", "converged", "iterations"],
    )?;
    for f in fits {
        w.row([
            f.family.label().to_string(),
            f.cluster.clone(),
            f.n_obs.to_string(),
            fmt_opt(f.theta),
            format!("{}", f.loglik),
            format!("{}", f.bic),
            format!("{}", f.sq_corr),
            f.converged.to_string(),
            f.iterations.to_string(),
        ])?;
    }
    w.finish()
}

pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = CsvOut::create(path, &["percentile", "focal_value", "eta"])?;
    for p in points {
        w.row([format!("{}", p.percentile), format!("{}", p.focal_value), format!("{}", p.eta)])?;
    }
    w.finish()
}
