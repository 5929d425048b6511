//! Marginal-effect curves for the interaction and incidence-rate ratios.

use serde::{Deserialize, Serialize};

use super::FitResult;
use crate::error::{Error, Result};
use crate::stats::normal_quantile;

/// How a moderator percentile maps to a standardized value.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PercentileSource {
    /// Standard normal quantile (the predictors are z-scores).
    #[default]
    Normal,
    /// Linear-interpolated empirical quantile of the given sample.
    Empirical(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub focal: String,
    pub moderator: String,
    pub interaction: String,
    pub grid: Vec<f64>,
    /// Percentiles in (0, 100).
    pub percentiles: Vec<f64>,
    pub source: PercentileSource,
}

impl Scenario {
    /// Scene similarity along a ±2 SD grid, with amenity similarity held at
    /// its 10th, 50th and 90th percentiles.
    pub fn scene_by_amenity() -> Self {
        Scenario {
            focal: "sim_scene".into(),
            moderator: "sim_amenity".into(),
            interaction: "interaction".into(),
            grid: (0..=16).map(|i| -2.0 + 0.25 * i as f64).collect(),
            percentiles: vec![10.0, 50.0, 90.0],
            source: PercentileSource::Normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub percentile: f64,
    pub moderator_value: f64,
    pub focal_value: f64,
    /// `η(x) − η(0)`; fixed effects cancel in the difference.
    pub eta: f64,
}

/// Type-7 (linear interpolation) sample quantile.
pub fn empirical_quantile(sample: &[f64], p: f64) -> f64 {
    let mut s: Vec<f64> = sample.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

pub fn moderator_value(source: &PercentileSource, percentile: f64) -> Result<f64> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside (0, 100)")));
    }
    Ok(match source {
        PercentileSource::Normal => normal_quantile(percentile / 100.0),
        PercentileSource::Empirical(s) => empirical_quantile(s, percentile / 100.0),
    })
}

/// Slope of η in the focal predictor at a given moderator value.
pub fn marginal_slope(b_focal: f64, b_int: f64, moderator: f64) -> f64 {
    b_focal + b_int * moderator
}

fn coef(fit: &FitResult, name: &str) -> Result<f64> {
    fit.beta(name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown predictor `{name}`")))
}

/// `(percentile, moderator value, slope)` for each scenario percentile.
pub fn curve_slopes(fit: &FitResult, scenario: &Scenario) -> Result<Vec<(f64, f64, f64)>> {
    let bf = coef(fit, &scenario.focal)?;
    let bi = coef(fit, &scenario.interaction)?;
    if fit.beta(&scenario.moderator).is_none() {
        return Err(Error::InvalidArgument(format!("unknown predictor `{}`", scenario.moderator)));
    }
    scenario
        .percentiles
        .iter()
        .map(|&p| {
            let z = moderator_value(&scenario.source, p)?;
            Ok((p, z, marginal_slope(bf, bi, z)))
        })
        .collect()
}

/// Linear predictor relative to the focal value 0, other predictors at 0.
/// The moderator's main effect is constant in the focal value and cancels.
pub fn predict_curve(fit: &FitResult, scenario: &Scenario) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for (p, z, slope) in curve_slopes(fit, scenario)? {
        for &x in &scenario.grid {
            out.push(CurvePoint { percentile: p, moderator_value: z, focal_value: x, eta: slope * x });
        }
    }
    Ok(out)
}

/// Incidence-rate ratio and proportional change: `(eᵇ, eᵇ − 1)`.
pub fn irr(b: f64) -> (f64, f64) {
    (b.exp(), b.exp_m1())
}
