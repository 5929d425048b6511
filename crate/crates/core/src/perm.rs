//! Permutation robustness test: shuffle strength within metro-year groups,
//! refit, and compare the observed coefficients with the permuted ones.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{fit, FitResult, ModelSpec, ThetaMode};
use crate::ingest::CsvOut;
use crate::similarity::DyadTable;
use crate::stats::{mean, normal_two_sided_p, sample_sd};

/// Seed of replication `r`: `master_seed XOR r`.
pub fn replication_seed(master_seed: u64, r: u64) -> u64 {
    master_seed ^ r
}

/// Uniformly permutes strength within each (metro, year) group; every
/// other column is untouched.
pub fn permute_within_groups(table: &DyadTable, seed: u64) -> DyadTable {
    let mut groups: BTreeMap<(&str, i32), Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        groups.entry((r.metro.as_str(), r.year)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = table.clone();
    for idx in groups.values() {
        let mut s: Vec<f64> = idx.iter().map(|&i| table.rows[i].strength).collect();
        s.shuffle(&mut rng);
        for (&i, v) in idx.iter().zip(s) {
            out.rows[i].strength = v;
        }
    }
    out
}

/// `(β − μ) / σ`; NaN when σ is not positive.
pub fn z_score(beta: f64, perm_mean: f64, perm_sd: f64) -> f64 {
    if perm_sd > 0.0 {
        (beta - perm_mean) / perm_sd
    } else {
        f64::NAN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// `2·(1 − Φ(|z|))`.
    #[default]
    Normal,
    /// `(1 + #{|β_r − μ| ≥ |β − μ|}) / (R + 1)`.
    EmpiricalRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermutationOptions {
    pub reps: usize,
    pub master_seed: u64,
    /// Reuse the observed fit's θ instead of re-estimating it per
    /// replication.
    pub hold_theta: bool,
    pub p_value: PValueMethod,
    pub parallel: bool,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        PermutationOptions {
            reps: 100,
            master_seed: 0,
            hold_theta: false,
            p_value: PValueMethod::Normal,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSummary {
    pub predictor: String,
    pub beta_real: f64,
    pub perm_mean: f64,
    pub perm_sd: f64,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub rows: Vec<PredictorSummary>,
    pub replications: usize,
    pub failed: usize,
    pub master_seed: u64,
}

impl PermutationSummary {
    pub fn get(&self, predictor: &str) -> Option<&PredictorSummary> {
        self.rows.iter().find(|r| r.predictor == predictor)
    }
}

/// Summary statistics from observed coefficients and the successful
/// replications' coefficients (same predictor order).
pub fn summarize(
    predictors: &[String],
    beta_real: &[f64],
    perm: &[Vec<f64>],
    method: PValueMethod,
) -> Vec<PredictorSummary> {
    predictors
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let draws: Vec<f64> = perm.iter().map(|b| b[k]).collect();
            let m = mean(&draws);
            let sd = sample_sd(&draws);
            let z = z_score(beta_real[k], m, sd);
            let p = match method {
                PValueMethod::Normal => normal_two_sided_p(z),
                PValueMethod::EmpiricalRank => {
                    let obs = (beta_real[k] - m).abs();
                    let extreme = draws.iter().filter(|b| (*b - m).abs() >= obs).count();
                    (1 + extreme) as f64 / (draws.len() + 1) as f64
                }
            };
            PredictorSummary { predictor: name.clone(), beta_real: beta_real[k], perm_mean: m, perm_sd: sd, z, p }
        })
        .collect()
}

/// Runs `reps` permuted refits of `spec` and summarizes them against
/// `base`, the fit on the unpermuted table. Non-convergent or failed
/// refits are counted and excluded.
pub fn permutation_test_with_base(
    table: &DyadTable,
    spec: &ModelSpec,
    base: &FitResult,
    opts: &PermutationOptions,
) -> Result<PermutationSummary> {
    if opts.reps < 2 {
        return Err(Error::InvalidArgument("permutation test needs at least 2 replications".into()));
    }
    if !base.converged {
        return Err(Error::Numerical("observed fit did not converge".into()));
    }
    let mut rep_spec = spec.clone();
    if opts.hold_theta {
        if let Some(t) = base.theta {
            rep_spec.theta = ThetaMode::Fixed(t);
        }
    }
    let run = |r: usize| -> Option<Vec<f64>> {
        let permuted = permute_within_groups(table, replication_seed(opts.master_seed, r as u64));
        match fit(&permuted, &rep_spec) {
            Ok(f) if f.converged && f.predictors == base.predictors => Some(f.beta),
            Ok(f) => {
                log::warn!("replication {r} failed: {:?}", f.diagnostics);
                None
            }
            Err(e) => {
                log::warn!("replication {r} failed: {e}");
                None
            }
        }
    };
    let results: Vec<Option<Vec<f64>>> = if opts.parallel {
        (0..opts.reps).into_par_iter().map(run).collect()
    } else {
        (0..opts.reps).map(run).collect()
    };
    let ok: Vec<Vec<f64>> = results.iter().flatten().cloned().collect();
    let failed = opts.reps - ok.len();
    if ok.len() < 2 {
        return Err(Error::Numerical(format!("only {} of {} replications succeeded", ok.len(), opts.reps)));
    }
    Ok(PermutationSummary {
        rows: summarize(&base.predictors, &base.beta, &ok, opts.p_value),
        replications: opts.reps,
        failed,
        master_seed: opts.master_seed,
    })
}

pub fn permutation_test(table: &DyadTable, spec: &ModelSpec, opts: &PermutationOptions) -> Result<PermutationSummary> {
    let base = fit(table, spec)?;
    permutation_test_with_base(table, spec, &base, opts)
}

pub fn write_summary(path: &Path, s: &PermutationSummary) -> Result<()> {
    let mut w = CsvOut::create(path, &["predictor", "beta_real", "perm_mean", "perm_sd", "z", "p", "failed_reps"])?;
    for r in &s.rows {
        w.row([
            r.predictor.clone(),
            format!("{}", r.beta_real),
            format!("{}", r.perm_mean),
            format!("{}", r.perm_sd),
            format!("{}", r.z),
            format!("{}", r.p),
            s.failed.to_string(),
        ])?;
    }
    w.finish()
}
