//! Cluster-robust sandwich covariance on the within-transformed scores.

use nalgebra::{DMatrix, DVector};

use super::FitResult;
use crate::error::{Error, Result};

/// Cluster memberships as dense indices, one per observation.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterGroups {
    OneWay(Vec<usize>),
    /// Cameron–Gelbach–Miller two-way clustering; `both` is the
    /// intersection of the two dimensions.
    TwoWay { a: Vec<usize>, b: Vec<usize>, both: Vec<usize> },
}

impl ClusterGroups {
    /// Every observation in its own cluster.
    pub fn singletons(n: usize) -> Self {
        ClusterGroups::OneWay((0..n).collect())
    }
}

fn meat(scores: &[Vec<f64>], resid: &[f64], ids: &[usize], small_sample: bool) -> Result<DMatrix<f64>> {
    let p = scores.len();
    let n_levels = ids.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![DVector::<f64>::zeros(p); n_levels];
    let mut present = vec![false; n_levels];
    for (i, &g) in ids.iter().enumerate() {
        present[g] = true;
        for k in 0..p {
            sums[g][k] += scores[k][i] * resid[i];
        }
    }
    let g_count = present.iter().filter(|x| **x).count();
    if g_count < 2 {
        return Err(Error::InvalidArgument(format!("{g_count} cluster(s); at least 2 required")));
    }
    let mut m = DMatrix::zeros(p, p);
    for (s, _) in sums.iter().zip(&present).filter(|(_, p)| **p) {
        m += s * s.transpose();
    }
    if small_sample {
        m *= g_count as f64 / (g_count as f64 - 1.0);
    }
    Ok(m)
}

/// `B M B` with `B = (X̃ᵀWX̃)⁻¹` and `M` the clustered score outer
/// products; two-way is `V(a) + V(b) − V(a∩b)`. `small_sample` applies
/// `G/(G−1)` per clustering dimension.
pub fn clustered_vcov(fit: &FitResult, groups: &ClusterGroups, small_sample: bool) -> Result<DMatrix<f64>> {
    let n = fit.n_obs;
    let check = |ids: &[usize]| {
        if ids.len() != n {
            Err(Error::InvalidArgument("cluster ids do not match the fit".into()))
        } else {
            Ok(())
        }
    };
    let m = match groups {
        ClusterGroups::OneWay(ids) => {
            check(ids)?;
            meat(&fit.within, &fit.score_resid, ids, small_sample)?
        }
        ClusterGroups::TwoWay { a, b, both } => {
            check(a)?;
            check(b)?;
            check(both)?;
            meat(&fit.within, &fit.score_resid, a, small_sample)?
                + meat(&fit.within, &fit.score_resid, b, small_sample)?
                - meat(&fit.within, &fit.score_resid, both, small_sample)?
        }
    };
    Ok(&fit.bread * m * &fit.bread)
}
