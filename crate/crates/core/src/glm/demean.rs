//! Weighted within-transformation over several fixed-effect factors by
//! alternating projections.

use rayon::prelude::*;

/// Fixed-effect factors as dense level indices per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    ids: Vec<Vec<usize>>,
    levels: Vec<usize>,
}

impl Factors {
    /// `ids[f][i]` is observation `i`'s level in factor `f`. Level indices
    /// need not be contiguous; unused indices are simply never touched.
    pub fn new(ids: Vec<Vec<usize>>) -> Self {
        if let Some(first) = ids.first() {
            assert!(ids.iter().all(|f| f.len() == first.len()), "factor lengths differ");
        }
        let levels = ids
            .iter()
            .map(|f| f.iter().copied().max().map_or(0, |m| m + 1))
            .collect();
        Factors { ids, levels }
    }

    pub fn n_factors(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self, factor: usize) -> &[usize] {
        &self.ids[factor]
    }

    /// Number of levels actually present in each factor.
    pub fn realized_levels(&self) -> Vec<usize> {
        self.ids
            .iter()
            .zip(&self.levels)
            .map(|(f, &n)| {
                let mut seen = vec![false; n];
                f.iter().for_each(|&l| seen[l] = true);
                seen.into_iter().filter(|s| *s).count()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DemeanOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DemeanOptions {
    fn default() -> Self {
        DemeanOptions { tol: 1e-10, max_sweeps: 10_000 }
    }
}

/// Projects `v` onto the weighted orthogonal complement of the factor
/// dummies. `fe_part` is both the warm start and the output: on return
/// `v − fe_part` is the residual. Any warm start inside the dummy span is
/// valid, so the previous iteration's component can be reused after the
/// weights change. Returns the residual and whether the sweeps converged.
pub fn demean(
    factors: &Factors,
    w: &[f64],
    v: &[f64],
    fe_part: &mut [f64],
    opts: DemeanOptions,
) -> (Vec<f64>, bool) {
    let n = v.len();
    let mut r: Vec<f64> = v.iter().zip(fe_part.iter()).map(|(a, b)| a - b).collect();
    if factors.n_factors() == 0 {
        return (r, true);
    }
    let scale = 1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut wsum: Vec<Vec<f64>> = factors.levels.iter().map(|&l| vec![0.0; l]).collect();
    for (f, ids) in factors.ids.iter().enumerate() {
        for i in 0..n {
            wsum[f][ids[i]] += w[i];
        }
    }
    let mut acc: Vec<f64> = Vec::new();
    for _ in 0..opts.max_sweeps {
        let mut largest = 0.0f64;
        for (f, ids) in factors.ids.iter().enumerate() {
            acc.clear();
            acc.resize(factors.levels[f], 0.0);
            for i in 0..n {
                acc[ids[i]] += w[i] * r[i];
            }
            for (a, s) in acc.iter_mut().zip(&wsum[f]) {
                if *s > 0.0 {
                    *a /= s;
                }
                largest = largest.max(a.abs());
            }
            for i in 0..n {
                let m = acc[ids[i]];
                r[i] -= m;
                fe_part[i] += m;
            }
        }
        if largest < opts.tol * scale {
            return (r, true);
        }
    }
    (r, false)
}

/// Demeans several columns in parallel, each with its own warm start.
/// Columns are independent, so the result does not depend on scheduling.
pub fn demean_columns(
    factors: &Factors,
    w: &[f64],
    columns: &[&[f64]],
    fe_parts: &mut [Vec<f64>],
    opts: DemeanOptions,
) -> (Vec<Vec<f64>>, bool) {
    let out: Vec<(Vec<f64>, bool)> = columns
        .par_iter()
        .zip(fe_parts.par_iter_mut())
        .map(|(col, fe)| demean(factors, w, col, fe, opts))
        .collect();
    let ok = out.iter().all(|(_, c)| *c);
    (out.into_iter().map(|(r, _)| r).collect(), ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    /// Residual of a dense weighted least-squares fit on explicit dummies.
    fn dense_residual(factors: &Factors, w: &[f64], v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for f in 0..factors.n_factors() {
            for l in 0..factors.levels[f] {
                let c: Vec<f64> = factors.ids(f).iter().map(|&x| (x == l) as u8 as f64).collect();
                if c.iter().any(|x| *x > 0.0) {
                    cols.push(c);
                }
            }
        }
        let d = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        let sw = DMatrix::from_diagonal(&DVector::from_iterator(n, w.iter().map(|x| x.sqrt())));
        let a = &sw * &d;
        let b = &sw * DVector::from_column_slice(v);
        let coef = a.svd(true, true).solve(&b, 1e-12).unwrap();
        let fitted = &d * coef;
        (0..n).map(|i| v[i] - fitted[i]).collect()
    }

    #[test]
    fn single_factor_is_group_demeaning() {
        let f = Factors::new(vec![vec![0, 0, 1, 1, 1]]);
        let mut fe = vec![0.0; 5];
        let (r, ok) = demean(&f, &[1.0; 5], &[1.0, 3.0, 2.0, 4.0, 6.0], &mut fe, DemeanOptions::default());
        assert!(ok);
        assert_eq!(r, vec![-1.0, 1.0, -2.0, 0.0, 2.0]);
        assert_eq!(fe, vec![2.0, 2.0, 4.0, 4.0, 4.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn matches_dense_projection(
            obs in proptest::collection::vec((0usize..6, 0usize..5, 0usize..2, 0.1f64..5.0, -3.0f64..3.0), 12..40),
            warm in -2.0f64..2.0,
        ) {
            let f = Factors::new(vec![
                obs.iter().map(|o| o.0).collect(),
                obs.iter().map(|o| o.1).collect(),
                obs.iter().map(|o| o.2).collect(),
            ]);
            let w: Vec<f64> = obs.iter().map(|o| o.3).collect();
            let v: Vec<f64> = obs.iter().map(|o| o.4).collect();
            let expect = dense_residual(&f, &w, &v);
            // a warm start inside the dummy span must not change the answer
            let mut fe: Vec<f64> = obs.iter().map(|o| warm * o.0 as f64).collect();
            let (r, ok) = demean(&f, &w, &v, &mut fe, DemeanOptions { tol: 1e-13, max_sweeps: 100_000 });
            prop_assert!(ok);
            for (a, b) in r.iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
            }
            for i in 0..v.len() {
                prop_assert!((v[i] - fe[i] - r[i]).abs() < 1e-12);
            }
        }
    }
}
