//! Independent oracles shared by the integration and acceptance tests.
//! Nothing here calls the library's numerical routines.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use relmob_core::ingest::Establishment;
use relmob_core::scene::SceneSeedTable;
use relmob_core::{Composition, NeighborhoodId, PanelDataset};

/// O(n²) average ranks: `#smaller + (#equal + 1) / 2`.
pub fn naive_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let eq = xs.iter().filter(|y| *y == x).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

pub fn naive_spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (naive_ranks(a), naive_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Dense level indices in sorted key order.
pub fn level_ids<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let levels: BTreeSet<K> = keys.iter().cloned().collect();
    let index: BTreeMap<K, usize> = levels.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    keys.iter().map(|k| index[k]).collect()
}

/// Poisson IRLS on an explicit design: intercept, `x`, and one dummy per
/// non-reference level of every factor. Returns the `x` coefficients.
pub fn dummy_poisson(y: &[f64], x: &[Vec<f64>], factors: &[Vec<usize>]) -> Vec<f64> {
    let n = y.len();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    cols.extend(x.iter().cloned());
    for f in factors {
        let levels = f.iter().max().map_or(0, |m| m + 1);
        for l in 1..levels {
            cols.push(f.iter().map(|&g| if g == l { 1.0 } else { 0.0 }).collect());
        }
    }
    let k = cols.len();
    let xm = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    let yv = DVector::from_column_slice(y);
    let mut b = DVector::zeros(k);
    b[0] = (y.iter().sum::<f64>() / n as f64).ln();
    for _ in 0..500 {
        let eta = &xm * &b;
        let mu = eta.map(f64::exp);
        let z = DVector::from_fn(n, |i, _| eta[i] + (yv[i] - mu[i]) / mu[i]);
        let mut xtwx = DMatrix::zeros(k, k);
        let mut xtwz = DVector::zeros(k);
        for i in 0..n {
            let row = xm.row(i).transpose();
            xtwx += &row * row.transpose() * mu[i];
            xtwz += &row * (mu[i] * z[i]);
        }
        let next = xtwx.cholesky().expect("dummy design is full rank").solve(&xtwz);
        let step = (&next - &b).amax();
        b = next;
        if step < 1e-13 {
            break;
        }
    }
    b.as_slice()[1..=x.len()].to_vec()
}

fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let r = 6371.0088;
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let (dp, dl) = ((b.0 - a.0).to_radians(), (b.1 - a.1).to_radians());
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().asin()
}

fn dense_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    dot / (u.iter().map(|a| a * a).sum::<f64>().sqrt() * v.iter().map(|b| b * b).sum::<f64>().sqrt())
}

/// A dyad to recompute: `(n1, n2, metro, year)`.
pub type DyadKey = (NeighborhoodId, NeighborhoodId, String, i32);

/// Recomputes the nine similarities of every dyad from raw inputs: the
/// seven distance-based ones rescaled by their (metro, year) maximum,
/// amenity as dense cosine of per-establishment category tallies, and scene
/// as cosine of establishment-averaged seed vectors.
pub fn brute_force_similarities(
    panel: &PanelDataset,
    establishments: &[Establishment],
    seeds: &SceneSeedTable,
    votes: &BTreeMap<(NeighborhoodId, i32), f64>,
    dyads: &[DyadKey],
) -> Vec<[f64; 9]> {
    let categories: Vec<String> = establishments
        .iter()
        .flat_map(|e| e.categories.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let open = |id: &NeighborhoodId, y: i32| -> Vec<&Establishment> {
        establishments
            .iter()
            .filter(|e| &e.neighborhood == id && e.first_review_year <= y && y <= e.last_review_year)
            .collect()
    };
    let amenity = |id: &NeighborhoodId, y: i32| -> Vec<f64> {
        let ests = open(id, y);
        categories
            .iter()
            .map(|c| ests.iter().filter(|e| e.categories.contains(c)).count() as f64)
            .collect()
    };
    let scene = |id: &NeighborhoodId, y: i32| -> Vec<f64> {
        let mut acc = vec![0.0; seeds.dims()];
        let mut scored = 0.0;
        for e in open(id, y) {
            let hits: Vec<&[f64]> = e.categories.iter().filter_map(|c| seeds.get(c)).collect();
            if hits.is_empty() {
                continue;
            }
            scored += 1.0;
            for (d, a) in acc.iter_mut().enumerate() {
                *a += hits.iter().map(|h| h[d]).sum::<f64>() / hits.len() as f64;
            }
        }
        acc.iter().map(|a| a / scored).collect()
    };
    let raw: Vec<[f64; 7]> = dyads
        .iter()
        .map(|(a, b, _, y)| {
            let (ha, hb) = (panel.neighborhood(a).unwrap(), panel.neighborhood(b).unwrap());
            let (aa, ab) = (panel.attribute(a, *y).unwrap(), panel.attribute(b, *y).unwrap());
            let comp = match (aa.composition, ab.composition) {
                (Composition::RaceShares(p), Composition::RaceShares(q)) => {
                    (0..4).map(|k| (p[k] - q[k]).abs()).sum::<f64>() / 2.0
                }
                (Composition::VisibleMinority(p), Composition::VisibleMinority(q)) => (p - q).abs(),
                _ => unreachable!(),
            };
            [
                haversine((ha.centroid_lat, ha.centroid_lon), (hb.centroid_lat, hb.centroid_lon)),
                (aa.income - ab.income).abs(),
                (aa.rent - ab.rent).abs(),
                (aa.pct_degree - ab.pct_degree).abs(),
                comp,
                (votes[&(a.clone(), *y)] - votes[&(b.clone(), *y)]).abs(),
                (aa.establishment_count / ha.land_area - ab.establishment_count / hb.land_area).abs(),
            ]
        })
        .collect();
    let mut maxes: BTreeMap<(&str, i32), [f64; 7]> = BTreeMap::new();
    for ((_, _, m, y), r) in dyads.iter().zip(&raw) {
        let e = maxes.entry((m.as_str(), *y)).or_insert([0.0; 7]);
        for k in 0..7 {
            e[k] = e[k].max(r[k]);
        }
    }
    dyads
        .iter()
        .zip(&raw)
        .map(|((a, b, m, y), r)| {
            let mx = maxes[&(m.as_str(), *y)];
            let mut out = [0.0; 9];
            for k in 0..7 {
                out[k] = if mx[k] == 0.0 { 1.0 } else { 1.0 - r[k] / mx[k] };
            }
            out[7] = dense_cosine(&amenity(a, *y), &amenity(b, *y));
            out[8] = dense_cosine(&scene(a, *y), &scene(b, *y));
            out
        })
        .collect()
}
