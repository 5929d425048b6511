//! Cultural scene vectors: per-establishment averages of category seed
//! vectors, and per-neighborhood averages of those.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ingest::Establishment;
use crate::model::NeighborhoodId;

/// Case-folds and collapses internal whitespace.
pub fn normalize_category(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Category → D expert-coded scene scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSeedTable {
    dims: usize,
    seeds: BTreeMap<String, Vec<f64>>,
}

impl SceneSeedTable {
    /// Category keys are normalized; D must be 15 or 16.
    pub fn new(dims: usize, seeds: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if dims != 15 && dims != 16 {
            return Err(Error::InvalidArgument(format!(
                "scene tables have 15 or 16 dimensions, got {dims}"
            )));
        }
        if seeds.is_empty() {
            return Err(Error::InvalidArgument("scene seed table is empty".into()));
        }
        let mut normalized = BTreeMap::new();
        for (cat, v) in seeds {
            if v.len() != dims {
                return Err(Error::InvalidArgument(format!(
                    "seed for `{cat}` has {} scores, expected {dims}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("seed for `{cat}` is not finite")));
            }
            normalized.insert(normalize_category(&cat), v);
        }
        Ok(Self {
            dims,
            seeds: normalized,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn get(&self, category: &str) -> Option<&[f64]> {
        self.seeds.get(&normalize_category(category)).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.seeds.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Multiplies every seed by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dims: self.dims,
            seeds: self
                .seeds
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| x * factor).collect()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstablishmentVector {
    pub vector: Vec<f64>,
    pub unmatched: usize,
}

/// Mean of the seed vectors of the matched categories, or `None` when no
/// category is in the table (an unscored establishment).
pub fn establishment_vector<S: AsRef<str>>(
    categories: &[S],
    seeds: &SceneSeedTable,
) -> Option<EstablishmentVector> {
    let mut sum = vec![0.0; seeds.dims()];
    let mut matched = 0usize;
    let mut unmatched = 0usize;
    for c in categories {
        match seeds.get(c.as_ref()) {
            Some(v) => {
                matched += 1;
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            }
            None => unmatched += 1,
        }
    }
    if matched == 0 {
        return None;
    }
    sum.iter_mut().for_each(|s| *s /= matched as f64);
    Some(EstablishmentVector {
        vector: sum,
        unmatched,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneProfile {
    pub neighborhood: NeighborhoodId,
    pub year: i32,
    pub vector: Vec<f64>,
}

/// Per-dimension mean over the scored establishments in `open`. The caller
/// is responsible for passing only establishments open that year.
pub fn neighborhood_profile(
    neighborhood: &NeighborhoodId,
    year: i32,
    open: &[&Establishment],
    seeds: &SceneSeedTable,
) -> Option<SceneProfile> {
    let mut sum = vec![0.0; seeds.dims()];
    let mut scored = 0usize;
    for e in open {
        if let Some(ev) = establishment_vector(&e.categories, seeds) {
            scored += 1;
            sum.iter_mut().zip(&ev.vector).for_each(|(s, x)| *s += x);
        }
    }
    if scored == 0 {
        return None;
    }
    sum.iter_mut().for_each(|s| *s /= scored as f64);
    Some(SceneProfile {
        neighborhood: neighborhood.clone(),
        year,
        vector: sum,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Exclusion {
    pub subject: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ProfileSet {
    pub profiles: BTreeMap<(NeighborhoodId, i32), SceneProfile>,
    /// Unscored establishments and neighborhood-years without a profile.
    pub exclusions: Vec<Exclusion>,
    pub unmatched_categories: usize,
}

/// Profiles for every neighborhood with at least one establishment, in each
/// of `years`, using the first/last review window for openness.
pub fn profile_all(
    establishments: &[Establishment],
    seeds: &SceneSeedTable,
    years: &[i32],
) -> ProfileSet {
    let mut set = ProfileSet::default();
    let mut by_hood: BTreeMap<&NeighborhoodId, Vec<&Establishment>> = BTreeMap::new();
    for e in establishments {
        match establishment_vector(&e.categories, seeds) {
            Some(ev) => set.unmatched_categories += ev.unmatched,
            None => set.exclusions.push(Exclusion {
                subject: e.id.clone(),
                reason: "unscored: no category in seed table".into(),
            }),
        }
        by_hood.entry(&e.neighborhood).or_default().push(e);
    }
    for (hood, ests) in by_hood {
        for &year in years {
            let open: Vec<&Establishment> = ests.iter().copied().filter(|e| e.is_open(year)).collect();
            match neighborhood_profile(hood, year, &open, seeds) {
                Some(p) => {
                    set.profiles.insert((hood.clone(), year), p);
                }
                None => set.exclusions.push(Exclusion {
                    subject: format!("{hood}@{year}"),
                    reason: "no scored establishment open".into(),
                }),
            }
        }
    }
    set.exclusions.sort();
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::cosine;
    use proptest::prelude::*;

    fn unit(k: usize, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; 15];
        v[k] = scale;
        v
    }

    fn table(rows: &[(&str, Vec<f64>)]) -> SceneSeedTable {
        SceneSeedTable::new(15, rows.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()).unwrap()
    }

    fn est(id: &str, hood: &str, cats: &[&str], first: i32, last: i32) -> Establishment {
        Establishment {
            id: id.into(),
            neighborhood: NeighborhoodId::new(hood).unwrap(),
            categories: cats.iter().map(|c| c.to_string()).collect(),
            first_review_year: first,
            last_review_year: last,
        }
    }

    #[test]
    fn establishment_vector_examples() {
        let t = table(&[("a", unit(0, 1.0)), ("b", unit(0, 2.0)), ("c", unit(1, 2.0))]);
        assert_eq!(establishment_vector(&["a"], &t).unwrap().vector, unit(0, 1.0));
        let mixed = establishment_vector(&["b", "c"], &t).unwrap();
        assert_eq!(&mixed.vector[..3], &[1.0, 1.0, 0.0]);

        let ev = establishment_vector(&["A ", "zzz"], &t).unwrap();
        assert_eq!(ev.unmatched, 1);
        assert!(establishment_vector(&["zzz"], &t).is_none());
    }

    #[test]
    fn three_category_mean_matches_direct_sum() {
        let mut s1 = vec![0.0; 15];
        let mut s2 = vec![0.0; 15];
        let mut s3 = vec![0.0; 15];
        (s1[0], s1[1]) = (0.5, 0.1);
        (s2[0], s2[1]) = (1.25, 0.2);
        (s3[0], s3[1]) = (1.25, 0.3);
        let t = table(&[("c1", s1.clone()), ("c2", s2.clone()), ("c3", s3.clone())]);
        let got = establishment_vector(&["c1", "c2", "c3"], &t).unwrap().vector;
        // oracle: per-dimension sum / 3, summed in reverse order
        for d in 0..15 {
            let expect = (s3[d] + s2[d] + s1[d]) / 3.0;
            assert!((got[d] - expect).abs() < 1e-12);
        }
        assert!((got[0] - 1.0).abs() < 1e-12);
        assert!((got[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn profile_examples() {
        let t = table(&[("a", unit(0, 1.0)), ("b", unit(0, 2.0)), ("c", unit(0, 4.0)), ("neg", unit(0, -1.0))]);
        let z = NeighborhoodId::new("Z1").unwrap();
        let e1 = est("1", "Z1", &["a"], 2015, 2020);
        let p = neighborhood_profile(&z, 2016, &[&e1], &t).unwrap();
        assert_eq!(p.vector, unit(0, 1.0));

        let en = est("2", "Z1", &["neg"], 2015, 2020);
        let p = neighborhood_profile(&z, 2016, &[&e1, &en], &t).unwrap();
        assert!(p.vector.iter().all(|x| *x == 0.0));

        let e2 = est("3", "Z1", &["b"], 2015, 2020);
        let e3 = est("4", "Z1", &["c"], 2015, 2020);
        let p = neighborhood_profile(&z, 2016, &[&e3, &e1, &e2], &t).unwrap();
        assert!((p.vector[0] - 7.0 / 3.0).abs() < 1e-12);
        assert!(neighborhood_profile(&z, 2016, &[], &t).is_none());
    }

    #[test]
    fn openness_window_is_inclusive() {
        let t = table(&[("a", unit(0, 1.0)), ("b", unit(1, 1.0))]);
        let ests = vec![est("1", "Z1", &["a"], 2015, 2016), est("2", "Z1", &["b"], 2017, 2018)];
        let set = profile_all(&ests, &t, &[2016, 2017, 2019]);
        let z = NeighborhoodId::new("Z1").unwrap();
        assert_eq!(set.profiles[&(z.clone(), 2016)].vector, unit(0, 1.0));
        assert_eq!(set.profiles[&(z.clone(), 2017)].vector, unit(1, 1.0));
        assert!(!set.profiles.contains_key(&(z, 2019)));
        assert_eq!(set.exclusions.len(), 1);
    }

    proptest! {
        #[test]
        fn profile_is_order_invariant_and_scale_equivariant(
            picks in proptest::collection::vec(0usize..4, 1..8),
            lambda in 0.1f64..10.0,
        ) {
            let seeds: Vec<(String, Vec<f64>)> = (0..4)
                .map(|k| (format!("c{k}"), (0..15).map(|d| ((k * 7 + d * 3) % 5) as f64 + 0.5).collect()))
                .collect();
            let t = SceneSeedTable::new(15, seeds.into_iter().collect()).unwrap();
            let ests: Vec<Establishment> = picks.iter().enumerate()
                .map(|(i, k)| est(&i.to_string(), "Z1", &[&format!("c{k}")], 2015, 2020)).collect();
            let refs: Vec<&Establishment> = ests.iter().collect();
            let mut rev = refs.clone();
            rev.reverse();
            let z = NeighborhoodId::new("Z1").unwrap();
            let a = neighborhood_profile(&z, 2016, &refs, &t).unwrap();
            let b = neighborhood_profile(&z, 2016, &rev, &t).unwrap();
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let scaled = neighborhood_profile(&z, 2016, &refs, &t.scaled(lambda)).unwrap();
            for (x, y) in a.vector.iter().zip(&scaled.vector) {
                prop_assert!((x * lambda - y).abs() < 1e-9 * (1.0 + y.abs()));
            }
            let other = neighborhood_profile(&z, 2016, &refs[..1], &t).unwrap();
            let other_scaled = neighborhood_profile(&z, 2016, &refs[..1], &t.scaled(lambda)).unwrap();
            let c1 = cosine(&a.vector, &other.vector).unwrap();
            let c2 = cosine(&scaled.vector, &other_scaled.vector).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
        }
    }
}
