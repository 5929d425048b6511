//! Moving election results from their source geography (census tracts or
//! precincts) onto neighborhoods.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::NeighborhoodId;
use crate::similarity::great_circle_km;
use crate::stats::pearson;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceUnitResult {
    /// CT or precinct id.
    pub unit_id: String,
    pub party_votes: BTreeMap<String, f64>,
    pub population: f64,
    /// (lat, lon) of the unit centroid, needed by the nearest-unit variant.
    pub centroid: Option<(f64, f64)>,
}

impl SourceUnitResult {
    pub fn total_votes(&self) -> f64 {
        self.party_votes.values().sum()
    }
}

/// One row of the DA → CT → FSA correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitLink {
    pub da_id: String,
    pub ct_id: String,
    pub fsa_id: NeighborhoodId,
    pub da_population: f64,
    /// Single link indicator; rows without it are ignored.
    pub sli: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapFraction {
    pub precinct_id: String,
    pub zip_id: NeighborhoodId,
    /// Share of the precinct's area inside the ZIP.
    pub fraction: f64,
}

pub type PartyShares = BTreeMap<String, f64>;

#[derive(Debug, Clone, Default)]
pub struct Allocation<T> {
    pub shares: BTreeMap<NeighborhoodId, T>,
    pub excluded: Vec<(NeighborhoodId, String)>,
}

/// Population-weighted disaggregation of CT results to FSAs:
/// `V_F(p) = Σ_D (N_D / N_F) V_C(p)`, then `S_F(p) = V_F(p) / Σ_p V_F(p)`.
pub fn population_weighted_shares(
    ct_results: &[SourceUnitResult],
    links: &[UnitLink],
) -> Result<Allocation<PartyShares>> {
    let cts: BTreeMap<&str, &SourceUnitResult> =
        ct_results.iter().map(|c| (c.unit_id.as_str(), c)).collect();

    let mut seen_da: BTreeMap<&str, (&str, &NeighborhoodId)> = BTreeMap::new();
    let mut by_fsa: BTreeMap<&NeighborhoodId, Vec<&UnitLink>> = BTreeMap::new();
    for link in links.iter().filter(|l| l.sli) {
        if let Some((ct, fsa)) = seen_da.insert(&link.da_id, (&link.ct_id, &link.fsa_id)) {
            if ct != link.ct_id || *fsa != link.fsa_id {
                return Err(Error::Data(format!(
                    "DA {} links to more than one CT/FSA",
                    link.da_id
                )));
            }
            continue;
        }
        if !cts.contains_key(link.ct_id.as_str()) {
            return Err(Error::Data(format!(
                "DA {} references unknown CT {}",
                link.da_id, link.ct_id
            )));
        }
        by_fsa.entry(&link.fsa_id).or_default().push(link);
    }

    let mut out = Allocation::default();
    for (fsa, das) in by_fsa {
        let n_f: f64 = das.iter().map(|d| d.da_population).sum();
        if n_f <= 0.0 {
            log::info!("FSA {fsa} has zero linked population; excluded");
            out.excluded.push((fsa.clone(), "zero population".into()));
            continue;
        }
        let mut v_f: PartyShares = BTreeMap::new();
        for da in das {
            let w = da.da_population / n_f;
            for (party, votes) in &cts[da.ct_id.as_str()].party_votes {
                *v_f.entry(party.clone()).or_insert(0.0) += w * votes;
            }
        }
        let total: f64 = v_f.values().sum();
        if total <= 0.0 {
            log::info!("FSA {fsa} has zero votes; excluded");
            out.excluded.push((fsa.clone(), "zero votes".into()));
            continue;
        }
        v_f.values_mut().for_each(|v| *v /= total);
        out.shares.insert(fsa.clone(), v_f);
    }
    Ok(out)
}

/// Raw population-weighted party votes for one FSA, before normalizing.
/// Exposed for checking the aggregation step in isolation.
pub fn population_weighted_votes(
    ct_results: &[SourceUnitResult],
    links: &[UnitLink],
    fsa: &NeighborhoodId,
) -> PartyShares {
    let cts: BTreeMap<&str, &SourceUnitResult> =
        ct_results.iter().map(|c| (c.unit_id.as_str(), c)).collect();
    let das: Vec<&UnitLink> = links.iter().filter(|l| l.sli && &l.fsa_id == fsa).collect();
    let n_f: f64 = das.iter().map(|d| d.da_population).sum();
    let mut v_f = BTreeMap::new();
    if n_f <= 0.0 {
        return v_f;
    }
    for da in das {
        if let Some(ct) = cts.get(da.ct_id.as_str()) {
            for (party, votes) in &ct.party_votes {
                *v_f.entry(party.clone()).or_insert(0.0) += da.da_population / n_f * votes;
            }
        }
    }
    v_f
}

/// Total votes apportioned to each ZIP.
pub fn apportioned_totals(
    precinct_results: &[SourceUnitResult],
    overlaps: &[OverlapFraction],
) -> Result<BTreeMap<NeighborhoodId, f64>> {
    let precincts: BTreeMap<&str, &SourceUnitResult> = precinct_results
        .iter()
        .map(|p| (p.unit_id.as_str(), p))
        .collect();
    let mut out = BTreeMap::new();
    for o in overlaps {
        let p = precincts.get(o.precinct_id.as_str()).ok_or_else(|| {
            Error::Data(format!("overlap references unknown precinct {}", o.precinct_id))
        })?;
        *out.entry(o.zip_id.clone()).or_insert(0.0) += o.fraction * p.total_votes();
    }
    Ok(out)
}

/// Area-weighted apportionment of precinct votes to ZIPs; returns the focal
/// party's share per ZIP.
pub fn area_weighted_shares(
    precinct_results: &[SourceUnitResult],
    overlaps: &[OverlapFraction],
    focal_party: &str,
) -> Result<Allocation<f64>> {
    let precincts: BTreeMap<&str, &SourceUnitResult> = precinct_results
        .iter()
        .map(|p| (p.unit_id.as_str(), p))
        .collect();
    let mut frac_sum: BTreeMap<&str, f64> = BTreeMap::new();
    let mut acc: BTreeMap<&NeighborhoodId, (f64, f64)> = BTreeMap::new();
    for o in overlaps {
        if !(0.0..=1.0).contains(&o.fraction) {
            return Err(Error::Data(format!(
                "overlap fraction {} for precinct {} outside [0,1]",
                o.fraction, o.precinct_id
            )));
        }
        let p = precincts.get(o.precinct_id.as_str()).ok_or_else(|| {
            Error::Data(format!("overlap references unknown precinct {}", o.precinct_id))
        })?;
        *frac_sum.entry(&o.precinct_id).or_insert(0.0) += o.fraction;
        let focal = p.party_votes.get(focal_party).copied().unwrap_or(0.0);
        let e = acc.entry(&o.zip_id).or_insert((0.0, 0.0));
        e.0 += o.fraction * focal;
        e.1 += o.fraction * p.total_votes();
    }
    if let Some((p, s)) = frac_sum.iter().find(|(_, s)| **s > 1.0 + 1e-9) {
        return Err(Error::Data(format!(
            "overlap fractions for precinct {p} sum to {s} > 1"
        )));
    }
    let mut out = Allocation::default();
    for (zip, (focal, total)) in acc {
        if total <= 0.0 {
            log::info!("ZIP {zip} has zero apportioned votes; excluded");
            out.excluded.push((zip.clone(), "zero apportioned votes".into()));
        } else {
            out.shares.insert(zip.clone(), focal / total);
        }
    }
    Ok(out)
}

/// Validation variant: each FSA inherits the party shares of the nearest
/// CT by great-circle distance between centroids. Ties go to the smaller
/// unit id; CTs without a centroid or without votes are skipped.
pub fn nearest_unit_shares(
    ct_results: &[SourceUnitResult],
    fsa_centroids: &BTreeMap<NeighborhoodId, (f64, f64)>,
) -> BTreeMap<NeighborhoodId, PartyShares> {
    let mut cts: Vec<&SourceUnitResult> = ct_results
        .iter()
        .filter(|c| c.centroid.is_some() && c.total_votes() > 0.0)
        .collect();
    cts.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
    let mut out = BTreeMap::new();
    for (fsa, &at) in fsa_centroids {
        let mut best: Option<(f64, &SourceUnitResult)> = None;
        for ct in &cts {
            let d = great_circle_km(at, ct.centroid.unwrap());
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, ct));
            }
        }
        if let Some((_, ct)) = best {
            let total = ct.total_votes();
            out.insert(
                fsa.clone(),
                ct.party_votes.iter().map(|(p, v)| (p.clone(), v / total)).collect(),
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodComparison {
    pub n: usize,
    pub correlation: Option<f64>,
    pub mean_abs_diff: f64,
}

/// Compares two allocations of the focal party's share over common FSAs.
pub fn compare_allocations(
    a: &BTreeMap<NeighborhoodId, PartyShares>,
    b: &BTreeMap<NeighborhoodId, PartyShares>,
    party: &str,
) -> MethodComparison {
    let common: BTreeSet<&NeighborhoodId> = a.keys().filter(|k| b.contains_key(*k)).collect();
    let get = |m: &BTreeMap<NeighborhoodId, PartyShares>, k: &NeighborhoodId| {
        m[k].get(party).copied().unwrap_or(0.0)
    };
    let xs: Vec<f64> = common.iter().map(|k| get(a, k)).collect();
    let ys: Vec<f64> = common.iter().map(|k| get(b, k)).collect();
    let mad = if xs.is_empty() {
        0.0
    } else {
        xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / xs.len() as f64
    };
    MethodComparison {
        n: xs.len(),
        correlation: pearson(&xs, &ys),
        mean_abs_diff: mad,
    }
}

/// The election year nearest to `year`; equidistant candidates resolve to
/// the earlier election.
pub fn nearest_election_year(year: i32, elections: &[i32]) -> Option<i32> {
    elections
        .iter()
        .copied()
        .min_by_key(|e| ((e - year).abs(), *e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(s: &str) -> NeighborhoodId {
        NeighborhoodId::new(s).unwrap()
    }

    fn ct(unit: &str, votes: &[(&str, f64)], centroid: Option<(f64, f64)>) -> SourceUnitResult {
        SourceUnitResult {
            unit_id: unit.into(),
            party_votes: votes.iter().map(|(p, v)| (p.to_string(), *v)).collect(),
            population: 0.0,
            centroid,
        }
    }

    fn link(da: &str, ct: &str, fsa: &str, pop: f64) -> UnitLink {
        UnitLink {
            da_id: da.into(),
            ct_id: ct.into(),
            fsa_id: id(fsa),
            da_population: pop,
            sli: true,
        }
    }

    #[test]
    fn single_da_inherits_ct_share() {
        let cts = [ct("C1", &[("LIB", 30.0), ("CON", 70.0)], None)];
        let out = population_weighted_shares(&cts, &[link("D1", "C1", "A1A", 50.0)]).unwrap();
        assert!((out.shares[&id("A1A")]["LIB"] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_da_weighted_votes() {
        let cts = [
            ct("C1", &[("LIB", 50.0), ("CON", 50.0)], None),
            ct("C2", &[("LIB", 60.0), ("CON", 40.0)], None),
        ];
        let links = [link("D1", "C1", "A1A", 100.0), link("D2", "C2", "A1A", 300.0)];
        let v = population_weighted_votes(&cts, &links, &id("A1A"));
        assert!((v["LIB"] - 57.5).abs() < 1e-12);
        let s = population_weighted_shares(&cts, &links).unwrap();
        assert!((s.shares[&id("A1A")]["LIB"] - 0.575).abs() < 1e-12);
    }

    #[test]
    fn zero_vote_fsa_is_excluded() {
        let cts = [ct("C1", &[("LIB", 0.0)], None)];
        let out = population_weighted_shares(&cts, &[link("D1", "C1", "A1A", 10.0)]).unwrap();
        assert!(out.shares.is_empty());
        assert_eq!(out.excluded.len(), 1);
    }

    #[test]
    fn unknown_ct_and_non_sli_links() {
        let cts = [ct("C1", &[("LIB", 1.0)], None)];
        assert!(population_weighted_shares(&cts, &[link("D1", "C9", "A1A", 10.0)]).is_err());
        let mut l = link("D1", "C9", "A1A", 10.0);
        l.sli = false;
        let out = population_weighted_shares(&cts, &[l]).unwrap();
        assert!(out.shares.is_empty());
    }

    #[test]
    fn area_weighted_examples() {
        let p1 = ct("P1", &[("DEM", 40.0), ("REP", 60.0)], None);
        let p2 = ct("P2", &[("DEM", 80.0), ("REP", 20.0)], None);
        let ov = |p: &str, z: &str, f: f64| OverlapFraction {
            precinct_id: p.into(),
            zip_id: id(z),
            fraction: f,
        };
        let out = area_weighted_shares(std::slice::from_ref(&p1), &[ov("P1", "Z1", 1.0)], "DEM").unwrap();
        assert!((out.shares[&id("Z1")] - 0.4).abs() < 1e-15);

        let out = area_weighted_shares(
            &[p1.clone(), p2.clone()],
            &[ov("P1", "Z1", 1.0), ov("P2", "Z1", 1.0)],
            "DEM",
        )
        .unwrap();
        assert!((out.shares[&id("Z1")] - 0.6).abs() < 1e-15);

        let p30 = ct("P3", &[("DEM", 30.0), ("REP", 70.0)], None);
        let out = area_weighted_shares(
            &[p30, p2],
            &[ov("P3", "Z1", 0.25), ov("P3", "Z2", 0.75), ov("P2", "Z2", 1.0)],
            "DEM",
        )
        .unwrap();
        assert!((out.shares[&id("Z2")] - 102.5 / 175.0).abs() < 1e-15);
        assert!((out.shares[&id("Z1")] - 0.3).abs() < 1e-15);

        assert!(area_weighted_shares(&[p1], &[ov("P1", "Z1", 0.7), ov("P1", "Z2", 0.7)], "DEM").is_err());
    }

    #[test]
    fn nearest_unit_examples() {
        let cts = [ct("C1", &[("LIB", 1.0), ("CON", 3.0)], Some((45.0, -75.0)))];
        let fsas: BTreeMap<_, _> = [(id("A"), (44.0, -70.0)), (id("B"), (50.0, -80.0))].into();
        let out = nearest_unit_shares(&cts, &fsas);
        assert!(out.values().all(|s| s["LIB"] == 0.25));

        let cts = [
            ct("C2", &[("LIB", 1.0)], Some((0.0, 1.0))),
            ct("C1", &[("LIB", 1.0), ("CON", 1.0)], Some((0.0, -1.0))),
        ];
        let fsas: BTreeMap<_, _> = [(id("A"), (0.0, 0.0))].into();
        assert_eq!(nearest_unit_shares(&cts, &fsas)[&id("A")]["LIB"], 0.5);
    }

    #[test]
    fn election_year_matching() {
        assert_eq!(nearest_election_year(2017, &[2016, 2020]), Some(2016));
        assert_eq!(nearest_election_year(2018, &[2016, 2020]), Some(2016));
        assert_eq!(nearest_election_year(2019, &[2016, 2020]), Some(2020));
    }

    proptest! {
        #[test]
        fn shares_sum_to_one_and_split_invariant(
            das in proptest::collection::vec((0usize..3, 0usize..4, 1.0f64..500.0), 1..12),
            votes in proptest::collection::vec((0.0f64..100.0, 1.0f64..100.0), 3),
            split in 0.05f64..0.95,
        ) {
            let cts: Vec<_> = votes.iter().enumerate()
                .map(|(i, (a, b))| ct(&format!("C{i}"), &[("LIB", *a), ("CON", *b)], None)).collect();
            let links: Vec<_> = das.iter().enumerate()
                .map(|(i, (c, f, p))| link(&format!("D{i}"), &format!("C{c}"), &format!("F{f}"), *p)).collect();
            let base = population_weighted_shares(&cts, &links).unwrap();
            for s in base.shares.values() {
                prop_assert!((s.values().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let mut split_links = links.clone();
            let first = split_links[0].clone();
            split_links[0].da_population = first.da_population * split;
            split_links.push(UnitLink { da_id: "SPLIT".into(), da_population: first.da_population * (1.0 - split), ..first });
            let again = population_weighted_shares(&cts, &split_links).unwrap();
            for (k, s) in &base.shares {
                for (p, v) in s {
                    prop_assert!((again.shares[k][p] - v).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn area_apportionment_conserves_votes(
            parts in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 1..4), 1..6),
        ) {
            let mut precincts = Vec::new();
            let mut overlaps = Vec::new();
            let mut grand_total = 0.0;
            for (i, weights) in parts.iter().enumerate() {
                let total_w: f64 = weights.iter().sum();
                let p = ct(&format!("P{i}"), &[("DEM", 10.0 + i as f64), ("REP", 20.0)], None);
                grand_total += p.total_votes();
                for (j, w) in weights.iter().enumerate() {
                    overlaps.push(OverlapFraction { precinct_id: p.unit_id.clone(), zip_id: id(&format!("Z{j}")), fraction: w / total_w });
                }
                precincts.push(p);
            }
            let by_id: BTreeMap<_, _> = precincts.iter().map(|p| (p.unit_id.clone(), p.total_votes())).collect();
            let apportioned: f64 = overlaps.iter().map(|o| o.fraction * by_id[&o.precinct_id]).sum();
            prop_assert!((apportioned - grand_total).abs() < 1e-9 * grand_total);
            let by_zip = apportioned_totals(&precincts, &overlaps).unwrap();
            prop_assert!((by_zip.values().sum::<f64>() - grand_total).abs() < 1e-9 * grand_total);
            prop_assert!(area_weighted_shares(&precincts, &overlaps, "DEM").is_ok());
        }
    }
}
