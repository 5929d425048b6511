//! Shared domain types: neighborhoods, per-year attributes and the panel
//! that ties them together, plus invariant checking over that panel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ZIP/ZCTA or FSA code. Trimmed and uppercased on construction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NeighborhoodId(String);

impl NeighborhoodId {
    pub fn new(code: &str) -> Result<Self> {
        let code = code.trim();
        if code.is_empty() {
            return Err(Error::InvalidArgument("empty neighborhood id".into()));
        }
        Ok(Self(code.to_uppercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for NeighborhoodId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::new(&s)
    }
}

impl From<NeighborhoodId> for String {
    fn from(id: NeighborhoodId) -> String {
        id.0
    }
}

impl fmt::Display for NeighborhoodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Which national pipeline a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountryMode {
    /// ZIP codes, four race groups.
    Us,
    /// FSAs, visible-minority share.
    Ca,
}

impl CountryMode {
    pub fn unit_name(self) -> &'static str {
        match self {
            CountryMode::Us => "ZIP",
            CountryMode::Ca => "FSA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub id: NeighborhoodId,
    /// CBSA / CMA identifier (or county when aggregating by county).
    pub metro: String,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
    /// km², strictly positive.
    pub land_area: f64,
}

/// Race groups in the order White, Black, Asian, Hispanic.
pub const RACE_GROUPS: [&str; 4] = ["white", "black", "asian", "hispanic"];

/// Population composition; the variant must agree with the dataset's [`CountryMode`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Composition {
    RaceShares([f64; 4]),
    VisibleMinority(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub neighborhood: NeighborhoodId,
    pub year: i32,
    pub income: f64,
    pub rent: f64,
    pub pct_degree: f64,
    pub composition: Composition,
    /// Filled from the vote allocation stage; absent in the attribute files.
    pub vote_share: Option<f64>,
    pub population: f64,
    pub establishment_count: f64,
}

/// Neighborhoods plus their (neighborhood, year) attribute rows.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    pub country: CountryMode,
    neighborhoods: Vec<Neighborhood>,
    attributes: Vec<AttributeRecord>,
    years: Vec<i32>,
    hood_index: BTreeMap<NeighborhoodId, usize>,
    attr_index: BTreeMap<(NeighborhoodId, i32), usize>,
}

impl PanelDataset {
    /// Builds the panel. Duplicate keys are kept in the raw vectors (and
    /// reported by [`validate_panel`]); lookups resolve to the first one.
    pub fn new(
        country: CountryMode,
        mut neighborhoods: Vec<Neighborhood>,
        mut attributes: Vec<AttributeRecord>,
    ) -> Self {
        neighborhoods.sort_by(|a, b| a.id.cmp(&b.id));
        attributes.sort_by(|a, b| (&a.neighborhood, a.year).cmp(&(&b.neighborhood, b.year)));
        let mut hood_index = BTreeMap::new();
        for (i, n) in neighborhoods.iter().enumerate() {
            hood_index.entry(n.id.clone()).or_insert(i);
        }
        let mut attr_index = BTreeMap::new();
        for (i, a) in attributes.iter().enumerate() {
            attr_index.entry((a.neighborhood.clone(), a.year)).or_insert(i);
        }
        let years: BTreeSet<i32> = attributes.iter().map(|a| a.year).collect();
        Self {
            country,
            neighborhoods,
            attributes,
            years: years.into_iter().collect(),
            hood_index,
            attr_index,
        }
    }

    pub fn neighborhoods(&self) -> &[Neighborhood] {
        &self.neighborhoods
    }

    pub fn attributes(&self) -> &[AttributeRecord] {
        &self.attributes
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn neighborhood(&self, id: &NeighborhoodId) -> Option<&Neighborhood> {
        self.hood_index.get(id).map(|&i| &self.neighborhoods[i])
    }

    pub fn attribute(&self, id: &NeighborhoodId, year: i32) -> Option<&AttributeRecord> {
        self.attr_index
            .get(&(id.clone(), year))
            .map(|&i| &self.attributes[i])
    }

    /// Sets `vote_share` on every matching attribute row; returns how many were set.
    pub fn attach_vote_shares(&mut self, shares: &BTreeMap<(NeighborhoodId, i32), f64>) -> usize {
        let mut set = 0;
        for a in &mut self.attributes {
            if let Some(&s) = shares.get(&(a.neighborhood.clone(), a.year)) {
                a.vote_share = Some(s);
                set += 1;
            }
        }
        set
    }

    /// Replaces each neighborhood's metro with the mapped value (county mode).
    pub fn regroup(&mut self, grouping: &BTreeMap<NeighborhoodId, String>) -> Result<()> {
        for n in &mut self.neighborhoods {
            match grouping.get(&n.id) {
                Some(g) => n.metro = g.clone(),
                None => {
                    return Err(Error::Data(format!(
                        "neighborhood {} has no entry in the grouping table",
                        n.id
                    )))
                }
            }
        }
        Ok(())
    }

    /// Establishments per km² for (neighborhood, year).
    pub fn density(&self, id: &NeighborhoodId, year: i32) -> Option<f64> {
        let n = self.neighborhood(id)?;
        let a = self.attribute(id, year)?;
        let d = a.establishment_count / n.land_area;
        d.is_finite().then_some(d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    /// `neighborhood` or `neighborhood@year`.
    pub key: String,
    pub rule: &'static str,
    pub message: String,
}

/// Checks every type invariant of the panel. An empty report means the
/// panel is clean.
pub fn validate_panel(panel: &PanelDataset) -> Vec<Violation> {
    validate_panel_with_refs(panel, &[])
}

/// Like [`validate_panel`], additionally requiring an attribute row for each
/// referenced (neighborhood, year) key, e.g. the endpoints of a dyad table.
pub fn validate_panel_with_refs(
    panel: &PanelDataset,
    refs: &[(NeighborhoodId, i32)],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |key: String, rule: &'static str, message: String| {
        out.push(Violation { key, rule, message })
    };

    let mut seen = BTreeSet::new();
    for n in &panel.neighborhoods {
        let key = n.id.to_string();
        if !seen.insert(&n.id) {
            push(key.clone(), "duplicate key", "neighborhood listed more than once".into());
        }
        if n.metro.trim().is_empty() {
            push(key.clone(), "metro", "neighborhood has no metro".into());
        }
        if !(-90.0..=90.0).contains(&n.centroid_lat) {
            push(key.clone(), "latitude range", format!("lat {} outside [-90, 90]", n.centroid_lat));
        }
        if !(-180.0..=180.0).contains(&n.centroid_lon) {
            push(key.clone(), "longitude range", format!("lon {} outside [-180, 180]", n.centroid_lon));
        }
        if !(n.land_area > 0.0 && n.land_area.is_finite()) {
            push(key, "positive area", format!("land area {} must be > 0", n.land_area));
        }
    }

    let mut seen_attr = BTreeSet::new();
    for a in &panel.attributes {
        let key = format!("{}@{}", a.neighborhood, a.year);
        if !seen_attr.insert((&a.neighborhood, a.year)) {
            push(key.clone(), "duplicate key", "attribute row listed more than once".into());
        }
        if panel.neighborhood(&a.neighborhood).is_none() {
            push(key.clone(), "unknown neighborhood", "attribute row for unlisted neighborhood".into());
        }
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !nonneg(a.income) {
            push(key.clone(), "income >= 0", format!("income {}", a.income));
        }
        if !nonneg(a.rent) {
            push(key.clone(), "rent >= 0", format!("rent {}", a.rent));
        }
        if !unit(a.pct_degree) {
            push(key.clone(), "pct_degree in [0,1]", format!("pct_degree {}", a.pct_degree));
        }
        if !nonneg(a.population) {
            push(key.clone(), "population >= 0", format!("population {}", a.population));
        }
        if !nonneg(a.establishment_count) {
            push(
                key.clone(),
                "establishment_count >= 0",
                format!("establishment_count {}", a.establishment_count),
            );
        }
        if let Some(v) = a.vote_share {
            if !unit(v) {
                push(key.clone(), "vote_share in [0,1]", format!("vote_share {v}"));
            }
        }
        match (panel.country, a.composition) {
            (CountryMode::Us, Composition::RaceShares(s)) => {
                if let Some(bad) = s.iter().find(|v| !unit(**v)) {
                    push(key.clone(), "race share in [0,1]", format!("race share {bad}"));
                }
            }
            (CountryMode::Ca, Composition::VisibleMinority(v)) => {
                if !unit(v) {
                    push(key.clone(), "vm_share in [0,1]", format!("vm_share {v}"));
                }
            }
            (mode, _) => push(
                key.clone(),
                "country mode",
                format!("composition does not match country mode {mode:?}"),
            ),
        }
        if let Some(n) = panel.neighborhood(&a.neighborhood) {
            if !(a.establishment_count / n.land_area).is_finite() {
                push(key, "finite density", "establishment density is not finite".into());
            }
        }
    }

    let mut missing = BTreeSet::new();
    for (id, year) in refs {
        if panel.attribute(id, *year).is_none() && missing.insert((id, *year)) {
            push(
                format!("{id}@{year}"),
                "missing attribute row",
                "referenced (neighborhood, year) has no attribute row".into(),
            );
        }
    }

    out.sort();
    out
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn id_is_normalized() {
        assert_eq!(NeighborhoodId::new(" m5v ").unwrap().as_str(), "M5V");
        assert!(NeighborhoodId::new("   ").is_err());
    }

    #[test]
    fn clean_panel_has_empty_report() {
        assert!(validate_panel(&two_hood_panel()).is_empty());
    }

    #[test]
    fn degree_out_of_range_is_reported() {
        let mut bad = us_attr("10002", 2018);
        bad.pct_degree = 1.3;
        let panel = PanelDataset::new(
            CountryMode::Us,
            vec![hood("10001", "M1", 40.7, -74.0), hood("10002", "M1", 40.71, -73.99)],
            vec![us_attr("10001", 2018), bad],
        );
        let report = validate_panel(&panel);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].key, "10002@2018");
        assert_eq!(report[0].rule, "pct_degree in [0,1]");
    }

    #[test]
    fn missing_referenced_row_is_reported() {
        let panel = two_hood_panel();
        let refs = vec![(id("10001"), 2018), (id("10002"), 2006)];
        let report = validate_panel_with_refs(&panel, &refs);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].rule, "missing attribute row");
        assert_eq!(report[0].key, "10002@2006");
    }

    #[test]
    fn duplicates_and_mode_mismatch() {
        let mut ca = us_attr("10001", 2018);
        ca.composition = Composition::VisibleMinority(0.3);
        let panel = PanelDataset::new(
            CountryMode::Us,
            vec![hood("10001", "M1", 40.7, -74.0), hood("10001", "M1", 40.7, -74.0)],
            vec![us_attr("10001", 2018), ca],
        );
        let rules: Vec<_> = validate_panel(&panel).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&"duplicate key"));
        assert!(rules.contains(&"country mode"));
    }

    #[test]
    fn validation_is_idempotent() {
        let mut bad = us_attr("10002", 2018);
        bad.rent = -3.0;
        bad.income = f64::NAN;
        let panel = PanelDataset::new(
            CountryMode::Us,
            vec![hood("10001", "M1", 95.0, -74.0), hood("10002", "", 40.71, -73.99)],
            vec![us_attr("10001", 2018), bad],
        );
        assert_eq!(validate_panel(&panel), validate_panel(&panel));
        assert_eq!(validate_panel(&panel).len(), 4);
    }
}
