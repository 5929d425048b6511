//! Dyadic similarity features, the dyad table the models consume,
//! predictor standardization and the Spearman correlation matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MobilityGraph;
use crate::ingest::{CsvOut, Establishment};
use crate::model::{Composition, CountryMode, NeighborhoodId, PanelDataset};
use crate::scene::SceneProfile;
use crate::stats::{mean, sample_sd, spearman};

/// Mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Haversine distance between (lat, lon) pairs in degrees.
pub fn great_circle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// `1 − d / max(d)` over one scope group; all ones when the max is zero.
pub fn diff_to_similarity(distances: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = distances.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative or NaN distance {bad}")));
    }
    let max = distances.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(vec![1.0; distances.len()]);
    }
    Ok(distances.iter().map(|d| 1.0 - d / max).collect())
}

/// Half L1 distance between two composition share vectors. `None` when
/// either side has no population.
pub fn composition_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "composition vectors differ in length");
    if a.iter().sum::<f64>() <= 0.0 || b.iter().sum::<f64>() <= 0.0 {
        return None;
    }
    Some(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Dense cosine similarity; `None` when either vector is zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Option<f64> {
    assert_eq!(u.len(), v.len());
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    Some((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Sparse category → weight vector.
pub type AmenityVector = BTreeMap<String, f64>;

pub fn sparse_cosine(u: &AmenityVector, v: &AmenityVector) -> Option<f64> {
    let (small, large) = if u.len() <= v.len() { (u, v) } else { (v, u) };
    let dot: f64 = small
        .iter()
        .filter_map(|(k, a)| large.get(k).map(|b| a * b))
        .sum();
    let nu = u.values().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.values().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    Some((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// L1-normalized category frequencies of the establishments open in each
/// year. A multi-category establishment counts once in each category.
pub fn amenity_vectors(
    establishments: &[Establishment],
    years: &[i32],
) -> BTreeMap<(NeighborhoodId, i32), AmenityVector> {
    let mut counts: BTreeMap<(NeighborhoodId, i32), AmenityVector> = BTreeMap::new();
    for e in establishments {
        for &y in years.iter().filter(|y| e.is_open(**y)) {
            let v = counts.entry((e.neighborhood.clone(), y)).or_default();
            for c in &e.categories {
                *v.entry(c.clone()).or_insert(0.0) += 1.0;
            }
        }
    }
    for v in counts.values_mut() {
        let total: f64 = v.values().sum();
        v.values_mut().for_each(|x| *x /= total);
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Geo,
    Income,
    Rent,
    Edu,
    Race,
    Vote,
    Density,
    Amenity,
    Scene,
    Interaction,
}

impl Feature {
    pub const ALL: [Feature; 10] = [
        Feature::Geo,
        Feature::Income,
        Feature::Rent,
        Feature::Edu,
        Feature::Race,
        Feature::Vote,
        Feature::Density,
        Feature::Amenity,
        Feature::Scene,
        Feature::Interaction,
    ];

    /// The nine similarity measures, without the interaction.
    pub const SIMILARITIES: [Feature; 9] = [
        Feature::Geo,
        Feature::Income,
        Feature::Rent,
        Feature::Edu,
        Feature::Race,
        Feature::Vote,
        Feature::Density,
        Feature::Amenity,
        Feature::Scene,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn column(self, mode: CountryMode) -> &'static str {
        match (self, mode) {
            (Feature::Geo, _) => "sim_geo",
            (Feature::Income, _) => "sim_income",
            (Feature::Rent, _) => "sim_rent",
            (Feature::Edu, _) => "sim_edu",
            (Feature::Race, CountryMode::Us) => "sim_race",
            (Feature::Race, CountryMode::Ca) => "sim_vm",
            (Feature::Vote, _) => "sim_vote",
            (Feature::Density, _) => "sim_density",
            (Feature::Amenity, _) => "sim_amenity",
            (Feature::Scene, _) => "sim_scene",
            (Feature::Interaction, _) => "interaction",
        }
    }

    pub fn from_column(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| {
            f.column(CountryMode::Us) == name || f.column(CountryMode::Ca) == name
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadRow {
    /// `n1 < n2` for undirected tables; origin for directed ones.
    pub n1: NeighborhoodId,
    pub n2: NeighborhoodId,
    pub metro: String,
    pub year: i32,
    /// Edge weight (0 only in all-pairs correlation tables).
    pub strength: f64,
    pub features: [f64; 10],
}

impl DyadRow {
    pub fn get(&self, f: Feature) -> f64 {
        self.features[f.index()]
    }

    pub fn set(&mut self, f: Feature, v: f64) {
        self.features[f.index()] = v;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DroppedDyad {
    pub n1: NeighborhoodId,
    pub n2: NeighborhoodId,
    pub year: i32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadTable {
    pub country: CountryMode,
    pub directed: bool,
    pub rows: Vec<DyadRow>,
    pub dropped: Vec<DroppedDyad>,
    pub standardized: bool,
}

impl DyadTable {
    pub fn column(&self, f: Feature) -> Vec<f64> {
        self.rows.iter().map(|r| r.get(f)).collect()
    }

    pub fn strengths(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.strength).collect()
    }

    /// Values of a named column: a feature, `strength` or `year`.
    pub fn named_column(&self, name: &str) -> Option<Vec<f64>> {
        match name {
            "strength" => Some(self.strengths()),
            "year" => Some(self.rows.iter().map(|r| r.year as f64).collect()),
            _ => Feature::from_column(name).map(|f| self.column(f)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceTransform {
    /// `1 − R / max(R)` like every other distance.
    #[default]
    MaxNormalized,
    /// `1 − R`, using the distance's natural [0, 1] bound.
    OneMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DyadScope {
    /// One row per graph edge: the model's observation set.
    #[default]
    EdgesOnly,
    /// Every pair of graph nodes, strength 0 for unconnected pairs. Only
    /// meaningful for correlation summaries.
    AllPairs,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DyadOptions {
    pub race: RaceTransform,
    pub scope: DyadScope,
}

/// Per-neighborhood inputs the features are computed from.
pub struct FeatureSources<'a> {
    pub panel: &'a PanelDataset,
    pub amenity: &'a BTreeMap<(NeighborhoodId, i32), AmenityVector>,
    pub scenes: &'a BTreeMap<(NeighborhoodId, i32), SceneProfile>,
    pub votes: &'a BTreeMap<(NeighborhoodId, i32), f64>,
}

/// Raw distances (before the 1 − d/max transform) and the two cosines.
struct RawDyad {
    row: DyadRow,
    dist: [f64; 7],
}

const DIST_FEATURES: [Feature; 7] = [
    Feature::Geo,
    Feature::Income,
    Feature::Rent,
    Feature::Edu,
    Feature::Race,
    Feature::Vote,
    Feature::Density,
];

fn raw_dyad(
    src: &FeatureSources<'_>,
    n1: &NeighborhoodId,
    n2: &NeighborhoodId,
    metro: &str,
    year: i32,
    strength: f64,
) -> std::result::Result<RawDyad, String> {
    let panel = src.panel;
    let hood = |id: &NeighborhoodId| panel.neighborhood(id).ok_or(format!("unknown neighborhood {id}"));
    let attr = |id: &NeighborhoodId| {
        panel
            .attribute(id, year)
            .ok_or(format!("missing attributes for {id}@{year}"))
    };
    let (h1, h2) = (hood(n1)?, hood(n2)?);
    let (a1, a2) = (attr(n1)?, attr(n2)?);
    let geo = great_circle_km(
        (h1.centroid_lat, h1.centroid_lon),
        (h2.centroid_lat, h2.centroid_lon),
    );
    let race = match (a1.composition, a2.composition) {
        (Composition::RaceShares(s1), Composition::RaceShares(s2)) => {
            if a1.population <= 0.0 || a2.population <= 0.0 {
                return Err("zero population".into());
            }
            composition_distance(&s1, &s2).ok_or("empty race composition")?
        }
        (Composition::VisibleMinority(v1), Composition::VisibleMinority(v2)) => (v1 - v2).abs(),
        _ => return Err("mixed composition kinds".into()),
    };
    let vote = |id: &NeighborhoodId| {
        src.votes
            .get(&(id.clone(), year))
            .copied()
            .ok_or(format!("missing vote share for {id}@{year}"))
    };
    let density = |id: &NeighborhoodId| panel.density(id, year).ok_or(format!("no density for {id}@{year}"));
    let dist = [
        geo,
        (a1.income - a2.income).abs(),
        (a1.rent - a2.rent).abs(),
        (a1.pct_degree - a2.pct_degree).abs(),
        race,
        (vote(n1)? - vote(n2)?).abs(),
        (density(n1)? - density(n2)?).abs(),
    ];
    let amen = |id: &NeighborhoodId| {
        src.amenity
            .get(&(id.clone(), year))
            .ok_or(format!("no open establishments for {id}@{year}"))
    };
    let scene = |id: &NeighborhoodId| {
        src.scenes
            .get(&(id.clone(), year))
            .ok_or(format!("no scene profile for {id}@{year}"))
    };
    let amenity = sparse_cosine(amen(n1)?, amen(n2)?).ok_or("zero amenity vector")?;
    let scene = cosine(&scene(n1)?.vector, &scene(n2)?.vector).ok_or("zero scene vector")?;
    let mut features = [0.0; 10];
    features[Feature::Amenity.index()] = amenity;
    features[Feature::Scene.index()] = scene;
    features[Feature::Interaction.index()] = amenity * scene;
    Ok(RawDyad {
        row: DyadRow {
            n1: n1.clone(),
            n2: n2.clone(),
            metro: metro.to_string(),
            year,
            strength,
            features,
        },
        dist,
    })
}

/// One row per graph edge with all nine similarity features. Distance
/// features become `1 − d / max(d)` within each metro-year group, after
/// dropping dyads with any unresolvable feature. The interaction column
/// holds the raw product until [`standardize`] replaces it.
pub fn build_dyad_table(
    graphs: &[MobilityGraph],
    src: &FeatureSources<'_>,
    options: DyadOptions,
) -> Result<DyadTable> {
    let directed = graphs.first().map(|g| g.directed).unwrap_or(false);
    if graphs.iter().any(|g| g.directed != directed) {
        return Err(Error::InvalidArgument("mixed directed and undirected graphs".into()));
    }
    let mut table = DyadTable {
        country: src.panel.country,
        directed,
        rows: Vec::new(),
        dropped: Vec::new(),
        standardized: false,
    };
    for g in graphs {
        let pairs: Vec<(NeighborhoodId, NeighborhoodId, f64)> = match options.scope {
            DyadScope::EdgesOnly => g
                .edges
                .iter()
                .map(|((a, b), w)| (a.clone(), b.clone(), *w as f64))
                .collect(),
            DyadScope::AllPairs => {
                let nodes: Vec<&NeighborhoodId> = g.nodes.iter().collect();
                let mut v = Vec::new();
                for (i, a) in nodes.iter().enumerate() {
                    for (j, b) in nodes.iter().enumerate() {
                        if i == j || (!g.directed && j < i) {
                            continue;
                        }
                        let w = g.edges.get(&((*a).clone(), (*b).clone())).copied().unwrap_or(0);
                        v.push(((*a).clone(), (*b).clone(), w as f64));
                    }
                }
                v
            }
        };
        let mut group = Vec::with_capacity(pairs.len());
        for (a, b, w) in pairs {
            match raw_dyad(src, &a, &b, &g.metro, g.year, w) {
                Ok(r) => group.push(r),
                Err(reason) => table.dropped.push(DroppedDyad {
                    n1: a,
                    n2: b,
                    year: g.year,
                    reason,
                }),
            }
        }
        if group.is_empty() {
            continue;
        }
        for (k, f) in DIST_FEATURES.iter().enumerate() {
            let d: Vec<f64> = group.iter().map(|r| r.dist[k]).collect();
            let s = if *f == Feature::Race && options.race == RaceTransform::OneMinus {
                d.iter().map(|x| 1.0 - x).collect()
            } else {
                diff_to_similarity(&d)?
            };
            for (r, v) in group.iter_mut().zip(s) {
                r.row.set(*f, v);
            }
        }
        table.rows.extend(group.into_iter().map(|r| r.row));
    }
    if !table.dropped.is_empty() {
        log::warn!("{} dyads dropped for missing features", table.dropped.len());
    }
    table.dropped.sort();
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeScope {
    #[default]
    Global,
    PerMetro,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEntry {
    pub group: String,
    pub feature: Feature,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScalingReport {
    pub entries: Vec<ScaleEntry>,
    pub warnings: Vec<String>,
}

/// z-scores the nine similarity columns within each scope group (sample
/// SD), then sets `interaction = z_scene · z_amenity`. Strength is left
/// alone; zero-variance columns become zeros with a warning.
pub fn standardize(table: &DyadTable, scope: StandardizeScope) -> Result<(DyadTable, ScalingReport)> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        let key = match scope {
            StandardizeScope::Global => "all".to_string(),
            StandardizeScope::PerMetro => r.metro.clone(),
        };
        groups.entry(key).or_default().push(i);
    }
    let mut out = table.clone();
    let mut report = ScalingReport::default();
    for (group, idx) in &groups {
        if idx.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "standardization group `{group}` has fewer than 2 rows"
            )));
        }
        for f in Feature::SIMILARITIES {
            let col: Vec<f64> = idx.iter().map(|&i| table.rows[i].get(f)).collect();
            let m = mean(&col);
            let sd = sample_sd(&col);
            let degenerate = !(sd > 0.0) || sd < 1e-14 * (1.0 + m.abs());
            if degenerate {
                report.warnings.push(format!(
                    "{} has zero variance in group `{group}`; set to 0",
                    f.column(table.country)
                ));
            }
            for &i in idx {
                let v = table.rows[i].get(f);
                out.rows[i].set(f, if degenerate { 0.0 } else { (v - m) / sd });
            }
            report.entries.push(ScaleEntry {
                group: group.clone(),
                feature: f,
                mean: m,
                sd,
            });
        }
    }
    for r in &mut out.rows {
        let v = r.get(Feature::Scene) * r.get(Feature::Amenity);
        r.set(Feature::Interaction, v);
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    out.standardized = true;
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpearmanMatrix {
    pub labels: Vec<String>,
    /// `None` where a column is constant.
    pub rho: Vec<Vec<Option<f64>>>,
}

impl SpearmanMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        self.rho[i][j]
    }
}

/// Tie-corrected Spearman ρ between the nine similarity columns, strength
/// and year, pooled over all rows.
pub fn spearman_matrix(table: &DyadTable) -> Result<SpearmanMatrix> {
    if table.rows.len() < 3 {
        return Err(Error::InvalidArgument("spearman matrix needs at least 3 rows".into()));
    }
    let mut labels: Vec<String> = Feature::SIMILARITIES
        .iter()
        .map(|f| f.column(table.country).to_string())
        .collect();
    labels.push("strength".into());
    labels.push("year".into());
    let cols: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| table.named_column(l).expect("known column"))
        .collect();
    Ok(correlate_columns(labels, &cols))
}

pub fn correlate_columns(labels: Vec<String>, cols: &[Vec<f64>]) -> SpearmanMatrix {
    let k = cols.len();
    let constant: Vec<bool> = cols
        .iter()
        .map(|c| c.iter().all(|v| *v == c[0]))
        .collect();
    let mut rho = vec![vec![None; k]; k];
    for i in 0..k {
        if !constant[i] {
            rho[i][i] = Some(1.0);
        }
        for j in i + 1..k {
            let r = spearman(&cols[i], &cols[j]);
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    SpearmanMatrix { labels, rho }
}

pub fn write_dyads(path: &Path, table: &DyadTable) -> Result<()> {
    let mut header = vec!["metro", "year", "n1", "n2", "strength"];
    header.extend(Feature::ALL.iter().map(|f| f.column(table.country)));
    let mut w = CsvOut::create(path, &header)?;
    for r in &table.rows {
        let mut row = vec![
            r.metro.clone(),
            r.year.to_string(),
            r.n1.to_string(),
            r.n2.to_string(),
            format!("{}", r.strength),
        ];
        row.extend(r.features.iter().map(|v| format!("{v}")));
        w.row(row)?;
    }
    w.finish()
}

pub fn write_spearman(path: &Path, m: &SpearmanMatrix) -> Result<()> {
    let mut w = CsvOut::create(path, &["row", "col", "rho"])?;
    for (i, a) in m.labels.iter().enumerate() {
        for (j, b) in m.labels.iter().enumerate() {
            let v = m.rho[i][j].map(|x| format!("{x}")).unwrap_or_default();
            w.row([a.clone(), b.clone(), v])?;
        }
    }
    w.finish()
}

/// Distinct (neighborhood, year) keys a table depends on.
pub fn referenced_keys(graphs: &[MobilityGraph]) -> Vec<(NeighborhoodId, i32)> {
    let mut keys = BTreeSet::new();
    for g in graphs {
        for (a, b) in g.edges.keys() {
            keys.insert((a.clone(), g.year));
            keys.insert((b.clone(), g.year));
        }
    }
    keys.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttributeRecord, Neighborhood};
    use proptest::prelude::*;

    #[test]
    fn haversine_fixtures() {
        assert_eq!(great_circle_km((10.0, 20.0), (10.0, 20.0)), 0.0);
        let d = great_circle_km((0.0, 0.0), (0.0, 1.0));
        assert!((d - 111.195).abs() < 1e-3, "{d}");
        let anti = great_circle_km((0.0, 0.0), (0.0, 180.0));
        assert!((anti - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 0.01);
        let pole = great_circle_km((90.0, 0.0), (-90.0, 0.0));
        assert!((pole - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 0.01);
    }

    #[test]
    fn similarity_transform() {
        assert_eq!(diff_to_similarity(&[0.0, 4.0, 2.0]).unwrap(), vec![1.0, 0.0, 0.5]);
        assert_eq!(diff_to_similarity(&[0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert!(diff_to_similarity(&[1.0, -0.1]).is_err());
    }

    #[test]
    fn composition_examples() {
        let a = [0.25, 0.25, 0.25, 0.25];
        assert_eq!(composition_distance(&a, &a), Some(0.0));
        assert_eq!(composition_distance(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]), Some(1.0));
        assert_eq!(composition_distance(&[0.5, 0.5, 0.0, 0.0], &a), Some(0.5));
        assert_eq!(composition_distance(&[0.0; 4], &a), None);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), Some(0.0));
        assert!((cosine(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
        let u: AmenityVector = [("a".to_string(), 1.0)].into();
        let v: AmenityVector = [("b".to_string(), 1.0)].into();
        assert_eq!(sparse_cosine(&u, &v), Some(0.0));
    }

    #[test]
    fn standardize_examples() {
        let row = |metro: &str, v: f64| DyadRow {
            n1: NeighborhoodId::new("A").unwrap(),
            n2: NeighborhoodId::new("B").unwrap(),
            metro: metro.into(),
            year: 2018,
            strength: 3.0,
            features: [v, 5.0, v * 2.0, v, v, v, v, v + 1.0, v * v, 0.0],
        };
        let t = DyadTable {
            country: CountryMode::Us,
            directed: false,
            rows: vec![row("M", -1.0), row("M", 0.0), row("M", 1.0)],
            dropped: vec![],
            standardized: false,
        };
        let (s, rep) = standardize(&t, StandardizeScope::Global).unwrap();
        assert_eq!(s.column(Feature::Geo), vec![-1.0, 0.0, 1.0]);
        assert_eq!(s.column(Feature::Income), vec![0.0, 0.0, 0.0]);
        assert_eq!(rep.warnings.len(), 1);
        assert_eq!(s.strengths(), vec![3.0; 3]);
        let inter: Vec<f64> = s.rows.iter().map(|r| r.get(Feature::Scene) * r.get(Feature::Amenity)).collect();
        assert_eq!(s.column(Feature::Interaction), inter);

        let mut two = t.clone();
        two.rows.extend([row("N", 4.0), row("N", 9.0), row("N", 10.0)]);
        let (s, _) = standardize(&two, StandardizeScope::PerMetro).unwrap();
        for metro in ["M", "N"] {
            let col: Vec<f64> = s.rows.iter().filter(|r| r.metro == metro).map(|r| r.get(Feature::Geo)).collect();
            assert!(mean(&col).abs() < 1e-12);
            assert!((sample_sd(&col) - 1.0).abs() < 1e-12);
        }
    }

    /// Naive O(n²) average ranks: rank = #smaller + (#equal + 1) / 2.
    fn naive_ranks(xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|x| {
                let less = xs.iter().filter(|y| *y < x).count() as f64;
                let eq = xs.iter().filter(|y| *y == x).count() as f64;
                less + (eq + 1.0) / 2.0
            })
            .collect()
    }

    fn naive_spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (naive_ranks(a), naive_ranks(b));
        let n = a.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn spearman_matches_naive_oracle_with_ties() {
        let a = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0, 0.5, 7.0, 2.0];
        let b = [3.0, 3.0, 1.0, 4.0, 4.0, 9.0, 0.0, 0.0, 2.0, 3.0];
        let got = correlate_columns(vec!["a".into(), "b".into()], &[a.to_vec(), b.to_vec()]);
        assert!((got.rho[0][1].unwrap() - naive_spearman(&a, &b)).abs() < 1e-12);
        assert_eq!(got.rho[0][0], Some(1.0));
        let rev: Vec<f64> = a.iter().map(|x| -x).collect();
        let m = correlate_columns(vec!["a".into(), "r".into()], &[a.to_vec(), rev]);
        assert!((m.rho[0][1].unwrap() + 1.0).abs() < 1e-12);
        let c = correlate_columns(vec!["a".into(), "c".into()], &[a.to_vec(), vec![1.0; 10]]);
        assert_eq!(c.rho[0][1], None);
        assert_eq!(c.rho[1][1], None);
    }

    // ---- dyad-table oracle -------------------------------------------------

    pub(crate) struct Fixture {
        pub panel: PanelDataset,
        pub amenity: BTreeMap<(NeighborhoodId, i32), AmenityVector>,
        pub scenes: BTreeMap<(NeighborhoodId, i32), SceneProfile>,
        pub votes: BTreeMap<(NeighborhoodId, i32), f64>,
        pub graph: MobilityGraph,
    }

    pub(crate) fn fixture(n: usize, seed: u64) -> Fixture {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut hoods = Vec::new();
        let mut attrs = Vec::new();
        let mut amenity = BTreeMap::new();
        let mut scenes = BTreeMap::new();
        let mut votes = BTreeMap::new();
        for i in 0..n {
            let id = NeighborhoodId::new(&format!("Z{i:03}")).unwrap();
            hoods.push(Neighborhood {
                id: id.clone(),
                metro: "M".into(),
                centroid_lat: 40.0 + rng.random::<f64>(),
                centroid_lon: -75.0 + rng.random::<f64>(),
                land_area: 0.5 + rng.random::<f64>() * 10.0,
            });
            let mut race = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let s: f64 = race.iter().sum::<f64>() * 1.1;
            race.iter_mut().for_each(|r| *r /= s);
            attrs.push(AttributeRecord {
                neighborhood: id.clone(),
                year: 2018,
                income: 20_000.0 + 100_000.0 * rng.random::<f64>(),
                rent: 500.0 + 2000.0 * rng.random::<f64>(),
                pct_degree: rng.random(),
                composition: Composition::RaceShares(race),
                vote_share: None,
                population: 1000.0,
                establishment_count: (rng.random::<f64>() * 200.0).floor(),
            });
            let mut cats: AmenityVector = [("c9".to_string(), 0.1)].into();
            for c in 0..6 {
                if rng.random::<f64>() < 0.6 {
                    cats.insert(format!("c{c}"), rng.random::<f64>());
                }
            }
            let total: f64 = cats.values().sum();
            amenity.insert((id.clone(), 2018), cats.into_iter().map(|(k, v)| (k, v / total)).collect());
            scenes.insert(
                (id.clone(), 2018),
                SceneProfile { neighborhood: id.clone(), year: 2018, vector: (0..15).map(|_| rng.random::<f64>() * 5.0).collect() },
            );
            votes.insert((id, 2018), rng.random());
        }
        let mut graph = MobilityGraph::new("M", 2018, false);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < 0.5 {
                    graph.add(&hoods[i].id, &hoods[j].id, rng.random_range(1..50));
                }
            }
        }
        Fixture { panel: PanelDataset::new(CountryMode::Us, hoods, attrs), amenity, scenes, votes, graph }
    }

    /// Straight-line recomputation of every feature for every edge.
    pub(crate) fn brute_force(fx: &Fixture) -> Vec<(NeighborhoodId, NeighborhoodId, [f64; 9])> {
        let edges: Vec<_> = fx.graph.edges.keys().cloned().collect();
        let raw = |a: &NeighborhoodId, b: &NeighborhoodId| -> [f64; 7] {
            let (ha, hb) = (fx.panel.neighborhood(a).unwrap(), fx.panel.neighborhood(b).unwrap());
            let (aa, ab) = (fx.panel.attribute(a, 2018).unwrap(), fx.panel.attribute(b, 2018).unwrap());
            let (la1, lo1, la2, lo2) = (
                ha.centroid_lat.to_radians(),
                ha.centroid_lon.to_radians(),
                hb.centroid_lat.to_radians(),
                hb.centroid_lon.to_radians(),
            );
            let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
            let geo = 2.0 * 6371.0088 * h.sqrt().asin();
            let (Composition::RaceShares(ra), Composition::RaceShares(rb)) = (aa.composition, ab.composition) else {
                unreachable!()
            };
            let mut tv = 0.0;
            for k in 0..4 {
                tv += (ra[k] - rb[k]).abs();
            }
            [
                geo,
                (aa.income - ab.income).abs(),
                (aa.rent - ab.rent).abs(),
                (aa.pct_degree - ab.pct_degree).abs(),
                tv / 2.0,
                (fx.votes[&(a.clone(), 2018)] - fx.votes[&(b.clone(), 2018)]).abs(),
                (aa.establishment_count / ha.land_area - ab.establishment_count / hb.land_area).abs(),
            ]
        };
        let raws: Vec<[f64; 7]> = edges.iter().map(|(a, b)| raw(a, b)).collect();
        let mut maxes = [0.0f64; 7];
        for r in &raws {
            for k in 0..7 {
                maxes[k] = maxes[k].max(r[k]);
            }
        }
        let cos = |u: Vec<f64>, v: Vec<f64>| {
            let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            dot / (u.iter().map(|a| a * a).sum::<f64>().sqrt() * v.iter().map(|a| a * a).sum::<f64>().sqrt())
        };
        edges
            .iter()
            .zip(&raws)
            .map(|((a, b), r)| {
                let mut out = [0.0; 9];
                for k in 0..7 {
                    out[k] = 1.0 - r[k] / maxes[k];
                }
                let keys: Vec<String> = (0..10).map(|c| format!("c{c}")).collect();
                let dense = |id: &NeighborhoodId| -> Vec<f64> {
                    keys.iter().map(|k| fx.amenity[&(id.clone(), 2018)].get(k).copied().unwrap_or(0.0)).collect()
                };
                out[7] = cos(dense(a), dense(b));
                out[8] = cos(
                    fx.scenes[&(a.clone(), 2018)].vector.clone(),
                    fx.scenes[&(b.clone(), 2018)].vector.clone(),
                );
                (a.clone(), b.clone(), out)
            })
            .collect()
    }

    pub(crate) fn build(fx: &Fixture) -> DyadTable {
        let src = FeatureSources { panel: &fx.panel, amenity: &fx.amenity, scenes: &fx.scenes, votes: &fx.votes };
        build_dyad_table(std::slice::from_ref(&fx.graph), &src, DyadOptions::default()).unwrap()
    }

    #[test]
    fn four_node_table_matches_brute_force() {
        let mut fx = fixture(4, 7);
        let ids: Vec<_> = fx.panel.neighborhoods().iter().map(|h| h.id.clone()).collect();
        fx.graph = MobilityGraph::new("M", 2018, false);
        for i in 0..4 {
            for j in i + 1..4 {
                fx.graph.add(&ids[i], &ids[j], (i + j + 1) as u64);
            }
        }
        let table = build(&fx);
        let oracle = brute_force(&fx);
        assert_eq!(table.rows.len(), 6);
        for (row, (a, b, expect)) in table.rows.iter().zip(&oracle) {
            assert_eq!((&row.n1, &row.n2), (a, b));
            for (k, f) in Feature::SIMILARITIES.iter().enumerate() {
                assert!((row.get(*f) - expect[k]).abs() < 1e-12, "{f:?}");
            }
        }
        assert!(table.rows.iter().any(|r| r.get(Feature::Geo) == 0.0));
    }

    #[test]
    fn identical_neighborhoods_are_fully_similar() {
        let mut fx = fixture(2, 3);
        let ids: Vec<_> = fx.panel.neighborhoods().iter().map(|h| h.id.clone()).collect();
        let (mut h0, a0) = (fx.panel.neighborhoods()[0].clone(), fx.panel.attributes()[0].clone());
        h0.id = ids[1].clone();
        let mut a1 = a0.clone();
        a1.neighborhood = ids[1].clone();
        fx.panel = PanelDataset::new(CountryMode::Us, vec![fx.panel.neighborhoods()[0].clone(), h0], vec![a0, a1]);
        let key0 = (ids[0].clone(), 2018);
        let key1 = (ids[1].clone(), 2018);
        fx.amenity.insert(key1.clone(), fx.amenity[&key0].clone());
        fx.scenes.insert(key1.clone(), fx.scenes[&key0].clone());
        fx.votes.insert(key1, fx.votes[&key0]);
        fx.graph = MobilityGraph::new("M", 2018, false);
        fx.graph.add(&ids[0], &ids[1], 4);
        let t = build(&fx);
        for f in Feature::SIMILARITIES {
            assert!((t.rows[0].get(f) - 1.0).abs() < 1e-12, "{f:?}");
        }
    }

    #[test]
    fn missing_features_drop_the_dyad() {
        let mut fx = fixture(5, 11);
        let victim = fx.panel.neighborhoods()[2].id.clone();
        fx.votes.remove(&(victim.clone(), 2018));
        let t = build(&fx);
        assert!(t.rows.iter().all(|r| r.n1 != victim && r.n2 != victim));
        assert!(!t.dropped.is_empty());
        assert!(t.dropped.iter().all(|d| d.reason.contains("vote")));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn features_bounded_and_symmetric(seed in any::<u64>()) {
            let fx = fixture(8, seed);
            let t = build(&fx);
            for r in &t.rows {
                for f in Feature::SIMILARITIES {
                    let v = r.get(f);
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "{:?} = {}", f, v);
                }
            }
            // scale invariance of the amenity cosine
            let mut scaled = fx.amenity.clone();
            let key = scaled.keys().next().unwrap().clone();
            scaled.get_mut(&key).unwrap().values_mut().for_each(|v| *v *= 7.5);
            let a = &fx.amenity[&key];
            for (k2, b) in &fx.amenity {
                let x = sparse_cosine(a, b).unwrap();
                let y = sparse_cosine(&scaled[&key], b).unwrap();
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((sparse_cosine(b, a).unwrap() - x).abs() < 1e-15, "{:?}", k2);
            }
        }
    }
}
