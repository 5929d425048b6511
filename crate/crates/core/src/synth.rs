//! Synthetic cities and ground-truth mobility counts.
//!
//! Every neighborhood mixes a few latent "types". Category frequencies
//! follow the mixture, and category scene seeds are noisy copies of a
//! per-type center, so amenity and scene similarity end up correlated
//! without being redundant.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MobilityGraph;
use crate::ingest::{self, round_to_multiple, Establishment, RawMove, VisitEvent};
use crate::model::{AttributeRecord, Composition, CountryMode, Neighborhood, NeighborhoodId, PanelDataset};
use crate::scene::{profile_all, SceneProfile, SceneSeedTable};
use crate::similarity::{
    amenity_vectors, build_dyad_table, great_circle_km, standardize, AmenityVector, DyadOptions, DyadTable,
    FeatureSources, StandardizeScope,
};
use crate::votes::{area_weighted_shares, population_weighted_shares, OverlapFraction, SourceUnitResult, UnitLink};

const N_TYPES: usize = 4;
/// Log-SD of neighborhood-specific category tastes.
const TASTE_SD: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub country: CountryMode,
    pub n_metros: usize,
    pub n_neighborhoods_per_metro: usize,
    pub years: Vec<i32>,
    pub n_categories: usize,
    pub scene_dims: usize,
    /// Coefficients by predictor column name.
    pub true_beta: BTreeMap<String, f64>,
    pub theta: f64,
    pub fe_scale: f64,
    /// Constant added to every simulated log-mean.
    pub baseline: f64,
    pub seed: u64,
    pub users_per_metro: usize,
    pub establishments_per_neighborhood: f64,
    /// SD of category seeds around their type center.
    pub scene_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            country: CountryMode::Us,
            n_metros: 2,
            n_neighborhoods_per_metro: 40,
            years: vec![2018, 2019],
            n_categories: 40,
            scene_dims: 15,
            true_beta: default_beta(CountryMode::Us),
            theta: 4.0,
            fe_scale: 0.3,
            baseline: 0.0,
            seed: 20240601,
            users_per_metro: 1500,
            establishments_per_neighborhood: 25.0,
            scene_noise: 1.0,
        }
    }
}

/// geo 0.9, amenity 0.15, scene 0.05, interaction 0.01, every other
/// similarity 0.03.
pub fn default_beta(country: CountryMode) -> BTreeMap<String, f64> {
    use crate::similarity::Feature;
    Feature::ALL
        .iter()
        .map(|f| {
            let b = match f {
                Feature::Geo => 0.9,
                Feature::Amenity => 0.15,
                Feature::Scene => 0.05,
                Feature::Interaction => 0.01,
                _ => 0.03,
            };
            (f.column(country).to_string(), b)
        })
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_metros == 0 || self.n_neighborhoods_per_metro < 2 {
            return bad("need at least one metro with two neighborhoods".into());
        }
        if self.years.is_empty() {
            return bad("no years configured".into());
        }
        if self.n_categories < 2 {
            return bad("need at least two categories".into());
        }
        if !matches!(self.scene_dims, 15 | 16) {
            return bad(format!("scene_dims must be 15 or 16, got {}", self.scene_dims));
        }
        if !(self.theta > 0.0) || !(self.fe_scale >= 0.0) || !(self.scene_noise >= 0.0) {
            return bad("theta must be positive; fe_scale and scene_noise non-negative".into());
        }
        if self.country == CountryMode::Ca && (self.n_metros > 26 || self.n_neighborhoods_per_metro > 260) {
            return bad("Canadian ids support at most 26 metros of 260 FSAs".into());
        }
        if self.country == CountryMode::Us && self.n_neighborhoods_per_metro > 999 {
            return bad("at most 999 ZIPs per metro".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthCity {
    pub config: SynthConfig,
    pub panel: PanelDataset,
    pub establishments: Vec<Establishment>,
    pub seeds: SceneSeedTable,
    pub events: Vec<VisitEvent>,
    pub moves: Vec<RawMove>,
    /// Precinct results (US) or census-tract results (Canada).
    pub units: Vec<SourceUnitResult>,
    pub overlaps: Vec<OverlapFraction>,
    pub links: Vec<UnitLink>,
    pub counties: BTreeMap<NeighborhoodId, String>,
    pub focal_party: String,
    /// Year the election results refer to.
    pub election_year: i32,
}

fn category_name(c: usize) -> String {
    format!("cat_{c:02}")
}

/// Category that no seed covers, to exercise unscored handling.
const UNSCORED_CATEGORY: &str = "misc services";

fn neighborhood_code(country: CountryMode, m: usize, i: usize) -> String {
    match country {
        CountryMode::Us => format!("{:05}", 10_000 + m * 1000 + i + 1),
        CountryMode::Ca => {
            let letters = b"ABCEGHJKLMNPRSTVXYZABCEGHJ";
            format!(
                "{}{}{}",
                letters[m] as char,
                i / 26,
                (b'A' + (i % 26) as u8) as char
            )
        }
    }
}

fn gamma(rng: &mut ChaCha8Rng, shape: f64) -> f64 {
    Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng)
}

fn mix_cosine(a: &[f64], b: &[f64]) -> f64 {
    crate::similarity::cosine(a, b).unwrap_or(0.0)
}

struct Globals {
    category_type: Vec<usize>,
    popularity: Vec<f64>,
    seeds: SceneSeedTable,
}

fn globals(cfg: &SynthConfig) -> Result<Globals> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<Vec<f64>> = (0..N_TYPES)
        .map(|_| (0..cfg.scene_dims).map(|_| rng.random_range(0.5..4.5)).collect())
        .collect();
    let category_type: Vec<usize> = (0..cfg.n_categories).map(|c| c % N_TYPES).collect();
    let popularity: Vec<f64> = (0..cfg.n_categories).map(|_| (normal(&mut rng, 0.5)).exp()).collect();
    let mut seeds = BTreeMap::new();
    for c in 0..cfg.n_categories {
        let v = centers[category_type[c]]
            .iter()
            .map(|x| (x + normal(&mut rng, cfg.scene_noise)).clamp(0.0, 5.0))
            .collect();
        seeds.insert(category_name(c), v);
    }
    Ok(Globals { category_type, popularity, seeds: SceneSeedTable::new(cfg.scene_dims, seeds)? })
}

#[derive(Default)]
struct MetroParts {
    hoods: Vec<Neighborhood>,
    attrs: Vec<AttributeRecord>,
    establishments: Vec<Establishment>,
    events: Vec<VisitEvent>,
    moves: Vec<RawMove>,
    units: Vec<SourceUnitResult>,
    overlaps: Vec<OverlapFraction>,
    links: Vec<UnitLink>,
    counties: Vec<(NeighborhoodId, String)>,
}

fn metro(cfg: &SynthConfig, g: &Globals, m: usize) -> Result<MetroParts> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(m as u64 + 1);
    let n = cfg.n_neighborhoods_per_metro;
    let metro_code = match cfg.country {
        CountryMode::Us => format!("{}", 10_180 + 40 * m),
        CountryMode::Ca => format!("{}", 505 + m),
    };
    let (clat, clon) = (33.0 + 3.0 * m as f64, -110.0 + 6.0 * m as f64);
    let (ymin, ymax) = (
        *cfg.years.iter().min().expect("years"),
        *cfg.years.iter().max().expect("years"),
    );
    let mut out = MetroParts::default();

    // neighborhoods and their type mixtures
    let mut mixes = Vec::with_capacity(n);
    for i in 0..n {
        let id = NeighborhoodId::new(&neighborhood_code(cfg.country, m, i))?;
        out.hoods.push(Neighborhood {
            id: id.clone(),
            metro: metro_code.clone(),
            centroid_lat: clat + rng.random_range(-0.2..0.2),
            centroid_lon: clon + rng.random_range(-0.25..0.25),
            land_area: (1.0 + normal(&mut rng, 0.6)).exp(),
        });
        let dominant = rng.random_range(0..N_TYPES);
        let raw: Vec<f64> = (0..N_TYPES)
            .map(|k| gamma(&mut rng, if k == dominant { 2.5 } else { 0.35 }) + 1e-9)
            .collect();
        let total: f64 = raw.iter().sum();
        mixes.push(raw.into_iter().map(|x| x / total).collect::<Vec<f64>>());
        out.counties.push((id, format!("{metro_code}-C{}", i % 3 + 1)));
    }

    // establishments
    let mut open: Vec<BTreeMap<i32, Vec<usize>>> = vec![BTreeMap::new(); n];
    for i in 0..n {
        let weights: Vec<f64> = (0..cfg.n_categories)
            .map(|c| {
                let t = g.category_type[c];
                g.popularity[c] * (0.03 + mixes[i][t]) * normal(&mut rng, TASTE_SD).exp()
            })
            .collect();
        let pick = WeightedIndex::new(&weights).map_err(|e| Error::Numerical(e.to_string()))?;
        let count = (poisson(&mut rng, cfg.establishments_per_neighborhood) as usize).max(3);
        for j in 0..count {
            let mut cats = BTreeSet::new();
            cats.insert(category_name(pick.sample(&mut rng)));
            if rng.random::<f64>() < 0.3 {
                cats.insert(category_name(pick.sample(&mut rng)));
            }
            if rng.random::<f64>() < 0.04 {
                cats.insert(UNSCORED_CATEGORY.to_string());
            }
            let first = ymin - rng.random_range(0..5);
            let last = if rng.random::<f64>() < 0.1 { first.max(ymin) } else { ymax + rng.random_range(0..3) };
            let idx = out.establishments.len();
            out.establishments.push(Establishment {
                id: format!("E{m}-{i}-{j}"),
                neighborhood: out.hoods[i].id.clone(),
                categories: cats.into_iter().collect(),
                first_review_year: first,
                last_review_year: last,
            });
            for &y in &cfg.years {
                if first <= y && y <= last {
                    open[i].entry(y).or_default().push(idx);
                }
            }
        }
    }

    // attributes
    for i in 0..n {
        let mix = &mixes[i];
        let base_income = (10.9 + 0.5 * mix[0] - 0.3 * mix[2] + normal(&mut rng, 0.25)).exp();
        let mut race: Vec<f64> = (0..5)
            .map(|k| gamma(&mut rng, if k < N_TYPES { 0.5 + 3.0 * mix[k] } else { 0.4 }))
            .collect();
        let total: f64 = race.iter().sum();
        race.iter_mut().for_each(|r| *r /= total);
        let population = (1500.0 + rng.random::<f64>() * 20_000.0).round();
        let vm = (0.1 + 0.6 * mix[1] + 0.1 * rng.random::<f64>()).min(1.0);
        for (t, &year) in cfg.years.iter().enumerate() {
            let income = (base_income * 1.02f64.powi(t as i32) * (1.0 + normal(&mut rng, 0.02))).round();
            let rent = (300.0 + 0.014 * income * (1.0 + normal(&mut rng, 0.08))).round();
            let z = (income.ln() - 10.9) / 0.3 + normal(&mut rng, 0.4);
            let pct_degree = 1.0 / (1.0 + (-(z - 0.3)).exp());
            let composition = match cfg.country {
                CountryMode::Us => Composition::RaceShares([race[0], race[1], race[2], race[3]]),
                CountryMode::Ca => Composition::VisibleMinority(vm),
            };
            out.attrs.push(AttributeRecord {
                neighborhood: out.hoods[i].id.clone(),
                year,
                income,
                rent,
                pct_degree,
                composition,
                vote_share: None,
                population: (population * (1.0 + 0.01 * t as f64)).round(),
                establishment_count: open[i].get(&year).map_or(0, |v| v.len()) as f64,
            });
        }
    }

    // election results on source units
    let parties: &[&str] = match cfg.country {
        CountryMode::Us => &["DEM", "REP"],
        CountryMode::Ca => &["LIB", "CON", "NDP"],
    };
    for i in 0..n {
        let lean = 0.2 + 1.2 * mixes[i][1] - 0.8 * mixes[i][0];
        for k in 0..2 {
            let unit_id = match cfg.country {
                CountryMode::Us => format!("P{m}-{i}-{k}"),
                CountryMode::Ca => format!("CT{m}-{i}-{k}"),
            };
            let total = rng.random_range(300.0..2500.0f64).round();
            let focal = 1.0 / (1.0 + (-(lean + normal(&mut rng, 0.3))).exp());
            let mut votes = BTreeMap::new();
            let rest = parties.len() - 1;
            votes.insert(parties[0].to_string(), (total * focal).round());
            for p in &parties[1..] {
                votes.insert(p.to_string(), (total * (1.0 - focal) / rest as f64).round());
            }
            let h = &out.hoods[i];
            out.units.push(SourceUnitResult {
                unit_id: unit_id.clone(),
                party_votes: votes,
                population: (2000.0 + rng.random::<f64>() * 4000.0).round(),
                centroid: Some((
                    h.centroid_lat + rng.random_range(-0.01..0.01),
                    h.centroid_lon + rng.random_range(-0.01..0.01),
                )),
            });
            let neighbor = out.hoods[(i + 1) % n].id.clone();
            match cfg.country {
                CountryMode::Us => {
                    let inside = if k == 0 { 1.0 } else { 0.8 };
                    out.overlaps.push(OverlapFraction { precinct_id: unit_id.clone(), zip_id: h.id.clone(), fraction: inside });
                    if k == 1 {
                        out.overlaps.push(OverlapFraction { precinct_id: unit_id, zip_id: neighbor, fraction: 0.2 });
                    }
                }
                CountryMode::Ca => {
                    for d in 0..3 {
                        let fsa = if d == 2 && k == 1 { neighbor.clone() } else { h.id.clone() };
                        out.links.push(UnitLink {
                            da_id: format!("DA{m}-{i}-{k}-{d}"),
                            ct_id: unit_id.clone(),
                            fsa_id: fsa,
                            da_population: rng.random_range(200.0..1500.0f64).round(),
                            sli: rng.random::<f64>() > 0.03,
                        });
                    }
                }
            }
        }
    }

    // visit events: gravity with a taste term
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    great_circle_km(
                        (out.hoods[a].centroid_lat, out.hoods[a].centroid_lon),
                        (out.hoods[b].centroid_lat, out.hoods[b].centroid_lon),
                    )
                })
                .collect()
        })
        .collect();
    for u in 0..cfg.users_per_metro {
        let home = rng.random_range(0..n);
        let user = format!("U{m}-{u}");
        for &year in &cfg.years {
            if rng.random::<f64>() > 0.75 {
                continue;
            }
            let weights: Vec<f64> = (0..n)
                .map(|j| {
                    let open_here = open[j].get(&year).map_or(0, |v| v.len()) as f64;
                    (-dist[home][j] / 4.0).exp() * (0.15 + mix_cosine(&mixes[home], &mixes[j])).powi(2) * open_here
                })
                .collect();
            let Ok(pick) = WeightedIndex::new(&weights) else { continue };
            let visits = 1 + poisson(&mut rng, 1.6) as usize;
            for _ in 0..visits {
                let j = pick.sample(&mut rng);
                let choices = &open[j][&year];
                let e = choices[rng.random_range(0..choices.len())];
                let ev = VisitEvent { user_id: user.clone(), establishment_id: out.establishments[e].id.clone(), year };
                if rng.random::<f64>() < 0.02 {
                    out.events.push(ev.clone());
                }
                out.events.push(ev);
            }
        }
    }

    // residential moves, released under the disclosure rules
    for &year in &cfg.years {
        for o in 0..n {
            for d in 0..n {
                if o == d {
                    continue;
                }
                let lambda = 40.0 * (-dist[o][d] / 5.0).exp() * (0.2 + mix_cosine(&mixes[o], &mixes[d]));
                let raw = poisson(&mut rng, lambda) as u64;
                let released = round_to_multiple(raw, 5);
                if released == 0 && raw == 0 {
                    continue;
                }
                out.moves.push(RawMove {
                    origin: out.hoods[o].id.clone(),
                    destination: out.hoods[d].id.clone(),
                    census_year: year,
                    count: released,
                    released_zero: released == 0,
                });
            }
        }
    }
    Ok(out)
}

/// Generates a synthetic city. Metros are generated in parallel from
/// per-metro streams of the master seed.
pub fn generate_city(cfg: &SynthConfig) -> Result<SynthCity> {
    cfg.validate()?;
    let g = globals(cfg)?;
    let parts: Vec<MetroParts> = (0..cfg.n_metros)
        .into_par_iter()
        .map(|m| metro(cfg, &g, m))
        .collect::<Result<_>>()?;
    let mut all = MetroParts::default();
    for p in parts {
        all.hoods.extend(p.hoods);
        all.attrs.extend(p.attrs);
        all.establishments.extend(p.establishments);
        all.events.extend(p.events);
        all.moves.extend(p.moves);
        all.units.extend(p.units);
        all.overlaps.extend(p.overlaps);
        all.links.extend(p.links);
        all.counties.extend(p.counties);
    }
    Ok(SynthCity {
        config: cfg.clone(),
        panel: PanelDataset::new(cfg.country, all.hoods, all.attrs),
        establishments: all.establishments,
        seeds: g.seeds,
        events: all.events,
        moves: all.moves,
        units: all.units,
        overlaps: all.overlaps,
        links: all.links,
        counties: all.counties.into_iter().collect(),
        focal_party: match cfg.country {
            CountryMode::Us => "DEM".into(),
            CountryMode::Ca => "LIB".into(),
        },
        election_year: cfg.years[0],
    })
}

/// File locations written by [`write_city`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPaths {
    pub neighborhoods: PathBuf,
    pub attributes: PathBuf,
    pub establishments: PathBuf,
    pub events: PathBuf,
    pub moves: PathBuf,
    pub scene_seeds: PathBuf,
    pub units: PathBuf,
    pub overlaps: Option<PathBuf>,
    pub links: Option<PathBuf>,
    pub counties: PathBuf,
}

/// Writes the city using exactly the ingest schemas.
pub fn write_city(dir: &Path, city: &SynthCity) -> Result<SynthPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = |name: &str| dir.join(name);
    let paths = SynthPaths {
        neighborhoods: p("neighborhoods.csv"),
        attributes: p("attributes.csv"),
        establishments: p("establishments.csv"),
        events: p("events.csv"),
        moves: p("moves.csv"),
        scene_seeds: p("scene_seeds.csv"),
        units: p("unit_results.csv"),
        overlaps: (city.config.country == CountryMode::Us).then(|| p("overlaps.csv")),
        links: (city.config.country == CountryMode::Ca).then(|| p("links.csv")),
        counties: p("counties.csv"),
    };
    ingest::write_neighborhoods(&paths.neighborhoods, city.panel.neighborhoods())?;
    ingest::write_attributes(&paths.attributes, city.config.country, city.panel.attributes())?;
    ingest::write_establishments(&paths.establishments, &city.establishments)?;
    ingest::write_events(&paths.events, &city.events)?;
    ingest::write_moves(&paths.moves, &city.moves)?;
    ingest::write_scene_seeds(&paths.scene_seeds, &city.seeds)?;
    ingest::write_unit_results(&paths.units, &city.units)?;
    if let Some(o) = &paths.overlaps {
        ingest::write_overlaps(o, &city.overlaps)?;
    }
    if let Some(l) = &paths.links {
        ingest::write_links(l, &city.links)?;
    }
    ingest::write_counties(&paths.counties, &city.counties)?;
    Ok(paths)
}

/// Per-neighborhood inputs of the similarity features.
#[derive(Debug, Clone)]
pub struct CityFeatures {
    pub amenity: BTreeMap<(NeighborhoodId, i32), AmenityVector>,
    pub scenes: BTreeMap<(NeighborhoodId, i32), SceneProfile>,
    pub votes: BTreeMap<(NeighborhoodId, i32), f64>,
}

pub fn city_features(city: &SynthCity) -> Result<CityFeatures> {
    let years = city.panel.years().to_vec();
    let amenity = amenity_vectors(&city.establishments, &years);
    let scenes = profile_all(&city.establishments, &city.seeds, &years).profiles;
    let shares: BTreeMap<NeighborhoodId, f64> = match city.config.country {
        CountryMode::Us => area_weighted_shares(&city.units, &city.overlaps, &city.focal_party)?.shares,
        CountryMode::Ca => population_weighted_shares(&city.units, &city.links)?
            .shares
            .into_iter()
            .map(|(k, v)| {
                let s = v.get(&city.focal_party).copied().unwrap_or(0.0);
                (k, s)
            })
            .collect(),
    };
    let votes = shares
        .iter()
        .flat_map(|(id, s)| years.iter().map(move |y| ((id.clone(), *y), *s)))
        .collect();
    Ok(CityFeatures { amenity, scenes, votes })
}

/// Unit-weight graphs over every within-metro pair, one per metro-year.
pub fn complete_graphs(panel: &PanelDataset) -> Vec<MobilityGraph> {
    let mut by_metro: BTreeMap<&str, Vec<&NeighborhoodId>> = BTreeMap::new();
    for h in panel.neighborhoods() {
        by_metro.entry(h.metro.as_str()).or_default().push(&h.id);
    }
    let mut out = Vec::new();
    for (metro, ids) in by_metro {
        for &year in panel.years() {
            let mut g = MobilityGraph::new(metro, year, false);
            for (i, a) in ids.iter().enumerate() {
                for b in &ids[i + 1..] {
                    g.add(a, b, 1);
                }
            }
            out.push(g);
        }
    }
    out
}

/// Standardized dyad table over all within-metro pairs; the strength
/// column holds placeholder ones until counts are simulated.
pub fn complete_dyad_table(city: &SynthCity, scope: StandardizeScope) -> Result<DyadTable> {
    let f = city_features(city)?;
    let src = FeatureSources { panel: &city.panel, amenity: &f.amenity, scenes: &f.scenes, votes: &f.votes };
    let raw = build_dyad_table(&complete_graphs(&city.panel), &src, DyadOptions::default())?;
    Ok(standardize(&raw, scope)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub true_beta: BTreeMap<String, f64>,
    /// `None` draws Poisson counts (the θ → ∞ limit).
    pub theta: Option<f64>,
    pub fe_scale: f64,
    pub baseline: f64,
}

impl SimParams {
    pub fn from_config(cfg: &SynthConfig) -> Self {
        SimParams { true_beta: cfg.true_beta.clone(), theta: Some(cfg.theta), fe_scale: cfg.fe_scale, baseline: cfg.baseline }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCounts {
    pub counts: Vec<f64>,
    /// Rows whose mean hit the 1e9 cap.
    pub capped: usize,
    /// Zero draws replaced by resampling.
    pub resampled: usize,
}

const LAMBDA_CAP: f64 = 1e9;

/// Draws zero-truncated NB2 counts with
/// `log λ = baseline + α_{n1} + α_{n2} + γ_year + Σ b_k x_k`, where each
/// neighborhood has one α and α, γ ~ N(0, fe_scale²).
pub fn simulate_counts(table: &DyadTable, params: &SimParams, seed: u64) -> Result<SimulatedCounts> {
    if let Some(t) = params.theta {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("theta {t} must be positive")));
        }
    }
    if !(params.fe_scale >= 0.0) {
        return Err(Error::InvalidArgument("fe_scale must be non-negative".into()));
    }
    let cols = params
        .true_beta
        .iter()
        .map(|(name, b)| {
            table
                .named_column(name)
                .filter(|_| name != "strength")
                .map(|c| (c, *b))
                .ok_or_else(|| Error::InvalidArgument(format!("unknown predictor `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fe = Normal::new(0.0, params.fe_scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let ids: BTreeSet<&NeighborhoodId> = table.rows.iter().flat_map(|r| [&r.n1, &r.n2]).collect();
    let alpha: BTreeMap<&NeighborhoodId, f64> = ids.into_iter().map(|id| (id, fe.sample(&mut rng))).collect();
    let years: BTreeSet<i32> = table.rows.iter().map(|r| r.year).collect();
    let gamma_y: BTreeMap<i32, f64> = years.into_iter().map(|y| (y, fe.sample(&mut rng))).collect();
    let mut out = SimulatedCounts { counts: Vec::with_capacity(table.rows.len()), capped: 0, resampled: 0 };
    for (i, r) in table.rows.iter().enumerate() {
        let eta = params.baseline
            + alpha[&r.n1]
            + alpha[&r.n2]
            + gamma_y[&r.year]
            + cols.iter().map(|(c, b)| c[i] * b).sum::<f64>();
        let mut lambda = eta.exp();
        if !(lambda <= LAMBDA_CAP) {
            lambda = LAMBDA_CAP;
            out.capped += 1;
        }
        let mut y = 0.0;
        for attempt in 0..10_000 {
            let rate = match params.theta {
                Some(t) => Gamma::new(t, lambda / t).expect("valid gamma").sample(&mut rng),
                None => lambda,
            };
            y = poisson(&mut rng, rate);
            if y >= 1.0 {
                break;
            }
            if attempt == 9_999 {
                y = 1.0;
            }
            out.resampled += 1;
        }
        out.counts.push(y);
    }
    if out.capped > 0 {
        log::warn!("{} simulated means capped at {LAMBDA_CAP:e}", out.capped);
    }
    Ok(out)
}

/// Copy of `table` with the strength column replaced.
pub fn with_strength(table: &DyadTable, counts: &[f64]) -> DyadTable {
    assert_eq!(counts.len(), table.rows.len());
    let mut t = table.clone();
    for (r, c) in t.rows.iter_mut().zip(counts) {
        r.strength = *c;
    }
    t
}
