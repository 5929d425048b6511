//! CSV loaders and writers for every external file, plus the Canadian
//! disclosure rules applied to released move counts.
//!
//! Loaders locate columns by header name and report problems with file,
//! line and column. Writers emit the canonical column order with LF line
//! endings, so a conformant file survives a parse/serialize round trip
//! byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, FilePos, Result};
use crate::model::{
    AttributeRecord, Composition, CountryMode, Neighborhood, NeighborhoodId,
};
use crate::scene::{normalize_category, SceneSeedTable};
use crate::votes::{OverlapFraction, SourceUnitResult, UnitLink};

pub const EVENTS_HEADER: &[&str] = &["user_id", "establishment_id", "year"];
pub const ESTABLISHMENTS_HEADER: &[&str] =
    &["id", "neighborhood", "categories", "first_review_year", "last_review_year"];
pub const MOVES_HEADER: &[&str] = &["origin", "destination", "census_year", "count", "released_zero"];
pub const ATTRIBUTES_US_HEADER: &[&str] = &[
    "neighborhood",
    "year",
    "income",
    "rent",
    "pct_degree",
    "share_white",
    "share_black",
    "share_asian",
    "share_hispanic",
    "population",
    "establishment_count",
];
pub const ATTRIBUTES_CA_HEADER: &[&str] = &[
    "neighborhood",
    "year",
    "income",
    "rent",
    "pct_degree",
    "vm_share",
    "population",
    "establishment_count",
];
pub const NEIGHBORHOODS_HEADER: &[&str] = &["id", "metro", "lat", "lon", "area_km2"];
pub const UNIT_RESULTS_HEADER: &[&str] = &["unit_id", "party", "votes", "population", "lat", "lon"];
pub const LINKS_HEADER: &[&str] = &["da_id", "ct_id", "fsa_id", "da_population", "sli"];
pub const OVERLAPS_HEADER: &[&str] = &["precinct_id", "zip_id", "fraction"];
pub const COUNTIES_HEADER: &[&str] = &["id", "county"];

/// Category tags dropped at ingest unless overridden.
pub const DEFAULT_STOPLIST: &[&str] = &["establishment", "point of interest"];

/// One review: a user visiting an establishment in a year.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VisitEvent {
    pub user_id: String,
    pub establishment_id: String,
    pub year: i32,
}

#[derive(Debug, Clone, Default)]
pub struct EventLoad {
    /// Sorted canonically.
    pub events: Vec<VisitEvent>,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Establishment {
    pub id: String,
    pub neighborhood: NeighborhoodId,
    /// Normalized, generic tags removed, never empty.
    pub categories: Vec<String>,
    pub first_review_year: i32,
    pub last_review_year: i32,
}

impl Establishment {
    pub fn is_open(&self, year: i32) -> bool {
        self.first_review_year <= year && year <= self.last_review_year
    }
}

/// A released move count before disclosure handling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMove {
    pub origin: NeighborhoodId,
    pub destination: NeighborhoodId,
    pub census_year: i32,
    pub count: u64,
    pub released_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MoveRecord {
    pub origin: NeighborhoodId,
    pub destination: NeighborhoodId,
    pub census_year: i32,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisclosurePolicy {
    pub rounding_base: u64,
    pub zero_maps_to: u64,
    pub min_respondents: u64,
}

impl Default for DisclosurePolicy {
    fn default() -> Self {
        Self {
            rounding_base: 5,
            zero_maps_to: 3,
            min_respondents: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundingMode {
    /// Non-conformant counts are an error.
    #[default]
    Strict,
    /// Non-conformant counts snap to the nearest multiple, ties upward.
    Repair,
}

#[derive(Debug, Clone, Default)]
pub struct DisclosureOutcome {
    pub moves: Vec<MoveRecord>,
    /// True zeros (not released zeros): no flow, nothing to emit.
    pub dropped_true_zero: usize,
    pub dropped_low_respondents: usize,
    pub repaired: usize,
}

/// Applies the disclosure rules to raw released counts.
///
/// `respondents`, when given, maps each neighborhood to its respondent count;
/// moves touching a neighborhood below `min_respondents` (or absent from the
/// map) are dropped.
pub fn apply_disclosure(
    raw: &[RawMove],
    policy: &DisclosurePolicy,
    mode: RoundingMode,
    respondents: Option<&BTreeMap<NeighborhoodId, u64>>,
) -> Result<DisclosureOutcome> {
    if policy.rounding_base < 1 || policy.zero_maps_to < 1 {
        return Err(Error::InvalidArgument(
            "rounding_base and zero_maps_to must be >= 1".into(),
        ));
    }
    let eligible = |id: &NeighborhoodId| match respondents {
        None => true,
        Some(map) => map.get(id).is_some_and(|&n| n >= policy.min_respondents),
    };
    let mut out = DisclosureOutcome::default();
    for m in raw {
        if !eligible(&m.origin) || !eligible(&m.destination) {
            out.dropped_low_respondents += 1;
            continue;
        }
        let count = if m.count == 0 {
            if !m.released_zero {
                out.dropped_true_zero += 1;
                continue;
            }
            policy.zero_maps_to
        } else if m.count % policy.rounding_base == 0 {
            m.count
        } else {
            match mode {
                RoundingMode::Strict => {
                    return Err(Error::Data(format!(
                        "move {}->{} ({}) count {} is not a multiple of {}",
                        m.origin, m.destination, m.census_year, m.count, policy.rounding_base
                    )))
                }
                RoundingMode::Repair => {
                    out.repaired += 1;
                    let snapped = round_to_multiple(m.count, policy.rounding_base);
                    if snapped == 0 {
                        policy.zero_maps_to
                    } else {
                        snapped
                    }
                }
            }
        };
        out.moves.push(MoveRecord {
            origin: m.origin.clone(),
            destination: m.destination.clone(),
            census_year: m.census_year,
            count,
        });
    }
    out.moves.sort();
    Ok(out)
}

/// Nearest multiple of `base`, ties rounding up.
pub fn round_to_multiple(value: u64, base: u64) -> u64 {
    let lower = value - value % base;
    let rem = value - lower;
    if 2 * rem >= base {
        lower + base
    } else {
        lower
    }
}

// --------------------------------------------------------------------------
// reading

struct Sheet {
    file: std::path::PathBuf,
    columns: BTreeMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Sheet {
    fn open(path: &Path, required: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(file);
        let pos = |line: u64, column: Option<&str>| FilePos {
            file: path.to_path_buf(),
            line,
            column: column.map(str::to_string),
        };
        let headers = rdr
            .headers()
            .map_err(|e| Error::Schema {
                pos: pos(1, None),
                message: e.to_string(),
            })?
            .clone();
        let columns: BTreeMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        for col in required {
            if !columns.contains_key(*col) {
                return Err(Error::Schema {
                    pos: pos(1, Some(col)),
                    message: format!("missing column `{col}`"),
                });
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::Parse {
                    pos: pos(line, None),
                    message: e.to_string(),
                }
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != headers.len() {
                return Err(Error::Schema {
                    pos: pos(line, None),
                    message: format!("expected {} fields, found {}", headers.len(), rec.len()),
                });
            }
            rows.push((line, rec));
        }
        Ok(Self {
            file: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn pos(&self, line: u64, column: &str) -> FilePos {
        FilePos {
            file: self.file.clone(),
            line,
            column: Some(column.to_string()),
        }
    }

    fn raw<'a>(&self, rec: &'a csv::StringRecord, column: &str) -> &'a str {
        rec.get(self.columns[column]).unwrap_or("").trim()
    }

    fn text(&self, line: u64, rec: &csv::StringRecord, column: &str) -> Result<String> {
        let v = self.raw(rec, column);
        if v.is_empty() {
            return Err(Error::Parse {
                pos: self.pos(line, column),
                message: "empty value".into(),
            });
        }
        Ok(v.to_string())
    }

    fn id(&self, line: u64, rec: &csv::StringRecord, column: &str) -> Result<NeighborhoodId> {
        NeighborhoodId::new(self.raw(rec, column)).map_err(|e| Error::Parse {
            pos: self.pos(line, column),
            message: e.to_string(),
        })
    }

    fn parse<T: std::str::FromStr>(
        &self,
        line: u64,
        rec: &csv::StringRecord,
        column: &str,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(rec, column);
        v.parse::<T>().map_err(|e| Error::Parse {
            pos: self.pos(line, column),
            message: format!("cannot parse `{v}`: {e}"),
        })
    }

    fn real(&self, line: u64, rec: &csv::StringRecord, column: &str) -> Result<f64> {
        let v: f64 = self.parse(line, rec, column)?;
        if !v.is_finite() {
            return Err(Error::Parse {
                pos: self.pos(line, column),
                message: format!("non-finite value {v}"),
            });
        }
        Ok(v)
    }

    fn flag(&self, line: u64, rec: &csv::StringRecord, column: &str) -> Result<bool> {
        match self.raw(rec, column) {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Parse {
                pos: self.pos(line, column),
                message: format!("expected 0 or 1, found `{other}`"),
            }),
        }
    }

    fn data_error(&self, line: u64, column: &str, message: String) -> Error {
        Error::Parse {
            pos: self.pos(line, column),
            message,
        }
    }
}

pub fn load_neighborhoods(path: &Path) -> Result<Vec<Neighborhood>> {
    let sheet = Sheet::open(path, NEIGHBORHOODS_HEADER)?;
    let mut out = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let n = Neighborhood {
            id: sheet.id(line, rec, "id")?,
            metro: sheet.text(line, rec, "metro")?,
            centroid_lat: sheet.real(line, rec, "lat")?,
            centroid_lon: sheet.real(line, rec, "lon")?,
            land_area: sheet.real(line, rec, "area_km2")?,
        };
        if !(-90.0..=90.0).contains(&n.centroid_lat) {
            return Err(sheet.data_error(line, "lat", "latitude outside [-90, 90]".into()));
        }
        if !(-180.0..=180.0).contains(&n.centroid_lon) {
            return Err(sheet.data_error(line, "lon", "longitude outside [-180, 180]".into()));
        }
        if n.land_area <= 0.0 {
            return Err(sheet.data_error(line, "area_km2", "area must be > 0".into()));
        }
        out.push(n);
    }
    Ok(out)
}

/// Optional neighborhood → county table used when grouping by county.
pub fn load_counties(path: &Path) -> Result<BTreeMap<NeighborhoodId, String>> {
    let sheet = Sheet::open(path, COUNTIES_HEADER)?;
    let mut out = BTreeMap::new();
    for (line, rec) in &sheet.rows {
        out.insert(sheet.id(*line, rec, "id")?, sheet.text(*line, rec, "county")?);
    }
    Ok(out)
}

/// Loads review events, dropping exact duplicates. An optional `text_hash`
/// column, when present, is part of the duplicate key.
pub fn load_events(path: &Path, years: std::ops::RangeInclusive<i32>) -> Result<EventLoad> {
    let sheet = Sheet::open(path, EVENTS_HEADER)?;
    let has_hash = sheet.columns.contains_key("text_hash");
    let mut seen = BTreeSet::new();
    let mut load = EventLoad::default();
    for (line, rec) in &sheet.rows {
        let line = *line;
        let event = VisitEvent {
            user_id: sheet.text(line, rec, "user_id")?,
            establishment_id: sheet.text(line, rec, "establishment_id")?,
            year: sheet.parse(line, rec, "year")?,
        };
        if !years.contains(&event.year) {
            return Err(sheet.data_error(
                line,
                "year",
                format!("year {} outside {}..={}", event.year, years.start(), years.end()),
            ));
        }
        let hash = if has_hash {
            sheet.raw(rec, "text_hash").to_string()
        } else {
            String::new()
        };
        if seen.insert((event.clone(), hash)) {
            load.events.push(event);
        } else {
            load.duplicates += 1;
        }
    }
    load.events.sort();
    Ok(load)
}

pub fn load_establishments(path: &Path, stoplist: &[&str]) -> Result<Vec<Establishment>> {
    let sheet = Sheet::open(path, ESTABLISHMENTS_HEADER)?;
    let stop: BTreeSet<String> = stoplist.iter().map(|s| normalize_category(s)).collect();
    let mut out = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let mut categories: Vec<String> = sheet
            .raw(rec, "categories")
            .split(';')
            .map(normalize_category)
            .filter(|c| !c.is_empty() && !stop.contains(c))
            .collect();
        categories.dedup();
        if categories.is_empty() {
            return Err(sheet.data_error(
                line,
                "categories",
                "no categories left after dropping generic tags".into(),
            ));
        }
        let e = Establishment {
            id: sheet.text(line, rec, "id")?,
            neighborhood: sheet.id(line, rec, "neighborhood")?,
            categories,
            first_review_year: sheet.parse(line, rec, "first_review_year")?,
            last_review_year: sheet.parse(line, rec, "last_review_year")?,
        };
        if e.first_review_year > e.last_review_year {
            return Err(sheet.data_error(
                line,
                "last_review_year",
                "last review year precedes first review year".into(),
            ));
        }
        out.push(e);
    }
    Ok(out)
}

pub fn load_moves(path: &Path) -> Result<Vec<RawMove>> {
    let sheet = Sheet::open(path, MOVES_HEADER)?;
    let mut out = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        out.push(RawMove {
            origin: sheet.id(line, rec, "origin")?,
            destination: sheet.id(line, rec, "destination")?,
            census_year: sheet.parse(line, rec, "census_year")?,
            count: sheet.parse(line, rec, "count")?,
            released_zero: sheet.flag(line, rec, "released_zero")?,
        });
    }
    Ok(out)
}

/// Loads the attribute file for `mode`. US race columns may hold shares or
/// counts; counts (any value above 1) are divided by population, or by
/// their sum when population is zero.
pub fn load_attributes(
    path: &Path,
    mode: CountryMode,
    known: &BTreeSet<NeighborhoodId>,
) -> Result<Vec<AttributeRecord>> {
    let header = match mode {
        CountryMode::Us => ATTRIBUTES_US_HEADER,
        CountryMode::Ca => ATTRIBUTES_CA_HEADER,
    };
    let sheet = Sheet::open(path, header)?;
    let mut out = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let neighborhood = sheet.id(line, rec, "neighborhood")?;
        if !known.contains(&neighborhood) {
            return Err(sheet.data_error(
                line,
                "neighborhood",
                format!("unknown neighborhood id {neighborhood}"),
            ));
        }
        let nonneg = |col: &str| -> Result<f64> {
            let v = sheet.real(line, rec, col)?;
            if v < 0.0 {
                return Err(sheet.data_error(line, col, format!("negative value {v}")));
            }
            Ok(v)
        };
        let population = nonneg("population")?;
        let composition = match mode {
            CountryMode::Us => {
                let mut s = [0.0; 4];
                for (slot, col) in s.iter_mut().zip(&header[5..9]) {
                    *slot = nonneg(col)?;
                }
                if s.iter().any(|&v| v > 1.0) {
                    let total = s.iter().sum::<f64>();
                    let denom = if population > 0.0 { population.max(total) } else { total };
                    if denom > 0.0 {
                        s.iter_mut().for_each(|v| *v /= denom);
                    }
                }
                let sum: f64 = s.iter().sum();
                if sum > 1.0 + 1e-9 {
                    return Err(sheet.data_error(
                        line,
                        "share_white",
                        format!("race shares sum to {sum} > 1"),
                    ));
                }
                Composition::RaceShares(s)
            }
            CountryMode::Ca => {
                let v = nonneg("vm_share")?;
                if v > 1.0 {
                    return Err(sheet.data_error(line, "vm_share", format!("vm_share {v} > 1")));
                }
                Composition::VisibleMinority(v)
            }
        };
        let pct_degree = nonneg("pct_degree")?;
        if pct_degree > 1.0 {
            return Err(sheet.data_error(line, "pct_degree", format!("pct_degree {pct_degree} > 1")));
        }
        out.push(AttributeRecord {
            neighborhood,
            year: sheet.parse(line, rec, "year")?,
            income: nonneg("income")?,
            rent: nonneg("rent")?,
            pct_degree,
            composition,
            vote_share: None,
            population,
            establishment_count: nonneg("establishment_count")?,
        });
    }
    Ok(out)
}

/// Loads `category,d1..dD`. D is fixed by the first row and must be 15 or 16.
pub fn load_scene_seeds(path: &Path) -> Result<SceneSeedTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let pos = |line: u64, column: Option<&str>| FilePos {
        file: path.to_path_buf(),
        line,
        column: column.map(str::to_string),
    };
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema {
            pos: pos(1, None),
            message: e.to_string(),
        })?
        .clone();
    if headers.get(0).map(str::trim) != Some("category") {
        return Err(Error::Schema {
            pos: pos(1, Some("category")),
            message: "first column must be `category`".into(),
        });
    }
    let mut dims: Option<usize> = None;
    let mut seeds = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            pos: pos(e.position().map(|p| p.line()).unwrap_or(0), None),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let d = rec.len().saturating_sub(1);
        match dims {
            None => {
                if d != 15 && d != 16 {
                    return Err(Error::Schema {
                        pos: pos(line, None),
                        message: format!("expected 15 or 16 scene scores, found {d}"),
                    });
                }
                dims = Some(d);
            }
            Some(expected) if expected != d => {
                return Err(Error::Schema {
                    pos: pos(line, None),
                    message: format!("row has {d} scene scores, earlier rows have {expected}"),
                })
            }
            Some(_) => {}
        }
        let category = normalize_category(&rec[0]);
        let mut v = Vec::with_capacity(d);
        for (k, field) in rec.iter().skip(1).enumerate() {
            let col = format!("d{}", k + 1);
            let x: f64 = field.trim().parse().map_err(|e| Error::Parse {
                pos: pos(line, Some(&col)),
                message: format!("cannot parse `{field}`: {e}"),
            })?;
            v.push(x);
        }
        seeds.insert(category, v);
    }
    let dims = dims.ok_or_else(|| Error::Schema {
        pos: pos(1, None),
        message: "scene seed table is empty".into(),
    })?;
    if headers.len() != dims + 1 {
        return Err(Error::Schema {
            pos: pos(1, None),
            message: format!("header has {} score columns, rows have {dims}", headers.len() - 1),
        });
    }
    SceneSeedTable::new(dims, seeds)
}

pub fn load_unit_results(path: &Path) -> Result<Vec<SourceUnitResult>> {
    let sheet = Sheet::open(path, UNIT_RESULTS_HEADER)?;
    let mut by_unit: BTreeMap<String, SourceUnitResult> = BTreeMap::new();
    for (line, rec) in &sheet.rows {
        let line = *line;
        let unit_id = sheet.text(line, rec, "unit_id")?;
        let party = sheet.text(line, rec, "party")?;
        let votes = sheet.real(line, rec, "votes")?;
        if votes < 0.0 {
            return Err(sheet.data_error(line, "votes", format!("negative votes {votes}")));
        }
        let opt = |col: &str| -> Result<Option<f64>> {
            if sheet.raw(rec, col).is_empty() {
                Ok(None)
            } else {
                sheet.real(line, rec, col).map(Some)
            }
        };
        let population = opt("population")?;
        let centroid = match (opt("lat")?, opt("lon")?) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        };
        let entry = by_unit.entry(unit_id.clone()).or_insert_with(|| SourceUnitResult {
            unit_id,
            party_votes: BTreeMap::new(),
            population: population.unwrap_or(0.0),
            centroid,
        });
        *entry.party_votes.entry(party).or_insert(0.0) += votes;
    }
    Ok(by_unit.into_values().collect())
}

pub fn load_links(path: &Path) -> Result<Vec<UnitLink>> {
    let sheet = Sheet::open(path, LINKS_HEADER)?;
    let mut out = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let da_population = sheet.real(line, rec, "da_population")?;
        if da_population < 0.0 {
            return Err(sheet.data_error(line, "da_population", "negative population".into()));
        }
        out.push(UnitLink {
            da_id: sheet.text(line, rec, "da_id")?,
            ct_id: sheet.text(line, rec, "ct_id")?,
            fsa_id: sheet.id(line, rec, "fsa_id")?,
            da_population,
            sli: sheet.flag(line, rec, "sli")?,
        });
    }
    Ok(out)
}

pub fn load_overlaps(path: &Path) -> Result<Vec<OverlapFraction>> {
    let sheet = Sheet::open(path, OVERLAPS_HEADER)?;
    let mut out = Vec::with_capacity(sheet.rows.len());
    for (line, rec) in &sheet.rows {
        let line = *line;
        let fraction = sheet.real(line, rec, "fraction")?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err(sheet.data_error(line, "fraction", format!("fraction {fraction} outside [0,1]")));
        }
        out.push(OverlapFraction {
            precinct_id: sheet.text(line, rec, "precinct_id")?,
            zip_id: sheet.id(line, rec, "zip_id")?,
            fraction,
        });
    }
    Ok(out)
}

// --------------------------------------------------------------------------
// writing

/// Canonical CSV output: LF endings, no quoting unless needed.
pub struct CsvOut {
    inner: csv::Writer<Box<dyn Write>>,
    path: std::path::PathBuf,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::from_writer(Box::new(std::io::BufWriter::new(file)), path, header)
    }

    pub fn from_writer(w: Box<dyn Write>, path: &Path, header: &[&str]) -> Result<Self> {
        let inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut out = Self {
            inner,
            path: path.to_path_buf(),
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| Error::io(&self.path, std::io::Error::other(e)))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner
            .flush()
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_neighborhoods(path: &Path, hoods: &[Neighborhood]) -> Result<()> {
    let mut w = CsvOut::create(path, NEIGHBORHOODS_HEADER)?;
    for n in hoods {
        w.row([
            n.id.to_string(),
            n.metro.clone(),
            num(n.centroid_lat),
            num(n.centroid_lon),
            num(n.land_area),
        ])?;
    }
    w.finish()
}

pub fn write_counties(path: &Path, counties: &BTreeMap<NeighborhoodId, String>) -> Result<()> {
    let mut w = CsvOut::create(path, COUNTIES_HEADER)?;
    for (id, c) in counties {
        w.row([id.to_string(), c.clone()])?;
    }
    w.finish()
}

pub fn write_events(path: &Path, events: &[VisitEvent]) -> Result<()> {
    let mut w = CsvOut::create(path, EVENTS_HEADER)?;
    for e in events {
        w.row([e.user_id.clone(), e.establishment_id.clone(), e.year.to_string()])?;
    }
    w.finish()
}

pub fn write_establishments(path: &Path, ests: &[Establishment]) -> Result<()> {
    let mut w = CsvOut::create(path, ESTABLISHMENTS_HEADER)?;
    for e in ests {
        w.row([
            e.id.clone(),
            e.neighborhood.to_string(),
            e.categories.join(";"),
            e.first_review_year.to_string(),
            e.last_review_year.to_string(),
        ])?;
    }
    w.finish()
}

pub fn write_moves(path: &Path, moves: &[RawMove]) -> Result<()> {
    let mut w = CsvOut::create(path, MOVES_HEADER)?;
    for m in moves {
        w.row([
            m.origin.to_string(),
            m.destination.to_string(),
            m.census_year.to_string(),
            m.count.to_string(),
            (m.released_zero as u8).to_string(),
        ])?;
    }
    w.finish()
}

pub fn write_attributes(path: &Path, mode: CountryMode, attrs: &[AttributeRecord]) -> Result<()> {
    let header = match mode {
        CountryMode::Us => ATTRIBUTES_US_HEADER,
        CountryMode::Ca => ATTRIBUTES_CA_HEADER,
    };
    let mut w = CsvOut::create(path, header)?;
    for a in attrs {
        let mut row = vec![
            a.neighborhood.to_string(),
            a.year.to_string(),
            num(a.income),
            num(a.rent),
            num(a.pct_degree),
        ];
        match (mode, a.composition) {
            (CountryMode::Us, Composition::RaceShares(s)) => row.extend(s.iter().map(|v| num(*v))),
            (CountryMode::Ca, Composition::VisibleMinority(v)) => row.push(num(v)),
            _ => {
                return Err(Error::Data(format!(
                    "attribute row {}@{} does not match country mode",
                    a.neighborhood, a.year
                )))
            }
        }
        row.push(num(a.population));
        row.push(num(a.establishment_count));
        w.row(row)?;
    }
    w.finish()
}

pub fn write_scene_seeds(path: &Path, table: &SceneSeedTable) -> Result<()> {
    let mut header = vec!["category".to_string()];
    header.extend((1..=table.dims()).map(|k| format!("d{k}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = CsvOut::create(path, &header_refs)?;
    for (cat, v) in table.iter() {
        let mut row = vec![cat.to_string()];
        row.extend(v.iter().map(|x| num(*x)));
        w.row(row)?;
    }
    w.finish()
}

pub fn write_unit_results(path: &Path, units: &[SourceUnitResult]) -> Result<()> {
    let mut w = CsvOut::create(path, UNIT_RESULTS_HEADER)?;
    for u in units {
        let (lat, lon) = u
            .centroid
            .map(|(a, b)| (num(a), num(b)))
            .unwrap_or_default();
        for (party, votes) in &u.party_votes {
            w.row([
                u.unit_id.clone(),
                party.clone(),
                num(*votes),
                num(u.population),
                lat.clone(),
                lon.clone(),
            ])?;
        }
    }
    w.finish()
}

pub fn write_links(path: &Path, links: &[UnitLink]) -> Result<()> {
    let mut w = CsvOut::create(path, LINKS_HEADER)?;
    for l in links {
        w.row([
            l.da_id.clone(),
            l.ct_id.clone(),
            l.fsa_id.to_string(),
            num(l.da_population),
            (l.sli as u8).to_string(),
        ])?;
    }
    w.finish()
}

pub fn write_overlaps(path: &Path, overlaps: &[OverlapFraction]) -> Result<()> {
    let mut w = CsvOut::create(path, OVERLAPS_HEADER)?;
    for o in overlaps {
        w.row([o.precinct_id.clone(), o.zip_id.to_string(), num(o.fraction)])?;
    }
    w.finish()
}
