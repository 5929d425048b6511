//! Stage runner. Artifacts are written to a staging directory next to the
//! output directory and moved into place only when every stage succeeds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use relmob_core::glm::{fit, write_curve, write_fit, write_fitstats, Family, FitResult, ModelSpec, Scenario};
use relmob_core::graph::{self, build_covisitation, build_move_graph, filter_metros, MobilityGraph};
use relmob_core::ingest::{self, apply_disclosure, CsvOut, Establishment, MoveRecord, VisitEvent};
use relmob_core::model::{validate_panel, validate_panel_with_refs, Violation};
use relmob_core::perm::{permutation_test_with_base, write_summary, PermutationOptions, PermutationSummary};
use relmob_core::scene::{profile_all, ProfileSet, SceneSeedTable};
use relmob_core::similarity::{
    amenity_vectors, build_dyad_table, referenced_keys, spearman_matrix, standardize, write_dyads, write_spearman,
    AmenityVector, DyadOptions, DyadTable, FeatureSources, ScalingReport, SpearmanMatrix,
};
use relmob_core::synth::{generate_city, write_city};
use relmob_core::votes::{area_weighted_shares, nearest_election_year, population_weighted_shares};
use relmob_core::{CountryMode, Error, NeighborhoodId, PanelDataset};

use crate::config::{Aggregation, Election, GraphMode, PipelineConfig};
use crate::error::{AtStage, CliError, Stage};
use crate::figures::{coefficient_svg, heatmap_svg, marginal_svg, write_svg, CoefSeries};
use crate::manifest::{self, ManifestEntry, MANIFEST_NAME};

type AmenityMap = BTreeMap<(NeighborhoodId, i32), AmenityVector>;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Last stage to execute.
    pub through: Stage,
    /// Run the permutation stage even if the config disables it.
    pub force_permutation: bool,
    /// Skip the wall-clock run log so reruns are byte-identical.
    pub reproducible: bool,
    /// Overrides the config's master seed (and the synthetic city's).
    pub seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { through: Stage::Manifest, force_permutation: false, reproducible: true, seed: None }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub manifest: Vec<ManifestEntry>,
    pub primary: Option<FitResult>,
    pub twin: Option<FitResult>,
    pub permutation: Option<PermutationSummary>,
}

/// Loaded inputs after the ingest stage.
struct Ingested {
    panel: PanelDataset,
    years: Vec<i32>,
    establishments: Vec<Establishment>,
    seeds: SceneSeedTable,
    events: Vec<VisitEvent>,
    moves: Vec<MoveRecord>,
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!(".{name}.staging-{}", std::process::id()))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Runs the pipeline through `opts.through`. On failure the staging
/// directory is removed and any previous output is left untouched.
pub fn run(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    if out.exists() {
        let reusable = out.is_dir()
            && (out.join(MANIFEST_NAME).exists()
                || std::fs::read_dir(&out).map(|mut d| d.next().is_none()).unwrap_or(false));
        if !reusable {
            return Err(CliError::Config(format!(
                "output_dir {} exists and is not a previous run; refusing to overwrite",
                out.display()
            )));
        }
    }
    let staging = staging_dir(&out);
    if staging.exists() {
        let _ = std::fs::remove_dir_all(&staging);
    }
    std::fs::create_dir_all(&staging)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", staging.display())))?;
    let result = Runner::new(cfg.clone(), opts.clone(), staging.clone()).execute();
    match result {
        Ok(mut outcome) => {
            if out.exists() {
                std::fs::remove_dir_all(&out).map_err(|e| CliError::Stage {
                    stage: Stage::Manifest,
                    source: io_err(&out, e),
                })?;
            }
            std::fs::rename(&staging, &out)
                .map_err(|e| CliError::Stage { stage: Stage::Manifest, source: io_err(&out, e) })?;
            outcome.output_dir = out;
            Ok(outcome)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

struct Runner {
    cfg: PipelineConfig,
    opts: RunOptions,
    dir: PathBuf,
    timings: Vec<(Stage, f64)>,
}

impl Runner {
    fn new(mut cfg: PipelineConfig, opts: RunOptions, dir: PathBuf) -> Self {
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
            if let Some(s) = &mut cfg.synth {
                s.seed = seed;
            }
        }
        Runner { cfg, opts, dir, timings: Vec::new() }
    }

    fn wants(&self, stage: Stage) -> bool {
        stage <= self.opts.through
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn timed<T>(&mut self, stage: Stage, f: impl FnOnce(&mut Self) -> Result<T, CliError>) -> Result<T, CliError> {
        log::info!("stage {stage}");
        let start = Instant::now();
        let r = f(self)?;
        self.timings.push((stage, start.elapsed().as_secs_f64()));
        Ok(r)
    }

    fn execute(mut self) -> Result<RunOutcome, CliError> {
        let mut outcome = RunOutcome {
            output_dir: self.dir.clone(),
            stages: Vec::new(),
            manifest: Vec::new(),
            primary: None,
            twin: None,
            permutation: None,
        };
        if self.cfg.synth.is_some() {
            self.timed(Stage::Synth, |r| r.synth())?;
            outcome.stages.push(Stage::Synth);
        }
        if self.wants(Stage::Ingest) {
            let mut data = self.timed(Stage::Ingest, |r| r.ingest())?;
            outcome.stages.push(Stage::Ingest);
            let run_to = self.opts.through;
            let graphs = if run_to >= Stage::Graphs {
                outcome.stages.push(Stage::Graphs);
                self.timed(Stage::Graphs, |r| r.graphs(&data))?
            } else {
                Vec::new()
            };
            let mut amenity = BTreeMap::new();
            let mut profiles = ProfileSet::default();
            if run_to >= Stage::Profiles {
                outcome.stages.push(Stage::Profiles);
                (amenity, profiles) = self.timed(Stage::Profiles, |r| r.profiles(&data))?;
            }
            let mut votes = BTreeMap::new();
            if run_to >= Stage::Votes {
                outcome.stages.push(Stage::Votes);
                votes = self.timed(Stage::Votes, |r| r.votes(&data))?;
                data.panel.attach_vote_shares(&votes);
            }
            let raw = if run_to >= Stage::Similarities {
                outcome.stages.push(Stage::Similarities);
                Some(self.timed(Stage::Similarities, |r| r.similarities(&data, &graphs, &amenity, &profiles, &votes))?)
            } else {
                None
            };
            let mut table_and_rho: Option<(DyadTable, SpearmanMatrix)> = None;
            if let (Some(raw), true) = (&raw, run_to >= Stage::Standardize) {
                outcome.stages.push(Stage::Standardize);
                table_and_rho = Some(self.timed(Stage::Standardize, |r| r.standardize(raw))?);
            }
            if let (Some((table, _)), true) = (&table_and_rho, run_to >= Stage::Fit) {
                outcome.stages.push(Stage::Fit);
                let (p, t) = self.timed(Stage::Fit, |r| r.fit(table))?;
                outcome.primary = Some(p);
                outcome.twin = t;
            }
            let permute = self.cfg.permutation.enabled || self.opts.force_permutation;
            if let (Some((table, _)), Some(base), true) = (&table_and_rho, &outcome.primary, run_to >= Stage::Permute) {
                if permute {
                    outcome.stages.push(Stage::Permute);
                    outcome.permutation = Some(self.timed(Stage::Permute, |r| r.permute(table, base))?);
                }
            }
            if let (Some((_, rho)), true) = (&table_and_rho, run_to >= Stage::Figures) {
                outcome.stages.push(Stage::Figures);
                let (p, t) = (outcome.primary.as_ref(), outcome.twin.as_ref());
                self.timed(Stage::Figures, |r| r.figures(rho, p, t))?;
            }
        }
        self.write_config().at(Stage::Manifest)?;
        if !self.opts.reproducible {
            self.write_run_info().at(Stage::Manifest)?;
        }
        outcome.manifest = manifest::write(&self.dir).at(Stage::Manifest)?;
        outcome.stages.push(Stage::Manifest);
        Ok(outcome)
    }

    // ---- stages ---------------------------------------------------------

    fn synth(&mut self) -> Result<(), CliError> {
        let sc = self.cfg.synth.clone().expect("synth configured");
        let city = generate_city(&sc).at(Stage::Synth)?;
        let dir = self.path("inputs");
        let paths = write_city(&dir, &city).at(Stage::Synth)?;
        let json = serde_json::to_string_pretty(&sc).expect("serializable");
        std::fs::write(dir.join("synth_config.json"), json + "\n")
            .map_err(|e| CliError::Stage { stage: Stage::Synth, source: io_err(&dir, e) })?;
        let i = &mut self.cfg.inputs;
        i.neighborhoods = Some(paths.neighborhoods);
        i.attributes = Some(paths.attributes);
        i.establishments = Some(paths.establishments);
        i.scene_seeds = Some(paths.scene_seeds);
        i.counties = Some(paths.counties);
        match sc.country {
            CountryMode::Us => {
                i.events = Some(paths.events);
                i.overlaps = paths.overlaps;
            }
            CountryMode::Ca => {
                i.moves = Some(paths.moves);
                i.links = paths.links;
            }
        }
        self.cfg.elections = vec![Election { year: city.election_year, results: paths.units }];
        self.cfg.focal_party = city.focal_party;
        Ok(())
    }

    fn require<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        let p = p.as_deref().ok_or_else(|| CliError::Config(format!("inputs.{name} is required")))?;
        if !p.exists() {
            return Err(CliError::Stage {
                stage: Stage::Ingest,
                source: Error::Data(format!("input file {} does not exist", p.display())),
            });
        }
        Ok(p)
    }

    fn ingest(&mut self) -> Result<Ingested, CliError> {
        let st = Stage::Ingest;
        let i = self.cfg.inputs.clone();
        let hoods = ingest::load_neighborhoods(Self::require(&i.neighborhoods, "neighborhoods")?).at(st)?;
        let known: BTreeSet<NeighborhoodId> = hoods.iter().map(|h| h.id.clone()).collect();
        let attrs = ingest::load_attributes(Self::require(&i.attributes, "attributes")?, self.cfg.country, &known).at(st)?;
        let mut panel = PanelDataset::new(self.cfg.country, hoods, attrs);
        if self.cfg.aggregation == Aggregation::County {
            let counties = ingest::load_counties(Self::require(&i.counties, "counties")?).at(st)?;
            panel.regroup(&counties).at(st)?;
        }
        let violations = validate_panel(&panel);
        self.write_violations("panel_violations.csv", &violations).at(st)?;
        if !violations.is_empty() {
            return Err(violation_error(st, &violations));
        }
        let years: Vec<i32> = match &self.cfg.years {
            Some(y) => {
                let have: BTreeSet<i32> = panel.years().iter().copied().collect();
                if let Some(missing) = y.iter().find(|y| !have.contains(y)) {
                    return Err(CliError::Stage { stage: st, source: Error::Data(format!("no attributes for year {missing}")) });
                }
                y.clone()
            }
            None => panel.years().to_vec(),
        };
        if years.is_empty() {
            return Err(CliError::Stage { stage: st, source: Error::Data("attribute table has no years".into()) });
        }
        let establishments =
            ingest::load_establishments(Self::require(&i.establishments, "establishments")?, ingest::DEFAULT_STOPLIST)
                .at(st)?;
        let seeds = ingest::load_scene_seeds(Self::require(&i.scene_seeds, "scene_seeds")?).at(st)?;
        for e in &self.cfg.elections {
            Self::require(&Some(e.results.clone()), "elections.results")?;
        }
        let (lo, hi) = (*years.iter().min().expect("non-empty"), *years.iter().max().expect("non-empty"));
        let mut summary: Vec<(&str, usize)> = vec![
            ("neighborhoods", panel.neighborhoods().len()),
            ("attribute_rows", panel.attributes().len()),
            ("establishments", establishments.len()),
            ("scene_categories", seeds.len()),
        ];
        let (mut events, mut moves) = (Vec::new(), Vec::new());
        match self.cfg.country {
            CountryMode::Us => {
                let load = ingest::load_events(Self::require(&i.events, "events")?, lo..=hi).at(st)?;
                summary.push(("events", load.events.len()));
                summary.push(("duplicate_events", load.duplicates));
                events = load.events;
            }
            CountryMode::Ca => {
                let raw = ingest::load_moves(Self::require(&i.moves, "moves")?).at(st)?;
                let d = &self.cfg.disclosure;
                let released = apply_disclosure(&raw, &d.policy(), d.mode(), None).at(st)?;
                summary.push(("raw_moves", raw.len()));
                summary.push(("moves", released.moves.len()));
                summary.push(("dropped_true_zero", released.dropped_true_zero));
                summary.push(("repaired_counts", released.repaired));
                moves = released.moves;
            }
        }
        let mut w = CsvOut::create(&self.path("ingest_summary.csv"), &["item", "count"]).at(st)?;
        for (k, v) in summary {
            w.row([k.to_string(), v.to_string()]).at(st)?;
        }
        w.finish().at(st)?;
        Ok(Ingested { panel, years, establishments, seeds, events, moves })
    }

    fn graphs(&mut self, d: &Ingested) -> Result<Vec<MobilityGraph>, CliError> {
        let st = Stage::Graphs;
        let mut graphs = Vec::new();
        let mut tallies = Vec::new();
        for &y in &d.years {
            match self.cfg.country {
                CountryMode::Us => {
                    graphs.extend(build_covisitation(&d.events, &d.establishments, d.panel.neighborhoods(), y).at(st)?)
                }
                CountryMode::Ca => {
                    let directed = self.cfg.graph_mode == GraphMode::Directed;
                    let (g, t) = build_move_graph(&d.moves, d.panel.neighborhoods(), y, directed).at(st)?;
                    graphs.extend(g);
                    tallies.push((y, t));
                }
            }
        }
        let before = graphs.len();
        let graphs = filter_metros(graphs, self.cfg.min_nodes);
        if graphs.len() < before {
            log::warn!("{} metro-years below {} nodes skipped", before - graphs.len(), self.cfg.min_nodes);
        }
        if graphs.iter().all(|g| g.edges.is_empty()) {
            return Err(CliError::Stage { stage: st, source: Error::Data("no network has any edge".into()) });
        }
        graph::write_graphs(&self.path("edges.csv"), &graphs).at(st)?;
        graph::write_metrics(&self.path("graph_metrics.csv"), &graphs).at(st)?;
        if !tallies.is_empty() {
            let mut w = CsvOut::create(&self.path("move_tally.csv"), &["census_year", "self_loops", "cross_metro"]).at(st)?;
            for (y, t) in tallies {
                w.row([y.to_string(), t.self_loops.to_string(), t.cross_metro.to_string()]).at(st)?;
            }
            w.finish().at(st)?;
        }
        Ok(graphs)
    }

    fn profiles(
        &mut self,
        d: &Ingested,
    ) -> Result<(AmenityMap, ProfileSet), CliError> {
        let st = Stage::Profiles;
        let amenity = amenity_vectors(&d.establishments, &d.years);
        let set = profile_all(&d.establishments, &d.seeds, &d.years);
        let mut header = vec!["neighborhood".to_string(), "year".to_string()];
        header.extend((1..=d.seeds.dims()).map(|k| format!("d{k}")));
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut w = CsvOut::create(&self.path("scene_profiles.csv"), &refs).at(st)?;
        for ((id, y), p) in &set.profiles {
            let mut row = vec![id.to_string(), y.to_string()];
            row.extend(p.vector.iter().map(|v| format!("{v}")));
            w.row(row).at(st)?;
        }
        w.finish().at(st)?;
        let mut w = CsvOut::create(&self.path("scene_exclusions.csv"), &["subject", "reason"]).at(st)?;
        for e in &set.exclusions {
            w.row([e.subject.clone(), e.reason.clone()]).at(st)?;
        }
        w.finish().at(st)?;
        Ok((amenity, set))
    }

    fn votes(&mut self, d: &Ingested) -> Result<BTreeMap<(NeighborhoodId, i32), f64>, CliError> {
        let st = Stage::Votes;
        let election_years: Vec<i32> = self.cfg.elections.iter().map(|e| e.year).collect();
        let mut by_election: BTreeMap<i32, BTreeMap<NeighborhoodId, f64>> = BTreeMap::new();
        for e in &self.cfg.elections {
            let units = ingest::load_unit_results(&e.results).at(st)?;
            let shares = match self.cfg.country {
                CountryMode::Us => {
                    let overlaps = ingest::load_overlaps(Self::require(&self.cfg.inputs.overlaps, "overlaps")?).at(st)?;
                    area_weighted_shares(&units, &overlaps, &self.cfg.focal_party).at(st)?.shares
                }
                CountryMode::Ca => {
                    let links = ingest::load_links(Self::require(&self.cfg.inputs.links, "links")?).at(st)?;
                    population_weighted_shares(&units, &links)
                        .at(st)?
                        .shares
                        .into_iter()
                        .map(|(id, s)| {
                            let v = s.get(&self.cfg.focal_party).copied().unwrap_or(0.0);
                            (id, v)
                        })
                        .collect()
                }
            };
            by_election.insert(e.year, shares);
        }
        let mut out = BTreeMap::new();
        let mut w = CsvOut::create(&self.path("vote_shares.csv"), &["neighborhood", "year", "election_year", "share"]).at(st)?;
        for &y in &d.years {
            let ey = nearest_election_year(y, &election_years).expect("elections validated non-empty");
            for (id, s) in &by_election[&ey] {
                out.insert((id.clone(), y), *s);
                w.row([id.to_string(), y.to_string(), ey.to_string(), format!("{s}")]).at(st)?;
            }
        }
        w.finish().at(st)?;
        Ok(out)
    }

    fn similarities(
        &mut self,
        d: &Ingested,
        graphs: &[MobilityGraph],
        amenity: &BTreeMap<(NeighborhoodId, i32), AmenityVector>,
        profiles: &ProfileSet,
        votes: &BTreeMap<(NeighborhoodId, i32), f64>,
    ) -> Result<DyadTable, CliError> {
        let st = Stage::Similarities;
        let violations = validate_panel_with_refs(&d.panel, &referenced_keys(graphs));
        self.write_violations("reference_violations.csv", &violations).at(st)?;
        let src = FeatureSources { panel: &d.panel, amenity, scenes: &profiles.profiles, votes };
        let opts = DyadOptions { race: self.cfg.race_transform, scope: self.cfg.dyad_scope };
        let table = build_dyad_table(graphs, &src, opts).at(st)?;
        write_dyads(&self.path("dyads_raw.csv"), &table).at(st)?;
        let mut w = CsvOut::create(&self.path("dropped_dyads.csv"), &["n1", "n2", "year", "reason"]).at(st)?;
        for x in &table.dropped {
            w.row([x.n1.to_string(), x.n2.to_string(), x.year.to_string(), x.reason.clone()]).at(st)?;
        }
        w.finish().at(st)?;
        if table.rows.len() < 3 {
            return Err(CliError::Stage {
                stage: st,
                source: Error::Data(format!("only {} dyads with complete features", table.rows.len())),
            });
        }
        Ok(table)
    }

    fn standardize(&mut self, raw: &DyadTable) -> Result<(DyadTable, SpearmanMatrix), CliError> {
        let st = Stage::Standardize;
        let (table, report) = standardize(raw, self.cfg.standardize).at(st)?;
        write_dyads(&self.path("dyads.csv"), &table).at(st)?;
        write_scaling(&self.path("scaling.csv"), &report, table.country).at(st)?;
        let rho = spearman_matrix(raw).at(st)?;
        write_spearman(&self.path("spearman.csv"), &rho).at(st)?;
        Ok((table, rho))
    }

    fn fit(&mut self, table: &DyadTable) -> Result<(FitResult, Option<FitResult>), CliError> {
        let st = Stage::Fit;
        let family = self.cfg.model.family;
        let spec = self.cfg.model_spec(family);
        let primary = fit(table, &spec).at(st)?;
        if !primary.converged {
            return Err(CliError::NonConvergence {
                stage: st,
                message: format!("{} fit did not converge: {:?}", family.label(), primary.diagnostics),
            });
        }
        write_fit(&self.path(&format!("fit_{}.csv", family.label())), &primary).at(st)?;
        let twin = if self.cfg.model.twin {
            let other = match family {
                Family::NegBin => Family::Poisson,
                Family::Poisson => Family::NegBin,
            };
            let t = fit(table, &self.cfg.model_spec(other)).at(st)?;
            if t.converged {
                write_fit(&self.path(&format!("fit_{}.csv", other.label())), &t).at(st)?;
                Some(t)
            } else {
                log::warn!("{} robustness fit did not converge; skipped", other.label());
                None
            }
        } else {
            None
        };
        let mut all = vec![&primary];
        all.extend(twin.as_ref());
        write_fitstats(&self.path("fitstats.csv"), &all).at(st)?;
        if let Some(points) = marginal_points(&primary) {
            write_curve(&self.path("marginal.csv"), &points).at(st)?;
        }
        Ok((primary, twin))
    }

    fn permute(&mut self, table: &DyadTable, base: &FitResult) -> Result<PermutationSummary, CliError> {
        let st = Stage::Permute;
        let p = &self.cfg.permutation;
        let opts = PermutationOptions {
            reps: p.reps,
            master_seed: p.seed.filter(|_| self.opts.seed.is_none()).unwrap_or(self.cfg.seed),
            hold_theta: p.hold_theta,
            p_value: p.p_value,
            parallel: true,
        };
        let spec: ModelSpec = self.cfg.model_spec(self.cfg.model.family);
        let s = permutation_test_with_base(table, &spec, base, &opts).at(st)?;
        write_summary(&self.path("permutation.csv"), &s).at(st)?;
        Ok(s)
    }

    fn figures(
        &mut self,
        rho: &SpearmanMatrix,
        primary: Option<&FitResult>,
        twin: Option<&FitResult>,
    ) -> Result<(), CliError> {
        let st = Stage::Figures;
        let f = self.cfg.figures.clone();
        if f.heatmap {
            write_svg(&self.path("spearman_heatmap.svg"), &heatmap_svg(rho, f.blank_threshold)).at(st)?;
        }
        if let (true, Some(p)) = (f.coefficients, primary) {
            let mut series = vec![CoefSeries { label: p.family.label(), fit: p }];
            if let Some(t) = twin {
                series.push(CoefSeries { label: t.family.label(), fit: t });
            }
            write_svg(&self.path("coefficients.svg"), &coefficient_svg(&series, f.display_cap)).at(st)?;
        }
        if let (true, Some(p)) = (f.marginal, primary) {
            if let Some(points) = marginal_points(p) {
                let sc = Scenario::scene_by_amenity();
                write_svg(&self.path("marginal.svg"), &marginal_svg(&points, &sc.focal, &sc.moderator)).at(st)?;
            }
        }
        Ok(())
    }

    // ---- bookkeeping ----------------------------------------------------

    fn write_violations(&self, name: &str, v: &[Violation]) -> relmob_core::Result<()> {
        let mut w = CsvOut::create(&self.path(name), &["key", "rule", "message"])?;
        for x in v {
            w.row([x.key.clone(), x.rule.to_string(), x.message.clone()])?;
        }
        w.finish()
    }

    /// The effective configuration, with paths inside the run made relative.
    fn write_config(&self) -> relmob_core::Result<()> {
        let mut cfg = self.cfg.clone();
        let rel = |p: &mut PathBuf| {
            if let Ok(r) = p.strip_prefix(&self.dir) {
                *p = r.to_path_buf();
            }
        };
        let i = &mut cfg.inputs;
        for p in [
            &mut i.neighborhoods,
            &mut i.attributes,
            &mut i.establishments,
            &mut i.scene_seeds,
            &mut i.events,
            &mut i.moves,
            &mut i.overlaps,
            &mut i.links,
            &mut i.counties,
        ]
        .into_iter()
        .flatten()
        {
            rel(p);
        }
        for e in &mut cfg.elections {
            rel(&mut e.results);
        }
        cfg.output_dir = PathBuf::from(".");
        let json = serde_json::to_string_pretty(&cfg).expect("serializable") + "\n";
        let path = self.path("config.json");
        std::fs::write(&path, json).map_err(|e| io_err(&path, e))
    }

    fn write_run_info(&self) -> relmob_core::Result<()> {
        let started = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let timings: BTreeMap<&str, f64> = self.timings.iter().map(|(s, t)| (s.name(), *t)).collect();
        let info = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "finished_unix": started,
            "stage_seconds": timings,
        });
        let path = self.path("run_info.json");
        std::fs::write(&path, serde_json::to_string_pretty(&info).expect("json") + "\n").map_err(|e| io_err(&path, e))
    }
}

fn violation_error(stage: Stage, v: &[Violation]) -> CliError {
    let first: Vec<String> = v.iter().take(5).map(|x| format!("{} ({}): {}", x.key, x.rule, x.message)).collect();
    CliError::Stage {
        stage,
        source: Error::Data(format!("{} panel violation(s), e.g. {}", v.len(), first.join("; "))),
    }
}

fn marginal_points(fit: &FitResult) -> Option<Vec<relmob_core::glm::CurvePoint>> {
    relmob_core::glm::predict_curve(fit, &Scenario::scene_by_amenity()).ok()
}

fn write_scaling(path: &Path, r: &ScalingReport, country: CountryMode) -> relmob_core::Result<()> {
    let mut w = CsvOut::create(path, &["group", "feature", "mean", "sd"])?;
    for e in &r.entries {
        w.row([e.group.clone(), e.feature.column(country).to_string(), format!("{}", e.mean), format!("{}", e.sd)])?;
    }
    w.finish()
}
