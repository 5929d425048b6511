//! Pipeline configuration, read from JSON. Relative paths resolve against
//! the directory of the configuration file.

use std::path::{Path, PathBuf};

use relmob_core::glm::{ClusterSpec, Family, ThetaMode};
use relmob_core::ingest::{DisclosurePolicy, RoundingMode};
use relmob_core::perm::PValueMethod;
use relmob_core::similarity::{DyadScope, RaceTransform, StandardizeScope};
use relmob_core::synth::SynthConfig;
use relmob_core::CountryMode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub neighborhoods: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub establishments: Option<PathBuf>,
    pub scene_seeds: Option<PathBuf>,
    /// Reviews (U.S. co-visitation networks).
    pub events: Option<PathBuf>,
    /// Released move counts (Canadian move networks).
    pub moves: Option<PathBuf>,
    /// Precinct-to-ZIP area overlaps (U.S.).
    pub overlaps: Option<PathBuf>,
    /// DA → CT/FSA links (Canada).
    pub links: Option<PathBuf>,
    /// Neighborhood → county table, needed for county aggregation.
    pub counties: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Election {
    pub year: i32,
    pub results: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Metro,
    County,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    #[default]
    Undirected,
    Directed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisclosureConfig {
    pub rounding_base: u64,
    pub zero_maps_to: u64,
    pub min_respondents: u64,
    pub repair: bool,
}

impl Default for DisclosureConfig {
    fn default() -> Self {
        let p = DisclosurePolicy::default();
        DisclosureConfig {
            rounding_base: p.rounding_base,
            zero_maps_to: p.zero_maps_to,
            min_respondents: p.min_respondents,
            repair: false,
        }
    }
}

impl DisclosureConfig {
    pub fn policy(&self) -> DisclosurePolicy {
        DisclosurePolicy {
            rounding_base: self.rounding_base,
            zero_maps_to: self.zero_maps_to,
            min_respondents: self.min_respondents,
        }
    }

    pub fn mode(&self) -> RoundingMode {
        if self.repair {
            RoundingMode::Repair
        } else {
            RoundingMode::Strict
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// Also fit the other family as a robustness check.
    pub twin: bool,
    pub theta: ThetaMode,
    pub cluster: ClusterSpec,
    pub small_sample: bool,
    pub fixed_effects: Vec<String>,
    /// Defaults to all similarity columns plus the interaction.
    pub predictors: Option<Vec<String>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: Family::NegBin,
            twin: true,
            theta: ThetaMode::Estimate,
            cluster: ClusterSpec::TwoWay,
            small_sample: true,
            fixed_effects: vec!["n1".into(), "n2".into(), "year".into()],
            predictors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationConfig {
    pub enabled: bool,
    pub reps: usize,
    /// Defaults to the pipeline seed.
    pub seed: Option<u64>,
    pub hold_theta: bool,
    pub p_value: PValueMethod,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig { enabled: false, reps: 100, seed: None, hold_theta: false, p_value: PValueMethod::Normal }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureConfig {
    pub heatmap: bool,
    pub coefficients: bool,
    pub marginal: bool,
    /// Coefficients with |b| above this are left out of the coefficient plot.
    pub display_cap: f64,
    /// Correlations with ρ in [−t, t) are drawn blank.
    pub blank_threshold: f64,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig { heatmap: true, coefficients: true, marginal: true, display_cap: 0.5, blank_threshold: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub country: CountryMode,
    pub inputs: Inputs,
    pub elections: Vec<Election>,
    pub focal_party: String,
    pub output_dir: PathBuf,
    /// Years to analyze; defaults to every year in the attribute table.
    pub years: Option<Vec<i32>>,
    pub standardize: StandardizeScope,
    pub aggregation: Aggregation,
    pub graph_mode: GraphMode,
    pub dyad_scope: DyadScope,
    pub race_transform: RaceTransform,
    /// Metro-years with fewer active neighborhoods are skipped.
    pub min_nodes: usize,
    pub disclosure: DisclosureConfig,
    pub model: ModelConfig,
    pub permutation: PermutationConfig,
    pub figures: FigureConfig,
    /// Generate inputs from this synthetic city instead of reading files.
    pub synth: Option<SynthConfig>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            country: CountryMode::Us,
            inputs: Inputs::default(),
            elections: Vec::new(),
            focal_party: "DEM".into(),
            output_dir: PathBuf::from("relmob-out"),
            years: None,
            standardize: StandardizeScope::Global,
            aggregation: Aggregation::Metro,
            graph_mode: GraphMode::Undirected,
            dyad_scope: DyadScope::EdgesOnly,
            race_transform: RaceTransform::MaxNormalized,
            min_nodes: 3,
            disclosure: DisclosureConfig::default(),
            model: ModelConfig::default(),
            permutation: PermutationConfig::default(),
            figures: FigureConfig::default(),
            synth: None,
            seed: 0,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let i = &mut self.inputs;
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
            resolve(base, p);
        }
        for e in &mut self.elections {
            resolve(base, &mut e.results);
        }
        resolve(base, &mut self.output_dir);
    }

    /// Static checks; input existence is checked when the ingest stage runs.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if let Some(s) = &self.synth {
            if s.country != self.country {
                return bad("synth.country differs from country");
            }
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        } else {
            let i = &self.inputs;
            let required = [
                ("neighborhoods", &i.neighborhoods),
                ("attributes", &i.attributes),
                ("establishments", &i.establishments),
                ("scene_seeds", &i.scene_seeds),
            ];
            for (name, p) in required {
                if p.is_none() {
                    return Err(CliError::Config(format!("inputs.{name} is required")));
                }
            }
            match self.country {
                CountryMode::Us if i.events.is_none() || i.overlaps.is_none() => {
                    return bad("U.S. mode needs inputs.events and inputs.overlaps")
                }
                CountryMode::Ca if i.moves.is_none() || i.links.is_none() => {
                    return bad("Canadian mode needs inputs.moves and inputs.links")
                }
                _ => {}
            }
            if self.elections.is_empty() {
                return bad("at least one election is required");
            }
            if self.aggregation == Aggregation::County && i.counties.is_none() {
                return bad("county aggregation needs inputs.counties");
            }
        }
        if self.graph_mode == GraphMode::Directed && self.country == CountryMode::Us {
            return bad("co-visitation networks are undirected; graph_mode must be undirected in U.S. mode");
        }
        if self.min_nodes < 2 {
            return bad("min_nodes must be at least 2");
        }
        if self.permutation.enabled && self.permutation.reps < 2 {
            return bad("permutation.reps must be at least 2");
        }
        if !(self.figures.display_cap > 0.0) || !(self.figures.blank_threshold >= 0.0) {
            return bad("figure display_cap must be positive and blank_threshold non-negative");
        }
        self.model_spec(self.model.family).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn model_spec(&self, family: Family) -> relmob_core::glm::ModelSpec {
        let mut spec = relmob_core::glm::ModelSpec::standard(self.country, family);
        spec.theta = self.model.theta;
        spec.cluster = self.model.cluster;
        spec.small_sample = self.model.small_sample;
        spec.fixed_effects = self.model.fixed_effects.clone();
        if let Some(p) = &self.model.predictors {
            spec.predictors = p.clone();
        }
        spec
    }

    /// The synthetic demonstration config shipped with the binary.
    pub fn bundled_synthetic() -> Self {
        Self::from_json(BUNDLED_SYNTHETIC).expect("bundled config is valid")
    }
}

pub const BUNDLED_SYNTHETIC: &str = include_str!("../configs/synthetic.json");
