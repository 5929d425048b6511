//! Relational neighborhood mobility: ingest, co-visitation and move graphs,
//! scene profiles, vote allocation, dyadic similarity features,
//! fixed-effects count models and permutation inference.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod glm;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod perm;
pub mod scene;
pub mod similarity;
pub mod stats;
pub mod synth;
pub mod votes;

pub use error::{Error, FilePos, Result};
pub use model::{
    AttributeRecord, Composition, CountryMode, Neighborhood, NeighborhoodId, PanelDataset, Violation,
};
pub use glm::{fit, Family, FitResult, ModelSpec};
pub use graph::MobilityGraph;
pub use perm::{permutation_test, PermutationOptions, PermutationSummary};
pub use similarity::{DyadRow, DyadTable, Feature};
pub use synth::{generate_city, simulate_counts, SynthCity, SynthConfig};
