//! Quality-diversity data synthesis for tile-grid site layouts.
//!
//! The crate covers the whole generative loop:
//!
//! * [`catalog`]: detailed tile states, adjacency rules learned from example
//!   designs, and the map to seven functional categories.
//! * [`wfc`]: the Wave Function Collapse solver.
//! * [`features`]: site features and the performance measure.
//! * [`qd`]: MAP-Elites over a (weights, fixed tiles, seed) genome, plus the
//!   random-sampling baseline.
//! * [`dataset`]: tercile labelling, tokenisation, distribution statistics.
//! * [`lm`]: a compact prompt-conditioned autoregressive tile model.
//! * [`pipeline`]: prompt → coarse plan → preconstraints → WFC refinement.
//! * [`eval`]: exhaustive prompt sweeps and model comparison.

pub mod catalog;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod hash;
pub mod layout;
pub mod lm;
pub mod pipeline;
pub mod qd;
pub mod rng;
pub mod site;
pub mod tileset;
pub mod wfc;

pub use catalog::{AdjacencyRules, Direction, ExampleDesign, FunctionalCategory, TileCatalog, TileId, TileState};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureVector};
pub use layout::{CategoryGrid, Layout};
pub use qd::{Archive, DevelopContext, Elite, Genome};
pub use site::{Preconstraints, SiteBorder};
pub use tileset::TileSet;
pub use wfc::{SolveOutcome, SolveStatus, Wave};
