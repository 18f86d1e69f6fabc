#![allow(dead_code)]

use qdtile::dataset::{Cut, LabelSchema, SCHEMA_VERSION};
use qdtile::lm::{Checkpoint, Model, ModelConfig};
use qdtile::pipeline::solver_weights;
use qdtile::wfc::solve;
use qdtile::{AdjacencyRules, Layout, SiteBorder, TileCatalog};

pub const H: usize = 8;
pub const W: usize = 12;

pub fn schema() -> LabelSchema {
    LabelSchema {
        schema_version: SCHEMA_VERSION,
        cuts: [
            Cut::new(1.0, 2.0),
            Cut::new(2.0, 4.0),
            Cut::new(4.0, 8.0),
            Cut::new(10.0, 20.0),
            Cut::new(1.0, 2.0),
        ],
        provenance: vec!["test".into()],
    }
}

/// Untrained micro model sized for the 12 by 8 site.
pub fn checkpoint(catalog: &TileCatalog) -> Checkpoint {
    let cfg = ModelConfig {
        context: H * W + 2,
        ..ModelConfig::micro()
    };
    let model: Model<f32> = Model::init(cfg, 7).unwrap();
    Checkpoint::new(model, 0, H, W, "test-dataset", &catalog.hash(), &schema())
}

pub fn solved_layout(catalog: &TileCatalog, rules: &AdjacencyRules) -> Layout {
    let w = solver_weights(rules);
    let pre = SiteBorder::standard(catalog).preconstraints(H, W);
    (0..).find_map(|s| solve(H, W, rules, &w, &pre, s).unwrap().layout).unwrap()
}
