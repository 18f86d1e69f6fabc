//! Prompt → coarse plan → category preconstraints → WFC refinement, and
//! region erase-and-regenerate.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::catalog::{AdjacencyRules, FunctionalCategory, TileCatalog};
use crate::dataset::{labels_to_prompt, LabelSchema, Labels, Level, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::features::{self, FeatureConfig, FeatureVector, FEATURE_COUNT};
use crate::layout::{CategoryGrid, Layout};
use crate::lm::{Checkpoint, Model, SamplingParams};
use crate::rng::{child_rng, derive_seed};
use crate::site::{Preconstraints, SiteBorder};
use crate::tileset::TileSet;
use crate::wfc;

/// Axis-aligned cell rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn is_empty(&self) -> bool {
        self.height == 0 || self.width == 0
    }

    pub fn in_bounds(&self, height: usize, width: usize) -> bool {
        self.row + self.height <= height && self.col + self.width <= width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    /// Missing entries are drawn uniformly from the request seed.
    pub labels: [Option<Level>; FEATURE_COUNT],
    pub seed: u64,
    pub sampling: SamplingParams,
    /// WFC restarts after a contradiction; 0 for scoring runs.
    pub restarts: usize,
    pub base_layout: Option<Layout>,
    pub region: Option<Region>,
}

impl GenerationRequest {
    pub fn new(labels: Labels, seed: u64) -> Self {
        GenerationRequest {
            labels: labels.map(Some),
            seed,
            sampling: SamplingParams::default(),
            restarts: 0,
            base_layout: None,
            region: None,
        }
    }

    pub fn resolve_labels(&self) -> Labels {
        let mut rng = child_rng(self.seed, &[2]);
        let mut out = [Level::Mid; FEATURE_COUNT];
        for (o, l) in out.iter_mut().zip(&self.labels) {
            // draw for every slot so fixed slots do not shift the others
            let drawn = Level::ALL[rng.random_range(0..3)];
            *o = l.unwrap_or(drawn);
        }
        out
    }
}

/// Where a regeneration failed relative to the erased region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeamDiagnostic {
    pub cell: Option<usize>,
    pub row: Option<usize>,
    pub col: Option<usize>,
    /// The failing cell lies inside the region next to a preserved cell.
    pub on_seam: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub schema_version: u32,
    pub labels: Labels,
    pub prompt: String,
    pub seed: u64,
    pub coarse: CategoryGrid,
    pub detailed: Option<Layout>,
    pub features: Option<FeatureVector>,
    pub performance: Option<f64>,
    pub validity: bool,
    /// Per-feature label match under the checkpoint's schema (valid results only).
    pub fidelity: Option<[bool; FEATURE_COUNT]>,
    /// The model emitted the end token early.
    pub flagged_short: bool,
    /// Border cells whose category was incompatible with the site border.
    pub relaxations: usize,
    pub contradiction_cell: Option<usize>,
    pub seam: Option<SeamDiagnostic>,
}

/// Allowed tiles per cell for a coarse plan. Border cells are intersected
/// with the border convention; an empty intersection falls back to the
/// border set and counts as a relaxation.
pub fn coarse_to_preconstraints(
    coarse: &CategoryGrid,
    catalog: &TileCatalog,
    border: &SiteBorder,
) -> (Preconstraints, usize) {
    let sets: Vec<TileSet> = FunctionalCategory::ALL.iter().map(|&c| catalog.category_set(c)).collect();
    let mut relaxations = 0;
    let mut pre = Preconstraints::new();
    for (cell, cat) in coarse.cells.iter().enumerate() {
        let mut set = sets[cat.index()].clone();
        if let Some(b) = border.border_set(coarse.height, coarse.width, cell) {
            set.intersect_with(b);
            if set.is_empty() {
                set = b.clone();
                relaxations += 1;
            }
        }
        pre.insert(cell, set);
    }
    (pre, relaxations)
}

/// Runtime pieces shared by every request.
pub struct Pipeline<'a> {
    pub catalog: &'a TileCatalog,
    pub rules: &'a AdjacencyRules,
    pub border: SiteBorder,
    pub features: FeatureConfig,
    pub model: &'a Model<f32>,
    pub schema: &'a LabelSchema,
    pub height: usize,
    pub width: usize,
    weights: Vec<f64>,
}

impl<'a> Pipeline<'a> {
    /// Fails with a hash mismatch unless the checkpoint was trained with
    /// this catalog.
    pub fn new(
        catalog: &'a TileCatalog,
        rules: &'a AdjacencyRules,
        checkpoint: &'a Checkpoint,
        features: FeatureConfig,
    ) -> Result<Self> {
        checkpoint.check_compat(&catalog.hash(), None)?;
        let h = &checkpoint.header;
        Ok(Pipeline {
            catalog,
            rules,
            border: SiteBorder::standard(catalog),
            features,
            model: &checkpoint.model,
            schema: &h.label_schema,
            height: h.height,
            width: h.width,
            weights: solver_weights(rules),
        })
    }

    /// A pipeline over an in-memory model (no checkpoint file).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        catalog: &'a TileCatalog,
        rules: &'a AdjacencyRules,
        model: &'a Model<f32>,
        schema: &'a LabelSchema,
        features: FeatureConfig,
        height: usize,
        width: usize,
    ) -> Self {
        Pipeline {
            catalog,
            rules,
            border: SiteBorder::standard(catalog),
            features,
            model,
            schema,
            height,
            width,
            weights: solver_weights(rules),
        }
    }

    fn solve(&self, pre: &Preconstraints, seed: u64, restarts: usize) -> Result<wfc::SolveOutcome> {
        let mut last = None;
        for attempt in 0..=restarts {
            let s = if attempt == 0 {
                derive_seed(seed, &[1])
            } else {
                derive_seed(seed, &[1, attempt as u64])
            };
            let out = wfc::solve(self.height, self.width, self.rules, &self.weights, pre, s)?;
            if out.is_complete() {
                return Ok(out);
            }
            last = Some(out);
        }
        Ok(last.expect("at least one attempt"))
    }

    fn finish(
        &self,
        labels: Labels,
        seed: u64,
        coarse: CategoryGrid,
        flagged_short: bool,
        relaxations: usize,
        out: wfc::SolveOutcome,
    ) -> GenerationResult {
        let (features, performance, fidelity) = match &out.layout {
            Some(l) => {
                let f = features::evaluate(l, self.catalog, &self.features);
                let got = self.schema.labels(&f);
                let mut fid = [false; FEATURE_COUNT];
                for i in 0..FEATURE_COUNT {
                    fid[i] = got[i] == labels[i];
                }
                (Some(f), Some(features::performance(l, self.catalog)), Some(fid))
            }
            None => (None, None, None),
        };
        GenerationResult {
            schema_version: SCHEMA_VERSION,
            labels,
            prompt: labels_to_prompt(&labels),
            seed,
            coarse,
            validity: out.is_complete(),
            detailed: out.layout,
            features,
            performance,
            fidelity,
            flagged_short,
            relaxations,
            contradiction_cell: out.contradiction_cell,
            seam: None,
        }
    }

    /// Samples a coarse plan and refines it with WFC. A contradiction yields
    /// `validity = false`, not an error.
    pub fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult> {
        if req.base_layout.is_some() || req.region.is_some() {
            return self.regenerate_region(req);
        }
        let labels = req.resolve_labels();
        let sampled = self.model.sample(&labels, self.height, self.width, &req.sampling, derive_seed(req.seed, &[0]))?;
        let (pre, relax) = coarse_to_preconstraints(&sampled.grid, self.catalog, &self.border);
        let out = self.solve(&pre, req.seed, req.restarts)?;
        Ok(self.finish(labels, req.seed, sampled.grid, sampled.flagged_short, relax, out))
    }

    /// Resamples the categories inside `region` with the outside forced to
    /// the base layout, keeps every outside tile, and re-solves.
    pub fn regenerate_region(&self, req: &GenerationRequest) -> Result<GenerationResult> {
        let base = req
            .base_layout
            .as_ref()
            .ok_or_else(|| Error::Config("regeneration needs a base layout".into()))?;
        let region = req
            .region
            .ok_or_else(|| Error::Config("regeneration needs a region".into()))?;
        if (base.height, base.width) != (self.height, self.width) || base.tiles.len() != self.height * self.width {
            return Err(Error::Shape {
                expected: format!("{}x{} base layout", self.height, self.width),
                got: format!("{}x{} with {} tiles", base.height, base.width, base.tiles.len()),
            });
        }
        if !region.in_bounds(self.height, self.width) {
            return Err(Error::Config(format!("region {region:?} is out of bounds")));
        }
        if base.tiles.iter().any(|t| t.index() >= self.catalog.len()) {
            return Err(Error::UnknownTile(
                base.tiles.iter().find(|t| t.index() >= self.catalog.len()).unwrap().index(),
            ));
        }
        if let Some(v) = self.rules.violations(base).first() {
            return Err(Error::Domain(format!("base layout violates adjacency at cell {}", v.cell)));
        }
        let labels = req.resolve_labels();
        let base_cats = base.categories(self.catalog)?;
        if region.is_empty() {
            let out = wfc::SolveOutcome {
                status: wfc::SolveStatus::Complete,
                layout: Some(base.clone()),
                collapse_count: 0,
                contradiction_cell: None,
            };
            return Ok(self.finish(labels, req.seed, base_cats, false, 0, out));
        }
        let w = self.width;
        let forced: Vec<Option<FunctionalCategory>> = (0..self.height * w)
            .map(|i| (!region.contains(i / w, i % w)).then(|| base_cats.cells[i]))
            .collect();
        let sampled = self.model.sample_constrained(
            &labels,
            self.height,
            self.width,
            &forced,
            &req.sampling,
            derive_seed(req.seed, &[0]),
        )?;
        let (mut pre, relax) = coarse_to_preconstraints(&sampled.grid, self.catalog, &self.border);
        let n = self.catalog.len();
        for (i, f) in forced.iter().enumerate() {
            if f.is_some() {
                pre.insert(i, TileSet::from_ids(n, [base.tiles[i]]));
            }
        }
        let out = self.solve(&pre, req.seed, req.restarts)?;
        let mut res = self.finish(labels, req.seed, sampled.grid, sampled.flagged_short, relax, out);
        if !res.validity {
            let cell = res.contradiction_cell;
            let on_seam = cell.is_some_and(|c| {
                let (r, cc) = (c / w, c % w);
                region.contains(r, cc)
                    && [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)].iter().any(|(dr, dc)| {
                        let (nr, nc) = (r as isize + dr, cc as isize + dc);
                        nr >= 0
                            && nc >= 0
                            && (nr as usize) < self.height
                            && (nc as usize) < w
                            && !region.contains(nr as usize, nc as usize)
                    })
            });
            res.seam = Some(SeamDiagnostic {
                cell,
                row: cell.map(|c| c / w),
                col: cell.map(|c| c % w),
                on_seam,
            });
        }
        Ok(res)
    }
}

/// Solver weights: example frequencies, with tiles never seen in the
/// examples given the smallest observed weight so a category preconstraint
/// is never zero-weight.
pub fn solver_weights(rules: &AdjacencyRules) -> Vec<f64> {
    let w = rules.weights();
    let floor = w.iter().cloned().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    w.iter().map(|&x| if x > 0.0 { x } else { floor }).collect()
}
