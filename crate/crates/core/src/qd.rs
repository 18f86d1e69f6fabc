//! MAP-Elites over the probabilistic WFC genome, and the random-rollout
//! baseline it is compared against.
//!
//! A genome is `(tile weights, fixed tiles, seed)`. It develops
//! deterministically into a layout: the solver runs with the catalog's
//! frequency weights scaled by the genome weights, the site border plus the
//! fixed tiles as preconstraints, and the genome seed. Contradictions are
//! retried with derived seeds up to `restarts` times.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{AdjacencyRules, TileCatalog, TileId};
use crate::error::{Error, Result};
use crate::features::{self, FeatureConfig, FeatureVector, FEATURE_COUNT};
use crate::hash::content_hash;
use crate::layout::Layout;
use crate::rng::{child_rng, derive_seed, Rng};
use crate::site::{Preconstraints, SiteBorder};
use crate::tileset::TileSet;
use crate::wfc;

pub const W_MIN: f64 = 1e-3;
pub const W_MAX: f64 = 1e3;
pub const MAX_MUTATION_TILES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FixedTile {
    pub tile: TileId,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub tile_weights: Vec<f64>,
    pub fixed_tiles: Vec<FixedTile>,
    pub seed: u64,
}

impl Genome {
    pub fn unit(n_tiles: usize, seed: u64) -> Self {
        Genome {
            tile_weights: vec![1.0; n_tiles],
            fixed_tiles: Vec::new(),
            seed,
        }
    }

    /// Unit weights jittered by `exp(N(0, sigma))`, no fixed tiles, random seed.
    pub fn random(n_tiles: usize, sigma: f64, rng: &mut Rng) -> Result<Self> {
        let noise = log_normal(sigma)?;
        let tile_weights = (0..n_tiles).map(|_| clamp_weight(noise.sample(rng).exp())).collect();
        Ok(Genome {
            tile_weights,
            fixed_tiles: Vec::new(),
            seed: rng.random(),
        })
    }

    pub fn validate(&self, n_tiles: usize, height: usize, width: usize) -> Result<()> {
        if self.tile_weights.len() != n_tiles {
            return Err(Error::Shape {
                expected: format!("{n_tiles} tile weights"),
                got: format!("{}", self.tile_weights.len()),
            });
        }
        if self.tile_weights.iter().any(|w| !(W_MIN..=W_MAX).contains(w)) {
            return Err(Error::Config(format!("tile weights must lie in [{W_MIN}, {W_MAX}]")));
        }
        let mut seen = BTreeSet::new();
        for f in &self.fixed_tiles {
            if f.row >= height || f.col >= width {
                return Err(Error::Config(format!("fixed tile at ({}, {}) out of bounds", f.row, f.col)));
            }
            if f.tile.index() >= n_tiles {
                return Err(Error::UnknownTile(f.tile.index()));
            }
            if !seen.insert((f.row, f.col)) {
                return Err(Error::Config(format!("two fixed tiles at ({}, {})", f.row, f.col)));
            }
        }
        Ok(())
    }
}

fn clamp_weight(w: f64) -> f64 {
    w.clamp(W_MIN, W_MAX)
}

fn log_normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("sigma {sigma}: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub genome: Genome,
    pub layout: Layout,
    pub features: FeatureVector,
    pub performance: f64,
}

/// Everything `develop` needs besides the genome.
#[derive(Clone, Debug)]
pub struct DevelopContext<'a> {
    pub catalog: &'a TileCatalog,
    pub rules: &'a AdjacencyRules,
    pub border: SiteBorder,
    pub height: usize,
    pub width: usize,
    pub restarts: usize,
    pub features: FeatureConfig,
}

impl<'a> DevelopContext<'a> {
    pub fn new(
        catalog: &'a TileCatalog,
        rules: &'a AdjacencyRules,
        height: usize,
        width: usize,
        restarts: usize,
        features: FeatureConfig,
    ) -> Self {
        DevelopContext {
            catalog,
            rules,
            border: SiteBorder::standard(catalog),
            height,
            width,
            restarts,
            features,
        }
    }

    pub fn develop(&self, genome: &Genome) -> Result<Option<Layout>> {
        develop(genome, self.rules, &self.border, self.height, self.width, self.restarts)
    }

    /// Develops and scores a genome; `None` when infeasible.
    pub fn evaluate(&self, genome: &Genome) -> Result<Option<Elite>> {
        Ok(self.develop(genome)?.map(|layout| self.score(genome.clone(), layout)))
    }

    pub fn score(&self, genome: Genome, layout: Layout) -> Elite {
        let features = features::evaluate(&layout, self.catalog, &self.features);
        let performance = features::performance(&layout, self.catalog);
        Elite {
            genome,
            layout,
            features,
            performance,
        }
    }
}

/// Seed used for attempt `attempt` of a develop call (attempt 0 is the genome seed).
pub fn attempt_seed(seed: u64, attempt: usize) -> u64 {
    if attempt == 0 {
        seed
    } else {
        derive_seed(seed, &[attempt as u64])
    }
}

/// Develops a genome into a layout; `Ok(None)` means every attempt contradicted.
/// A fixed tile that the border forbids makes the genome infeasible.
pub fn develop(
    genome: &Genome,
    rules: &AdjacencyRules,
    border: &SiteBorder,
    height: usize,
    width: usize,
    restarts: usize,
) -> Result<Option<Layout>> {
    let n = rules.n_tiles();
    genome.validate(n, height, width)?;
    let weights: Vec<f64> = rules
        .weights()
        .iter()
        .zip(&genome.tile_weights)
        .map(|(b, g)| b * g)
        .collect();
    let mut pre: Preconstraints = border.preconstraints(height, width);
    for f in &genome.fixed_tiles {
        let cell = f.row * width + f.col;
        let mut set = TileSet::from_ids(n, [f.tile]);
        if let Some(b) = pre.get(&cell) {
            set.intersect_with(b);
        }
        if set.is_empty() || weights[f.tile.index()] <= 0.0 {
            return Ok(None);
        }
        pre.insert(cell, set);
    }
    for attempt in 0..=restarts {
        let out = wfc::solve(height, width, rules, &weights, &pre, attempt_seed(genome.seed, attempt))?;
        if let Some(layout) = out.layout {
            return Ok(Some(layout));
        }
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationBranch {
    Add,
    Remove,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MutationReport {
    pub branch: MutationBranch,
    /// The drawn tile count k.
    pub requested: usize,
    /// How many tiles were actually added or removed.
    pub applied: usize,
    pub added: Vec<FixedTile>,
}

/// Applies all three mutation steps: log-normal weight noise, add or remove
/// k ~ U{1..4} fixed tiles (additions copied from the parent layout), fresh seed.
pub fn mutate(parent: &Elite, rng: &mut Rng, sigma: f64) -> Result<(Genome, MutationReport)> {
    let noise = log_normal(sigma)?;
    let layout = &parent.layout;
    let mut child = parent.genome.clone();
    for w in child.tile_weights.iter_mut() {
        *w = clamp_weight(*w * noise.sample(rng).exp());
    }
    let branch = if rng.random_bool(0.5) {
        MutationBranch::Add
    } else {
        MutationBranch::Remove
    };
    let requested = rng.random_range(1..=MAX_MUTATION_TILES);
    let mut added = Vec::new();
    let applied = match branch {
        MutationBranch::Remove => {
            let k = requested.min(child.fixed_tiles.len());
            let mut drop: Vec<usize> = sample(rng, child.fixed_tiles.len(), k).into_vec();
            drop.sort_unstable_by(|a, b| b.cmp(a));
            for i in drop {
                child.fixed_tiles.remove(i);
            }
            k
        }
        MutationBranch::Add => {
            let taken: BTreeSet<usize> = child.fixed_tiles.iter().map(|f| f.row * layout.width + f.col).collect();
            let free: Vec<usize> = (0..layout.len()).filter(|c| !taken.contains(c)).collect();
            let k = requested.min(free.len());
            for i in sample(rng, free.len(), k) {
                let cell = free[i];
                let f = FixedTile {
                    tile: layout.tiles[cell],
                    row: cell / layout.width,
                    col: cell % layout.width,
                };
                child.fixed_tiles.push(f);
                added.push(f);
            }
            k
        }
    };
    child.seed = rng.random();
    Ok((
        child,
        MutationReport {
            branch,
            requested,
            applied,
            added,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveBounds {
    pub lo: [f64; FEATURE_COUNT],
    pub hi: [f64; FEATURE_COUNT],
}

impl ArchiveBounds {
    /// Bounds sized for a 25×15 site: parks ≤ 12, units ≤ 60, park size and
    /// carbon up to the whole grid.
    pub fn reference(height: usize, width: usize, features: &FeatureConfig) -> Self {
        let area = (height * width) as f64;
        ArchiveBounds {
            lo: [0.0; FEATURE_COUNT],
            hi: [12.0, area, 60.0, features.c_tree * area, 1.0],
        }
    }

    /// The reference bounds with the two count features scaled by site area
    /// relative to 25×15. The park count keeps at least five one-park-wide bins.
    pub fn scaled(height: usize, width: usize, features: &FeatureConfig) -> Self {
        let mut b = Self::reference(height, width, features);
        let f = (height * width) as f64 / 375.0;
        b.hi[0] = (12.0 * f).max(5.0);
        b.hi[2] = (60.0 * f).max(1.0);
        b
    }
}

pub type BinIndex = [usize; FEATURE_COUNT];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Replaced,
    Rejected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub bins_per_dim: [usize; FEATURE_COUNT],
    pub bounds: ArchiveBounds,
    cells: BTreeMap<BinIndex, Elite>,
}

impl Archive {
    pub fn new(bins_per_dim: [usize; FEATURE_COUNT], bounds: ArchiveBounds) -> Result<Self> {
        if bins_per_dim.contains(&0) {
            return Err(Error::Config("bins per dimension must be positive".into()));
        }
        for i in 0..FEATURE_COUNT {
            if !(bounds.hi[i] > bounds.lo[i]) {
                return Err(Error::Config(format!("empty bound range for feature {i}")));
            }
        }
        Ok(Archive {
            bins_per_dim,
            bounds,
            cells: BTreeMap::new(),
        })
    }

    /// Bin of a feature vector, clamping outliers to edge bins; `None` on NaN.
    pub fn bin(&self, f: &FeatureVector) -> Option<BinIndex> {
        let v = f.to_array();
        let mut idx = [0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            if v[i].is_nan() {
                return None;
            }
            let t = (v[i] - self.bounds.lo[i]) / (self.bounds.hi[i] - self.bounds.lo[i]);
            let b = (t * self.bins_per_dim[i] as f64).floor();
            idx[i] = b.clamp(0.0, (self.bins_per_dim[i] - 1) as f64) as usize;
        }
        Some(idx)
    }

    pub fn insert(&mut self, candidate: Elite) -> InsertOutcome {
        if candidate.performance.is_nan() {
            log::warn!("rejected candidate with NaN performance");
            return InsertOutcome::Rejected;
        }
        let Some(key) = self.bin(&candidate.features) else {
            log::warn!("rejected candidate with NaN feature: {:?}", candidate.features);
            return InsertOutcome::Rejected;
        };
        match self.cells.get_mut(&key) {
            None => {
                self.cells.insert(key, candidate);
                InsertOutcome::Inserted
            }
            Some(inc) if candidate.performance > inc.performance => {
                *inc = candidate;
                InsertOutcome::Replaced
            }
            Some(_) => InsertOutcome::Rejected,
        }
    }

    pub fn get(&self, key: &BinIndex) -> Option<&Elite> {
        self.cells.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BinIndex, &Elite)> {
        self.cells.iter()
    }

    pub fn elites(&self) -> impl Iterator<Item = &Elite> {
        self.cells.values()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.bins_per_dim.iter().product()
    }

    pub fn coverage(&self) -> f64 {
        self.len() as f64 / self.capacity() as f64
    }

    pub fn qd_score(&self) -> f64 {
        self.cells.values().map(|e| e.performance).sum()
    }

    /// Writes a header line, then one line per filled cell.
    pub fn write_checkpoint<W: Write>(&self, out: &mut W, header: &ArchiveHeader) -> Result<()> {
        serde_json::to_writer(&mut *out, header)?;
        out.write_all(b"\n")?;
        for (bin, elite) in &self.cells {
            serde_json::to_writer(&mut *out, &ArchiveRecord { bin: *bin, elite: elite.clone() })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<(ArchiveHeader, Archive)> {
        let mut lines = input.lines();
        let head = lines.next().ok_or_else(|| Error::parse(1, "missing archive header"))??;
        let header: ArchiveHeader = serde_json::from_str(&head)?;
        if header.format != ARCHIVE_FORMAT {
            return Err(Error::parse(1, format!("unexpected format {:?}", header.format)));
        }
        let mut archive = Archive::new(header.bins_per_dim, header.bounds)?;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ArchiveRecord = serde_json::from_str(&line)?;
            if archive.bin(&rec.elite.features) != Some(rec.bin) {
                return Err(Error::parse(i + 2, "record features do not match its bin"));
            }
            if archive.cells.insert(rec.bin, rec.elite).is_some() {
                return Err(Error::parse(i + 2, "duplicate bin"));
            }
        }
        Ok((header, archive))
    }
}

pub const ARCHIVE_FORMAT: &str = "qdtile-archive/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format: String,
    pub bins_per_dim: [usize; FEATURE_COUNT],
    pub bounds: ArchiveBounds,
    pub config_hash: String,
    /// Iterations completed when the checkpoint was written.
    pub iterations_done: usize,
}

#[derive(Serialize, Deserialize)]
struct ArchiveRecord {
    bin: BinIndex,
    elite: Elite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapElitesConfig {
    pub height: usize,
    pub width: usize,
    pub init_count: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub bins_per_dim: usize,
    /// Weight mutation strength (log-space standard deviation).
    pub sigma: f64,
    /// Weight jitter of the initial random genomes.
    pub init_sigma: f64,
    pub restarts: usize,
    pub seed: u64,
    pub features: FeatureConfig,
    /// Defaults to [`ArchiveBounds::scaled`] when absent.
    pub bounds: Option<ArchiveBounds>,
}

impl Default for MapElitesConfig {
    fn default() -> Self {
        MapElitesConfig {
            height: 8,
            width: 12,
            init_count: 200,
            iterations: 90,
            batch_size: 20,
            bins_per_dim: 5,
            sigma: 0.3,
            init_sigma: 1.0,
            restarts: 9,
            seed: 0,
            features: FeatureConfig::default(),
            bounds: None,
        }
    }
}

impl MapElitesConfig {
    pub fn evaluations(&self) -> usize {
        self.init_count + self.iterations * self.batch_size
    }

    pub fn archive_bounds(&self) -> ArchiveBounds {
        self.bounds
            .unwrap_or_else(|| ArchiveBounds::scaled(self.height, self.width, &self.features))
    }

    pub fn hash(&self) -> String {
        content_hash(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Clone, Debug)]
pub struct MapElitesRun {
    pub archive: Archive,
    /// Every candidate that entered the archive (Inserted or Replaced), in order.
    pub history: Vec<Elite>,
    /// QD-score after initialisation, then after each iteration.
    pub qd_trace: Vec<f64>,
    pub evaluations: usize,
    pub infeasible: usize,
    pub iterations_done: usize,
}

impl MapElitesRun {
    pub fn header(&self, config: &MapElitesConfig) -> ArchiveHeader {
        ArchiveHeader {
            format: ARCHIVE_FORMAT.into(),
            bins_per_dim: self.archive.bins_per_dim,
            bounds: self.archive.bounds,
            config_hash: config.hash(),
            iterations_done: self.iterations_done,
        }
    }

    /// Designs for a training set: the final elites first, then earlier
    /// elites from the newest back, truncated to `count`.
    pub fn harvest(&self, count: usize) -> Vec<Elite> {
        let mut out: Vec<Elite> = self.archive.elites().cloned().collect();
        let mut seen: BTreeSet<(u64, Vec<TileId>)> =
            out.iter().map(|e| (e.genome.seed, e.layout.tiles.clone())).collect();
        for e in self.history.iter().rev() {
            if out.len() >= count {
                break;
            }
            if seen.insert((e.genome.seed, e.layout.tiles.clone())) {
                out.push(e.clone());
            }
        }
        out.truncate(count);
        out
    }
}

fn record(run: &mut MapElitesRun, elite: Elite) {
    let keep = elite.clone();
    if run.archive.insert(elite) != InsertOutcome::Rejected {
        run.history.push(keep);
    }
}

pub fn run_map_elites(ctx: &DevelopContext, config: &MapElitesConfig) -> Result<MapElitesRun> {
    check_context(ctx, config.height, config.width, config.restarts)?;
    let archive = Archive::new([config.bins_per_dim; FEATURE_COUNT], config.archive_bounds())?;
    let mut run = MapElitesRun {
        archive,
        history: Vec::new(),
        qd_trace: Vec::new(),
        evaluations: 0,
        infeasible: 0,
        iterations_done: 0,
    };
    let n = ctx.rules.n_tiles();
    for i in 0..config.init_count {
        let mut rng = child_rng(config.seed, &[0, i as u64]);
        let genome = Genome::random(n, config.init_sigma, &mut rng)?;
        run.evaluations += 1;
        match ctx.evaluate(&genome)? {
            Some(e) => record(&mut run, e),
            None => run.infeasible += 1,
        }
    }
    if run.archive.is_empty() {
        return Err(Error::Config(format!(
            "none of the {} initial genomes developed into a layout",
            config.init_count
        )));
    }
    run.qd_trace.push(run.archive.qd_score());
    continue_map_elites(ctx, config, &mut run)?;
    Ok(run)
}

/// Runs the remaining iterations of `run` (resuming after `iterations_done`).
pub fn continue_map_elites(ctx: &DevelopContext, config: &MapElitesConfig, run: &mut MapElitesRun) -> Result<()> {
    check_context(ctx, config.height, config.width, config.restarts)?;
    if run.archive.is_empty() {
        return Err(Error::Config("cannot continue from an empty archive".into()));
    }
    for it in run.iterations_done..config.iterations {
        let parents: Vec<&Elite> = run.archive.elites().collect();
        let mut children = Vec::with_capacity(config.batch_size);
        for b in 0..config.batch_size {
            let mut rng = child_rng(config.seed, &[1, it as u64, b as u64]);
            let parent = parents[rng.random_range(0..parents.len())];
            let (child, _) = mutate(parent, &mut rng, config.sigma)?;
            children.push(child);
        }
        for child in children {
            run.evaluations += 1;
            match ctx.evaluate(&child)? {
                Some(e) => record(run, e),
                None => run.infeasible += 1,
            }
        }
        run.iterations_done = it + 1;
        run.qd_trace.push(run.archive.qd_score());
    }
    Ok(())
}

fn check_context(ctx: &DevelopContext, height: usize, width: usize, restarts: usize) -> Result<()> {
    if (ctx.height, ctx.width, ctx.restarts) != (height, width, restarts) {
        return Err(Error::Config(format!(
            "context is {}x{} with {} restarts, config asks for {}x{} with {}",
            ctx.height, ctx.width, ctx.restarts, height, width, restarts
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub map_elites: MapElitesConfig,
    /// Designs wanted in the dataset.
    pub count: usize,
    /// Independent runs allowed before giving up.
    pub max_runs: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            map_elites: MapElitesConfig {
                iterations: 500,
                ..Default::default()
            },
            count: 2000,
            max_runs: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub evaluations: usize,
    pub infeasible: usize,
    pub archive_size: usize,
    pub elites_ever: usize,
    pub taken: usize,
    pub final_qd_score: f64,
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub designs: Vec<Elite>,
    pub runs: Vec<RunSummary>,
}

/// Builds a MAP-Elites dataset: independent runs (seeds derived from the
/// master seed and the run index) each contribute every design that was ever
/// an elite, skipping layouts already taken, until `count` designs exist.
pub fn synthesize_map_elites(ctx: &DevelopContext, config: &SynthesisConfig) -> Result<Synthesis> {
    let mut designs = Vec::with_capacity(config.count);
    let mut seen: BTreeSet<Vec<TileId>> = BTreeSet::new();
    let mut runs = Vec::new();
    let mut r = 0u64;
    while designs.len() < config.count {
        if runs.len() >= config.max_runs {
            return Err(Error::Config(format!(
                "{} MAP-Elites runs yielded {} of {} designs",
                runs.len(),
                designs.len(),
                config.count
            )));
        }
        let cfg = MapElitesConfig {
            seed: derive_seed(config.map_elites.seed, &[r]),
            ..config.map_elites.clone()
        };
        let run = run_map_elites(ctx, &cfg)?;
        let before = designs.len();
        for e in &run.history {
            if designs.len() >= config.count {
                break;
            }
            if seen.insert(e.layout.tiles.clone()) {
                designs.push(e.clone());
            }
        }
        log::info!(
            "run {r}: {} elites ever, archive {}, took {}",
            run.history.len(),
            run.archive.len(),
            designs.len() - before
        );
        runs.push(RunSummary {
            seed: cfg.seed,
            evaluations: run.evaluations,
            infeasible: run.infeasible,
            archive_size: run.archive.len(),
            elites_ever: run.history.len(),
            taken: designs.len() - before,
            final_qd_score: run.archive.qd_score(),
        });
        r += 1;
    }
    Ok(Synthesis { designs, runs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub height: usize,
    pub width: usize,
    pub count: usize,
    pub init_sigma: f64,
    pub restarts: usize,
    pub seed: u64,
    pub features: FeatureConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            height: 8,
            width: 12,
            count: 2000,
            init_sigma: 1.0,
            restarts: 9,
            seed: 0,
            features: FeatureConfig::default(),
        }
    }
}

/// Repeated rollouts with random weights and seeds, no fixed tiles.
/// Returns exactly `count` designs; aborts when fewer than 1% of the first
/// 100+ attempts are feasible.
pub fn sample_wfc_baseline(ctx: &DevelopContext, config: &BaselineConfig) -> Result<Vec<Elite>> {
    check_context(ctx, config.height, config.width, config.restarts)?;
    let n = ctx.rules.n_tiles();
    let mut out = Vec::with_capacity(config.count);
    let mut attempts = 0usize;
    while out.len() < config.count {
        let mut rng = child_rng(config.seed, &[attempts as u64]);
        let genome = Genome::random(n, config.init_sigma, &mut rng)?;
        attempts += 1;
        if let Some(e) = ctx.evaluate(&genome)? {
            out.push(e);
        }
        if attempts >= 100 && out.len() * 100 < attempts {
            return Err(Error::Config(format!(
                "baseline feasibility {}/{} is below 1%",
                out.len(),
                attempts
            )));
        }
    }
    Ok(out)
}
