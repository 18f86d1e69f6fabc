//! Tile-mode Wave Function Collapse.
//!
//! A [`Wave`] holds one candidate bitset per cell. Each step collapses the
//! uncollapsed cell of minimum entropy (ties broken uniformly with the wave's
//! seeded generator), picks a state by weight, and propagates arc-consistency
//! over the 4-neighbourhood until a fix-point or a contradiction.
//! Out-of-bounds neighbours impose no constraint.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::catalog::{AdjacencyRules, Direction, TileId};
use crate::error::{Error, Result};
use crate::layout::{neighbor, Layout};
use crate::rng::{rng_from_seed, Rng};
use crate::site::Preconstraints;
use crate::tileset::{iter_words, TileSet};

/// Snapshot of one wave cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WaveCell {
    pub candidates: TileSet,
    pub collapsed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Complete,
    Contradiction,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub layout: Option<Layout>,
    /// Number of collapse steps that chose between two or more states.
    pub collapse_count: usize,
    /// Cell whose candidate set emptied, on contradiction.
    pub contradiction_cell: Option<usize>,
}

impl SolveOutcome {
    pub fn is_complete(&self) -> bool {
        self.status == SolveStatus::Complete
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match (self.status, self.contradiction_cell) {
            (SolveStatus::Complete, _) => s.push_str("status complete\n"),
            (SolveStatus::Contradiction, Some(c)) => writeln!(s, "status contradiction {c}").unwrap(),
            (SolveStatus::Contradiction, None) => s.push_str("status contradiction\n"),
        }
        writeln!(s, "collapses {}", self.collapse_count).unwrap();
        if let Some(l) = &self.layout {
            s.push_str(&l.to_text());
        }
        s
    }
}

/// The cell that emptied during propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Contradiction {
    pub cell: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Collapsed { cell: usize, tile: TileId },
    Complete,
}

/// Shannon entropy of a weighted candidate set: `ln Σw − Σ w ln w / Σw`.
pub fn entropy(cell: &WaveCell, weights: &[f64]) -> Result<f64> {
    if cell.collapsed {
        return Err(Error::Domain("entropy of a collapsed cell".into()));
    }
    if cell.candidates.is_empty() {
        return Err(Error::Domain("entropy of an empty cell".into()));
    }
    for t in cell.candidates.iter() {
        if !(weights[t.index()] > 0.0) {
            return Err(Error::Domain(format!("non-positive weight for tile {t}")));
        }
    }
    Ok(entropy_words(cell.candidates.words(), weights))
}

#[inline]
fn entropy_words(words: &[u64], weights: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut sum_wlw = 0.0;
    for t in iter_words(words) {
        let w = weights[t.index()];
        if w > 0.0 {
            sum += w;
            sum_wlw += w * w.ln();
        }
    }
    if sum > 0.0 {
        sum.ln() - sum_wlw / sum
    } else {
        0.0
    }
}

pub struct Wave<'r> {
    height: usize,
    width: usize,
    rules: &'r AdjacencyRules,
    weights: Vec<f64>,
    words: usize,
    cells: Vec<u64>,
    entropy: Vec<f64>,
    rng: Rng,
    collapse_count: usize,
    contradiction: Option<usize>,
    stack: Vec<usize>,
    queued: Vec<bool>,
    support: Vec<u64>,
}

impl<'r> Wave<'r> {
    /// Builds a wave with every cell holding the full catalog except the
    /// preconstrained cells, then propagates to a fix-point. A preconstraint
    /// that propagates to an empty cell leaves the wave in contradiction;
    /// malformed inputs are configuration errors.
    pub fn init(
        height: usize,
        width: usize,
        rules: &'r AdjacencyRules,
        weights: &[f64],
        preconstraints: &Preconstraints,
        seed: u64,
    ) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Config(format!("grid must be at least 2x2, got {height}x{width}")));
        }
        let n = rules.n_tiles();
        if weights.len() != n {
            return Err(Error::Config(format!("expected {n} weights, got {}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("weights must be finite and non-negative".into()));
        }
        let words = rules.words();
        let full = TileSet::full(n);
        let mut cells = Vec::with_capacity(height * width * words);
        for _ in 0..height * width {
            cells.extend_from_slice(full.words());
        }
        for (&cell, set) in preconstraints {
            if cell >= height * width {
                return Err(Error::Config(format!("preconstraint cell {cell} out of bounds")));
            }
            if set.capacity() != n || set.is_empty() {
                return Err(Error::Config(format!("preconstraint for cell {cell} is empty or mis-sized")));
            }
            if !set.iter().any(|t| weights[t.index()] > 0.0) {
                return Err(Error::Config(format!("preconstraint for cell {cell} has no positive weight")));
            }
            cells[cell * words..(cell + 1) * words].copy_from_slice(set.words());
        }
        let mut wave = Wave {
            height,
            width,
            rules,
            weights: weights.to_vec(),
            words,
            cells,
            entropy: vec![0.0; height * width],
            rng: rng_from_seed(seed),
            collapse_count: 0,
            contradiction: None,
            stack: Vec::new(),
            queued: vec![false; height * width],
            support: vec![0; words],
        };
        for c in 0..height * width {
            wave.refresh_entropy(c);
        }
        let all: Vec<usize> = (0..height * width).collect();
        if let Err(c) = wave.propagate_from(&all) {
            wave.contradiction = Some(c.cell);
        }
        Ok(wave)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn contradiction(&self) -> Option<usize> {
        self.contradiction
    }

    pub fn collapse_count(&self) -> usize {
        self.collapse_count
    }

    #[inline]
    fn cell_words(&self, cell: usize) -> &[u64] {
        &self.cells[cell * self.words..(cell + 1) * self.words]
    }

    #[inline]
    fn count(&self, cell: usize) -> u32 {
        self.cell_words(cell).iter().map(|w| w.count_ones()).sum()
    }

    pub fn cell(&self, cell: usize) -> WaveCell {
        let candidates = TileSet::from_words(self.rules.n_tiles(), self.cell_words(cell));
        let collapsed = candidates.len() == 1;
        WaveCell {
            candidates,
            collapsed,
        }
    }

    /// Σ |candidates| over all cells.
    pub fn total_candidates(&self) -> usize {
        self.cells.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_fully_collapsed(&self) -> bool {
        (0..self.height * self.width).all(|c| self.count(c) == 1)
    }

    fn refresh_entropy(&mut self, cell: usize) {
        let e = entropy_words(&self.cells[cell * self.words..(cell + 1) * self.words], &self.weights);
        self.entropy[cell] = e;
    }

    /// Collapses the minimum-entropy uncollapsed cell. Does not propagate.
    pub fn collapse_step(&mut self) -> Step {
        let n = self.height * self.width;
        let mut min = f64::INFINITY;
        for c in 0..n {
            if self.count(c) > 1 && self.entropy[c] < min {
                min = self.entropy[c];
            }
        }
        if min == f64::INFINITY {
            return Step::Complete;
        }
        let tol = 1e-12 * min.abs().max(1.0);
        let tied: Vec<usize> = (0..n)
            .filter(|&c| self.count(c) > 1 && self.entropy[c] - min <= tol)
            .collect();
        let cell = if tied.len() == 1 {
            tied[0]
        } else {
            tied[self.rng.random_range(0..tied.len())]
        };
        let tile = self.choose_weighted(cell);
        let w = self.words;
        let slot = &mut self.cells[cell * w..(cell + 1) * w];
        slot.fill(0);
        slot[tile.index() / 64] |= 1 << (tile.index() % 64);
        self.refresh_entropy(cell);
        self.collapse_count += 1;
        Step::Collapsed { cell, tile }
    }

    fn choose_weighted(&mut self, cell: usize) -> TileId {
        let candidates: Vec<TileId> = iter_words(self.cell_words(cell)).collect();
        let mut cdf = Vec::with_capacity(candidates.len());
        let mut total = 0.0;
        for t in &candidates {
            total += self.weights[t.index()].max(0.0);
            cdf.push(total);
        }
        if total <= 0.0 {
            return candidates[self.rng.random_range(0..candidates.len())];
        }
        let u = self.rng.random::<f64>() * total;
        let i = cdf.partition_point(|&c| c <= u).min(candidates.len() - 1);
        candidates[i]
    }

    /// Restricts `cell` to `allowed` without propagating; returns whether it changed.
    pub fn restrict(&mut self, cell: usize, allowed: &TileSet) -> bool {
        let w = self.words;
        let mut changed = false;
        for (a, b) in self.cells[cell * w..(cell + 1) * w].iter_mut().zip(allowed.words()) {
            let next = *a & *b;
            changed |= next != *a;
            *a = next;
        }
        if changed {
            self.refresh_entropy(cell);
        }
        changed
    }

    /// Propagates constraints outward from `origin` to a fix-point. Returns
    /// the number of cells whose candidate sets shrank.
    pub fn propagate(&mut self, origin: usize) -> std::result::Result<usize, Contradiction> {
        if self.count(origin) == 0 {
            self.contradiction = Some(origin);
            return Err(Contradiction { cell: origin });
        }
        let r = self.propagate_from(&[origin]);
        if let Err(c) = r {
            self.contradiction = Some(c.cell);
        }
        r
    }

    fn propagate_from(&mut self, seeds: &[usize]) -> std::result::Result<usize, Contradiction> {
        let w = self.words;
        let mut modified = 0;
        for &s in seeds {
            if !self.queued[s] {
                self.queued[s] = true;
                self.stack.push(s);
            }
        }
        while let Some(cell) = self.stack.pop() {
            self.queued[cell] = false;
            for dir in Direction::ALL {
                let Some(nb) = neighbor(self.height, self.width, cell, dir) else {
                    continue;
                };
                self.support.fill(0);
                for t in iter_words(&self.cells[cell * w..(cell + 1) * w]) {
                    for (s, a) in self.support.iter_mut().zip(self.rules.allowed_words(t.index(), dir)) {
                        *s |= *a;
                    }
                }
                let mut changed = false;
                let mut empty = true;
                for (c, s) in self.cells[nb * w..(nb + 1) * w].iter_mut().zip(&self.support) {
                    let next = *c & *s;
                    changed |= next != *c;
                    empty &= next == 0;
                    *c = next;
                }
                if changed {
                    modified += 1;
                    self.refresh_entropy(nb);
                    if empty {
                        for &q in &self.stack {
                            self.queued[q] = false;
                        }
                        self.stack.clear();
                        return Err(Contradiction { cell: nb });
                    }
                    if !self.queued[nb] {
                        self.queued[nb] = true;
                        self.stack.push(nb);
                    }
                }
            }
        }
        Ok(modified)
    }

    fn layout(&self) -> Option<Layout> {
        let tiles: Option<Vec<TileId>> = (0..self.height * self.width)
            .map(|c| {
                let mut it = iter_words(self.cell_words(c));
                match (it.next(), it.next()) {
                    (Some(t), None) => Some(t),
                    _ => None,
                }
            })
            .collect();
        tiles.map(|tiles| Layout {
            height: self.height,
            width: self.width,
            tiles,
        })
    }

    /// Alternates collapse and propagation until complete or contradiction.
    pub fn run(mut self) -> SolveOutcome {
        loop {
            if let Some(cell) = self.contradiction {
                return SolveOutcome {
                    status: SolveStatus::Contradiction,
                    layout: None,
                    collapse_count: self.collapse_count,
                    contradiction_cell: Some(cell),
                };
            }
            match self.collapse_step() {
                Step::Complete => {
                    return SolveOutcome {
                        status: SolveStatus::Complete,
                        layout: self.layout(),
                        collapse_count: self.collapse_count,
                        contradiction_cell: None,
                    }
                }
                Step::Collapsed { cell, .. } => {
                    let _ = self.propagate(cell);
                }
            }
        }
    }
}

/// Convenience: init + run.
pub fn solve(
    height: usize,
    width: usize,
    rules: &AdjacencyRules,
    weights: &[f64],
    preconstraints: &Preconstraints,
    seed: u64,
) -> Result<SolveOutcome> {
    Ok(Wave::init(height, width, rules, weights, preconstraints, seed)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{AdjacencyRules, ExampleDesign, FunctionalCategory, TileCatalog};
    use crate::site::SiteBorder;
    use approx::assert_abs_diff_eq;

    fn t(i: usize) -> TileId {
        TileId::new(i)
    }

    fn free_rules(n: usize) -> AdjacencyRules {
        let mut r = AdjacencyRules::empty(n);
        for a in 0..n {
            for b in 0..n {
                for d in Direction::ALL {
                    r.allow(t(a), d, t(b));
                }
            }
        }
        r
    }

    fn cell(ids: &[usize], n: usize) -> WaveCell {
        WaveCell {
            candidates: TileSet::from_ids(n, ids.iter().map(|&i| t(i))),
            collapsed: ids.len() == 1,
        }
    }

    #[test]
    fn entropy_examples() {
        let w = [5.0, 1.0, 1.0, 1.0, 2.0];
        let single = WaveCell {
            candidates: TileSet::from_ids(5, [t(0)]),
            collapsed: false,
        };
        assert_abs_diff_eq!(entropy(&single, &w).unwrap(), 0.0, epsilon = 1e-12);
        let ones = [1.0; 4];
        assert_abs_diff_eq!(entropy(&cell(&[0, 1, 2, 3], 4), &ones).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(entropy(&cell(&[0, 1, 2, 3], 4), &ones).unwrap(), 1.386294, epsilon = 1e-6);
        let w2 = [2.0, 1.0];
        let expect = 3f64.ln() - 2.0 * 2f64.ln() / 3.0;
        assert_abs_diff_eq!(entropy(&cell(&[0, 1], 2), &w2).unwrap(), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(expect, 0.636514, epsilon = 1e-6);
    }

    #[test]
    fn entropy_of_collapsed_cell_is_domain_error() {
        assert!(matches!(entropy(&cell(&[1], 3), &[1.0; 3]), Err(Error::Domain(_))));
    }

    #[test]
    fn unconstrained_init_keeps_full_catalog() {
        let cat = TileCatalog::representative();
        let rules = AdjacencyRules::representative(&cat).unwrap();
        let wave = Wave::init(5, 6, &rules, rules.weights(), &Preconstraints::new(), 1).unwrap();
        for c in 0..30 {
            assert_eq!(wave.cell(c).candidates.len(), cat.len());
        }
    }

    #[test]
    fn border_preconstraints_hold_after_init() {
        let cat = TileCatalog::representative();
        let rules = AdjacencyRules::representative(&cat).unwrap();
        let border = SiteBorder::standard(&cat);
        let (h, w) = (8, 12);
        let pre = border.preconstraints(h, w);
        let wave = Wave::init(h, w, &rules, rules.weights(), &pre, 3).unwrap();
        assert!(wave.contradiction().is_none());
        for (&c, set) in &pre {
            let cands = wave.cell(c).candidates;
            assert!(cands.is_subset(set));
        }
    }

    #[test]
    fn mutually_illegal_preconstraints_contradict_at_init() {
        let cat = TileCatalog::representative();
        let rules = AdjacencyRules::representative(&cat).unwrap();
        // a core facing east needs a corridor to its east; put an empty tile there
        let core = cat
            .ids()
            .find(|&id| {
                let s = cat.state(id);
                s.category == FunctionalCategory::Core && s.world_dir(Direction::South) == Direction::East
            })
            .unwrap();
        let empty = cat.allowed_tiles_for_category(FunctionalCategory::Empty)[0];
        assert!(!rules.is_allowed(core, Direction::East, empty));
        let mut pre = Preconstraints::new();
        pre.insert(0, TileSet::from_ids(cat.len(), [core]));
        pre.insert(1, TileSet::from_ids(cat.len(), [empty]));
        let wave = Wave::init(3, 3, &rules, rules.weights(), &pre, 0).unwrap();
        assert!(wave.contradiction().is_some());
        let out = wave.run();
        assert_eq!(out.status, SolveStatus::Contradiction);
        assert!(out.layout.is_none());
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        let rules = free_rules(2);
        assert!(Wave::init(1, 5, &rules, &[1.0, 1.0], &Preconstraints::new(), 0).is_err());
        let mut pre = Preconstraints::new();
        pre.insert(0, TileSet::empty(2));
        assert!(Wave::init(2, 2, &rules, &[1.0, 1.0], &pre, 0).is_err());
        let mut pre = Preconstraints::new();
        pre.insert(0, TileSet::from_ids(2, [t(1)]));
        assert!(Wave::init(2, 2, &rules, &[1.0, 0.0], &pre, 0).is_err());
    }

    #[test]
    fn forced_choice_collapses_deterministically() {
        let rules = free_rules(2);
        let mut pre = Preconstraints::new();
        pre.insert(0, TileSet::from_ids(2, [t(0)]));
        pre.insert(1, TileSet::from_ids(2, [t(1)]));
        pre.insert(2, TileSet::from_ids(2, [t(1)]));
        let mut wave = Wave::init(2, 2, &rules, &[1.0, 1.0], &pre, 9).unwrap();
        wave.restrict(3, &TileSet::from_ids(2, [t(0)]));
        assert_eq!(wave.collapse_step(), Step::Complete);
        let out = wave.run();
        assert_eq!(out.layout.unwrap().tiles, vec![t(0), t(1), t(1), t(0)]);
        assert_eq!(out.collapse_count, 0);
    }

    #[test]
    fn tie_break_is_uniform_over_seeds() {
        let rules = free_rules(2);
        let mut hits = 0;
        let trials = 10_000;
        for seed in 0..trials {
            let mut pre = Preconstraints::new();
            pre.insert(0, TileSet::from_ids(2, [t(0)]));
            pre.insert(3, TileSet::from_ids(2, [t(0)]));
            let mut wave = Wave::init(2, 2, &rules, &[1.0, 1.0], &pre, seed).unwrap();
            match wave.collapse_step() {
                Step::Collapsed { cell: 1, .. } => hits += 1,
                Step::Collapsed { cell: 2, .. } => {}
                other => panic!("{other:?}"),
            }
        }
        let p = hits as f64 / trials as f64;
        assert!((p - 0.5).abs() <= 0.02, "{p}");
    }

    #[test]
    fn weighted_selection_matches_weights() {
        let rules = free_rules(2);
        let mut a = 0;
        let trials = 10_000;
        for seed in 0..trials {
            let mut pre = Preconstraints::new();
            for c in 1..4 {
                pre.insert(c, TileSet::from_ids(2, [t(0)]));
            }
            let mut wave = Wave::init(2, 2, &rules, &[9.0, 1.0], &pre, seed).unwrap();
            match wave.collapse_step() {
                Step::Collapsed { cell: 0, tile } => a += (tile == t(0)) as usize,
                other => panic!("{other:?}"),
            }
        }
        let p = a as f64 / trials as f64;
        assert!((p - 0.9).abs() <= 0.02, "{p}");
    }

    #[test]
    fn propagation_applies_direct_rule() {
        // tile 0 allows only tile 1 to its east; everything else is free
        let mut rules = AdjacencyRules::empty(3);
        for a in 0..3 {
            for b in 0..3 {
                for d in Direction::ALL {
                    if !((a == 0 && d == Direction::East) || (b == 0 && d == Direction::West)) {
                        rules.allow(t(a), d, t(b));
                    }
                }
            }
        }
        rules.allow(t(0), Direction::East, t(1));
        let mut wave = Wave::init(2, 3, &rules, &[1.0; 3], &Preconstraints::new(), 0).unwrap();
        wave.restrict(0, &TileSet::from_ids(3, [t(0)]));
        let modified = wave.propagate(0).unwrap();
        assert!(modified >= 1);
        assert_eq!(wave.cell(1).candidates, TileSet::from_ids(3, [t(1)]));
    }

    #[test]
    fn inconsequential_removal_modifies_nothing() {
        let rules = free_rules(3);
        let mut wave = Wave::init(3, 3, &rules, &[1.0; 3], &Preconstraints::new(), 0).unwrap();
        wave.restrict(4, &TileSet::from_ids(3, [t(0), t(1)]));
        assert_eq!(wave.propagate(4).unwrap(), 0);
    }

    #[test]
    fn fully_preconstrained_grid_returns_itself() {
        let cat = TileCatalog::representative();
        let rules = AdjacencyRules::representative(&cat).unwrap();
        let ex: &ExampleDesign = &cat.shipped_examples()[1];
        let l = &ex.layout;
        let pre: Preconstraints = l
            .tiles
            .iter()
            .enumerate()
            .map(|(c, &tile)| (c, TileSet::from_ids(cat.len(), [tile])))
            .collect();
        let out = solve(l.height, l.width, &rules, rules.weights(), &pre, 5).unwrap();
        assert!(out.is_complete());
        assert_eq!(out.layout.as_ref(), Some(l));
        assert_eq!(out.collapse_count, 0);
    }

    #[test]
    fn full_size_grid_assigns_every_cell() {
        let cat = TileCatalog::representative();
        let rules = AdjacencyRules::representative(&cat).unwrap();
        let border = SiteBorder::standard(&cat);
        let pre = border.preconstraints(15, 25);
        let mut done = None;
        for seed in 0..50 {
            let out = solve(15, 25, &rules, rules.weights(), &pre, seed).unwrap();
            if out.is_complete() {
                done = Some(out);
                break;
            }
        }
        let out = done.expect("some seed completes");
        let l = out.layout.unwrap();
        assert_eq!(l.len(), 375);
        assert!(rules.violations(&l).is_empty());
    }

    #[test]
    fn solve_is_deterministic() {
        let cat = TileCatalog::representative();
        let rules = AdjacencyRules::representative(&cat).unwrap();
        let pre = SiteBorder::standard(&cat).preconstraints(8, 12);
        let a = solve(8, 12, &rules, rules.weights(), &pre, 77).unwrap();
        let b = solve(8, 12, &rules, rules.weights(), &pre, 77).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }
}
