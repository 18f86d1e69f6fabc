use proptest::prelude::*;

use qdtile::dataset::{detokenize, labels_from_index, labels_index, labels_to_prompt, parse_prompt, tokenize_categories};
use qdtile::lm::{Model, ModelConfig, SamplingParams};
use qdtile::pipeline::solver_weights;
use qdtile::qd::{mutate, ArchiveBounds, FixedTile, W_MAX, W_MIN};
use qdtile::rng::rng_from_seed;
use qdtile::wfc::{entropy, solve, WaveCell};
use qdtile::{
    AdjacencyRules, Archive, CategoryGrid, Elite, FeatureVector, FunctionalCategory, Genome, Layout, SiteBorder,
    SolveStatus, TileCatalog, TileId, TileSet,
};

fn setup() -> (TileCatalog, AdjacencyRules) {
    let c = TileCatalog::representative();
    let r = AdjacencyRules::representative(&c).unwrap();
    (c, r)
}

fn category() -> impl Strategy<Value = FunctionalCategory> {
    (0usize..7).prop_map(|i| FunctionalCategory::from_index(i).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn complete_solves_obey_rules_and_border(
        seed in any::<u64>(),
        jitter in prop::collection::vec(0.1f64..10.0, 41),
        h in 3usize..9,
        w in 3usize..13,
    ) {
        let (cat, rules) = setup();
        let weights: Vec<f64> = solver_weights(&rules).iter().zip(&jitter).map(|(a, b)| a * b).collect();
        let border = SiteBorder::standard(&cat);
        let out = solve(h, w, &rules, &weights, &border.preconstraints(h, w), seed).unwrap();
        match out.status {
            SolveStatus::Complete => {
                let l = out.layout.unwrap();
                prop_assert!(rules.violations(&l).is_empty());
                for cell in 0..h * w {
                    if let Some(s) = border.border_set(h, w, cell) {
                        prop_assert!(s.contains(l.tiles[cell]));
                    }
                }
            }
            _ => prop_assert!(out.contradiction_cell.is_some_and(|c| c < h * w)),
        }
    }

    #[test]
    fn entropy_is_bounded(weights in prop::collection::vec(1e-3f64..1e3, 1..60), mask in any::<u64>()) {
        let n = weights.len();
        let ids: Vec<TileId> = (0..n).filter(|i| mask >> (i % 64) & 1 == 1).map(TileId::new).collect();
        prop_assume!(!ids.is_empty());
        let cell = WaveCell { candidates: TileSet::from_ids(n, ids.iter().copied()), collapsed: false };
        let e = entropy(&cell, &weights).unwrap();
        prop_assert!(e >= -1e-12 && e <= (ids.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn qd_score_never_decreases(stream in prop::collection::vec((0usize..12, 0usize..96, 0.0f64..96.0, 0.0f64..1.0), 1..300)) {
        let mut a = Archive::new([5; 5], ArchiveBounds::scaled(8, 12, &Default::default())).unwrap();
        let mut last = 0.0;
        for (i, (parks, units, carbon, perf)) in stream.into_iter().enumerate() {
            a.insert(Elite {
                genome: Genome::unit(1, i as u64),
                layout: Layout::filled(1, 1, TileId::new(0)),
                features: FeatureVector { num_parks: parks, largest_park: parks * 3, total_units: units / 4, carbon, privacy: perf },
                performance: perf,
            });
            let s = a.qd_score();
            prop_assert!(s >= last);
            prop_assert!(a.len() <= a.capacity());
            last = s;
        }
    }

    #[test]
    fn mutation_keeps_genomes_well_formed(seed in any::<u64>(), fixed in prop::collection::btree_set(0usize..96, 0..12)) {
        let (cat, _) = setup();
        let layout = Layout::new(8, 12, (0..96).map(|i| TileId::new(i % cat.len())).collect()).unwrap();
        let genome = Genome {
            fixed_tiles: fixed.iter().map(|&c| FixedTile { tile: layout.tiles[c], row: c / 12, col: c % 12 }).collect(),
            ..Genome::unit(cat.len(), 0)
        };
        let parent = Elite { genome, layout: layout.clone(), features: FeatureVector { num_parks: 0, largest_park: 0, total_units: 0, carbon: 0.0, privacy: 0.0 }, performance: 0.0 };
        let mut rng = rng_from_seed(seed);
        let (child, rep) = mutate(&parent, &mut rng, 0.3).unwrap();
        prop_assert!(child.tile_weights.iter().all(|&w| (W_MIN..=W_MAX).contains(&w)));
        prop_assert!((1..=4).contains(&rep.requested) && rep.applied <= rep.requested);
        let mut cells: Vec<usize> = child.fixed_tiles.iter().map(|f| f.row * 12 + f.col).collect();
        cells.sort_unstable();
        cells.dedup();
        prop_assert_eq!(cells.len(), child.fixed_tiles.len());
        for f in &child.fixed_tiles {
            prop_assert_eq!(layout.get(f.row, f.col), f.tile);
        }
        child.validate(cat.len(), 8, 12).unwrap();
    }

    #[test]
    fn tokens_round_trip(cells in prop::collection::vec(category(), 1..60), w in 1usize..8) {
        let width = w.min(cells.len());
        let height = cells.len() / width;
        let grid = CategoryGrid { height, width, cells: cells[..height * width].to_vec() };
        let text = tokenize_categories(&grid);
        prop_assert_eq!(text.chars().count(), height * width + 2);
        prop_assert_eq!(detokenize(&text, height, width).unwrap(), grid);
    }

    #[test]
    fn prompts_round_trip(i in 0usize..243) {
        let labels = labels_from_index(i);
        prop_assert_eq!(labels_index(&labels), i);
        prop_assert_eq!(parse_prompt(&labels_to_prompt(&labels)).unwrap(), labels);
    }

    #[test]
    fn layout_text_round_trips(tiles in prop::collection::vec(0usize..41, 12), h in 1usize..4) {
        let w = 12 / h.max(1);
        let l = Layout::new(h, w, tiles[..h * w].iter().map(|&t| TileId::new(t)).collect()).unwrap();
        prop_assert_eq!(Layout::from_text(&l.to_text()).unwrap(), l);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampling_keeps_forced_cells(seed in any::<u64>(), mask in prop::collection::vec(prop::option::weighted(0.3, category()), 24), label in 0usize..243) {
        let cfg = ModelConfig { context: 26, ..ModelConfig::micro() };
        let m: Model<f32> = Model::init(cfg, 5).unwrap();
        let s = m.sample_constrained(&labels_from_index(label), 4, 6, &mask, &SamplingParams::default(), seed).unwrap();
        prop_assert_eq!(s.grid.cells.len(), 24);
        for (cell, f) in mask.iter().enumerate() {
            if let Some(c) = f {
                prop_assert_eq!(s.grid.cells[cell], *c);
            }
        }
    }
}
