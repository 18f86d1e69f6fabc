//! Steering checks on a briefly trained small model.

use std::sync::OnceLock;

use qdtile::dataset::{build_dataset, fit_schema, Design, LabelSchema, Level};
use qdtile::lm::{encode_record, train, ExampleSeq, Model, ModelConfig, TrainConfig};
use qdtile::pipeline::{GenerationRequest, Pipeline, Region};
use qdtile::qd::{synthesize_map_elites, MapElitesConfig, SynthesisConfig};
use qdtile::{AdjacencyRules, DevelopContext, FeatureConfig, FeatureVector, TileCatalog};

const H: usize = 8;
const W: usize = 12;

struct Fixture {
    catalog: TileCatalog,
    rules: AdjacencyRules,
    model: Model<f32>,
    schema: LabelSchema,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let catalog = TileCatalog::representative();
        let rules = AdjacencyRules::representative(&catalog).unwrap();
        let ctx = DevelopContext::new(&catalog, &rules, H, W, 9, FeatureConfig::default());
        let syn = synthesize_map_elites(
            &ctx,
            &SynthesisConfig {
                map_elites: MapElitesConfig {
                    seed: 1,
                    ..Default::default()
                },
                count: 2000,
                max_runs: 64,
            },
        )
        .unwrap();
        let designs: Vec<Design> = syn.designs.iter().map(Design::from).collect();
        let fv: Vec<FeatureVector> = designs.iter().map(|d| d.features).collect();
        let schema = fit_schema(&fv, vec!["map-elites".into()]).unwrap();
        let (records, _) = build_dataset(&designs, &schema, &catalog, H, W);
        let examples: Vec<ExampleSeq> = records.iter().map(|r| encode_record(r).unwrap()).collect();
        let mut model = Model::init(ModelConfig::small(H * W + 2), 0).unwrap();
        let tc = TrainConfig {
            steps: 1500,
            warmup: 75,
            eval_every: 1500,
            ..Default::default()
        };
        train(&mut model, &examples, &tc).unwrap();
        Fixture {
            catalog,
            rules,
            model,
            schema,
        }
    })
}

fn pipeline(f: &Fixture) -> Pipeline<'_> {
    Pipeline::from_parts(&f.catalog, &f.rules, &f.model, &f.schema, FeatureConfig::default(), H, W)
}

fn only(feature: usize, level: Level) -> [Option<Level>; 5] {
    let mut l = [None; 5];
    l[feature] = Some(level);
    l
}

#[test]
fn high_park_prompt_yields_more_parks() {
    let f = fixture();
    let p = pipeline(f);
    let mean_parks = |level| {
        let mut total = 0.0;
        let mut n = 0;
        for seed in 0..100 {
            let req = GenerationRequest {
                labels: only(0, level),
                ..GenerationRequest::new([Level::Mid; 5], seed)
            };
            if let Some(fv) = p.generate(&req).unwrap().features {
                total += fv.num_parks as f64;
                n += 1;
            }
        }
        assert!(n > 10, "only {n} valid generations");
        total / n as f64
    };
    let (hi, lo) = (mean_parks(Level::High), mean_parks(Level::Low));
    assert!(hi > lo, "high {hi:.3} vs low {lo:.3}");
}

#[test]
fn high_carbon_regeneration_raises_carbon() {
    let f = fixture();
    let p = pipeline(f);
    let base = (0..)
        .find_map(|seed| {
            let req = GenerationRequest {
                labels: only(3, Level::Low),
                ..GenerationRequest::new([Level::Mid; 5], seed)
            };
            let r = p.generate(&req).unwrap();
            r.detailed.zip(r.features)
        })
        .unwrap();
    let (layout, feats) = base;
    let region = Region {
        row: 1,
        col: 2,
        height: 4,
        width: 6,
    };
    let mut valid = 0;
    let mut higher = 0;
    for seed in 0..50 {
        let req = GenerationRequest {
            labels: only(3, Level::High),
            base_layout: Some(layout.clone()),
            region: Some(region),
            restarts: 3,
            ..GenerationRequest::new([Level::Mid; 5], 1000 + seed)
        };
        let r = p.generate(&req).unwrap();
        if let Some(fv) = r.features {
            valid += 1;
            higher += usize::from(fv.carbon >= feats.carbon);
        }
    }
    assert!(valid > 0);
    assert!(2 * higher > valid, "{higher}/{valid} regenerations kept or raised carbon {}", feats.carbon);
}
