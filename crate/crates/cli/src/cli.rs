use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use qdtile::dataset::{
    audit, build_dataset, class_counts, distribution_report, fit_schema, read_jsonl, read_records, write_jsonl,
    DatasetMetadata, Design, HistogramRanges, Level, SCHEMA_VERSION,
};
use qdtile::eval::{compare, sweep, write_records, EvalReport, SweepConfig};
use qdtile::hash::content_hash;
use qdtile::lm::{encode_record, train, Checkpoint, ExampleSeq, Model, SamplingParams};
use qdtile::pipeline::{GenerationRequest, GenerationResult, Pipeline, Region};
use qdtile::qd::{sample_wfc_baseline, synthesize_map_elites, DevelopContext};
use qdtile::{AdjacencyRules, FeatureVector, Layout, TileCatalog};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::prompt::normalize_prompt;
use crate::render::{to_ppm, to_svg};
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "qdtile", version, about = "Quality-diversity tile-layout synthesis, training and generation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a design dataset with MAP-Elites.
    SynthQd {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Synthesize a design dataset by random WFC sampling.
    SynthSample {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Fit pooled tercile cuts and label each design file.
    BuildDataset {
        /// `name=path/to/designs.jsonl`, repeatable.
        #[arg(long = "input", required = true, value_parser = parse_named)]
        inputs: Vec<(String, PathBuf)>,
    },
    /// Feature histograms and Gini coefficients on a pooled range.
    ReportDist {
        #[arg(long = "input", required = true, value_parser = parse_named)]
        inputs: Vec<(String, PathBuf)>,
    },
    /// Train the tile model on a labelled dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to the dataset path with `.meta.json`.
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate one layout from a prompt.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        prompt: PromptArgs,
    },
    /// Erase a rectangle of a layout and regenerate it.
    Regen {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Layout text file (`h w` header, rows of tile ids).
        #[arg(long)]
        base: PathBuf,
        /// `row,col,height,width`.
        #[arg(long, value_parser = parse_region)]
        region: Region,
        #[command(flatten)]
        prompt: PromptArgs,
    },
    /// Generate N layouts for each of the 243 prompts and score them.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Per-cell deltas between two sweep reports (a − b).
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Serve the generation endpoints over HTTP.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Free text, e.g. "many parks, low privacy".
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// WFC restarts on contradiction.
    #[arg(long, default_value_t = 0)]
    pub restarts: usize,
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected name=path, got {s:?}"))?;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(format!("dataset name {name:?} must be alphanumeric"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn parse_region(s: &str) -> Result<Region, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|e| format!("bad region {s:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [row, col, height, width] = v[..] else {
        return Err(format!("region must be row,col,height,width, got {s:?}"));
    };
    Ok(Region { row, col, height, width })
}

/// Runtime shared by all subcommands.
struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    catalog: TileCatalog,
    rules: AdjacencyRules,
}

impl Ctx {
    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.seed, self.cfg.hash(), self.catalog.hash())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, m: &mut RunManifest, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        m.outputs.push(p.clone());
        Ok(p)
    }

    fn develop_ctx(&self) -> DevelopContext<'_> {
        DevelopContext::new(
            &self.catalog,
            &self.rules,
            self.cfg.height,
            self.cfg.width,
            self.cfg.synthesis.map_elites.restarts,
            self.cfg.features,
        )
    }

    fn load_checkpoint(&self, path: &Path, m: &mut RunManifest) -> anyhow::Result<Checkpoint> {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        ck.check_compat(&self.catalog.hash(), None)?;
        m.hashes.insert("checkpoint".into(), ck.hash().to_string());
        m.hashes.insert("schema".into(), ck.header.schema_hash.clone());
        Ok(ck)
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.global.config.as_deref())?;
    let catalog = TileCatalog::representative();
    let rules = AdjacencyRules::representative(&catalog)?;
    fs::create_dir_all(&cli.global.out).with_context(|| format!("creating {}", cli.global.out.display()))?;
    let ctx = Ctx {
        cfg,
        seed: cli.global.seed,
        out: cli.global.out,
        catalog,
        rules,
    };
    match cli.command {
        Command::SynthQd { count } => synth_qd(&ctx, count),
        Command::SynthSample { count } => synth_sample(&ctx, count),
        Command::BuildDataset { inputs } => build(&ctx, &inputs),
        Command::ReportDist { inputs } => report_dist(&ctx, &inputs),
        Command::Train { dataset, meta, steps } => train_cmd(&ctx, &dataset, meta, steps),
        Command::Generate { checkpoint, prompt } => generate_cmd(&ctx, &checkpoint, &prompt, None),
        Command::Regen {
            checkpoint,
            base,
            region,
            prompt,
        } => {
            let text = fs::read_to_string(&base).with_context(|| format!("reading {}", base.display()))?;
            let layout = Layout::from_text(&text)?;
            generate_cmd(&ctx, &checkpoint, &prompt, Some((layout, region)))
        }
        Command::Sweep { checkpoint, n } => sweep_cmd(&ctx, &checkpoint, n),
        Command::Compare { a, b } => compare_cmd(&ctx, &a, &b),
        Command::Serve { checkpoint, host, port } => serve_cmd(&ctx, &checkpoint, &host, port),
    }
}

fn write_designs(ctx: &Ctx, m: &mut RunManifest, designs: &[Design]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, designs)?;
    m.hashes.insert("designs".into(), content_hash(&buf));
    ctx.write(m, "designs.jsonl", buf)?;
    Ok(())
}

fn synth_qd(ctx: &Ctx, count: Option<usize>) -> anyhow::Result<()> {
    let mut m = ctx.manifest("synth-qd");
    let mut sc = ctx.cfg.synthesis.clone();
    sc.map_elites.seed = ctx.seed;
    sc.map_elites.height = ctx.cfg.height;
    sc.map_elites.width = ctx.cfg.width;
    sc.map_elites.features = ctx.cfg.features;
    if let Some(c) = count {
        sc.count = c;
    }
    let syn = synthesize_map_elites(&ctx.develop_ctx(), &sc)?;
    let designs: Vec<Design> = syn.designs.iter().map(Design::from).collect();
    write_designs(ctx, &mut m, &designs)?;
    ctx.write(&mut m, "runs.json", serde_json::to_string_pretty(&syn.runs)?)?;
    println!("{} designs from {} MAP-Elites runs", designs.len(), syn.runs.len());
    m.write(&ctx.out)?;
    Ok(())
}

fn synth_sample(ctx: &Ctx, count: Option<usize>) -> anyhow::Result<()> {
    let mut m = ctx.manifest("synth-sample");
    let mut bc = ctx.cfg.baseline.clone();
    bc.seed = ctx.seed;
    bc.height = ctx.cfg.height;
    bc.width = ctx.cfg.width;
    bc.features = ctx.cfg.features;
    if let Some(c) = count {
        bc.count = c;
    }
    let dctx = DevelopContext {
        restarts: bc.restarts,
        ..ctx.develop_ctx()
    };
    let designs: Vec<Design> = sample_wfc_baseline(&dctx, &bc)?.iter().map(Design::from).collect();
    write_designs(ctx, &mut m, &designs)?;
    println!("{} sampled designs", designs.len());
    m.write(&ctx.out)?;
    Ok(())
}

fn read_designs(path: &Path) -> anyhow::Result<Vec<Design>> {
    let f = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(read_jsonl(BufReader::new(f))?)
}

fn build(ctx: &Ctx, inputs: &[(String, PathBuf)]) -> anyhow::Result<()> {
    let mut m = ctx.manifest("build-dataset");
    let sets: Vec<(String, Vec<Design>)> = inputs
        .iter()
        .map(|(n, p)| read_designs(p).map(|d| (n.clone(), d)))
        .collect::<anyhow::Result<_>>()?;
    let pooled: Vec<FeatureVector> = sets.iter().flat_map(|(_, d)| d.iter().map(|x| x.features)).collect();
    let schema = fit_schema(&pooled, sets.iter().map(|(n, _)| n.clone()).collect())?;
    ctx.write(&mut m, "schema.json", serde_json::to_string_pretty(&schema)? + "\n")?;
    m.hashes.insert("schema".into(), schema.hash());
    for (name, designs) in &sets {
        let (records, rejected) = build_dataset(designs, &schema, &ctx.catalog, ctx.cfg.height, ctx.cfg.width);
        for r in &rejected {
            log::warn!("{name}: design {} rejected: {}", r.index, r.reason);
        }
        let bad = audit(&records, &schema);
        if !bad.is_empty() {
            bail!("{name}: {} records fail the label audit", bad.len());
        }
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records)?;
        let id = format!("{name}-{}", content_hash(&buf));
        let meta = DatasetMetadata {
            schema_version: SCHEMA_VERSION,
            dataset_id: id.clone(),
            count: records.len(),
            height: ctx.cfg.height,
            width: ctx.cfg.width,
            catalog_hash: ctx.catalog.hash(),
            label_schema: schema.clone(),
            feature_config: ctx.cfg.features,
        };
        ctx.write(&mut m, &format!("{name}.jsonl"), buf)?;
        ctx.write(&mut m, &format!("{name}.meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        m.hashes.insert(format!("dataset:{name}"), id.clone());
        println!("{id}: {} records, classes {:?}", records.len(), class_counts(&records));
    }
    m.write(&ctx.out)?;
    Ok(())
}

fn report_dist(ctx: &Ctx, inputs: &[(String, PathBuf)]) -> anyhow::Result<()> {
    let mut m = ctx.manifest("report-dist");
    let sets: Vec<(String, Vec<Design>)> = inputs
        .iter()
        .map(|(n, p)| read_designs(p).map(|d| (n.clone(), d)))
        .collect::<anyhow::Result<_>>()?;
    let slices: Vec<&[Design]> = sets.iter().map(|(_, d)| d.as_slice()).collect();
    let ranges = HistogramRanges::pooled(&slices);
    let reports: Vec<_> = sets.iter().map(|(n, d)| distribution_report(n, d, &ranges)).collect();
    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!("{} ({} designs), mean performance {:.4}\n", r.dataset_id, r.count, r.mean_performance));
        for h in &r.features {
            let g = h.gini.map_or_else(|| "n/a".into(), |g| format!("{g:.4}"));
            text.push_str(&format!("  {:<20} gini {g} counts {:?}\n", h.name, h.counts));
        }
    }
    ctx.write(&mut m, "distribution.json", serde_json::to_string_pretty(&reports)? + "\n")?;
    ctx.write(&mut m, "distribution.txt", &text)?;
    print!("{text}");
    m.write(&ctx.out)?;
    Ok(())
}

fn train_cmd(ctx: &Ctx, dataset: &Path, meta: Option<PathBuf>, steps: Option<usize>) -> anyhow::Result<()> {
    let mut m = ctx.manifest("train");
    let meta_path = meta.unwrap_or_else(|| dataset.with_extension("meta.json"));
    let meta: DatasetMetadata = serde_json::from_str(
        &fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )?;
    if meta.catalog_hash != ctx.catalog.hash() {
        return Err(qdtile::Error::HashMismatch {
            what: "catalog",
            expected: ctx.catalog.hash(),
            found: meta.catalog_hash,
        }
        .into());
    }
    let records = read_records(BufReader::new(fs::File::open(dataset)?))?;
    let bad = audit(&records, &meta.label_schema);
    if !bad.is_empty() {
        return Err(qdtile::Error::HashMismatch {
            what: "label schema",
            expected: meta.label_schema.hash(),
            found: format!("{} records labelled under another schema", bad.len()),
        }
        .into());
    }
    let examples: Vec<ExampleSeq> = records.iter().map(encode_record).collect::<qdtile::Result<_>>()?;
    let mut tc = ctx.cfg.train.clone();
    tc.seed = ctx.seed;
    if let Some(s) = steps {
        tc.steps = s;
    }
    let mc = ctx.cfg.model_config();
    let mut model: Model<f32> = Model::init(mc, ctx.seed)?;
    log::info!("training {} parameters on {} examples", model.params.len(), examples.len());
    let report = train(&mut model, &examples, &tc)?;
    let ck = Checkpoint::new(
        model,
        report.steps_done,
        meta.height,
        meta.width,
        &meta.dataset_id,
        &ctx.catalog.hash(),
        &meta.label_schema,
    );
    let p = ctx.path("checkpoint.bin");
    ck.save(&p)?;
    m.outputs.push(p);
    ctx.write(&mut m, "loss.csv", report.loss_csv())?;
    let mut held = String::from("step,loss\n");
    for (s, l) in &report.heldout {
        held.push_str(&format!("{s},{l}\n"));
    }
    ctx.write(&mut m, "heldout.csv", held)?;
    m.hashes.insert("checkpoint".into(), ck.hash().to_string());
    m.hashes.insert("schema".into(), ck.header.schema_hash.clone());
    m.hashes.insert("dataset".into(), meta.dataset_id.clone());
    println!(
        "checkpoint {} after {} steps, held-out loss {:?}",
        ck.hash(),
        report.steps_done,
        report.heldout.last().map(|x| x.1)
    );
    m.write(&ctx.out)?;
    Ok(())
}

fn request(ctx: &Ctx, p: &PromptArgs) -> anyhow::Result<GenerationRequest> {
    let labels: [Option<Level>; 5] = match &p.prompt {
        Some(text) => normalize_prompt(text)?,
        None => [None; 5],
    };
    let d = ctx.cfg.sampling;
    let sampling = SamplingParams {
        temperature: p.temperature.unwrap_or(d.temperature),
        top_k: p.top_k.unwrap_or(d.top_k),
    };
    sampling.validate()?;
    Ok(GenerationRequest {
        labels,
        seed: ctx.seed,
        sampling,
        restarts: p.restarts,
        base_layout: None,
        region: None,
    })
}

fn write_result(ctx: &Ctx, m: &mut RunManifest, r: &GenerationResult) -> anyhow::Result<()> {
    ctx.write(m, "result.json", serde_json::to_string_pretty(r)? + "\n")?;
    ctx.write(m, "coarse.txt", r.coarse.to_text())?;
    let shown = match &r.detailed {
        Some(l) => {
            ctx.write(m, "layout.txt", l.to_text())?;
            l.categories(&ctx.catalog)?
        }
        None => r.coarse.clone(),
    };
    ctx.write(m, "layout.svg", to_svg(&shown, 16))?;
    ctx.write(m, "layout.ppm", to_ppm(&shown, 8))?;
    Ok(())
}

fn generate_cmd(ctx: &Ctx, path: &Path, p: &PromptArgs, regen: Option<(Layout, Region)>) -> anyhow::Result<()> {
    let mut m = ctx.manifest(if regen.is_some() { "regen" } else { "generate" });
    let ck = ctx.load_checkpoint(path, &mut m)?;
    let pipe = Pipeline::new(&ctx.catalog, &ctx.rules, &ck, ctx.cfg.features)?;
    let mut req = request(ctx, p)?;
    if let Some((base, region)) = regen {
        req.base_layout = Some(base);
        req.region = Some(region);
    }
    let r = pipe.generate(&req)?;
    write_result(ctx, &mut m, &r)?;
    println!("prompt: {}", r.prompt);
    if r.validity {
        println!("valid; fidelity {:?}", r.fidelity.unwrap_or_default());
    } else {
        println!("invalid: WFC contradiction at cell {:?}", r.contradiction_cell);
    }
    m.write(&ctx.out)?;
    Ok(())
}

fn sweep_cmd(ctx: &Ctx, path: &Path, n: usize) -> anyhow::Result<()> {
    let mut m = ctx.manifest("sweep");
    let ck = ctx.load_checkpoint(path, &mut m)?;
    let pipe = Pipeline::new(&ctx.catalog, &ctx.rules, &ck, ctx.cfg.features)?;
    let cfg = SweepConfig {
        n_per_prompt: n,
        master_seed: ctx.seed,
        sampling: ctx.cfg.sampling,
    };
    let (report, records) = sweep(&pipe, &cfg, ck.hash(), &ck.header.dataset_id)?;
    let raw = ctx.path("raw.jsonl");
    let mut w = BufWriter::new(fs::File::create(&raw)?);
    write_records(&records, &mut w)?;
    w.flush()?;
    m.outputs.push(raw);
    ctx.write(&mut m, "report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    ctx.write(&mut m, "validity.csv", report.validity_csv())?;
    ctx.write(&mut m, "fidelity.csv", report.fidelity_csv())?;
    let summary = report.summary();
    ctx.write(&mut m, "summary.txt", &summary)?;
    print!("{summary}");
    m.write(&ctx.out)?;
    Ok(())
}

fn read_report(path: &Path) -> anyhow::Result<EvalReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?)
}

fn compare_cmd(ctx: &Ctx, a: &Path, b: &Path) -> anyhow::Result<()> {
    let mut m = ctx.manifest("compare");
    let (ra, rb) = (read_report(a)?, read_report(b)?);
    m.hashes.insert("a".into(), ra.meta.checkpoint_hash.clone());
    m.hashes.insert("b".into(), rb.meta.checkpoint_hash.clone());
    let c = compare(&ra, &rb)?;
    ctx.write(&mut m, "comparison.csv", c.to_csv())?;
    ctx.write(&mut m, "comparison.json", serde_json::to_string_pretty(&c)? + "\n")?;
    let s = c.summary();
    ctx.write(&mut m, "comparison.txt", &s)?;
    print!("{s}");
    m.write(&ctx.out)?;
    Ok(())
}

fn serve_cmd(ctx: &Ctx, path: &Path, host: &str, port: u16) -> anyhow::Result<()> {
    let mut m = ctx.manifest("serve");
    let ck = ctx.load_checkpoint(path, &mut m)?;
    m.write(&ctx.out)?;
    let state = Arc::new(AppState::new(ctx.catalog.clone(), ctx.rules.clone(), ck, ctx.cfg.features)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(state, &format!("{host}:{port}")))
}

/// Exit status for an error: 3 for hash mismatches, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let mismatch = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<qdtile::Error>(), Some(qdtile::Error::HashMismatch { .. })));
    if mismatch {
        3
    } else {
        1
    }
}
