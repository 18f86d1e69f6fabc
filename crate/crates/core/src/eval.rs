//! Exhaustive prompt sweeps: every label combination × N replicates,
//! aggregated into per-(feature, level) validity and fidelity matrices.
//!
//! Validity denominators are all generations of a cell; fidelity
//! denominators are the valid generations only, and a cell with no valid
//! generation reports `None`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{all_labels, labels_index, read_jsonl, write_jsonl, Labels, Level, PROMPT_COUNT};
use crate::error::{Error, Result};
use crate::features::{FEATURE_COUNT, FEATURE_NAMES};
use crate::lm::SamplingParams;
use crate::pipeline::{GenerationRequest, Pipeline};
use crate::rng::derive_seed;

pub const CELL_COUNT: usize = FEATURE_COUNT * 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_per_prompt: usize,
    pub master_seed: u64,
    pub sampling: SamplingParams,
}

/// Seed of replicate `rep` of prompt `prompt`.
pub fn job_seed(master: u64, prompt: usize, rep: usize) -> u64 {
    derive_seed(master, &[prompt as u64, rep as u64])
}

/// One persisted generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub prompt_index: usize,
    pub replicate: usize,
    pub labels: Labels,
    pub seed: u64,
    pub validity: bool,
    pub features: Option<[f64; FEATURE_COUNT]>,
    pub fidelity: Option<[bool; FEATURE_COUNT]>,
    pub flagged_short: bool,
    pub relaxations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub n_per_prompt: usize,
    pub master_seed: u64,
    pub temperature: f64,
    pub top_k: usize,
    pub checkpoint_hash: String,
    pub dataset_id: String,
    pub schema_hash: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub feature: usize,
    pub level: Level,
    pub generations: usize,
    pub valid: usize,
    pub fidelity_hits: usize,
    pub validity_rate: f64,
    pub fidelity_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    /// Feature-major, levels low/mid/high.
    pub cells: Vec<CellStats>,
    pub total_generations: usize,
    pub total_valid: usize,
    pub flagged_short: usize,
    pub relaxations: usize,
    pub mean_validity: f64,
    /// Mean over cells with non-null fidelity.
    pub mean_fidelity: Option<f64>,
}

impl EvalReport {
    pub fn cell(&self, feature: usize, level: Level) -> &CellStats {
        &self.cells[feature * 3 + level.index()]
    }

    pub fn validity_csv(&self) -> String {
        matrix_csv(|f, l| Some(self.cell(f, l).validity_rate))
    }

    pub fn fidelity_csv(&self) -> String {
        matrix_csv(|f, l| self.cell(f, l).fidelity_rate)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        writeln!(
            s,
            "sweep: {} prompts x {} = {} generations, {}x{} grid, checkpoint {}, dataset {}",
            PROMPT_COUNT, m.n_per_prompt, self.total_generations, m.width, m.height, m.checkpoint_hash, m.dataset_id
        )
        .unwrap();
        writeln!(
            s,
            "validity {:.4} ({} / {}), mean fidelity {}",
            self.mean_validity,
            self.total_valid,
            self.total_generations,
            fmt_opt(self.mean_fidelity)
        )
        .unwrap();
        writeln!(s, "short generations {}, border relaxations {}", self.flagged_short, self.relaxations).unwrap();
        writeln!(s, "{:<20} {:>8} {:>8} {:>8}   {:>8} {:>8} {:>8}", "feature", "val lo", "val mid", "val hi", "fid lo", "fid mid", "fid hi").unwrap();
        for (f, name) in FEATURE_NAMES.iter().enumerate() {
            let v: Vec<String> = Level::ALL.iter().map(|&l| format!("{:.3}", self.cell(f, l).validity_rate)).collect();
            let d: Vec<String> = Level::ALL.iter().map(|&l| fmt_opt(self.cell(f, l).fidelity_rate)).collect();
            writeln!(s, "{:<20} {:>8} {:>8} {:>8}   {:>8} {:>8} {:>8}", name, v[0], v[1], v[2], d[0], d[1], d[2]).unwrap();
        }
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".into(), |x| format!("{x:.3}"))
}

fn matrix_csv(value: impl Fn(usize, Level) -> Option<f64>) -> String {
    let mut s = String::from("feature,low,mid,high\n");
    for (f, name) in FEATURE_NAMES.iter().enumerate() {
        s.push_str(name);
        for l in Level::ALL {
            s.push(',');
            if let Some(v) = value(f, l) {
                write!(s, "{v}").unwrap();
            }
        }
        s.push('\n');
    }
    s
}

/// Aggregates raw records. Fails unless the records are exactly the
/// `243 × n` jobs of a sweep.
pub fn aggregate(records: &[RawRecord], meta: ReportMeta) -> Result<EvalReport> {
    let n = meta.n_per_prompt;
    if records.len() != PROMPT_COUNT * n {
        return Err(Error::Shape {
            expected: format!("{} records", PROMPT_COUNT * n),
            got: format!("{}", records.len()),
        });
    }
    let mut seen = vec![false; PROMPT_COUNT * n];
    let mut gens = [0usize; CELL_COUNT];
    let mut valid = [0usize; CELL_COUNT];
    let mut hits = [0usize; CELL_COUNT];
    for r in records {
        if r.prompt_index >= PROMPT_COUNT || r.replicate >= n || labels_index(&r.labels) != r.prompt_index {
            return Err(Error::Domain(format!(
                "record for prompt {} replicate {} does not belong to the sweep",
                r.prompt_index, r.replicate
            )));
        }
        let slot = r.prompt_index * n + r.replicate;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::Domain(format!("duplicate record {}:{}", r.prompt_index, r.replicate)));
        }
        if r.validity != r.fidelity.is_some() || r.validity != r.features.is_some() {
            return Err(Error::Domain("fidelity must be present exactly for valid records".into()));
        }
        for (f, l) in r.labels.iter().enumerate() {
            let c = f * 3 + l.index();
            gens[c] += 1;
            if let Some(fid) = r.fidelity {
                valid[c] += 1;
                hits[c] += fid[f] as usize;
            }
        }
    }
    let cells: Vec<CellStats> = (0..CELL_COUNT)
        .map(|c| CellStats {
            feature: c / 3,
            level: Level::ALL[c % 3],
            generations: gens[c],
            valid: valid[c],
            fidelity_hits: hits[c],
            validity_rate: valid[c] as f64 / gens[c] as f64,
            fidelity_rate: (valid[c] > 0).then(|| hits[c] as f64 / valid[c] as f64),
        })
        .collect();
    let defined: Vec<f64> = cells.iter().filter_map(|c| c.fidelity_rate).collect();
    let total_valid = records.iter().filter(|r| r.validity).count();
    Ok(EvalReport {
        meta,
        total_generations: records.len(),
        total_valid,
        flagged_short: records.iter().filter(|r| r.flagged_short).count(),
        relaxations: records.iter().map(|r| r.relaxations).sum(),
        mean_validity: total_valid as f64 / records.len() as f64,
        mean_fidelity: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        cells,
    })
}

/// Runs every prompt × replicate job in a fixed order.
pub fn sweep_records(pipeline: &Pipeline, cfg: &SweepConfig) -> Result<Vec<RawRecord>> {
    if cfg.n_per_prompt == 0 {
        return Err(Error::Config("n_per_prompt must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(PROMPT_COUNT * cfg.n_per_prompt);
    for (pi, labels) in all_labels().into_iter().enumerate() {
        for rep in 0..cfg.n_per_prompt {
            let seed = job_seed(cfg.master_seed, pi, rep);
            let req = GenerationRequest {
                sampling: cfg.sampling,
                ..GenerationRequest::new(labels, seed)
            };
            let r = pipeline.generate(&req)?;
            out.push(RawRecord {
                prompt_index: pi,
                replicate: rep,
                labels,
                seed,
                validity: r.validity,
                features: r.features.map(|f| f.to_array()),
                fidelity: r.fidelity,
                flagged_short: r.flagged_short,
                relaxations: r.relaxations,
            });
        }
    }
    Ok(out)
}

pub fn sweep(
    pipeline: &Pipeline,
    cfg: &SweepConfig,
    checkpoint_hash: &str,
    dataset_id: &str,
) -> Result<(EvalReport, Vec<RawRecord>)> {
    let records = sweep_records(pipeline, cfg)?;
    let meta = ReportMeta {
        n_per_prompt: cfg.n_per_prompt,
        master_seed: cfg.master_seed,
        temperature: cfg.sampling.temperature,
        top_k: cfg.sampling.top_k,
        checkpoint_hash: checkpoint_hash.into(),
        dataset_id: dataset_id.into(),
        schema_hash: pipeline.schema.hash(),
        height: pipeline.height,
        width: pipeline.width,
    };
    Ok((aggregate(&records, meta)?, records))
}

pub fn write_records(records: &[RawRecord], mut w: impl Write) -> Result<()> {
    write_jsonl(&mut w, records)
}

pub fn read_records(r: impl BufRead) -> Result<Vec<RawRecord>> {
    read_jsonl(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub feature: usize,
    pub level: Level,
    pub validity: f64,
    /// `None` when either side is null.
    pub fidelity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub cells: Vec<CellDelta>,
    pub mean_validity_a: f64,
    pub mean_validity_b: f64,
    pub mean_fidelity_a: Option<f64>,
    pub mean_fidelity_b: Option<f64>,
    pub mean_validity_delta: f64,
    pub mean_fidelity_delta: Option<f64>,
}

/// Per-cell `a − b`. Both reports must share N, grid and schema.
pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    let (ma, mb) = (&a.meta, &b.meta);
    if ma.n_per_prompt != mb.n_per_prompt || (ma.height, ma.width) != (mb.height, mb.width) {
        return Err(Error::Config(format!(
            "reports differ in N or grid: {} {}x{} vs {} {}x{}",
            ma.n_per_prompt, ma.width, ma.height, mb.n_per_prompt, mb.width, mb.height
        )));
    }
    if ma.schema_hash != mb.schema_hash {
        return Err(Error::HashMismatch {
            what: "label schema",
            expected: ma.schema_hash.clone(),
            found: mb.schema_hash.clone(),
        });
    }
    let cells = a
        .cells
        .iter()
        .zip(&b.cells)
        .map(|(x, y)| CellDelta {
            feature: x.feature,
            level: x.level,
            validity: x.validity_rate - y.validity_rate,
            fidelity: x.fidelity_rate.zip(y.fidelity_rate).map(|(p, q)| p - q),
        })
        .collect();
    Ok(Comparison {
        a: ma.dataset_id.clone(),
        b: mb.dataset_id.clone(),
        cells,
        mean_validity_a: a.mean_validity,
        mean_validity_b: b.mean_validity,
        mean_fidelity_a: a.mean_fidelity,
        mean_fidelity_b: b.mean_fidelity,
        mean_validity_delta: a.mean_validity - b.mean_validity,
        mean_fidelity_delta: a.mean_fidelity.zip(b.mean_fidelity).map(|(p, q)| p - q),
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature,level,validity_delta,fidelity_delta\n");
        for c in &self.cells {
            write!(s, "{},{},{},", FEATURE_NAMES[c.feature], c.level, c.validity).unwrap();
            if let Some(f) = c.fidelity {
                write!(s, "{f}").unwrap();
            }
            s.push('\n');
        }
        write!(s, "mean,all,{},", self.mean_validity_delta).unwrap();
        if let Some(f) = self.mean_fidelity_delta {
            write!(s, "{f}").unwrap();
        }
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} vs {}", self.a, self.b).unwrap();
        writeln!(
            s,
            "mean validity {:.4} vs {:.4} (delta {:+.4})",
            self.mean_validity_a, self.mean_validity_b, self.mean_validity_delta
        )
        .unwrap();
        writeln!(
            s,
            "mean fidelity {} vs {} (delta {})",
            fmt_opt(self.mean_fidelity_a),
            fmt_opt(self.mean_fidelity_b),
            self.mean_fidelity_delta.map_or_else(|| "null".into(), |d| format!("{d:+.4}"))
        )
        .unwrap();
        for c in &self.cells {
            writeln!(
                s,
                "  {:<20} {:<4} validity {:+.3} fidelity {}",
                FEATURE_NAMES[c.feature],
                c.level,
                c.validity,
                c.fidelity.map_or_else(|| "null".into(), |d| format!("{d:+.3}"))
            )
            .unwrap();
        }
        s
    }
}
