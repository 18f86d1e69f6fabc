//! Labelled training records: tercile schema, tokenisation, canonical
//! prompts, and distribution statistics.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{FunctionalCategory, TileCatalog};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::hash::content_hash;
use crate::layout::{CategoryGrid, Layout};
use crate::qd::Elite;

pub const SCHEMA_VERSION: u32 = 1;
pub const START_TOKEN: char = '<';
pub const END_TOKEN: char = '>';
pub const HISTOGRAM_BINS: usize = 10;
pub const MIN_SCHEMA_DESIGNS: usize = 30;
pub const PROMPT_COUNT: usize = 243;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Mid,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Mid, Level::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Level::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Mid => "mid",
            Level::High => "high",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Level::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown level {s:?}, expected low, mid or high")))
    }
}

pub type Labels = [Level; FEATURE_COUNT];

/// All 243 label tuples, feature 0 most significant.
pub fn all_labels() -> Vec<Labels> {
    (0..PROMPT_COUNT).map(labels_from_index).collect()
}

pub fn labels_from_index(i: usize) -> Labels {
    let mut out = [Level::Low; FEATURE_COUNT];
    let mut r = i % PROMPT_COUNT;
    for f in (0..FEATURE_COUNT).rev() {
        out[f] = Level::ALL[r % 3];
        r /= 3;
    }
    out
}

pub fn labels_index(labels: &Labels) -> usize {
    labels.iter().fold(0, |acc, l| acc * 3 + l.index())
}

pub fn labels_to_prompt(labels: &Labels) -> String {
    labels
        .iter()
        .zip(FEATURE_NAMES)
        .map(|(l, n)| format!("{l} {n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Inverse of [`labels_to_prompt`]; accepts only the canonical phrasing.
pub fn parse_prompt(text: &str) -> Result<Labels> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != FEATURE_COUNT {
        return Err(Error::Config(format!("expected {FEATURE_COUNT} phrases, got {}", parts.len())));
    }
    let mut out = [Level::Low; FEATURE_COUNT];
    for (i, part) in parts.iter().enumerate() {
        let (level, name) = part
            .split_once(' ')
            .ok_or_else(|| Error::Config(format!("malformed phrase {part:?}")))?;
        if name != FEATURE_NAMES[i] {
            return Err(Error::Config(format!("phrase {} should name {:?}, got {name:?}", i + 1, FEATURE_NAMES[i])));
        }
        out[i] = level.parse()?;
    }
    Ok(out)
}

/// Tercile boundaries of one feature. A value equal to a cut point belongs
/// to the outer class only when that cut is inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub t_low: f64,
    pub t_high: f64,
    pub low_inclusive: bool,
    pub high_inclusive: bool,
}

impl Cut {
    /// Plain cuts: `low` up to and including `t_low`, `high` above `t_high`.
    pub fn new(t_low: f64, t_high: f64) -> Cut {
        Cut {
            t_low,
            t_high,
            low_inclusive: t_low < t_high,
            high_inclusive: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub schema_version: u32,
    pub cuts: [Cut; FEATURE_COUNT],
    /// Dataset ids the cuts were fitted on.
    pub provenance: Vec<String>,
}

/// Nearest-rank quantile of sorted values: element `ceil(n·k/3)` (1-based).
fn tercile(sorted: &[f64], k: usize) -> f64 {
    let n = sorted.len();
    let rank = (n * k).div_ceil(3).max(1);
    sorted[rank - 1]
}

/// Chooses which side of each cut a tied block falls on: fewest empty
/// classes first, then class sizes closest to thirds, then plain cuts.
fn balanced_cut(sorted: &[f64], t_low: f64, t_high: f64) -> Cut {
    let n = sorted.len() as i64;
    let mut best: Option<((usize, i64, bool), Cut)> = None;
    for low_inclusive in [true, false] {
        for high_inclusive in [false, true] {
            let cut = Cut {
                t_low,
                t_high,
                low_inclusive,
                high_inclusive,
            };
            let mut counts = [0i64; 3];
            for &v in sorted {
                counts[bin_value(v, &cut).index()] += 1;
            }
            let empty = counts.iter().filter(|&&c| c == 0).count();
            let gap = counts.iter().map(|&c| (3 * c - n).abs()).sum::<i64>();
            let key = (empty, gap, !(low_inclusive && !high_inclusive));
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, cut));
            }
        }
    }
    best.expect("four candidates").1
}

/// Fits cut points at the 1/3 and 2/3 nearest-rank quantiles of `designs`.
///
/// A block of values tied at a cut point is assigned to one side so that as
/// few classes as possible are empty and the rest are as close to thirds as
/// possible; with distinct values this is plain nearest-rank binning. When
/// both cuts coincide the tied value is `mid`.
pub fn fit_schema(designs: &[FeatureVector], provenance: Vec<String>) -> Result<LabelSchema> {
    if designs.len() < MIN_SCHEMA_DESIGNS {
        return Err(Error::Config(format!(
            "need at least {MIN_SCHEMA_DESIGNS} designs to fit terciles, got {}",
            designs.len()
        )));
    }
    let mut cuts = [Cut::new(0.0, 0.0); FEATURE_COUNT];
    for (f, cut) in cuts.iter_mut().enumerate() {
        let mut v: Vec<f64> = designs.iter().map(|d| d.to_array()[f]).collect();
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::Domain(format!("NaN in feature {}", FEATURE_NAMES[f])));
        }
        v.sort_by(f64::total_cmp);
        let (t_low, t_high) = (tercile(&v, 1), tercile(&v, 2));
        *cut = if t_low < t_high {
            balanced_cut(&v, t_low, t_high)
        } else {
            Cut::new(t_low, t_high)
        };
    }
    Ok(LabelSchema {
        schema_version: SCHEMA_VERSION,
        cuts,
        provenance,
    })
}

pub fn bin_value(v: f64, cut: &Cut) -> Level {
    if v > cut.t_high || (cut.high_inclusive && v == cut.t_high) {
        Level::High
    } else if v < cut.t_low || (cut.low_inclusive && v == cut.t_low) {
        Level::Low
    } else {
        Level::Mid
    }
}

impl LabelSchema {
    pub fn labels(&self, f: &FeatureVector) -> Labels {
        let v = f.to_array();
        std::array::from_fn(|i| bin_value(v[i], &self.cuts[i]))
    }

    pub fn hash(&self) -> String {
        content_hash(serde_json::to_string(self).expect("schema serializes").as_bytes())
    }
}

pub fn category_token(cat: FunctionalCategory) -> char {
    cat.token_char()
}

pub fn tokenize(layout: &Layout, catalog: &TileCatalog) -> String {
    let mut s = String::with_capacity(layout.len() + 2);
    s.push(START_TOKEN);
    for &t in &layout.tiles {
        s.push(catalog.state(t).category.token_char());
    }
    s.push(END_TOKEN);
    s
}

pub fn tokenize_categories(grid: &CategoryGrid) -> String {
    let mut s = String::with_capacity(grid.cells.len() + 2);
    s.push(START_TOKEN);
    s.extend(grid.cells.iter().map(|c| c.token_char()));
    s.push(END_TOKEN);
    s
}

pub fn detokenize(tokens: &str, height: usize, width: usize) -> Result<CategoryGrid> {
    let inner = tokens
        .strip_prefix(START_TOKEN)
        .and_then(|s| s.strip_suffix(END_TOKEN))
        .ok_or_else(|| Error::Config("token string must be wrapped in start/end tokens".into()))?;
    let cells = inner
        .chars()
        .map(|c| FunctionalCategory::from_token_char(c).ok_or_else(|| Error::Config(format!("unknown token {c:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if cells.len() != height * width {
        return Err(Error::Shape {
            expected: format!("{} tokens", height * width),
            got: format!("{}", cells.len()),
        });
    }
    Ok(CategoryGrid { height, width, cells })
}

/// Gini coefficient `ΣΣ|ci − cj| / (2 n Σc)` of histogram counts.
pub fn gini(counts: &[u64]) -> Result<f64> {
    let (num, den) = gini_rational(counts)?;
    Ok(num as f64 / den as f64)
}

/// Gini as an exact fraction `(numerator, denominator)`.
pub fn gini_rational(counts: &[u64]) -> Result<(u128, u128)> {
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return Err(Error::Domain("Gini of all-zero counts is undefined".into()));
    }
    let mut num: u128 = 0;
    for &a in counts {
        for &b in counts {
            num += a.abs_diff(b) as u128;
        }
    }
    Ok((num, 2 * counts.len() as u128 * total))
}

/// Equal-width histogram over `[lo, hi]`; the top edge falls in the last bin,
/// values outside are clamped.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    let span = hi - lo;
    for &v in values {
        let b = if span > 0.0 {
            (((v - lo) / span) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
        } else {
            0
        };
        counts[b] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub gini: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub dataset_id: String,
    pub count: usize,
    pub features: Vec<Histogram>,
    pub performance: Histogram,
    pub mean_performance: f64,
}

/// `(lo, hi)` per feature and for performance, shared by every dataset
/// compared against each other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRanges {
    pub features: [(f64, f64); FEATURE_COUNT],
    pub performance: (f64, f64),
}

impl HistogramRanges {
    /// Pooled min/max over all given datasets.
    pub fn pooled(datasets: &[&[Design]]) -> HistogramRanges {
        let mut features = [(f64::INFINITY, f64::NEG_INFINITY); FEATURE_COUNT];
        let mut performance = (f64::INFINITY, f64::NEG_INFINITY);
        for d in datasets.iter().flat_map(|d| d.iter()) {
            for (r, v) in features.iter_mut().zip(d.features.to_array()) {
                *r = (r.0.min(v), r.1.max(v));
            }
            performance = (performance.0.min(d.performance), performance.1.max(d.performance));
        }
        let fix = |r: (f64, f64)| if r.0.is_finite() { r } else { (0.0, 1.0) };
        HistogramRanges {
            features: features.map(fix),
            performance: fix(performance),
        }
    }
}

/// Minimal view of an evaluated design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub layout: Layout,
    pub features: FeatureVector,
    pub performance: f64,
}

impl From<&Elite> for Design {
    fn from(e: &Elite) -> Self {
        Design {
            layout: e.layout.clone(),
            features: e.features,
            performance: e.performance,
        }
    }
}

pub fn distribution_report(dataset_id: &str, designs: &[Design], ranges: &HistogramRanges) -> DistributionReport {
    let hist = |name: &str, values: Vec<f64>, (lo, hi): (f64, f64)| {
        let counts = histogram(&values, lo, hi, HISTOGRAM_BINS);
        Histogram {
            name: name.to_string(),
            lo,
            hi,
            gini: gini(&counts).ok(),
            counts,
        }
    };
    let features = (0..FEATURE_COUNT)
        .map(|f| {
            hist(
                FEATURE_NAMES[f],
                designs.iter().map(|d| d.features.to_array()[f]).collect(),
                ranges.features[f],
            )
        })
        .collect();
    let perf: Vec<f64> = designs.iter().map(|d| d.performance).collect();
    let mean_performance = if perf.is_empty() {
        0.0
    } else {
        perf.iter().sum::<f64>() / perf.len() as f64
    };
    DistributionReport {
        dataset_id: dataset_id.to_string(),
        count: designs.len(),
        features,
        performance: hist("performance", perf, ranges.performance),
        mean_performance,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDesign {
    pub schema_version: u32,
    pub tokens: String,
    pub features: [f64; FEATURE_COUNT],
    pub performance: f64,
    pub labels: Labels,
    pub prompt: String,
}

impl LabeledDesign {
    pub fn feature_vector(&self) -> FeatureVector {
        FeatureVector {
            num_parks: self.features[0] as usize,
            largest_park: self.features[1] as usize,
            total_units: self.features[2] as usize,
            carbon: self.features[3],
            privacy: self.features[4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub schema_version: u32,
    pub dataset_id: String,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub catalog_hash: String,
    pub label_schema: LabelSchema,
    pub feature_config: FeatureConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

/// Labels every design with the schema; designs of the wrong shape are
/// rejected with a diagnostic.
pub fn build_dataset(
    designs: &[Design],
    schema: &LabelSchema,
    catalog: &TileCatalog,
    height: usize,
    width: usize,
) -> (Vec<LabeledDesign>, Vec<Rejection>) {
    let mut records = Vec::with_capacity(designs.len());
    let mut rejected = Vec::new();
    for (index, d) in designs.iter().enumerate() {
        if (d.layout.height, d.layout.width) != (height, width) {
            rejected.push(Rejection {
                index,
                reason: format!("layout is {}x{}, expected {height}x{width}", d.layout.height, d.layout.width),
            });
            continue;
        }
        let labels = schema.labels(&d.features);
        records.push(LabeledDesign {
            schema_version: SCHEMA_VERSION,
            tokens: tokenize(&d.layout, catalog),
            features: d.features.to_array(),
            performance: d.performance,
            prompt: labels_to_prompt(&labels),
            labels,
        });
    }
    (records, rejected)
}

/// Indices of records whose labels or prompt disagree with the schema.
pub fn audit(records: &[LabeledDesign], schema: &LabelSchema) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            let l = schema.labels(&r.feature_vector());
            l != r.labels || labels_to_prompt(&l) != r.prompt
        })
        .map(|(i, _)| i)
        .collect()
}

pub fn write_jsonl<W: Write, T: Serialize>(out: &mut W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<LabeledDesign>> {
    let records: Vec<LabeledDesign> = read_jsonl(input)?;
    if let Some(r) = records.iter().find(|r| r.schema_version != SCHEMA_VERSION) {
        return Err(Error::Config(format!("unsupported record schema version {}", r.schema_version)));
    }
    Ok(records)
}

/// Per (feature, level) record counts.
pub fn class_counts(records: &[LabeledDesign]) -> [[usize; 3]; FEATURE_COUNT] {
    let mut c = [[0; 3]; FEATURE_COUNT];
    for r in records {
        for (f, l) in r.labels.iter().enumerate() {
            c[f][l.index()] += 1;
        }
    }
    c
}
