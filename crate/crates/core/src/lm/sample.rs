use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{softmax_f64, Model};
use super::ops::{axpy, dot, gelu, layer_norm, linear, softmax_in_place, Scalar};
use super::{token_category, CATEGORY_TOKENS, END, PROMPT_ROWS, START};
use crate::catalog::FunctionalCategory;
use crate::dataset::Labels;
use crate::error::{Error, Result};
use crate::layout::CategoryGrid;
use crate::rng::rng_from_seed;

/// Temperature 0 decodes greedily.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_k: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 1.0,
            top_k: CATEGORY_TOKENS,
        }
    }
}

impl SamplingParams {
    pub fn greedy() -> Self {
        SamplingParams {
            temperature: 0.0,
            top_k: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampled {
    pub grid: CategoryGrid,
    /// Category tokens actually produced, `height·width` unless ended early.
    pub tokens: Vec<u32>,
    /// The end token came before the grid was full; the rest is Empty.
    pub flagged_short: bool,
}

/// Incremental decoder state: per-layer self-attention keys and values plus
/// the fixed cross-attention keys and values of the prompt memory.
pub struct Decoder<'m, T> {
    model: &'m Model<T>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    cross_kv: Vec<Vec<T>>,
    pos: usize,
}

impl<'m, T: Scalar> Decoder<'m, T> {
    pub fn new(model: &'m Model<T>, labels: &Labels) -> Self {
        let c = &model.config;
        let d = c.model_dim;
        let mem = model.encode_prompt(labels);
        let cross_kv = model
            .index
            .layers
            .iter()
            .map(|li| {
                let mut kv = vec![T::zero(); PROMPT_ROWS * 2 * d];
                linear(&mut kv, &mem, model.p(&li.w_ckv), model.p(&li.b_ckv), PROMPT_ROWS, d, 2 * d);
                kv
            })
            .collect();
        Decoder {
            model,
            keys: vec![Vec::new(); c.layers],
            values: vec![Vec::new(); c.layers],
            cross_kv,
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Feeds one token and returns the logits for the next position.
    pub fn step(&mut self, token: u32) -> Result<Vec<T>> {
        let m = self.model;
        let c = &m.config;
        if self.pos >= c.context {
            return Err(Error::Config(format!("decoder past context {}", c.context)));
        }
        if token as usize >= c.vocab {
            return Err(Error::Config(format!("token {token} out of vocabulary")));
        }
        let (d, hh, hd, f) = (c.model_dim, c.heads, c.head_dim(), c.ff_dim);
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let ix = &m.index;
        let tok = token as usize;
        let mut x: Vec<T> = (0..d)
            .map(|j| m.p(&ix.wte)[tok * d + j] + m.p(&ix.wpe)[self.pos * d + j])
            .collect();
        let mut buf = vec![T::zero(); d];
        let mut xhat = vec![T::zero(); d];
        let mut rstd = [T::zero()];
        let mut o = vec![T::zero(); d];
        let t = self.pos + 1;
        for (l, li) in ix.layers.iter().enumerate() {
            layer_norm(&mut buf, &mut xhat, &mut rstd, &x, m.p(&li.ln1_g), m.p(&li.ln1_b), d);
            let mut qkv = vec![T::zero(); 3 * d];
            linear(&mut qkv, &buf, m.p(&li.w_qkv), m.p(&li.b_qkv), 1, d, 3 * d);
            self.keys[l].extend_from_slice(&qkv[d..2 * d]);
            self.values[l].extend_from_slice(&qkv[2 * d..]);
            let mut y = vec![T::zero(); d];
            let mut s = vec![T::zero(); t];
            for h in 0..hh {
                let q = &qkv[h * hd..(h + 1) * hd];
                for (u, su) in s.iter_mut().enumerate() {
                    *su = dot(q, &self.keys[l][u * d + h * hd..][..hd]) * scale;
                }
                softmax_in_place(&mut s);
                for (u, &su) in s.iter().enumerate() {
                    axpy(&mut y[h * hd..(h + 1) * hd], su, &self.values[l][u * d + h * hd..][..hd]);
                }
            }
            linear(&mut o, &y, m.p(&li.w_o), m.p(&li.b_o), 1, d, d);
            axpy(&mut x, T::one(), &o);

            layer_norm(&mut buf, &mut xhat, &mut rstd, &x, m.p(&li.ln2_g), m.p(&li.ln2_b), d);
            let mut qc = vec![T::zero(); d];
            linear(&mut qc, &buf, m.p(&li.w_cq), m.p(&li.b_cq), 1, d, d);
            let kv = &self.cross_kv[l];
            let mut yc = vec![T::zero(); d];
            let mut s = [T::zero(); PROMPT_ROWS];
            for h in 0..hh {
                let q = &qc[h * hd..(h + 1) * hd];
                for (u, su) in s.iter_mut().enumerate() {
                    *su = dot(q, &kv[u * 2 * d + h * hd..][..hd]) * scale;
                }
                softmax_in_place(&mut s);
                for (u, &su) in s.iter().enumerate() {
                    axpy(&mut yc[h * hd..(h + 1) * hd], su, &kv[u * 2 * d + d + h * hd..][..hd]);
                }
            }
            linear(&mut o, &yc, m.p(&li.w_co), m.p(&li.b_co), 1, d, d);
            axpy(&mut x, T::one(), &o);

            layer_norm(&mut buf, &mut xhat, &mut rstd, &x, m.p(&li.ln3_g), m.p(&li.ln3_b), d);
            let mut hid = vec![T::zero(); f];
            linear(&mut hid, &buf, m.p(&li.w_1), m.p(&li.b_1), 1, d, f);
            for v in hid.iter_mut() {
                *v = gelu(*v);
            }
            linear(&mut o, &hid, m.p(&li.w_2), m.p(&li.b_2), 1, f, d);
            axpy(&mut x, T::one(), &o);
        }
        layer_norm(&mut buf, &mut xhat, &mut rstd, &x, m.p(&ix.lnf_g), m.p(&ix.lnf_b), d);
        let mut logits = vec![T::zero(); c.vocab];
        linear(&mut logits, &buf, m.p(&ix.w_head), m.p(&ix.b_head), 1, d, c.vocab);
        self.pos += 1;
        Ok(logits)
    }
}

/// Sampleable tokens: the categories and the end token.
fn sampleable() -> impl Iterator<Item = u32> {
    (0..CATEGORY_TOKENS as u32).chain(std::iter::once(END))
}

fn choose(logits: &[f64], params: &SamplingParams, rng: &mut crate::rng::Rng) -> u32 {
    let mut cands: Vec<(u32, f64)> = sampleable().map(|t| (t, logits[t as usize])).collect();
    // descending by logit, ties by token id
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if params.temperature == 0.0 {
        return cands[0].0;
    }
    cands.truncate(params.top_k.min(cands.len()));
    let probs = softmax_f64(cands.iter().map(|c| c.1 / params.temperature));
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in cands.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return c.0;
        }
    }
    cands[cands.len() - 1].0
}

impl<T: Scalar> Model<T> {
    /// Samples a coarse `height×width` plan. `forced[i] = Some(cat)` pins the
    /// token at cell `i` (constrained decoding); forced cells consume no
    /// randomness.
    pub fn sample_constrained(
        &self,
        labels: &Labels,
        height: usize,
        width: usize,
        forced: &[Option<FunctionalCategory>],
        params: &SamplingParams,
        seed: u64,
    ) -> Result<Sampled> {
        params.validate()?;
        let n = height * width;
        if n + 1 > self.config.context {
            return Err(Error::Config(format!(
                "{height}x{width} grid needs context {}, model has {}",
                n + 1,
                self.config.context
            )));
        }
        if !forced.is_empty() && forced.len() != n {
            return Err(Error::Shape {
                expected: format!("{n} forced entries"),
                got: format!("{}", forced.len()),
            });
        }
        let mut rng = rng_from_seed(seed);
        let mut dec = Decoder::new(self, labels);
        let mut tokens = Vec::with_capacity(n);
        let mut prev = START;
        let mut short = false;
        for i in 0..n {
            let logits = dec.step(prev)?;
            let tok = match forced.get(i).copied().flatten() {
                Some(cat) => cat.index() as u32,
                None => {
                    let l: Vec<f64> = logits.iter().map(|x| x.as_f64()).collect();
                    choose(&l, params, &mut rng)
                }
            };
            if tok == END {
                short = true;
                break;
            }
            tokens.push(tok);
            prev = tok;
        }
        let mut cells: Vec<FunctionalCategory> = tokens
            .iter()
            .map(|&t| token_category(t).expect("sampled category token"))
            .collect();
        // forced cells still hold after an early end
        for i in cells.len()..n {
            cells.push(forced.get(i).copied().flatten().unwrap_or(FunctionalCategory::Empty));
        }
        Ok(Sampled {
            grid: CategoryGrid { height, width, cells },
            tokens,
            flagged_short: short,
        })
    }

    pub fn sample(&self, labels: &Labels, height: usize, width: usize, params: &SamplingParams, seed: u64) -> Result<Sampled> {
        self.sample_constrained(labels, height, width, &[], params, seed)
    }
}
