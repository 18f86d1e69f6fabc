use std::ops::Range;

use rand_distr::{Distribution, Normal};

use super::ops::{
    axpy, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_in_place, Scalar,
};
use super::{ModelConfig, PAD, PROMPT_ROWS, PROMPT_TABLE, VOCAB};
use crate::dataset::Labels;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerIndex {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_o: Range<usize>,
    pub b_o: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_cq: Range<usize>,
    pub b_cq: Range<usize>,
    pub w_ckv: Range<usize>,
    pub b_ckv: Range<usize>,
    pub w_co: Range<usize>,
    pub b_co: Range<usize>,
    pub ln3_g: Range<usize>,
    pub ln3_b: Range<usize>,
    pub w_1: Range<usize>,
    pub b_1: Range<usize>,
    pub w_2: Range<usize>,
    pub b_2: Range<usize>,
}

/// Offsets of every tensor in the flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamIndex {
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub prompt: Range<usize>,
    pub layers: Vec<LayerIndex>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub w_head: Range<usize>,
    pub b_head: Range<usize>,
    pub total: usize,
}

impl ParamIndex {
    pub fn new(c: &ModelConfig) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let d = c.model_dim;
        let wte = take(c.vocab * d);
        let wpe = take(c.context * d);
        let prompt = take(PROMPT_TABLE * d);
        let layers = (0..c.layers)
            .map(|_| LayerIndex {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_o: take(d * d),
                b_o: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_cq: take(d * d),
                b_cq: take(d),
                w_ckv: take(d * 2 * d),
                b_ckv: take(2 * d),
                w_co: take(d * d),
                b_co: take(d),
                ln3_g: take(d),
                ln3_b: take(d),
                w_1: take(d * c.ff_dim),
                b_1: take(c.ff_dim),
                w_2: take(c.ff_dim * d),
                b_2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let w_head = take(d * c.vocab);
        let b_head = take(c.vocab);
        ParamIndex {
            wte,
            wpe,
            prompt,
            layers,
            lnf_g,
            lnf_b,
            w_head,
            b_head,
            total: off,
        }
    }

    fn gains(&self) -> Vec<Range<usize>> {
        let mut v = vec![self.lnf_g.clone()];
        for l in &self.layers {
            v.extend([l.ln1_g.clone(), l.ln2_g.clone(), l.ln3_g.clone()]);
        }
        v
    }

    fn biases(&self) -> Vec<Range<usize>> {
        let mut v = vec![self.lnf_b.clone(), self.b_head.clone()];
        for l in &self.layers {
            v.extend([
                l.ln1_b.clone(),
                l.b_qkv.clone(),
                l.b_o.clone(),
                l.ln2_b.clone(),
                l.b_cq.clone(),
                l.b_ckv.clone(),
                l.b_co.clone(),
                l.ln3_b.clone(),
                l.b_1.clone(),
                l.b_2.clone(),
            ]);
        }
        v
    }

    fn residual_outputs(&self) -> Vec<Range<usize>> {
        self.layers
            .iter()
            .flat_map(|l| [l.w_o.clone(), l.w_co.clone(), l.w_2.clone()])
            .collect()
    }
}

/// Teacher-forced batch: `batch` sequences of `seq` input tokens and the
/// matching targets (`PAD` targets are ignored by the loss).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
    pub labels: Vec<Labels>,
}

impl Batch {
    pub fn validate(&self, c: &ModelConfig) -> Result<()> {
        let n = self.batch * self.seq;
        if self.tokens.len() != n || self.targets.len() != n || self.labels.len() != self.batch {
            return Err(Error::Shape {
                expected: format!("{} sequences of {}", self.batch, self.seq),
                got: format!("{} tokens, {} targets, {} prompts", self.tokens.len(), self.targets.len(), self.labels.len()),
            });
        }
        if self.seq == 0 || self.seq > c.context {
            return Err(Error::Config(format!("sequence length {} exceeds context {}", self.seq, c.context)));
        }
        if self.tokens.iter().chain(&self.targets).any(|&t| t as usize >= c.vocab) {
            return Err(Error::Config("token id out of vocabulary".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub index: ParamIndex,
    pub params: Vec<T>,
}

struct LayerCache<T> {
    ln1_xhat: Vec<T>,
    ln1_rstd: Vec<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    att: Vec<T>,
    y: Vec<T>,
    ln2_xhat: Vec<T>,
    ln2_rstd: Vec<T>,
    c: Vec<T>,
    qc: Vec<T>,
    kvc: Vec<T>,
    catt: Vec<T>,
    yc: Vec<T>,
    ln3_xhat: Vec<T>,
    ln3_rstd: Vec<T>,
    m: Vec<T>,
    h: Vec<T>,
    g: Vec<T>,
}

struct Cache<T> {
    mem: Vec<T>,
    layers: Vec<LayerCache<T>>,
    lnf_xhat: Vec<T>,
    lnf_rstd: Vec<T>,
    xf: Vec<T>,
}

impl<T: Scalar> Model<T> {
    /// Normal(0, 0.02) weights and embeddings, residual output projections
    /// scaled by 1/sqrt(2·layers), unit gains, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let index = ParamIndex::new(&config);
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let mut params: Vec<T> = (0..index.total).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
        let scale = T::from_f64(1.0 / (2.0 * config.layers as f64).sqrt());
        for r in index.residual_outputs() {
            for p in &mut params[r] {
                *p = *p * scale;
            }
        }
        for r in index.gains() {
            params[r].fill(T::one());
        }
        for r in index.biases() {
            params[r].fill(T::zero());
        }
        Ok(Model { config, index, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let index = ParamIndex::new(&config);
        if params.len() != index.total {
            return Err(Error::Shape {
                expected: format!("{} parameters", index.total),
                got: format!("{}", params.len()),
            });
        }
        Ok(Model { config, index, params })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            index: self.index.clone(),
            params: self.params.iter().map(|p| U::from_f64(p.as_f64())).collect(),
        }
    }

    pub fn p(&self, r: &Range<usize>) -> &[T] {
        &self.params[r.clone()]
    }

    /// Prompt memory rows for one label tuple: row i is table entry (i, level).
    pub fn encode_prompt(&self, labels: &Labels) -> Vec<T> {
        let d = self.config.model_dim;
        let table = self.p(&self.index.prompt);
        let mut mem = Vec::with_capacity(PROMPT_ROWS * d);
        for (i, l) in labels.iter().enumerate() {
            let row = i * 3 + l.index();
            mem.extend_from_slice(&table[row * d..(row + 1) * d]);
        }
        mem
    }

    fn forward_cached(&self, b: &Batch) -> Result<(Vec<T>, Cache<T>)> {
        b.validate(&self.config)?;
        let c = &self.config;
        let (bs, t, d, hh, hd, f) = (b.batch, b.seq, c.model_dim, c.heads, c.head_dim(), c.ff_dim);
        let n = bs * t;
        let mrows = PROMPT_ROWS;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let ix = &self.index;

        let wte = self.p(&ix.wte);
        let wpe = self.p(&ix.wpe);
        let mut x = vec![T::zero(); n * d];
        for r in 0..n {
            let tok = b.tokens[r] as usize;
            let pos = r % t;
            for j in 0..d {
                x[r * d + j] = wte[tok * d + j] + wpe[pos * d + j];
            }
        }
        let mut mem = Vec::with_capacity(bs * mrows * d);
        for l in &b.labels {
            mem.extend(self.encode_prompt(l));
        }

        let mut layers = Vec::with_capacity(c.layers);
        for li in &ix.layers {
            let mut lc = LayerCache {
                ln1_xhat: vec![T::zero(); n * d],
                ln1_rstd: vec![T::zero(); n],
                a: vec![T::zero(); n * d],
                qkv: vec![T::zero(); n * 3 * d],
                att: vec![T::zero(); bs * hh * t * t],
                y: vec![T::zero(); n * d],
                ln2_xhat: vec![T::zero(); n * d],
                ln2_rstd: vec![T::zero(); n],
                c: vec![T::zero(); n * d],
                qc: vec![T::zero(); n * d],
                kvc: vec![T::zero(); bs * mrows * 2 * d],
                catt: vec![T::zero(); bs * hh * t * mrows],
                yc: vec![T::zero(); n * d],
                ln3_xhat: vec![T::zero(); n * d],
                ln3_rstd: vec![T::zero(); n],
                m: vec![T::zero(); n * d],
                h: vec![T::zero(); n * f],
                g: vec![T::zero(); n * f],
            };
            // causal self-attention
            layer_norm(&mut lc.a, &mut lc.ln1_xhat, &mut lc.ln1_rstd, &x, self.p(&li.ln1_g), self.p(&li.ln1_b), d);
            linear(&mut lc.qkv, &lc.a, self.p(&li.w_qkv), self.p(&li.b_qkv), n, d, 3 * d);
            let mut s = vec![T::zero(); t];
            for bi in 0..bs {
                for h in 0..hh {
                    for ti in 0..t {
                        let q = &lc.qkv[(bi * t + ti) * 3 * d + h * hd..][..hd];
                        for u in 0..=ti {
                            let k = &lc.qkv[(bi * t + u) * 3 * d + d + h * hd..][..hd];
                            s[u] = dot(q, k) * scale;
                        }
                        softmax_in_place(&mut s[..=ti]);
                        let arow = ((bi * hh + h) * t + ti) * t;
                        lc.att[arow..arow + ti + 1].copy_from_slice(&s[..=ti]);
                        let yrow = &mut lc.y[(bi * t + ti) * d + h * hd..][..hd];
                        for u in 0..=ti {
                            let v = &lc.qkv[(bi * t + u) * 3 * d + 2 * d + h * hd..][..hd];
                            axpy(yrow, s[u], v);
                        }
                    }
                }
            }
            let mut o = vec![T::zero(); n * d];
            linear(&mut o, &lc.y, self.p(&li.w_o), self.p(&li.b_o), n, d, d);
            axpy(&mut x, T::one(), &o);

            // cross-attention to the prompt memory
            layer_norm(&mut lc.c, &mut lc.ln2_xhat, &mut lc.ln2_rstd, &x, self.p(&li.ln2_g), self.p(&li.ln2_b), d);
            linear(&mut lc.qc, &lc.c, self.p(&li.w_cq), self.p(&li.b_cq), n, d, d);
            linear(&mut lc.kvc, &mem, self.p(&li.w_ckv), self.p(&li.b_ckv), bs * mrows, d, 2 * d);
            let mut s = [T::zero(); PROMPT_ROWS];
            for bi in 0..bs {
                for h in 0..hh {
                    for ti in 0..t {
                        let q = &lc.qc[(bi * t + ti) * d + h * hd..][..hd];
                        for (u, su) in s.iter_mut().enumerate() {
                            let k = &lc.kvc[(bi * mrows + u) * 2 * d + h * hd..][..hd];
                            *su = dot(q, k) * scale;
                        }
                        softmax_in_place(&mut s);
                        let arow = ((bi * hh + h) * t + ti) * mrows;
                        lc.catt[arow..arow + mrows].copy_from_slice(&s);
                        let yrow = &mut lc.yc[(bi * t + ti) * d + h * hd..][..hd];
                        for (u, &su) in s.iter().enumerate() {
                            let v = &lc.kvc[(bi * mrows + u) * 2 * d + d + h * hd..][..hd];
                            axpy(yrow, su, v);
                        }
                    }
                }
            }
            linear(&mut o, &lc.yc, self.p(&li.w_co), self.p(&li.b_co), n, d, d);
            axpy(&mut x, T::one(), &o);

            // MLP
            layer_norm(&mut lc.m, &mut lc.ln3_xhat, &mut lc.ln3_rstd, &x, self.p(&li.ln3_g), self.p(&li.ln3_b), d);
            linear(&mut lc.h, &lc.m, self.p(&li.w_1), self.p(&li.b_1), n, d, f);
            for (g, &h) in lc.g.iter_mut().zip(&lc.h) {
                *g = gelu(h);
            }
            linear(&mut o, &lc.g, self.p(&li.w_2), self.p(&li.b_2), n, f, d);
            axpy(&mut x, T::one(), &o);
            layers.push(lc);
        }

        let mut xf = vec![T::zero(); n * d];
        let mut lnf_xhat = vec![T::zero(); n * d];
        let mut lnf_rstd = vec![T::zero(); n];
        layer_norm(&mut xf, &mut lnf_xhat, &mut lnf_rstd, &x, self.p(&ix.lnf_g), self.p(&ix.lnf_b), d);
        let mut logits = vec![T::zero(); n * c.vocab];
        linear(&mut logits, &xf, self.p(&ix.w_head), self.p(&ix.b_head), n, d, c.vocab);
        Ok((
            logits,
            Cache {
                mem,
                layers,
                lnf_xhat,
                lnf_rstd,
                xf,
            },
        ))
    }

    /// Logits `[batch·seq × vocab]`.
    pub fn logits(&self, b: &Batch) -> Result<Vec<T>> {
        Ok(self.forward_cached(b)?.0)
    }

    /// Mean next-token cross-entropy over non-pad targets.
    pub fn loss(&self, b: &Batch) -> Result<f64> {
        let logits = self.logits(b)?;
        Ok(cross_entropy(&logits, &b.targets, self.config.vocab).0)
    }

    /// Loss, gradient w.r.t. every parameter, and next-token accuracy.
    pub fn loss_and_grad(&self, b: &Batch) -> Result<(f64, Vec<T>, f64)> {
        let (logits, cache) = self.forward_cached(b)?;
        let (loss, dlogits, acc) = cross_entropy(&logits, &b.targets, self.config.vocab);
        let grad = self.backward(b, &cache, &dlogits);
        Ok((loss, grad, acc))
    }

    fn backward(&self, b: &Batch, cache: &Cache<T>, dlogits: &[T]) -> Vec<T> {
        let c = &self.config;
        let (bs, t, d, hh, hd, f) = (b.batch, b.seq, c.model_dim, c.heads, c.head_dim(), c.ff_dim);
        let n = bs * t;
        let mrows = PROMPT_ROWS;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let ix = &self.index;
        let mut grad = vec![T::zero(); ix.total];

        let mut dxf = vec![T::zero(); n * d];
        {
            let (gw, gb) = two_mut(&mut grad, &ix.w_head, &ix.b_head);
            linear_backward(&mut dxf, gw, gb, dlogits, &cache.xf, self.p(&ix.w_head), n, d, c.vocab);
        }
        let mut dx = vec![T::zero(); n * d];
        {
            let (gg, gb) = two_mut(&mut grad, &ix.lnf_g, &ix.lnf_b);
            layer_norm_backward(&mut dx, gg, gb, &dxf, &cache.lnf_xhat, &cache.lnf_rstd, self.p(&ix.lnf_g), d);
        }
        let mut dmem = vec![T::zero(); bs * mrows * d];

        for (li, lc) in ix.layers.iter().zip(&cache.layers).rev() {
            // MLP
            let mut dg = vec![T::zero(); n * f];
            {
                let (gw, gb) = two_mut(&mut grad, &li.w_2, &li.b_2);
                linear_backward(&mut dg, gw, gb, &dx, &lc.g, self.p(&li.w_2), n, f, d);
            }
            for (g, &h) in dg.iter_mut().zip(&lc.h) {
                *g = *g * gelu_grad(h);
            }
            let mut dm = vec![T::zero(); n * d];
            {
                let (gw, gb) = two_mut(&mut grad, &li.w_1, &li.b_1);
                linear_backward(&mut dm, gw, gb, &dg, &lc.m, self.p(&li.w_1), n, d, f);
            }
            {
                let (gg, gb) = two_mut(&mut grad, &li.ln3_g, &li.ln3_b);
                layer_norm_backward(&mut dx, gg, gb, &dm, &lc.ln3_xhat, &lc.ln3_rstd, self.p(&li.ln3_g), d);
            }

            // cross-attention
            let mut dyc = vec![T::zero(); n * d];
            {
                let (gw, gb) = two_mut(&mut grad, &li.w_co, &li.b_co);
                linear_backward(&mut dyc, gw, gb, &dx, &lc.yc, self.p(&li.w_co), n, d, d);
            }
            let mut dqc = vec![T::zero(); n * d];
            let mut dkvc = vec![T::zero(); bs * mrows * 2 * d];
            let mut dp = [T::zero(); PROMPT_ROWS];
            for bi in 0..bs {
                for h in 0..hh {
                    for ti in 0..t {
                        let p = &lc.catt[((bi * hh + h) * t + ti) * mrows..][..mrows];
                        let dy = &dyc[(bi * t + ti) * d + h * hd..][..hd];
                        let mut sum = T::zero();
                        for u in 0..mrows {
                            let vo = (bi * mrows + u) * 2 * d + d + h * hd;
                            dp[u] = dot(dy, &lc.kvc[vo..vo + hd]);
                            axpy(&mut dkvc[vo..vo + hd], p[u], dy);
                            sum = sum + p[u] * dp[u];
                        }
                        let qo = (bi * t + ti) * d + h * hd;
                        for u in 0..mrows {
                            let ds = p[u] * (dp[u] - sum) * scale;
                            let ko = (bi * mrows + u) * 2 * d + h * hd;
                            axpy(&mut dqc[qo..qo + hd], ds, &lc.kvc[ko..ko + hd]);
                            axpy(&mut dkvc[ko..ko + hd], ds, &lc.qc[qo..qo + hd]);
                        }
                    }
                }
            }
            {
                let (gw, gb) = two_mut(&mut grad, &li.w_ckv, &li.b_ckv);
                linear_backward(&mut dmem, gw, gb, &dkvc, &cache.mem, self.p(&li.w_ckv), bs * mrows, d, 2 * d);
            }
            let mut dcn = vec![T::zero(); n * d];
            {
                let (gw, gb) = two_mut(&mut grad, &li.w_cq, &li.b_cq);
                linear_backward(&mut dcn, gw, gb, &dqc, &lc.c, self.p(&li.w_cq), n, d, d);
            }
            {
                let (gg, gb) = two_mut(&mut grad, &li.ln2_g, &li.ln2_b);
                layer_norm_backward(&mut dx, gg, gb, &dcn, &lc.ln2_xhat, &lc.ln2_rstd, self.p(&li.ln2_g), d);
            }

            // self-attention
            let mut dy = vec![T::zero(); n * d];
            {
                let (gw, gb) = two_mut(&mut grad, &li.w_o, &li.b_o);
                linear_backward(&mut dy, gw, gb, &dx, &lc.y, self.p(&li.w_o), n, d, d);
            }
            let mut dqkv = vec![T::zero(); n * 3 * d];
            let mut dp = vec![T::zero(); t];
            let mut dq = vec![T::zero(); hd];
            for bi in 0..bs {
                for h in 0..hh {
                    for ti in 0..t {
                        let p = &lc.att[((bi * hh + h) * t + ti) * t..][..t];
                        let dyt = &dy[(bi * t + ti) * d + h * hd..][..hd];
                        let mut sum = T::zero();
                        for u in 0..=ti {
                            let vo = (bi * t + u) * 3 * d + 2 * d + h * hd;
                            dp[u] = dot(dyt, &lc.qkv[vo..vo + hd]);
                            axpy(&mut dqkv[vo..vo + hd], p[u], dyt);
                            sum = sum + p[u] * dp[u];
                        }
                        let qo = (bi * t + ti) * 3 * d + h * hd;
                        dq.fill(T::zero());
                        for u in 0..=ti {
                            let ds = p[u] * (dp[u] - sum) * scale;
                            let ko = (bi * t + u) * 3 * d + d + h * hd;
                            axpy(&mut dq, ds, &lc.qkv[ko..ko + hd]);
                            axpy(&mut dqkv[ko..ko + hd], ds, &lc.qkv[qo..qo + hd]);
                        }
                        axpy(&mut dqkv[qo..qo + hd], T::one(), &dq);
                    }
                }
            }
            let mut da = vec![T::zero(); n * d];
            {
                let (gw, gb) = two_mut(&mut grad, &li.w_qkv, &li.b_qkv);
                linear_backward(&mut da, gw, gb, &dqkv, &lc.a, self.p(&li.w_qkv), n, d, 3 * d);
            }
            {
                let (gg, gb) = two_mut(&mut grad, &li.ln1_g, &li.ln1_b);
                layer_norm_backward(&mut dx, gg, gb, &da, &lc.ln1_xhat, &lc.ln1_rstd, self.p(&li.ln1_g), d);
            }
        }

        for (bi, labels) in b.labels.iter().enumerate() {
            for (i, l) in labels.iter().enumerate() {
                let row = i * 3 + l.index();
                let dst = ix.prompt.start + row * d;
                axpy(&mut grad[dst..dst + d], T::one(), &dmem[(bi * mrows + i) * d..][..d]);
            }
        }
        for r in 0..n {
            let tok = b.tokens[r] as usize;
            let pos = r % t;
            let src = &dx[r * d..(r + 1) * d];
            let we = ix.wte.start + tok * d;
            axpy(&mut grad[we..we + d], T::one(), src);
            let pe = ix.wpe.start + pos * d;
            axpy(&mut grad[pe..pe + d], T::one(), src);
        }
        grad
    }

    /// Next-token distribution after `prefix` under `labels`.
    pub fn next_token_probs(&self, prefix: &[u32], labels: &Labels) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::Config("prefix must hold at least the start token".into()));
        }
        if prefix.len() > self.config.context {
            return Err(Error::Config(format!(
                "prefix length {} exceeds context {}",
                prefix.len(),
                self.config.context
            )));
        }
        let b = Batch {
            batch: 1,
            seq: prefix.len(),
            tokens: prefix.to_vec(),
            targets: vec![PAD; prefix.len()],
            labels: vec![*labels],
        };
        let logits = self.logits(&b)?;
        let v = self.config.vocab;
        let last = &logits[(prefix.len() - 1) * v..];
        Ok(softmax_f64(last.iter().map(|x| x.as_f64())))
    }
}

pub(crate) fn softmax_f64(logits: impl Iterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = logits.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mean cross-entropy, its gradient w.r.t. the logits, and argmax accuracy.
fn cross_entropy<T: Scalar>(logits: &[T], targets: &[u32], vocab: usize) -> (f64, Vec<T>, f64) {
    let counted = targets.iter().filter(|&&t| t != PAD).count();
    let mut dl = vec![T::zero(); logits.len()];
    if counted == 0 {
        return (0.0, dl, 0.0);
    }
    let inv = T::from_f64(1.0 / counted as f64);
    let mut loss = T::zero();
    let mut correct = 0usize;
    for (r, &tgt) in targets.iter().enumerate() {
        if tgt == PAD {
            continue;
        }
        let row = &logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let sum = row.iter().fold(T::zero(), |s, &x| s + (x - max).exp());
        let lse = max + sum.ln();
        loss = loss + (lse - row[tgt as usize]);
        let argmax = (0..vocab).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        if argmax == tgt as usize {
            correct += 1;
        }
        for j in 0..vocab {
            let p = (row[j] - lse).exp();
            let y = if j == tgt as usize { T::one() } else { T::zero() };
            dl[r * vocab + j] = (p - y) * inv;
        }
    }
    debug_assert_eq!(vocab, VOCAB);
    (loss.as_f64() / counted as f64, dl, correct as f64 / counted as f64)
}

fn two_mut<'a, T>(v: &'a mut [T], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    assert!(a.end <= b.start, "parameter ranges must be ordered");
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.end - b.start])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{labels_from_index, Level};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_batch(c: &ModelConfig, bs: usize, t: usize, seed: u64) -> Batch {
        let mut rng = rng_from_seed(seed);
        Batch {
            batch: bs,
            seq: t,
            tokens: (0..bs * t).map(|_| rng.random_range(0..c.vocab as u32)).collect(),
            targets: (0..bs * t).map(|_| rng.random_range(0..(c.vocab - 1) as u32)).collect(),
            labels: (0..bs).map(|_| labels_from_index(rng.random_range(0..243))).collect(),
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let c = ModelConfig::micro();
        let mut m: Model<f64> = Model::init(c.clone(), 1).unwrap();
        // larger weights give every path a non-trivial gradient
        let mut rng = rng_from_seed(2);
        for p in m.params.iter_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let b = random_batch(&c, 2, 6, 3);
        let (_, grad, _) = m.loss_and_grad(&b).unwrap();
        let h = 1e-5;
        let mut num_sq = 0.0;
        let mut diff_sq = 0.0;
        for i in 0..m.params.len() {
            let orig = m.params[i];
            m.params[i] = orig + h;
            let up = m.loss(&b).unwrap();
            m.params[i] = orig - h;
            let down = m.loss(&b).unwrap();
            m.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - grad[i]).abs();
            let scale = fd.abs().max(grad[i].abs());
            assert!(err <= 1e-4 * scale || err < 1e-9, "param {i}: analytic {} numeric {fd}", grad[i]);
            num_sq += scale * scale;
            diff_sq += err * err;
        }
        assert!((diff_sq / num_sq).sqrt() < 1e-6);
    }

    #[test]
    fn outputs_before_a_perturbed_position_are_unchanged() {
        let c = ModelConfig::micro();
        let m: Model<f32> = Model::init(c.clone(), 4).unwrap();
        let b = random_batch(&c, 1, 8, 5);
        let base = m.logits(&b).unwrap();
        for j in 0..8 {
            let mut p = b.clone();
            p.tokens[j] = (p.tokens[j] + 1) % c.vocab as u32;
            let out = m.logits(&p).unwrap();
            let v = c.vocab;
            assert_eq!(&base[..j * v], &out[..j * v], "position {j}");
            assert_ne!(&base[j * v..], &out[j * v..]);
        }
    }

    #[test]
    fn probabilities_are_normalised() {
        let c = ModelConfig::micro();
        let m: Model<f32> = Model::init(c.clone(), 6).unwrap();
        let mut rng = rng_from_seed(7);
        for _ in 0..20 {
            let len = rng.random_range(1..=c.context);
            let prefix: Vec<u32> = (0..len).map(|_| rng.random_range(0..10)).collect();
            let p = m.next_token_probs(&prefix, &labels_from_index(rng.random_range(0..243))).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(m.next_token_probs(&[0; 9], &[Level::Low; 5]).is_err());
    }

    #[test]
    fn prompt_rows_are_independent() {
        let c = ModelConfig::micro();
        let m: Model<f64> = Model::init(c.clone(), 8).unwrap();
        let d = c.model_dim;
        let a = [Level::Low, Level::Mid, Level::High, Level::Low, Level::Low];
        let mut b = a;
        b[4] = Level::High;
        let (ma, mb) = (m.encode_prompt(&a), m.encode_prompt(&b));
        assert_eq!(&ma[..4 * d], &mb[..4 * d]);
        assert_ne!(&ma[4 * d..], &mb[4 * d..]);
        assert_eq!(ma, m.encode_prompt(&a));
        let all: std::collections::BTreeSet<Vec<u64>> = (0..243)
            .map(|i| m.encode_prompt(&labels_from_index(i)).iter().map(|x| x.to_bits()).collect())
            .collect();
        assert_eq!(all.len(), 243);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::micro();
        c.heads = 3;
        assert!(Model::<f32>::init(c, 0).is_err());
        let b = random_batch(&ModelConfig::micro(), 1, 9, 0);
        let m: Model<f32> = Model::init(ModelConfig::micro(), 0).unwrap();
        assert!(m.logits(&b).is_err());
    }
}
