use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{Batch, Model};
use super::{char_token, END, PAD, START};
use crate::dataset::{LabeledDesign, Labels};
use crate::error::{Error, Result};
use crate::rng::child_rng;

/// One training sequence: start, the row-major category tokens, end.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleSeq {
    pub tokens: Vec<u32>,
    pub labels: Labels,
}

pub fn encode_record(record: &LabeledDesign) -> Result<ExampleSeq> {
    let tokens = record
        .tokens
        .chars()
        .map(|c| char_token(c).ok_or_else(|| Error::Config(format!("unknown token {c:?}"))))
        .collect::<Result<Vec<u32>>>()?;
    if tokens.len() < 2 || tokens[0] != START || tokens[tokens.len() - 1] != END {
        return Err(Error::Config("record tokens must be wrapped in start/end".into()));
    }
    if tokens[1..tokens.len() - 1].iter().any(|&t| t == START || t == END) {
        return Err(Error::Config("start/end tokens inside a record".into()));
    }
    Ok(ExampleSeq {
        tokens,
        labels: record.labels,
    })
}

/// Teacher-forced batch; shorter sequences are padded and their pad
/// targets ignored.
pub fn make_batch(examples: &[&ExampleSeq]) -> Batch {
    let seq = examples.iter().map(|e| e.tokens.len() - 1).max().unwrap_or(1);
    let mut tokens = Vec::with_capacity(examples.len() * seq);
    let mut targets = Vec::with_capacity(examples.len() * seq);
    for e in examples {
        let n = e.tokens.len() - 1;
        tokens.extend_from_slice(&e.tokens[..n]);
        targets.extend_from_slice(&e.tokens[1..]);
        tokens.extend(std::iter::repeat_n(PAD, seq - n));
        targets.extend(std::iter::repeat_n(PAD, seq - n));
    }
    Batch {
        batch: examples.len(),
        seq,
        tokens,
        targets,
        labels: examples.iter().map(|e| e.labels).collect(),
    }
}

/// Adam with linear warmup then cosine decay to `min_lr_fraction·lr`, and
/// global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub min_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Fraction of examples held out for monitoring.
    pub holdout_fraction: f64,
    pub eval_every: usize,
    /// Cap on held-out examples scored per evaluation.
    pub eval_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 16,
            lr: 1e-3,
            warmup: 200,
            min_lr_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            holdout_fraction: 0.05,
            eval_every: 500,
            eval_examples: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.min_lr_fraction) {
            return Err(Error::Config("min_lr_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1);
        let p = ((step - self.warmup) as f64 / span as f64).min(1.0);
        let floor = self.lr * self.min_lr_fraction;
        floor + (self.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps_done: usize,
    /// `(step, training batch loss)` for every step.
    pub losses: Vec<(usize, f64)>,
    /// `(step, held-out loss)` at step 0, every `eval_every` steps and at the end.
    pub heldout: Vec<(usize, f64)>,
    pub train_count: usize,
    pub heldout_count: usize,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.losses {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }
}

/// Splits indices into (train, held-out) with a seeded shuffle.
pub fn split_holdout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut child_rng(seed, &[u64::MAX]));
    let held = ((n as f64 * fraction).floor() as usize).min(n.saturating_sub(1));
    let heldout = idx.split_off(n - held);
    (idx, heldout)
}

fn mean_loss(model: &Model<f32>, examples: &[ExampleSeq], idx: &[usize], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0usize;
    for chunk in idx.chunks(batch.max(1)) {
        let refs: Vec<&ExampleSeq> = chunk.iter().map(|&i| &examples[i]).collect();
        let b = make_batch(&refs);
        let n = b.targets.iter().filter(|&&t| t != PAD).count();
        total += model.loss(&b)? * n as f64;
        weight += n;
    }
    Ok(if weight == 0 { 0.0 } else { total / weight as f64 })
}

/// Next-token accuracy of argmax predictions over all non-pad targets.
pub fn accuracy(model: &Model<f32>, examples: &[ExampleSeq]) -> Result<f64> {
    let mut correct = 0.0;
    let mut n = 0usize;
    for chunk in examples.chunks(16) {
        let refs: Vec<&ExampleSeq> = chunk.iter().collect();
        let b = make_batch(&refs);
        let (_, _, acc) = model.loss_and_grad(&b)?;
        let k = b.targets.iter().filter(|&&t| t != PAD).count();
        correct += acc * k as f64;
        n += k;
    }
    Ok(if n == 0 { 0.0 } else { correct / n as f64 })
}

/// Trains in place. Batches for step `s` are drawn uniformly (with
/// replacement) from the training split by `child_rng(seed, [s])`. A
/// non-finite loss or gradient aborts with [`Error::Diverged`] and leaves the
/// parameters at the last good step.
pub fn train(model: &mut Model<f32>, examples: &[ExampleSeq], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(e) = examples.iter().find(|e| e.tokens.len() - 1 > model.config.context) {
        return Err(Error::Config(format!(
            "sequence of {} tokens exceeds context {}",
            e.tokens.len(),
            model.config.context
        )));
    }
    let (train_idx, held_idx) = split_holdout(examples.len(), cfg.holdout_fraction, cfg.seed);
    let held_eval: Vec<usize> = held_idx.iter().copied().take(cfg.eval_examples).collect();
    let n = model.params.len();
    let mut m = vec![0f32; n];
    let mut v = vec![0f32; n];
    let mut report = TrainReport {
        train_count: train_idx.len(),
        heldout_count: held_idx.len(),
        ..TrainReport::default()
    };
    let evaluate = |model: &Model<f32>, step: usize, report: &mut TrainReport| -> Result<()> {
        if !held_eval.is_empty() {
            report.heldout.push((step, mean_loss(model, examples, &held_eval, cfg.batch_size)?));
        }
        Ok(())
    };
    evaluate(model, 0, &mut report)?;
    for step in 0..cfg.steps {
        let mut rng = child_rng(cfg.seed, &[step as u64]);
        let refs: Vec<&ExampleSeq> = (0..cfg.batch_size)
            .map(|_| &examples[train_idx[rng.random_range(0..train_idx.len())]])
            .collect();
        let batch = make_batch(&refs);
        let (loss, mut grad, _) = model.loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                msg: format!("loss is {loss}"),
            });
        }
        let norm = grad.iter().map(|g| (*g as f64) * (*g as f64)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged {
                step,
                msg: "gradient is not finite".into(),
            });
        }
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            let s = (cfg.grad_clip / norm) as f32;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        let lr = cfg.lr_at(step);
        let t = (step + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = cfg.eps as f32;
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            model.params[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
        }
        report.losses.push((step, loss));
        report.steps_done = step + 1;
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 != cfg.steps {
            evaluate(model, step + 1, &mut report)?;
        }
        if (step + 1) % 100 == 0 {
            log::debug!("step {} loss {loss:.4} lr {lr:.2e}", step + 1);
        }
    }
    if cfg.steps > 0 {
        evaluate(model, cfg.steps, &mut report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;
    use crate::dataset::labels_from_index;
    use crate::rng::rng_from_seed;

    fn random_examples(n: usize, len: usize, seed: u64) -> Vec<ExampleSeq> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|i| {
                let mut tokens = vec![START];
                tokens.extend((0..len).map(|_| rng.random_range(0..7u32)));
                tokens.push(END);
                ExampleSeq {
                    tokens,
                    labels: labels_from_index(i * 31),
                }
            })
            .collect()
    }

    #[test]
    fn schedule_warms_up_and_decays_to_floor() {
        let c = TrainConfig {
            steps: 1000,
            warmup: 100,
            lr: 1.0,
            ..TrainConfig::default()
        };
        assert!((c.lr_at(0) - 0.01).abs() < 1e-12);
        assert!((c.lr_at(99) - 1.0).abs() < 1e-12);
        assert!((c.lr_at(100) - 1.0).abs() < 1e-12);
        assert!((c.lr_at(1000) - 0.1).abs() < 1e-12);
        assert!(c.lr_at(500) < c.lr_at(200));
    }

    #[test]
    fn batches_pad_shorter_sequences() {
        let mut ex = random_examples(2, 4, 0);
        ex[1].tokens.truncate(3);
        ex[1].tokens.push(END);
        let b = make_batch(&[&ex[0], &ex[1]]);
        assert_eq!(b.seq, 5);
        assert_eq!(&b.targets[5..], &[ex[1].tokens[1], ex[1].tokens[2], END, PAD, PAD]);
    }

    #[test]
    fn holdout_split_is_disjoint_and_seeded() {
        let (a, b) = split_holdout(100, 0.1, 3);
        assert_eq!(b.len(), 10);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_holdout(100, 0.1, 3), (a, b));
        assert!(split_holdout(1, 0.5, 0).0.len() == 1);
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let mut c = ModelConfig::micro();
        c.context = 8;
        let ex = random_examples(40, 6, 1);
        let cfg = TrainConfig {
            steps: 60,
            batch_size: 4,
            lr: 3e-3,
            warmup: 5,
            holdout_fraction: 0.0,
            ..TrainConfig::default()
        };
        let mut a = Model::init(c.clone(), 0).unwrap();
        let mut b = Model::init(c, 0).unwrap();
        let ra = train(&mut a, &ex, &cfg).unwrap();
        let rb = train(&mut b, &ex, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ra, rb);
        let first: f64 = ra.losses[..10].iter().map(|l| l.1).sum();
        let last: f64 = ra.losses[50..].iter().map(|l| l.1).sum();
        assert!(last < first);
        assert!(ra.loss_csv().starts_with("step,loss\n0,"));
    }

    #[test]
    fn divergence_keeps_last_good_parameters() {
        let c = ModelConfig::micro();
        let mut m = Model::init(c, 0).unwrap();
        m.params[0] = f32::NAN;
        let before = m.params.clone();
        let mut ex = random_examples(4, 6, 2);
        for e in &mut ex {
            e.tokens[1] = 0;
        }
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 2,
            holdout_fraction: 0.0,
            ..TrainConfig::default()
        };
        match train(&mut m, &ex, &cfg) {
            Err(Error::Diverged { step: 0, .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
        assert_eq!(m.params.len(), before.len());
        assert!(m.params[1..] == before[1..]);
    }
}
