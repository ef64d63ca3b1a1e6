//! Learnable prompt contexts optimised against opinion scores while the
//! backbone stays frozen.
//!
//! A context holds the token-embedding rows of the positive and negative
//! prompts (start/end tokens excluded). Scoring wraps each side in the
//! start/end embeddings, runs the frozen text encoder, and applies the usual
//! two-way softmax against the image embedding. Gradients flow back to the
//! context rows only; encoder weights are borrowed immutably throughout.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::TextTower;
use crate::error::{Error, Result};
use crate::metrics::{srocc, PairedSamples};
use crate::prompts::PromptPair;
use crate::scoring::{sigmoid, Embedding};

/// Affine map of opinion scores onto `[0, 1]`: `(mos - min) / (max - min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScaling {
    pub min: f64,
    pub max: f64,
}

impl LabelScaling {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(Error::Degenerate(format!("label range [{min}, {max}] is empty")));
        }
        Ok(Self { min, max })
    }

    pub fn identity() -> Self {
        Self { min: 0.0, max: 1.0 }
    }

    pub fn fit(labels: &[f64]) -> Result<Self> {
        let min = labels.iter().copied().fold(f64::INFINITY, f64::min);
        let max = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(min, max)
    }

    pub fn apply(&self, mos: f64) -> f64 {
        (mos - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, scaled: f64) -> f64 {
        self.min + scaled * (self.max - self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextMeta {
    pub attribute: String,
    pub positive_prompt: String,
    pub negative_prompt: String,
    pub label_scaling: LabelScaling,
    pub validation_srocc: Option<f64>,
    pub iterations: usize,
}

/// Learnable prompt token embeddings, one matrix per side, each
/// `(tokens, width)`. The two sides may differ in token count when the
/// prompts tokenize to different lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableContext {
    pub positive: Array2<f64>,
    pub negative: Array2<f64>,
    pub meta: ContextMeta,
}

impl LearnableContext {
    pub fn new(positive: Array2<f64>, negative: Array2<f64>, meta: ContextMeta) -> Result<Self> {
        let ctx = Self { positive, negative, meta };
        ctx.validate()?;
        Ok(ctx)
    }

    fn validate(&self) -> Result<()> {
        if self.positive.ncols() != self.negative.ncols() {
            return Err(Error::Contract(format!(
                "context widths differ: {} vs {}",
                self.positive.ncols(),
                self.negative.ncols()
            )));
        }
        if self.positive.iter().chain(self.negative.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("context contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.positive.ncols()
    }

    /// Token rows per side, `(positive, negative)`.
    pub fn context_lengths(&self) -> (usize, usize) {
        (self.positive.nrows(), self.negative.nrows())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(32 + 8 * (self.positive.len() + self.negative.len()) + meta.len() + 32);
        out.extend_from_slice(CTX_MAGIC);
        out.extend_from_slice(&CTX_VERSION.to_le_bytes());
        for n in [self.positive.nrows(), self.negative.nrows(), self.width()] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in self.positive.iter().chain(self.negative.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 + 32 {
            return Err("file too short".into());
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err("checksum mismatch".into());
        }
        if &body[..4] != CTX_MAGIC {
            return Err("not a context file (bad magic)".into());
        }
        let u32_at = |o: usize| -> std::result::Result<usize, String> {
            body.get(o..o + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
                .ok_or_else(|| "truncated header".to_string())
        };
        let version = u32_at(4)?;
        if version != CTX_VERSION as usize {
            return Err(format!("unsupported context version {version}"));
        }
        let (np, nn, w) = (u32_at(8)?, u32_at(12)?, u32_at(16)?);
        let count = (np + nn)
            .checked_mul(w)
            .ok_or_else(|| "context dimensions overflow".to_string())?;
        let data_end = 20 + count * 8;
        let data = body.get(20..data_end).ok_or("truncated data")?;
        let vals: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let meta_len = u32_at(data_end)?;
        let meta_bytes = body
            .get(data_end + 4..data_end + 4 + meta_len)
            .ok_or("truncated metadata")?;
        if data_end + 4 + meta_len != body.len() {
            return Err("trailing bytes after metadata".into());
        }
        let meta: ContextMeta = serde_json::from_slice(meta_bytes).map_err(|e| format!("bad metadata: {e}"))?;
        let positive = Array2::from_shape_vec((np, w), vals[..np * w].to_vec()).map_err(|e| e.to_string())?;
        let negative = Array2::from_shape_vec((nn, w), vals[np * w..].to_vec()).map_err(|e| e.to_string())?;
        Self::new(positive, negative, meta).map_err(|e| e.to_string())
    }

    /// Hex SHA-256 of the serialized context; used in cache keys.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

const CTX_MAGIC: &[u8; 4] = b"LFCX";
const CTX_VERSION: u32 = 1;

pub fn export_context(ctx: &LearnableContext, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&ctx.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn import_context(path: impl AsRef<Path>) -> Result<LearnableContext> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LearnableContext::from_bytes(&bytes).map_err(|m| Error::asset(path, m))
}

/// Context whose rows are the token embeddings of the rendered prompts, so
/// that scoring with it reproduces plain prompt scoring.
pub fn init_context(pair: &PromptPair, tower: TextTower<'_>) -> Result<LearnableContext> {
    let positive = tower.prompt_rows(&pair.positive_text)?;
    let negative = tower.prompt_rows(&pair.negative_text)?;
    LearnableContext::new(
        positive,
        negative,
        ContextMeta {
            attribute: pair.attribute.clone(),
            positive_prompt: pair.positive_text.clone(),
            negative_prompt: pair.negative_text.clone(),
            label_scaling: LabelScaling::identity(),
            validation_srocc: None,
            iterations: 0,
        },
    )
}

fn check_width(ctx: &LearnableContext, tower: TextTower<'_>) -> Result<()> {
    if ctx.width() != tower.encoder.width() {
        return Err(Error::Contract(format!(
            "context width {} does not match the text encoder's token width {}",
            ctx.width(),
            tower.encoder.width()
        )));
    }
    if ctx.positive.nrows().max(ctx.negative.nrows()) + 2 > tower.encoder.context_length() {
        return Err(Error::Contract("context plus start/end tokens exceeds the text context".into()));
    }
    Ok(())
}

/// Text embeddings `(positive, negative)` produced by a context.
pub fn context_embeddings(ctx: &LearnableContext, tower: TextTower<'_>) -> Result<(Embedding, Embedding)> {
    check_width(ctx, tower)?;
    let t1 = tower.encoder.encode_embeddings(tower.wrap(ctx.positive.view())?)?;
    let t2 = tower.encoder.encode_embeddings(tower.wrap(ctx.negative.view())?)?;
    Ok((Embedding::new(t1)?, Embedding::new(t2)?))
}

/// Score of one image under a learnable context, in `(0, 1)`.
pub fn forward_score(image: &Embedding, ctx: &LearnableContext, tower: TextTower<'_>) -> Result<f64> {
    let (t1, t2) = context_embeddings(ctx, tower)?;
    pair_score_from(image, &t1, &t2)
}

fn pair_score_from(image: &Embedding, t1: &Embedding, t2: &Embedding) -> Result<f64> {
    let s1 = crate::scoring::cosine_similarity(image, t1)?;
    let s2 = crate::scoring::cosine_similarity(image, t2)?;
    crate::scoring::pair_score(s1, s2)
}

/// Batch loss and its gradient with respect to both context matrices.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub scores: Vec<f64>,
    pub grad_positive: Array2<f64>,
    pub grad_negative: Array2<f64>,
}

/// Mean squared error between scores and `targets` over `images`, with
/// analytic gradients through the frozen text encoder.
pub fn loss_and_grad(
    ctx: &LearnableContext,
    tower: TextTower<'_>,
    images: &[&Embedding],
    targets: &[f64],
) -> Result<LossGrad> {
    if images.len() != targets.len() || images.is_empty() {
        return Err(Error::Contract(format!(
            "{} images vs {} targets (need equal, non-zero counts)",
            images.len(),
            targets.len()
        )));
    }
    check_width(ctx, tower)?;
    let (t1, tr1) = tower.encoder.forward_traced(tower.wrap(ctx.positive.view())?)?;
    let (t2, tr2) = tower.encoder.forward_traced(tower.wrap(ctx.negative.view())?)?;
    let (n1, n2) = (norm(&t1), norm(&t2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::Degenerate("context produced a zero text embedding".into()));
    }
    let dim = t1.len();
    let inv_b = 1.0 / images.len() as f64;
    let mut g1 = vec![0.0; dim];
    let mut g2 = vec![0.0; dim];
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(images.len());
    for (img, &y) in images.iter().zip(targets) {
        let x = img.values();
        if x.len() != dim {
            return Err(Error::Contract(format!(
                "image embedding has dimension {}, text embedding {dim}",
                x.len()
            )));
        }
        let nx = norm(x);
        if nx == 0.0 {
            return Err(Error::Degenerate("zero-norm image embedding".into()));
        }
        let s1 = dot(x, &t1) / (nx * n1);
        let s2 = dot(x, &t2) / (nx * n2);
        let p = sigmoid(s1 - s2);
        let r = p - y;
        loss += r * r * inv_b;
        scores.push(p);
        // d loss / d (s1 - s2)
        let dz = 2.0 * r * inv_b * p * (1.0 - p);
        // d cos(x, t) / d t = x / (|x||t|) - cos * t / |t|^2
        for k in 0..dim {
            g1[k] += dz * (x[k] / (nx * n1) - s1 * t1[k] / (n1 * n1));
            g2[k] -= dz * (x[k] / (nx * n2) - s2 * t2[k] / (n2 * n2));
        }
    }
    let d1 = unwrap_grad(tower.encoder.backward(&tr1, &g1)?, ctx.positive.nrows());
    let d2 = unwrap_grad(tower.encoder.backward(&tr2, &g2)?, ctx.negative.nrows());
    Ok(LossGrad {
        loss,
        scores,
        grad_positive: d1,
        grad_negative: d2,
    })
}

/// Drops the start/end rows from a gradient over `[start; ctx; end]`.
fn unwrap_grad(full: Array2<f64>, rows: usize) -> Array2<f64> {
    full.slice(ndarray::s![1..1 + rows, ..]).to_owned()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Fixed `[min, max]` opinion-score range; fitted on the training split when absent.
    pub label_range: Option<[f64; 2]>,
    /// Share of the training split held out for validation SROCC.
    pub validation_fraction: f64,
    /// Log (and validate) every this many iterations; 0 logs only the ends.
    pub log_every: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            iterations: 100_000,
            batch_size: 64,
            loss: Loss::Mse,
            optimizer: Optimizer::Sgd,
            seed: 0,
            label_range: None,
            validation_fraction: 0.1,
            log_every: 1000,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One training example: an image embedding with its opinion score.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub embedding: Embedding,
    pub mos: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    /// Batch MSE before the update at this iteration.
    pub loss: f64,
    pub val_srocc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub context: LearnableContext,
    pub log: Vec<LogRecord>,
    pub validation_ids: Vec<String>,
}

/// Seeded split of `n` indices into (train, validation).
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = ((n as f64) * fraction).floor() as usize;
    if n_val == 0 || n - n_val == 0 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a11));
    let val = idx.split_off(n - n_val);
    idx.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (idx, val)
}

/// SROCC between context scores and labels on `samples`.
pub fn context_srocc(ctx: &LearnableContext, tower: TextTower<'_>, samples: &[&TrainSample]) -> Result<f64> {
    let (t1, t2) = context_embeddings(ctx, tower)?;
    let preds = samples
        .iter()
        .map(|s| pair_score_from(&s.embedding, &t1, &t2))
        .collect::<Result<Vec<_>>>()?;
    srocc(&PairedSamples::new(preds, samples.iter().map(|s| s.mos).collect())?)
}

/// Plain minibatch SGD on both context matrices.
///
/// `on_log` receives each log record as it is produced (for streaming to a
/// JSONL file); the full log is also returned.
pub fn tune(
    samples: &[TrainSample],
    tower: TextTower<'_>,
    init: LearnableContext,
    config: &TuneConfig,
    mut on_log: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<TuneOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    check_width(&init, tower)?;
    let (train_idx, val_idx) = validation_split(samples.len(), config.validation_fraction, config.seed);
    let train: Vec<&TrainSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val: Vec<&TrainSample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let scaling = match config.label_range {
        Some([lo, hi]) => LabelScaling::new(lo, hi)?,
        None => LabelScaling::fit(&samples.iter().map(|s| s.mos).collect::<Vec<_>>())?,
    };
    let targets: Vec<f64> = train.iter().map(|s| scaling.apply(s.mos)).collect();

    let mut ctx = init;
    ctx.meta.label_scaling = scaling;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch = config.batch_size.min(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut log = Vec::new();
    let val_srocc = |c: &LearnableContext| -> Option<f64> {
        if val.len() < 2 {
            return None;
        }
        context_srocc(c, tower, &val).ok()
    };

    for it in 0..config.iterations {
        let mut imgs = Vec::with_capacity(batch);
        let mut ys = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            imgs.push(&train[order[cursor]].embedding);
            ys.push(targets[order[cursor]]);
            cursor += 1;
        }
        let lg = loss_and_grad(&ctx, tower, &imgs, &ys)?;
        let grads_finite = lg.grad_positive.iter().chain(lg.grad_negative.iter()).all(|g| g.is_finite());
        if !lg.loss.is_finite() || !grads_finite {
            return Err(Error::Divergence {
                iteration: it,
                loss: lg.loss,
                last_good: Box::new(ctx),
            });
        }
        let is_log = it == 0 || (config.log_every > 0 && it % config.log_every == 0);
        if is_log {
            let rec = LogRecord {
                iteration: it,
                loss: lg.loss,
                val_srocc: val_srocc(&ctx),
            };
            on_log(&rec)?;
            log.push(rec);
        }
        let mut next = ctx.clone();
        next.positive.scaled_add(-config.learning_rate, &lg.grad_positive);
        next.negative.scaled_add(-config.learning_rate, &lg.grad_negative);
        if next.positive.iter().chain(next.negative.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                loss: lg.loss,
                last_good: Box::new(ctx),
            });
        }
        ctx = next;
    }

    // closing record describes the returned context
    let all: Vec<&Embedding> = train.iter().map(|s| &s.embedding).collect();
    let final_loss = loss_and_grad(&ctx, tower, &all, &targets)?.loss;
    let rec = LogRecord {
        iteration: config.iterations,
        loss: final_loss,
        val_srocc: val_srocc(&ctx),
    };
    on_log(&rec)?;
    ctx.meta.validation_srocc = rec.val_srocc;
    ctx.meta.iterations += config.iterations;
    log.push(rec);
    Ok(TuneOutcome {
        context: ctx,
        log,
        validation_ids: val.iter().map(|s| s.id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::synthetic::SyntheticSpec;
    use crate::backbone::{load_backbone, Backbone, Encoder, PosEmbeddingMode, Variant};
    use crate::prompts::{PromptRegistry, TemplateId};
    use crate::scoring::score_image;
    use rand_distr::{Distribution, Normal};

    fn tiny_backbone() -> (tempfile::TempDir, Backbone) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticSpec::tiny(Variant::ResidualAttnPool)
            .build()
            .install(dir.path(), PosEmbeddingMode::Removed)
            .unwrap();
        let bb = load_backbone(&cfg).unwrap();
        (dir, bb)
    }

    fn random_embeddings(n: usize, dim: usize, seed: u64) -> Vec<Embedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| Embedding::new((0..dim).map(|_| d.sample(&mut rng)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn init_reproduces_prompt_scores() {
        let (_d, bb) = tiny_backbone();
        let tower = bb.text_tower().unwrap();
        let pair = PromptRegistry::builtin().get_pair("quality").unwrap();
        let ctx = init_context(&pair, tower).unwrap();
        assert_eq!(ctx, init_context(&pair, tower).unwrap());
        let (t1, t2) = bb.pair_embeddings(&pair).unwrap();
        for x in random_embeddings(10, bb.embed_dim(), 1) {
            let frozen = score_image(&x, &pair, (&t1, &t2)).unwrap().score;
            let tuned = forward_score(&x, &ctx, tower).unwrap();
            assert!((frozen - tuned).abs() < 1e-6);
            assert!(tuned > 0.0 && tuned < 1.0);
        }
        let expected = bb.tokenize("Good photo.").unwrap().content().len();
        assert_eq!(ctx.context_lengths().0, expected);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let (_d, bb) = tiny_backbone();
        let tower = bb.text_tower().unwrap();
        let pair = PromptRegistry::builtin().get_pair("quality").unwrap();
        let mut ctx = init_context(&pair, tower).unwrap();
        ctx.positive = Array2::zeros((2, 3));
        ctx.negative = Array2::zeros((2, 3));
        let x = &random_embeddings(1, bb.embed_dim(), 2)[0];
        assert!(matches!(forward_score(x, &ctx, tower), Err(Error::Contract(_))));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (_d, bb) = tiny_backbone();
        let tower = bb.text_tower().unwrap();
        let pair = PromptPair::new("q", "High quality", "Low quality", TemplateId::T1).unwrap();
        let ctx = init_context(&pair, tower).unwrap();
        let xs = random_embeddings(6, bb.embed_dim(), 3);
        let refs: Vec<&Embedding> = xs.iter().collect();
        let ys = [0.1, 0.9, 0.4, 0.6, 0.2, 0.8];
        let lg = loss_and_grad(&ctx, tower, &refs, &ys).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for side in 0..2 {
            let (rows, cols) = if side == 0 { ctx.positive.dim() } else { ctx.negative.dim() };
            for r in 0..rows {
                for c in (0..cols).step_by(3) {
                    let bump = |delta: f64| {
                        let mut c2 = ctx.clone();
                        let m = if side == 0 { &mut c2.positive } else { &mut c2.negative };
                        m[[r, c]] += delta;
                        loss_and_grad(&c2, tower, &refs, &ys).unwrap().loss
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let an = if side == 0 { lg.grad_positive[[r, c]] } else { lg.grad_negative[[r, c]] };
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn export_import_round_trip() {
        let (_d, bb) = tiny_backbone();
        let tower = bb.text_tower().unwrap();
        let pair = PromptRegistry::builtin().get_pair("quality").unwrap();
        let mut ctx = init_context(&pair, tower).unwrap();
        ctx.positive[[0, 0]] = std::f64::consts::PI;
        ctx.meta.validation_srocc = Some(0.123456789);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ctx.bin");
        export_context(&ctx, &p).unwrap();
        let back = import_context(&p).unwrap();
        assert_eq!(back, ctx);
        assert_eq!(back.positive[[0, 0]].to_bits(), std::f64::consts::PI.to_bits());

        let mut bytes = std::fs::read(&p).unwrap();
        bytes[30] ^= 0xff;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(import_context(&p), Err(Error::Asset { .. })));
    }

    #[test]
    fn export_size_is_small() {
        let meta = ContextMeta {
            attribute: "quality".into(),
            positive_prompt: "Good photo.".into(),
            negative_prompt: "Bad photo.".into(),
            label_scaling: LabelScaling::identity(),
            validation_srocc: None,
            iterations: 0,
        };
        let ctx = LearnableContext::new(Array2::zeros((8, 1024)), Array2::zeros((8, 1024)), meta).unwrap();
        assert!(ctx.to_bytes().len() < 1 << 20);
    }

    #[test]
    fn empty_training_split_rejected() {
        let (_d, bb) = tiny_backbone();
        let tower = bb.text_tower().unwrap();
        let pair = PromptRegistry::builtin().get_pair("quality").unwrap();
        let ctx = init_context(&pair, tower).unwrap();
        let r = tune(&[], tower, ctx, &TuneConfig::default(), |_| Ok(()));
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn divergence_keeps_last_good_context() {
        let (_d, bb) = tiny_backbone();
        let tower = bb.text_tower().unwrap();
        let pair = PromptRegistry::builtin().get_pair("quality").unwrap();
        let ctx = init_context(&pair, tower).unwrap();
        // one unusable label makes the loss non-finite once it is drawn
        let samples: Vec<TrainSample> = random_embeddings(8, bb.embed_dim(), 4)
            .into_iter()
            .enumerate()
            .map(|(i, e)| TrainSample {
                id: i.to_string(),
                embedding: e,
                mos: if i == 5 { f64::INFINITY } else { i as f64 / 8.0 },
            })
            .collect();
        let cfg = TuneConfig {
            learning_rate: 0.5,
            iterations: 50,
            batch_size: 1,
            validation_fraction: 0.0,
            label_range: Some([0.0, 1.0]),
            ..TuneConfig::default()
        };
        match tune(&samples, tower, ctx.clone(), &cfg, |_| Ok(())) {
            Err(Error::Divergence { iteration, last_good, .. }) => {
                assert!(last_good.positive.iter().all(|v| v.is_finite()));
                if iteration > 0 {
                    assert_ne!(*last_good, ctx);
                }
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TuneConfig::default().validate().is_ok());
        let bad = TuneConfig {
            learning_rate: 0.0,
            ..TuneConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let d = TuneConfig::default();
        assert_eq!((d.learning_rate, d.iterations, d.batch_size), (0.002, 100_000, 64));
    }

    #[test]
    fn label_scaling_maps_range_to_unit_interval() {
        let s = LabelScaling::fit(&[1.0, 3.0, 5.0]).unwrap();
        assert_eq!(s.apply(1.0), 0.0);
        assert_eq!(s.apply(5.0), 1.0);
        assert_eq!(s.invert(0.5), 3.0);
        assert!(matches!(LabelScaling::fit(&[2.0, 2.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn validation_split_is_seeded_and_disjoint() {
        let (t, v) = validation_split(50, 0.1, 9);
        assert_eq!(v.len(), 5);
        assert_eq!(t.len(), 45);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(validation_split(50, 0.1, 9), (t, v));
    }
}
