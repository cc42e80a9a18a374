//! word2vec (skip-gram, negative sampling) and doc2vec (PV-DM with
//! concatenated inputs), trained from scratch.
//!
//! Both models share the negative-sampling machinery: the observed word is
//! scored against its input vector with label 1 and `negatives` noise words
//! drawn from the unigram distribution raised to 0.75 with label 0. The
//! learning rate decays linearly over all training tokens.
//!
//! With `workers == 1` training is sequential and bit-reproducible. With
//! more workers each epoch trains disjoint document shards on private
//! copies of the parameters and averages them afterwards, which keeps the
//! result deterministic for a given worker count.

use std::collections::HashSet;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, BinReader, BinWriter};
use crate::bow::FeatureVector;
use crate::error::{Error, Result};
use crate::textproc::{TokenizedDoc, Vocabulary};

const NOISE_POWER: f64 = 0.75;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// ln(1 + eˣ) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Loss and gradients of −ln σ(u₊·h) − Σ ln σ(−u₋·h).
#[derive(Debug, Clone, PartialEq)]
pub struct NsGradient {
    pub loss: f64,
    pub input: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Negative-sampling loss of one observation with input vector `h`.
pub fn ns_loss_and_grad(h: &[f64], positive: &[f64], negatives: &[&[f64]]) -> NsGradient {
    let mut input = vec![0.0; h.len()];
    let f = dot(positive, h);
    let mut loss = softplus(-f);
    let gp = sigmoid(f) - 1.0;
    axpy(gp, positive, &mut input);
    let positive = h.iter().map(|x| gp * x).collect();
    let negatives = negatives
        .iter()
        .map(|u| {
            let f = dot(u, h);
            loss += softplus(f);
            let gn = sigmoid(f);
            axpy(gn, u, &mut input);
            h.iter().map(|x| gn * x).collect()
        })
        .collect();
    NsGradient {
        loss,
        input,
        positive,
        negatives,
    }
}

/// Skip-gram loss for one (center, context) pair: the center word's input
/// vector `v` predicts the context word's output vector.
pub fn sgns_loss_and_grad(v: &[f64], context: &[f64], negatives: &[&[f64]]) -> NsGradient {
    ns_loss_and_grad(v, context, negatives)
}

/// One SGD step on a single (input, target, label) triple: accumulates the
/// input's update in `grad_h` and updates `out` in place. Returns the loss
/// term, or `None` when the score is not finite.
fn ns_step(h: &[f64], grad_h: &mut [f64], out: &mut [f64], label: f64, lr: f64) -> Option<f64> {
    let f = dot(out, h);
    if !f.is_finite() {
        return None;
    }
    let g = (label - sigmoid(f)) * lr;
    axpy(g, out, grad_h);
    axpy(g, h, out);
    Some(if label > 0.0 {
        softplus(-f)
    } else {
        softplus(f)
    })
}

/// Unigram^0.75 sampler over vocabulary ids.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    index: WeightedIndex<f64>,
}

impl NoiseDistribution {
    pub fn new(counts: &[u64]) -> Result<Self> {
        let weights = counts.iter().map(|&c| (c as f64).powf(NOISE_POWER));
        let index = WeightedIndex::new(weights)
            .map_err(|e| Error::Degenerate(format!("noise distribution: {e}")))?;
        Ok(NoiseDistribution { index })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.index.sample(rng)
    }
}

fn token_counts(docs: &[Vec<usize>], n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n];
    for &t in docs.iter().flatten() {
        counts[t] += 1;
    }
    counts
}

fn uniform_init(rng: &mut ChaCha8Rng, len: usize, r: usize) -> Vec<f64> {
    let half = 0.5 / r as f64;
    (0..len).map(|_| rng.random_range(-half..half)).collect()
}

fn check_finite(params: &[&[f64]], step: u64, what: &str) -> Result<()> {
    if params.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged {
            step,
            message: format!("non-finite {what} parameters"),
        });
    }
    Ok(())
}

fn diverged(step: u64) -> Error {
    Error::Diverged {
        step,
        message: "non-finite score".into(),
    }
}

/// Linear decay from `start` at progress 0 to `end` at progress 1.
fn decayed_rate(start: f64, end: f64, done: u64, total: u64) -> f64 {
    let frac = if total == 0 {
        0.0
    } else {
        (done as f64 / total as f64).min(1.0)
    };
    start - (start - end) * frac
}

/// Split `n` items into at most `workers` contiguous ranges.
fn shards(n: usize, workers: usize) -> Vec<std::ops::Range<usize>> {
    let k = workers.clamp(1, n.max(1));
    (0..k).map(|i| (i * n / k)..((i + 1) * n / k)).collect()
}

fn average_into(target: &mut [f64], copies: &[&[f64]]) {
    let scale = 1.0 / copies.len() as f64;
    for (i, t) in target.iter_mut().enumerate() {
        *t = copies.iter().map(|c| c[i]).sum::<f64>() * scale;
    }
}

fn shard_rng(seed: u64, epoch: usize, shard: usize, workers: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch * workers + shard) as u64 + 1);
    rng
}

fn validate_common(
    dim: usize,
    window: usize,
    epochs: usize,
    min_count: usize,
    lr: f64,
    min_lr: f64,
    workers: usize,
) -> Result<()> {
    let bad = |m: &str| Err(Error::Parameter(m.into()));
    if dim < 1 {
        return bad("embedding dimension must be at least 1");
    }
    if window < 1 {
        return bad("window must be at least 1");
    }
    if epochs < 1 {
        return bad("epochs must be at least 1");
    }
    if min_count < 1 {
        return bad("min_count must be at least 1");
    }
    if !(lr > 0.0 && lr.is_finite()) || !(0.0..=lr).contains(&min_lr) {
        return bad("learning rates must satisfy 0 <= min_learning_rate <= learning_rate");
    }
    if workers < 1 {
        return bad("workers must be at least 1");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Word2VecParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub min_count: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    /// Frequent-word subsampling threshold; off when `None`.
    pub subsample: Option<f64>,
    pub workers: usize,
}

impl Default for Word2VecParams {
    fn default() -> Self {
        Word2VecParams {
            dim: 200,
            window: 5,
            negatives: 13,
            min_count: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            subsample: None,
            workers: 1,
        }
    }
}

impl Word2VecParams {
    pub fn validate(&self) -> Result<()> {
        validate_common(
            self.dim,
            self.window,
            self.epochs,
            self.min_count,
            self.learning_rate,
            self.min_learning_rate,
            self.workers,
        )?;
        if let Some(t) = self.subsample {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Parameter(
                    "subsample threshold must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word2VecModel {
    pub params: Word2VecParams,
    pub seed: u64,
    pub vocab: Vocabulary,
    /// Training token count per vocabulary id.
    pub counts: Vec<u64>,
    /// Input (word) vectors, row-major `vocab.len() × dim`.
    pub w: Vec<f64>,
    /// Output (context) vectors, same shape.
    pub w_out: Vec<f64>,
}

struct W2vState {
    w: Vec<f64>,
    w_out: Vec<f64>,
}

struct W2vShardCtx<'a> {
    params: &'a Word2VecParams,
    noise: &'a NoiseDistribution,
    keep_prob: Option<&'a [f64]>,
    total_tokens: u64,
    first_step: u64,
    step_scale: u64,
}

fn train_w2v_shard(
    state: &mut W2vState,
    docs: &[Vec<usize>],
    ctx: &W2vShardCtx,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let p = ctx.params;
    let r = p.dim;
    let mut grad = vec![0.0; r];
    let mut kept: Vec<usize> = Vec::new();
    let mut loss = 0.0;
    let mut local = 0u64;
    for doc in docs {
        kept.clear();
        match ctx.keep_prob {
            Some(keep) => kept.extend(
                doc.iter()
                    .copied()
                    .filter(|&t| rng.random::<f64>() < keep[t]),
            ),
            None => kept.extend_from_slice(doc),
        }
        for (pos, &center) in kept.iter().enumerate() {
            let step = ctx.first_step + local * ctx.step_scale;
            let lr = decayed_rate(p.learning_rate, p.min_learning_rate, step, ctx.total_tokens);
            local += 1;
            let b = rng.random_range(1..=p.window);
            let lo = pos.saturating_sub(b);
            let hi = (pos + b).min(kept.len() - 1);
            for (cpos, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                if cpos == pos {
                    continue;
                }
                grad.iter_mut().for_each(|g| *g = 0.0);
                let (w, w_out) = (&mut state.w, &mut state.w_out);
                let h = &w[center * r..(center + 1) * r];
                loss += ns_step(
                    h,
                    &mut grad,
                    &mut w_out[context * r..(context + 1) * r],
                    1.0,
                    lr,
                )
                .ok_or_else(|| diverged(step))?;
                for _ in 0..p.negatives {
                    let neg = ctx.noise.sample(rng);
                    if neg == context {
                        continue;
                    }
                    loss += ns_step(h, &mut grad, &mut w_out[neg * r..(neg + 1) * r], 0.0, lr)
                        .ok_or_else(|| diverged(step))?;
                }
                axpy(1.0, &grad, &mut w[center * r..(center + 1) * r]);
            }
        }
    }
    Ok(loss)
}

/// Train skip-gram word vectors on `docs`.
pub fn train_word2vec(
    docs: &[TokenizedDoc],
    params: &Word2VecParams,
    seed: u64,
) -> Result<Word2VecModel> {
    params.validate()?;
    if docs.is_empty() {
        return Err(Error::Validation(
            "cannot train word2vec on an empty corpus".into(),
        ));
    }
    let vocab = Vocabulary::build(docs, params.min_count)?;
    if vocab.is_empty() {
        return Err(Error::Validation(format!(
            "no term occurs in {} or more documents",
            params.min_count
        )));
    }
    let encoded: Vec<Vec<usize>> = docs.iter().map(|d| vocab.encode(d)).collect();
    let counts = token_counts(&encoded, vocab.len());
    let noise = NoiseDistribution::new(&counts)?;
    let tokens_per_epoch: u64 = counts.iter().sum();
    let keep_prob: Option<Vec<f64>> = params.subsample.map(|t| {
        counts
            .iter()
            .map(|&c| {
                let f = c as f64 / tokens_per_epoch as f64;
                ((f / t).sqrt() + 1.0) * t / f
            })
            .collect()
    });

    let r = params.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = W2vState {
        w: uniform_init(&mut rng, vocab.len() * r, r),
        w_out: vec![0.0; vocab.len() * r],
    };
    let total_tokens = tokens_per_epoch * params.epochs as u64;
    let parts = shards(encoded.len(), params.workers);
    for epoch in 0..params.epochs {
        let first = tokens_per_epoch * epoch as u64;
        if parts.len() == 1 {
            let ctx = W2vShardCtx {
                params,
                noise: &noise,
                keep_prob: keep_prob.as_deref(),
                total_tokens,
                first_step: first,
                step_scale: 1,
            };
            train_w2v_shard(&mut state, &encoded, &ctx, &mut rng)?;
        } else {
            let results: Vec<Result<W2vState>> = parts
                .par_iter()
                .enumerate()
                .map(|(i, range)| {
                    let mut local = W2vState {
                        w: state.w.clone(),
                        w_out: state.w_out.clone(),
                    };
                    let ctx = W2vShardCtx {
                        params,
                        noise: &noise,
                        keep_prob: keep_prob.as_deref(),
                        total_tokens,
                        first_step: first,
                        step_scale: parts.len() as u64,
                    };
                    let mut rng = shard_rng(seed, epoch, i, parts.len());
                    train_w2v_shard(&mut local, &encoded[range.clone()], &ctx, &mut rng)?;
                    Ok(local)
                })
                .collect();
            let locals = results.into_iter().collect::<Result<Vec<_>>>()?;
            average_into(
                &mut state.w,
                &locals.iter().map(|s| s.w.as_slice()).collect::<Vec<_>>(),
            );
            average_into(
                &mut state.w_out,
                &locals
                    .iter()
                    .map(|s| s.w_out.as_slice())
                    .collect::<Vec<_>>(),
            );
        }
        check_finite(
            &[&state.w, &state.w_out],
            first + tokens_per_epoch,
            "word2vec",
        )?;
    }
    Ok(Word2VecModel {
        params: *params,
        seed,
        vocab,
        counts,
        w: state.w,
        w_out: state.w_out,
    })
}

impl Word2VecModel {
    const MAGIC: &'static [u8; 8] = b"PAW2V001";

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.w[id * self.dim()..(id + 1) * self.dim()]
    }

    pub fn vector_of(&self, term: &str) -> Option<&[f64]> {
        self.vocab.index_of(term).map(|i| self.vector(i))
    }

    /// Embedding id of every term of `bow_vocab`, `None` where it has none.
    pub fn align(&self, bow_vocab: &Vocabulary) -> Vec<Option<usize>> {
        bow_vocab
            .terms()
            .iter()
            .map(|t| self.vocab.index_of(t))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, Self::MAGIC)?;
        let p = &self.params;
        for v in [
            p.dim,
            p.window,
            p.negatives,
            p.min_count,
            p.epochs,
            p.workers,
        ] {
            w.usize(v)?;
        }
        w.f64(p.learning_rate)?;
        w.f64(p.min_learning_rate)?;
        w.f64(p.subsample.unwrap_or(0.0))?;
        w.u64(self.seed)?;
        self.vocab.write_bin(&mut w)?;
        for &c in &self.counts {
            w.u64(c)?;
        }
        w.f64s(&self.w)?;
        w.f64s(&self.w_out)?;
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, Self::MAGIC)?;
        let mut sizes = [0usize; 6];
        for s in &mut sizes {
            *s = r.usize()?;
        }
        let [dim, window, negatives, min_count, epochs, workers] = sizes;
        let learning_rate = r.f64()?;
        let min_learning_rate = r.f64()?;
        let subsample = Some(r.f64()?).filter(|&t| t > 0.0);
        let params = Word2VecParams {
            dim,
            window,
            negatives,
            min_count,
            epochs,
            learning_rate,
            min_learning_rate,
            subsample,
            workers,
        };
        let seed = r.u64()?;
        let vocab = Vocabulary::read_bin(&mut r)?;
        let counts = (0..vocab.len())
            .map(|_| r.u64())
            .collect::<Result<Vec<_>>>()?;
        let n = vocab
            .len()
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("size overflow".into()))?;
        let w = r.f64s(n)?;
        let w_out = r.f64s(n)?;
        Ok(Word2VecModel {
            params,
            seed,
            vocab,
            counts,
            w,
            w_out,
        })
    }
}

/// Σ_w bow(w) · W[w] over terms with an embedding, as a dense r-vector.
/// `alignment` maps bow indices to embedding ids (see [`Word2VecModel::align`]).
pub fn compose_doc_vector(
    bow: &FeatureVector,
    alignment: &[Option<usize>],
    model: &Word2VecModel,
) -> Result<FeatureVector> {
    if bow.dim() != alignment.len() {
        return Err(Error::DimensionMismatch {
            expected: alignment.len(),
            actual: bow.dim(),
        });
    }
    let mut out = vec![0.0; model.dim()];
    for (j, x) in bow.entries() {
        if let Some(id) = alignment[j] {
            axpy(x, model.vector(id), &mut out);
        }
    }
    Ok(FeatureVector::dense(bow.doc_id.clone(), out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Doc2VecParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub min_count: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub workers: usize,
}

impl Default for Doc2VecParams {
    fn default() -> Self {
        Doc2VecParams {
            dim: 50,
            window: 8,
            negatives: 13,
            min_count: 5,
            epochs: 18,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            workers: 1,
        }
    }
}

impl Doc2VecParams {
    pub fn validate(&self) -> Result<()> {
        validate_common(
            self.dim,
            self.window,
            self.epochs,
            self.min_count,
            self.learning_rate,
            self.min_learning_rate,
            self.workers,
        )
    }

    /// Width of the concatenated input: the document vector and `window` word slots.
    pub fn input_width(&self) -> usize {
        (self.window + 1) * self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Doc2VecModel {
    pub params: Doc2VecParams,
    pub seed: u64,
    pub vocab: Vocabulary,
    pub counts: Vec<u64>,
    pub doc_ids: Vec<String>,
    /// Document vectors, row-major `doc_ids.len() × dim`.
    pub p: Vec<f64>,
    /// Word vectors, row-major `vocab.len() × dim`.
    pub w: Vec<f64>,
    /// Output weights, row-major `vocab.len() × (window + 1)·dim`.
    pub out: Vec<f64>,
}

/// Fill `h` with [doc ‖ W[t−window] ‖ … ‖ W[t−1]]; slots before the start are zero.
fn pvdm_input(
    h: &mut [f64],
    doc: &[f64],
    w: &[f64],
    tokens: &[usize],
    t: usize,
    window: usize,
    r: usize,
) {
    h[..r].copy_from_slice(doc);
    for k in 0..window {
        let slot = &mut h[(k + 1) * r..(k + 2) * r];
        match (t + k).checked_sub(window) {
            Some(pos) => slot.copy_from_slice(&w[tokens[pos] * r..(tokens[pos] + 1) * r]),
            None => slot.fill(0.0),
        }
    }
}

struct D2vState {
    p: Vec<f64>,
    w: Vec<f64>,
    out: Vec<f64>,
}

struct D2vShardCtx<'a> {
    params: &'a Doc2VecParams,
    noise: &'a NoiseDistribution,
    total_tokens: u64,
    first_step: u64,
    step_scale: u64,
}

/// One PV-DM pass over `docs`, each paired with its row in `state.p`.
fn train_d2v_pass(
    state: &mut D2vState,
    docs: &[(usize, &[usize])],
    ctx: &D2vShardCtx,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let pr = ctx.params;
    let (r, width) = (pr.dim, pr.input_width());
    let mut h = vec![0.0; width];
    let mut grad = vec![0.0; width];
    let mut loss = 0.0;
    let mut local = 0u64;
    for &(row, tokens) in docs {
        for t in 0..tokens.len() {
            let step = ctx.first_step + local * ctx.step_scale;
            let lr = decayed_rate(
                pr.learning_rate,
                pr.min_learning_rate,
                step,
                ctx.total_tokens,
            );
            local += 1;
            pvdm_input(
                &mut h,
                &state.p[row * r..(row + 1) * r],
                &state.w,
                tokens,
                t,
                pr.window,
                r,
            );
            grad.fill(0.0);
            let target = tokens[t];
            loss += ns_step(
                &h,
                &mut grad,
                &mut state.out[target * width..(target + 1) * width],
                1.0,
                lr,
            )
            .ok_or_else(|| diverged(step))?;
            for _ in 0..pr.negatives {
                let neg = ctx.noise.sample(rng);
                if neg == target {
                    continue;
                }
                loss += ns_step(
                    &h,
                    &mut grad,
                    &mut state.out[neg * width..(neg + 1) * width],
                    0.0,
                    lr,
                )
                .ok_or_else(|| diverged(step))?;
            }
            axpy(1.0, &grad[..r], &mut state.p[row * r..(row + 1) * r]);
            for k in 0..pr.window {
                if let Some(pos) = (t + k).checked_sub(pr.window) {
                    let id = tokens[pos];
                    axpy(
                        1.0,
                        &grad[(k + 1) * r..(k + 2) * r],
                        &mut state.w[id * r..(id + 1) * r],
                    );
                }
            }
        }
    }
    Ok(loss)
}

/// Train PV-DM document and word vectors. Documents whose id is in
/// `exclude_ids` are dropped from the corpus before anything else.
pub fn train_doc2vec(
    docs: &[TokenizedDoc],
    params: &Doc2VecParams,
    exclude_ids: &HashSet<String>,
    seed: u64,
) -> Result<Doc2VecModel> {
    params.validate()?;
    let kept: Vec<TokenizedDoc> = docs
        .iter()
        .filter(|d| !exclude_ids.contains(&d.doc_id))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::Validation(
            "cannot train doc2vec on an empty corpus".into(),
        ));
    }
    let vocab = Vocabulary::build(&kept, params.min_count)?;
    if vocab.is_empty() {
        return Err(Error::Validation(format!(
            "no term occurs in {} or more documents",
            params.min_count
        )));
    }
    let encoded: Vec<Vec<usize>> = kept.iter().map(|d| vocab.encode(d)).collect();
    let counts = token_counts(&encoded, vocab.len());
    let noise = NoiseDistribution::new(&counts)?;
    let tokens_per_epoch: u64 = counts.iter().sum();

    let r = params.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = D2vState {
        p: uniform_init(&mut rng, kept.len() * r, r),
        w: uniform_init(&mut rng, vocab.len() * r, r),
        out: vec![0.0; vocab.len() * params.input_width()],
    };
    let total_tokens = tokens_per_epoch * params.epochs as u64;
    let rows: Vec<(usize, &[usize])> = encoded
        .iter()
        .enumerate()
        .map(|(i, d)| (i, d.as_slice()))
        .collect();
    let parts = shards(rows.len(), params.workers);
    for epoch in 0..params.epochs {
        let first = tokens_per_epoch * epoch as u64;
        let step_scale = parts.len() as u64;
        let ctx = D2vShardCtx {
            params,
            noise: &noise,
            total_tokens,
            first_step: first,
            step_scale,
        };
        if parts.len() == 1 {
            train_d2v_pass(&mut state, &rows, &ctx, &mut rng)?;
        } else {
            let results: Vec<Result<D2vState>> = parts
                .par_iter()
                .enumerate()
                .map(|(i, range)| {
                    let mut local = D2vState {
                        p: state.p.clone(),
                        w: state.w.clone(),
                        out: state.out.clone(),
                    };
                    let mut rng = shard_rng(seed, epoch, i, parts.len());
                    train_d2v_pass(&mut local, &rows[range.clone()], &ctx, &mut rng)?;
                    Ok(local)
                })
                .collect();
            let locals = results.into_iter().collect::<Result<Vec<_>>>()?;
            // Each document row is only trained by its own shard.
            for (range, local) in parts.iter().zip(&locals) {
                state.p[range.start * r..range.end * r]
                    .copy_from_slice(&local.p[range.start * r..range.end * r]);
            }
            average_into(
                &mut state.w,
                &locals.iter().map(|s| s.w.as_slice()).collect::<Vec<_>>(),
            );
            average_into(
                &mut state.out,
                &locals.iter().map(|s| s.out.as_slice()).collect::<Vec<_>>(),
            );
        }
        check_finite(
            &[&state.p, &state.w, &state.out],
            first + tokens_per_epoch,
            "doc2vec",
        )?;
    }
    Ok(Doc2VecModel {
        params: *params,
        seed,
        vocab,
        counts,
        doc_ids: kept.into_iter().map(|d| d.doc_id).collect(),
        p: state.p,
        w: state.w,
        out: state.out,
    })
}

/// PV-DM loss of a document under fixed word and output weights, summed
/// over positions, with its gradient with respect to the document vector.
/// `negatives[t]` lists the noise words used at position `t`.
pub fn pvdm_doc_loss_and_grad(
    model: &Doc2VecModel,
    doc_vec: &[f64],
    tokens: &[usize],
    negatives: &[Vec<usize>],
) -> Result<(f64, Vec<f64>)> {
    let (r, width) = (model.params.dim, model.params.input_width());
    if doc_vec.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            actual: doc_vec.len(),
        });
    }
    if negatives.len() != tokens.len() {
        return Err(Error::Parameter(
            "one negative list per position required".into(),
        ));
    }
    let mut h = vec![0.0; width];
    let mut loss = 0.0;
    let mut grad = vec![0.0; r];
    for t in 0..tokens.len() {
        pvdm_input(&mut h, doc_vec, &model.w, tokens, t, model.params.window, r);
        let out_row = |id: usize| &model.out[id * width..(id + 1) * width];
        let negs: Vec<&[f64]> = negatives[t].iter().map(|&n| out_row(n)).collect();
        let g = ns_loss_and_grad(&h, out_row(tokens[t]), &negs);
        loss += g.loss;
        axpy(1.0, &g.input[..r], &mut grad);
    }
    Ok((loss, grad))
}

/// Fit a vector for an unseen document with word and output weights held
/// fixed. `steps` passes over the document; `steps == 0` returns the
/// seeded initialization.
pub fn infer_doc2vec(
    model: &Doc2VecModel,
    doc: &TokenizedDoc,
    steps: usize,
    seed: u64,
) -> Result<FeatureVector> {
    let tokens = model.vocab.encode(doc);
    if tokens.is_empty() {
        return Err(Error::Degenerate(format!(
            "document {:?} has no in-vocabulary tokens",
            doc.doc_id
        )));
    }
    let r = model.params.dim;
    let noise = NoiseDistribution::new(&model.counts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut doc_vec = uniform_init(&mut rng, r, r);
    let ctx = D2vShardCtx {
        params: &model.params,
        noise: &noise,
        total_tokens: (tokens.len() * steps) as u64,
        first_step: 0,
        step_scale: 1,
    };
    for pass in 0..steps {
        let ctx = D2vShardCtx {
            first_step: (pass * tokens.len()) as u64,
            ..ctx
        };
        infer_pass(&mut doc_vec, model, &tokens, &ctx, &mut rng)?;
    }
    check_finite(&[&doc_vec], ctx.total_tokens, "inferred document")?;
    Ok(FeatureVector::dense(doc.doc_id.clone(), doc_vec))
}

/// One pass over `tokens` updating only `doc_vec`.
fn infer_pass(
    doc_vec: &mut [f64],
    model: &Doc2VecModel,
    tokens: &[usize],
    ctx: &D2vShardCtx,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let pr = ctx.params;
    let (r, width) = (pr.dim, pr.input_width());
    let mut h = vec![0.0; width];
    let mut grad = vec![0.0; r];
    for t in 0..tokens.len() {
        let step = ctx.first_step + t as u64;
        let lr = decayed_rate(
            pr.learning_rate,
            pr.min_learning_rate,
            step,
            ctx.total_tokens,
        );
        pvdm_input(&mut h, doc_vec, &model.w, tokens, t, pr.window, r);
        grad.fill(0.0);
        let target = tokens[t];
        let mut score = |id: usize, label: f64| -> Result<()> {
            let u = &model.out[id * width..(id + 1) * width];
            let f = dot(u, &h);
            if !f.is_finite() {
                return Err(diverged(step));
            }
            axpy((label - sigmoid(f)) * lr, &u[..r], &mut grad);
            Ok(())
        };
        score(target, 1.0)?;
        for _ in 0..pr.negatives {
            let neg = ctx.noise.sample(rng);
            if neg != target {
                score(neg, 0.0)?;
            }
        }
        axpy(1.0, &grad, doc_vec);
    }
    Ok(())
}

impl Doc2VecModel {
    const MAGIC: &'static [u8; 8] = b"PAD2V001";

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_vector(&self, id: &str) -> Option<&[f64]> {
        let row = self.doc_ids.iter().position(|d| d == id)?;
        Some(&self.p[row * self.dim()..(row + 1) * self.dim()])
    }

    /// Stored document vectors as feature vectors, in training order.
    pub fn doc_vectors(&self) -> Vec<FeatureVector> {
        self.doc_ids
            .iter()
            .zip(self.p.chunks_exact(self.dim()))
            .map(|(id, v)| FeatureVector::dense(id.clone(), v.to_vec()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, Self::MAGIC)?;
        let p = &self.params;
        for v in [
            p.dim,
            p.window,
            p.negatives,
            p.min_count,
            p.epochs,
            p.workers,
        ] {
            w.usize(v)?;
        }
        w.f64(p.learning_rate)?;
        w.f64(p.min_learning_rate)?;
        w.u64(self.seed)?;
        self.vocab.write_bin(&mut w)?;
        for &c in &self.counts {
            w.u64(c)?;
        }
        w.usize(self.doc_ids.len())?;
        for id in &self.doc_ids {
            w.str(id)?;
        }
        w.f64s(&self.p)?;
        w.f64s(&self.w)?;
        w.f64s(&self.out)?;
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, Self::MAGIC)?;
        let mut sizes = [0usize; 6];
        for s in &mut sizes {
            *s = r.usize()?;
        }
        let [dim, window, negatives, min_count, epochs, workers] = sizes;
        let params = Doc2VecParams {
            dim,
            window,
            negatives,
            min_count,
            epochs,
            learning_rate: r.f64()?,
            min_learning_rate: r.f64()?,
            workers,
        };
        let seed = r.u64()?;
        let vocab = Vocabulary::read_bin(&mut r)?;
        let counts = (0..vocab.len())
            .map(|_| r.u64())
            .collect::<Result<Vec<_>>>()?;
        let n_docs = r.usize()?;
        let doc_ids = (0..n_docs).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let size = |a: usize, b: usize| {
            a.checked_mul(b)
                .ok_or_else(|| Error::Format("size overflow".into()))
        };
        let p = r.f64s(size(n_docs, dim)?)?;
        let w = r.f64s(size(vocab.len(), dim)?)?;
        let out = r.f64s(size(vocab.len(), params.input_width())?)?;
        Ok(Doc2VecModel {
            params,
            seed,
            vocab,
            counts,
            doc_ids,
            p,
            w,
            out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn docs(texts: &[&str]) -> Vec<TokenizedDoc> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| TokenizedDoc::new(format!("d{i}"), t))
            .collect()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    /// Central differences of `f` around `x`.
    fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        const H: f64 = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut up = x.to_vec();
                let mut down = x.to_vec();
                up[i] += H;
                down[i] -= H;
                (f(&up) - f(&down)) / (2.0 * H)
            })
            .collect()
    }

    /// Two vocabularies that never share a document.
    fn two_cluster_corpus(n_docs: usize, seed: u64) -> Vec<TokenizedDoc> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_docs)
            .map(|i| {
                let cluster = if i % 2 == 0 { "a" } else { "b" };
                let text: Vec<String> = (0..30)
                    .map(|_| format!("{cluster}{}", rng.random_range(0..6)))
                    .collect();
                TokenizedDoc::new(format!("d{i}"), &text.join(" "))
            })
            .collect()
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    #[test]
    fn initial_loss_with_zero_output_vectors() {
        let zero = vec![0.0; 4];
        let negs: Vec<&[f64]> = vec![&zero; 13];
        let g = sgns_loss_and_grad(&[0.1, -0.2, 0.3, 0.05], &zero, &negs);
        assert_abs_diff_eq!(g.loss, -14.0 * 0.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g.loss, 9.704, epsilon = 1e-3);
    }

    #[test]
    fn sgns_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let v = rand_vec(&mut rng, 3);
            let u = rand_vec(&mut rng, 3);
            let n: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 3)).collect();
            let nr: Vec<&[f64]> = n.iter().map(Vec::as_slice).collect();
            let g = sgns_loss_and_grad(&v, &u, &nr);
            let fv = numeric_grad(&v, |x| sgns_loss_and_grad(x, &u, &nr).loss);
            let fu = numeric_grad(&u, |x| sgns_loss_and_grad(&v, x, &nr).loss);
            let fn0 = numeric_grad(&n[0], |x| {
                let mut nn = nr.clone();
                nn[0] = x;
                sgns_loss_and_grad(&v, &u, &nn).loss
            });
            assert!(max_rel_err(&g.input, &fv) < 1e-4);
            assert!(max_rel_err(&g.positive, &fu) < 1e-4);
            assert!(max_rel_err(&g.negatives[0], &fn0) < 1e-4);
        }
    }

    #[test]
    fn training_step_follows_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = rand_vec(&mut rng, 5);
        let mut out = rand_vec(&mut rng, 5);
        let before = out.clone();
        let mut grad = vec![0.0; 5];
        let lr = 0.1;
        let loss = ns_step(&h, &mut grad, &mut out, 1.0, lr).unwrap();
        let g = ns_loss_and_grad(&h, &before, &[]);
        assert_abs_diff_eq!(loss, g.loss, epsilon = 1e-15);
        for i in 0..5 {
            assert_abs_diff_eq!(grad[i], -lr * g.input[i], epsilon = 1e-15);
            assert_abs_diff_eq!(out[i], before[i] - lr * g.positive[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn word2vec_separates_clusters() {
        let corpus = two_cluster_corpus(40, 3);
        let params = Word2VecParams {
            dim: 8,
            epochs: 50,
            min_count: 1,
            negatives: 5,
            ..Default::default()
        };
        let model = train_word2vec(&corpus, &params, 7).unwrap();
        let words: Vec<(char, &[f64])> = model
            .vocab
            .terms()
            .iter()
            .map(|t| (t.chars().next().unwrap(), model.vector_of(t).unwrap()))
            .collect();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for (i, (ci, vi)) in words.iter().enumerate() {
            for (cj, vj) in &words[i + 1..] {
                if ci == cj { &mut intra } else { &mut inter }.push(cos(vi, vj));
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&intra) > mean(&inter),
            "intra {} inter {}",
            mean(&intra),
            mean(&inter)
        );
    }

    #[test]
    fn word2vec_is_reproducible_and_validates() {
        let corpus = two_cluster_corpus(10, 1);
        let params = Word2VecParams {
            dim: 6,
            min_count: 1,
            ..Default::default()
        };
        let a = train_word2vec(&corpus, &params, 11).unwrap();
        assert_eq!(a, train_word2vec(&corpus, &params, 11).unwrap());
        assert_ne!(a.w, train_word2vec(&corpus, &params, 12).unwrap().w);
        let parallel = Word2VecParams {
            workers: 3,
            ..params
        };
        let p = train_word2vec(&corpus, &parallel, 11).unwrap();
        assert!(p.w.iter().all(|v| v.is_finite()));
        assert_eq!(p, train_word2vec(&corpus, &parallel, 11).unwrap());
        let sub = Word2VecParams {
            subsample: Some(1e-3),
            ..params
        };
        assert!(train_word2vec(&corpus, &sub, 11)
            .unwrap()
            .w
            .iter()
            .all(|v| v.is_finite()));
        assert!(train_word2vec(&[], &params, 1).is_err());
        assert!(train_word2vec(&corpus, &Word2VecParams { dim: 0, ..params }, 1).is_err());
        assert!(train_word2vec(
            &docs(&["x y", "z"]),
            &Word2VecParams {
                min_count: 5,
                ..params
            },
            1
        )
        .is_err());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let corpus = two_cluster_corpus(10, 1);
        let params = Word2VecParams {
            dim: 4,
            min_count: 1,
            learning_rate: 1e300,
            min_learning_rate: 1e300,
            ..Default::default()
        };
        assert!(matches!(
            train_word2vec(&corpus, &params, 1),
            Err(Error::Diverged { .. })
        ));
    }

    fn toy_w2v(w: Vec<f64>, terms: &[&str], dim: usize) -> Word2VecModel {
        let vocab = Vocabulary::build(&docs(&[&terms.join(" ")]), 1).unwrap();
        Word2VecModel {
            params: Word2VecParams {
                dim,
                ..Default::default()
            },
            seed: 0,
            counts: vec![1; terms.len()],
            w_out: vec![0.0; w.len()],
            w,
            vocab,
        }
    }

    #[test]
    fn compose_examples() {
        let model = toy_w2v(vec![1.0, 0.0, 0.0, 1.0], &["w1", "w2"], 2);
        let bow_vocab = Vocabulary::build(&docs(&["w2 zz w1"]), 1).unwrap();
        let align = model.align(&bow_vocab);
        assert_eq!(align, vec![Some(1), None, Some(0)]);
        let single = FeatureVector::sparse("x", 3, vec![(2, 1.0)]).unwrap();
        assert_eq!(
            compose_doc_vector(&single, &align, &model)
                .unwrap()
                .to_dense(),
            vec![1.0, 0.0]
        );
        let half = FeatureVector::sparse("x", 3, vec![(0, 0.5), (2, 0.5)]).unwrap();
        assert_eq!(
            compose_doc_vector(&half, &align, &model)
                .unwrap()
                .to_dense(),
            vec![0.5, 0.5]
        );
        let twice = compose_doc_vector(&half.scaled(2.0), &align, &model).unwrap();
        assert_eq!(twice.to_dense(), vec![1.0, 1.0]);
        let oov = FeatureVector::sparse("x", 3, vec![(1, 3.0)]).unwrap();
        assert!(compose_doc_vector(&oov, &align, &model).unwrap().is_zero());
        assert!(compose_doc_vector(&FeatureVector::zeros("x", 2), &align, &model).is_err());
    }

    fn d2v_corpus() -> Vec<TokenizedDoc> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..12)
            .map(|i| {
                let words: Vec<String> = (0..60)
                    .map(|_| format!("g{}w{}", i % 4, rng.random_range(0..8)))
                    .collect();
                TokenizedDoc::new(format!("doc{i}"), &words.join(" "))
            })
            .collect()
    }

    fn small_d2v() -> Doc2VecParams {
        Doc2VecParams {
            dim: 10,
            window: 3,
            min_count: 1,
            negatives: 5,
            epochs: 30,
            ..Default::default()
        }
    }

    #[test]
    fn doc2vec_defaults() {
        let p = Doc2VecParams::default();
        assert_eq!((p.dim, p.window, p.epochs, p.min_count), (50, 8, 18, 5));
        let corpus = d2v_corpus();
        let model = train_doc2vec(
            &corpus[..4],
            &Doc2VecParams { min_count: 1, ..p },
            &HashSet::new(),
            0,
        )
        .unwrap();
        assert_eq!(
            (model.params.dim, model.params.window, model.params.epochs),
            (50, 8, 18)
        );
        assert_eq!(model.out.len(), model.vocab.len() * 9 * 50);
    }

    #[test]
    fn doc2vec_exclusion_and_reproducibility() {
        let corpus = d2v_corpus();
        let exclude: HashSet<String> = ["doc0", "doc5", "doc7"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let model = train_doc2vec(&corpus, &small_d2v(), &exclude, 3).unwrap();
        assert_eq!(model.n_docs(), corpus.len() - 3);
        assert_eq!(model.p.len(), (corpus.len() - 3) * 10);
        assert!(model.doc_vector("doc5").is_none());
        assert!(model.doc_vector("doc6").is_some());
        assert_eq!(
            model,
            train_doc2vec(&corpus, &small_d2v(), &exclude, 3).unwrap()
        );
        let all: HashSet<String> = corpus.iter().map(|d| d.doc_id.clone()).collect();
        assert!(train_doc2vec(&corpus, &small_d2v(), &all, 3).is_err());
        let par = Doc2VecParams {
            workers: 4,
            ..small_d2v()
        };
        let m = train_doc2vec(&corpus, &par, &exclude, 3).unwrap();
        assert!(m.p.iter().chain(&m.w).chain(&m.out).all(|v| v.is_finite()));
        assert_eq!(m, train_doc2vec(&corpus, &par, &exclude, 3).unwrap());
    }

    #[test]
    fn pvdm_gradient_matches_finite_differences() {
        let corpus = d2v_corpus();
        let model = train_doc2vec(
            &corpus,
            &Doc2VecParams {
                epochs: 3,
                ..small_d2v()
            },
            &HashSet::new(),
            1,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tokens: Vec<usize> = (0..5)
            .map(|_| rng.random_range(0..model.vocab.len()))
            .collect();
        let negatives: Vec<Vec<usize>> = (0..5)
            .map(|_| {
                (0..4)
                    .map(|_| rng.random_range(0..model.vocab.len()))
                    .collect()
            })
            .collect();
        let x = rand_vec(&mut rng, 10);
        let (_, g) = pvdm_doc_loss_and_grad(&model, &x, &tokens, &negatives).unwrap();
        let fd = numeric_grad(&x, |v| {
            pvdm_doc_loss_and_grad(&model, v, &tokens, &negatives)
                .unwrap()
                .0
        });
        assert!(max_rel_err(&g, &fd) < 1e-4, "{g:?} vs {fd:?}");
    }

    #[test]
    fn inference_recovers_training_vectors() {
        let corpus = d2v_corpus();
        let params = small_d2v();
        let model = train_doc2vec(&corpus, &params, &HashSet::new(), 2).unwrap();
        let snapshot = model.clone();
        let mut cosines = Vec::new();
        for doc in &corpus {
            let v = infer_doc2vec(&model, doc, params.epochs, 9).unwrap();
            cosines.push(cos(&v.to_dense(), model.doc_vector(&doc.doc_id).unwrap()));
        }
        assert_eq!(model, snapshot);
        let worst = cosines.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(worst > 0.9, "{cosines:?}");
    }

    #[test]
    fn inference_edge_cases() {
        let corpus = d2v_corpus();
        let model = train_doc2vec(&corpus, &small_d2v(), &HashSet::new(), 2).unwrap();
        let init = infer_doc2vec(&model, &corpus[0], 0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(init.to_dense(), uniform_init(&mut rng, 10, 10));
        let oov = TokenizedDoc::new("x", "nothing known here");
        assert!(matches!(
            infer_doc2vec(&model, &oov, 5, 1),
            Err(Error::Degenerate(_))
        ));
        assert_eq!(
            infer_doc2vec(&model, &corpus[1], 5, 1).unwrap(),
            infer_doc2vec(&model, &corpus[1], 5, 1).unwrap()
        );
    }

    #[test]
    fn models_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = two_cluster_corpus(8, 2);
        let w2v = train_word2vec(
            &corpus,
            &Word2VecParams {
                dim: 4,
                min_count: 1,
                subsample: Some(1e-2),
                ..Default::default()
            },
            3,
        )
        .unwrap();
        w2v.save(&dir.path().join("w2v.bin")).unwrap();
        assert_eq!(
            Word2VecModel::load(&dir.path().join("w2v.bin")).unwrap(),
            w2v
        );
        let d2v = train_doc2vec(
            &corpus,
            &Doc2VecParams {
                epochs: 2,
                ..small_d2v()
            },
            &HashSet::new(),
            3,
        )
        .unwrap();
        d2v.save(&dir.path().join("d2v.bin")).unwrap();
        assert_eq!(
            Doc2VecModel::load(&dir.path().join("d2v.bin")).unwrap(),
            d2v
        );
        assert!(Doc2VecModel::load(&dir.path().join("w2v.bin")).is_err());
    }
}
