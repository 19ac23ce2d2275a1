//! The correctness predictor: a text encoder contract with a hashed n-gram
//! reference implementation, an MLP head emitting (log α, log β), a
//! maximum-likelihood trainer over individual ratings, and batch prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beta::{moments, nll_and_grad_stats, BetaError, BetaMoments, BetaParams, SufficientStats};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("non-finite head output for instance `{instance_id}`")]
    NonFinite { instance_id: String },
    #[error("encoder kind `external:{0}` needs a plugged-in encoder")]
    ExternalEncoderRequired(String),
    #[error("encoder mismatch: {0}")]
    EncoderMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Beta(#[from] BetaError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file malformed: {0}")]
    Format(String),
}

/// Which encoder produces the representation the head consumes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Reference featurizer: hashed word/char n-grams pooled into a trainable
    /// embedding table.
    HashedNgram,
    /// A plugged-in encoder identified by id; its output is a frozen
    /// representation and only the head trains.
    External(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Word n-gram orders.
    pub ngram_orders: BTreeSet<usize>,
    /// Character n-gram order; 0 disables character features.
    pub char_ngram_order: usize,
    pub hash_dim: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::HashedNgram,
            ngram_orders: BTreeSet::from([1, 2, 3]),
            char_ngram_order: 4,
            hash_dim: 1 << 18,
            embed_dim: 256,
        }
    }
}

impl EncoderConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.hash_dim == 0 || self.embed_dim == 0 {
            return Err(ModelError::InvalidConfig("hash_dim and embed_dim must be positive".into()));
        }
        if self.hash_dim > u32::MAX as usize {
            return Err(ModelError::InvalidConfig("hash_dim exceeds u32 range".into()));
        }
        Ok(())
    }
}

/// A frozen external representation producer. Implementations must be
/// deterministic in the input text and return exactly `embed_dim` values.
pub trait ExternalEncoder {
    fn id(&self) -> &str;
    fn encode(&self, text: &str) -> Vec<f64>;
}

/// FNV-1a 64-bit hash; pinned here so feature hashing never shifts across
/// platforms or library versions.
pub fn hash_feature(feature: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in feature.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hashed feature rows of a text: lowercased word n-grams (orders from the
/// config, `w:`-prefixed) and character n-grams over the space-normalized
/// token stream (`c:`-prefixed), each reduced modulo `hash_dim`. Repeats are
/// kept; pooling weights features by multiplicity.
pub fn hashed_features(text: &str, cfg: &EncoderConfig) -> Vec<u32> {
    let lowered = text.to_lowercase();
    let tokens: Vec<&str> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();

    let mut rows = Vec::new();
    let mut push = |feature: &str| {
        rows.push((hash_feature(feature) % cfg.hash_dim as u64) as u32);
    };

    for &order in &cfg.ngram_orders {
        if order == 0 || tokens.len() < order {
            continue;
        }
        for window in tokens.windows(order) {
            push(&format!("w:{}", window.join(" ")));
        }
    }

    if cfg.char_ngram_order > 0 {
        let stream: Vec<char> = tokens.join(" ").chars().collect();
        if stream.len() >= cfg.char_ngram_order {
            for window in stream.windows(cfg.char_ngram_order) {
                push(&format!("c:{}", window.iter().collect::<String>()));
            }
        }
    }
    rows
}

/// Trainable state: sparse embedding table (absent rows are zero) plus the
/// two-layer head. The zero-initialized table makes every untrained
/// prediction exactly Beta(2,2) regardless of input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub version: u32,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub hidden_dim: usize,
    /// row index → embed_dim values; rows materialize on first update.
    pub embedding: BTreeMap<u32, Vec<f64>>,
    /// hidden_dim × embed_dim, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// 2 × hidden_dim, row-major.
    pub w2: Vec<f64>,
    /// Initialized to (ln 2, ln 2) so training starts from Beta(2,2).
    pub b2: Vec<f64>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN_DIM: usize = 128;
const INIT_SCALE: f64 = 0.01;

impl ModelParameters {
    pub fn init(encoder: EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        Self::init_with_hidden(encoder, seed, DEFAULT_HIDDEN_DIM)
    }

    pub fn init_with_hidden(
        encoder: EncoderConfig,
        seed: u64,
        hidden_dim: usize,
    ) -> Result<Self, ModelError> {
        encoder.validate()?;
        if hidden_dim == 0 {
            return Err(ModelError::InvalidConfig("hidden_dim must be positive".into()));
        }
        let d = encoder.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE)).collect()
        };
        Ok(Self {
            version: MODEL_FORMAT_VERSION,
            seed,
            hidden_dim,
            w1: uniform(hidden_dim * d),
            b1: vec![0.0; hidden_dim],
            w2: uniform(2 * hidden_dim),
            b2: vec![2.0f64.ln(); 2],
            embedding: BTreeMap::new(),
            encoder,
        })
    }

    fn embedding_row(&self, row: u32, d: usize) -> Option<&[f64]> {
        debug_assert_eq!(d, self.encoder.embed_dim);
        self.embedding.get(&row).map(|v| v.as_slice())
    }
}

/// One scored instance for prediction: id plus assembled input text.
#[derive(Debug, Clone, PartialEq)]
pub struct TextItem {
    pub instance_id: String,
    pub text: String,
}

/// A training example: text plus its normalized ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub instance_id: String,
    pub text: String,
    pub ratings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev-NLL improvement before stopping early.
    pub patience: usize,
    pub seed: u64,
    #[serde(skip)]
    pub warm_start: Option<ModelParameters>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            warm_start: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.learning_rate <= 0.0 {
            return Err(ModelError::InvalidConfig("learning_rate must be positive".into()));
        }
        for (name, v) in
            [("batch_size", self.batch_size), ("max_epochs", self.max_epochs), ("patience", self.patience)]
        {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Model output for one instance; `moments` are exactly `moments(params)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub instance_id: String,
    pub params: BetaParams<f64>,
    pub moments: BetaMoments<f64>,
}

/// Line format for prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub variance: f64,
    /// Post-processed score; present once clamping has been applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl From<&Prediction> for PredictionRecord {
    fn from(p: &Prediction) -> Self {
        Self {
            instance_id: p.instance_id.clone(),
            alpha: p.params.alpha(),
            beta: p.params.beta(),
            mu: p.moments.mean,
            variance: p.moments.variance,
            score: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_nll: Option<f64>,
    pub train_nll: Vec<f64>,
    pub dev_nll: Vec<f64>,
    pub early_stopped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub report: TrainReport,
}

/// Cached per-item representation source.
enum ItemRep {
    /// (row, multiplicity) pairs plus total feature count.
    Hashed(Vec<(u32, f64)>, f64),
    /// Frozen external representation.
    Fixed(Vec<f64>),
}

fn feature_bag(text: &str, cfg: &EncoderConfig) -> (Vec<(u32, f64)>, f64) {
    let rows = hashed_features(text, cfg);
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for r in &rows {
        *counts.entry(*r).or_insert(0.0) += 1.0;
    }
    (counts.into_iter().collect(), rows.len() as f64)
}

fn build_rep(
    text: &str,
    cfg: &EncoderConfig,
    external: Option<&dyn ExternalEncoder>,
) -> Result<ItemRep, ModelError> {
    match &cfg.kind {
        EncoderKind::HashedNgram => {
            let (counts, total) = feature_bag(text, cfg);
            Ok(ItemRep::Hashed(counts, total))
        }
        EncoderKind::External(id) => {
            let Some(plugin) = external else {
                return Err(ModelError::ExternalEncoderRequired(id.clone()));
            };
            if plugin.id() != id {
                return Err(ModelError::EncoderMismatch(format!(
                    "config names plugin `{id}` but `{}` was supplied",
                    plugin.id()
                )));
            }
            let rep = plugin.encode(text);
            if rep.len() != cfg.embed_dim {
                return Err(ModelError::EncoderMismatch(format!(
                    "plugin `{id}` returned {} dims, config says {}",
                    rep.len(),
                    cfg.embed_dim
                )));
            }
            Ok(ItemRep::Fixed(rep))
        }
    }
}

fn rep_vector(rep: &ItemRep, params: &ModelParameters) -> Vec<f64> {
    match rep {
        ItemRep::Fixed(v) => v.clone(),
        ItemRep::Hashed(counts, total) => {
            let d = params.encoder.embed_dim;
            let mut pooled = vec![0.0; d];
            if *total > 0.0 {
                for (row, count) in counts {
                    if let Some(values) = params.embedding_row(*row, d) {
                        for (p, v) in pooled.iter_mut().zip(values) {
                            *p += count * v;
                        }
                    }
                }
                for p in &mut pooled {
                    *p /= total;
                }
            }
            pooled.iter_mut().for_each(|p| *p = p.tanh());
            pooled
        }
    }
}

/// Representation of `text` under the reference hashed-n-gram encoder:
/// mean-pooled embedding rows passed through tanh. Empty text maps to
/// tanh(0) = the zero vector.
pub fn encode(text: &str, cfg: &EncoderConfig, params: &ModelParameters) -> Result<Vec<f64>, ModelError> {
    cfg.validate()?;
    let rep = build_rep(text, cfg, None)?;
    Ok(rep_vector(&rep, params))
}

struct HeadCache {
    h: Vec<f64>,
    a1: Vec<f64>,
    out: [f64; 2],
}

fn head_forward_cached(h: &[f64], params: &ModelParameters) -> HeadCache {
    let (d, hd) = (params.encoder.embed_dim, params.hidden_dim);
    debug_assert_eq!(h.len(), d);
    let mut a1 = vec![0.0; hd];
    for j in 0..hd {
        let mut z = params.b1[j];
        let row = &params.w1[j * d..(j + 1) * d];
        for (w, x) in row.iter().zip(h) {
            z += w * x;
        }
        a1[j] = z.tanh();
    }
    let mut out = [0.0; 2];
    for o in 0..2 {
        let mut z = params.b2[o];
        let row = &params.w2[o * hd..(o + 1) * hd];
        for (w, x) in row.iter().zip(&a1) {
            z += w * x;
        }
        out[o] = z;
    }
    HeadCache { h: h.to_vec(), a1, out }
}

/// (log α, log β) = MLP(h), exponentiated into Beta parameters.
pub fn head_forward(h: &[f64], params: &ModelParameters) -> Result<BetaParams<f64>, ModelError> {
    if h.len() != params.encoder.embed_dim {
        return Err(ModelError::EncoderMismatch(format!(
            "representation has {} dims, head expects {}",
            h.len(),
            params.encoder.embed_dim
        )));
    }
    let cache = head_forward_cached(h, params);
    if !cache.out.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFinite { instance_id: String::new() });
    }
    Ok(BetaParams::from_logs(cache.out[0], cache.out[1]))
}

/// Gradients of one instance's summed rating NLL, before batch scaling.
struct InstanceGrads {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: [f64; 2],
    /// Pre-tanh pooled gradient (hashed encoder only).
    pooled: Option<Vec<f64>>,
}

fn backward(
    cache: &HeadCache,
    d_out: [f64; 2],
    params: &ModelParameters,
    want_pooled: bool,
) -> InstanceGrads {
    let (d, hd) = (params.encoder.embed_dim, params.hidden_dim);
    let mut g = InstanceGrads {
        w1: vec![0.0; hd * d],
        b1: vec![0.0; hd],
        w2: vec![0.0; 2 * hd],
        b2: d_out,
        pooled: None,
    };
    let mut d_a1 = vec![0.0; hd];
    for o in 0..2 {
        for j in 0..hd {
            g.w2[o * hd + j] = d_out[o] * cache.a1[j];
            d_a1[j] += params.w2[o * hd + j] * d_out[o];
        }
    }
    let mut d_h = vec![0.0; d];
    for j in 0..hd {
        let dz = d_a1[j] * (1.0 - cache.a1[j] * cache.a1[j]);
        g.b1[j] = dz;
        let row = &mut g.w1[j * d..(j + 1) * d];
        let w_row = &params.w1[j * d..(j + 1) * d];
        for k in 0..d {
            row[k] = dz * cache.h[k];
            d_h[k] += w_row[k] * dz;
        }
    }
    if want_pooled {
        // h = tanh(pooled) ⇒ d/d pooled = d_h · (1 − h²).
        for k in 0..d {
            d_h[k] *= 1.0 - cache.h[k] * cache.h[k];
        }
        g.pooled = Some(d_h);
    }
    g
}

/// First-order optimizer state with per-parameter step scaling.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64) {
        let bc1 = 1.0 - ADAM_B1.powi(t as i32);
        let bc2 = 1.0 - ADAM_B2.powi(t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_B1 * self.m[i] + (1.0 - ADAM_B1) * grads[i];
            self.v[i] = ADAM_B2 * self.v[i] + (1.0 - ADAM_B2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Lazy per-row optimizer state for embedding rows, with per-row timesteps.
struct RowAdam {
    state: BTreeMap<u32, (Adam, u64)>,
}

impl RowAdam {
    fn update(&mut self, params: &mut ModelParameters, row: u32, grads: &[f64], lr: f64) {
        let d = params.encoder.embed_dim;
        let (adam, t) = self
            .state
            .entry(row)
            .or_insert_with(|| (Adam::new(d), 0));
        *t += 1;
        let values = params.embedding.entry(row).or_insert_with(|| vec![0.0; d]);
        adam.update(values, grads, lr, *t);
    }
}

struct PreparedItem {
    rep: ItemRep,
    stats: SufficientStats<f64>,
}

fn prepare_items(
    items: &[TrainItem],
    cfg: &EncoderConfig,
    external: Option<&dyn ExternalEncoder>,
) -> Result<Vec<PreparedItem>, ModelError> {
    items
        .iter()
        .map(|item| {
            let stats = SufficientStats::from_ratings(&item.ratings)?;
            let rep = build_rep(&item.text, cfg, external)?;
            Ok(PreparedItem { rep, stats })
        })
        .collect()
}

/// Summed NLL and rating count of prepared items under `params`.
fn summed_nll(items: &[PreparedItem], params: &ModelParameters) -> (f64, usize) {
    let mut total = 0.0;
    let mut ratings = 0;
    for item in items {
        let h = rep_vector(&item.rep, params);
        let cache = head_forward_cached(&h, params);
        let (nll, _, _) = nll_and_grad_stats(&item.stats, cache.out[0], cache.out[1]);
        total += nll;
        ratings += item.stats.n;
    }
    (total, ratings)
}

/// Mean per-rating NLL of `items` under `params`; the early-stopping and
/// reporting metric.
pub fn evaluate_nll(
    items: &[TrainItem],
    params: &ModelParameters,
    external: Option<&dyn ExternalEncoder>,
) -> Result<f64, ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let prepared = prepare_items(items, &params.encoder, external)?;
    let (total, ratings) = summed_nll(&prepared, params);
    Ok(total / ratings as f64)
}

/// Minimizes Σ_i Σ_j −log Beta(y_{i,j}; α_i, β_i) by mini-batch Adam. Every
/// rating is one likelihood term, so instances with more ratings weigh more.
/// Batches group ratings by instance (one forward pass serves all of an
/// instance's ratings via its sufficient statistics). Returns the parameters
/// from the best dev-NLL epoch; deterministic given the seed.
pub fn train(
    train_items: &[TrainItem],
    dev_items: &[TrainItem],
    tc: &TrainConfig,
    ec: &EncoderConfig,
    external: Option<&dyn ExternalEncoder>,
) -> Result<TrainOutcome, ModelError> {
    tc.validate()?;
    ec.validate()?;
    if train_items.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }

    let mut params = match &tc.warm_start {
        Some(warm) => {
            if warm.encoder != *ec {
                return Err(ModelError::EncoderMismatch(
                    "warm-start parameters use a different encoder configuration".into(),
                ));
            }
            warm.clone()
        }
        None => ModelParameters::init(ec.clone(), tc.seed)?,
    };

    let prepared = prepare_items(train_items, ec, external)?;
    let dev_prepared = prepare_items(dev_items, ec, external)?;

    let (d, hd) = (ec.embed_dim, params.hidden_dim);
    let mut adam_w1 = Adam::new(hd * d);
    let mut adam_b1 = Adam::new(hd);
    let mut adam_w2 = Adam::new(2 * hd);
    let mut adam_b2 = Adam::new(2);
    let mut adam_rows = RowAdam { state: BTreeMap::new() };
    let mut head_t = 0u64;

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    let mut report = TrainReport::default();
    let mut best: (Option<f64>, usize, ModelParameters) = (None, 0, params.clone());

    for epoch in 0..tc.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut epoch_nll = 0.0;
        let mut epoch_ratings = 0usize;
        for (batch_idx, batch) in order.chunks(tc.batch_size).enumerate() {
            let batch_ratings: usize = batch.iter().map(|&i| prepared[i].stats.n).sum();
            let scale = 1.0 / batch_ratings as f64;

            let mut g_w1 = vec![0.0; hd * d];
            let mut g_b1 = vec![0.0; hd];
            let mut g_w2 = vec![0.0; 2 * hd];
            let mut g_b2 = vec![0.0; 2];
            // row → pooled-gradient accumulator.
            let mut g_rows: BTreeMap<u32, Vec<f64>> = BTreeMap::new();

            let mut batch_nll = 0.0;
            for &i in batch {
                let item = &prepared[i];
                let h = rep_vector(&item.rep, &params);
                let cache = head_forward_cached(&h, &params);
                let (nll, g_la, g_lb) = nll_and_grad_stats(&item.stats, cache.out[0], cache.out[1]);
                batch_nll += nll;

                let want_pooled = matches!(item.rep, ItemRep::Hashed(..));
                let g = backward(&cache, [g_la * scale, g_lb * scale], &params, want_pooled);
                for (acc, v) in g_w1.iter_mut().zip(&g.w1) {
                    *acc += v;
                }
                for (acc, v) in g_b1.iter_mut().zip(&g.b1) {
                    *acc += v;
                }
                for (acc, v) in g_w2.iter_mut().zip(&g.w2) {
                    *acc += v;
                }
                g_b2[0] += g.b2[0];
                g_b2[1] += g.b2[1];

                if let (Some(pooled), ItemRep::Hashed(counts, total)) = (&g.pooled, &item.rep) {
                    for (row, count) in counts {
                        let acc = g_rows.entry(*row).or_insert_with(|| vec![0.0; d]);
                        let w = count / total;
                        for (a, p) in acc.iter_mut().zip(pooled) {
                            *a += w * p;
                        }
                    }
                }
            }

            if !batch_nll.is_finite() {
                return Err(ModelError::Diverged { epoch, batch: batch_idx });
            }
            epoch_nll += batch_nll;
            epoch_ratings += batch_ratings;

            head_t += 1;
            adam_w1.update(&mut params.w1, &g_w1, tc.learning_rate, head_t);
            adam_b1.update(&mut params.b1, &g_b1, tc.learning_rate, head_t);
            adam_w2.update(&mut params.w2, &g_w2, tc.learning_rate, head_t);
            adam_b2.update(&mut params.b2, &g_b2, tc.learning_rate, head_t);
            for (row, grads) in g_rows {
                adam_rows.update(&mut params, row, &grads, tc.learning_rate);
            }
        }

        report.train_nll.push(epoch_nll / epoch_ratings as f64);
        report.epochs_run = epoch + 1;

        if dev_prepared.is_empty() {
            best = (None, epoch, params.clone());
            continue;
        }
        let (dev_total, dev_ratings) = summed_nll(&dev_prepared, &params);
        let dev = dev_total / dev_ratings as f64;
        report.dev_nll.push(dev);
        if best.0.is_none_or(|b| dev < b) {
            best = (Some(dev), epoch, params.clone());
        } else if epoch - best.1 >= tc.patience {
            report.early_stopped = true;
            break;
        }
    }

    report.best_epoch = best.1;
    report.best_dev_nll = best.0;
    Ok(TrainOutcome { params: best.2, report })
}

/// One Prediction per item; pure in its inputs, so any ordering or batching
/// yields identical results.
pub fn predict(
    items: &[TextItem],
    params: &ModelParameters,
    external: Option<&dyn ExternalEncoder>,
) -> Result<Vec<Prediction>, ModelError> {
    items
        .iter()
        .map(|item| {
            let rep = build_rep(&item.text, &params.encoder, external)?;
            let h = rep_vector(&rep, params);
            let cache = head_forward_cached(&h, params);
            if !cache.out.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite { instance_id: item.instance_id.clone() });
            }
            let p = BetaParams::from_logs(cache.out[0], cache.out[1]);
            Ok(Prediction { instance_id: item.instance_id.clone(), moments: moments(&p), params: p })
        })
        .collect()
}

/// Self-check of the end-to-end backward pass: for `cases` random
/// (parameters, text, ratings) draws, compares the analytic gradient of the
/// summed rating NLL against central finite differences for every head
/// parameter and two coordinates of one touched embedding row. Returns the
/// worst relative error; differences below the f64 central-difference noise
/// floor (1e-8) count as zero.
pub fn gradient_check(cases: usize, seed: u64) -> f64 {
    let cfg = EncoderConfig {
        hash_dim: 1 << 12,
        embed_dim: 16,
        ..EncoderConfig::default()
    };
    let texts = [
        "a short answer",
        "the quick brown fox jumps over the lazy dog",
        "blue whale songs travel far",
    ];
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;

    for case in 0..cases {
        let mut params = ModelParameters::init_with_hidden(cfg.clone(), seed + case as u64, 8)
            .expect("valid diagnostic configuration");
        let text = texts[case % texts.len()];
        for row in hashed_features(text, &params.encoder) {
            params
                .embedding
                .entry(row)
                .or_insert_with(|| (0..16).map(|_| rng.gen_range(-0.3..0.3)).collect());
        }
        let ratings: Vec<f64> =
            (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0.05..0.95)).collect();
        let stats = SufficientStats::from_ratings(&ratings).expect("nonempty");
        let (counts, total) = feature_bag(text, &params.encoder);

        let nll_at = |p: &ModelParameters| -> f64 {
            let h = rep_vector(&ItemRep::Hashed(counts.clone(), total), p);
            let cache = head_forward_cached(&h, p);
            nll_and_grad_stats(&stats, cache.out[0], cache.out[1]).0
        };

        let h = rep_vector(&ItemRep::Hashed(counts.clone(), total), &params);
        let cache = head_forward_cached(&h, &params);
        let (_, g_la, g_lb) = nll_and_grad_stats(&stats, cache.out[0], cache.out[1]);
        let g = backward(&cache, [g_la, g_lb], &params, true);
        let mut flat = g.w1.clone();
        flat.extend(&g.b1);
        flat.extend(&g.w2);
        flat.extend(g.b2);

        let (w1, b1, w2) = (params.w1.len(), params.b1.len(), params.w2.len());
        let perturb = |p: &mut ModelParameters, idx: usize, delta: f64| {
            if idx < w1 {
                p.w1[idx] += delta;
            } else if idx < w1 + b1 {
                p.b1[idx - w1] += delta;
            } else if idx < w1 + b1 + w2 {
                p.w2[idx - w1 - b1] += delta;
            } else {
                p.b2[idx - w1 - b1 - w2] += delta;
            }
        };
        for idx in 0..flat.len() {
            let mut plus = params.clone();
            perturb(&mut plus, idx, eps);
            let mut minus = params.clone();
            perturb(&mut minus, idx, -eps);
            let fd = (nll_at(&plus) - nll_at(&minus)) / (2.0 * eps);
            let diff = (flat[idx] - fd).abs();
            if diff > 1e-8 {
                worst = worst.max(diff / fd.abs().max(1e-6));
            }
        }

        let pooled = g.pooled.expect("hashed encoder");
        let (&row, count) = counts.iter().map(|(r, c)| (r, c)).next().expect("nonempty text");
        let weight = count / total;
        for k in [0usize, 7] {
            let mut plus = params.clone();
            plus.embedding.get_mut(&row).expect("materialized")[k] += eps;
            let mut minus = params.clone();
            minus.embedding.get_mut(&row).expect("materialized")[k] -= eps;
            let fd = (nll_at(&plus) - nll_at(&minus)) / (2.0 * eps);
            let diff = (weight * pooled[k] - fd).abs();
            if diff > 1e-8 {
                worst = worst.max(diff / fd.abs().max(1e-6));
            }
        }
    }
    worst
}

const MODEL_MAGIC: &[u8; 8] = b"BETARMDL";

/// Header of the binary model file; the numeric payload follows as raw
/// little-endian f64s, so round-trips are bit-exact.
#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    seed: u64,
    encoder: EncoderConfig,
    hidden_dim: usize,
    rows: Vec<u32>,
    /// Free-form metadata (e.g. tool provenance); ignored on load.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

fn write_f64s(writer: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(reader: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    reader.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn save_model(params: &ModelParameters, writer: impl Write) -> Result<(), ModelError> {
    save_model_with_meta(params, &BTreeMap::new(), writer)
}

/// `save_model` with extra header metadata. The payload encoding is
/// unchanged, so files load identically whether or not metadata is present.
pub fn save_model_with_meta(
    params: &ModelParameters,
    meta: &BTreeMap<String, String>,
    mut writer: impl Write,
) -> Result<(), ModelError> {
    let header = ModelHeader {
        version: params.version,
        seed: params.seed,
        encoder: params.encoder.clone(),
        hidden_dim: params.hidden_dim,
        rows: params.embedding.keys().copied().collect(),
        meta: meta.clone(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| ModelError::Format(e.to_string()))?;
    writer.write_all(MODEL_MAGIC)?;
    writer.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    writer.write_all(&header_bytes)?;
    write_f64s(&mut writer, &params.w1)?;
    write_f64s(&mut writer, &params.b1)?;
    write_f64s(&mut writer, &params.w2)?;
    write_f64s(&mut writer, &params.b2)?;
    for values in params.embedding.values() {
        write_f64s(&mut writer, values)?;
    }
    Ok(())
}

pub fn load_model(mut reader: impl Read) -> Result<ModelParameters, ModelError> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(ModelError::Format("bad magic bytes".into()));
    }
    let mut len = [0u8; 8];
    reader.read_exact(&mut len)?;
    let mut header_bytes = vec![0u8; u64::from_le_bytes(len) as usize];
    reader.read_exact(&mut header_bytes)?;
    let header: ModelHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| ModelError::Format(e.to_string()))?;
    if header.version != MODEL_FORMAT_VERSION {
        return Err(ModelError::Format(format!("unsupported version {}", header.version)));
    }

    let (d, hd) = (header.encoder.embed_dim, header.hidden_dim);
    let w1 = read_f64s(&mut reader, hd * d)?;
    let b1 = read_f64s(&mut reader, hd)?;
    let w2 = read_f64s(&mut reader, 2 * hd)?;
    let b2 = read_f64s(&mut reader, 2)?;
    let mut embedding = BTreeMap::new();
    for row in &header.rows {
        embedding.insert(*row, read_f64s(&mut reader, d)?);
    }
    Ok(ModelParameters {
        version: header.version,
        seed: header.seed,
        encoder: header.encoder,
        hidden_dim: header.hidden_dim,
        embedding,
        w1,
        b1,
        w2,
        b2,
    })
}
