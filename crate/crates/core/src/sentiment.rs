//! Three-class comment sentiment.
//!
//! The main model is a small convolutional text classifier: an embedding
//! table, banks of 1-D filters of several widths with ReLU, max-over-time
//! pooling, and a dense softmax layer. It is trained with plain mini-batch
//! SGD on cross-entropy. A linear unigram/bigram model serves as a baseline.
//!
//! Class probabilities map to a scalar score as `P(positive) - P(negative)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::tokenize;

pub const NUM_CLASSES: usize = 3;
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const DEFAULT_WIDTHS: [usize; 3] = [3, 4, 5];
pub const DEFAULT_MAPS: usize = 64;
pub const DEFAULT_DIM: usize = 100;
pub const DEFAULT_MAX_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [Self::Negative, Self::Neutral, Self::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Negative => "negative",
            Self::Neutral => "neutral",
            Self::Positive => "positive",
        })
    }
}

impl FromStr for SentimentLabel {
    type Err = SentimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negative" => Ok(Self::Negative),
            "neutral" => Ok(Self::Neutral),
            "positive" => Ok(Self::Positive),
            other => Err(SentimentError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("unknown sentiment label `{0}`")]
    UnknownLabel(String),
    #[error("token id {id} is outside the vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error("test data is empty")]
    EmptyTestSet,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (example {example})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        example: usize,
    },
    #[error("probabilities {0:?} are not a distribution")]
    MalformedDistribution([f64; 3]),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Token → id table with reserved padding (0) and unknown (1) ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
    min_frequency: usize,
}

impl Vocab {
    /// Only the reserved entries.
    pub fn empty() -> Self {
        Self::from_tokens(Vec::<String>::new(), 1)
    }

    /// Assign ids in first-occurrence order to tokens seen at least
    /// `min_frequency` times. Tokens are lowercased.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_frequency: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut order = Vec::new();
        for text in texts {
            for tok in words(text) {
                let n = counts.entry(tok.clone()).or_insert_with(|| {
                    order.push(tok.clone());
                    0
                });
                *n += 1;
            }
        }
        let kept = order
            .into_iter()
            .filter(|t| counts[t] >= min_frequency.max(1));
        Self::from_tokens(kept, min_frequency)
    }

    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>, min_frequency: usize) -> Self {
        let mut v = Self {
            ids: HashMap::new(),
            tokens: vec!["<pad>".to_string(), "<unk>".to_string()],
            min_frequency,
        };
        for t in tokens {
            let t = t.into();
            if !v.ids.contains_key(&t) && t != "<pad>" && t != "<unk>" {
                v.ids.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    /// Token ids of `text`, truncated to `max_tokens`.
    pub fn encode(&self, text: &str, max_tokens: usize) -> Vec<usize> {
        words(text)
            .into_iter()
            .take(max_tokens)
            .map(|w| self.id(&w))
            .collect()
    }
}

fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .tokens
        .into_iter()
        .map(|t| t.text.to_lowercase())
        .collect()
}

/// Filters of one width.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub width: usize,
    /// `maps × width × dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentModel {
    vocab: Vocab,
    dim: usize,
    maps: usize,
    max_tokens: usize,
    /// `|V| × dim`, row 0 is padding and stays zero.
    pub embedding: Vec<f64>,
    pub banks: Vec<FilterBank>,
    /// `(banks · maps) × 3`, row-major.
    pub dense_w: Vec<f64>,
    pub dense_b: [f64; NUM_CLASSES],
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Input ids after padding.
    pub ids: Vec<usize>,
    pub pooled: Vec<f64>,
    /// Per pooled feature: first position attaining the max, and whether the
    /// max pre-activation was positive (ReLU active).
    pub argmax: Vec<(usize, bool)>,
    pub logits: [f64; NUM_CLASSES],
    pub probs: [f64; NUM_CLASSES],
}

/// Parameter gradients. Embedding rows are sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: BTreeMap<usize, Vec<f64>>,
    pub banks: Vec<(Vec<f64>, Vec<f64>)>,
    pub dense_w: Vec<f64>,
    pub dense_b: [f64; NUM_CLASSES],
}

/// Addresses a single scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Embedding { row: usize, col: usize },
    Filter { bank: usize, index: usize },
    FilterBias { bank: usize, map: usize },
    Dense { index: usize },
    DenseBias { class: usize },
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|z| (z - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|x| x / s)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SentimentModel {
    /// Random initialization: embeddings uniform in ±0.05, filters and the
    /// dense layer uniform in ±1/√fan_in, biases zero.
    pub fn new(vocab: Vocab, dim: usize, maps: usize, widths: &[usize], seed: u64) -> Result<Self, SentimentError> {
        if dim == 0 || maps == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(SentimentError::Config("dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let mut embedding: Vec<f64> = (0..v * dim).map(|_| rng.random_range(-0.05..=0.05)).collect();
        embedding[..dim].fill(0.0);
        let banks = widths
            .iter()
            .map(|&w| {
                let bound = 1.0 / ((w * dim) as f64).sqrt();
                FilterBank {
                    width: w,
                    weights: (0..maps * w * dim).map(|_| rng.random_range(-bound..=bound)).collect(),
                    bias: vec![0.0; maps],
                }
            })
            .collect::<Vec<_>>();
        let features = widths.len() * maps;
        let bound = 1.0 / (features as f64).sqrt();
        let dense_w = (0..features * NUM_CLASSES)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Ok(Self {
            vocab,
            dim,
            maps,
            max_tokens: DEFAULT_MAX_TOKENS,
            embedding,
            banks,
            dense_w,
            dense_b: [0.0; NUM_CLASSES],
        })
    }

    /// Full-size model: d = 100, widths {3, 4, 5}, 64 maps each.
    pub fn with_defaults(vocab: Vocab, seed: u64) -> Result<Self, SentimentError> {
        Self::new(vocab, DEFAULT_DIM, DEFAULT_MAPS, &DEFAULT_WIDTHS, seed)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn widths(&self) -> Vec<usize> {
        self.banks.iter().map(|b| b.width).collect()
    }

    pub fn feature_count(&self) -> usize {
        self.banks.len() * self.maps
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn set_max_tokens(&mut self, n: usize) {
        self.max_tokens = n.max(1);
    }

    fn max_width(&self) -> usize {
        self.banks.iter().map(|b| b.width).max().unwrap_or(1)
    }

    pub fn zero_parameters(&mut self) {
        self.embedding.fill(0.0);
        for b in &mut self.banks {
            b.weights.fill(0.0);
            b.bias.fill(0.0);
        }
        self.dense_w.fill(0.0);
        self.dense_b = [0.0; NUM_CLASSES];
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.vocab.encode(text, self.max_tokens)
    }

    pub fn forward(&self, token_ids: &[usize]) -> Result<Forward, SentimentError> {
        let v = self.vocab.len();
        if let Some(&id) = token_ids.iter().find(|&&id| id >= v) {
            return Err(SentimentError::TokenOutOfRange { id, size: v });
        }
        let d = self.dim;
        let mut ids = token_ids.to_vec();
        if ids.len() < self.max_width() {
            ids.resize(self.max_width(), PAD_ID);
        }
        let n = ids.len();
        let mut x = Vec::with_capacity(n * d);
        for &id in &ids {
            x.extend_from_slice(&self.embedding[id * d..(id + 1) * d]);
        }

        let mut pooled = Vec::with_capacity(self.feature_count());
        let mut argmax = Vec::with_capacity(self.feature_count());
        for bank in &self.banks {
            let span = bank.width * d;
            for k in 0..self.maps {
                let w = &bank.weights[k * span..(k + 1) * span];
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for t in 0..=n - bank.width {
                    let z = bank.bias[k] + dot(w, &x[t * d..t * d + span]);
                    if z > best {
                        best = z;
                        at = t;
                    }
                }
                let active = best > 0.0;
                pooled.push(if active { best } else { 0.0 });
                argmax.push((at, active));
            }
        }

        let mut logits = self.dense_b;
        for (f, &p) in pooled.iter().enumerate() {
            for (c, l) in logits.iter_mut().enumerate() {
                *l += p * self.dense_w[f * NUM_CLASSES + c];
            }
        }
        Ok(Forward {
            ids,
            pooled,
            argmax,
            probs: softmax(&logits),
            logits,
        })
    }

    /// Cross-entropy loss of a forward pass.
    pub fn loss(fwd: &Forward, gold: SentimentLabel) -> f64 {
        -fwd.probs[gold.index()].ln()
    }

    /// Exact gradient of the cross-entropy loss. The padding row never
    /// receives a gradient.
    pub fn backward(&self, fwd: &Forward, gold: SentimentLabel) -> Gradients {
        let d = self.dim;
        let mut dlogits = fwd.probs;
        dlogits[gold.index()] -= 1.0;

        let nf = self.feature_count();
        let mut dense_w = vec![0.0; nf * NUM_CLASSES];
        let mut dpooled = vec![0.0; nf];
        for f in 0..nf {
            for c in 0..NUM_CLASSES {
                dense_w[f * NUM_CLASSES + c] = fwd.pooled[f] * dlogits[c];
                dpooled[f] += self.dense_w[f * NUM_CLASSES + c] * dlogits[c];
            }
        }

        let mut embedding: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut banks = Vec::with_capacity(self.banks.len());
        for (b, bank) in self.banks.iter().enumerate() {
            let span = bank.width * d;
            let mut gw = vec![0.0; self.maps * span];
            let mut gb = vec![0.0; self.maps];
            for k in 0..self.maps {
                let f = b * self.maps + k;
                let (t, active) = fwd.argmax[f];
                if !active {
                    continue;
                }
                let g = dpooled[f];
                gb[k] += g;
                let w = &bank.weights[k * span..(k + 1) * span];
                for j in 0..bank.width {
                    let id = fwd.ids[t + j];
                    let e = &self.embedding[id * d..(id + 1) * d];
                    for c in 0..d {
                        gw[k * span + j * d + c] += g * e[c];
                    }
                    if id != PAD_ID {
                        let row = embedding.entry(id).or_insert_with(|| vec![0.0; d]);
                        for c in 0..d {
                            row[c] += g * w[j * d + c];
                        }
                    }
                }
            }
            banks.push((gw, gb));
        }
        Gradients {
            embedding,
            banks,
            dense_w,
            dense_b: dlogits,
        }
    }

    pub fn param(&self, p: Param) -> f64 {
        match p {
            Param::Embedding { row, col } => self.embedding[row * self.dim + col],
            Param::Filter { bank, index } => self.banks[bank].weights[index],
            Param::FilterBias { bank, map } => self.banks[bank].bias[map],
            Param::Dense { index } => self.dense_w[index],
            Param::DenseBias { class } => self.dense_b[class],
        }
    }

    pub fn param_mut(&mut self, p: Param) -> &mut f64 {
        match p {
            Param::Embedding { row, col } => &mut self.embedding[row * self.dim + col],
            Param::Filter { bank, index } => &mut self.banks[bank].weights[index],
            Param::FilterBias { bank, map } => &mut self.banks[bank].bias[map],
            Param::Dense { index } => &mut self.dense_w[index],
            Param::DenseBias { class } => &mut self.dense_b[class],
        }
    }

    /// Every trainable scalar (the padding row is frozen and excluded).
    pub fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for row in 1..self.vocab.len() {
            for col in 0..self.dim {
                out.push(Param::Embedding { row, col });
            }
        }
        for (b, bank) in self.banks.iter().enumerate() {
            out.extend((0..bank.weights.len()).map(|index| Param::Filter { bank: b, index }));
            out.extend((0..bank.bias.len()).map(|map| Param::FilterBias { bank: b, map }));
        }
        out.extend((0..self.dense_w.len()).map(|index| Param::Dense { index }));
        out.extend((0..NUM_CLASSES).map(|class| Param::DenseBias { class }));
        out
    }

    fn apply(&mut self, g: &Gradients, step: f64) {
        let d = self.dim;
        for (&row, grad) in &g.embedding {
            if row == PAD_ID {
                continue;
            }
            for (p, gr) in self.embedding[row * d..(row + 1) * d].iter_mut().zip(grad) {
                *p -= step * gr;
            }
        }
        for (bank, (gw, gb)) in self.banks.iter_mut().zip(&g.banks) {
            for (p, gr) in bank.weights.iter_mut().zip(gw) {
                *p -= step * gr;
            }
            for (p, gr) in bank.bias.iter_mut().zip(gb) {
                *p -= step * gr;
            }
        }
        for (p, gr) in self.dense_w.iter_mut().zip(&g.dense_w) {
            *p -= step * gr;
        }
        for (p, gr) in self.dense_b.iter_mut().zip(&g.dense_b) {
            *p -= step * gr;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.iter().all(|x| x.is_finite())
            && self
                .banks
                .iter()
                .all(|b| b.weights.iter().chain(&b.bias).all(|x| x.is_finite()))
            && self.dense_w.iter().chain(&self.dense_b).all(|x| x.is_finite())
    }

    /// Overwrite embedding rows from `token v1 … vd` lines. Returns how many
    /// vocabulary rows were replaced.
    pub fn load_pretrained<R: BufRead>(&mut self, input: R) -> Result<usize, SentimentError> {
        let d = self.dim;
        let mut loaded = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let values = parts
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SentimentError::Format {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if values.len() != d {
                return Err(SentimentError::Format {
                    line: i + 1,
                    message: format!("expected {d} values, got {}", values.len()),
                });
            }
            let id = self.vocab.id(&tok.to_lowercase());
            if id > UNK_ID {
                self.embedding[id * d..(id + 1) * d].copy_from_slice(&values);
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}

impl Gradients {
    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Embedding { row, col } => self.embedding.get(&row).map_or(0.0, |r| r[col]),
            Param::Filter { bank, index } => self.banks[bank].0[index],
            Param::FilterBias { bank, map } => self.banks[bank].1[map],
            Param::Dense { index } => self.dense_w[index],
            Param::DenseBias { class } => self.dense_b[class],
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (&row, g) in &other.embedding {
            let r = self.embedding.entry(row).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in r.iter_mut().zip(g) {
                *a += b;
            }
        }
        for ((aw, ab), (bw, bb)) in self.banks.iter_mut().zip(&other.banks) {
            aw.iter_mut().zip(bw).for_each(|(a, b)| *a += b);
            ab.iter_mut().zip(bb).for_each(|(a, b)| *a += b);
        }
        self.dense_w.iter_mut().zip(&other.dense_w).for_each(|(a, b)| *a += b);
        self.dense_b.iter_mut().zip(&other.dense_b).for_each(|(a, b)| *a += b);
    }

    /// Euclidean norm over all components.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for r in self.embedding.values() {
            s += r.iter().map(|x| x * x).sum::<f64>();
        }
        for (w, b) in &self.banks {
            s += w.iter().chain(b).map(|x| x * x).sum::<f64>();
        }
        s += self.dense_w.iter().chain(&self.dense_b).map(|x| x * x).sum::<f64>();
        s.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: SentimentLabel,
}

/// Read `{"text": ..., "label": ...}` lines.
pub fn read_labeled_ndjson<R: BufRead>(input: R) -> Result<Vec<LabeledText>, SentimentError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: LabeledText = serde_json::from_str(&line).map_err(|e| SentimentError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), SentimentError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(SentimentError::Config("learning rate must be a non-negative number".into()));
        }
        if self.batch_size == 0 || self.max_tokens == 0 {
            return Err(SentimentError::Config("batch size and max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Mini-batch SGD. Per-example gradients may be computed in parallel but are
/// always summed in batch order, so results are bit-identical for a given
/// seed. Returns the mean training loss of every epoch.
pub fn train(
    model: &mut SentimentModel,
    data: &[LabeledText],
    config: &TrainConfig,
) -> Result<Vec<f64>, SentimentError> {
    if data.is_empty() {
        return Err(SentimentError::EmptyData);
    }
    config.validate()?;
    model.set_max_tokens(config.max_tokens);
    let encoded: Vec<(Vec<usize>, SentimentLabel)> = data
        .iter()
        .map(|d| (model.encode(&d.text), d.label))
        .collect();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let snapshot = &*model;
            let results = crate::exec::map(batch, |&i| {
                let (ids, gold) = &encoded[i];
                let fwd = snapshot.forward(ids).expect("ids come from the model vocabulary");
                (SentimentModel::loss(&fwd, *gold), snapshot.backward(&fwd, *gold))
            });
            let mut acc: Option<Gradients> = None;
            for (&example, (loss, g)) in batch.iter().zip(results) {
                if !loss.is_finite() {
                    return Err(SentimentError::NonFiniteLoss {
                        epoch,
                        batch: batch_no,
                        example,
                    });
                }
                total += loss;
                match acc.as_mut() {
                    Some(a) => a.add(&g),
                    None => acc = Some(g),
                }
            }
            if let Some(g) = acc {
                model.apply(&g, config.learning_rate / batch.len() as f64);
            }
        }
        trace.push(total / encoded.len() as f64);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: SentimentLabel,
    pub probabilities: [f64; NUM_CLASSES],
}

impl Prediction {
    fn from_probs(probabilities: [f64; NUM_CLASSES]) -> Self {
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if probabilities[c] > probabilities[best] {
                best = c;
            }
        }
        Self {
            label: SentimentLabel::from_index(best).expect("index < 3"),
            probabilities,
        }
    }

    pub fn score(&self) -> f64 {
        score_from_probs(self.probabilities).expect("model outputs are distributions")
    }
}

/// Anything that turns text into a three-class prediction.
pub trait SentimentScorer: Sync {
    fn predict(&self, text: &str) -> Prediction;
}

impl SentimentScorer for SentimentModel {
    fn predict(&self, text: &str) -> Prediction {
        let fwd = self
            .forward(&self.encode(text))
            .expect("encoded ids are in range");
        Prediction::from_probs(fwd.probs)
    }
}

/// `P(positive) - P(negative)`, in [-1, 1].
pub fn score_from_probs(p: [f64; NUM_CLASSES]) -> Result<f64, SentimentError> {
    let ok = p.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x))
        && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-6;
    if !ok {
        return Err(SentimentError::MalformedDistribution(p));
    }
    Ok((p[SentimentLabel::Positive.index()] - p[SentimentLabel::Negative.index()]).clamp(-1.0, 1.0))
}

/// Logistic one-vs-rest model over unigram and bigram presence features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearSentimentModel {
    pub weights: HashMap<String, [f64; NUM_CLASSES]>,
    pub bias: [f64; NUM_CLASSES],
}

fn ngram_features(text: &str) -> BTreeSet<String> {
    let w = words(text);
    let mut f: BTreeSet<String> = w.iter().map(|t| format!("u:{t}")).collect();
    for pair in w.windows(2) {
        f.insert(format!("b:{} {}", pair[0], pair[1]));
    }
    f
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LinearSentimentModel {
    pub fn train(data: &[LabeledText], epochs: usize, learning_rate: f64, seed: u64) -> Result<Self, SentimentError> {
        if data.is_empty() {
            return Err(SentimentError::EmptyData);
        }
        let feats: Vec<(Vec<String>, SentimentLabel)> = data
            .iter()
            .map(|d| (ngram_features(&d.text).into_iter().collect(), d.label))
            .collect();
        let mut m = Self::default();
        let mut order: Vec<usize> = (0..feats.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let (fs, gold) = &feats[i];
                let z = m.logits(fs.iter().map(String::as_str));
                for c in 0..NUM_CLASSES {
                    let y = if gold.index() == c { 1.0 } else { 0.0 };
                    let g = sigmoid(z[c]) - y;
                    for f in fs {
                        m.weights.entry(f.clone()).or_insert([0.0; NUM_CLASSES])[c] -= learning_rate * g;
                    }
                    m.bias[c] -= learning_rate * g;
                }
            }
        }
        Ok(m)
    }

    fn logits<'a>(&self, feats: impl Iterator<Item = &'a str>) -> [f64; NUM_CLASSES] {
        let mut z = self.bias;
        for f in feats {
            if let Some(w) = self.weights.get(f) {
                for c in 0..NUM_CLASSES {
                    z[c] += w[c];
                }
            }
        }
        z
    }
}

impl SentimentScorer for LinearSentimentModel {
    fn predict(&self, text: &str) -> Prediction {
        let f = ngram_features(text);
        let s = self.logits(f.iter().map(String::as_str)).map(sigmoid);
        let total: f64 = s.iter().sum();
        Prediction::from_probs(s.map(|x| x / total))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Unweighted mean of the three per-class recalls.
    pub avg_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub recalls: [f64; NUM_CLASSES],
    pub precisions: [f64; NUM_CLASSES],
    /// `confusion[gold][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    /// Classes with no gold examples; their recall counts as 0.
    pub absent_classes: Vec<SentimentLabel>,
}

pub fn evaluate_predictions(
    pairs: &[(SentimentLabel, SentimentLabel)],
) -> Result<Evaluation, SentimentError> {
    if pairs.is_empty() {
        return Err(SentimentError::EmptyTestSet);
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for &(g, p) in pairs {
        confusion[g.index()][p.index()] += 1;
    }
    let mut recalls = [0.0; NUM_CLASSES];
    let mut precisions = [0.0; NUM_CLASSES];
    let mut f1s = [0.0; NUM_CLASSES];
    let mut absent_classes = Vec::new();
    for c in 0..NUM_CLASSES {
        let tp = confusion[c][c] as f64;
        let gold: usize = confusion[c].iter().sum();
        let pred: usize = (0..NUM_CLASSES).map(|g| confusion[g][c]).sum();
        if gold == 0 {
            absent_classes.push(SentimentLabel::from_index(c).expect("index < 3"));
        } else {
            recalls[c] = tp / gold as f64;
        }
        if pred > 0 {
            precisions[c] = tp / pred as f64;
        }
        f1s[c] = crate::ner::f1(precisions[c], recalls[c]);
    }
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        avg_recall: recalls.iter().sum::<f64>() / NUM_CLASSES as f64,
        macro_precision: precisions.iter().sum::<f64>() / NUM_CLASSES as f64,
        macro_f1: f1s.iter().sum::<f64>() / NUM_CLASSES as f64,
        accuracy: correct as f64 / pairs.len() as f64,
        recalls,
        precisions,
        confusion,
        absent_classes,
    })
}

pub fn evaluate<M: SentimentScorer + ?Sized>(model: &M, data: &[LabeledText]) -> Result<Evaluation, SentimentError> {
    let pairs = crate::exec::map(data, |d| (d.label, model.predict(&d.text).label));
    evaluate_predictions(&pairs)
}

pub const MODEL_HEADER: &str = "commentlens-sentiment v1";

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

impl SentimentModel {
    /// Text container: a header with explicit dimensions, the vocabulary,
    /// then one line per parameter tensor.
    pub fn save<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{MODEL_HEADER}")?;
        writeln!(out, "vocab_size {}", self.vocab.len())?;
        writeln!(out, "dim {}", self.dim)?;
        writeln!(out, "maps {}", self.maps)?;
        let widths: Vec<String> = self.widths().iter().map(usize::to_string).collect();
        writeln!(out, "widths {}", widths.join(" "))?;
        writeln!(out, "max_tokens {}", self.max_tokens)?;
        writeln!(out, "min_frequency {}", self.vocab.min_frequency)?;
        for t in &self.vocab.tokens {
            writeln!(out, "token {t}")?;
        }
        writeln!(out, "embedding {}", join(&self.embedding))?;
        for b in &self.banks {
            writeln!(out, "filter {} {}", b.width, join(&b.weights))?;
            writeln!(out, "filter_bias {} {}", b.width, join(&b.bias))?;
        }
        writeln!(out, "dense {}", join(&self.dense_w))?;
        writeln!(out, "dense_bias {}", join(&self.dense_b))?;
        out.flush()
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, SentimentError> {
        let mut header: HashMap<String, String> = HashMap::new();
        let mut tokens = Vec::new();
        let mut tensors: Vec<(String, Vec<String>)> = Vec::new();
        let mut lines = input.lines();
        let first = lines.next().transpose()?.unwrap_or_default();
        if first.trim() != MODEL_HEADER {
            return Err(SentimentError::Format {
                line: 1,
                message: format!("expected header `{MODEL_HEADER}`"),
            });
        }
        for line in lines {
            let line = line?;
            let (key, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
            match key {
                "token" => tokens.push(rest.to_string()),
                "embedding" | "filter" | "filter_bias" | "dense" | "dense_bias" => {
                    tensors.push((key.to_string(), rest.split(' ').map(str::to_string).collect()))
                }
                "" => {}
                _ => {
                    header.insert(key.to_string(), rest.to_string());
                }
            }
        }
        let bad = |message: String| SentimentError::Format { line: 0, message };
        let num = |k: &str| -> Result<usize, SentimentError> {
            header
                .get(k)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(format!("missing or invalid `{k}`")))
        };
        let (vsize, dim, maps, max_tokens, min_frequency) = (
            num("vocab_size")?,
            num("dim")?,
            num("maps")?,
            num("max_tokens")?,
            num("min_frequency")?,
        );
        let widths: Vec<usize> = header
            .get("widths")
            .ok_or_else(|| bad("missing `widths`".into()))?
            .split(' ')
            .map(|w| w.parse().map_err(|_| bad(format!("bad width `{w}`"))))
            .collect::<Result<_, _>>()?;
        if tokens.len() != vsize || tokens.first().map(String::as_str) != Some("<pad>") {
            return Err(bad(format!("expected {vsize} vocabulary tokens starting with <pad>")));
        }
        let vocab = Vocab::from_tokens(tokens.into_iter().skip(2), min_frequency);
        if vocab.len() != vsize {
            return Err(bad("vocabulary contains duplicates".into()));
        }
        let mut model = SentimentModel::new(vocab, dim, maps, &widths, 0)?;
        model.max_tokens = max_tokens;

        let parse = |vals: &[String], expected: usize, what: &str| -> Result<Vec<f64>, SentimentError> {
            let v = vals
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("{what}: not a number")))?;
            if v.len() != expected {
                return Err(bad(format!("{what}: expected {expected} values, got {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("{what}: non-finite value")));
            }
            Ok(v)
        };
        let mut seen_banks = 0;
        let mut seen_bias = 0;
        let mut seen = BTreeSet::new();
        for (key, vals) in &tensors {
            match key.as_str() {
                "embedding" => {
                    model.embedding = parse(vals, vsize * dim, "embedding")?;
                    if model.embedding[..dim].iter().any(|&x| x != 0.0) {
                        return Err(bad("padding embedding row must be zero".into()));
                    }
                }
                "filter" | "filter_bias" => {
                    let w: usize = vals
                        .first()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad(format!("{key}: missing width")))?;
                    let b = model
                        .banks
                        .iter_mut()
                        .find(|b| b.width == w)
                        .ok_or_else(|| bad(format!("{key}: unknown width {w}")))?;
                    if key == "filter" {
                        b.weights = parse(&vals[1..], maps * w * dim, "filter")?;
                        seen_banks += 1;
                    } else {
                        b.bias = parse(&vals[1..], maps, "filter_bias")?;
                        seen_bias += 1;
                    }
                }
                "dense" => model.dense_w = parse(vals, widths.len() * maps * NUM_CLASSES, "dense")?,
                "dense_bias" => {
                    let v = parse(vals, NUM_CLASSES, "dense_bias")?;
                    model.dense_b = [v[0], v[1], v[2]];
                }
                _ => unreachable!(),
            }
            seen.insert(key.clone());
        }
        if seen.len() != 5 || seen_banks != widths.len() || seen_bias != widths.len() {
            return Err(bad("model file is missing parameter tensors".into()));
        }
        Ok(model)
    }
}
