//! Logistic regression over flattened, standardised entropy tensors.
//!
//! Training is plain mini-batch gradient descent on mean binary
//! cross-entropy plus an L2 penalty on the weights (the bias is not
//! penalised). It is single-threaded and fully determined by the data and
//! the seed.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::{EntropyParams, EntropyTensor, RangeMode};
use crate::error::{Error, Result};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            l2: 1e-4,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be >= 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::param("l2 must be >= 0"));
        }
        Ok(())
    }
}

/// Anything that turns a feature tensor into P(generated).
pub trait Scorer {
    fn score(&self, features: &EntropyTensor) -> Result<f64>;
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln σ(s) + (1-y) ln(1-σ(s))]` without overflow.
#[inline]
fn bce_from_logit(s: f64, y: f64) -> f64 {
    s.max(0.0) - y * s + (-s.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Vec<f32>,
    bias: f32,
    feat_mean: Vec<f32>,
    feat_std: Vec<f32>,
    /// Entropy settings the training features came from; `None` for models
    /// trained on other feature vectors.
    params: Option<EntropyParams>,
    seed: u64,
    /// Free-form tag naming the configuration that produced the model.
    provenance: Option<String>,
}

impl LinearModel {
    pub fn new(
        weights: Vec<f32>,
        bias: f32,
        feat_mean: Vec<f32>,
        feat_std: Vec<f32>,
        params: Option<EntropyParams>,
        seed: u64,
    ) -> Result<Self> {
        let dim = weights.len();
        if dim == 0 || feat_mean.len() != dim || feat_std.len() != dim {
            return Err(Error::shape(
                format!("{dim} weights, means and stds"),
                format!("{}/{}/{}", weights.len(), feat_mean.len(), feat_std.len()),
            ));
        }
        if let Some(p) = &params {
            if p.feature_dim() != dim {
                return Err(Error::shape(p.feature_dim(), dim));
            }
        }
        if feat_std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidData("feature std entries must be > 0".into()));
        }
        Ok(Self {
            weights,
            bias,
            feat_mean,
            feat_std,
            params,
            seed,
            provenance: None,
        })
    }

    /// Zero weights and bias with an identity standardiser.
    pub fn zeros(dim: usize, params: Option<EntropyParams>) -> Result<Self> {
        Self::new(vec![0.0; dim], 0.0, vec![0.0; dim], vec![1.0; dim], params, 0)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> f32 {
        self.bias
    }

    pub fn feat_mean(&self) -> &[f32] {
        &self.feat_mean
    }

    pub fn feat_std(&self) -> &[f32] {
        &self.feat_std
    }

    pub fn params(&self) -> Option<&EntropyParams> {
        self.params.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_weights(mut self, weights: Vec<f32>, bias: f32) -> Result<Self> {
        if weights.len() != self.dim() {
            return Err(Error::shape(self.dim(), weights.len()));
        }
        self.weights = weights;
        self.bias = bias;
        Ok(self)
    }

    /// Attaches a provenance tag; it must be a single non-empty word.
    pub fn with_provenance(mut self, tag: impl Into<String>) -> Result<Self> {
        let tag = tag.into();
        if tag.is_empty() || tag.chars().any(char::is_whitespace) {
            return Err(Error::param(format!("provenance tag {tag:?} must be one word")));
        }
        self.provenance = Some(tag);
        Ok(self)
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    /// Same model scoring in the opposite direction.
    pub fn negated(&self) -> Self {
        let mut m = self.clone();
        m.weights.iter_mut().for_each(|w| *w = -*w);
        m.bias = -m.bias;
        m
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::shape(
                format!("{} features", self.dim()),
                format!("{len} features"),
            ));
        }
        Ok(())
    }

    pub fn standardize(&self, raw: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(raw.len())?;
        Ok(raw
            .iter()
            .zip(&self.feat_mean)
            .zip(&self.feat_std)
            .map(|((&x, &m), &s)| (x as f64 - m as f64) / s as f64)
            .collect())
    }

    pub fn logit(&self, raw: &[f32]) -> Result<f64> {
        let z = self.standardize(raw)?;
        Ok(z.iter()
            .zip(&self.weights)
            .map(|(z, &w)| z * w as f64)
            .sum::<f64>()
            + self.bias as f64)
    }

    pub fn score_vector(&self, raw: &[f32]) -> Result<f64> {
        Ok(sigmoid(self.logit(raw)?))
    }
}

impl Scorer for LinearModel {
    fn score(&self, features: &EntropyTensor) -> Result<f64> {
        self.score_vector(features.values())
    }
}

/// σ(w·standardise(flatten(features)) + b).
pub fn predict_score(model: &LinearModel, features: &EntropyTensor) -> Result<f64> {
    model.score(features)
}

fn check_batch(model: &LinearModel, features: &[&[f32]], labels: &[Label]) -> Result<()> {
    if features.is_empty() {
        return Err(Error::param("batch must not be empty"));
    }
    if features.len() != labels.len() {
        return Err(Error::shape(features.len(), labels.len()));
    }
    features.iter().try_for_each(|f| model.check_dim(f.len()))
}

/// Mean BCE over the batch plus `l2/2 · ‖w‖²`.
pub fn loss(model: &LinearModel, features: &[&[f32]], labels: &[Label], l2: f64) -> Result<f64> {
    check_batch(model, features, labels)?;
    let mut total = 0.0;
    for (f, y) in features.iter().zip(labels) {
        total += bce_from_logit(model.logit(f)?, y.as_f64());
    }
    let penalty: f64 = model.weights.iter().map(|&w| (w as f64).powi(2)).sum();
    Ok(total / features.len() as f64 + 0.5 * l2 * penalty)
}

/// Analytic gradient of [`loss`] with respect to (weights..., bias).
pub fn gradient(
    model: &LinearModel,
    features: &[&[f32]],
    labels: &[Label],
    l2: f64,
) -> Result<Vec<f64>> {
    check_batch(model, features, labels)?;
    let weights: Vec<f64> = model.weights.iter().map(|&w| w as f64).collect();
    let rows = features
        .iter()
        .map(|f| model.standardize(f))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
    let mut grad = vec![0.0; model.dim() + 1];
    accumulate_gradient(&weights, model.bias as f64, &rows, &targets, l2, &mut grad);
    Ok(grad)
}

/// Writes the gradient of mean BCE + L2 over `rows` into `grad`
/// (length dim + 1, bias last). Summation order is the row order.
fn accumulate_gradient(
    weights: &[f64],
    bias: f64,
    rows: &[impl AsRef<[f64]>],
    targets: &[f64],
    l2: f64,
    grad: &mut [f64],
) {
    let dim = weights.len();
    grad.iter_mut().for_each(|g| *g = 0.0);
    for (row, &y) in rows.iter().zip(targets) {
        let row = row.as_ref();
        let s = dot(weights, row) + bias;
        let err = sigmoid(s) - y;
        for (g, &z) in grad[..dim].iter_mut().zip(row) {
            *g += err * z;
        }
        grad[dim] += err;
    }
    let inv = 1.0 / rows.len() as f64;
    for (g, &w) in grad[..dim].iter_mut().zip(weights) {
        *g = *g * inv + l2 * w;
    }
    grad[dim] *= inv;
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objective(weights: &[f64], bias: f64, rows: &[Vec<f64>], targets: &[f64], l2: f64) -> f64 {
    let data: f64 = rows
        .iter()
        .zip(targets)
        .map(|(r, &y)| bce_from_logit(dot(weights, r) + bias, y))
        .sum();
    data / rows.len() as f64 + 0.5 * l2 * dot(weights, weights)
}

/// Per-dimension mean and std (population), std of constant dims set to 1.
pub fn fit_standardizer(features: &[&[f32]]) -> (Vec<f32>, Vec<f32>) {
    let dim = features[0].len();
    let count = features.len() as f64;
    let mut mean = vec![0f64; dim];
    for f in features {
        for (m, &x) in mean.iter_mut().zip(f.iter()) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0f64; dim];
    for f in features {
        for ((v, &x), m) in var.iter_mut().zip(f.iter()).zip(&mean) {
            *v += (x as f64 - m).powi(2);
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / count).sqrt() as f32;
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean.into_iter().map(|m| m as f32).collect(), std)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearModel,
    /// Full training loss before the first epoch and after each epoch.
    pub loss_history: Vec<f64>,
    /// Epochs (1-based) whose update raised the loss and was rolled back.
    pub rejected_epochs: Vec<usize>,
    pub final_learning_rate: f64,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history holds the initial loss")
    }

    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for (epoch, l) in self.loss_history.iter().enumerate() {
            let note = if self.rejected_epochs.contains(&epoch) {
                " rejected, learning rate halved"
            } else {
                ""
            };
            s.push_str(&format!("epoch={epoch} loss={l:.9}{note}\n"));
        }
        s.push_str(&format!("final_learning_rate={}\n", self.final_learning_rate));
        s
    }
}

/// Trains on arbitrary equal-length feature vectors.
pub fn train_vectors(
    features: &[&[f32]],
    labels: &[Label],
    cfg: &TrainConfig,
    params: Option<EntropyParams>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::shape(features.len(), labels.len()));
    }
    if features.len() < 2 {
        return Err(Error::param("need at least two training examples"));
    }
    if !labels.contains(&Label::Real) || !labels.contains(&Label::Generated) {
        return Err(Error::InvalidData(
            "training data must contain both real and generated examples".into(),
        ));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().position(|f| f.len() != dim) {
        return Err(Error::shape(
            format!("{dim} features"),
            format!("{} features at index {bad}", features[bad].len()),
        ));
    }

    let (mean, std) = fit_standardizer(features);
    let template = LinearModel::new(vec![0.0; dim], 0.0, mean, std, params, cfg.seed)?;
    let rows = features
        .iter()
        .map(|f| template.standardize(f))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut weights = vec![0f64; dim];
    let mut bias = 0f64;
    let mut lr = cfg.learning_rate;
    let mut current = objective(&weights, bias, &rows, &targets, cfg.l2);
    let mut history = vec![current];
    let mut rejected = Vec::new();
    let mut grad = vec![0f64; dim + 1];

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut trial_w = weights.clone();
        let mut trial_b = bias;
        for chunk in order.chunks(cfg.batch_size) {
            let batch_rows: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].as_slice()).collect();
            let batch_y: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            accumulate_gradient(&trial_w, trial_b, &batch_rows, &batch_y, cfg.l2, &mut grad);
            for (w, g) in trial_w.iter_mut().zip(&grad[..dim]) {
                *w -= lr * g;
            }
            trial_b -= lr * grad[dim];
        }
        let next = objective(&trial_w, trial_b, &rows, &targets, cfg.l2);
        if next <= current {
            weights = trial_w;
            bias = trial_b;
            current = next;
        } else {
            rejected.push(epoch);
            lr *= 0.5;
        }
        history.push(current);
    }

    if !current.is_finite() {
        return Err(Error::InvalidData(format!("training diverged, loss {current}")));
    }
    let model = template.with_weights(weights.iter().map(|&w| w as f32).collect(), bias as f32)?;
    Ok(TrainOutcome {
        model,
        loss_history: history,
        rejected_epochs: rejected,
        final_learning_rate: lr,
    })
}

/// Trains on entropy tensors produced with `params`.
pub fn train(
    features: &[EntropyTensor],
    labels: &[Label],
    cfg: &TrainConfig,
    params: &EntropyParams,
) -> Result<TrainOutcome> {
    if let Some(bad) = features.iter().position(|t| t.n() != params.n) {
        return Err(Error::shape(
            format!("n={}", params.n),
            format!("n={} at index {bad}", features[bad].n()),
        ));
    }
    let refs: Vec<&[f32]> = features.iter().map(|t| t.values()).collect();
    train_vectors(&refs, labels, cfg, Some(*params))
}

const MODEL_MAGIC: &str = "NENT-MODEL";
const MODEL_VERSION: u32 = 1;

/// One text header line, then little-endian f32 weights, bias, means, stds.
pub fn write_model(model: &LinearModel, mut w: impl Write) -> std::io::Result<()> {
    let features = match &model.params {
        Some(p) => format!(
            "n={} bins={} canvas={} range_mode={}",
            p.n,
            p.bins,
            p.canvas,
            p.range_mode.as_str()
        ),
        None => "features=raw".to_string(),
    };
    write!(
        w,
        "{MODEL_MAGIC} version={MODEL_VERSION} dim={} {features} seed={}",
        model.dim(),
        model.seed
    )?;
    if let Some(tag) = &model.provenance {
        write!(w, " provenance={tag}")?;
    }
    writeln!(w)?;
    let mut buf = Vec::with_capacity((3 * model.dim() + 1) * 4);
    for v in model
        .weights
        .iter()
        .chain(std::iter::once(&model.bias))
        .chain(&model.feat_mean)
        .chain(&model.feat_std)
    {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_model(bytes: &[u8]) -> Result<LinearModel> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidData("model file has no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::InvalidData("model header is not UTF-8".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(MODEL_MAGIC) {
        return Err(Error::InvalidData("not a model file".into()));
    }
    let mut kv = std::collections::BTreeMap::new();
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| Error::InvalidData(format!("bad header field {f:?}")))?;
        kv.insert(k, v);
    }
    let num = |k: &str| -> Result<u64> {
        kv.get(k)
            .ok_or_else(|| Error::InvalidData(format!("model header lacks {k}")))?
            .parse()
            .map_err(|_| Error::InvalidData(format!("model header field {k} is not a number")))
    };
    if num("version")? != MODEL_VERSION as u64 {
        return Err(Error::InvalidData("unsupported model version".into()));
    }
    let dim = num("dim")? as usize;
    let params = if kv.get("features") == Some(&"raw") {
        None
    } else {
        let range_mode: RangeMode = kv
            .get("range_mode")
            .ok_or_else(|| Error::InvalidData("model header lacks range_mode".into()))?
            .parse()?;
        Some(EntropyParams {
            canvas: num("canvas")? as usize,
            n: num("n")? as usize,
            bins: num("bins")? as usize,
            range_mode,
        })
    };
    let body = &bytes[nl + 1..];
    if body.len() != (3 * dim + 1) * 4 {
        return Err(Error::InvalidData(format!(
            "model body is {} bytes, expected {}",
            body.len(),
            (3 * dim + 1) * 4
        )));
    }
    let floats: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let model = LinearModel::new(
        floats[..dim].to_vec(),
        floats[dim],
        floats[dim + 1..2 * dim + 1].to_vec(),
        floats[2 * dim + 1..].to_vec(),
        params,
        num("seed")?,
    )?;
    match kv.get("provenance") {
        Some(tag) => model.with_provenance(*tag),
        None => Ok(model),
    }
}

pub fn save_model(model: &LinearModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_model(model, &mut buf).expect("writing to a Vec cannot fail");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearModel> {
    let path = path.as_ref();
    read_model(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
