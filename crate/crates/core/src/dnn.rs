//! Embedding MLP: per-field embeddings, concatenated, through ReLU dense
//! layers to a single output unit.
//!
//! All parameters live in one flat vector (embeddings first, then each
//! dense layer's weights and bias). Dense weights are row-major
//! `(out_dim, in_dim)`.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedData, UNSEEN_ID};
use crate::rng::{self, salt};
use crate::{metrics, sigmoid, Error, Result};

const MAGIC: &[u8; 8] = b"DNN2LRM\x01";
pub const BATCH_SIZES: [usize; 4] = [256, 512, 1024, 4096];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    /// Sigmoid output trained with binary cross-entropy.
    #[default]
    Sigmoid,
    /// Identity output trained with squared error.
    Identity,
}

/// What embedding gradients are taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GradientTarget {
    /// The model output (post-sigmoid probability for classifiers).
    #[default]
    Prediction,
    /// The pre-activation of the output unit.
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnConfig {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub output: OutputKind,
    pub gradient: GradientTarget,
}

impl Default for DnnConfig {
    fn default() -> Self {
        DnnConfig {
            embedding_dim: 10,
            hidden: vec![400, 100],
            learning_rate: 0.001,
            l2: 0.0001,
            batch_size: 256,
            epochs: 30,
            patience: 5,
            output: OutputKind::Sigmoid,
            gradient: GradientTarget::Prediction,
        }
    }
}

impl DnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "embedding and hidden sizes must be positive".into(),
            ));
        }
        if !self.learning_rate.is_finite()
            || self.learning_rate <= 0.0
            || !self.l2.is_finite()
            || self.l2 < 0.0
        {
            return Err(Error::Config(
                "dnn learning rate must be positive and l2 nonnegative".into(),
            ));
        }
        if !BATCH_SIZES.contains(&self.batch_size) {
            return Err(Error::Config(format!(
                "dnn batch size {} not in {BATCH_SIZES:?}",
                self.batch_size
            )));
        }
        if self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "dnn epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embeddings: Vec<usize>,
    weights: Vec<usize>,
    biases: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(vocab_sizes: &[usize], dim: usize, shapes: &[(usize, usize)]) -> Self {
        let mut offset = 0;
        let mut embeddings = Vec::with_capacity(vocab_sizes.len());
        for &v in vocab_sizes {
            embeddings.push(offset);
            offset += v * dim;
        }
        let (mut weights, mut biases) = (Vec::new(), Vec::new());
        for &(i, o) in shapes {
            weights.push(offset);
            offset += i * o;
            biases.push(offset);
            offset += o;
        }
        Layout {
            embeddings,
            weights,
            biases,
            total: offset,
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    input: Vec<f64>,
    /// Post-ReLU output of each hidden layer.
    hidden: Vec<Vec<f64>>,
    pub logit: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDnn {
    vocab_sizes: Vec<usize>,
    dim: usize,
    /// `(in_dim, out_dim)` per dense layer, output layer last.
    shapes: Vec<(usize, usize)>,
    output: OutputKind,
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation AUC for classifiers, negative MSE for regressors.
    pub valid_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_score: f64,
}

impl EmbeddingDnn {
    /// Randomly initialized network: embeddings uniform in (-0.05, 0.05)
    /// with the unseen row zeroed, dense weights He-normal, biases zero.
    pub fn new(
        vocab_sizes: &[usize],
        dim: usize,
        hidden: &[usize],
        output: OutputKind,
        seed: u64,
    ) -> Self {
        let mut model = Self::zeros(vocab_sizes, dim, hidden, output);
        let mut rng = rng::stream(seed, salt::DNN_INIT);
        let uniform = Uniform::new(-0.05, 0.05).expect("valid range");
        for (f, &v) in vocab_sizes.iter().enumerate() {
            let start = model.layout.embeddings[f];
            for id in 0..v {
                let row = &mut model.params[start + id * dim..start + (id + 1) * dim];
                if id as u32 == UNSEEN_ID {
                    continue;
                }
                row.iter_mut().for_each(|p| *p = uniform.sample(&mut rng));
            }
        }
        for (l, &(i, o)) in model.shapes.clone().iter().enumerate() {
            let normal = Normal::new(0.0, (2.0 / i as f64).sqrt()).expect("positive std");
            let start = model.layout.weights[l];
            model.params[start..start + i * o]
                .iter_mut()
                .for_each(|p| *p = normal.sample(&mut rng));
        }
        model
    }

    /// Network with every parameter zero.
    pub fn zeros(vocab_sizes: &[usize], dim: usize, hidden: &[usize], output: OutputKind) -> Self {
        assert!(
            !vocab_sizes.is_empty() && dim > 0,
            "need fields and a positive embedding size"
        );
        let mut shapes = Vec::with_capacity(hidden.len() + 1);
        let mut width = vocab_sizes.len() * dim;
        for &h in hidden {
            shapes.push((width, h));
            width = h;
        }
        shapes.push((width, 1));
        let layout = Layout::new(vocab_sizes, dim, &shapes);
        EmbeddingDnn {
            vocab_sizes: vocab_sizes.to_vec(),
            dim,
            params: vec![0.0; layout.total],
            shapes,
            output,
            layout,
        }
    }

    pub fn n_fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output
    }

    /// `(in_dim, out_dim)` per dense layer.
    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn embedding(&self, field: usize, id: u32) -> &[f64] {
        let start = self.layout.embeddings[field] + id as usize * self.dim;
        &self.params[start..start + self.dim]
    }

    pub fn embedding_mut(&mut self, field: usize, id: u32) -> &mut [f64] {
        let start = self.layout.embeddings[field] + id as usize * self.dim;
        &mut self.params[start..start + self.dim]
    }

    pub fn layer_weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let (i, o) = self.shapes[layer];
        let start = self.layout.weights[layer];
        &mut self.params[start..start + i * o]
    }

    pub fn layer_bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let o = self.shapes[layer].1;
        let start = self.layout.biases[layer];
        &mut self.params[start..start + o]
    }

    fn check_row(&self, row: &[u32]) -> Result<()> {
        if row.len() != self.n_fields() {
            return Err(Error::Encoding(format!(
                "sample has {} fields, model expects {}",
                row.len(),
                self.n_fields()
            )));
        }
        for (f, (&id, &size)) in row.iter().zip(&self.vocab_sizes).enumerate() {
            if id as usize >= size {
                return Err(Error::Encoding(format!(
                    "feature id {id} out of range for field {f} (vocabulary size {size})"
                )));
            }
        }
        Ok(())
    }

    fn forward_into(&self, row: &[u32], cache: &mut Cache) {
        cache.input.clear();
        for (f, &id) in row.iter().enumerate() {
            cache.input.extend_from_slice(self.embedding(f, id));
        }
        cache.hidden.resize(self.shapes.len() - 1, Vec::new());
        let mut logit = 0.0;
        for (l, &(i, o)) in self.shapes.iter().enumerate() {
            let w = &self.params[self.layout.weights[l]..self.layout.weights[l] + i * o];
            let b = &self.params[self.layout.biases[l]..self.layout.biases[l] + o];
            let (before, after) = cache.hidden.split_at_mut(l);
            let x: &[f64] = if l == 0 { &cache.input } else { &before[l - 1] };
            if l + 1 == self.shapes.len() {
                logit = b[0] + dot(&w[..i], x);
            } else {
                let h = &mut after[0];
                h.clear();
                h.extend(
                    w.chunks_exact(i)
                        .zip(b)
                        .map(|(row, bias)| (bias + dot(row, x)).max(0.0)),
                );
            }
        }
        cache.logit = logit;
        cache.output = match self.output {
            OutputKind::Sigmoid => sigmoid(logit),
            OutputKind::Identity => logit,
        };
    }

    /// Prediction and the cache needed by [`Self::input_gradient`].
    pub fn forward(&self, row: &[u32]) -> Result<(f64, Cache)> {
        self.check_row(row)?;
        let mut cache = Cache::default();
        self.forward_into(row, &mut cache);
        Ok((cache.output, cache))
    }

    pub fn predict(&self, row: &[u32]) -> Result<f64> {
        self.forward(row).map(|(p, _)| p)
    }

    /// Predictions for every row, in row order.
    pub fn predict_batch(&self, data: &EncodedData) -> Result<Vec<f64>> {
        data.rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|row| self.predict(row))
            .collect()
    }

    /// Backpropagates `upstream = dL/dlogit`. Returns dL/d(input). When
    /// `grads` is given, parameter gradients are accumulated into it.
    fn backward(&self, cache: &Cache, upstream: f64, mut grads: Option<&mut [f64]>) -> Vec<f64> {
        let mut delta = vec![upstream];
        for l in (0..self.shapes.len()).rev() {
            let (i, o) = self.shapes[l];
            let w_start = self.layout.weights[l];
            let w = &self.params[w_start..w_start + i * o];
            let x: &[f64] = if l == 0 {
                &cache.input
            } else {
                &cache.hidden[l - 1]
            };
            if let Some(g) = grads.as_deref_mut() {
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let gw = &mut g[w_start + r * i..w_start + (r + 1) * i];
                    gw.iter_mut().zip(x).for_each(|(gw, &xv)| *gw += d * xv);
                    g[self.layout.biases[l] + r] += d;
                }
            }
            let mut dx = vec![0.0; i];
            for (row, &d) in w.chunks_exact(i).zip(&delta) {
                if d != 0.0 {
                    dx.iter_mut().zip(row).for_each(|(dx, &wv)| *dx += d * wv);
                }
            }
            if l > 0 {
                // ReLU mask of the layer feeding this one
                dx.iter_mut().zip(x).for_each(|(d, &h)| {
                    if h <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = dx;
        }
        delta
    }

    /// Gradient of the chosen target with respect to the concatenated input
    /// embeddings of the sample in `cache`.
    pub fn input_gradient(&self, cache: &Cache, target: GradientTarget) -> Vec<f64> {
        let scale = match (target, self.output) {
            (GradientTarget::Prediction, OutputKind::Sigmoid) => {
                cache.output * (1.0 - cache.output)
            }
            _ => 1.0,
        };
        self.backward(cache, scale, None)
    }

    /// Per-field local weights `w_{k,f}`, flattened `n x m`.
    pub fn embedding_gradients(&self, row: &[u32], target: GradientTarget) -> Result<Vec<f64>> {
        let (_, cache) = self.forward(row)?;
        Ok(self.input_gradient(&cache, target))
    }

    fn validation_score(&self, data: &EncodedData, targets: &[f64]) -> Result<f64> {
        let predictions = self.predict_batch(data)?;
        match self.output {
            OutputKind::Sigmoid => match metrics::auc(&data.labels, &predictions) {
                Ok(auc) => Ok(auc),
                Err(Error::UndefinedMetric(_)) => Ok(-mean_squared_error(&predictions, targets)),
                Err(e) => Err(e),
            },
            OutputKind::Identity => Ok(-mean_squared_error(&predictions, targets)),
        }
    }

    /// Mini-batch Adam on cross-entropy (sigmoid) or squared error
    /// (identity) plus L2. Keeps the parameters of the epoch with the best
    /// validation score and stops after `patience` epochs without
    /// improvement.
    pub fn train(
        &mut self,
        train: &EncodedData,
        train_targets: &[f64],
        valid: &EncodedData,
        valid_targets: &[f64],
        config: &DnnConfig,
        seed: u64,
    ) -> Result<TrainReport> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Training("empty training set".into()));
        }
        assert_eq!(train.len(), train_targets.len());
        assert_eq!(valid.len(), valid_targets.len());
        for row in train.rows().chain(valid.rows()) {
            self.check_row(row)?;
        }

        let mut shuffle = rng::stream(seed, salt::DNN_SHUFFLE);
        let mut adam = Adam::new(self.params.len(), config.learning_rate);
        let mut grads = vec![0.0; self.params.len()];
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut cache = Cache::default();

        let mut best = (
            self.validation_score(valid, valid_targets)?,
            0usize,
            self.params.clone(),
        );
        let mut report = TrainReport {
            epochs: Vec::new(),
            best_epoch: 0,
            best_score: best.0,
        };
        for epoch in 1..=config.epochs {
            order.shuffle(&mut shuffle);
            let mut loss_sum = 0.0;
            for (b, batch) in order.chunks(config.batch_size).enumerate() {
                grads.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                let mut batch_loss = 0.0;
                for &k in batch {
                    let row = train.row(k);
                    self.forward_into(row, &mut cache);
                    let y = train_targets[k];
                    batch_loss += self.loss(&cache, y);
                    let upstream = (cache.output - y) * scale;
                    let dx = self.backward(&cache, upstream, Some(&mut grads));
                    for (f, &id) in row.iter().enumerate() {
                        let start = self.layout.embeddings[f] + id as usize * self.dim;
                        let g = &mut grads[start..start + self.dim];
                        let e = &self.params[start..start + self.dim];
                        let d = &dx[f * self.dim..(f + 1) * self.dim];
                        for j in 0..self.dim {
                            g[j] += d[j] + config.l2 * e[j] * scale;
                        }
                    }
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss in epoch {epoch}, batch {b}"
                    )));
                }
                loss_sum += batch_loss;
                for (l, &(i, o)) in self.shapes.iter().enumerate() {
                    let range = self.layout.weights[l]..self.layout.weights[l] + i * o;
                    for (g, p) in grads[range.clone()].iter_mut().zip(&self.params[range]) {
                        *g += config.l2 * p;
                    }
                }
                adam.step(&mut self.params, &grads);
            }
            let valid_score = self.validation_score(valid, valid_targets)?;
            report.epochs.push(EpochStats {
                epoch,
                train_loss: loss_sum / train.len() as f64,
                valid_score,
            });
            log::debug!(
                "dnn epoch {epoch}: loss {:.6} valid {valid_score:.6}",
                loss_sum / train.len() as f64
            );
            if valid_score > best.0 {
                best = (valid_score, epoch, self.params.clone());
            } else if epoch - best.1 >= config.patience {
                break;
            }
        }
        self.params = best.2;
        report.best_epoch = best.1;
        report.best_score = best.0;
        Ok(report)
    }

    /// [`Self::train`] for a classifier, with labels as targets.
    pub fn train_classifier(
        &mut self,
        train: &EncodedData,
        valid: &EncodedData,
        config: &DnnConfig,
        seed: u64,
    ) -> Result<TrainReport> {
        let t: Vec<f64> = train.labels.iter().map(|&l| l as f64).collect();
        let v: Vec<f64> = valid.labels.iter().map(|&l| l as f64).collect();
        self.train(train, &t, valid, &v, config, seed)
    }

    fn loss(&self, cache: &Cache, y: f64) -> f64 {
        match self.output {
            // log(1 + e^z) - y z, stable for large |z|
            OutputKind::Sigmoid => {
                let z = cache.logit;
                z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
            }
            OutputKind::Identity => 0.5 * (cache.output - y).powi(2),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.len() * 8);
        out.extend_from_slice(MAGIC);
        let mut put = |v: u64| out.extend_from_slice(&v.to_le_bytes());
        put(self.n_fields() as u64);
        put(self.dim as u64);
        put(match self.output {
            OutputKind::Sigmoid => 0,
            OutputKind::Identity => 1,
        });
        for &v in &self.vocab_sizes {
            put(v as u64);
        }
        put(self.shapes.len() as u64);
        for &(i, o) in &self.shapes {
            put(i as u64);
            put(o as u64);
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("dnn model file", m.to_string());
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut pos = MAGIC.len();
        let mut next = || -> Result<u64> {
            let chunk = bytes
                .get(pos..pos + 8)
                .ok_or_else(|| bad("truncated header"))?;
            pos += 8;
            Ok(u64::from_le_bytes(chunk.try_into().expect("8 bytes")))
        };
        let n = next()? as usize;
        let dim = next()? as usize;
        let output = match next()? {
            0 => OutputKind::Sigmoid,
            1 => OutputKind::Identity,
            _ => return Err(bad("unknown output kind")),
        };
        if n == 0 || dim == 0 || n > 1 << 20 {
            return Err(bad("implausible field count or embedding size"));
        }
        let vocab_sizes = (0..n)
            .map(|_| next().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_layers = next()? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(bad("implausible layer count"));
        }
        let shapes = (0..n_layers)
            .map(|_| Ok((next()? as usize, next()? as usize)))
            .collect::<Result<Vec<_>>>()?;
        let mut expected_in = n * dim;
        for (l, &(i, o)) in shapes.iter().enumerate() {
            if i != expected_in || (l + 1 == n_layers && o != 1) {
                return Err(bad("layer shapes do not chain"));
            }
            expected_in = o;
        }
        let hidden: Vec<usize> = shapes[..n_layers - 1].iter().map(|s| s.1).collect();
        let mut model = Self::zeros(&vocab_sizes, dim, &hidden, output);
        let body = &bytes[pos..];
        if body.len() != model.params.len() * 8 {
            return Err(bad("parameter block has the wrong length"));
        }
        for (p, chunk) in model.params.iter_mut().zip(body.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean_squared_error(predictions: &[f64], targets: &[f64]) -> f64 {
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / predictions.len().max(1) as f64
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Random rows with ids drawn uniformly from each field's vocabulary.
pub fn random_rows(vocab_sizes: &[usize], k: usize, rng: &mut impl rand::Rng) -> EncodedData {
    let mut ids = Vec::with_capacity(k * vocab_sizes.len());
    for _ in 0..k {
        ids.extend(vocab_sizes.iter().map(|&v| rng.random_range(0..v as u32)));
    }
    EncodedData {
        n_fields: vocab_sizes.len(),
        ids,
        labels: vec![0; k],
    }
}
