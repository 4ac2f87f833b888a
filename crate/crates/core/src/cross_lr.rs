//! Sparse logistic regression over original and cross features.
//!
//! The logit of a sample is the sum of one looked-up weight per original
//! field, plus the bias, plus one looked-up weight per cross field. Cross
//! weights live in exact dictionaries keyed by the constituent feature ids;
//! a key never seen in training looks up to zero.
//!
//! Training runs in two phases. Phase one fits original weights and bias.
//! Phase two freezes both and fits only the cross weights.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::candidates::CrossField;
use crate::data::EncodedData;
use crate::rng::{self, salt};
use crate::{metrics, sigmoid, Error, Result};

/// Composed categorical key of a sample under a cross field.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CrossFeatureValue {
    pub fields: Vec<usize>,
    pub ids: Vec<u32>,
}

impl fmt::Display for CrossFeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (field, id)) in self.fields.iter().zip(&self.ids).enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{field}:{id}")?;
        }
        Ok(())
    }
}

/// Cross value of `row` under `cross`. Missing constituents take part in
/// the key like any other id.
pub fn materialize(row: &[u32], cross: &CrossField) -> CrossFeatureValue {
    CrossFeatureValue {
        fields: cross.fields().to_vec(),
        ids: cross.fields().iter().map(|&f| row[f]).collect(),
    }
}

fn cross_key(row: &[u32], cross: &CrossField) -> Vec<u32> {
    cross.fields().iter().map(|&f| row[f]).collect()
}

/// Weights of one cross field.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossTable {
    field: CrossField,
    slots: HashMap<Vec<u32>, usize>,
    keys: Vec<Vec<u32>>,
    weights: Vec<f64>,
}

impl CrossTable {
    /// Zero-weight table over every key of `cross` present in `data`, in
    /// first-seen order.
    pub fn from_data(cross: CrossField, data: &EncodedData) -> Self {
        let mut table = CrossTable {
            field: cross,
            slots: HashMap::new(),
            keys: Vec::new(),
            weights: Vec::new(),
        };
        for row in data.rows() {
            let key = cross_key(row, &table.field);
            if !table.slots.contains_key(&key) {
                table.insert(key, 0.0);
            }
        }
        table
    }

    pub fn empty(cross: CrossField) -> Self {
        CrossTable {
            field: cross,
            slots: HashMap::new(),
            keys: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn insert(&mut self, key: Vec<u32>, weight: f64) {
        match self.slots.get(&key) {
            Some(&slot) => self.weights[slot] = weight,
            None => {
                self.slots.insert(key.clone(), self.keys.len());
                self.keys.push(key);
                self.weights.push(weight);
            }
        }
    }

    pub fn field(&self) -> &CrossField {
        &self.field
    }

    fn slot(&self, row: &[u32]) -> Option<usize> {
        self.slots.get(&cross_key(row, &self.field)).copied()
    }

    pub fn lookup(&self, row: &[u32]) -> f64 {
        self.slot(row).map_or(0.0, |s| self.weights[s])
    }

    /// `(constituent ids, weight)` in first-seen order.
    pub fn entries(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.keys
            .iter()
            .map(Vec::as_slice)
            .zip(self.weights.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseLrModel {
    field_weights: Vec<Vec<f64>>,
    bias: f64,
    crosses: Vec<CrossTable>,
}

impl SparseLrModel {
    /// All-zero model over fields with the given vocabulary sizes.
    pub fn new(vocab_sizes: &[usize]) -> Self {
        SparseLrModel {
            field_weights: vocab_sizes.iter().map(|&v| vec![0.0; v]).collect(),
            bias: 0.0,
            crosses: Vec::new(),
        }
    }

    pub fn n_fields(&self) -> usize {
        self.field_weights.len()
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_bias(&mut self, bias: f64) {
        self.bias = bias;
    }

    pub fn field_weights(&self, field: usize) -> &[f64] {
        &self.field_weights[field]
    }

    pub fn field_weights_mut(&mut self, field: usize) -> &mut [f64] {
        &mut self.field_weights[field]
    }

    pub fn crosses(&self) -> &[CrossTable] {
        &self.crosses
    }

    pub fn push_cross(&mut self, table: CrossTable) {
        self.crosses.push(table);
    }

    /// Copy keeping only the cross fields at `indices`, in that order.
    pub fn with_crosses(&self, indices: &[usize]) -> SparseLrModel {
        SparseLrModel {
            field_weights: self.field_weights.clone(),
            bias: self.bias,
            crosses: indices.iter().map(|&i| self.crosses[i].clone()).collect(),
        }
    }

    pub fn without_crosses(&self) -> SparseLrModel {
        self.with_crosses(&[])
    }

    /// Sum of original weights plus bias, accumulated in field order.
    pub fn base_logit(&self, row: &[u32]) -> f64 {
        let mut logit = 0.0;
        for (weights, &id) in self.field_weights.iter().zip(row) {
            logit += weights.get(id as usize).copied().unwrap_or(0.0);
        }
        logit + self.bias
    }

    /// Base logit plus the cross fields at `active`, added in that order.
    pub fn logit_with(&self, row: &[u32], active: &[usize]) -> f64 {
        let mut logit = self.base_logit(row);
        for &c in active {
            logit += self.crosses[c].lookup(row);
        }
        logit
    }

    /// Logit with every cross field active, in model order.
    pub fn logit(&self, row: &[u32]) -> f64 {
        let mut logit = self.base_logit(row);
        for table in &self.crosses {
            logit += table.lookup(row);
        }
        logit
    }

    pub fn predict(&self, row: &[u32]) -> f64 {
        sigmoid(self.logit(row))
    }

    pub fn predict_with(&self, row: &[u32], active: &[usize]) -> f64 {
        sigmoid(self.logit_with(row, active))
    }

    pub fn predict_batch(&self, data: &EncodedData) -> Vec<f64> {
        data.rows().map(|row| self.predict(row)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    /// Learning rates tried; the best by validation AUC is kept.
    pub learning_rates: Vec<f64>,
    /// L2 coefficients tried alongside each learning rate.
    pub l2: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
}

pub const TUNING_GRID: [f64; 5] = [0.0001, 0.001, 0.01, 0.1, 1.0];

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            learning_rates: TUNING_GRID.to_vec(),
            l2: TUNING_GRID.to_vec(),
            batch_size: 256,
            epochs: 30,
            patience: 5,
        }
    }
}

impl LrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.l2.is_empty() {
            return Err(Error::Config("lr tuning grids must not be empty".into()));
        }
        if self
            .learning_rates
            .iter()
            .any(|&r| !r.is_finite() || r <= 0.0)
            || self.l2.iter().any(|&r| !r.is_finite() || r < 0.0)
        {
            return Err(Error::Config(
                "lr learning rates must be positive and l2 nonnegative".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "lr batch size, epochs and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Samples as trainable weight slots over a fixed logit offset.
struct SlotProblem {
    offsets: Vec<usize>,
    slots: Vec<usize>,
    base: Vec<f64>,
    labels: Vec<u8>,
}

impl SlotProblem {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn sample(&self, k: usize) -> &[usize] {
        &self.slots[self.offsets[k]..self.offsets[k + 1]]
    }

    fn logit(&self, k: usize, weights: &[f64], bias: f64) -> f64 {
        let mut z = self.base[k];
        for &s in self.sample(k) {
            z += weights[s];
        }
        z + bias
    }

    fn score(&self, weights: &[f64], bias: f64) -> f64 {
        let logits: Vec<f64> = (0..self.len())
            .map(|k| self.logit(k, weights, bias))
            .collect();
        match metrics::auc(&self.labels, &logits) {
            Ok(auc) => auc,
            // single-class validation: fall back to negative log loss
            Err(_) => -(0..self.len())
                .map(|k| log_loss(logits[k], self.labels[k]))
                .sum::<f64>(),
        }
    }
}

fn log_loss(z: f64, y: u8) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y as f64 * z
}

struct Fitted {
    weights: Vec<f64>,
    bias: f64,
    score: f64,
}

/// Mini-batch gradient descent for one (learning rate, l2) pair with early
/// stopping on validation score. L2 is applied to the weights a batch
/// touches.
#[allow(clippy::too_many_arguments)]
fn fit_slots(
    train: &SlotProblem,
    valid: &SlotProblem,
    n_slots: usize,
    train_bias: bool,
    lr: f64,
    l2: f64,
    config: &LrConfig,
    seed: u64,
) -> Result<Fitted> {
    let mut weights = vec![0.0; n_slots];
    let mut bias = 0.0;
    let mut grads = vec![0.0; n_slots];
    let mut touched: Vec<usize> = Vec::new();
    let mut seen = vec![false; n_slots];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle = rng::stream(seed, salt::LR_SHUFFLE);

    let mut best = Fitted {
        score: valid.score(&weights, bias),
        weights: weights.clone(),
        bias,
    };
    let mut best_epoch = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut bias_grad = 0.0;
            for &k in batch {
                let residual =
                    (sigmoid(train.logit(k, &weights, bias)) - train.labels[k] as f64) * scale;
                bias_grad += residual;
                for &s in train.sample(k) {
                    grads[s] += residual;
                    if !seen[s] {
                        seen[s] = true;
                        touched.push(s);
                    }
                }
            }
            for &s in &touched {
                weights[s] -= lr * (grads[s] + l2 * weights[s]);
                grads[s] = 0.0;
                seen[s] = false;
            }
            touched.clear();
            if train_bias {
                bias -= lr * bias_grad;
            }
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite lr weights in epoch {epoch} (learning rate {lr}, l2 {l2})"
            )));
        }
        let score = valid.score(&weights, bias);
        if score > best.score {
            best = Fitted {
                weights: weights.clone(),
                bias,
                score,
            };
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    Ok(best)
}

fn tune(
    train: &SlotProblem,
    valid: &SlotProblem,
    n_slots: usize,
    train_bias: bool,
    config: &LrConfig,
    seed: u64,
) -> Result<(Fitted, f64, f64)> {
    config.validate()?;
    let mut best: Option<(Fitted, f64, f64)> = None;
    for &lr in &config.learning_rates {
        for &l2 in &config.l2 {
            let fitted = fit_slots(train, valid, n_slots, train_bias, lr, l2, config, seed)?;
            log::debug!("lr grid: rate {lr} l2 {l2} -> valid {:.6}", fitted.score);
            if best.as_ref().is_none_or(|b| fitted.score > b.0.score) {
                best = Some((fitted, lr, l2));
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Outcome of a training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub learning_rate: f64,
    pub l2: f64,
    pub valid_score: f64,
}

fn field_offsets(model: &SparseLrModel) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(model.n_fields() + 1);
    let mut total = 0;
    for w in &model.field_weights {
        offsets.push(total);
        total += w.len();
    }
    offsets.push(total);
    offsets
}

fn original_problem(
    model: &SparseLrModel,
    data: &EncodedData,
    offsets: &[usize],
) -> Result<SlotProblem> {
    let mut problem = SlotProblem {
        offsets: vec![0],
        slots: Vec::with_capacity(data.ids.len()),
        base: vec![0.0; data.len()],
        labels: data.labels.clone(),
    };
    for row in data.rows() {
        for (f, &id) in row.iter().enumerate() {
            if id as usize >= model.field_weights[f].len() {
                return Err(Error::Encoding(format!(
                    "feature id {id} out of range for field {f}"
                )));
            }
            problem.slots.push(offsets[f] + id as usize);
        }
        problem.offsets.push(problem.slots.len());
    }
    Ok(problem)
}

/// Phase one: fits original-feature weights and the bias, tuning over the
/// configured grid. Any cross tables in `model` are dropped.
pub fn train_phase1(
    model: &mut SparseLrModel,
    train: &EncodedData,
    valid: &EncodedData,
    config: &LrConfig,
    seed: u64,
) -> Result<PhaseReport> {
    if data_width_mismatch(model, train) || data_width_mismatch(model, valid) {
        return Err(Error::Encoding(
            "data width does not match the model".into(),
        ));
    }
    let offsets = field_offsets(model);
    let train_p = original_problem(model, train, &offsets)?;
    let valid_p = original_problem(model, valid, &offsets)?;
    let (fitted, learning_rate, l2) = tune(
        &train_p,
        &valid_p,
        offsets[model.n_fields()],
        true,
        config,
        seed,
    )?;
    for (f, weights) in model.field_weights.iter_mut().enumerate() {
        weights.copy_from_slice(&fitted.weights[offsets[f]..offsets[f + 1]]);
    }
    model.bias = fitted.bias;
    model.crosses.clear();
    Ok(PhaseReport {
        learning_rate,
        l2,
        valid_score: fitted.score,
    })
}

fn data_width_mismatch(model: &SparseLrModel, data: &EncodedData) -> bool {
    !data.is_empty() && data.n_fields != model.n_fields()
}

/// Phase two: adds one table per candidate, keyed on the training data, and
/// fits only those weights. Original weights and bias are left untouched.
pub fn train_phase2(
    model: &mut SparseLrModel,
    train: &EncodedData,
    valid: &EncodedData,
    candidates: &[CrossField],
    config: &LrConfig,
    seed: u64,
) -> Result<Option<PhaseReport>> {
    if candidates.is_empty() {
        return Ok(None);
    }
    if data_width_mismatch(model, train) || data_width_mismatch(model, valid) {
        return Err(Error::Encoding(
            "data width does not match the model".into(),
        ));
    }
    let tables: Vec<CrossTable> = candidates
        .iter()
        .map(|c| CrossTable::from_data(c.clone(), train))
        .collect();
    let mut offsets = Vec::with_capacity(tables.len() + 1);
    let mut total = 0;
    for t in &tables {
        offsets.push(total);
        total += t.len();
    }
    let problem = |data: &EncodedData| SlotProblem {
        offsets: {
            let mut o = vec![0];
            let mut acc = 0;
            for row in data.rows() {
                acc += tables.iter().filter(|t| t.slot(row).is_some()).count();
                o.push(acc);
            }
            o
        },
        slots: data
            .rows()
            .flat_map(|row| {
                tables
                    .iter()
                    .zip(&offsets)
                    .filter_map(move |(t, &off)| t.slot(row).map(|s| off + s))
            })
            .collect(),
        base: data.rows().map(|row| model.base_logit(row)).collect(),
        labels: data.labels.clone(),
    };
    let (train_p, valid_p) = (problem(train), problem(valid));
    let (fitted, learning_rate, l2) = tune(&train_p, &valid_p, total, false, config, seed)?;
    model.crosses.clear();
    for (mut table, &off) in tables.into_iter().zip(&offsets) {
        let n = table.len();
        table.weights.copy_from_slice(&fitted.weights[off..off + n]);
        model.crosses.push(table);
    }
    Ok(Some(PhaseReport {
        learning_rate,
        l2,
        valid_score: fitted.score,
    }))
}
