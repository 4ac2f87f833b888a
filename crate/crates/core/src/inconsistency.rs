//! Local and global interpretations and their inconsistency.
//!
//! For sample `k` and field `f`, the local weight `w_{k,f}` is the gradient
//! of the network output with respect to the field's embedding `e_{k,f}`.
//! The global weight `w̄` of a feature value is the mean local weight over
//! all samples carrying that value. The inconsistency is
//! `d_{k,f} = ((w_{k,f} - w̄_{k,f}) · e_{k,f})²`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EncodedData;
use crate::dnn::{EmbeddingDnn, GradientTarget};
use crate::{Error, Result};

const CHUNK: usize = 2048;

/// How the deviation `(w - w̄)` is combined with the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DeviationNorm {
    /// Square of the inner product `(w - w̄) · e`.
    #[default]
    Scalar,
    /// Squared 2-norm of the elementwise product `(w - w̄) ⊙ e`.
    Elementwise,
}

/// `w · e`, the contribution of one feature in one sample.
pub fn local_interpretation(weights: &[f64], embedding: &[f64]) -> f64 {
    weights.iter().zip(embedding).map(|(w, e)| w * e).sum()
}

pub fn inconsistency_value(
    local: &[f64],
    global: &[f64],
    embedding: &[f64],
    norm: DeviationNorm,
) -> f64 {
    let deviation = local.iter().zip(global).map(|(w, g)| w - g);
    match norm {
        DeviationNorm::Scalar => {
            let s: f64 = deviation.zip(embedding).map(|(d, e)| d * e).sum();
            s * s
        }
        DeviationNorm::Elementwise => deviation.zip(embedding).map(|(d, e)| (d * e).powi(2)).sum(),
    }
}

/// Mean local weight per (field, feature id) over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalWeights {
    dim: usize,
    means: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
}

impl GlobalWeights {
    /// Mean local weight of `id` in `field`, if it occurred.
    pub fn get(&self, field: usize, id: u32) -> Option<&[f64]> {
        let id = id as usize;
        (self.counts[field][id] > 0).then(|| &self.means[field][id * self.dim..(id + 1) * self.dim])
    }

    pub fn count(&self, field: usize, id: u32) -> u64 {
        self.counts[field][id as usize]
    }

    /// Averages already-computed local weights. `local[k]` holds the
    /// flattened `n x m` weights of row `k`.
    pub fn from_local(
        vocab_sizes: &[usize],
        dim: usize,
        rows: &[&[u32]],
        local: &[Vec<f64>],
    ) -> Self {
        let mut acc = Accumulator::new(vocab_sizes, dim);
        for (row, w) in rows.iter().zip(local) {
            acc.add(row, w);
        }
        acc.finish()
    }
}

struct Accumulator {
    dim: usize,
    sums: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
}

impl Accumulator {
    fn new(vocab_sizes: &[usize], dim: usize) -> Self {
        Accumulator {
            dim,
            sums: vocab_sizes.iter().map(|&v| vec![0.0; v * dim]).collect(),
            counts: vocab_sizes.iter().map(|&v| vec![0; v]).collect(),
        }
    }

    fn add(&mut self, row: &[u32], local: &[f64]) {
        let m = self.dim;
        for (f, &id) in row.iter().enumerate() {
            let id = id as usize;
            self.counts[f][id] += 1;
            let sum = &mut self.sums[f][id * m..(id + 1) * m];
            sum.iter_mut()
                .zip(&local[f * m..(f + 1) * m])
                .for_each(|(s, w)| *s += w);
        }
    }

    fn finish(mut self) -> GlobalWeights {
        let m = self.dim;
        for (sums, counts) in self.sums.iter_mut().zip(&self.counts) {
            for (id, &c) in counts.iter().enumerate() {
                if c > 0 {
                    sums[id * m..(id + 1) * m]
                        .iter_mut()
                        .for_each(|s| *s /= c as f64);
                }
            }
        }
        GlobalWeights {
            dim: m,
            means: self.sums,
            counts: self.counts,
        }
    }
}

/// Global weights over `samples`. Local weights are computed in parallel
/// and summed in row order.
pub fn global_weights(
    model: &EmbeddingDnn,
    samples: &EncodedData,
    target: GradientTarget,
) -> Result<GlobalWeights> {
    let mut acc = Accumulator::new(model.vocab_sizes(), model.embedding_dim());
    let rows: Vec<&[u32]> = samples.rows().collect();
    for chunk in rows.chunks(CHUNK) {
        let local = chunk
            .par_iter()
            .map(|row| model.embedding_gradients(row, target))
            .collect::<Result<Vec<_>>>()?;
        for (row, w) in chunk.iter().zip(&local) {
            acc.add(row, w);
        }
    }
    Ok(acc.finish())
}

/// Nonnegative `K x n` matrix of inconsistency values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InconsistencyMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl InconsistencyMatrix {
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "matrix shape mismatch");
        InconsistencyMatrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize, f: usize) -> f64 {
        self.values[k * self.cols + f]
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for row in self.values.chunks_exact(self.cols) {
            means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        means.iter_mut().for_each(|m| *m /= self.rows.max(1) as f64);
        means
    }

    pub fn to_csv(&self, names: &[&str]) -> String {
        matrix_csv(names, self.values.chunks_exact(self.cols), |out, v| {
            let _ = write!(out, "{v:?}");
        })
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (cols, rows, values) = parse_matrix_csv(text, "inconsistency matrix", |s| {
            s.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0)
        })?;
        Ok(InconsistencyMatrix { rows, cols, values })
    }
}

/// Inconsistency of every (sample, field) in `samples`, with global weights
/// taken over the same samples.
pub fn inconsistency_matrix(
    model: &EmbeddingDnn,
    samples: &EncodedData,
    target: GradientTarget,
    norm: DeviationNorm,
) -> Result<InconsistencyMatrix> {
    let global = global_weights(model, samples, target)?;
    let m = model.embedding_dim();
    let rows: Vec<&[u32]> = samples.rows().collect();
    let values = rows
        .par_iter()
        .map(|row| {
            let local = model.embedding_gradients(row, target)?;
            Ok(row
                .iter()
                .enumerate()
                .map(|(f, &id)| {
                    let w_bar = global.get(f, id).expect("value counted in pass one");
                    inconsistency_value(
                        &local[f * m..(f + 1) * m],
                        w_bar,
                        model.embedding(f, id),
                        norm,
                    )
                })
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok(InconsistencyMatrix::from_values(
        samples.len(),
        model.n_fields(),
        values,
    ))
}

/// Binary mask of the largest inconsistency values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleMatrix {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
    eta: f64,
}

impl FeasibleMatrix {
    pub fn from_mask(rows: usize, cols: usize, mask: Vec<bool>, eta: f64) -> Self {
        assert_eq!(mask.len(), rows * cols, "mask shape mismatch");
        FeasibleMatrix {
            rows,
            cols,
            mask,
            eta,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn get(&self, k: usize, f: usize) -> bool {
        self.mask[k * self.cols + f]
    }

    pub fn count_ones(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn to_csv(&self, names: &[&str]) -> String {
        matrix_csv(names, self.mask.chunks_exact(self.cols), |out, &b| {
            out.push(if b { '1' } else { '0' })
        })
    }

    pub fn from_csv(text: &str, eta: f64) -> Result<Self> {
        let (cols, rows, mask) = parse_matrix_csv(text, "feasible matrix", |s| match s {
            "0" => Some(false),
            "1" => Some(true),
            _ => None,
        })?;
        Ok(FeasibleMatrix {
            rows,
            cols,
            mask,
            eta,
        })
    }
}

/// Number of entries the filter keeps before ties: `ceil(eta * total)`,
/// at least one.
pub fn kept_count(total: usize, eta: f64) -> usize {
    // guard against 0.05 * 100 landing a hair above 5
    let raw = eta * total as f64;
    ((raw - raw * 1e-12).ceil() as usize).clamp(1, total.max(1))
}

/// Marks `D[k,f] >= cut`, where `cut` is the `ceil(eta * K * n)`-th largest
/// entry. Every entry tied with the cut is kept.
pub fn feasible_matrix(d: &InconsistencyMatrix, eta: f64) -> Result<FeasibleMatrix> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Config(format!("eta {eta} outside (0, 1)")));
    }
    if d.values.is_empty() {
        return Ok(FeasibleMatrix::from_mask(d.rows, d.cols, Vec::new(), eta));
    }
    let keep = kept_count(d.values.len(), eta);
    let mut sorted = d.values.clone();
    // descending; select the keep-th largest
    let (_, cut, _) = sorted.select_nth_unstable_by(keep - 1, |a, b| b.total_cmp(a));
    let cut = *cut;
    let mask = d.values.iter().map(|&v| v >= cut).collect();
    Ok(FeasibleMatrix::from_mask(d.rows, d.cols, mask, eta))
}

fn matrix_csv<'a, T: 'a>(
    names: &[&str],
    rows: impl Iterator<Item = &'a [T]>,
    mut cell: impl FnMut(&mut String, &T),
) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            cell(&mut out, v);
        }
        out.push('\n');
    }
    out
}

fn parse_matrix_csv<T>(
    text: &str,
    what: &'static str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<(usize, usize, Vec<T>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(what, "empty file"))?;
    let cols = header.split(',').count();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let before = values.len();
        for cell in line.split(',') {
            values.push(parse(cell).ok_or_else(|| {
                Error::format(what, format!("line {}: bad cell {cell:?}", i + 2))
            })?);
        }
        if values.len() - before != cols {
            return Err(Error::format(
                what,
                format!("line {}: expected {cols} cells", i + 2),
            ));
        }
        rows += 1;
    }
    Ok((cols, rows, values))
}
