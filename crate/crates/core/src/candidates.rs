//! Candidate cross fields from co-occurring feasible features.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;

use crate::inconsistency::{FeasibleMatrix, InconsistencyMatrix};
use crate::{Error, Result};

pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 4;
/// Per-sample cap on feasible fields entering enumeration.
pub const DEFAULT_FEASIBLE_CAP: usize = 20;

/// Strictly ascending tuple of 2 to 4 distinct field indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CrossField(Vec<usize>);

impl CrossField {
    /// Canonicalizes `fields` by sorting. Rejects repeats and orders
    /// outside 2..=4.
    pub fn new(mut fields: Vec<usize>) -> Result<Self> {
        fields.sort_unstable();
        if fields.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "cross field {fields:?} repeats a field"
            )));
        }
        if !(MIN_ORDER..=MAX_ORDER).contains(&fields.len()) {
            return Err(Error::Config(format!(
                "cross field {fields:?} has order {}, expected 2..=4",
                fields.len()
            )));
        }
        Ok(CrossField(fields))
    }

    pub fn fields(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for CrossField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, field) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{field}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for CrossField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::format("cross field", format!("{s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        CrossField::new(fields)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub field: CrossField,
    pub count: u64,
}

/// Feasible fields of one sample, keeping the `cap` with largest
/// inconsistency (ties to the lower field index), returned ascending.
fn feasible_fields(
    feasible: &FeasibleMatrix,
    values: Option<&InconsistencyMatrix>,
    k: usize,
    cap: usize,
) -> Vec<usize> {
    let mut fields: Vec<usize> = (0..feasible.cols())
        .filter(|&f| feasible.get(k, f))
        .collect();
    if fields.len() > cap {
        if let Some(d) = values {
            fields.sort_by(|&a, &b| d.get(k, b).total_cmp(&d.get(k, a)).then(a.cmp(&b)));
        }
        fields.truncate(cap);
        fields.sort_unstable();
    }
    fields
}

fn for_each_subset(fields: &[usize], order: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(
        fields: &[usize],
        start: usize,
        order: usize,
        buf: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if buf.len() == order {
            visit(buf);
            return;
        }
        let need = order - buf.len();
        for i in start..fields.len() {
            if fields.len() - i < need {
                break;
            }
            buf.push(fields[i]);
            rec(fields, i + 1, order, buf, visit);
            buf.pop();
        }
    }
    let mut buf = Vec::with_capacity(order);
    rec(fields, 0, order, &mut buf, &mut visit);
}

/// Counts every order-2..4 subset of each sample's feasible fields.
///
/// `values` supplies the inconsistency used to cap samples with more than
/// `cap` feasible fields; without it the lowest field indices are kept.
pub fn enumerate_candidates(
    feasible: &FeasibleMatrix,
    values: Option<&InconsistencyMatrix>,
    cap: usize,
) -> HashMap<CrossField, u64> {
    (0..feasible.rows())
        .into_par_iter()
        .fold(HashMap::new, |mut counts: HashMap<CrossField, u64>, k| {
            let fields = feasible_fields(feasible, values, k, cap);
            for order in MIN_ORDER..=MAX_ORDER {
                for_each_subset(&fields, order, |subset| {
                    *counts.entry(CrossField(subset.to_vec())).or_insert(0) += 1;
                });
            }
            counts
        })
        .reduce(HashMap::new, |mut a, b| {
            for (field, count) in b {
                *a.entry(field).or_insert(0) += count;
            }
            a
        })
}

/// Ranks by count (descending), then order, then field tuple, and keeps the
/// first `epsilon`.
pub fn top_epsilon(counts: &HashMap<CrossField, u64>, epsilon: usize) -> Vec<Candidate> {
    let mut ranked: Vec<Candidate> = counts
        .iter()
        .map(|(field, &count)| Candidate {
            field: field.clone(),
            count,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.field.order().cmp(&b.field.order()))
            .then(a.field.cmp(&b.field))
    });
    if ranked.len() < epsilon {
        log::warn!(
            "only {} candidate cross fields exist, fewer than epsilon = {epsilon}",
            ranked.len()
        );
    }
    ranked.truncate(epsilon);
    ranked
}

/// Number of order-`order` cross fields over `n` fields.
pub fn candidate_space_size(n: u64, order: u64) -> u64 {
    num_integer::binomial(n, order)
}

/// `f_i,f_j[,...]<TAB>count` per line.
pub fn to_text(candidates: &[Candidate]) -> String {
    candidates
        .iter()
        .map(|c| format!("{}\t{}\n", c.field, c.count))
        .collect()
}

pub fn from_text(text: &str) -> Result<Vec<Candidate>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let (field, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::format("candidate list", line.to_string()))?;
            Ok(Candidate {
                field: field.parse()?,
                count: count
                    .parse()
                    .map_err(|_| Error::format("candidate list", line.to_string()))?,
            })
        })
        .collect()
}
