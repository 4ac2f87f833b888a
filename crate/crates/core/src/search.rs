//! Forward selection of cross fields by validation AUC.
//!
//! Every candidate's contribution to each validation logit is precomputed
//! once. Selection then only adds columns to a running logit vector, so a
//! candidate's effect is measured without retraining.

use rayon::prelude::*;

use crate::cross_lr::SparseLrModel;
use crate::data::EncodedData;
use crate::{metrics, sigmoid, Result};

/// Per-sample logit pieces on the validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitColumns {
    /// Original weights plus bias.
    pub base: Vec<f64>,
    /// `columns[j][k]`: weight of candidate `j`'s key in sample `k`.
    pub columns: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl LogitColumns {
    pub fn n_candidates(&self) -> usize {
        self.columns.len()
    }
}

/// Splits the phase-two model's logit on `valid` into the base part and
/// one column per cross field.
pub fn precompute_logit_columns(model: &SparseLrModel, valid: &EncodedData) -> LogitColumns {
    let rows: Vec<&[u32]> = valid.rows().collect();
    LogitColumns {
        base: rows.iter().map(|row| model.base_logit(row)).collect(),
        columns: model
            .crosses()
            .par_iter()
            .map(|table| rows.iter().map(|row| table.lookup(row)).collect())
            .collect(),
        labels: valid.labels.clone(),
    }
}

fn logit_auc(labels: &[u8], logits: &[f64]) -> Result<f64> {
    let probabilities: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    metrics::auc(labels, &probabilities)
}

fn added(logit: &[f64], column: &[f64]) -> Vec<f64> {
    logit.iter().zip(column).map(|(a, b)| a + b).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchStep {
    pub candidate: usize,
    pub auc_before: f64,
    pub auc_after: f64,
}

/// Running state of a selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    /// Selected candidate indices, in selection order.
    pub selected: Vec<usize>,
    pub logit: Vec<f64>,
    pub auc: f64,
    pub steps: Vec<SearchStep>,
}

impl SearchState {
    pub fn initial(columns: &LogitColumns) -> Result<Self> {
        Ok(SearchState {
            selected: Vec::new(),
            auc: logit_auc(&columns.labels, &columns.base)?,
            logit: columns.base.clone(),
            steps: Vec::new(),
        })
    }

    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    fn sorted(&self) -> Vec<usize> {
        let mut s = self.selected.clone();
        s.sort_unstable();
        s
    }

    fn extend(&self, columns: &LogitColumns, candidate: usize, auc: f64) -> SearchState {
        let mut next = SearchState {
            selected: self.selected.clone(),
            logit: added(&self.logit, &columns.columns[candidate]),
            auc,
            steps: self.steps.clone(),
        };
        next.selected.push(candidate);
        next.steps.push(SearchStep {
            candidate,
            auc_before: self.auc,
            auc_after: auc,
        });
        next
    }

    /// AUC of the running logit plus each unselected column, in index order.
    fn evaluate(&self, columns: &LogitColumns) -> Result<Vec<(usize, f64)>> {
        (0..columns.n_candidates())
            .into_par_iter()
            .filter(|j| !self.selected.contains(j))
            .map(|j| {
                Ok((
                    j,
                    logit_auc(&columns.labels, &added(&self.logit, &columns.columns[j]))?,
                ))
            })
            .collect()
    }
}

/// Greedy forward selection: each round adds the candidate with the
/// highest AUC (lowest index on ties) if it strictly beats the current AUC.
pub fn greedy_select(columns: &LogitColumns, max_selected: usize) -> Result<SearchState> {
    let mut state = SearchState::initial(columns)?;
    while state.selected.len() < max_selected.min(columns.n_candidates()) {
        let mut best: Option<(usize, f64)> = None;
        for (j, auc) in state.evaluate(columns)? {
            if best.is_none_or(|(_, b)| auc > b) {
                best = Some((j, auc));
            }
        }
        match best {
            Some((j, auc)) if auc > state.auc => state = state.extend(columns, j, auc),
            _ => break,
        }
    }
    Ok(state)
}

/// Beam search keeping the `width` best sets per round. A set is expanded
/// only by candidates that strictly improve its AUC; sets with no such
/// candidate are terminal. Returns the best terminal set, preferring higher
/// AUC, then fewer fields, then the lexicographically smaller index set.
pub fn beam_select(
    columns: &LogitColumns,
    width: usize,
    max_selected: usize,
) -> Result<SearchState> {
    assert!(width >= 1, "beam width must be positive");
    let limit = max_selected.min(columns.n_candidates());
    let mut beam = vec![SearchState::initial(columns)?];
    let mut terminal: Vec<SearchState> = Vec::new();
    while !beam.is_empty() {
        // (parent, candidate, auc, resulting sorted set)
        let mut children: Vec<(usize, usize, f64, Vec<usize>)> = Vec::new();
        for (p, state) in beam.iter().enumerate() {
            let improving: Vec<(usize, f64)> = if state.selected.len() >= limit {
                Vec::new()
            } else {
                state
                    .evaluate(columns)?
                    .into_iter()
                    .filter(|&(_, auc)| auc > state.auc)
                    .collect()
            };
            if improving.is_empty() {
                terminal.push(state.clone());
                continue;
            }
            let base = state.sorted();
            for (j, auc) in improving {
                let mut set = base.clone();
                set.insert(set.partition_point(|&x| x < j), j);
                children.push((p, j, auc, set));
            }
        }
        children.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.3.cmp(&b.3)));
        let mut kept: Vec<Vec<usize>> = Vec::new();
        let mut next = Vec::with_capacity(width);
        for (p, j, auc, set) in children {
            if next.len() == width {
                break;
            }
            if kept.contains(&set) {
                continue;
            }
            kept.push(set);
            next.push(beam[p].extend(columns, j, auc));
        }
        beam = next;
    }
    terminal.sort_by(|a, b| {
        b.auc
            .total_cmp(&a.auc)
            .then(a.selected.len().cmp(&b.selected.len()))
            .then_with(|| a.sorted().cmp(&b.sorted()))
    });
    Ok(terminal.swap_remove(0))
}

/// Dispatches to greedy search for width 1 and beam search otherwise.
pub fn select(
    columns: &LogitColumns,
    beam_width: usize,
    max_selected: usize,
) -> Result<SearchState> {
    if beam_width <= 1 {
        greedy_select(columns, max_selected)
    } else {
        beam_select(columns, beam_width, max_selected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::CrossField;
    use crate::cross_lr::CrossTable;
    use crate::rng;
    use rand::Rng;

    fn cols(base: Vec<f64>, columns: Vec<Vec<f64>>, labels: Vec<u8>) -> LogitColumns {
        LogitColumns {
            base,
            columns,
            labels,
        }
    }

    #[test]
    fn zero_columns_select_nothing() {
        let c = cols(
            vec![0.1, 0.4, 0.2, 0.3],
            vec![vec![0.0; 4]; 3],
            vec![0, 1, 1, 0],
        );
        assert!(greedy_select(&c, 10).unwrap().selected.is_empty());
        assert!(beam_select(&c, 3, 10).unwrap().selected.is_empty());
    }

    #[test]
    fn corrective_column_is_picked_first() {
        let base = vec![0.5, -0.5, 0.2, -0.2];
        let labels = vec![0, 1, 1, 0];
        let corrective = vec![-2.0, 2.0, 1.0, -1.0];
        let c = cols(
            base,
            vec![vec![0.1, 0.0, 0.0, 0.0], corrective, vec![0.0; 4]],
            labels,
        );
        let state = greedy_select(&c, 10).unwrap();
        assert_eq!(state.selected, vec![1]);
        assert_eq!(state.auc, 1.0);
        assert_eq!(state.steps[0].candidate, 1);
    }

    #[test]
    fn respects_max_selected() {
        let mut rng = rng::stream(1, 1);
        let labels: Vec<u8> = (0..40).map(|k| (k % 2) as u8).collect();
        let columns: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                labels
                    .iter()
                    .map(|&l| l as f64 * rng.random::<f64>())
                    .collect()
            })
            .collect();
        let c = cols(vec![0.0; 40], columns, labels);
        assert!(greedy_select(&c, 1).unwrap().selected.len() <= 1);
        assert!(beam_select(&c, 3, 2).unwrap().selected.len() <= 2);
    }

    #[test]
    fn beam_escapes_greedy_trap() {
        // one column fixes half of the errors at once; two other columns
        // each fix less alone but together fix everything
        let labels = vec![1, 1, 1, 1, 0, 0, 0, 0];
        let base = vec![-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
        let greedy_bait = vec![3.0, 3.0, 0.0, 0.0, -3.0, -3.0, 0.0, 0.0];
        let a = vec![3.0, 0.0, 3.0, 0.0, -3.0, 0.0, -3.0, 0.0];
        let b = vec![0.0, 3.0, 0.0, 3.0, 0.0, -3.0, 0.0, -3.0];
        let c = cols(base, vec![greedy_bait, a, b], labels);
        let greedy = greedy_select(&c, 10).unwrap();
        let beam = beam_select(&c, 3, 10).unwrap();
        assert!(beam.auc >= greedy.auc);
        assert_eq!(beam.auc, 1.0);
        assert_eq!(greedy.selected, vec![0, 1, 2]);
        assert_eq!(beam.selected, vec![1, 2]);
        assert_eq!(beam_select(&c, 1, 10).unwrap(), greedy);
    }

    #[test]
    fn incremental_logit_matches_model() {
        let mut rng = rng::stream(3, 3);
        let data = crate::dnn::random_rows(&[5, 5, 5], 60, &mut rng);
        let data = EncodedData {
            labels: (0..60).map(|_| rng.random_range(0..2u8)).collect(),
            ..data
        };
        let mut model = SparseLrModel::new(&[5, 5, 5]);
        for f in 0..3 {
            model
                .field_weights_mut(f)
                .iter_mut()
                .for_each(|w| *w = rng.random::<f64>() - 0.5);
        }
        model.set_bias(0.3);
        for fields in [[0, 1], [1, 2], [0, 2]] {
            let mut table = CrossTable::from_data(CrossField::new(fields.to_vec()).unwrap(), &data);
            let keys: Vec<Vec<u32>> = table.entries().map(|(k, _)| k.to_vec()).collect();
            for key in keys {
                table.insert(key, rng.random::<f64>() * 2.0 - 1.0);
            }
            model.push_cross(table);
        }
        let columns = precompute_logit_columns(&model, &data);
        for (k, row) in data.rows().enumerate() {
            assert_eq!(columns.base[k], model.base_logit(row));
            for j in 0..3 {
                assert_eq!(columns.columns[j][k], model.crosses()[j].lookup(row));
            }
        }
        let state = greedy_select(&columns, 10).unwrap();
        let final_model = model.with_crosses(&state.selected);
        for (k, row) in data.rows().enumerate() {
            assert_eq!(state.logit[k].to_bits(), final_model.logit(row).to_bits());
        }
    }
}
