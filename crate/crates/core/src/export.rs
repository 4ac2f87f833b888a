//! Human-readable logistic regression model.
//!
//! The exported file is self-contained: it names every field, carries the
//! bin edges of numerical fields, and keys weights by raw (or binned)
//! values, so it can score a raw CSV without any other artifact.
//!
//! ```text
//! dnn2lr-lr-model  1
//! label  <label column>
//! field  <index>  <name>  categorical
//! field  <index>  <name>  numerical  <granularity>  <cut,cut,...>
//! bias  <weight>
//! weight  <field index>  <value>  <weight>
//! cross  <cross index>  <field,field,...>
//! crossweight  <cross index>  <value|value|...>  <weight>
//! ```
//!
//! Columns are tab-separated.
//!
//! Values are escaped (`\\`, `\t`, `\n`, `\r`, `\p` for `|`, `\c` for `,`)
//! and `\N` stands for a missing cell. Weights use the shortest decimal
//! representation that round-trips exactly.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::candidates::CrossField;
use crate::cross_lr::SparseLrModel;
use crate::data::{
    escape, escape_cell, unescape, unescape_cell, FieldKind, FieldSchema, RawTable, Vocabulary,
    MISSING_ID,
};
use crate::discretize::{parse_edges, parse_number, BinEdges, Discretizer};
use crate::search::LogitColumns;
use crate::{metrics, sigmoid, Error, Result};

const HEADER: &str = "dnn2lr-lr-model\t1";

type Value = Option<String>;
type CrossEntries = Vec<(Vec<Value>, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct ExportField {
    pub name: String,
    pub kind: FieldKind,
    pub edges: Option<BinEdges>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportCross {
    pub field: CrossField,
    /// Entries in write order.
    pub entries: Vec<(Vec<Value>, f64)>,
    lookup: HashMap<Vec<Value>, f64>,
}

impl ExportCross {
    fn new(field: CrossField, entries: Vec<(Vec<Value>, f64)>) -> Self {
        let lookup = entries.iter().cloned().collect();
        ExportCross {
            field,
            entries,
            lookup,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteBoxModel {
    pub label: String,
    pub fields: Vec<ExportField>,
    pub bias: f64,
    /// Per field, entries in write order.
    pub weights: Vec<Vec<(Value, f64)>>,
    lookup: Vec<HashMap<Value, f64>>,
    pub crosses: Vec<ExportCross>,
}

impl WhiteBoxModel {
    /// Converts an id-keyed model back to raw values. The unseen id carries
    /// no value and is omitted; it scores zero on load like any unknown
    /// value.
    pub fn from_sparse(
        model: &SparseLrModel,
        schema: &FieldSchema,
        vocab: &Vocabulary,
        discretizer: &Discretizer,
    ) -> Self {
        let value = |f: usize, id: u32| -> Option<Value> {
            if id == MISSING_ID {
                Some(None)
            } else {
                vocab.decode(f, id).map(|v| Some(v.to_string()))
            }
        };
        let fields = schema
            .fields()
            .iter()
            .map(|f| ExportField {
                name: f.name.clone(),
                kind: f.kind,
                edges: discretizer.for_field(f.index).cloned(),
            })
            .collect();
        let weights: Vec<Vec<(Value, f64)>> = (0..model.n_fields())
            .map(|f| {
                model
                    .field_weights(f)
                    .iter()
                    .enumerate()
                    .filter_map(|(id, &w)| value(f, id as u32).map(|v| (v, w)))
                    .collect()
            })
            .collect();
        let crosses = model
            .crosses()
            .iter()
            .map(|table| {
                let mut entries: Vec<(Vec<u32>, f64)> =
                    table.entries().map(|(k, w)| (k.to_vec(), w)).collect();
                entries.sort_by(|a, b| a.0.cmp(&b.0));
                let entries = entries
                    .into_iter()
                    .filter_map(|(ids, w)| {
                        let values = table
                            .field()
                            .fields()
                            .iter()
                            .zip(&ids)
                            .map(|(&f, &id)| value(f, id))
                            .collect::<Option<Vec<Value>>>()?;
                        Some((values, w))
                    })
                    .collect();
                ExportCross::new(table.field().clone(), entries)
            })
            .collect();
        Self::assemble(
            schema.label().to_string(),
            fields,
            model.bias(),
            weights,
            crosses,
        )
    }

    fn assemble(
        label: String,
        fields: Vec<ExportField>,
        bias: f64,
        weights: Vec<Vec<(Value, f64)>>,
        crosses: Vec<ExportCross>,
    ) -> Self {
        let lookup = weights
            .iter()
            .map(|w| w.iter().cloned().collect())
            .collect();
        WhiteBoxModel {
            label,
            fields,
            bias,
            weights,
            lookup,
            crosses,
        }
    }

    pub fn schema(&self) -> Result<FieldSchema> {
        FieldSchema::new(
            self.fields
                .iter()
                .map(|f| (f.name.clone(), f.kind))
                .collect(),
            self.label.clone(),
        )
    }

    /// Copy keeping only the cross fields at `indices`, in that order.
    pub fn with_crosses(&self, indices: &[usize]) -> WhiteBoxModel {
        WhiteBoxModel {
            crosses: indices.iter().map(|&i| self.crosses[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// Raw row with numerical cells replaced by their bin labels.
    fn binned(&self, row: &[Value]) -> Result<Vec<Value>> {
        row.iter()
            .zip(&self.fields)
            .map(|(cell, field)| match &field.edges {
                None => Ok(cell.clone()),
                Some(edges) => parse_number(cell.as_deref())
                    .map(|v| edges.apply(v))
                    .map_err(|m| Error::Encoding(format!("field {:?}: {m}", field.name))),
            })
            .collect()
    }

    fn base_from_binned(&self, row: &[Value]) -> f64 {
        let mut logit = 0.0;
        for (lookup, cell) in self.lookup.iter().zip(row) {
            logit += lookup.get(cell).copied().unwrap_or(0.0);
        }
        logit + self.bias
    }

    fn cross_from_binned(&self, cross: &ExportCross, row: &[Value]) -> f64 {
        let key: Vec<Value> = cross
            .field
            .fields()
            .iter()
            .map(|&f| row[f].clone())
            .collect();
        cross.lookup.get(&key).copied().unwrap_or(0.0)
    }

    /// Logit of a raw row: original weights in field order, then bias, then
    /// cross weights in model order.
    pub fn logit(&self, row: &[Value]) -> Result<f64> {
        let row = self.binned(row)?;
        let mut logit = self.base_from_binned(&row);
        for cross in &self.crosses {
            logit += self.cross_from_binned(cross, &row);
        }
        Ok(logit)
    }

    pub fn predict(&self, row: &[Value]) -> Result<f64> {
        self.logit(row).map(sigmoid)
    }

    /// Base logits and one column per cross field over `table`.
    pub fn logit_columns(&self, table: &RawTable) -> Result<LogitColumns> {
        let binned = table
            .rows
            .iter()
            .map(|r| self.binned(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(LogitColumns {
            base: binned.iter().map(|r| self.base_from_binned(r)).collect(),
            columns: self
                .crosses
                .iter()
                .map(|c| {
                    binned
                        .iter()
                        .map(|r| self.cross_from_binned(c, r))
                        .collect()
                })
                .collect(),
            labels: table.labels.clone(),
        })
    }

    /// AUC and KS on `table`.
    pub fn evaluate(&self, table: &RawTable) -> Result<(f64, f64)> {
        let scores = table
            .rows
            .iter()
            .map(|r| self.predict(r))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            metrics::auc(&table.labels, &scores)?,
            metrics::ks(&table.labels, &scores)?,
        ))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "label\t{}", escape(&self.label));
        for (i, f) in self.fields.iter().enumerate() {
            match (&f.kind, &f.edges) {
                (FieldKind::Numerical, Some(e)) => {
                    let cuts: Vec<String> = e.cuts().iter().map(|c| format!("{c:?}")).collect();
                    let _ = writeln!(
                        out,
                        "field\t{i}\t{}\tnumerical\t{}\t{}",
                        escape(&f.name),
                        e.granularity,
                        cuts.join(",")
                    );
                }
                (FieldKind::Numerical, None) => {
                    let _ = writeln!(out, "field\t{i}\t{}\tnumerical", escape(&f.name));
                }
                (FieldKind::Categorical, _) => {
                    let _ = writeln!(out, "field\t{i}\t{}\tcategorical", escape(&f.name));
                }
            }
        }
        let _ = writeln!(out, "bias\t{:?}", self.bias);
        for (f, entries) in self.weights.iter().enumerate() {
            for (value, w) in entries {
                let _ = writeln!(out, "weight\t{f}\t{}\t{w:?}", escape_cell(value.as_deref()));
            }
        }
        for (c, cross) in self.crosses.iter().enumerate() {
            let _ = writeln!(out, "cross\t{c}\t{}", cross.field);
            for (values, w) in &cross.entries {
                let key: Vec<String> = values.iter().map(|v| escape_cell(v.as_deref())).collect();
                let _ = writeln!(out, "crossweight\t{c}\t{}\t{w:?}", key.join("|"));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => return Err(Error::format("lr model", "missing header line")),
        }
        let mut label = None;
        let mut fields: Vec<ExportField> = Vec::new();
        let mut bias = None;
        let mut weights: Vec<Vec<(Value, f64)>> = Vec::new();
        let mut crosses: Vec<(CrossField, CrossEntries)> = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::format("lr model", format!("line {}: {m}", i + 1));
            let parts: Vec<&str> = line.split('\t').collect();
            let weight = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|w| w.is_finite())
                    .ok_or_else(|| bad("bad weight"))
            };
            let index = |s: &str, len: usize| {
                s.parse::<usize>()
                    .ok()
                    .filter(|&i| i < len)
                    .ok_or_else(|| bad("bad index"))
            };
            match parts.as_slice() {
                ["label", name] => label = Some(unescape(name).map_err(|m| bad(&m))?),
                ["field", idx, name, rest @ ..] => {
                    if index(idx, fields.len() + 1)? != fields.len() {
                        return Err(bad("fields out of order"));
                    }
                    let name = unescape(name).map_err(|m| bad(&m))?;
                    let (kind, edges) = match rest {
                        ["categorical"] => (FieldKind::Categorical, None),
                        ["numerical"] => (FieldKind::Numerical, None),
                        ["numerical", g, cuts] => {
                            let e = parse_edges(fields.len(), g, cuts)
                                .ok_or_else(|| bad("bad edges"))?;
                            (FieldKind::Numerical, Some(e))
                        }
                        _ => return Err(bad("bad field line")),
                    };
                    fields.push(ExportField { name, kind, edges });
                    weights.push(Vec::new());
                }
                ["bias", w] => bias = Some(weight(w)?),
                ["weight", f, value, w] => {
                    let f = index(f, fields.len())?;
                    let value = unescape_cell(value).map_err(|m| bad(&m))?;
                    weights[f].push((value, weight(w)?));
                }
                ["cross", c, spec] => {
                    if index(c, crosses.len() + 1)? != crosses.len() {
                        return Err(bad("crosses out of order"));
                    }
                    let field: CrossField = spec.parse().map_err(|_| bad("bad cross field"))?;
                    if field.fields().iter().any(|&f| f >= fields.len()) {
                        return Err(bad("cross field refers to an unknown field"));
                    }
                    crosses.push((field, Vec::new()));
                }
                ["crossweight", c, key, w] => {
                    let c = index(c, crosses.len())?;
                    let values = key
                        .split('|')
                        .map(unescape_cell)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|m| bad(&m))?;
                    if values.len() != crosses[c].0.order() {
                        return Err(bad("cross key has the wrong arity"));
                    }
                    crosses[c].1.push((values, weight(w)?));
                }
                _ => return Err(bad("unrecognized line")),
            }
        }
        let label = label.ok_or_else(|| Error::format("lr model", "no label line"))?;
        let bias = bias.ok_or_else(|| Error::format("lr model", "no bias line"))?;
        let crosses = crosses
            .into_iter()
            .map(|(f, e)| ExportCross::new(f, e))
            .collect();
        let model = Self::assemble(label, fields, bias, weights, crosses);
        model.schema()?;
        Ok(model)
    }
}
