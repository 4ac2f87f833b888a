//! Dataset ingestion: schema, raw CSV tables, vocabularies and splits.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{self, salt};
use crate::{Error, Result};

/// Feature id reserved for a missing cell.
pub const MISSING_ID: u32 = 0;
/// Feature id reserved for a value never seen during training.
pub const UNSEEN_ID: u32 = 1;
/// First id handed out to a real value.
pub const FIRST_VALUE_ID: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub index: usize,
    pub kind: FieldKind,
}

/// Ordered feature fields plus the binary label column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSchema {
    fields: Vec<Field>,
    label: String,
}

impl FieldSchema {
    pub fn new(fields: Vec<(String, FieldKind)>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let mut seen = HashSet::new();
        for (name, _) in &fields {
            if name == &label {
                return Err(Error::Config(format!(
                    "label column {label:?} is also declared as a field"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("field {name:?} declared twice")));
            }
        }
        if fields.is_empty() {
            return Err(Error::Config("schema declares no fields".into()));
        }
        let fields = fields
            .into_iter()
            .enumerate()
            .map(|(index, (name, kind))| Field { name, index, kind })
            .collect();
        Ok(FieldSchema { fields, label })
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }
}

/// Raw cells as read from CSV. `None` is the missing marker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTable {
    pub rows: Vec<Vec<Option<String>>>,
    pub labels: Vec<u8>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> RawTable {
        RawTable {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn parse_label(raw: &str, line: u64) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Label {
            line,
            value: other.to_string(),
        }),
    }
}

/// Reads a headed CSV file. Columns are matched to schema fields by name;
/// the header must contain every field and the label and nothing else.
pub fn load_csv(path: &Path, schema: &FieldSchema) -> Result<RawTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &FieldSchema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => {
            return Err(Error::Ingest {
                line: 1,
                message: "missing header row".into(),
            })
        }
    };

    // column position -> Some(field index) or None for the label
    let mut columns: Vec<Option<usize>> = Vec::with_capacity(header.len());
    let mut label_seen = false;
    let mut fields_seen = vec![false; schema.len()];
    for name in header.iter() {
        let name = name.trim();
        if name == schema.label() {
            if label_seen {
                return Err(Error::Ingest {
                    line: 1,
                    message: format!("label column {name:?} repeated"),
                });
            }
            label_seen = true;
            columns.push(None);
        } else if let Some(idx) = schema.field_index(name) {
            if fields_seen[idx] {
                return Err(Error::Ingest {
                    line: 1,
                    message: format!("column {name:?} repeated"),
                });
            }
            fields_seen[idx] = true;
            columns.push(Some(idx));
        } else {
            return Err(Error::Ingest {
                line: 1,
                message: format!("column {name:?} is not in the schema"),
            });
        }
    }
    if !label_seen {
        return Err(Error::Ingest {
            line: 1,
            message: format!("label column {:?} not found", schema.label()),
        });
    }
    if let Some(missing) = fields_seen.iter().position(|seen| !seen) {
        return Err(Error::Ingest {
            line: 1,
            message: format!(
                "field {:?} not found in header",
                schema.fields()[missing].name
            ),
        });
    }

    let mut table = RawTable::default();
    for record in records {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != columns.len() {
            return Err(Error::Ingest {
                line,
                message: format!("expected {} cells, found {}", columns.len(), record.len()),
            });
        }
        let mut row = vec![None; schema.len()];
        let mut label = 0;
        for (cell, column) in record.iter().zip(&columns) {
            match column {
                None => label = parse_label(cell, line)?,
                Some(idx) => {
                    row[*idx] = if cell.is_empty() {
                        None
                    } else {
                        Some(cell.to_string())
                    }
                }
            }
        }
        table.rows.push(row);
        table.labels.push(label);
    }
    Ok(table)
}

/// Writes `table` with fields in schema order and the label last.
pub fn write_csv(path: &Path, schema: &FieldSchema, table: &RawTable) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = schema.fields().iter().map(|f| f.name.as_str()).collect();
    header.push(schema.label());
    writer.write_record(&header)?;
    for (row, label) in table.rows.iter().zip(&table.labels) {
        let label = label.to_string();
        let cells = row
            .iter()
            .map(|c| c.as_deref().unwrap_or(""))
            .chain(std::iter::once(label.as_str()));
        writer.write_record(cells)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-field dictionary from raw value to dense feature id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    /// `values[f][id - FIRST_VALUE_ID]` is the raw value of `id`.
    values: Vec<Vec<String>>,
    ids: Vec<HashMap<String, u32>>,
}

impl Vocabulary {
    /// Assigns ids in first-seen order over `rows`. Cells must already be
    /// discretized.
    pub fn build(rows: &[Vec<Option<String>>], n_fields: usize) -> Self {
        let mut vocab = Vocabulary {
            values: vec![Vec::new(); n_fields],
            ids: vec![HashMap::new(); n_fields],
        };
        for row in rows {
            for (f, cell) in row.iter().enumerate() {
                if let Some(value) = cell {
                    vocab.insert(f, value);
                }
            }
        }
        vocab
    }

    fn insert(&mut self, field: usize, value: &str) -> u32 {
        if let Some(&id) = self.ids[field].get(value) {
            return id;
        }
        let id = FIRST_VALUE_ID + self.values[field].len() as u32;
        self.values[field].push(value.to_string());
        self.ids[field].insert(value.to_string(), id);
        id
    }

    pub fn n_fields(&self) -> usize {
        self.values.len()
    }

    /// Number of ids in `field`, reserved ids included.
    pub fn size(&self, field: usize) -> usize {
        self.values[field].len() + FIRST_VALUE_ID as usize
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.n_fields()).map(|f| self.size(f)).collect()
    }

    pub fn encode(&self, field: usize, value: Option<&str>) -> u32 {
        match value {
            None => MISSING_ID,
            Some(v) => self.ids[field].get(v).copied().unwrap_or(UNSEEN_ID),
        }
    }

    /// Raw value of a real id; `None` for the reserved ids.
    pub fn decode(&self, field: usize, id: u32) -> Option<&str> {
        id.checked_sub(FIRST_VALUE_ID)
            .and_then(|i| self.values[field].get(i as usize))
            .map(String::as_str)
    }

    pub fn encode_table(&self, table: &RawTable) -> EncodedData {
        let n = self.n_fields();
        let mut ids = Vec::with_capacity(table.len() * n);
        for row in &table.rows {
            assert_eq!(row.len(), n, "row width does not match vocabulary");
            ids.extend(
                row.iter()
                    .enumerate()
                    .map(|(f, c)| self.encode(f, c.as_deref())),
            );
        }
        EncodedData {
            n_fields: n,
            ids,
            labels: table.labels.clone(),
        }
    }

    /// `field<TAB>value<TAB>id` per real id, fields in schema order.
    pub fn to_text(&self, schema: &FieldSchema) -> String {
        let mut out = String::new();
        for field in schema.fields() {
            for (i, value) in self.values[field.index].iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}",
                    escape(&field.name),
                    escape(value),
                    FIRST_VALUE_ID as usize + i
                );
            }
        }
        out
    }

    pub fn from_text(text: &str, schema: &FieldSchema) -> Result<Self> {
        let mut vocab = Vocabulary {
            values: vec![Vec::new(); schema.len()],
            ids: vec![HashMap::new(); schema.len()],
        };
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = |m: &str| Error::format("vocabulary", format!("line {}: {m}", lineno + 1));
            if parts.len() != 3 {
                return Err(bad("expected 3 tab-separated columns"));
            }
            let name = unescape(parts[0]).map_err(|m| bad(&m))?;
            let value = unescape(parts[1]).map_err(|m| bad(&m))?;
            let field = schema
                .field_index(&name)
                .ok_or_else(|| bad(&format!("unknown field {name:?}")))?;
            let id: u32 = parts[2].parse().map_err(|_| bad("bad id"))?;
            if vocab.insert(field, &value) != id {
                return Err(bad("ids are not dense in first-seen order"));
            }
        }
        Ok(vocab)
    }
}

/// Integer-encoded samples, row-major `K x n`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedData {
    pub n_fields: usize,
    pub ids: Vec<u32>,
    pub labels: Vec<u8>,
}

impl EncodedData {
    pub fn new(n_fields: usize, ids: Vec<u32>, labels: Vec<u8>) -> Result<Self> {
        if n_fields == 0 || ids.len() != n_fields * labels.len() {
            return Err(Error::Encoding(format!(
                "{} ids do not form {} rows of {} fields",
                ids.len(),
                labels.len(),
                n_fields
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Encoding(format!("label {bad} is not 0 or 1")));
        }
        Ok(EncodedData {
            n_fields,
            ids,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, k: usize) -> &[u32] {
        &self.ids[k * self.n_fields..(k + 1) * self.n_fields]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u32]> {
        self.ids.chunks_exact(self.n_fields)
    }

    pub fn select(&self, indices: &[usize]) -> EncodedData {
        let mut ids = Vec::with_capacity(indices.len() * self.n_fields);
        for &k in indices {
            ids.extend_from_slice(self.row(k));
        }
        EncodedData {
            n_fields: self.n_fields,
            ids,
            labels: indices.iter().map(|&k| self.labels[k]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

/// Row indices per split, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn indices(&self, tag: SplitTag) -> &[usize] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Valid => &self.valid,
            SplitTag::Test => &self.test,
        }
    }
}

/// Shuffles `0..rows` under `seed` and cuts it by `fractions`
/// (train, valid, test). Sizes are rounded; test takes the remainder.
pub fn split_dataset(rows: usize, seed: u64, fractions: [f64; 3]) -> Result<Split> {
    for f in fractions {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("split fraction {f} outside (0, 1)")));
        }
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions sum to {total}, not 1"
        )));
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut rng::stream(seed, salt::SPLIT));
    let n_train = ((rows as f64 * fractions[0]).round() as usize).min(rows);
    let n_valid = ((rows as f64 * fractions[1]).round() as usize).min(rows - n_train);
    let mut train = order[..n_train].to_vec();
    let mut valid = order[n_train..n_train + n_valid].to_vec();
    let mut test = order[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, valid, test })
}

/// Escapes a cell for tab-separated artifact files. `\N` is kept free for
/// the missing marker.
pub fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '|' => out.push_str("\\p"),
            ',' => out.push_str("\\c"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(value: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('p') => out.push('|'),
            Some('c') => out.push(','),
            other => {
                return Err(format!(
                    "bad escape sequence \\{}",
                    other.map(String::from).unwrap_or_default()
                ))
            }
        }
    }
    Ok(out)
}

/// Cell encoding with `\N` standing for missing.
pub fn escape_cell(value: Option<&str>) -> String {
    match value {
        None => "\\N".to_string(),
        Some(v) => escape(v),
    }
}

pub fn unescape_cell(value: &str) -> std::result::Result<Option<String>, String> {
    if value == "\\N" {
        Ok(None)
    } else {
        unescape(value).map(Some)
    }
}
