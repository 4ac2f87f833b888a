//! Equal-frequency discretization of numerical fields.
//!
//! Each numerical field is binned at several granularities; the one whose
//! single-field logistic regression ranks the validation set best is kept.

use std::fmt::Write as _;

use crate::cross_lr::{self, LrConfig, SparseLrModel};
use crate::data::{EncodedData, FieldKind, FieldSchema, RawTable, FIRST_VALUE_ID, MISSING_ID};
use crate::{metrics, Error, Result};

pub const DEFAULT_GRANULARITIES: [usize; 3] = [10, 100, 1000];

/// Sorted, strictly increasing cut points of one numerical field.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    pub field: usize,
    pub granularity: usize,
    cuts: Vec<f64>,
}

impl BinEdges {
    pub fn new(field: usize, granularity: usize, cuts: Vec<f64>) -> Result<Self> {
        if cuts.iter().any(|c| !c.is_finite()) || cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "cut points of field {field} must be finite and strictly increasing"
            )));
        }
        Ok(BinEdges {
            field,
            granularity,
            cuts,
        })
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Bin index: number of cut points strictly below `value`, so a value
    /// equal to a cut falls in the lower bin.
    pub fn bin(&self, value: f64) -> usize {
        self.cuts.partition_point(|&c| c < value)
    }

    /// `b<i>` for a value, `None` (missing) for a missing value.
    pub fn apply(&self, value: Option<f64>) -> Option<String> {
        value.map(|v| format!("b{}", self.bin(v)))
    }
}

/// Cut points at the nearest-rank quantiles `i/g`, `i = 1..g-1`. Equal cuts
/// collapse, and a cut at the maximum is dropped since it would leave an
/// empty top bin.
pub fn fit_equal_frequency(
    field: usize,
    values: &[Option<f64>],
    granularity: usize,
) -> Result<BinEdges> {
    if granularity < 2 {
        return Err(Error::Config(format!(
            "granularity {granularity} must be at least 2"
        )));
    }
    let mut sorted: Vec<f64> = values.iter().flatten().copied().collect();
    if sorted.is_empty() {
        return Err(Error::Config(format!(
            "field {field} has no non-missing training values"
        )));
    }
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!(
            "field {field} has non-finite values"
        )));
    }
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let max = sorted[k - 1];
    let mut cuts: Vec<f64> = Vec::with_capacity(granularity - 1);
    for i in 1..granularity {
        // ceil(i k / g) - 1, in integers
        let rank = (i * k).div_ceil(granularity);
        let cut = sorted[rank.max(1) - 1];
        if cut < max && cuts.last().is_none_or(|&last| cut > last) {
            cuts.push(cut);
        }
    }
    BinEdges::new(field, granularity, cuts)
}

/// Parses a numerical cell. Empty cells were already turned into `None`.
pub fn parse_number(cell: Option<&str>) -> std::result::Result<Option<f64>, String> {
    match cell {
        None => Ok(None),
        Some(s) => match s.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(format!("{s:?} is not a finite number")),
        },
    }
}

pub fn numeric_column(table: &RawTable, field: usize, name: &str) -> Result<Vec<Option<f64>>> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            parse_number(row[field].as_deref())
                .map_err(|m| Error::Encoding(format!("field {name:?}, row {k}: {m}")))
        })
        .collect()
}

/// Single-field encoding: bin `b` becomes id `b + 2`, missing stays 0.
fn encode_bins(edges: &BinEdges, values: &[Option<f64>], labels: &[u8]) -> EncodedData {
    EncodedData {
        n_fields: 1,
        ids: values
            .iter()
            .map(|v| v.map_or(MISSING_ID, |v| FIRST_VALUE_ID + edges.bin(v) as u32))
            .collect(),
        labels: labels.to_vec(),
    }
}

/// Validation AUC of a bin-per-weight logistic regression fitted on train.
pub fn granularity_auc(
    edges: &BinEdges,
    train: (&[Option<f64>], &[u8]),
    valid: (&[Option<f64>], &[u8]),
    config: &LrConfig,
    seed: u64,
) -> Result<f64> {
    let train = encode_bins(edges, train.0, train.1);
    let valid = encode_bins(edges, valid.0, valid.1);
    let mut model = SparseLrModel::new(&[edges.n_bins() + FIRST_VALUE_ID as usize]);
    cross_lr::train_phase1(&mut model, &train, &valid, config, seed)?;
    match metrics::auc(&valid.labels, &model.predict_batch(&valid)) {
        Ok(auc) => Ok(auc),
        Err(Error::UndefinedMetric(_)) => Ok(0.5),
        Err(e) => Err(e),
    }
}

/// Fits edges at each granularity and keeps the one with the best
/// validation AUC; ties go to the smaller granularity.
pub fn select_granularity(
    field: usize,
    train: (&[Option<f64>], &[u8]),
    valid: (&[Option<f64>], &[u8]),
    granularities: &[usize],
    config: &LrConfig,
    seed: u64,
) -> Result<BinEdges> {
    let mut ordered = granularities.to_vec();
    ordered.sort_unstable();
    ordered.dedup();
    let mut best: Option<(f64, BinEdges)> = None;
    for g in ordered {
        let edges = fit_equal_frequency(field, train.0, g)?;
        let auc = granularity_auc(&edges, train, valid, config, seed)?;
        log::debug!("field {field}: granularity {g} -> valid auc {auc:.6}");
        if best.as_ref().is_none_or(|(b, _)| auc > *b) {
            best = Some((auc, edges));
        }
    }
    best.map(|(_, e)| e)
        .ok_or_else(|| Error::Config("no granularities configured".into()))
}

/// Edges for every numerical field of `schema`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Discretizer {
    edges: Vec<BinEdges>,
}

impl Discretizer {
    pub fn new(mut edges: Vec<BinEdges>) -> Self {
        edges.sort_by_key(|e| e.field);
        Discretizer { edges }
    }

    pub fn edges(&self) -> &[BinEdges] {
        &self.edges
    }

    pub fn for_field(&self, field: usize) -> Option<&BinEdges> {
        self.edges.iter().find(|e| e.field == field)
    }

    /// Fits every numerical field on `train`, picking granularity on
    /// `valid`.
    pub fn fit(
        schema: &FieldSchema,
        train: &RawTable,
        valid: &RawTable,
        granularities: &[usize],
        config: &LrConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut edges = Vec::new();
        for field in schema
            .fields()
            .iter()
            .filter(|f| f.kind == FieldKind::Numerical)
        {
            let t = numeric_column(train, field.index, &field.name)?;
            let v = numeric_column(valid, field.index, &field.name)?;
            edges.push(select_granularity(
                field.index,
                (&t, &train.labels),
                (&v, &valid.labels),
                granularities,
                config,
                seed,
            )?);
        }
        Ok(Discretizer::new(edges))
    }

    /// Replaces every numerical cell by its bin label.
    pub fn transform(&self, schema: &FieldSchema, table: &RawTable) -> Result<RawTable> {
        let mut out = table.clone();
        for e in &self.edges {
            let name = &schema.fields()[e.field].name;
            let values = numeric_column(table, e.field, name)?;
            for (row, v) in out.rows.iter_mut().zip(values) {
                row[e.field] = e.apply(v);
            }
        }
        Ok(out)
    }

    /// `field<TAB>g<TAB>cut1,cut2,...` per numerical field.
    pub fn to_text(&self, schema: &FieldSchema) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let cuts: Vec<String> = e.cuts.iter().map(|c| format!("{c:?}")).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                crate::data::escape(&schema.fields()[e.field].name),
                e.granularity,
                cuts.join(",")
            );
        }
        out
    }

    pub fn from_text(text: &str, schema: &FieldSchema) -> Result<Self> {
        let mut edges = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let bad = || Error::format("bin edges", line.to_string());
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let field = crate::data::unescape(parts[0])
                .ok()
                .and_then(|name| schema.field_index(&name))
                .ok_or_else(bad)?;
            edges.push(parse_edges(field, parts[1], parts[2]).ok_or_else(bad)?);
        }
        Ok(Discretizer::new(edges))
    }
}

pub(crate) fn parse_edges(field: usize, g: &str, cuts: &str) -> Option<BinEdges> {
    let granularity = g.parse().ok()?;
    let cuts = if cuts.is_empty() {
        Vec::new()
    } else {
        cuts.split(',')
            .map(|c| c.parse::<f64>().ok())
            .collect::<Option<Vec<_>>>()?
    };
    BinEdges::new(field, granularity, cuts).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn some(values: impl IntoIterator<Item = f64>) -> Vec<Option<f64>> {
        values.into_iter().map(Some).collect()
    }

    /// Bin sizes by sorting and slicing: sample `j` (0-based rank) falls in
    /// bin `floor(j g / K)` when all values are distinct.
    fn slice_oracle(k: usize, g: usize) -> Vec<usize> {
        let mut sizes = vec![0; g];
        for j in 0..k {
            sizes[j * g / k] += 1;
        }
        sizes
    }

    #[test]
    fn deciles_of_one_to_hundred() {
        let values = some((1..=100).map(f64::from));
        let edges = fit_equal_frequency(0, &values, 10).unwrap();
        assert_eq!(
            edges.cuts(),
            &[10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0]
        );
        let mut sizes = vec![0; edges.n_bins()];
        for v in values.iter().flatten() {
            sizes[edges.bin(*v)] += 1;
        }
        assert_eq!(sizes, slice_oracle(100, 10));
    }

    #[test]
    fn degenerate_columns() {
        let edges = fit_equal_frequency(0, &some([3.0; 7]), 100).unwrap();
        assert!(edges.cuts().is_empty());
        let edges = fit_equal_frequency(0, &some([1.0, 1.0, 1.0, 1.0, 2.0]), 4).unwrap();
        assert_eq!(edges.cuts(), &[1.0]);
        assert!(fit_equal_frequency(0, &[None, None], 10).is_err());
        assert!(fit_equal_frequency(0, &some([1.0]), 1).is_err());
    }

    #[test]
    fn apply_examples() {
        let edges = BinEdges::new(0, 10, vec![10.0, 20.0]).unwrap();
        assert_eq!(edges.apply(Some(15.0)).as_deref(), Some("b1"));
        assert_eq!(edges.apply(Some(5.0)).as_deref(), Some("b0"));
        assert_eq!(edges.apply(Some(10.0)).as_deref(), Some("b0"));
        assert_eq!(edges.apply(Some(25.0)).as_deref(), Some("b2"));
        assert_eq!(edges.apply(None), None);
        assert!(BinEdges::new(0, 10, vec![2.0, 1.0]).is_err());
    }

    fn lr() -> LrConfig {
        LrConfig {
            learning_rates: vec![1.0],
            l2: vec![0.0001],
            epochs: 10,
            patience: 3,
            ..LrConfig::default()
        }
    }

    fn uniform_values(k: usize, seed: u64) -> Vec<Option<f64>> {
        let mut rng = rng::stream(seed, 0);
        (0..k).map(|_| Some(rng.random::<f64>())).collect()
    }

    #[test]
    fn median_threshold_keeps_coarsest() {
        // 20000 evenly spaced training values: the median is a cut point at
        // every granularity
        let t = some((0..20_000).map(|i| i as f64 / 20_000.0));
        let v = uniform_values(5_000, 2);
        let median = 9_999.0 / 20_000.0;
        let label = |x: &Option<f64>| (x.unwrap() > median) as u8;
        let (ty, vy): (Vec<u8>, Vec<u8>) =
            (t.iter().map(label).collect(), v.iter().map(label).collect());
        for g in DEFAULT_GRANULARITIES {
            let edges = fit_equal_frequency(0, &t, g).unwrap();
            let auc = granularity_auc(&edges, (&t, &ty), (&v, &vy), &lr(), 1).unwrap();
            assert_eq!(auc, 1.0, "g={g}");
        }
        let edges =
            select_granularity(0, (&t, &ty), (&v, &vy), &DEFAULT_GRANULARITIES, &lr(), 1).unwrap();
        assert_eq!(edges.granularity, 10);
    }

    #[test]
    fn independent_label_keeps_coarsest() {
        let (t, v) = (uniform_values(4_000, 3), uniform_values(4_000, 4));
        let mut rng = rng::stream(5, 5);
        let ty: Vec<u8> = (0..t.len()).map(|_| rng.random_range(0..2)).collect();
        let vy: Vec<u8> = (0..v.len()).map(|_| rng.random_range(0..2)).collect();
        let edges = select_granularity(0, (&t, &ty), (&v, &vy), &[10, 10, 10], &lr(), 1).unwrap();
        assert_eq!(edges.granularity, 10);
    }

    #[test]
    fn sawtooth_needs_fine_bins() {
        // label flips every 0.002: only g = 1000 resolves it
        let (t, v) = (uniform_values(40_000, 6), uniform_values(10_000, 7));
        let label = |x: &Option<f64>| ((x.unwrap() * 500.0).floor() as u64 % 2) as u8;
        let (ty, vy): (Vec<u8>, Vec<u8>) =
            (t.iter().map(label).collect(), v.iter().map(label).collect());
        let edges =
            select_granularity(0, (&t, &ty), (&v, &vy), &DEFAULT_GRANULARITIES, &lr(), 1).unwrap();
        assert_eq!(edges.granularity, 1000);
    }

    #[test]
    fn text_round_trip() {
        let schema = FieldSchema::new(
            vec![
                ("x".into(), FieldKind::Numerical),
                ("y".into(), FieldKind::Numerical),
            ],
            "label",
        )
        .unwrap();
        let d = Discretizer::new(vec![
            BinEdges::new(1, 10, vec![]).unwrap(),
            BinEdges::new(0, 100, vec![0.1, 0.30000000000000004, 7.0]).unwrap(),
        ]);
        let text = d.to_text(&schema);
        assert_eq!(text, "x\t100\t0.1,0.30000000000000004,7.0\ny\t10\t\n");
        assert_eq!(Discretizer::from_text(&text, &schema).unwrap(), d);
    }

    proptest! {
        #[test]
        fn distinct_values_balance_bins(k in 2usize..400, g in 2usize..50) {
            let values = some((0..k).map(|i| (i * 7919 % k) as f64));
            let edges = fit_equal_frequency(0, &values, g).unwrap();
            let mut sizes = vec![0usize; edges.n_bins()];
            for v in values.iter().flatten() {
                sizes[edges.bin(*v)] += 1;
            }
            let ideal = k as f64 / g as f64;
            if k >= g {
                prop_assert_eq!(sizes.len(), g);
                for s in sizes {
                    prop_assert!((s as f64 - ideal).abs() <= 1.0);
                }
            }
        }

        #[test]
        fn apply_is_monotone(cuts in prop::collection::btree_set(-1000i32..1000, 0..20), a in -1500.0f64..1500.0, b in -1500.0f64..1500.0) {
            let edges = BinEdges::new(0, 100, cuts.into_iter().map(f64::from).collect()).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(edges.bin(lo) <= edges.bin(hi));
        }
    }
}
