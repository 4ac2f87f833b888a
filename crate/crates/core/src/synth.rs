//! Synthetic data: algebraic three-field formulations for studying
//! inconsistency, and classification sets with a planted interaction.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng as _;

use crate::data::{split_dataset, EncodedData, FieldKind, FieldSchema, RawTable, FIRST_VALUE_ID};
use crate::dnn::{DnnConfig, EmbeddingDnn, OutputKind};
use crate::inconsistency::{inconsistency_matrix, DeviationNorm};
use crate::rng::{self, salt};
use crate::{Error, Result};

/// A target built from three inputs `α`, `β`, `λ` in `[0, 1]`, where `α`
/// and `β` interact and `λ` enters additively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    /// α·β + λ
    MulAdd,
    /// α·β + λ²
    MulAddSq,
    /// α·β² + λ³
    MulSqCube,
    /// α³·β² + λ³
    CubeSqCube,
    /// α/(1 + 10β) + 1/(0.1 + λ)
    Div10bRecip,
    /// α/(0.1 + β) + 1/(0.1 + λ)
    DivRecip,
    /// (1 + α²)/(0.5 + β) + λ²
    RatioSq,
    /// ln(1 + 10αβ) + λ
    LogAdd,
    /// ln(1 + 10αβ) + λ²
    LogSq,
    /// ln(1 + 10αβ) + e^(1+λ)
    LogExp,
    /// ln(1 + α)·β + λ²
    Log1pMulSq,
    /// e^(1+α)·β² + λ
    ExpMulSqAdd,
    /// e^(1+αβ) + λ²
    ExpMulSq,
    /// e^(1+αβ) + 10λ
    ExpMulLin,
    /// α + β + λ, with no interaction at all.
    Additive,
}

impl Formulation {
    /// The interacting formulations, in table order.
    pub const TABLE: [Formulation; 14] = [
        Formulation::MulAdd,
        Formulation::MulAddSq,
        Formulation::MulSqCube,
        Formulation::CubeSqCube,
        Formulation::Div10bRecip,
        Formulation::DivRecip,
        Formulation::RatioSq,
        Formulation::LogAdd,
        Formulation::LogSq,
        Formulation::LogExp,
        Formulation::Log1pMulSq,
        Formulation::ExpMulSqAdd,
        Formulation::ExpMulSq,
        Formulation::ExpMulLin,
    ];

    pub fn all() -> impl Iterator<Item = Formulation> {
        Self::TABLE.into_iter().chain([Formulation::Additive])
    }

    pub fn name(self) -> &'static str {
        match self {
            Formulation::MulAdd => "mul_add",
            Formulation::MulAddSq => "mul_add_sq",
            Formulation::MulSqCube => "mul_sq_cube",
            Formulation::CubeSqCube => "cube_sq_cube",
            Formulation::Div10bRecip => "div_10b_recip",
            Formulation::DivRecip => "div_recip",
            Formulation::RatioSq => "ratio_sq",
            Formulation::LogAdd => "log_add",
            Formulation::LogSq => "log_sq",
            Formulation::LogExp => "log_exp",
            Formulation::Log1pMulSq => "log1p_mul_sq",
            Formulation::ExpMulSqAdd => "exp_mul_sq_add",
            Formulation::ExpMulSq => "exp_mul_sq",
            Formulation::ExpMulLin => "exp_mul_lin",
            Formulation::Additive => "additive",
        }
    }

    pub fn eval(self, a: f64, b: f64, l: f64) -> f64 {
        match self {
            Formulation::MulAdd => a * b + l,
            Formulation::MulAddSq => a * b + l * l,
            Formulation::MulSqCube => a * b * b + l.powi(3),
            Formulation::CubeSqCube => a.powi(3) * b * b + l.powi(3),
            Formulation::Div10bRecip => a / (1.0 + 10.0 * b) + 1.0 / (0.1 + l),
            Formulation::DivRecip => a / (0.1 + b) + 1.0 / (0.1 + l),
            Formulation::RatioSq => (1.0 + a * a) / (0.5 + b) + l * l,
            Formulation::LogAdd => (10.0 * a * b).ln_1p() + l,
            Formulation::LogSq => (10.0 * a * b).ln_1p() + l * l,
            Formulation::LogExp => (10.0 * a * b).ln_1p() + (1.0 + l).exp(),
            Formulation::Log1pMulSq => a.ln_1p() * b + l * l,
            Formulation::ExpMulSqAdd => (1.0 + a).exp() * b * b + l,
            Formulation::ExpMulSq => (1.0 + a * b).exp() + l * l,
            Formulation::ExpMulLin => (1.0 + a * b).exp() + 10.0 * l,
            Formulation::Additive => a + b + l,
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Formulation::all().find(|f| f.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Formulation::all().map(Formulation::name).collect();
            Error::Config(format!(
                "unknown formulation {s:?}; expected one of {}",
                names.join(", ")
            ))
        })
    }
}

/// Distinct two-decimal values per input, plus the reserved ids.
pub const FORMULATION_VOCAB: usize = 101 + FIRST_VALUE_ID as usize;

/// Inputs rounded to two decimals and their target values.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulationDataset {
    pub formulation: Formulation,
    pub inputs: Vec<[f64; 3]>,
    pub targets: Vec<f64>,
}

impl FormulationDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Each two-decimal value as its own category: `v` becomes id
    /// `round(100 v) + 2`.
    pub fn encode(&self) -> EncodedData {
        let ids = self
            .inputs
            .iter()
            .flat_map(|x| {
                x.iter()
                    .map(|&v| (v * 100.0).round() as u32 + FIRST_VALUE_ID)
            })
            .collect();
        let labels = self.binarized_labels();
        EncodedData::new(3, ids, labels).expect("three ids per row")
    }

    /// 1 where the target exceeds its median, else 0.
    pub fn binarized_labels(&self) -> Vec<u8> {
        if self.targets.is_empty() {
            return Vec::new();
        }
        let mut sorted = self.targets.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        self.targets.iter().map(|&t| u8::from(t > median)).collect()
    }
}

fn two_decimals(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// `k` rows of inputs drawn uniformly from `[0, 1]` and rounded to two
/// decimals.
pub fn generate_formulation_dataset(
    formulation: Formulation,
    k: usize,
    seed: u64,
) -> FormulationDataset {
    let mut rng = rng::stream(seed, salt::SYNTH);
    let inputs: Vec<[f64; 3]> = (0..k)
        .map(|_| std::array::from_fn(|_| two_decimals(rng.random::<f64>())))
        .collect();
    let targets = inputs
        .iter()
        .map(|&[a, b, l]| formulation.eval(a, b, l))
        .collect();
    FormulationDataset {
        formulation,
        inputs,
        targets,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub samples: usize,
    pub dnn: DnnConfig,
    pub norm: DeviationNorm,
    /// Train, validation, test fractions; inconsistency is measured on the
    /// validation part.
    pub fractions: [f64; 3],
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            samples: 10_000,
            dnn: DnnConfig {
                output: OutputKind::Identity,
                ..DnnConfig::default()
            },
            norm: DeviationNorm::Scalar,
            fractions: [0.6, 0.2, 0.2],
        }
    }
}

/// Mean inconsistency of `α`, `β`, `λ` for one formulation and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub formulation: Formulation,
    pub seed: u64,
    pub means: [f64; 3],
}

impl StudyRow {
    /// Whether both interacting inputs exceed the independent one.
    pub fn ordered(&self) -> bool {
        self.means[0] > self.means[2] && self.means[1] > self.means[2]
    }
}

/// Trains a regression network on one formulation and returns the per-field
/// mean inconsistency on the validation split. Targets are standardized
/// before training.
pub fn study_one(formulation: Formulation, seed: u64, config: &StudyConfig) -> Result<StudyRow> {
    let data = generate_formulation_dataset(formulation, config.samples, seed);
    let split = split_dataset(data.len(), seed, config.fractions)?;
    let encoded = data.encode();
    let n = data.len() as f64;
    let mean = data.targets.iter().sum::<f64>() / n;
    let sd = (data.targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let targets: Vec<f64> = data.targets.iter().map(|t| (t - mean) / scale).collect();
    let pick = |idx: &[usize]| idx.iter().map(|&k| targets[k]).collect::<Vec<f64>>();

    let train = encoded.select(&split.train);
    let valid = encoded.select(&split.valid);
    let dnn = DnnConfig {
        output: OutputKind::Identity,
        ..config.dnn.clone()
    };
    let mut model = EmbeddingDnn::new(
        &[FORMULATION_VOCAB; 3],
        dnn.embedding_dim,
        &dnn.hidden,
        OutputKind::Identity,
        seed,
    );
    model.train(
        &train,
        &pick(&split.train),
        &valid,
        &pick(&split.valid),
        &dnn,
        seed,
    )?;
    let d = inconsistency_matrix(&model, &valid, dnn.gradient, config.norm)?;
    let m = d.column_means();
    Ok(StudyRow {
        formulation,
        seed,
        means: [m[0], m[1], m[2]],
    })
}

/// Runs [`study_one`] for every formulation and seed.
pub fn run_inconsistency_study(
    formulations: &[Formulation],
    seeds: &[u64],
    config: &StudyConfig,
) -> Result<Vec<StudyRow>> {
    let mut rows = Vec::with_capacity(formulations.len() * seeds.len());
    for &f in formulations {
        for &seed in seeds {
            let row = study_one(f, seed, config)?;
            log::info!(
                "{f} seed {seed}: d_alpha {:.6} d_beta {:.6} d_lambda {:.6}",
                row.means[0],
                row.means[1],
                row.means[2]
            );
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("formulation,seed,d_alpha,d_beta,d_lambda,ordered\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{}",
            r.formulation,
            r.seed,
            r.means[0],
            r.means[1],
            r.means[2],
            r.ordered()
        );
    }
    out
}

/// Binary classification data over `n` categorical fields `f0..`. The
/// `planted` fields are fair coins; with probability `strength` the label is
/// their parity, otherwise an independent coin. The other fields are noise
/// with 2 to 5 values.
pub fn generate_planted_cross(
    k: usize,
    n: usize,
    planted: &[usize],
    strength: f64,
    seed: u64,
) -> Result<(FieldSchema, RawTable)> {
    if !(2..=4).contains(&planted.len()) {
        return Err(Error::Config(
            "planted tuple must have 2 to 4 fields".into(),
        ));
    }
    if planted.iter().any(|&f| f >= n) {
        return Err(Error::Config(format!("planted fields must be below {n}")));
    }
    let mut distinct = planted.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != planted.len() {
        return Err(Error::Config("planted fields must be distinct".into()));
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Config(format!("strength {strength} outside [0, 1]")));
    }
    let schema = FieldSchema::new(
        (0..n)
            .map(|f| (format!("f{f}"), FieldKind::Categorical))
            .collect(),
        "label",
    )?;
    let mut rng = rng::stream(seed, salt::SYNTH);
    let mut rows = Vec::with_capacity(k);
    let mut labels = Vec::with_capacity(k);
    for _ in 0..k {
        let mut parity = 0u32;
        let row: Vec<Option<String>> = (0..n)
            .map(|f| {
                let v = if planted.contains(&f) {
                    let bit = rng.random_range(0..2u32);
                    parity ^= bit;
                    bit
                } else {
                    rng.random_range(0..2 + (f as u32 % 4))
                };
                Some(v.to_string())
            })
            .collect();
        let label = if rng.random::<f64>() < strength {
            parity as u8
        } else {
            rng.random_range(0..2u8)
        };
        rows.push(row);
        labels.push(label);
    }
    Ok((schema, RawTable { rows, labels }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulation_examples() {
        assert!((Formulation::MulAdd.eval(0.5, 0.4, 0.3) - 0.5).abs() < 1e-15);
        assert_eq!(Formulation::DivRecip.eval(0.0, 0.0, 0.0), 10.0);
    }

    #[test]
    fn names_round_trip() {
        for f in Formulation::all() {
            assert_eq!(f.name().parse::<Formulation>().unwrap(), f);
        }
        assert!("nope".parse::<Formulation>().is_err());
        assert_eq!(Formulation::all().count(), 15);
    }

    #[test]
    fn finite_on_full_grid() {
        for f in Formulation::all() {
            for a in 0..=100 {
                for b in 0..=100 {
                    for l in 0..=100 {
                        let v = f.eval(a as f64 / 100.0, b as f64 / 100.0, l as f64 / 100.0);
                        assert!(v.is_finite(), "{f} at {a} {b} {l}");
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_is_rounded_and_deterministic() {
        let a = generate_formulation_dataset(Formulation::MulAdd, 10_000, 4);
        let b = generate_formulation_dataset(Formulation::MulAdd, 10_000, 4);
        assert_eq!(a, b);
        for x in &a.inputs {
            for &v in x {
                assert!((0.0..=1.0).contains(&v));
                assert!((v * 100.0 - (v * 100.0).round()).abs() < 1e-9);
            }
        }
        let e = a.encode();
        assert!(e
            .ids
            .iter()
            .all(|&id| (id as usize) < FORMULATION_VOCAB && id >= FIRST_VALUE_ID));
        let ones = a.binarized_labels().iter().filter(|&&l| l == 1).count();
        assert!((4500..=5000).contains(&ones));
    }

    #[test]
    fn planted_cross_shape_and_determinism() {
        let (schema, t) = generate_planted_cross(500, 10, &[2, 5], 1.0, 3).unwrap();
        assert_eq!(schema.len(), 10);
        assert_eq!(t.len(), 500);
        for (row, &label) in t.rows.iter().zip(&t.labels) {
            let bit = |f: usize| row[f].as_deref().unwrap().parse::<u8>().unwrap();
            assert_eq!(label, bit(2) ^ bit(5));
        }
        assert_eq!(
            generate_planted_cross(500, 10, &[2, 5], 1.0, 3).unwrap().1,
            t
        );
    }

    #[test]
    fn planted_cross_rejects_bad_tuples() {
        assert!(generate_planted_cross(10, 4, &[1], 1.0, 0).is_err());
        assert!(generate_planted_cross(10, 4, &[1, 4], 1.0, 0).is_err());
        assert!(generate_planted_cross(10, 4, &[1, 1], 1.0, 0).is_err());
        assert!(generate_planted_cross(10, 4, &[1, 2], 1.5, 0).is_err());
    }

    #[test]
    fn zero_strength_is_independent() {
        let (_, t) = generate_planted_cross(4000, 4, &[0, 1], 0.0, 9).unwrap();
        let agree = t
            .rows
            .iter()
            .zip(&t.labels)
            .filter(|(r, &l)| {
                let bit = |f: usize| r[f].as_deref().unwrap().parse::<u8>().unwrap();
                bit(0) ^ bit(1) == l
            })
            .count();
        assert!((1800..=2200).contains(&agree));
    }
}
