//! Stage runner over a work directory.
//!
//! Every stage reads the artifacts of earlier stages from the work
//! directory and writes its own, so stages can be run one at a time,
//! resumed, or inspected.
//!
//! | stage          | writes                                            |
//! |----------------|---------------------------------------------------|
//! | ingest         | `config.toml`, `train.csv`, `valid.csv`, `test.csv` |
//! | discretize     | `edges.tsv`, `vocab.tsv`                          |
//! | train-dnn      | `dnn.bin`, `dnn_training.tsv`                     |
//! | inconsistency  | `inconsistency.csv`, `feasible.csv`               |
//! | candidates     | `candidates.tsv`                                  |
//! | train-lr       | `lr_original.txt`, `lr_candidates.txt`            |
//! | search         | `search_log.txt`, `final_model.txt`               |
//! | evaluate       | `report.txt`                                      |
//! | export-model   | `model.txt`                                       |

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::candidates::{self, CrossField};
use crate::config::PipelineConfig;
use crate::cross_lr::{self, SparseLrModel};
use crate::data::{self, EncodedData, FieldSchema, RawTable, Vocabulary};
use crate::discretize::Discretizer;
use crate::dnn::EmbeddingDnn;
use crate::export::WhiteBoxModel;
use crate::inconsistency::{self, FeasibleMatrix, InconsistencyMatrix};
use crate::{metrics, search, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Discretize,
    TrainDnn,
    Inconsistency,
    Candidates,
    TrainLr,
    Search,
    Evaluate,
    ExportModel,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Discretize,
        Stage::TrainDnn,
        Stage::Inconsistency,
        Stage::Candidates,
        Stage::TrainLr,
        Stage::Search,
        Stage::Evaluate,
        Stage::ExportModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Discretize => "discretize",
            Stage::TrainDnn => "train-dnn",
            Stage::Inconsistency => "inconsistency",
            Stage::Candidates => "candidates",
            Stage::TrainLr => "train-lr",
            Stage::Search => "search",
            Stage::Evaluate => "evaluate",
            Stage::ExportModel => "export-model",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

pub mod artifact {
    pub const CONFIG: &str = "config.toml";
    pub const TRAIN: &str = "train.csv";
    pub const VALID: &str = "valid.csv";
    pub const TEST: &str = "test.csv";
    pub const EDGES: &str = "edges.tsv";
    pub const VOCAB: &str = "vocab.tsv";
    pub const DNN: &str = "dnn.bin";
    pub const DNN_TRAINING: &str = "dnn_training.tsv";
    pub const INCONSISTENCY: &str = "inconsistency.csv";
    pub const FEASIBLE: &str = "feasible.csv";
    pub const CANDIDATES: &str = "candidates.tsv";
    pub const LR_ORIGINAL: &str = "lr_original.txt";
    pub const LR_CANDIDATES: &str = "lr_candidates.txt";
    pub const SEARCH_LOG: &str = "search_log.txt";
    pub const FINAL_MODEL: &str = "final_model.txt";
    pub const REPORT: &str = "report.txt";
    pub const MODEL: &str = "model.txt";
}

/// Test-set metrics of one model, as fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub auc: f64,
    pub ks: f64,
}

pub fn report_text(rows: &[ReportRow]) -> String {
    let mut out = String::from("model\tauc_pct\tks_pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.2}\t{:.2}",
            r.model,
            r.auc * 100.0,
            r.ks * 100.0
        );
    }
    out
}

/// Parses a report written by [`report_text`].
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let bad = |m: &str| Error::format("report", m.to_string());
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(bad(line));
            }
            let pct = |s: &str| s.parse::<f64>().map(|v| v / 100.0).map_err(|_| bad(line));
            Ok(ReportRow {
                model: parts[0].to_string(),
                auc: pct(parts[1])?,
                ks: pct(parts[2])?,
            })
        })
        .collect()
}

/// AUC and KS of an exported model file on a raw CSV.
pub fn evaluate_model_file(model: &Path, data: &Path) -> Result<(f64, f64)> {
    let model = WhiteBoxModel::from_text(&read(model)?)?;
    let table = data::load_csv(data, &model.schema()?)?;
    model.evaluate(&table)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub struct Pipeline {
    config: PipelineConfig,
    schema: FieldSchema,
    workdir: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, workdir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let schema = config.schema()?;
        Ok(Pipeline {
            config,
            schema,
            workdir: workdir.into(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.workdir.join(artifact)
    }

    /// Reads an artifact, reporting the stage that produces it if absent.
    fn require(&self, artifact: &str, producer: Stage) -> Result<String> {
        let path = self.path(artifact);
        if !path.is_file() {
            return Err(Error::MissingArtifact(producer.name()));
        }
        read(&path)
    }

    fn write(&self, artifact: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        write(&self.path(artifact), contents)
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        log::info!("stage {stage}");
        let result = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Discretize => self.discretize(),
            Stage::TrainDnn => self.train_dnn(),
            Stage::Inconsistency => self.inconsistency(),
            Stage::Candidates => self.candidates(),
            Stage::TrainLr => self.train_lr(),
            Stage::Search => self.search(),
            Stage::Evaluate => self.evaluate(),
            Stage::ExportModel => self.export_model(None),
        };
        result.map_err(|e| Error::Stage {
            stage: stage.name(),
            source: Box::new(e),
        })
    }

    /// Writes the final model to `output` instead of the work directory.
    pub fn export_to(&self, output: &Path) -> Result<()> {
        self.export_model(Some(output)).map_err(|e| Error::Stage {
            stage: Stage::ExportModel.name(),
            source: Box::new(e),
        })
    }

    fn ingest(&self) -> Result<()> {
        let data = self
            .config
            .data
            .as_deref()
            .ok_or_else(|| Error::Config("no input data given".into()))?;
        std::fs::create_dir_all(&self.workdir).map_err(|e| Error::io(&self.workdir, e))?;
        let table = data::load_csv(data, &self.schema)?;
        let split = data::split_dataset(table.len(), self.config.seed, self.config.fractions)?;
        for (name, idx) in [
            (artifact::TRAIN, &split.train),
            (artifact::VALID, &split.valid),
            (artifact::TEST, &split.test),
        ] {
            data::write_csv(&self.path(name), &self.schema, &table.select(idx))?;
        }
        self.write(artifact::CONFIG, self.config.to_toml())?;
        log::info!(
            "ingested {} rows: {} train, {} valid, {} test",
            table.len(),
            split.train.len(),
            split.valid.len(),
            split.test.len()
        );
        Ok(())
    }

    fn split_table(&self, artifact: &str) -> Result<RawTable> {
        let path = self.path(artifact);
        if !path.is_file() {
            return Err(Error::MissingArtifact(Stage::Ingest.name()));
        }
        data::load_csv(&path, &self.schema)
    }

    fn discretize(&self) -> Result<()> {
        let train = self.split_table(artifact::TRAIN)?;
        let valid = self.split_table(artifact::VALID)?;
        let disc = Discretizer::fit(
            &self.schema,
            &train,
            &valid,
            &self.config.granularities,
            &self.config.discretize_lr,
            self.config.seed,
        )?;
        let binned = disc.transform(&self.schema, &train)?;
        let vocab = Vocabulary::build(&binned.rows, self.schema.len());
        self.write(artifact::EDGES, disc.to_text(&self.schema))?;
        self.write(artifact::VOCAB, vocab.to_text(&self.schema))?;
        Ok(())
    }

    fn discretizer(&self) -> Result<Discretizer> {
        Discretizer::from_text(
            &self.require(artifact::EDGES, Stage::Discretize)?,
            &self.schema,
        )
    }

    fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_text(
            &self.require(artifact::VOCAB, Stage::Discretize)?,
            &self.schema,
        )
    }

    /// Binned raw split.
    fn binned(&self, artifact: &str, disc: &Discretizer) -> Result<RawTable> {
        disc.transform(&self.schema, &self.split_table(artifact)?)
    }

    fn encoded(
        &self,
        artifact: &str,
        disc: &Discretizer,
        vocab: &Vocabulary,
    ) -> Result<EncodedData> {
        Ok(vocab.encode_table(&self.binned(artifact, disc)?))
    }

    fn train_dnn(&self) -> Result<()> {
        let disc = self.discretizer()?;
        let vocab = self.vocabulary()?;
        let train = self.encoded(artifact::TRAIN, &disc, &vocab)?;
        let valid = self.encoded(artifact::VALID, &disc, &vocab)?;
        let c = &self.config.dnn;
        let mut model = EmbeddingDnn::new(
            &vocab.sizes(),
            c.embedding_dim,
            &c.hidden,
            c.output,
            self.config.seed,
        );
        let report = model.train_classifier(&train, &valid, c, self.config.seed)?;
        let mut log = String::from("epoch\ttrain_loss\tvalid_score\n");
        for e in &report.epochs {
            let _ = writeln!(log, "{}\t{:?}\t{:?}", e.epoch, e.train_loss, e.valid_score);
        }
        let _ = writeln!(log, "best\t{}\t{:?}", report.best_epoch, report.best_score);
        self.write(artifact::DNN, model.to_bytes())?;
        self.write(artifact::DNN_TRAINING, log)?;
        Ok(())
    }

    fn dnn(&self) -> Result<EmbeddingDnn> {
        let path = self.path(artifact::DNN);
        if !path.is_file() {
            return Err(Error::MissingArtifact(Stage::TrainDnn.name()));
        }
        EmbeddingDnn::from_bytes(&std::fs::read(&path).map_err(|e| Error::io(&path, e))?)
    }

    fn field_names(&self) -> Vec<&str> {
        self.schema
            .fields()
            .iter()
            .map(|f| f.name.as_str())
            .collect()
    }

    fn inconsistency(&self) -> Result<()> {
        let model = self.dnn()?;
        let disc = self.discretizer()?;
        let vocab = self.vocabulary()?;
        let valid = self.encoded(artifact::VALID, &disc, &vocab)?;
        let d = inconsistency::inconsistency_matrix(
            &model,
            &valid,
            self.config.dnn.gradient,
            self.config.norm,
        )?;
        let feasible = inconsistency::feasible_matrix(&d, self.config.eta)?;
        let names = self.field_names();
        self.write(artifact::INCONSISTENCY, d.to_csv(&names))?;
        self.write(artifact::FEASIBLE, feasible.to_csv(&names))?;
        log::info!(
            "feasible entries: {} of {}",
            feasible.count_ones(),
            d.values().len()
        );
        Ok(())
    }

    fn candidates(&self) -> Result<()> {
        let feasible = FeasibleMatrix::from_csv(
            &self.require(artifact::FEASIBLE, Stage::Inconsistency)?,
            self.config.eta,
        )?;
        let d = InconsistencyMatrix::from_csv(
            &self.require(artifact::INCONSISTENCY, Stage::Inconsistency)?,
        )?;
        let counts =
            candidates::enumerate_candidates(&feasible, Some(&d), self.config.feasible_cap);
        let top = candidates::top_epsilon(&counts, self.config.epsilon_for(self.schema.len()));
        self.write(artifact::CANDIDATES, candidates::to_text(&top))?;
        Ok(())
    }

    fn train_lr(&self) -> Result<()> {
        let cands = candidates::from_text(&self.require(artifact::CANDIDATES, Stage::Candidates)?)?;
        if let Some(bad) = cands
            .iter()
            .flat_map(|c| c.field.fields())
            .find(|&&f| f >= self.schema.len())
        {
            return Err(Error::format(
                "candidates",
                format!("field index {bad} out of range"),
            ));
        }
        let disc = self.discretizer()?;
        let vocab = self.vocabulary()?;
        let train = self.encoded(artifact::TRAIN, &disc, &vocab)?;
        let valid = self.encoded(artifact::VALID, &disc, &vocab)?;
        let mut model = SparseLrModel::new(&vocab.sizes());
        let seed = self.config.seed;
        let p1 = cross_lr::train_phase1(&mut model, &train, &valid, &self.config.lr, seed)?;
        log::info!(
            "phase 1: lr {} l2 {} valid {:.6}",
            p1.learning_rate,
            p1.l2,
            p1.valid_score
        );
        let original = WhiteBoxModel::from_sparse(&model, &self.schema, &vocab, &disc);
        let fields: Vec<CrossField> = cands.into_iter().map(|c| c.field).collect();
        if let Some(p2) =
            cross_lr::train_phase2(&mut model, &train, &valid, &fields, &self.config.lr, seed)?
        {
            log::info!(
                "phase 2: lr {} l2 {} valid {:.6}",
                p2.learning_rate,
                p2.l2,
                p2.valid_score
            );
        }
        let with_candidates = WhiteBoxModel::from_sparse(&model, &self.schema, &vocab, &disc);
        self.write(artifact::LR_ORIGINAL, original.to_text())?;
        self.write(artifact::LR_CANDIDATES, with_candidates.to_text())?;
        Ok(())
    }

    fn search(&self) -> Result<()> {
        let model =
            WhiteBoxModel::from_text(&self.require(artifact::LR_CANDIDATES, Stage::TrainLr)?)?;
        let valid = self.split_table(artifact::VALID)?;
        let columns = model.logit_columns(&valid)?;
        let max = self.config.max_selected.unwrap_or(usize::MAX);
        let state = search::select(&columns, self.config.beam_width, max)?;
        let initial = search::SearchState::initial(&columns)?;
        let names = self.field_names();
        let cross_name = |j: usize| -> String {
            model.crosses[j]
                .field
                .fields()
                .iter()
                .map(|&f| names[f])
                .collect::<Vec<_>>()
                .join("&")
        };
        let mut log = String::new();
        let _ = writeln!(log, "initial_auc\t{:?}", initial.auc);
        let _ = writeln!(log, "step\tcandidate\tcross\tauc_before\tauc_after");
        for (i, s) in state.steps.iter().enumerate() {
            let _ = writeln!(
                log,
                "{}\t{}\t{}\t{:?}\t{:?}",
                i + 1,
                s.candidate,
                cross_name(s.candidate),
                s.auc_before,
                s.auc_after
            );
        }
        let _ = writeln!(log, "final_auc\t{:?}", state.auc);
        let _ = writeln!(log, "selected\t{}", state.selected.len());
        self.write(artifact::SEARCH_LOG, log)?;
        self.write(
            artifact::FINAL_MODEL,
            model.with_crosses(&state.selected).to_text(),
        )?;
        Ok(())
    }

    fn evaluate(&self) -> Result<()> {
        let original =
            WhiteBoxModel::from_text(&self.require(artifact::LR_ORIGINAL, Stage::TrainLr)?)?;
        let final_model =
            WhiteBoxModel::from_text(&self.require(artifact::FINAL_MODEL, Stage::Search)?)?;
        let test = self.split_table(artifact::TEST)?;
        let mut rows = Vec::new();
        if let Ok(dnn) = self.dnn() {
            let disc = self.discretizer()?;
            let vocab = self.vocabulary()?;
            let encoded = vocab.encode_table(&disc.transform(&self.schema, &test)?);
            let scores = dnn.predict_batch(&encoded)?;
            rows.push(ReportRow {
                model: "dnn".into(),
                auc: metrics::auc(&encoded.labels, &scores)?,
                ks: metrics::ks(&encoded.labels, &scores)?,
            });
        }
        for (name, model) in [("lr", &original), ("lr_cross", &final_model)] {
            let (auc, ks) = model.evaluate(&test)?;
            rows.push(ReportRow {
                model: name.into(),
                auc,
                ks,
            });
        }
        self.write(artifact::REPORT, report_text(&rows))?;
        Ok(())
    }

    fn export_model(&self, output: Option<&Path>) -> Result<()> {
        let text = self.require(artifact::FINAL_MODEL, Stage::Search)?;
        // validate before publishing
        WhiteBoxModel::from_text(&text)?;
        match output {
            Some(path) => write(path, text),
            None => self.write(artifact::MODEL, text),
        }
    }
}
