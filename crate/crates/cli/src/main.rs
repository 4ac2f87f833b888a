use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dnn2lr::config::PipelineConfig;
use dnn2lr::data;
use dnn2lr::dnn::DnnConfig;
use dnn2lr::pipeline::{self, artifact, Pipeline, Stage};
use dnn2lr::synth::{self, Formulation, StudyConfig};
use dnn2lr::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dnn2lr",
    version,
    about = "Cross-feature discovery for logistic regression from a neural network"
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Pipeline configuration (TOML). Defaults to <workdir>/config.toml.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV, overriding the configuration.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory holding stage artifacts.
    #[arg(long, default_value = "work")]
    workdir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of inconsistency values kept as feasible, in (0, 1).
    #[arg(long)]
    eta: Option<f64>,
    /// Number of candidate cross fields.
    #[arg(long)]
    epsilon: Option<usize>,
    /// Beam width for the selection search; 1 is greedy.
    #[arg(long)]
    beam_width: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage in order.
    Run(Common),
    /// Split the input data into train, validation and test sets.
    Ingest(Common),
    /// Fit bin edges for numerical fields and build the vocabulary.
    Discretize(Common),
    /// Train the embedding network.
    TrainDnn(Common),
    /// Compute inconsistency and the feasible matrix on validation data.
    Inconsistency(Common),
    /// Rank candidate cross fields.
    Candidates(Common),
    /// Train logistic regression without and with candidate crosses.
    TrainLr(Common),
    /// Select the final cross fields.
    Search(Common),
    /// Write the test report, or score a model file on a CSV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Exported model to score; requires --data.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write the final model.
    ExportModel {
        #[command(flatten)]
        common: Common,
        /// Destination; defaults to <workdir>/model.txt.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Measure per-field inconsistency on synthetic formulations.
    Study {
        /// Formulation name (repeatable) or `all`.
        #[arg(long, default_value = "all")]
        formulation: Vec<String>,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Hidden layer sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "64,32")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        /// CSV report destination; printed to stdout if absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a classification set with a planted interaction.
    GeneratePlanted {
        #[arg(long, default_value_t = 20_000)]
        rows: usize,
        #[arg(long, default_value_t = 20)]
        fields: usize,
        /// Planted field indices, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "2,5")]
        planted: Vec<usize>,
        #[arg(long, default_value_t = 0.8)]
        strength: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination.
        #[arg(long)]
        output: PathBuf,
        /// Also write a matching pipeline configuration.
        #[arg(long)]
        config_output: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let path = match &common.config {
        Some(p) => p.clone(),
        None => {
            let p = common.workdir.join(artifact::CONFIG);
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "no --config given and {} does not exist",
                    p.display()
                )));
            }
            p
        }
    };
    let mut config = PipelineConfig::load(&path)?;
    if let Some(d) = &common.data {
        config.data = Some(d.clone());
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(e) = common.eta {
        config.eta = e;
    }
    if common.epsilon.is_some() {
        config.epsilon = common.epsilon;
    }
    if let Some(b) = common.beam_width {
        config.beam_width = b;
    }
    Ok(config)
}

fn pipeline(common: &Common) -> Result<Pipeline> {
    Pipeline::new(load_config(common)?, &common.workdir)
}

fn print_report(workdir: &Path) -> Result<()> {
    let path = workdir.join(artifact::REPORT);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    print!("{text}");
    Ok(())
}

fn run_stage(common: &Common, stage: Stage) -> Result<()> {
    pipeline(common)?.run_stage(stage)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run(c) => {
            pipeline(&c)?.run_all()?;
            print_report(&c.workdir)
        }
        Command::Ingest(c) => run_stage(&c, Stage::Ingest),
        Command::Discretize(c) => run_stage(&c, Stage::Discretize),
        Command::TrainDnn(c) => run_stage(&c, Stage::TrainDnn),
        Command::Inconsistency(c) => run_stage(&c, Stage::Inconsistency),
        Command::Candidates(c) => run_stage(&c, Stage::Candidates),
        Command::TrainLr(c) => run_stage(&c, Stage::TrainLr),
        Command::Search(c) => run_stage(&c, Stage::Search),
        Command::Evaluate { common, model } => match model {
            Some(model) => {
                let data = common
                    .data
                    .as_deref()
                    .ok_or_else(|| Error::Config("evaluate --model needs --data".into()))?;
                let (auc, ks) = pipeline::evaluate_model_file(&model, data)?;
                println!("auc_pct\t{:.2}\nks_pct\t{:.2}", auc * 100.0, ks * 100.0);
                Ok(())
            }
            None => {
                run_stage(&common, Stage::Evaluate)?;
                print_report(&common.workdir)
            }
        },
        Command::ExportModel { common, output } => {
            let p = pipeline(&common)?;
            match output {
                Some(path) => p.export_to(&path),
                None => p.run_stage(Stage::ExportModel),
            }
        }
        Command::Study {
            formulation,
            seeds,
            seed,
            samples,
            hidden,
            epochs,
            output,
        } => {
            let formulations: Vec<Formulation> = if formulation.iter().any(|f| f == "all") {
                Formulation::all().collect()
            } else {
                formulation
                    .iter()
                    .map(|f| f.parse())
                    .collect::<Result<_>>()?
            };
            let config = StudyConfig {
                samples,
                dnn: DnnConfig {
                    hidden,
                    epochs,
                    ..StudyConfig::default().dnn
                },
                ..StudyConfig::default()
            };
            let seeds: Vec<u64> = (seed..seed + seeds).collect();
            let rows = synth::run_inconsistency_study(&formulations, &seeds, &config)?;
            let csv = synth::study_csv(&rows);
            match output {
                Some(path) => std::fs::write(&path, csv)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::GeneratePlanted {
            rows,
            fields,
            planted,
            strength,
            seed,
            output,
            config_output,
        } => {
            let (schema, table) =
                synth::generate_planted_cross(rows, fields, &planted, strength, seed)?;
            data::write_csv(&output, &schema, &table)?;
            if let Some(path) = config_output {
                let config = PipelineConfig {
                    label: schema.label().to_string(),
                    fields: schema.fields().iter().map(|f| f.name.clone()).collect(),
                    data: Some(output.clone()),
                    seed,
                    ..PipelineConfig::default()
                };
                std::fs::write(&path, config.to_toml())
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
