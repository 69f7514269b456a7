use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use weaksift::{evaluate_files, server};
use weaksift_core::config::Config;
use weaksift_core::eval::{ablation_tsv, enrichment_tsv, roc_points_csv, summary_tsv, EnrichmentFeature};
use weaksift_core::pipeline::{InputFormat, Pipeline};
use weaksift_core::service::AnnotationService;
use weaksift_core::{Error, Result};

#[derive(Parser)]
#[command(name = "weaksift", version, about = "Weakly supervised document triage with an annotation loop")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    LitcovidTsv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Feature {
    Entities,
    Mesh,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus into the workspace, replacing any previous one.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
    },
    /// Append annotations from a CSV file.
    ImportLabels {
        #[arg(long)]
        input: PathBuf,
    },
    /// Assign annotated documents to the evaluation set and folds.
    Split,
    /// Train the per-fold feature models.
    TrainLfs,
    /// Fit the label model for the current round.
    Fit,
    /// Write predictions for every document.
    Predict,
    /// Choose the next batch for annotation.
    Select,
    /// Close the round: refit on all annotations and select the next batch.
    AdvanceRound,
    /// Score predictions against held-out labels.
    Eval {
        #[arg(long)]
        threshold: Option<f64>,
        /// Predictions TSV; requires --truth.
        #[arg(long, requires = "truth")]
        predictions: Option<PathBuf>,
        /// Labels CSV with doc_id and label columns.
        #[arg(long, requires = "predictions")]
        truth: Option<PathBuf>,
        /// Write ROC points to this CSV.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Drop each labeling-function group in turn and report the change in AUC.
    Ablate,
    /// Frequencies of the terms used for the condition.
    Terms {
        /// Write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Features over-represented among relevant documents.
    Enrich {
        #[arg(long, value_enum)]
        feature: Feature,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long)]
        addr: Option<SocketAddr>,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };

    if let Command::Eval {
        threshold,
        predictions: Some(predictions),
        truth: Some(truth),
        roc,
    } = &cli.command
    {
        let (summary, curve) = evaluate_files(predictions, truth, threshold.unwrap_or(config.threshold))?;
        if let Some(path) = roc {
            write_file(path, &roc_points_csv(&curve.points))?;
        }
        print!("{}", summary_tsv(&summary));
        return Ok(());
    }
    if let Command::Eval {
        threshold: Some(t), ..
    } = &cli.command
    {
        config.threshold = *t;
    }

    let pipeline = Pipeline::open(config)?;
    match cli.command {
        Command::Ingest { input, format } => {
            let format = match format {
                Format::Jsonl => InputFormat::Jsonl,
                Format::LitcovidTsv => InputFormat::LitcovidTsv,
            };
            let n = pipeline.ingest(&input, format)?;
            println!("ingested {n} documents");
        }
        Command::ImportLabels { input } => {
            let n = pipeline.import_labels(&input)?;
            println!("imported {n} annotations");
        }
        Command::Split => {
            let [eval, f0, f1, f2] = pipeline.split()?.sizes();
            println!("eval\t{eval}\nfold0\t{f0}\nfold1\t{f1}\nfold2\t{f2}");
        }
        Command::TrainLfs => println!("{}", to_json(&pipeline.train_lfs()?)?),
        Command::Fit => {
            let state = pipeline.fit()?;
            println!("lf_id\taccuracy");
            for lf in &state.lfs {
                println!("{}\t{}", lf.lf_id, lf.accuracy);
            }
        }
        Command::Predict => {
            let n = pipeline.predict()?.len();
            let round = pipeline.workspace.load_round()?.round;
            println!("{n} predictions written to {}", pipeline.workspace.predictions_path(round).display());
        }
        Command::Select => {
            let n = pipeline.select()?.len();
            let round = pipeline.workspace.load_round()?.round;
            println!("{n} documents selected into {}", pipeline.workspace.batch_path(round).display());
        }
        Command::AdvanceRound => println!("{}", to_json(&pipeline.advance_round()?)?),
        Command::Eval { roc, .. } => {
            let (summary, curve) = pipeline.evaluate()?;
            if let Some(path) = roc {
                write_file(&path, &roc_points_csv(&curve.points))?;
            }
            print!("{}", summary_tsv(&summary));
        }
        Command::Ablate => print!("{}", ablation_tsv(&pipeline.ablate()?)),
        Command::Terms { json } => {
            let report = pipeline.terms()?;
            if let Some(path) = json {
                write_file(&path, &to_json(&report)?)?;
            }
            println!("term\tcount");
            for (term, count) in &report.terms {
                println!("{term}\t{count}");
            }
            println!();
            println!("status\tdocuments");
            for (status, n) in report.status_counts() {
                println!("{}\t{n}", status.as_str());
            }
        }
        Command::Enrich { feature } => {
            let feature = match feature {
                Feature::Entities => EnrichmentFeature::Entities,
                Feature::Mesh => EnrichmentFeature::MeshTerms,
            };
            print!("{}", enrichment_tsv(&pipeline.enrich(feature)?));
        }
        Command::Serve { addr } => {
            let addr = match addr {
                Some(a) => a,
                None => pipeline.config.service.addr.parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad service address {:?}", pipeline.config.service.addr))
                })?,
            };
            let service = AnnotationService::new(pipeline)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
            runtime
                .block_on(server::serve(service, addr))
                .map_err(|e| Error::io(addr.to_string(), e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
