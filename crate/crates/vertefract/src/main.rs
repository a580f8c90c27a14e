use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vertefract::aggregate::PatientHyperparams;
use vertefract::cli::{self, AggregateMode};
use vertefract::config::ExperimentConfig;
use vertefract::error::Error;

#[derive(Parser)]
#[command(
    name = "vertefract",
    about = "Vertebral fracture detection on 3D volumes: phantom data, training, inference, aggregation and evaluation",
    version
)]
struct Args {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config and re-keys all subsystems.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for internal parallelism (0 = one per core).
    /// Results are independent of this setting.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom corpus with known ground truth.
    PhantomGen {
        /// Corpus output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build dense label volumes from annotation files.
    BuildLabels {
        /// Directory of <case>.txt annotation files.
        #[arg(long)]
        annotations: PathBuf,
        /// Directory of matching <case>.nii volumes.
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the voxel classifier on a corpus.
    Train {
        /// Corpus directory (from phantom-gen).
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for checkpoint and training log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify every voxel of one volume.
    Infer {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Probability-map output file (.nii).
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a probability map to patient- or vertebra-level records.
    Aggregate {
        /// Probability map (.nii) produced by `infer`.
        #[arg(long)]
        map: PathBuf,
        /// `patient` or `vertebra`.
        #[arg(long)]
        mode: String,
        /// Annotation file (vertebra mode).
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Patient mode: fracture-probability threshold.
        #[arg(long, default_value_t = 0.5)]
        prob_threshold: f64,
        /// Patient mode: minimum component size in voxels.
        #[arg(long, default_value_t = 50)]
        noise_threshold: usize,
        /// Output records file (.jsonl).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the stratified cross-validation experiment on a corpus.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        /// Report and plot output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(serde::Serialize)]
struct ErrorRecord {
    error: &'static str,
    message: String,
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Format(_) => "format",
        Error::Parse { .. } => "parse",
        Error::Validation(_) => "validation",
        Error::Argument(_) => "argument",
        Error::DegenerateInput(_) => "degenerate_input",
        Error::Shape(_) => "shape",
        Error::Config(_) => "config",
        Error::Evaluation(_) => "evaluation",
    }
}

fn run(args: Args) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    // one master seed re-keys every subsystem
    let seed = args.seed.unwrap_or(cfg.seed);
    cfg.apply_seed(seed);
    if args.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }

    match args.command {
        Command::PhantomGen { out } => {
            cli::cmd_phantom_gen(&cfg, &out)?;
        }
        Command::BuildLabels {
            annotations,
            volumes,
            out,
        } => {
            let n = cli::cmd_build_labels(&cfg, &annotations, &volumes, &out)?;
            println!("built {n} label volumes in {}", out.display());
        }
        Command::Train { corpus, out } => {
            let ckpt = cli::cmd_train(&cfg, &corpus, &out)?;
            println!("checkpoint: {}", ckpt.display());
        }
        Command::Infer {
            volume,
            checkpoint,
            out,
        } => {
            cli::cmd_infer(&cfg, &volume, &checkpoint, &out)?;
            println!("probability map: {}", out.display());
        }
        Command::Aggregate {
            map,
            mode,
            annotations,
            prob_threshold,
            noise_threshold,
            out,
        } => {
            let mode = match mode.as_str() {
                "patient" => AggregateMode::Patient,
                "vertebra" => AggregateMode::Vertebra,
                other => {
                    return Err(Error::Argument(format!(
                        "unknown mode '{other}', expected patient or vertebra"
                    )))
                }
            };
            let hp = PatientHyperparams {
                probability_threshold: prob_threshold,
                noise_threshold,
            };
            cli::cmd_aggregate(&cfg, &map, mode, hp, annotations.as_deref(), &out)?;
            println!("records: {}", out.display());
        }
        Command::Evaluate { corpus, out } => {
            let (outputs, digest) = cli::cmd_evaluate(&cfg, &corpus, &out)?;
            println!(
                "patient hull AUC {:.4} (bootstrap {:.4} +/- {:.4})",
                outputs.report.patient_level.hull.auc,
                outputs.report.patient_level.bootstrap.mean_auc,
                outputs.report.patient_level.bootstrap.std_auc
            );
            println!(
                "vertebra AUC {:.4} (bootstrap {:.4} +/- {:.4})",
                outputs.report.vertebra_level.curve.auc,
                outputs.report.vertebra_level.bootstrap.mean_auc,
                outputs.report.vertebra_level.bootstrap.std_auc
            );
            println!("report digest: {digest}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = ErrorRecord {
                error: kind(&e),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&record).expect("error encode"));
            ExitCode::FAILURE
        }
    }
}
