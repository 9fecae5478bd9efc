use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emofusion::cli::{
    cmd_analyze, cmd_eval, cmd_label, cmd_preprocess, cmd_report, cmd_train, PipelineConfig,
    TrainArgs,
};
use emofusion::Error;

#[derive(Parser)]
#[command(
    name = "emofusion",
    version,
    about = "Batch emotion-recognition toolkit: quality-gated preprocessing, soft-label \
             calibration, hybrid CNN+GCN training, and statistical reporting"
)]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured run directory.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured preprocessing worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract quality-gated face crops and landmark CSVs from frames.
    Preprocess {
        /// Override the blur (Laplacian variance) threshold.
        #[arg(long)]
        blur_threshold: Option<f64>,
        /// Override the minimum face side in pixels.
        #[arg(long)]
        min_face: Option<u32>,
        /// Override the minimum detector confidence.
        #[arg(long)]
        min_confidence: Option<f64>,
        /// Override the processing frame rate.
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Calibrate soft labels from the two scorer CSVs.
    Label,
    /// Train the fusion classifier.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Resume from a checkpoint archive.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate the trained model and write per-frame predictions.
    Eval,
    /// Run the statistics battery and write the report bundle.
    Analyze,
    /// Re-render figures and print the consolidated run summary.
    Report,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => return Err(Error::Usage("--config <path> is required".into())),
    };
    if let Some(run_dir) = &cli.run_dir {
        config.run_dir = run_dir.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.preprocess.workers = workers;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Preprocess { blur_threshold, min_face, min_confidence, fps } => {
            if let Some(v) = blur_threshold {
                config.preprocess.blur_threshold = *v;
            }
            if let Some(v) = min_face {
                config.preprocess.min_face = *v;
            }
            if let Some(v) = min_confidence {
                config.preprocess.min_confidence = *v;
            }
            if let Some(v) = fps {
                config.preprocess.fps = *v;
            }
            let report = cmd_preprocess(&config)?;
            print!("{}", report.to_key_value_text());
        }
        Command::Label => {
            let rows = cmd_label(&config)?;
            println!("soft_labels_written {rows}");
        }
        Command::Train { epochs, batch_size, resume } => {
            let metrics = cmd_train(
                &config,
                &TrainArgs {
                    epochs: *epochs,
                    batch_size: *batch_size,
                    resume: resume.clone(),
                },
            )?;
            println!("final_accuracy {:.6}", metrics.accuracy);
            println!("final_macro_f1 {:.6}", metrics.macro_f1);
        }
        Command::Eval => {
            let metrics = cmd_eval(&config)?;
            print!("{}", metrics.to_text());
        }
        Command::Analyze => {
            cmd_analyze(&config)?;
            println!("analysis_written {}", config.stage_dir("analysis").display());
            println!("run_summary {}", config.run_dir.join("run_summary.json").display());
        }
        Command::Report => {
            let text = cmd_report(&config)?;
            print!("{text}");
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
