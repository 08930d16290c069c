use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kwsaug_core::exec::{self, Execution};
use kwsaug_core::pipeline::{self, Experiment, ExperimentConfig};
use kwsaug_core::Error;

/// Keyword-spotting robustness experiments with interference augmentation.
#[derive(Parser, Debug)]
#[command(name = "kwsaug", version)]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output root.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the clean corpus and interference material.
    GenCorpus,
    /// Corrupt a corpus for a named augmentation or test condition.
    Augment { name: String },
    /// Train the model for a corpus name ("clean" or an augmentation).
    Train { name: String },
    /// Decode a test condition with a trained model.
    Decode { model: String, condition: String },
    /// DET curves and AUC for one test condition.
    Eval {
        condition: String,
        /// FAR window for the AUC, as LOW,HIGH.
        #[arg(long, value_parser = parse_range)]
        far_range: Option<[f64; 2]>,
    },
    /// Run every stage and write the summary table.
    Reproduce,
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected LOW,HIGH")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    pipeline::check_far_range([lo, hi]).map_err(|e| e.to_string())?;
    Ok([lo, hi])
}

fn run(cli: Cli) -> Result<String, Error> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config = config.with_seed(s);
    }
    let mode = match cli.jobs {
        Some(1) => Execution::Sequential,
        Some(n) => {
            exec::set_jobs(n);
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let x = Experiment::new(config, &cli.out, mode)?;
    Ok(match cli.command {
        Command::GenCorpus => {
            let m = pipeline::cmd_gen_corpus(&x)?;
            format!("generated {} utterances in {}", m.len(), x.clean_dir().display())
        }
        Command::Augment { name } => {
            let m = pipeline::cmd_augment(&x, &name)?;
            format!("wrote {} utterances to {}", m.len(), x.corpus_dir(&name).display())
        }
        Command::Train { name } => {
            let (_, r) = pipeline::cmd_train(&x, &name)?;
            let last = r.history.last().map_or(f64::NAN, |h| h.loss);
            format!(
                "trained {name} on {} frames: final loss {last:.4}, dev state accuracy {:.3}, dev phone accuracy {:.3}",
                r.frames, r.dev_frame_accuracy, r.dev_phone_accuracy
            )
        }
        Command::Decode { model, condition } => {
            let d = pipeline::cmd_decode(&x, &model, &condition)?;
            format!("{} detections in {}", d.len(), x.detections_path(&model, &condition).display())
        }
        Command::Eval { condition, far_range } => {
            let r = pipeline::cmd_eval(&x, &condition, far_range)?;
            pipeline::summary_tables(&[r]).0
        }
        Command::Reproduce => pipeline::cmd_reproduce(&x)?.summary_text,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            if let Error::MissingArtifact { path, producer } = &e {
                body["path"] = path.display().to_string().into();
                body["producer"] = producer.clone().into();
            }
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
