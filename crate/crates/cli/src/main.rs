use clap::{Args, Parser, Subcommand};
use prr_gnn::eval::{ModelKind, ModelSelection, ThresholdPolicy};
use prr_gnn_cli::commands::write_file;
use prr_gnn_cli::{cmd_cv, cmd_predict, cmd_prepare, cmd_train, predictions_csv, CliError, Overrides, PredictSettings, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "prrgnn", version, about = "Receptor activation prediction with a recurrent graph neural network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::builder::ValueParser::new(parse_policy))]
    threshold_policy: Option<ThresholdPolicy>,
    /// Output directory (overrides `paths.output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter the corpus and write the fold manifest and corpus report.
    Prepare(Common),
    /// Cross-validate the graph model against the baseline.
    Cv {
        #[command(flatten)]
        common: Common,
        /// Maximum number of folds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "both", value_parser = clap::builder::ValueParser::new(parse_models))]
        models: ModelSelection,
    },
    /// Train on the whole corpus and write model checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "both", value_parser = clap::builder::ValueParser::new(parse_models))]
        models: ModelSelection,
    },
    /// Score the sequences of a FASTA file with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fasta: PathBuf,
        /// Supplies feature mode, residue policy, convergence control and fallback threshold.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_policy(s: &str) -> Result<ThresholdPolicy, String> {
    s.parse()
}

fn parse_models(s: &str) -> Result<ModelSelection, String> {
    s.parse()
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        threshold_policy: common.threshold_policy,
        out: common.out.clone(),
    });
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare(common) => {
            let cfg = load(&common)?;
            let corpus = cmd_prepare(&cfg)?;
            let raw: usize = corpus.raw_counts.values().sum();
            println!(
                "kept {} of {raw} records; wrote {}",
                corpus.records.len(),
                cfg.paths.output_dir.display()
            );
        }
        Command::Cv { common, jobs, models } => {
            if jobs == 0 {
                return Err(CliError::Input("--jobs must be >= 1".into()));
            }
            let cfg = load(&common)?;
            let outcome = cmd_cv(&cfg, models, jobs)?;
            println!("model  acc            auc            mcc");
            for (kind, s) in &outcome.summary.models {
                println!(
                    "{:<6} {:.3} ± {:.3}  {:.3} ± {:.3}  {:.3} ± {:.3}",
                    kind.as_str(),
                    s.accuracy.mean,
                    s.accuracy.sd,
                    s.auc.mean,
                    s.auc.sd,
                    s.mcc.mean,
                    s.mcc.sd
                );
            }
            for (kind, t) in outcome.timing() {
                println!(
                    "{:<6} train {:.0} ms/fold, predict {:.1} us/example",
                    ModelKind::as_str(kind),
                    t.train_wall_ms.mean,
                    t.mean_predict_us.mean
                );
            }
        }
        Command::Train { common, models } => {
            let cfg = load(&common)?;
            for (kind, path) in cmd_train(&cfg, models)? {
                println!("{kind}: {}", path.display());
            }
        }
        Command::Predict { checkpoint, fasta, config, out } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let preds = cmd_predict(&checkpoint, &fasta, PredictSettings::from_config(cfg.as_ref()))?;
            let csv = predictions_csv(&preds);
            match out {
                Some(path) => write_file(&path, &csv)?,
                None => print!("{csv}"),
            }
            if !preds.is_empty() {
                let mean = preds.iter().map(|p| p.latency_us).sum::<f64>() / preds.len() as f64;
                eprintln!("mean latency {mean:.1} us over {} sequences", preds.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
