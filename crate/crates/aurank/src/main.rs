use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aurank::pipeline::{
    cmd_ablate, cmd_evaluate, cmd_generate, cmd_predict, cmd_train, cmd_trials, load_config, Mode,
    RunConfig,
};
use aurank::uncertainty::LossForm;
use aurank::Error;

#[derive(Parser)]
#[command(name = "aurank", version, about = "Action-unit recognition from pairwise pseudo-intensity ranking")]
struct Cli {
    /// JSON run configuration; omit to use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override every stage seed with a single trial seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Parallel jobs for per-AU and per-seed work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// p1 adopts the uncertainty model for all AUs; p2 honors the per-AU
    /// flags in the config.
    #[arg(long, global = true, default_value = "p1")]
    mode: String,

    /// Expanded ranking loss form: corrected | literal.
    #[arg(long, global = true)]
    loss_form: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by the config.
    Generate,
    /// Train all three stages for every AU, resuming completed stages.
    Train,
    /// Train once per seed and select the best pipeline by validation score.
    Trials,
    /// Predict labels for every video in a dataset directory.
    Predict {
        /// Dataset directory holding features/ (annotations not required).
        #[arg(long)]
        input: PathBuf,
        /// Output predictions CSV.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a predictions CSV against ground-truth annotations.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Train and score P1 and P2 on the same corpus and emit a comparison.
    Ablate,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
        let with_seed = cfg.for_trial(seed);
        cfg.pair_sampler.seed = with_seed.pair_sampler.seed;
        cfg.pseudo_train.seed = with_seed.pseudo_train.seed;
        cfg.uncertainty_train.seed = with_seed.uncertainty_train.seed;
        cfg.mapping_train.seed = with_seed.mapping_train.seed;
    }
    if let Some(form) = &cli.loss_form {
        cfg.loss_form = form.parse::<LossForm>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = resolve_config(cli)?;
    let mode: Mode = cli.mode.parse()?;

    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("could not build thread pool: {e}")))?
        .install(|| match &cli.command {
            Command::Generate => {
                let summary = cmd_generate(&cfg)?;
                println!(
                    "wrote {} videos ({} frames) to {} (manifest {})",
                    summary.videos,
                    summary.frames,
                    summary.data_dir.display(),
                    &summary.dataset_manifest_hash[..12],
                );
                Ok(())
            }
            Command::Train => {
                let summary = cmd_train(&cfg, mode)?;
                for au in &summary.aus {
                    let stage2 = match au.uncertainty_retrained {
                        None => "skipped",
                        Some(true) => "trained",
                        Some(false) => "reused",
                    };
                    println!(
                        "{}: pseudo {}, uncertainty {}, mapping {}",
                        au.au,
                        if au.pseudo_retrained { "trained" } else { "reused" },
                        stage2,
                        if au.mapping_retrained { "trained" } else { "reused" },
                    );
                }
                println!(
                    "models in {} (config {})",
                    summary.models_dir.display(),
                    &summary.config_hash[..12]
                );
                Ok(())
            }
            Command::Trials => {
                let report = cmd_trials(&cfg, mode)?;
                print!("{}", report.to_table());
                println!("best seed: {}", report.best_seed);
                Ok(())
            }
            Command::Predict { input, output } => {
                cmd_predict(&cfg, mode, input, output)?;
                println!("predictions written to {}", output.display());
                Ok(())
            }
            Command::Evaluate { predictions, truth } => {
                let report = cmd_evaluate(&cfg, predictions, truth)?;
                print!("{}", report.metrics.to_table());
                Ok(())
            }
            Command::Ablate => {
                let report = cmd_ablate(&cfg)?;
                print!("{}", report.to_table());
                Ok(())
            }
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
