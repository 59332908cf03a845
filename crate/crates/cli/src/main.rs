//! `adaproj` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 1 anything else.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaproj_core::error::Error;
use adaproj_core::harness::{
    compare, generate, load_dataset, run_experiment, score_test_split, sweep_subspace_dim, train_system,
    write_dataset, ExperimentConfig, TrainedSystem,
};
use adaproj_core::metrics::{
    evaluate_by_domain, evaluate_sections, official_score, read_scores_csv, write_domain_results_csv,
    write_results_csv, write_scores_csv,
};
use adaproj_core::LossHead;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaproj", version, about = "Subspace-projection loss experiments for anomalous sound detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Added to the config's seed_base.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Overrides loss_head.
    #[arg(long)]
    loss: Option<String>,
    /// Overrides subspace_dim.
    #[arg(long)]
    subspace_dim: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset (manifest.csv and feature blobs).
    ///
    /// Each section plants a random latent subspace (synth_latent_dim) in
    /// feature space. Normals are mean + basis*z + synth_noise*eps; target
    /// clips add synth_domain_shift along a fixed latent direction; anomalies
    /// add an off-subspace perturbation of length synth_perturbation.
    /// Defaults: noise 0.3, perturbation 3.0, shift 0.5, latent dim 8.
    Synth(Common),
    /// Train one seed and save the model and per-section scorers.
    Train(Common),
    /// Score the test split with a trained system.
    Score {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train` (defaults to --out).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate a scores CSV into per-section AUC/pAUC and the official score.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Scores CSV (defaults to <out>/scores.csv).
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Full multi-seed experiment with aggregate and ensemble files.
    Run(Common),
    /// Subspace-dimension sweep over the config's sweep_dims.
    Sweep(Common),
    /// Run all five loss heads and write comparison.csv.
    Compare(Common),
}

fn config(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::ConfigInvalid(format!("cannot read {}: {io}", p.display())),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(l) = &c.loss {
        cfg.loss_head = l.parse::<LossHead>()?;
    }
    if let Some(j) = c.subspace_dim {
        cfg.subspace_dim = j;
    }
    cfg.seed_base += c.seed_offset;
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<File, Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(File::create(path)?)
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Synth(c) => {
            let cfg = config(&c)?;
            let data = generate(&cfg.synthetic)?;
            write_dataset(&data, &c.out)?;
            println!("wrote {} clips to {}", data.rows.len(), c.out.display());
        }
        Command::Train(c) => {
            let cfg = config(&c)?;
            let data = load_dataset(&cfg)?;
            let system = train_system(&cfg, &data, cfg.seed_base)?;
            system.save(&c.out)?;
            println!("trained seed {} ({} sections) into {}", cfg.seed_base, system.scorers.len(), c.out.display());
        }
        Command::Score { common, model } => {
            let cfg = config(&common)?;
            let data = load_dataset(&cfg)?;
            let system = TrainedSystem::load(model.as_deref().unwrap_or(&common.out))?;
            let scores = score_test_split(&system, &data)?;
            let path = common.out.join("scores.csv");
            write_scores_csv(create(&path)?, &scores)?;
            println!("wrote {} scores to {}", scores.len(), path.display());
        }
        Command::Eval { common, scores } => {
            let cfg = config(&common)?;
            let path = scores.unwrap_or_else(|| common.out.join("scores.csv"));
            let samples = read_scores_csv(File::open(&path)?)?;
            let results = evaluate_sections(&samples, cfg.p_auc)?;
            write_results_csv(create(&common.out.join("results.csv"))?, &results)?;
            write_domain_results_csv(
                create(&common.out.join("results_by_domain.csv"))?,
                &evaluate_by_domain(&samples, cfg.p_auc)?,
            )?;
            println!("official score {}", official_score(&results)?);
        }
        Command::Run(c) => {
            let cfg = config(&c)?;
            let data = load_dataset(&cfg)?;
            let r = run_experiment(&cfg, &data, Some(&c.out))?;
            println!("{}: official {} +- {}", cfg.loss_head, r.official_mean, r.official_std);
        }
        Command::Sweep(c) => {
            let cfg = config(&c)?;
            let data = load_dataset(&cfg)?;
            for (j, m, s) in sweep_subspace_dim(&cfg, &data, &cfg.sweep_dims, Some(&c.out))? {
                println!("J={j}: official {m} +- {s}");
            }
        }
        Command::Compare(c) => {
            let cfg = config(&c)?;
            let data = load_dataset(&cfg)?;
            for r in compare(&cfg, &data, Some(&c.out))? {
                println!("{}: official {} +- {}", r.head, r.official.0, r.official.1);
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_config_error() => 2,
        Error::Data(_)
        | Error::Format { .. }
        | Error::Audio(_)
        | Error::Io(_)
        | Error::EmptyDataset
        | Error::EmptyInput
        | Error::EmptyClass
        | Error::TooShort { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
