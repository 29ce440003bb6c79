//! Thin CLI over the library runner. Exit codes: 0 success, 2 config
//! error, 3 numerical abort, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use orchestra::config::RunConfig;
use orchestra::probes::{MaskingStrategy, PerturbationKind};
use orchestra::runner;
use orchestra::Error;

#[derive(Parser)]
#[command(
    name = "orchestra",
    about = "Train and probe a multi-expert orchestration policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the orchestrator and write a run directory.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Attribution and entropy probes over a run's checkpoints.
    Probe {
        /// Run directory produced by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Probe a single epoch (default: all checkpoints).
        #[arg(long)]
        epoch: Option<usize>,
    },
    /// Prompt-perturbation sensitivity per epoch.
    Perturb {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated classes (default: all four).
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
    },
    /// Expert-masking interventions per epoch.
    Mask {
        #[arg(long)]
        run: PathBuf,
        /// top_intrinsic | top_frequent | random_nontop | all
        #[arg(long, default_value = "all")]
        strategy: String,
    },
    /// Fixed-order confidence cascade analysis.
    Cascade {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Consolidate a run directory into CSV tables and a summary.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            // environment overrides still apply to the defaults
            RunConfig::from_toml_with_env("", &orchestra::config::env_overrides())?
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.display().to_string();
    }
    Ok(cfg)
}

fn parse_kinds(kinds: &[String]) -> Result<Vec<PerturbationKind>, Error> {
    if kinds.is_empty() {
        return Ok(PerturbationKind::all().to_vec());
    }
    kinds
        .iter()
        .map(|k| match k.as_str() {
            "remove_numbers" => Ok(PerturbationKind::RemoveNumbers),
            "mask_numbers" => Ok(PerturbationKind::MaskNumbers),
            "shuffle_sentences" => Ok(PerturbationKind::ShuffleSentences),
            "remove_reasoning" => Ok(PerturbationKind::RemoveReasoning),
            other => Err(Error::Config(format!(
                "unknown perturbation kind '{other}'"
            ))),
        })
        .collect()
}

fn parse_strategies(s: &str) -> Result<Vec<MaskingStrategy>, Error> {
    match s {
        "all" => Ok(vec![
            MaskingStrategy::TopIntrinsic,
            MaskingStrategy::TopFrequent,
            MaskingStrategy::RandomNontop,
        ]),
        "top_intrinsic" => Ok(vec![MaskingStrategy::TopIntrinsic]),
        "top_frequent" => Ok(vec![MaskingStrategy::TopFrequent]),
        "random_nontop" => Ok(vec![MaskingStrategy::RandomNontop]),
        other => Err(Error::Config(format!("unknown masking strategy '{other}'"))),
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let out = PathBuf::from(&cfg.out_dir);
            let artifact = runner::cmd_train(&cfg, &out)?;
            println!(
                "trained {} epochs -> {} (config {})",
                cfg.train.epochs,
                artifact.run_dir.display(),
                &artifact.config_hash[..12]
            );
            println!("checkpoints: {}", artifact.checkpoints.len());
            println!("metrics: {}", artifact.metrics.display());
        }
        Command::Probe { run, epoch } => {
            let reports = runner::cmd_probe(&run, epoch)?;
            for r in &reports {
                println!(
                    "epoch {}: collab entropy {:.4}, ordering entropy {:.4}, gini {:.4}, rho {:.3} (p {:.3})",
                    r.epoch,
                    r.collab_entropy,
                    r.ordering_entropy,
                    r.gini,
                    r.alignment_self.spearman_rho,
                    r.alignment_self.spearman_p,
                );
            }
        }
        Command::Perturb { run, kinds } => {
            let kinds = parse_kinds(&kinds)?;
            let report = runner::cmd_perturb(&run, &kinds)?;
            for row in &report.rows {
                println!(
                    "epoch {} {:<18} KL(seq) {:.4}  dH {:+.4}  KL(routing) {:.4}",
                    row.epoch,
                    row.kind.name(),
                    row.kl_sequence,
                    row.delta_entropy,
                    row.kl_routing,
                );
            }
        }
        Command::Mask { run, strategy } => {
            let strategies = parse_strategies(&strategy)?;
            let report = runner::cmd_mask(&run, &strategies)?;
            for s in &report.summaries {
                println!(
                    "{:<14} KL(seq) {:.3} ± {:.3}   KL(routing) {:.3} ± {:.3}   ratio {:.2}",
                    s.strategy.name(),
                    s.kl_sequence_mean,
                    s.kl_sequence_ci95,
                    s.kl_routing_mean,
                    s.kl_routing_ci95,
                    s.routing_to_sequence_ratio,
                );
            }
            for c in &report.comparisons {
                println!(
                    "{} vs {}: wilcoxon p {}  paired-t p {}",
                    c.baseline.name(),
                    c.against.name(),
                    c.wilcoxon
                        .map(|t| format!("{:.4}", t.p_value))
                        .unwrap_or_else(|| "-".into()),
                    c.paired_t
                        .map(|t| format!("{:.4}", t.p_value))
                        .unwrap_or_else(|| "-".into()),
                );
            }
        }
        Command::Cascade { common } => {
            let cfg = load_config(&common)?;
            let out = PathBuf::from(&cfg.out_dir);
            let report = runner::cmd_cascade(&cfg, &out)?;
            println!("stop frequency: {:?}", report.stop_frequency);
            println!("sensitivity:    {:?}", report.sensitivity);
            println!("skip KL:        {:?}", report.skip_kl);
        }
        Command::Report { run } => {
            let summary = runner::cmd_report(&run)?;
            println!(
                "run {}: final collab entropy {:.4}, ordering entropy {:.4}, gini {:.4}",
                &summary.config_hash[..12],
                summary.final_collab_entropy,
                summary.final_ordering_entropy,
                summary.final_gini,
            );
            println!("reports written under reports/");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
