use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use m3i_core::harness::checkpoint::Checkpoint;
use m3i_core::harness::config::shapes_spec_from_ini_str;
use m3i_core::harness::data::{dataset_checksum, generate_shapes, write_dataset};
use m3i_core::harness::eval::ProbeConfig;
use m3i_core::harness::train::{collapse_on, linear_probe, load_data, model_from_checkpoint};
use m3i_core::harness::{emit_plots, resume, train, RunConfig, OUTPUT_DIR_ENV};
use m3i_core::oracle::run_suite;
use m3i_core::{all_variants, Error};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "m3i", version, about = "Mutual-information pre-training toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a method from a config file, or resume from a checkpoint.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long, conflicts_with_all = ["config", "seed"])]
        resume: Option<PathBuf>,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
    },
    /// Linear-probe accuracy and collapse diagnostics of a checkpoint.
    EvalProbe {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = ProbeConfig::default().epochs)]
        probe_epochs: usize,
    },
    /// Run the mutual-information oracle suite.
    Oracle {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the method catalog as tab-separated rows.
    ListMethods,
    /// Render loss, weight and collapse plots from a metrics log.
    Plot {
        #[arg(long)]
        log: PathBuf,
        /// Defaults to the directory holding the log.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic shapes dataset described by a spec file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides `dir` from the spec file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Marker for failures that map to the numeric exit code.
#[derive(Debug)]
struct NumericFailure;

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("numeric check failed")
    }
}

impl std::error::Error for NumericFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NumericFailure>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::ConfigInvalid(_)
            | Error::UnknownMethod(_)
            | Error::IncompatibleCheckpoint(_)
            | Error::StructureMismatch(_)
            | Error::KindMismatch(_),
        ) => 2,
        Some(Error::NaNLoss { .. } | Error::OptimizationBudgetExceeded { .. }) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            resume: from,
            output_dir,
        } => {
            let outcome = match from {
                Some(ckpt) => resume(&ckpt, output_dir)?,
                None => {
                    let path = config.expect("clap enforces --config");
                    let mut run = RunConfig::from_file(&path)?;
                    if let Some(s) = seed {
                        run.seed = s;
                    }
                    if let Some(dir) = output_dir {
                        run.output_dir = dir;
                    }
                    train(run)?
                }
            };
            println!("steps\t{}", outcome.steps);
            println!("metrics\t{}", outcome.metrics.display());
            println!("checkpoint\t{}", outcome.final_checkpoint.display());
        }
        Command::EvalProbe { ckpt, probe_epochs } => {
            let ck = Checkpoint::load(&ckpt)?;
            let model = model_from_checkpoint(&ck)?;
            let data = load_data(&ck.run)?;
            let cfg = ProbeConfig {
                epochs: probe_epochs,
                ..ProbeConfig::default()
            };
            let acc = linear_probe(&model, &data, &cfg)?;
            let report = collapse_on(&model, &data)?;
            let out = serde_json::json!({
                "method": ck.method.name,
                "step": ck.step,
                "probe_top1": acc,
                "feature_std": report.feature_std,
                "effective_rank": report.effective_rank,
                "boltzmann_entropy": report.boltzmann_entropy,
            });
            println!("{out}");
        }
        Command::Oracle { trials, seed } => {
            if trials == 0 {
                return Err(Error::ConfigInvalid("--trials must be at least 1".into()).into());
            }
            let rows = run_suite(seed, trials);
            let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in &rows {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                println!("{verdict}  {:width$}  {}", r.name, r.detail);
            }
            let failed = rows.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                eprintln!("{failed} of {} oracle checks failed", rows.len());
                return Err(NumericFailure.into());
            }
        }
        Command::ListMethods => {
            for m in all_variants() {
                println!("{}", m.describe().join("\t"));
            }
        }
        Command::Plot { log, out } => {
            let dir = out.unwrap_or_else(|| log.parent().map(PathBuf::from).unwrap_or_default());
            let files = emit_plots(&log, &dir)?;
            if files.is_empty() {
                println!("no records; nothing plotted");
            }
            for f in files {
                println!("{}\t{}", f.path.display(), f.series.join(","));
            }
        }
        Command::GenData { spec, out } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let (shapes, dir) = shapes_spec_from_ini_str(&text)?;
            let Some(dir) = out.or(dir) else {
                bail!(Error::ConfigInvalid("no output directory: pass --out or set dir in [data]".into()));
            };
            let ds = generate_shapes(&shapes)?;
            write_dataset(&ds, &dir)?;
            println!("{}\t{}", dir.display(), dataset_checksum(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
