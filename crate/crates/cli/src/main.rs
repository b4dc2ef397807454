use std::path::PathBuf;
use std::process::ExitCode;

use actembed::harness::{self, Artifacts, Cell, ExperimentConfig, Scale};
use actembed::trpo::Mode;
use actembed::Error;
use clap::{Parser, Subcommand};

/// Multi-domain dialog policy learning with shared action embeddings.
#[derive(Debug, Parser)]
#[command(name = "actembed", version)]
struct Cli {
    /// Experiment configuration (TOML); overrides the scale preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base seed for corpora, tracker and calibration; restricts `train` to
    /// this seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    #[arg(long, global = true, value_parser = parse_scale)]
    scale: Option<Scale>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the labelled tracker corpora (calibrating noise if needed).
    GenCorpus,
    /// Train the dialog state tracker on the stored corpora.
    TrainDst,
    /// Report test-set joint accuracy of the saved tracker.
    EvalDst,
    /// Train policies for every configured (mode, domain, seed) cell.
    Train {
        /// Only these modes.
        #[arg(long, value_parser = parse_mode)]
        mode: Vec<Mode>,
        /// Only cells for these domains (single and transfer modes).
        #[arg(long)]
        domain: Vec<String>,
    },
    /// Evaluate a saved policy, or the rule-based baseline without --run-id.
    Evaluate {
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        domain: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
    },
    /// Sweep trust-region size and batch size for single-domain training.
    GridSearch {
        #[arg(long)]
        domain: String,
        /// Trust-region sizes; the full grid when omitted.
        #[arg(long, value_delimiter = ',')]
        max_kl: Vec<f64>,
        /// Dialogs per iteration; the full grid when omitted.
        #[arg(long, value_delimiter = ',')]
        dialogs_per_iteration: Vec<usize>,
    },
    /// Rebuild the result tables from the run logs.
    Report,
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Parse(_)
        | Error::UnknownDomain(_)
        | Error::DuplicateDomain(_)
        | Error::Dimension { .. } => 2,
        Error::MissingArtifact(_) | Error::Checkpoint(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> actembed::Result<ExperimentConfig> {
    match &cli.config {
        Some(path) => ExperimentConfig::load(path, cli.scale),
        None => {
            let c = ExperimentConfig::for_scale(cli.scale.unwrap_or_default());
            c.validate()?;
            Ok(c)
        }
    }
}

fn run(cli: Cli) -> actembed::Result<()> {
    let mut config = load_config(&cli)?;
    let artifacts = Artifacts::new(&cli.out);
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::GenCorpus => {
            let noise = harness::resolve_noise(&config, &artifacts, seed)?;
            harness::gen_corpus(&config, &artifacts, noise, seed)?;
            println!("corpora written to {} (noise_p = {noise})", artifacts.root.join("corpus").display());
        }
        Command::TrainDst => {
            let noise = harness::resolve_noise(&config, &artifacts, seed)?;
            let (model, report) = harness::train_dst_stage(&config, &artifacts, noise, seed)?;
            for (i, (l, a)) in report.epoch_losses.iter().zip(&report.validation_accuracy).enumerate() {
                println!("epoch {i:3}  loss {l:.4}  validation joint accuracy {a:.3}");
            }
            println!("kept epoch {}", report.best_epoch);
            print_dst_accuracy(&config, &artifacts, &model)?;
        }
        Command::EvalDst => {
            let model = harness::load_dst(&artifacts)?;
            print_dst_accuracy(&config, &artifacts, &model)?;
        }
        Command::Train { mode, domain } => {
            if let Some(s) = cli.seed {
                config.experiment.seeds = vec![s];
            }
            if !mode.is_empty() {
                config.experiment.modes = mode;
            }
            config.validate()?;
            let model = harness::load_dst(&artifacts)?;
            let noise = harness::resolve_noise(&config, &artifacts, seed)?;
            harness::references(&config, &artifacts, noise, seed)?;
            let encoder = actembed::dst::CachedEncoder::new(std::sync::Arc::new(model));
            let cells: Vec<Cell> = harness::cells(&config)?
                .into_iter()
                .filter(|c| match c {
                    Cell::Single { domain: d, .. } | Cell::Tl { target: d, .. } => {
                        domain.is_empty() || domain.contains(d)
                    }
                    Cell::Mtl { .. } => true,
                })
                .collect();
            for cell in &cells {
                let run = harness::run_cell(&config, &artifacts, &encoder, noise, cell)?;
                for d in &run.domains {
                    if let Some(last) = run.checkpoints(d).last() {
                        println!(
                            "{:<24} {:<11} success {:.3}  length {:.2}",
                            run.run_id, d, last.success_rate, last.avg_length
                        );
                    }
                }
            }
            let table = harness::report(&config, &artifacts)?;
            print!("{}", table.to_text());
        }
        Command::Evaluate {
            run_id,
            domain,
            episodes,
        } => match run_id {
            Some(id) => {
                for (d, s, l) in harness::evaluate_saved_policy(&config, &artifacts, &id, &domain, episodes, seed)? {
                    println!("{d:<11} success {s:.3}  length {l:.2}");
                }
            }
            None => {
                let noise = harness::resolve_noise(&config, &artifacts, seed)?;
                println!("rule-based baseline at noise_p = {noise}");
                for d in config.domains()? {
                    if !domain.is_empty() && !domain.contains(&d.name) {
                        continue;
                    }
                    let e = harness::measure_rule_based(&d, episodes, noise, config.reward, seed)?;
                    println!(
                        "{:<11} success {:.3} ± {:.3}  length {:.2} ± {:.2}",
                        d.name, e.success, e.success_stderr, e.length, e.length_stderr
                    );
                }
            }
        },
        Command::GridSearch {
            domain,
            max_kl,
            dialogs_per_iteration,
        } => {
            let (full_kl, full_n) = harness::full_grids();
            let kls = if max_kl.is_empty() { full_kl } else { max_kl };
            let ns = if dialogs_per_iteration.is_empty() {
                full_n
            } else {
                dialogs_per_iteration
            };
            if let Some(s) = cli.seed {
                config.experiment.seeds = vec![s];
            }
            let (best, all) = harness::grid_search(&config, &artifacts, &domain, &kls, &ns, seed)?;
            for c in &all {
                println!(
                    "max_kl {:<6} dialogs/iter {:<5} final success {:.3}  dialogs to beat {:.0}",
                    c.max_kl, c.dialogs_per_iteration, c.final_success, c.dialogs_to_beat
                );
            }
            println!(
                "best: max_kl {} dialogs/iter {} (final success {:.3})",
                best.max_kl, best.dialogs_per_iteration, best.final_success
            );
        }
        Command::Report => {
            let table = harness::report(&config, &artifacts)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn print_dst_accuracy(
    config: &ExperimentConfig,
    artifacts: &Artifacts,
    model: &actembed::DstModel,
) -> actembed::Result<()> {
    let domains = config.domains()?;
    for ((name, acc), d) in harness::eval_dst(config, artifacts, model)?.iter().zip(&domains) {
        let chance: f64 = d.cardinalities().iter().map(|&c| 1.0 / c as f64).product();
        println!("{name:<11} joint accuracy {acc:.3}  (chance {chance:.4})");
    }
    Ok(())
}
