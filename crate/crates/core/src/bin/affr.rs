use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use affr::data;
use affr::privacy;
use affr::scenario;
use affr::Error;

#[derive(Parser)]
#[command(name = "affr", version, about = "Few-shot federated learning with privacy and energy-aware scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file.
    config: PathBuf,
    /// Override a config key, e.g. `--set rounds=10` or `--set scheduler.margin=1.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, env = "AFFR_OUT_DIR", default_value = "affr-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario over all configured seeds.
    Run(ConfigArgs),
    /// Run all four scenarios for each configured model.
    Compare(ConfigArgs),
    /// Privacy accountant: epsilon for a noise level, or noise for a target epsilon.
    Accountant {
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        target_epsilon: Option<f64>,
        #[arg(long, default_value_t = 30)]
        rounds: usize,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        clip: f64,
    },
    /// Write a synthetic Gaussian-blob dataset as CSV.
    GenData {
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> affr::Result<()> {
    match cli.command {
        Command::Run(a) => {
            let cfg = scenario::parse_config(&a.config, &a.overrides)?;
            let art = scenario::run_scenario(&cfg, &a.out)?;
            let s = &art.summary;
            println!(
                "{} {}: accuracy {:.4} ± {:.4}, dropout {:.3}, participants {:.2}, epsilon {}",
                s.scenario.name(),
                s.model.name(),
                s.mean_accuracy,
                s.std_accuracy,
                s.mean_dropout_rate,
                s.mean_participants,
                s.epsilon_spent
            );
            for f in &art.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Compare(a) => {
            let cfg = scenario::parse_config(&a.config, &a.overrides)?;
            let cmp = scenario::compare_scenarios(&cfg, &a.out)?;
            println!("scenario  model  accuracy         dropout  participants  epsilon");
            for s in &cmp.summaries {
                println!(
                    "{:<9} {:<6} {:.4} ± {:.4}  {:.3}    {:>6.2}        {}",
                    s.scenario.name(),
                    s.model.name(),
                    s.mean_accuracy,
                    s.std_accuracy,
                    s.mean_dropout_rate,
                    s.mean_participants,
                    s.epsilon_spent
                );
            }
            for f in &cmp.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Accountant { sigma, target_epsilon, rounds, delta, clip } => match (sigma, target_epsilon) {
            (Some(sigma), None) => {
                let eps = privacy::rdp_epsilon(sigma, rounds, delta, clip)?;
                let alpha = privacy::optimal_order(sigma, rounds, delta, clip)?;
                println!("epsilon {eps} (order {alpha}) for sigma {sigma}, rounds {rounds}, delta {delta}, clip {clip}");
            }
            (None, Some(target)) => {
                let sigma = privacy::sigma_for_budget(target, delta, rounds, clip)?;
                println!("sigma {sigma} for epsilon {target}, rounds {rounds}, delta {delta}, clip {clip}");
            }
            _ => return Err(Error::Config("accountant: give exactly one of --sigma or --target-epsilon".into())),
        },
        Command::GenData { classes, dim, per_class, separation, seed, output } => {
            let ds = data::generate_blobs(classes, dim, per_class, separation, seed)?;
            match output {
                Some(p) => ds.write_csv(BufWriter::new(File::create(p)?))?,
                None => ds.write_csv(io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
