use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dtstream_cli::commands::{self, SweepParam};
use dtstream_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dtstream", version, about = "Streaming dynamic tree experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Worker threads for independent repeats.
    #[arg(long)]
    threads: Option<usize>,
    /// Override a config key, e.g. `--set stream.k=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(r) = self.repeats {
            overrides.push(format!("repeats={r}"));
        }
        if let Some(t) = self.threads {
            overrides.push(format!("threads={t}"));
        }
        ExperimentConfig::from_file(&self.config, &overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Lambda,
    K,
    W,
}

#[derive(Subcommand)]
enum Command {
    /// Run every repeat of a config and write traces and a summary.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run a config once per parameter value.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: Param,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Mean tree height per step under step drift.
    HeightStudy {
        #[command(flatten)]
        common: Common,
        /// Forgetting factors for the windowed variants.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.9])]
        lambdas: Vec<f64>,
        /// Skip the variant that keeps every point.
        #[arg(long)]
        no_full: bool,
    },
    /// Run the built-in identity and coherence checks.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        cases: usize,
    },
}

fn warn_degenerate(steps: u64) {
    if steps > 0 {
        eprintln!("warning: {steps} step(s) had zero total particle weight and were resampled uniformly");
    }
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run { common } => {
            let cfg = common.load()?;
            let set = commands::run(&cfg, &common.out)?;
            warn_degenerate(set.degenerate_steps());
            for r in &set.summary {
                println!("{:<14} mean {:.5}  q05 {:.5}  q95 {:.5}", r.metric, r.mean, r.q05, r.q95);
            }
            Ok(true)
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let cfg = common.load()?;
            let param = match param {
                Param::Lambda => SweepParam::Lambda,
                Param::K => SweepParam::K,
                Param::W => SweepParam::W,
            };
            let sets = commands::sweep(&cfg, param, &values, &common.out)?;
            warn_degenerate(sets.iter().map(|(_, s)| s.degenerate_steps()).sum());
            for (v, s) in &sets {
                for r in &s.summary {
                    println!("{}={v:<6} {:<14} mean {:.5}", param.name(), r.metric, r.mean);
                }
            }
            Ok(true)
        }
        Command::HeightStudy {
            common,
            lambdas,
            no_full,
        } => {
            let cfg = common.load()?;
            let vs = commands::height_study(&cfg, &lambdas, !no_full, &common.out)?;
            for v in &vs {
                let last = cfg.steps as u64;
                println!(
                    "{:<12} mean height over final 5000 steps {:.3}",
                    v.name,
                    v.mean_between(last.saturating_sub(5000), last)
                );
            }
            Ok(true)
        }
        Command::Check { seed, cases } => {
            let mut ok = true;
            for c in commands::check(seed, cases) {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
