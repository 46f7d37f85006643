use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sharc_cli::{
    compare_am, default_thetas, execute_run, is_config_error, load_config, run_grid,
    summarize_grid, sweep_theta, with_seeds, ConfigError, GridSpec, RunStatus,
};
use sharc_core::{AmKind, Budget, ExperimentConfig, Scenario};

#[derive(Parser)]
#[command(
    name = "sharc",
    version,
    about = "Continual-learning experiments with saliency-masked replay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Output root.
    #[arg(long, env = "SHARC_OUT_DIR", default_value = "runs")]
    out: PathBuf,
    /// Comma-separated seeds; overrides the config's seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Re-run cells that already have complete results.
    #[arg(long)]
    force: bool,
    /// Use a byte budget of this many bytes instead of the configured budget.
    #[arg(long)]
    byte_budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config (once per seed).
    Run(Common),
    /// Run a grid spec and write summary.csv.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Summarize even when some runs are missing.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Sweep the masking threshold theta (theta = mu, fraction dropped).
    SweepTheta {
        #[command(flatten)]
        common: Common,
        /// Comma-separated thetas in (0, 1]; default 0.1..0.9.
        #[arg(long, value_delimiter = ',')]
        thetas: Option<Vec<f64>>,
    },
    /// Compare associative-memory kinds under identical streams and seeds.
    CompareAm {
        #[command(flatten)]
        common: Common,
        /// Comma-separated kinds: none, hopfield, mhn, pcn.
        #[arg(long, value_delimiter = ',', required = true)]
        kinds: Vec<AmKind>,
        /// Comma-separated scenarios; default is the config's scenario.
        #[arg(long, value_delimiter = ',')]
        scenarios: Vec<Scenario>,
    },
    /// Summarize a finished grid directory into summary.csv.
    Summarize {
        #[arg(long, env = "SHARC_OUT_DIR", default_value = "runs")]
        out: PathBuf,
        /// Summarize even when some runs are missing.
        #[arg(long)]
        allow_partial: bool,
    },
}

fn base_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = load_config(&common.config)?;
    if let Some(bytes) = common.byte_budget {
        cfg.budget = Budget::Bytes(bytes);
    }
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

fn seeds_or(common: &Common, fallback: u64) -> Vec<u64> {
    common.seeds.clone().unwrap_or_else(|| vec![fallback])
}

fn print_runs(configs: &[ExperimentConfig], out: &Path, force: bool) -> anyhow::Result<()> {
    for cfg in configs {
        let (status, dir) = execute_run(cfg, out, force)?;
        match status {
            RunStatus::Ran => println!("{}: done", dir.display()),
            RunStatus::Skipped => println!("{}: skipped (complete)", dir.display()),
        }
    }
    Ok(())
}

fn fmt_stat(mean: f64, std: f64, flagged: bool) -> String {
    format!(
        "{mean:.4} ± {std:.4}{}",
        if flagged { " (single seed)" } else { "" }
    )
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let base = base_config(&common)?;
            let configs = with_seeds(&base, &seeds_or(&common, base.seed));
            print_runs(&configs, &common.out, common.force)
        }
        Command::Grid {
            common,
            allow_partial,
        } => {
            let text = std::fs::read_to_string(&common.config)?;
            let mut spec = GridSpec::from_json(&text)?;
            if let Some(seeds) = &common.seeds {
                spec.seeds = Some(seeds.clone());
            }
            if let Some(bytes) = common.byte_budget {
                spec.budgets = Some(vec![Budget::Bytes(bytes)]);
            }
            let configs = spec.expand()?;
            println!("grid: {} runs", configs.len());
            let report = run_grid(&configs, &common.out, common.force)?;
            println!(
                "ran {}, skipped (complete) {}, failed {}",
                report.ran,
                report.skipped,
                report.failures.len()
            );
            for f in &report.failures {
                eprintln!("{f}");
            }
            let (rows, missing) = summarize_grid(&common.out, allow_partial)?;
            println!("summary: {} rows, {missing} runs missing", rows.len());
            if !report.failures.is_empty() {
                anyhow::bail!("{} runs failed", report.failures.len());
            }
            Ok(())
        }
        Command::SweepTheta { common, thetas } => {
            let base = base_config(&common)?;
            let thetas = thetas.unwrap_or_else(default_thetas);
            let seeds = seeds_or(&common, base.seed);
            let rows = sweep_theta(&base, &thetas, &seeds, &common.out, common.force)?;
            println!("{}", sharc_cli::THETA_NOTE);
            for r in rows {
                println!(
                    "theta {:.3}: ACC {}",
                    r.theta,
                    fmt_stat(r.acc.mean, r.acc.std, r.seeds < 2)
                );
            }
            Ok(())
        }
        Command::CompareAm {
            common,
            kinds,
            scenarios,
        } => {
            let base = base_config(&common)?;
            let seeds = seeds_or(&common, base.seed);
            let (rows, warnings) =
                compare_am(&base, &kinds, &scenarios, &seeds, &common.out, common.force)?;
            for w in warnings {
                eprintln!("{w}");
            }
            for r in rows {
                println!(
                    "{} {}: ACC {}",
                    r.scenario,
                    r.am_kind,
                    fmt_stat(r.acc.mean, r.acc.std, r.seeds < 2)
                );
            }
            Ok(())
        }
        Command::Summarize { out, allow_partial } => {
            let (rows, missing) = summarize_grid(&out, allow_partial)?;
            println!("summary: {} rows, {missing} runs missing", rows.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
