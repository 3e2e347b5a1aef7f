use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uqshift::bench::{cmd_diversity, cmd_evaluate, cmd_generate_data, cmd_oracle, cmd_train, RunConfig};
use uqshift::Error;

/// Uncertainty-quantification benchmark under distribution shift.
#[derive(Parser)]
#[command(name = "uqshift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its split manifests.
    GenerateData(Common),
    /// Fit the configured method and save its checkpoints.
    Train(Common),
    /// Run the shift sweep over a trained ensemble.
    Evaluate(Common),
    /// Pairwise correlation of ensemble members.
    Diversity(Common),
    /// Sampler checks against the analytic oracles.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `section.key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `method.name`.
    #[arg(long)]
    method: Option<String>,
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("UQSHIFT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("UQSHIFT_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    let (Command::GenerateData(c) | Command::Train(c) | Command::Evaluate(c) | Command::Diversity(c) | Command::Oracle(c)) =
        &cli.command;
    let cfg = RunConfig::load(&c.config, c.seed, c.method.as_deref())?;
    let out = &c.out;
    match &cli.command {
        Command::GenerateData(_) => {
            let root = cmd_generate_data(&cfg, out)?;
            println!("dataset written to {}", root.display());
        }
        Command::Train(_) => {
            let s = cmd_train(&cfg, out)?;
            let last = s.losses.last().map_or(f64::NAN, |l| l.loss);
            println!("{}: {} members in {} (last epoch loss {last:.4})", cfg.method, s.members, s.run_dir.display());
        }
        Command::Evaluate(_) => {
            let report = cmd_evaluate(&cfg, out)?;
            println!("shift          dice     nll    brier    ece   entropy");
            for (row, s) in report.rows.iter().zip(&report.shifts) {
                let ent = s.mean_aggregate_entropy.map_or("-".to_string(), |e| format!("{e:.4}"));
                println!(
                    "{:<12} {:.4}  {:.4}  {:.4}  {:.4}  {ent}",
                    s.tag, row.dice_mean, row.nll, row.brier, row.ece
                );
            }
        }
        Command::Diversity(_) => {
            let report = cmd_diversity(&cfg, out)?;
            let mean = report.mean_off_diagonal.map_or("-".to_string(), |m| format!("{m:.4}"));
            println!("{}: mean pairwise correlation {mean} over members {:?}", cfg.method, report.matrix.members);
        }
        Command::Oracle(_) => {
            let report = cmd_oracle(&cfg, out)?;
            println!(
                "moments ok (max mean err {:.4}, max cov err {:.4}); {}/{} runs found both modes",
                report.moments.mean_rel_err.iter().copied().fold(0.0, f64::max),
                report.moments.cov_rel_err.iter().copied().fold(0.0, f64::max),
                report.csghmc_two_mode_runs,
                report.mode_runs.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
