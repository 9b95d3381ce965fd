use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hetmogp_cli::demo::{trajectory, write_trajectory, DemoMode};
use hetmogp_cli::runner::{evaluate_state, run, SeedStatus};
use hetmogp_cli::state::TrainedState;
use hetmogp_cli::{CliError, CliResult, RunConfig};
use hetmogp_core::data_io::{generate_toy, write_csv, write_metadata, ToyKind};
use hetmogp_core::optimizers::VoDemoConfig;

#[derive(Parser)]
#[command(name = "hetmogp", version, about = "Heterogeneous multi-output GP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write a run directory.
    Run {
        /// TOML run configuration.
        #[arg(short, long)]
        config: PathBuf,
        /// Output run directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Per-output test NLPD of a saved state.
    Evaluate {
        #[arg(short, long)]
        config: PathBuf,
        /// A `state.bin` written by `run`.
        #[arg(short, long)]
        state: PathBuf,
        /// Seed for the Monte Carlo predictive estimate.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// 1-D variational optimization demonstrator; writes a trajectory CSV.
    Demo {
        #[arg(short, long)]
        out: PathBuf,
        /// Drop the KL penalty against the prior.
        #[arg(long)]
        no_kl: bool,
        /// Plain gradient descent instead of VO.
        #[arg(long)]
        descent: bool,
        #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
        init_mu: f64,
        #[arg(long, default_value_t = 3.0)]
        init_sigma: f64,
        /// Prior precision.
        #[arg(long, default_value_t = 1.5)]
        lambda: f64,
        /// Step size (VO) or learning rate (descent, default 0.01).
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample a toy dataset to CSV with a JSON metadata sidecar.
    Generate {
        /// t1, t2 or t3.
        #[arg(long)]
        toy: ToyKind,
        #[arg(short, long)]
        n: usize,
        #[arg(short, long, default_value_t = 1)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let summary = run(&cfg, &out)?;
            for s in &summary.manifest.seeds {
                match s.status {
                    SeedStatus::Completed => println!(
                        "seed {}: final NELBO {:.4}, NLPD {:?}",
                        s.seed,
                        s.final_nelbo.unwrap_or(f64::NAN),
                        s.final_nlpd
                    ),
                    SeedStatus::Failed => println!(
                        "seed {}: failed after {} iterations: {}",
                        s.seed,
                        s.iterations,
                        s.error.as_deref().unwrap_or("unknown error")
                    ),
                }
            }
            println!("run directory: {}", summary.dir.display());
        }
        Command::Evaluate { config, state, seed } => {
            let cfg = RunConfig::load(&config)?;
            let st = TrainedState::load(&state)?;
            let values = evaluate_state(&cfg, &st, seed)?;
            let report: Vec<_> = values
                .iter()
                .enumerate()
                .map(|(d, v)| {
                    serde_json::json!({
                        "output": d + 1,
                        "likelihood": st.likelihoods[d].to_string(),
                        "nlpd": v.map_or(serde_json::Value::String("NA".into()), serde_json::Value::from),
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Demo {
            out,
            no_kl,
            descent,
            init_mu,
            init_sigma,
            lambda,
            step,
            iters,
            samples,
            seed,
        } => {
            let mode = if descent {
                DemoMode::Descent {
                    init: init_mu,
                    step: step.unwrap_or(0.01),
                    iters: iters.unwrap_or(2000),
                }
            } else {
                let d = VoDemoConfig::default();
                DemoMode::Vo(VoDemoConfig {
                    init_mu,
                    init_sigma,
                    lambda,
                    use_kl: !no_kl,
                    max_iters: iters.unwrap_or(d.max_iters),
                    alpha: step.unwrap_or(d.alpha),
                    samples,
                    seed,
                })
            };
            let points = trajectory(mode).map_err(|e| match e {
                CliError::Core(hetmogp_core::Error::Domain(m)) => CliError::config(m),
                other => other,
            })?;
            write_trajectory(&out, &points)?;
            if let Some(last) = points.last() {
                println!("final μ = {:.6}, σ = {:.6}, g(μ) = {:.6}", last.mu, last.sigma, last.g_mu);
            }
        }
        Command::Generate { toy, n, p, seed, out } => {
            let (data, meta) = generate_toy(toy, p, n, seed).map_err(|e| CliError::config(e.to_string()))?;
            write_csv(&out, &data)?;
            let sidecar = out.with_extension("json");
            write_metadata(&sidecar, &meta)?;
            println!("wrote {} and {}", out.display(), sidecar.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
