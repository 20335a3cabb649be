use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use upcycled_fl::data::{generate_synthetic, save_dataset, split_train_test, SizeSpec, SyntheticSpec};
use upcycled_fl::harness::{self, Axis};
use upcycled_fl::privacy;

#[derive(Parser)]
#[command(name = "upcycled-fl", version, about = "Federated learning simulator with upcycled extrapolation rounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic federated dataset as JSON lines.
    GenerateData {
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long)]
        iid: bool,
        #[arg(long, default_value_t = 30)]
        devices: usize,
        #[arg(long, default_value_t = 20)]
        dimx: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hold out this fraction of every shard as test data.
        #[arg(long, default_value_t = 0.0)]
        test_fraction: f64,
        /// Give every device exactly this many samples.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every seed of a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a cross product of overrides and run each point.
    Grid {
        #[arg(long)]
        config: PathBuf,
        /// `section.key=v1,v2,…`; repeat for more axes.
        #[arg(long = "set", required = true)]
        sets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Only write the expanded configs.
        #[arg(long)]
        dry_run: bool,
    },
    /// Closed-form privacy accounting.
    Accountant {
        #[arg(long, value_enum)]
        mechanism: MechanismArg,
        /// Training rounds M.
        #[arg(long)]
        rounds: usize,
        /// Samples in the client's dataset.
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// Report δ at this ε instead of ε at δ.
        #[arg(long)]
        eps: Option<f64>,
        /// Per-round α; one value is reused for every round.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
        u1: f64,
        #[arg(long, default_value_t = 0.5)]
        u2: f64,
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Convergence diagnostics for a finished run directory.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 32)]
        probes: usize,
    },
    /// Paired per-seed comparison of two run directories.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Output,
    Objective,
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    harness::configure_threads()?;
    match cli.command {
        Command::GenerateData {
            beta,
            gamma,
            iid,
            devices,
            dimx,
            classes,
            seed,
            test_fraction,
            samples,
            out,
        } => {
            let spec = SyntheticSpec {
                beta,
                gamma,
                iid,
                num_devices: devices,
                dim_x: dimx,
                classes,
                sizes: samples.map_or_else(SizeSpec::default, |n| SizeSpec::Fixed { n }),
                seed,
            };
            let mut ds = generate_synthetic(&spec)?;
            if test_fraction > 0.0 {
                ds = split_train_test(&ds, test_fraction, seed)?;
            }
            save_dataset(&ds, &out).with_context(|| format!("writing {}", out.display()))?;
            print_json(&json!({
                "out": out,
                "devices": ds.num_devices(),
                "train_samples": ds.total_train(),
            }))?;
        }
        Command::Run { config, seed, out } => {
            let mut cfg = harness::parse_config(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let report = harness::run_suite(&cfg, out.as_deref())?;
            print_json(&json!({
                "label": report.label,
                "final_test_acc": report.final_test_acc,
                "final_train_loss": report.final_train_loss,
                "eps_avg": report.eps_avg,
                "all_completed": report.all_completed,
                "errors": report.seeds.iter().filter_map(|s| s.error.clone()).collect::<Vec<_>>(),
            }))?;
            if !report.all_completed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Grid {
            config,
            sets,
            out,
            dry_run,
        } => {
            let axes = sets.iter().map(|s| Axis::parse(s)).collect::<Result<Vec<_>, _>>()?;
            let results = harness::run_grid_file(&config, &axes, &out, dry_run)
                .with_context(|| format!("grid over {}", config.display()))?;
            let entries: Vec<_> = results.iter().map(|(e, _)| e).collect();
            print_json(&entries)?;
            if !dry_run && entries.iter().any(|e| !e.all_completed) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Accountant {
            mechanism,
            rounds,
            samples,
            tau,
            sigma,
            delta,
            eps,
            alpha,
            u1,
            u2,
            mu,
        } => match mechanism {
            MechanismArg::Output => {
                let Some(sigma) = sigma else { bail!("--sigma is required for output perturbation") };
                let q = privacy::output_q(rounds, tau, sigma, samples);
                match (eps, delta) {
                    (Some(eps), _) => {
                        let delta = privacy::output_delta_of_eps(rounds, tau, sigma, samples, eps)?;
                        print_json(&json!({ "mechanism": "output", "q": q, "eps": eps, "delta": delta }))?;
                    }
                    (None, Some(delta)) => {
                        let eps = privacy::output_eps_of_delta(rounds, tau, sigma, samples, delta)?;
                        print_json(&json!({ "mechanism": "output", "q": q, "eps": eps, "delta": delta }))?;
                    }
                    (None, None) => bail!("give --delta (for ε) or --eps (for δ)"),
                }
            }
            MechanismArg::Objective => {
                let Some(mu) = mu else { bail!("--mu is required for objective perturbation") };
                let alphas = match alpha.len() {
                    0 => bail!("--alpha is required for objective perturbation"),
                    1 => vec![alpha[0]; rounds],
                    n if n == rounds => alpha,
                    n => bail!("got {n} α values for {rounds} rounds"),
                };
                let eps = privacy::objective_eps(&alphas, u1, u2, samples, mu)?;
                print_json(&json!({ "mechanism": "objective", "eps": eps, "delta": 0.0 }))?;
            }
        },
        Command::Analyze { run, probes } => {
            let report = harness::analyze_run(&run, probes)?;
            print_json(&report)?;
        }
        Command::Compare {
            baseline,
            candidate,
            out,
        } => {
            let b = harness::load_summary(&baseline)?;
            let c = harness::load_summary(&candidate)?;
            let report = harness::compare(&b, &c)?;
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            print_json(&report)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
