use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latticeopt_cli::{commands, init_threads, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "latticeopt", version, about = "Graded lattice topology optimization")]
struct Cli {
    /// JSON run configuration; defaults apply to missing keys
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set optimize.problem=cantilever`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (same as `--set paths.output=DIR`)
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the lattice and tabulate its homogenized stiffness
    Homogenize,
    /// Monte Carlo density sweep and sigmoid fit of the density map
    FitDensity,
    /// Build the dataset and train the material network
    Train,
    /// Run the topology optimization
    Optimize,
    /// Re-check the artifacts in the output directory
    Validate,
    /// Print the resolved configuration
    Config,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut overrides = cli.overrides;
    if let Some(o) = cli.output {
        overrides.push(format!("paths.output={}", serde_json::to_string(&o).expect("path")));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    init_threads()?;
    let hash = cfg.hash();
    match cli.command {
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            println!("# config_hash={hash}");
        }
        Command::Homogenize => {
            let rows = commands::homogenize(&cfg)?;
            for r in &rows {
                println!("a={:.4} E={} nu={}  delta_iso={:.4} E*={:.6e} nu*={:.4}", r.a, r.e, r.nu, r.delta_iso, r.e_star, r.nu_star);
            }
        }
        Command::FitDensity => {
            let (fit, samples) = commands::fit_density(&cfg)?;
            println!("fit c1={} c2={} c3={} rms={:.3e} ({} samples)", fit.c1, fit.c2, fit.c3, fit.rms, samples.len());
        }
        Command::Train => {
            let (_, rep) = commands::train_net(&cfg)?;
            println!(
                "trained {} epochs (best {}): train MSE {:.3e}, validation MSE {}",
                rep.epochs_run,
                rep.best_epoch,
                rep.train_mse,
                rep.validation_mse.map_or("n/a".into(), |v| format!("{v:.3e}"))
            );
        }
        Command::Optimize => {
            let (s, _) = commands::optimize(&cfg)?;
            println!(
                "{}: {} iterations (converged: {}), compliance {:.6e}, improvement {:.1}%, volume {:.6}",
                s.problem,
                s.iterations,
                s.converged,
                s.compliance,
                100.0 * s.improvement,
                s.volume_fraction
            );
        }
        Command::Validate => {
            let checks = commands::validate(&cfg)?;
            let mut failed = 0;
            for c in &checks {
                match &c.result {
                    Ok(()) => println!("ok    {}", c.name),
                    Err(m) => {
                        failed += 1;
                        println!("FAIL  {}: {m}", c.name);
                    }
                }
            }
            if failed > 0 {
                return Err(latticeopt_cli::CliError::Invariant(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
