use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nanomorph::error::{Error, Result};

use nanomorph_cli::commands::{
    cmd_estimate, cmd_fit, cmd_presets, cmd_quench, cmd_simulate, EstimateInput, EstimateRequest,
    StatKind,
};
use nanomorph_cli::config::{load_config, RunConfig};

#[derive(Parser)]
#[command(
    name = "nanomorph",
    version,
    about = "Simulate, estimate, fit, and physically validate two-phase nanomorphologies"
)]
struct Cli {
    /// Run configuration file (flat key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config's `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Cap on worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a morphology and store the grids and the marked sphere list
    Simulate,
    /// Summary statistics of a stored grid or sphere list
    Estimate {
        /// Voxel grid input (MVG1)
        #[arg(long, conflicts_with = "spheres")]
        grid: Option<PathBuf>,
        /// Marked sphere list input (CSV)
        #[arg(long)]
        spheres: Option<PathBuf>,
        /// Comma-separated subset of: scd,chords,volume,connectivity,pair,markcorr
        #[arg(long, value_delimiter = ',')]
        stats: Vec<String>,
    },
    /// Minimum-contrast parameter search against a target grid
    Fit {
        /// Target voxel grid (MVG1)
        #[arg(long)]
        target: PathBuf,
    },
    /// Solve the exciton diffusion equation and print the quenching efficiency
    Quench {
        /// Voxel grid input (MVG1)
        #[arg(long)]
        grid: PathBuf,
        /// Also store the solved exciton field (MEF1) at this path
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Write the bundled film presets into the output directory
    Presets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 config error, 3 numeric failure, 4 I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParam(_) => 2,
        Error::Infeasible(_) | Error::Degenerate(_) | Error::NoConvergence { .. } => 3,
        Error::Format(_) | Error::Io(_) => 4,
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out)?;

    match &cli.cmd {
        Cmd::Simulate => {
            let cfg = required_config(&cli)?;
            let sim = cmd_simulate(&cfg, &cli.out)?;
            println!(
                "simulated {} spheres; volume fraction {:.4} (macro {:.4})",
                sim.spheres.len(),
                sim.grid.volume_fraction(),
                sim.macro_grid.volume_fraction()
            );
            println!("wrote grid.mvg1, macro_grid.mvg1, spheres.csv in {}", cli.out.display());
        }
        Cmd::Estimate { grid, spheres, stats } => {
            let input = match (grid, spheres) {
                (Some(g), None) => EstimateInput::Grid(g.clone()),
                (None, Some(s)) => EstimateInput::Spheres(s.clone()),
                _ => {
                    return Err(Error::InvalidParam(
                        "estimate needs exactly one of --grid or --spheres".into(),
                    ))
                }
            };
            let stats = stats
                .iter()
                .map(|s| StatKind::parse(s))
                .collect::<Result<Vec<_>>>()?;
            let window_xy = optional_config(&cli)?
                .map(|cfg| (cfg.window.nx as f64, cfg.window.ny as f64));
            let req = EstimateRequest { input, stats, window_xy };
            for path in cmd_estimate(&req, &cli.out)? {
                println!("wrote {}", path.display());
            }
        }
        Cmd::Fit { target } => {
            let cfg = required_config(&cli)?;
            let fit = cmd_fit(&cfg, target, &cli.out)?;
            let b = &fit.result.best;
            println!(
                "best vertex: lambda_c = {}, a = {}, b = {}, p = {} (objective {:.6})",
                b.lambda_c, b.a, b.b, b.p, fit.result.objective
            );
            println!(
                "derived: lambda_d = {:.6e}, birth_rate = {:.6e}",
                fit.result.lambda_d, fit.result.birth_rate
            );
            for path in &fit.files {
                println!("wrote {}", path.display());
            }
        }
        Cmd::Quench { grid, field } => {
            let cfg = required_config(&cli)?;
            let eta = cmd_quench(&cfg, grid, field.as_deref(), &cli.out)?;
            println!("eta_Q = {eta:.4}");
            if let Some(path) = field {
                println!("wrote {}", path.display());
            }
        }
        Cmd::Presets => {
            for path in cmd_presets(&cli.out)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn required_config(cli: &Cli) -> Result<RunConfig> {
    optional_config(cli)?
        .ok_or_else(|| Error::InvalidParam("--config is required for this command".into()))
}

fn optional_config(cli: &Cli) -> Result<Option<RunConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(Some(cfg))
}
