use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gbt::harness::{
    bench_csv, cmd_bench, cmd_run, cmd_validate, load_case_scene, parse_list, CaseConfig, HarnessError,
    ValidateOptions,
};
use gbt::parallel::Mode;

#[derive(Parser)]
#[command(name = "gbt", version, about = "Gaussian beam tracing sound field solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monopole over a rigid plate against the image-source solution.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        freq: Option<f64>,
        /// Scale the solver's sound speed (negative control).
        #[arg(long, default_value_t = 1.0)]
        speed_factor: f64,
        /// Per-point error CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Full pipeline run with field, timing and heatmap output.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        chunk_budget: Option<usize>,
    },
    /// Timing sweep over ray counts, modes and worker counts.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        rays: String,
        #[arg(long)]
        modes: String,
        #[arg(long)]
        workers: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &PathBuf, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<bool, HarnessError> {
    match command {
        Command::Validate {
            config,
            freq,
            speed_factor,
            csv,
        } => {
            let cfg = CaseConfig::load(&config)?;
            let report = cmd_validate(&cfg, &ValidateOptions { speed_factor, freq_hz: freq })?;
            print!("{}", report.summary());
            if let Some(path) = csv {
                write(&path, &report.csv)?;
            }
            Ok(report.passed())
        }
        Command::Run {
            config,
            scene,
            out,
            mode,
            workers,
            chunk_budget,
        } => {
            let mut cfg = CaseConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if chunk_budget.is_some() {
                cfg.chunk_budget_bytes = chunk_budget;
            }
            cfg.validate()?;
            let report = cmd_run(&cfg, &scene, &out)?;
            print!("{}", report.summary());
            println!(
                "rt {:.3} s, gbs {:.3} s, total {:.3} s",
                report.timings.rt_seconds, report.timings.gbs_seconds, report.timings.total_seconds
            );
            Ok(true)
        }
        Command::Bench {
            config,
            scene,
            rays,
            modes,
            workers,
            out,
        } => {
            let cfg = CaseConfig::load(&config)?;
            let scene = load_case_scene(&cfg, &scene)?;
            let rays: Vec<usize> = parse_list(&rays, "ray count")?;
            let modes: Vec<Mode> = parse_list(&modes, "mode")?;
            let workers: Vec<usize> = parse_list(&workers, "worker")?;
            if workers.contains(&0) {
                return Err(HarnessError::Usage("worker counts must be positive".into()));
            }
            let rows = cmd_bench(&cfg, &scene, &rays, &modes, &workers)?;
            let csv = bench_csv(&rows);
            print!("{csv}");
            write(&out, &csv)?;
            Ok(true)
        }
    }
}
