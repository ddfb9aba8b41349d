//! `halfkg run <config>` runs one named experiment and writes CSV tables plus a
//! `summary.json`; `halfkg plot <report>` renders the report's SVG figures.
//!
//! Exit codes: 0 all checks passed, 1 some check failed, 2 invalid config or
//! usage, 3 numerical failure (see `diagnostic.json`), 4 I/O or plotting error.

mod config;
mod experiments;
mod plot;
mod report;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "halfkg", version, about = "Dispersion experiments for half Klein-Gordon and cubic Dirac evolutions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Render SVG plots from a report (summary.json or its directory).
    Plot { report: PathBuf },
}

fn set_threads(n: usize) -> anyhow::Result<()> {
    if n <= 1 {
        halfkg::exec::set_parallel(false);
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(path: &Path, cli: &Cli) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match ExperimentConfig::parse(&text, &path.display().to_string()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let dir = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(&cfg.experiment));
    match experiments::run(&cfg) {
        Ok(outcome) => match report::write_report(&dir, &cfg, &outcome) {
            Ok(summary) => {
                for c in &summary.checks {
                    println!("{} {}: {:e} (want {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.condition);
                }
                println!("report: {}", dir.join("summary.json").display());
                if summary.pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => {
                eprintln!("writing report: {e:#}");
                ExitCode::from(4)
            }
        },
        Err(e) => {
            eprintln!("{}: numerical failure: {e}", cfg.experiment);
            let dump = serde_json::json!({ "error": e.to_string(), "detail": format!("{e:?}"), "config": cfg, "versions": report::versions() });
            let written = std::fs::create_dir_all(&dir).map_err(anyhow::Error::from).and_then(|_| {
                let text = serde_json::to_string_pretty(&dump)? + "\n";
                report::write_atomic(&dir.join("diagnostic.json"), text.as_bytes())
            });
            match written {
                Ok(()) => eprintln!("diagnostic: {}", dir.join("diagnostic.json").display()),
                Err(w) => eprintln!("could not write diagnostic: {w:#}"),
            }
            ExitCode::from(3)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = set_threads(n) {
            eprintln!("--threads {n}: {e}");
            return ExitCode::from(2);
        }
    }
    match &cli.cmd {
        Cmd::Run { config } => run(config, &cli),
        Cmd::Plot { report } => match plot::plot(report, cli.out.as_deref()) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("plot: {e:#}");
                ExitCode::from(4)
            }
        },
    }
}
