//! `kenergy`: runs the experiment suites and writes CSV tables, SVG plots
//! and a pass/fail summary to an output directory.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use kenergy_core::experiments::{
    geodesic_suite, report_suite, ExperimentConfig, Suite, SuiteOutput,
};
use kenergy_core::SymplecticPotential;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Geodesic,
    Convexity,
    Chen,
    Bergman,
    Lichnerowicz,
    Orbit,
    Uniqueness,
    Report,
    /// Every suite in turn.
    All,
}

impl Command {
    fn suites(self) -> Vec<Suite> {
        match self {
            Command::Geodesic => vec![Suite::Geodesic],
            Command::Convexity => vec![Suite::Convexity],
            Command::Chen => vec![Suite::Chen],
            Command::Bergman => vec![Suite::Bergman],
            Command::Lichnerowicz => vec![Suite::Lichnerowicz],
            Command::Orbit => vec![Suite::Orbit],
            Command::Uniqueness => vec![Suite::Uniqueness],
            Command::Report => vec![Suite::Report],
            Command::All => Suite::ALL.to_vec(),
        }
    }
}

/// Numerical experiments on the K-energy of toric metrics on the sphere and
/// on weighted Bergman kernels of the disc.
#[derive(Debug, Parser)]
#[command(name = "kenergy", version)]
struct Cli {
    command: Command,
    /// Plain-text `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Potential CSV (`x,f`) for `report`, or the first endpoint for `geodesic`.
    #[arg(long)]
    potential: Option<PathBuf>,
    /// Second endpoint CSV for `geodesic`.
    #[arg(long)]
    potential_b: Option<PathBuf>,
}

/// Errors in the command line, configuration or inputs.
const EXIT_USAGE: u8 = 2;
/// Some asserted property failed.
const EXIT_VIOLATION: u8 = 1;

fn load_potential(path: &Path) -> Result<SymplecticPotential> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SymplecticPotential::from_csv_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.display().to_string();
    }
    if let Some(p) = &cli.potential {
        cfg.potential_a = Some(p.display().to_string());
    }
    if let Some(p) = &cli.potential_b {
        cfg.potential_b = Some(p.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig, suite: Suite) -> Result<SuiteOutput> {
    let a = cfg
        .potential_a
        .as_deref()
        .map(|p| load_potential(Path::new(p)))
        .transpose()?;
    let b = cfg
        .potential_b
        .as_deref()
        .map(|p| load_potential(Path::new(p)))
        .transpose()?;
    let out = match suite {
        Suite::Geodesic => match (a, b) {
            (Some(a), Some(b)) => geodesic_suite(cfg, Some((a, b))),
            (None, None) => geodesic_suite(cfg, None),
            _ => anyhow::bail!("geodesic needs both --potential and --potential-b, or neither"),
        },
        Suite::Report => report_suite(cfg, a),
        s => s.run(cfg),
    };
    out.with_context(|| format!("{} suite", name(suite)))
}

fn name(s: Suite) -> String {
    format!("{s:?}").to_lowercase()
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outputs: &[SuiteOutput]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut summary = String::new();
    for o in outputs {
        for t in &o.tables {
            let csv = t.to_csv();
            fs::write(dir.join(&t.file), &csv).with_context(|| format!("writing {}", t.file))?;
            if let (true, Some((x, y))) = (cfg.svg, t.plot) {
                let stem = t.file.trim_end_matches(".csv");
                if let Some(svg) = svg::line_plot(&csv, x, y, stem) {
                    fs::write(dir.join(format!("{stem}.svg")), svg)?;
                }
            }
        }
        summary.push_str(&o.summary());
    }
    let failed = outputs
        .iter()
        .flat_map(|o| &o.assertions)
        .filter(|a| !a.passed)
        .count();
    let total: usize = outputs.iter().map(|o| o.assertions.len()).sum();
    summary.push_str(&format!(
        "{} of {total} assertions passed (seed {})\n",
        total - failed,
        cfg.seed
    ));
    fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let mut outputs = Vec::new();
    for s in cli.command.suites() {
        match run(&cfg, s) {
            Ok(o) => {
                print!("{}", o.summary());
                outputs.push(o);
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    if let Err(e) = write_outputs(Path::new(&cfg.out), &cfg, &outputs) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    if outputs.iter().all(SuiteOutput::passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATION)
    }
}
