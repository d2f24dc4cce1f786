use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use spotalloc_cli::{emit, execute, ExperimentConfig, Mode};

/// Sweep allocation policies or learn over them on synthetic or recorded traces.
#[derive(Debug, Parser)]
#[command(name = "spotalloc", version)]
struct Args {
    /// TOML config file (a previous run's manifest.txt works too).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config.
    #[arg(long, value_parser = ["paper-v-a"])]
    preset: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Jobs per run.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text).with_context(|| path.display().to_string())?
        }
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => bail!("one of --config or --preset is required"),
    };
    if let Some(mode) = args.mode {
        cfg.experiment.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.run_mut().seeds = vec![seed];
    }
    if let Some(jobs) = args.jobs {
        cfg.run_mut().jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let args = Args::parse();
    let cfg = load(&args)?;
    let started = Instant::now();
    let report = execute(&cfg)?;
    for path in emit::write_all(&args.out, &cfg, &report)? {
        eprintln!("wrote {}", path.display());
    }
    for r in &report.rho {
        println!(
            "x0={} R={} rho={:.4} ({} vs {})",
            r.x0, r.self_owned, r.rho, r.ours, r.baseline
        );
    }
    for l in &report.learning {
        println!(
            "x0={} R={} learner alpha={:.6} best fixed={:.6} gap={:.4}",
            l.x0, l.self_owned, l.alpha_learner, l.alpha_best_fixed, l.gap
        );
    }
    eprintln!(
        "{} finished in {:.1?}",
        cfg.experiment.mode,
        started.elapsed()
    );
    Ok(())
}
