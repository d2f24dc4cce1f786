//! Deterministic CSV tables and the run manifest.
//!
//! `manifest.txt` is a valid config: `spotalloc --config manifest.txt`
//! reproduces every table byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use spotalloc::Rational;

use crate::config::{format_fraction, ExperimentConfig};
use crate::experiment::{Report, Trajectory};

fn frac(r: Option<Rational>) -> String {
    r.map(format_fraction).unwrap_or_default()
}

fn num(v: f64) -> String {
    format!("{v:.9}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().context("flush csv")?)?)
}

/// `x0` is the deadline stretch bound of the job type.
pub fn policies_csv(report: &Report) -> Result<String> {
    table(
        &[
            "x0",
            "self_owned",
            "family",
            "bid",
            "beta0",
            "beta",
            "theta",
            "alpha",
            "gamma",
            "p_prime",
            "total_cost",
            "total_workload",
        ],
        report.policies.iter().map(|r| {
            vec![
                r.x0.to_string(),
                r.self_owned.to_string(),
                r.family.label().into(),
                r.policy.bid.to_string(),
                frac(r.beta0()),
                frac(r.beta()),
                frac(r.theta()),
                opt(r.tally.alpha()),
                opt(r.tally.gamma()),
                num(r.tally.p_prime()),
                r.tally.cost.to_string(),
                r.tally.work.to_string(),
            ]
        }),
    )
}

pub fn rho_csv(report: &Report) -> Result<String> {
    table(
        &[
            "x0",
            "self_owned",
            "ours",
            "alpha_ours",
            "baseline",
            "alpha_baseline",
            "rho",
        ],
        report.rho.iter().map(|r| {
            vec![
                r.x0.to_string(),
                r.self_owned.to_string(),
                r.ours.clone(),
                num(r.alpha_ours),
                r.baseline.clone(),
                num(r.alpha_baseline),
                num(r.rho),
            ]
        }),
    )
}

pub fn groups_csv(report: &Report) -> Result<String> {
    table(
        &[
            "x0",
            "self_owned",
            "family",
            "bid",
            "param",
            "argmin",
            "alpha",
        ],
        report.groups.iter().map(|g| {
            vec![
                g.x0.to_string(),
                g.self_owned.to_string(),
                g.family.label().into(),
                g.bid.to_string(),
                g.param.into(),
                format_fraction(g.argmin),
                num(g.alpha),
            ]
        }),
    )
}

pub fn beta_star_csv(report: &Report) -> Result<String> {
    table(
        &["x0", "bid", "beta_star"],
        report.beta_star.iter().map(|b| {
            vec![
                b.x0.to_string(),
                b.bid.to_string(),
                format_fraction(b.beta_star),
            ]
        }),
    )
}

pub fn learning_csv(report: &Report) -> Result<String> {
    table(
        &[
            "x0",
            "self_owned",
            "policies",
            "alpha_learner",
            "best_fixed",
            "alpha_best_fixed",
            "gap",
        ],
        report.learning.iter().map(|l| {
            vec![
                l.x0.to_string(),
                l.self_owned.to_string(),
                l.policies.to_string(),
                num(l.alpha_learner),
                l.best_fixed.clone(),
                num(l.alpha_best_fixed),
                num(l.gap),
            ]
        }),
    )
}

pub fn regret_csv(report: &Report) -> Result<String> {
    table(
        &[
            "x0",
            "self_owned",
            "seed",
            "delay",
            "resolved",
            "avg_regret",
            "bound",
            "best_policy",
        ],
        report.regret.iter().map(|r| {
            vec![
                r.x0.to_string(),
                r.self_owned.to_string(),
                r.seed.to_string(),
                r.delay.to_string(),
                r.report.resolved.to_string(),
                num(r.report.avg_regret),
                num(r.report.bound),
                r.report.best_policy.to_string(),
            ]
        }),
    )
}

/// One row per resolution: `t, job_id, chosen, c_chosen, argmin, w_0 … w_{n−1}`.
pub fn weights_csv(trajectory: &Trajectory) -> Result<String> {
    let n = trajectory.steps.first().map_or(0, |s| s.costs.len());
    let mut header: Vec<String> = ["t", "job_id", "chosen", "c_chosen", "argmin"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n).map(|i| format!("w{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table(
        &header,
        trajectory.steps.iter().map(|s| {
            let mut row = vec![
                s.t.to_string(),
                s.job_id.to_string(),
                s.chosen.to_string(),
                s.costs[s.chosen].to_string(),
                s.argmin().to_string(),
            ];
            if let Some(w) = &s.weights {
                row.extend(w.iter().map(|v| format!("{v:.12e}")));
            }
            row
        }),
    )
}

pub fn manifest(cfg: &ExperimentConfig) -> String {
    let run = cfg.run();
    let seeds: Vec<String> = run.seeds.iter().map(u64::to_string).collect();
    format!(
        "# spotalloc {}\n# mode = {}\n# seeds = {}\n# reproduce: spotalloc --config manifest.txt --out <dir>\n\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.experiment.mode,
        seeds.join(","),
        cfg.to_toml()
    )
}

fn write(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(())
}

/// Writes every table of `report` into `dir`, returning the paths written.
pub fn write_all(dir: &Path, cfg: &ExperimentConfig, report: &Report) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    write(dir, "manifest.txt", &manifest(cfg), &mut written)?;
    write(dir, "policies.csv", &policies_csv(report)?, &mut written)?;
    write(dir, "rho.csv", &rho_csv(report)?, &mut written)?;
    if !report.groups.is_empty() {
        write(dir, "groups.csv", &groups_csv(report)?, &mut written)?;
    }
    if !report.beta_star.is_empty() {
        write(dir, "beta_star.csv", &beta_star_csv(report)?, &mut written)?;
    }
    if !report.learning.is_empty() {
        write(dir, "learning.csv", &learning_csv(report)?, &mut written)?;
        write(dir, "regret.csv", &regret_csv(report)?, &mut written)?;
    }
    if let Some(t) = &report.trajectory {
        write(dir, "weights.csv", &weights_csv(t)?, &mut written)?;
    }
    if let Some(log) = &report.completions {
        write(dir, "completions.txt", log, &mut written)?;
    }
    Ok(written)
}
