//! Sweeps and learning runs. Every policy of a run set sees the same job and
//! price traces; results are pooled over seeds by summing money and work.

use std::cmp::Ordering;

use anyhow::{ensure, Context, Result};
use rayon::prelude::*;
use spotalloc::engine::CostLedger;
use spotalloc::learning::Resolution;
use spotalloc::model::Job;
use spotalloc::policy::{SelfOwnedRule, SplitRule};
use spotalloc::workload::{
    generate_jobs, generate_prices, horizon_end, load_jobs, load_prices, PriceConfig,
    WorkloadConfig,
};
use spotalloc::{
    run, EngineConfig, FixedPolicy, LearnerConfig, Money, OptiLearner, Policy, Rational,
    RegretReport, SpotPriceTrace,
};

use crate::config::{format_fraction, ExperimentConfig, Grid, LearnPolicies, Mode};

const PRICE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;
const LEARNER_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

/// Money and work summed over runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub cost: Money,
    pub work: u64,
    pub spot_money: Money,
    pub spot_work: u64,
    pub self_owned_work: u64,
    /// `R · horizon_end`, summed.
    pub self_owned_slots: u64,
    pub len: u32,
}

impl Tally {
    pub fn add(&mut self, ledger: &CostLedger) {
        self.cost += ledger.total_cost;
        self.work += ledger.total_workload;
        self.spot_money += ledger.spot_money;
        self.spot_work += ledger.spot_work;
        self.self_owned_work += ledger.self_owned_work;
        self.self_owned_slots += ledger.self_owned_capacity as u64 * ledger.horizon_end as u64;
        self.len = ledger.len;
    }

    pub fn alpha(&self) -> Option<f64> {
        (self.work > 0).then(|| self.cost.as_f64() / self.work as f64)
    }

    pub fn gamma(&self) -> Option<f64> {
        (self.self_owned_slots > 0)
            .then(|| self.self_owned_work as f64 / self.self_owned_slots as f64)
    }

    /// Spot money per instance-hour of spot work.
    pub fn p_prime(&self) -> f64 {
        if self.spot_work == 0 {
            0.0
        } else {
            self.spot_money.as_f64() * self.len as f64 / self.spot_work as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    /// Proportion split, tuned self-owned count.
    Ours,
    /// Fixed spot fraction `θ`.
    Theta,
    /// Proportion split with `β*`, self-owned count `min(pool, ⌈z/d⌉, δ)`.
    Intuitive,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::Ours => "ours",
            Family::Theta => "theta",
            Family::Intuitive => "intuitive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRow {
    pub x0: f64,
    pub self_owned: u32,
    pub family: Family,
    pub policy: Policy,
    pub tally: Tally,
}

impl PolicyRow {
    pub fn beta0(&self) -> Option<Rational> {
        match self.policy.self_owned {
            SelfOwnedRule::Tuned { beta0 } => Some(beta0),
            SelfOwnedRule::Intuitive => None,
        }
    }

    pub fn beta(&self) -> Option<Rational> {
        match self.policy.split {
            SplitRule::Proportion { beta } => Some(beta),
            SplitRule::Theta { .. } => None,
        }
    }

    pub fn theta(&self) -> Option<Rational> {
        match self.policy.split {
            SplitRule::Theta { theta } => Some(theta),
            SplitRule::Proportion { .. } => None,
        }
    }

    fn sort_key(&self, other: &Self) -> Ordering {
        self.x0
            .total_cmp(&other.x0)
            .then(self.self_owned.cmp(&other.self_owned))
            .then(self.family.cmp(&other.family))
            .then(self.policy.bid.cmp(&other.policy.bid))
            .then(self.beta0().cmp(&other.beta0()))
            .then(self.beta().cmp(&other.beta()))
            .then(self.theta().cmp(&other.theta()))
    }

    pub fn describe(&self) -> String {
        let mut s = format!("{} bid={}", self.family.label(), self.policy.bid);
        if let Some(b) = self.beta0() {
            s += &format!(" beta0={}", format_fraction(b));
        }
        if let Some(b) = self.beta() {
            s += &format!(" beta={}", format_fraction(b));
        }
        if let Some(t) = self.theta() {
            s += &format!(" theta={}", format_fraction(t));
        }
        s
    }
}

/// Best policy of a `(x0, R, family, bid)` group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub x0: f64,
    pub self_owned: u32,
    pub family: Family,
    pub bid: Money,
    /// The parameter that varies within the group.
    pub param: &'static str,
    pub argmin: Rational,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoRow {
    pub x0: f64,
    pub self_owned: u32,
    pub ours: String,
    pub alpha_ours: f64,
    pub baseline: String,
    pub alpha_baseline: f64,
    /// `1 − α_ours / α_baseline`.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnRow {
    pub x0: f64,
    pub self_owned: u32,
    pub policies: usize,
    pub alpha_learner: f64,
    pub best_fixed: String,
    pub alpha_best_fixed: f64,
    /// `α_learner / α_best_fixed − 1`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretRow {
    pub x0: f64,
    pub self_owned: u32,
    pub seed: u64,
    pub delay: u32,
    pub report: RegretReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaStarRow {
    pub x0: f64,
    pub bid: Money,
    pub beta_star: Rational,
}

/// Weight trajectory of one learning run.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub x0: f64,
    pub self_owned: u32,
    pub seed: u64,
    pub steps: Vec<Resolution>,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub policies: Vec<PolicyRow>,
    pub groups: Vec<GroupRow>,
    pub rho: Vec<RhoRow>,
    pub beta_star: Vec<BetaStarRow>,
    pub learning: Vec<LearnRow>,
    pub regret: Vec<RegretRow>,
    pub trajectory: Option<Trajectory>,
    /// Completion log of the first learning run.
    pub completions: Option<String>,
}

/// Job and price traces of one `(x0, seed)` cell.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub jobs: Vec<Job>,
    pub prices: SpotPriceTrace,
}

pub fn inputs(cfg: &ExperimentConfig, x0: f64, seed: u64, jobs: usize) -> Result<Inputs> {
    let w = &cfg.workload;
    let list = match &w.trace {
        Some(path) => {
            let mut list = load_jobs(path)?;
            list.truncate(jobs);
            list
        }
        None => {
            let horizon = w
                .horizon
                .unwrap_or_else(|| ((jobs as f64 / w.arrival_rate) * 1.25).ceil() as u32 + 100);
            let wc = WorkloadConfig {
                arrival_rate: w.arrival_rate,
                size_base: w.size_base,
                pareto: cfg.pareto(),
                slackness_max: x0,
                parallelism: w.parallelism,
                horizon,
                max_jobs: Some(jobs),
                seed,
            };
            generate_jobs(&wc).context("workload")?
        }
    };
    ensure!(!list.is_empty(), "workload produced no jobs");
    let end = horizon_end(&list);
    let prices = match cfg.price_model()? {
        Some(model) => generate_prices(
            &PriceConfig {
                model,
                seed: seed ^ PRICE_STREAM,
            },
            end,
        )?,
        None => {
            let path = cfg.prices.path.as_ref().context("prices.path")?;
            let trace = load_prices(path)?;
            ensure!(
                trace.len() >= end as usize,
                "price trace {} has {} slots, jobs need {end}",
                path.display(),
                trace.len()
            );
            trace
        }
    };
    Ok(Inputs { jobs: list, prices })
}

/// Runs every policy over the same traces, in policy order.
pub fn evaluate(
    policies: &[Policy],
    input: &Inputs,
    engine: &EngineConfig,
) -> Result<Vec<CostLedger>> {
    policies
        .par_iter()
        .map(|p| {
            run(&input.jobs, &input.prices, &mut FixedPolicy(*p), engine)
                .map(|out| out.ledger)
                .with_context(|| format!("policy {p:?}"))
        })
        .collect()
}

pub fn spot_policy(bid: Money, beta: Rational) -> Policy {
    Policy {
        self_owned: SelfOwnedRule::Intuitive,
        split: SplitRule::Proportion { beta },
        bid,
    }
}

pub fn theta_policy(bid: Money, theta: Rational) -> Policy {
    Policy::theta_baseline(theta, bid, SelfOwnedRule::Intuitive)
}

pub fn self_owned_policy(bid: Money, beta0: Rational, beta_star: Rational) -> Policy {
    Policy {
        self_owned: SelfOwnedRule::Tuned { beta0 },
        split: SplitRule::Proportion { beta: beta_star },
        bid,
    }
}

fn spot_set(grid: &Grid) -> Vec<(Family, Policy)> {
    grid.bids
        .iter()
        .flat_map(|&b| {
            grid.betas
                .iter()
                .map(move |&beta| (Family::Ours, spot_policy(b, beta)))
        })
        .collect()
}

fn theta_set(grid: &Grid) -> Vec<(Family, Policy)> {
    grid.bids
        .iter()
        .flat_map(|&b| {
            grid.thetas
                .iter()
                .map(move |&t| (Family::Theta, theta_policy(b, t)))
        })
        .collect()
}

fn pooled(
    cfg: &ExperimentConfig,
    set: &[(Family, Policy)],
    x0: f64,
    self_owned: u32,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<PolicyRow>> {
    let engine = cfg.engine(self_owned)?;
    let policies: Vec<Policy> = set.iter().map(|(_, p)| *p).collect();
    let mut tallies = vec![Tally::default(); set.len()];
    for &seed in seeds {
        let input = inputs(cfg, x0, seed, jobs)?;
        for (t, ledger) in tallies
            .iter_mut()
            .zip(evaluate(&policies, &input, &engine)?)
        {
            t.add(&ledger);
        }
    }
    Ok(set
        .iter()
        .zip(tallies)
        .map(|(&(family, policy), tally)| PolicyRow {
            x0,
            self_owned,
            family,
            policy,
            tally,
        })
        .collect())
}

fn alpha_of(row: &PolicyRow) -> f64 {
    row.tally.alpha().unwrap_or(f64::INFINITY)
}

/// Lowest-α row among `rows` matching `keep`; ties go to the first.
fn best(rows: &[PolicyRow], keep: impl Fn(&PolicyRow) -> bool) -> Option<&PolicyRow> {
    rows.iter()
        .filter(|r| keep(r))
        .fold(None, |acc: Option<&PolicyRow>, r| match acc {
            Some(b) if alpha_of(b) <= alpha_of(r) => Some(b),
            _ => Some(r),
        })
}

fn rho_row(rows: &[PolicyRow], ours: Family, baseline: Family) -> Option<RhoRow> {
    let o = best(rows, |r| r.family == ours)?;
    let b = best(rows, |r| r.family == baseline)?;
    Some(RhoRow {
        x0: o.x0,
        self_owned: o.self_owned,
        ours: o.describe(),
        alpha_ours: alpha_of(o),
        baseline: b.describe(),
        alpha_baseline: alpha_of(b),
        rho: 1.0 - alpha_of(o) / alpha_of(b),
    })
}

fn groups(rows: &[PolicyRow], family: Family, param: &'static str) -> Vec<GroupRow> {
    let mut bids: Vec<Money> = rows
        .iter()
        .filter(|r| r.family == family)
        .map(|r| r.policy.bid)
        .collect();
    bids.dedup();
    bids.iter()
        .filter_map(|&bid| {
            let r = best(rows, |r| r.family == family && r.policy.bid == bid)?;
            let argmin = match param {
                "beta0" => r.beta0()?,
                _ => r.beta()?,
            };
            Some(GroupRow {
                x0: r.x0,
                self_owned: r.self_owned,
                family,
                bid,
                param,
                argmin,
                alpha: alpha_of(r),
            })
        })
        .collect()
}

/// `β*` per bid: the configured values, or the argmin-`α` `β` of a spot sweep
/// at `R = 0` on the calibration trace.
pub fn calibrate(cfg: &ExperimentConfig, grid: &Grid, x0: f64) -> Result<Vec<Rational>> {
    if let Some(star) = &grid.beta_star {
        return Ok(star.clone());
    }
    let e = &cfg.experiment;
    let rows = pooled(
        cfg,
        &spot_set(grid),
        x0,
        0,
        &[e.calibration_seed],
        e.calibration_jobs,
    )?;
    grid.bids
        .iter()
        .map(|&bid| {
            best(&rows, |r| r.policy.bid == bid)
                .and_then(PolicyRow::beta)
                .context("calibration produced no policy")
        })
        .collect()
}

fn sweep_spot(cfg: &ExperimentConfig, grid: &Grid, report: &mut Report) -> Result<()> {
    let run = &cfg.experiment.sweep_spot;
    let mut set = spot_set(grid);
    set.extend(theta_set(grid));
    for &x0 in &run.job_types {
        for &r in &run.self_owned {
            let rows = pooled(cfg, &set, x0, r, &run.seeds, run.jobs)?;
            report.groups.extend(groups(&rows, Family::Ours, "beta"));
            report
                .rho
                .extend(rho_row(&rows, Family::Ours, Family::Theta));
            report.policies.extend(rows);
        }
    }
    Ok(())
}

fn sweep_selfowned(cfg: &ExperimentConfig, grid: &Grid, report: &mut Report) -> Result<()> {
    let run = &cfg.experiment.sweep_selfowned;
    for &x0 in &run.job_types {
        let star = calibrate(cfg, grid, x0)?;
        record_star(report, grid, x0, &star);
        let mut set = Vec::new();
        for (&bid, &bs) in grid.bids.iter().zip(&star) {
            for &beta0 in &grid.betas {
                set.push((Family::Ours, self_owned_policy(bid, beta0, bs)));
            }
        }
        for (&bid, &bs) in grid.bids.iter().zip(&star) {
            set.push((Family::Intuitive, spot_policy(bid, bs)));
        }
        for &r in &run.self_owned {
            let rows = pooled(cfg, &set, x0, r, &run.seeds, run.jobs)?;
            report.groups.extend(groups(&rows, Family::Ours, "beta0"));
            report
                .rho
                .extend(rho_row(&rows, Family::Ours, Family::Intuitive));
            report.policies.extend(rows);
        }
    }
    Ok(())
}

fn record_star(report: &mut Report, grid: &Grid, x0: f64, star: &[Rational]) {
    report.beta_star.extend(
        grid.bids
            .iter()
            .zip(star)
            .map(|(&bid, &beta_star)| BetaStarRow { x0, bid, beta_star }),
    );
}

/// Learner policy set for pool size `r`.
pub fn learner_policies(
    which: LearnPolicies,
    grid: &Grid,
    star: &[Rational],
    r: u32,
) -> Vec<Policy> {
    let mut out = Vec::new();
    for (&bid, &bs) in grid.bids.iter().zip(star) {
        match (which, r) {
            (LearnPolicies::BetaStar, 0) => out.push(spot_policy(bid, bs)),
            (LearnPolicies::BetaStar, _) => out.push(self_owned_policy(bid, bs, bs)),
            (LearnPolicies::Grid, 0) => out.extend(grid.betas.iter().map(|&b| spot_policy(bid, b))),
            (LearnPolicies::Grid, _) => {
                out.extend(grid.betas.iter().map(|&b0| self_owned_policy(bid, b0, bs)))
            }
        }
    }
    out
}

fn learn(cfg: &ExperimentConfig, grid: &Grid, report: &mut Report) -> Result<()> {
    let run_cfg = &cfg.experiment.learn;
    for &x0 in &run_cfg.job_types {
        let star = match cfg.experiment.learn_policies {
            LearnPolicies::BetaStar => {
                let star = calibrate(cfg, grid, x0)?;
                record_star(report, grid, x0, &star);
                star
            }
            LearnPolicies::Grid => grid
                .beta_star
                .clone()
                .map_or_else(|| calibrate(cfg, grid, x0), Ok)?,
        };
        for &r in &run_cfg.self_owned {
            let engine = cfg.engine(r)?;
            let policies = learner_policies(cfg.experiment.learn_policies, grid, &star, r);
            let mut set: Vec<(Family, Policy)> =
                policies.iter().map(|p| (Family::Ours, *p)).collect();
            set.extend(theta_set(grid));
            let all: Vec<Policy> = set.iter().map(|(_, p)| *p).collect();
            let mut learner_tally = Tally::default();
            let mut tallies = vec![Tally::default(); set.len()];
            for &seed in &run_cfg.seeds {
                let input = inputs(cfg, x0, seed, run_cfg.jobs)?;
                let delay = input.jobs.iter().map(|j| j.deadline).max().unwrap_or(1);
                let mut learner = OptiLearner::new(LearnerConfig {
                    policies: policies.clone(),
                    delay,
                    seed: seed ^ LEARNER_STREAM,
                    engine,
                    record_weights: report.trajectory.is_none(),
                })?;
                let out = run(&input.jobs, &input.prices, &mut learner, &engine)?;
                learner.finish(&input.prices)?;
                learner_tally.add(&out.ledger);
                report.regret.push(RegretRow {
                    x0,
                    self_owned: r,
                    seed,
                    delay,
                    report: learner.regret_report(cfg.experiment.confidence),
                });
                if report.trajectory.is_none() {
                    report.completions = Some(out.completion_log());
                    report.trajectory = Some(Trajectory {
                        x0,
                        self_owned: r,
                        seed,
                        steps: learner.history().to_vec(),
                    });
                }
                for (t, ledger) in tallies.iter_mut().zip(evaluate(&all, &input, &engine)?) {
                    t.add(&ledger);
                }
            }
            let rows: Vec<PolicyRow> = set
                .iter()
                .zip(tallies)
                .map(|(&(family, policy), tally)| PolicyRow {
                    x0,
                    self_owned: r,
                    family,
                    policy,
                    tally,
                })
                .collect();
            let alpha_learner = learner_tally.alpha().unwrap_or(f64::INFINITY);
            let fixed = best(&rows, |r| r.family == Family::Ours).context("no learner policy")?;
            let theta = best(&rows, |r| r.family == Family::Theta).context("no theta baseline")?;
            report.learning.push(LearnRow {
                x0,
                self_owned: r,
                policies: policies.len(),
                alpha_learner,
                best_fixed: fixed.describe(),
                alpha_best_fixed: alpha_of(fixed),
                gap: alpha_learner / alpha_of(fixed) - 1.0,
            });
            report.rho.push(RhoRow {
                x0,
                self_owned: r,
                ours: "learner".into(),
                alpha_ours: alpha_learner,
                baseline: theta.describe(),
                alpha_baseline: alpha_of(theta),
                rho: 1.0 - alpha_learner / alpha_of(theta),
            });
            report.policies.extend(rows);
        }
    }
    Ok(())
}

/// Runs the configured mode.
pub fn execute(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let mut report = Report::default();
    match cfg.experiment.mode {
        Mode::SweepSpot => sweep_spot(cfg, &grid, &mut report)?,
        Mode::SweepSelfowned => sweep_selfowned(cfg, &grid, &mut report)?,
        Mode::Learn => learn(cfg, &grid, &mut report)?,
    }
    report.policies.sort_by(PolicyRow::sort_key);
    Ok(report)
}
