//! Experiment configuration: a TOML document with `[experiment]`, `[engine]`,
//! `[workload]`, `[prices]` and `[grid]` tables. See `presets/paper-v-a.toml`
//! for the full schema with defaults.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use spotalloc::model::slots_per_hour;
use spotalloc::workload::{BoundedPareto, PriceModel};
use spotalloc::{EngineConfig, Money, Rational};

pub const PAPER_V_A: &str = include_str!("../../../presets/paper-v-a.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SweepSpot,
    SweepSelfowned,
    Learn,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::SweepSpot => "sweep-spot",
            Mode::SweepSelfowned => "sweep-selfowned",
            Mode::Learn => "learn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnPolicies {
    BetaStar,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub jobs: usize,
    /// Deadline stretch bounds `x₀`, one run set per value.
    pub job_types: Vec<f64>,
    /// Self-owned pool sizes `R`.
    pub self_owned: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub mode: Mode,
    pub calibration_seed: u64,
    pub calibration_jobs: usize,
    pub confidence: f64,
    pub learn_policies: LearnPolicies,
    #[serde(rename = "sweep-spot")]
    pub sweep_spot: RunSection,
    #[serde(rename = "sweep-selfowned")]
    pub sweep_selfowned: RunSection,
    pub learn: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub slot_minutes: u32,
    pub on_demand_price: String,
    pub self_owned_price: String,
    pub release_on_completion: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoSection {
    pub shape: f64,
    pub scale: f64,
    pub location: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub arrival_rate: f64,
    pub size_base: u64,
    pub parallelism: u32,
    /// Arrival window in slots; derived from `jobs / arrival_rate` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,
    /// Job trace file replacing the generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    pub pareto: ParetoSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriceKind {
    Exponential,
    Constant,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSection {
    pub model: PriceKind,
    /// Exponential mean, or the constant price.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub bids: Vec<String>,
    /// Shared by `β` and `β₀`: `"i/12"` fractions or decimals.
    pub betas: Vec<String>,
    pub thetas: Vec<String>,
    /// Pinned `β*` per bid; calibrated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_star: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub engine: EngineSection,
    pub workload: WorkloadSection,
    pub prices: PriceSection,
    pub grid: GridSection,
}

/// Parsed grid values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub bids: Vec<Money>,
    pub betas: Vec<Rational>,
    pub thetas: Vec<Rational>,
    pub beta_star: Option<Vec<Rational>>,
}

/// Parses `"a/b"` or a decimal literal into an exact fraction.
pub fn parse_fraction(s: &str) -> Result<Rational> {
    let t = s.trim();
    if t.contains('/') {
        return Rational::from_str(t).map_err(|e| anyhow::anyhow!("bad fraction {t:?}: {e}"));
    }
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    ensure!(
        !(int.is_empty() && frac.is_empty())
            && int.bytes().all(|b| b.is_ascii_digit())
            && frac.bytes().all(|b| b.is_ascii_digit())
            && frac.len() <= 12,
        "bad decimal {t:?}"
    );
    let den = 10i64.pow(frac.len() as u32);
    let num = format!("{int}{frac}")
        .parse::<i64>()
        .context("decimal out of range")?;
    Ok(Rational::new(num, den))
}

pub fn format_fraction(r: Rational) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn parse_money(field: &str, s: &str) -> Result<Money> {
    Money::from_str(s).with_context(|| format!("{field}: bad amount {s:?}"))
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<ExperimentConfig> {
        match name {
            "paper-v-a" => ExperimentConfig::from_toml(PAPER_V_A),
            other => bail!("unknown preset {other:?} (available: paper-v-a)"),
        }
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn run(&self) -> &RunSection {
        match self.experiment.mode {
            Mode::SweepSpot => &self.experiment.sweep_spot,
            Mode::SweepSelfowned => &self.experiment.sweep_selfowned,
            Mode::Learn => &self.experiment.learn,
        }
    }

    pub fn run_mut(&mut self) -> &mut RunSection {
        match self.experiment.mode {
            Mode::SweepSpot => &mut self.experiment.sweep_spot,
            Mode::SweepSelfowned => &mut self.experiment.sweep_selfowned,
            Mode::Learn => &mut self.experiment.learn,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.grid;
        let bids = g
            .bids
            .iter()
            .map(|b| parse_money("grid.bids", b))
            .collect::<Result<Vec<_>>>()?;
        let frac = |field: &str, v: &[String]| -> Result<Vec<Rational>> {
            v.iter()
                .map(|s| parse_fraction(s).with_context(|| field.to_string()))
                .collect()
        };
        let betas = frac("grid.betas", &g.betas)?;
        let thetas = frac("grid.thetas", &g.thetas)?;
        let beta_star = g
            .beta_star
            .as_ref()
            .map(|v| frac("grid.beta_star", v))
            .transpose()?;
        Ok(Grid {
            bids,
            betas,
            thetas,
            beta_star,
        })
    }

    pub fn engine(&self, self_owned: u32) -> Result<EngineConfig> {
        let len = slots_per_hour(self.engine.slot_minutes).context("engine.slot_minutes")?;
        let p = parse_money("engine.on_demand_price", &self.engine.on_demand_price)?;
        let mut cfg = EngineConfig::new(len, p, self_owned);
        cfg.self_owned_price =
            parse_money("engine.self_owned_price", &self.engine.self_owned_price)?;
        cfg.release_on_completion = self.engine.release_on_completion;
        cfg.validate().context("engine")?;
        Ok(cfg)
    }

    pub fn pareto(&self) -> BoundedPareto {
        let p = self.workload.pareto;
        BoundedPareto {
            shape: p.shape,
            scale: p.scale,
            location: p.location,
            min: p.min,
            max: p.max,
        }
    }

    /// Price model for generated traces; `None` for file traces.
    pub fn price_model(&self) -> Result<Option<PriceModel>> {
        let mean = || {
            self.prices
                .mean
                .context("prices.mean is required for this model")
        };
        Ok(match self.prices.model {
            PriceKind::Exponential => Some(PriceModel::Exponential { mean: mean()? }),
            PriceKind::Constant => Some(PriceModel::Constant {
                price: Money::from_f64(mean()?),
            }),
            PriceKind::File => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        for (name, run) in [
            ("experiment.sweep-spot", &e.sweep_spot),
            ("experiment.sweep-selfowned", &e.sweep_selfowned),
            ("experiment.learn", &e.learn),
        ] {
            ensure!(!run.seeds.is_empty(), "{name}.seeds must not be empty");
            ensure!(run.jobs > 0, "{name}.jobs must be positive");
            ensure!(
                !run.job_types.is_empty(),
                "{name}.job_types must not be empty"
            );
            ensure!(
                run.job_types.iter().all(|x| x.is_finite() && *x >= 1.0),
                "{name}.job_types entries must be >= 1"
            );
            ensure!(
                !run.self_owned.is_empty(),
                "{name}.self_owned must not be empty"
            );
        }
        ensure!(
            e.calibration_jobs > 0,
            "experiment.calibration_jobs must be positive"
        );
        ensure!(
            e.confidence > 0.0 && e.confidence < 1.0,
            "experiment.confidence must lie in (0, 1)"
        );
        ensure!(
            self.workload.arrival_rate > 0.0 && self.workload.arrival_rate.is_finite(),
            "workload.arrival_rate must be positive"
        );
        ensure!(
            self.workload.parallelism > 0,
            "workload.parallelism must be positive"
        );
        self.pareto().validate().context("workload.pareto")?;
        match self.prices.model {
            PriceKind::File => ensure!(
                self.prices.path.is_some(),
                "prices.path is required for model = \"file\""
            ),
            _ => {
                let mean = self.prices.mean.context("prices.mean is required")?;
                ensure!(
                    mean > 0.0 && mean.is_finite(),
                    "prices.mean must be positive"
                );
            }
        }
        self.engine(0)?;
        let grid = self.grid()?;
        ensure!(!grid.bids.is_empty(), "grid.bids must not be empty");
        ensure!(!grid.betas.is_empty(), "grid.betas must not be empty");
        ensure!(!grid.thetas.is_empty(), "grid.thetas must not be empty");
        ensure!(
            grid.bids.iter().all(|b| *b > Money::ZERO),
            "grid.bids must be positive"
        );
        let zero = Rational::from_integer(0);
        let one = Rational::from_integer(1);
        ensure!(
            grid.betas.iter().all(|b| *b >= zero && *b < one),
            "grid.betas must lie in [0, 1)"
        );
        ensure!(
            grid.thetas.iter().all(|t| *t >= zero && *t <= one),
            "grid.thetas must lie in [0, 1]"
        );
        if let Some(star) = &grid.beta_star {
            ensure!(
                star.len() == grid.bids.len(),
                "grid.beta_star needs one entry per bid ({} given, {} bids)",
                star.len(),
                grid.bids.len()
            );
        }
        Ok(())
    }
}
