//! Synthetic job streams and spot-price traces, plus a line-oriented text
//! format so experiments can be replayed from files.
//!
//! Job file: one `id arrival deadline size parallelism` record per line.
//! Price file: one decimal price per line, in slot order.
//! Blank lines and anything after `#` are ignored in both.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, Uniform};
use thiserror::Error;

use crate::model::{Job, ModelError, Money, Slot, SpotPriceTrace};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload config: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: Box<WorkloadError>,
    },
}

/// Generalized Pareto distribution truncated to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedPareto {
    pub shape: f64,
    pub scale: f64,
    pub location: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for BoundedPareto {
    fn default() -> Self {
        BoundedPareto {
            shape: 1.0 / 1.01,
            scale: 1.0 / 6.06,
            location: 1.0 / 6.0,
            min: 0.5,
            max: 10.0,
        }
    }
}

impl BoundedPareto {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.shape > 0.0 && self.scale > 0.0) {
            return Err(WorkloadError::Config(
                "pareto shape and scale must be positive".into(),
            ));
        }
        if !(self.min >= self.location && self.min <= self.max && self.max.is_finite()) {
            return Err(WorkloadError::Config(format!(
                "pareto bounds [{}, {}] must satisfy location <= min <= max < inf",
                self.min, self.max
            )));
        }
        Ok(())
    }

    /// Untruncated CDF `1 − (1 + ξ(x − μ)/σ)^(−1/ξ)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.location {
            return 0.0;
        }
        1.0 - (1.0 + self.shape * (x - self.location) / self.scale).powf(-1.0 / self.shape)
    }

    fn quantile(&self, u: f64) -> f64 {
        self.location + self.scale / self.shape * ((1.0 - u).powf(-self.shape) - 1.0)
    }

    /// Inverse-CDF sample from the truncated distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let lo = self.cdf(self.min);
        let hi = self.cdf(self.max);
        let u = lo + (hi - lo) * rng.random::<f64>();
        self.quantile(u).clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    /// Mean arrivals per slot.
    pub arrival_rate: f64,
    /// `z_j = round(size_base · x)`.
    pub size_base: u64,
    pub pareto: BoundedPareto,
    /// `x₀`: deadline stretch is drawn from `U[1, x₀]`.
    pub slackness_max: f64,
    pub parallelism: u32,
    /// Arrivals are drawn for slots `1..=horizon`.
    pub horizon: Slot,
    /// Keep only the first `max_jobs` jobs.
    pub max_jobs: Option<usize>,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            arrival_rate: 1.0,
            size_base: 12 * 20,
            pareto: BoundedPareto::default(),
            slackness_max: 3.0,
            parallelism: 20,
            horizon: 3000,
            max_jobs: None,
            seed: 1,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.pareto.validate()?;
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return Err(WorkloadError::Config(
                "arrival_rate must be positive".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(WorkloadError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        if !(self.slackness_max >= 1.0 && self.slackness_max.is_finite()) {
            return Err(WorkloadError::Config("slackness_max must be >= 1".into()));
        }
        if (self.size_base as f64) * self.pareto.min < 1.0 {
            return Err(WorkloadError::Config(format!(
                "size_base * pareto.min = {} is below one instance-slot",
                self.size_base as f64 * self.pareto.min
            )));
        }
        if self.horizon == 0 {
            return Err(WorkloadError::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Poisson arrivals per slot with bounded-Pareto sizes and uniformly stretched
/// deadlines. Jobs are numbered from 1 in arrival order.
pub fn generate_jobs(cfg: &WorkloadConfig) -> Result<Vec<Job>, WorkloadError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let arrivals =
        Poisson::new(cfg.arrival_rate).map_err(|e| WorkloadError::Config(e.to_string()))?;
    let stretch = Uniform::new_inclusive(1.0, cfg.slackness_max)
        .map_err(|e| WorkloadError::Config(e.to_string()))?;
    let delta = cfg.parallelism;
    let limit = cfg.max_jobs.unwrap_or(usize::MAX);
    let mut jobs = Vec::new();
    'slots: for t in 1..=cfg.horizon {
        let count = arrivals.sample(&mut rng) as u64;
        for _ in 0..count {
            if jobs.len() >= limit {
                break 'slots;
            }
            let x = cfg.pareto.sample(&mut rng);
            let size = ((cfg.size_base as f64 * x).round() as u64).max(1);
            let x_prime = stretch.sample(&mut rng);
            let min_d = size.div_ceil(delta as u64);
            let d = ((x_prime * size as f64 / delta as f64).ceil() as u64).max(min_d);
            let id = jobs.len() as u64 + 1;
            let job = Job::new(id, t, d as u32, size, delta)
                .map_err(|e| WorkloadError::Config(e.to_string()))?;
            jobs.push(job);
        }
    }
    Ok(jobs)
}

/// Per-slot spot price process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriceModel {
    Exponential { mean: f64 },
    Constant { price: Money },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceConfig {
    pub model: PriceModel,
    pub seed: u64,
}

pub fn generate_prices(cfg: &PriceConfig, horizon: Slot) -> Result<SpotPriceTrace, WorkloadError> {
    if horizon == 0 {
        return Err(WorkloadError::Config(
            "price horizon must be at least 1".into(),
        ));
    }
    let prices = match cfg.model {
        PriceModel::Constant { price } => vec![price; horizon as usize],
        PriceModel::Exponential { mean } => {
            if !(mean > 0.0 && mean.is_finite()) {
                return Err(WorkloadError::Config(format!(
                    "exponential price mean must be positive, got {mean}"
                )));
            }
            let exp = Exp::new(1.0 / mean).map_err(|e| WorkloadError::Config(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..horizon)
                .map(|_| Money::from_f64(exp.sample(&mut rng)))
                .collect()
        }
    };
    SpotPriceTrace::new(prices).map_err(|e| WorkloadError::Config(e.to_string()))
}

/// Last slot any job may run in.
pub fn horizon_end(jobs: &[Job]) -> Slot {
    jobs.iter().map(Job::last_slot).max().unwrap_or(0)
}

fn content(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
    .trim()
}

pub fn format_jobs(jobs: &[Job]) -> String {
    let mut out = String::from("# id arrival deadline size parallelism\n");
    for j in jobs {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            j.id, j.arrival, j.deadline, j.size, j.parallelism
        );
    }
    out
}

pub fn parse_jobs(text: &str) -> Result<Vec<Job>, WorkloadError> {
    let mut jobs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = content(raw);
        if line.is_empty() {
            continue;
        }
        let err = |message: String| WorkloadError::Parse {
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let num = |i: usize, name: &str| -> Result<u64, WorkloadError> {
            fields[i].parse::<u64>().map_err(|_| {
                err(format!(
                    "{name}: not a non-negative integer: {:?}",
                    fields[i]
                ))
            })
        };
        let narrow = |v: u64, name: &str| -> Result<u32, WorkloadError> {
            u32::try_from(v).map_err(|_| err(format!("{name} {v} out of range")))
        };
        let id = num(0, "id")?;
        let arrival = narrow(num(1, "arrival")?, "arrival")?;
        let deadline = narrow(num(2, "deadline")?, "deadline")?;
        let size = num(3, "size")?;
        let parallelism = narrow(num(4, "parallelism")?, "parallelism")?;
        let job = Job::new(id, arrival, deadline, size, parallelism)
            .map_err(|e: ModelError| err(e.to_string()))?;
        jobs.push(job);
    }
    Ok(jobs)
}

pub fn format_prices(trace: &SpotPriceTrace) -> String {
    let mut out = String::new();
    for p in trace.prices() {
        let _ = writeln!(out, "{p}");
    }
    out
}

pub fn parse_prices(text: &str) -> Result<SpotPriceTrace, WorkloadError> {
    let mut prices = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = content(raw);
        if line.is_empty() {
            continue;
        }
        let price: Money = line.parse().map_err(|e: ModelError| WorkloadError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if price < Money::ZERO {
            return Err(WorkloadError::Parse {
                line: n + 1,
                message: format!("negative price {price}"),
            });
        }
        prices.push(price);
    }
    SpotPriceTrace::new(prices).map_err(|e| WorkloadError::Config(e.to_string()))
}

fn read(path: &Path) -> Result<String, WorkloadError> {
    fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), WorkloadError> {
    fs::write(path, text).map_err(|source| WorkloadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn in_file(path: &Path) -> impl FnOnce(WorkloadError) -> WorkloadError + '_ {
    move |e| WorkloadError::File {
        path: path.to_path_buf(),
        source: Box::new(e),
    }
}

pub fn save_jobs(path: &Path, jobs: &[Job]) -> Result<(), WorkloadError> {
    write(path, &format_jobs(jobs))
}

pub fn load_jobs(path: &Path) -> Result<Vec<Job>, WorkloadError> {
    parse_jobs(&read(path)?).map_err(in_file(path))
}

pub fn save_prices(path: &Path, trace: &SpotPriceTrace) -> Result<(), WorkloadError> {
    write(path, &format_prices(trace))
}

pub fn load_prices(path: &Path) -> Result<SpotPriceTrace, WorkloadError> {
    parse_prices(&read(path)?).map_err(in_file(path))
}
