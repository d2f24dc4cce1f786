//! Weighted-majority learner over a policy grid with delayed, full-information
//! feedback: each job's cost under every policy is replayed once the prices
//! covering its window are known.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{replay_job, Choice, EngineConfig, EngineError, PolicyChooser};
use crate::model::{Job, Money, Slot, SpotPriceTrace};
use crate::policy::Policy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("policy grid is empty")]
    NoPolicies,
    #[error("expected {expected} costs, got {got}")]
    CostCount { expected: usize, got: usize },
    #[error("cost {value} for policy {index} is negative or not finite")]
    BadCost { index: usize, value: f64 },
    #[error("delay must be at least 1 slot")]
    ZeroDelay,
}

// Log-weights stay within this distance of the maximum so that every weight is
// representable as a positive f64.
const LOG_FLOOR: f64 = 690.0;

/// Multiplicative-weights state over `n` policies.
#[derive(Debug, Clone)]
pub struct Weights {
    log_w: Vec<f64>,
}

impl Weights {
    pub fn uniform(n: usize) -> Result<Weights, LearningError> {
        if n == 0 {
            return Err(LearningError::NoPolicies);
        }
        Ok(Weights {
            log_w: vec![0.0; n],
        })
    }

    pub fn from_probabilities(p: &[f64]) -> Result<Weights, LearningError> {
        if p.is_empty() {
            return Err(LearningError::NoPolicies);
        }
        if let Some((index, &value)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(LearningError::BadCost { index, value });
        }
        Ok(Weights {
            log_w: p.iter().map(|v| v.ln()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.log_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_w.is_empty()
    }

    /// Normalized probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = self.log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    /// `w_π ← w_π · exp(−η·c_π)`, then renormalize.
    pub fn apply(&mut self, eta: f64, costs: &[f64]) -> Result<(), LearningError> {
        if costs.len() != self.log_w.len() {
            return Err(LearningError::CostCount {
                expected: self.log_w.len(),
                got: costs.len(),
            });
        }
        if let Some((index, &value)) = costs
            .iter()
            .enumerate()
            .find(|(_, c)| !(c.is_finite() && **c >= 0.0))
        {
            return Err(LearningError::BadCost { index, value });
        }
        for (l, c) in self.log_w.iter_mut().zip(costs) {
            *l -= eta * c;
        }
        let max = self.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for l in &mut self.log_w {
            *l = (*l - max).max(-LOG_FLOOR);
        }
        Ok(())
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.log_w.len() == 1 {
            return 0;
        }
        let p = self.probabilities();
        WeightedIndex::new(&p)
            .expect("probabilities are positive")
            .sample(rng)
    }
}

/// Learning rate `η_t = sqrt(2 ln n / (d·(t − d)))`; zero for `t ≤ d`.
pub fn learning_rate(n: usize, delay: u32, t: Slot) -> f64 {
    if t <= delay {
        return 0.0;
    }
    ((2.0 * (n as f64).ln()) / (delay as f64 * (t - delay) as f64)).sqrt()
}

/// Upper bound on a job's cost under any policy, used to map costs into `[0, 1]`.
///
/// Every lane holds at most one charged hour per update plus the endgame's
/// leading partial hour, at a price no higher than `max(p, max bid)`.
pub fn cost_scale(job: &Job, on_demand_price: Money, max_bid: Money, len: u32) -> f64 {
    let hours = job.deadline.div_ceil(len) as f64 + 1.0;
    on_demand_price.max(max_bid).as_f64() * job.parallelism as f64 * hours
}

/// Cost of `job` under `policy`, replayed alone with `pool_min` idle self-owned
/// instances.
pub fn counterfactual_cost(
    job: &Job,
    policy: &Policy,
    prices: &SpotPriceTrace,
    pool_min: u32,
    cfg: &EngineConfig,
) -> Result<Money, EngineError> {
    Ok(replay_job(job, policy, pool_min, prices, cfg)?.cost(cfg.on_demand_price))
}

/// One resolved job.
#[derive(Debug, Clone)]
pub struct Resolution {
    /// Slot whose learning rate was applied.
    pub t: Slot,
    pub job_id: u64,
    pub chosen: usize,
    pub costs: Vec<Money>,
    pub normalized: Vec<f64>,
    /// Weights after the update, when trajectory recording is enabled.
    pub weights: Option<Vec<f64>>,
}

impl Resolution {
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.costs.iter().enumerate() {
            if *c < self.costs[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    job: Job,
    chosen: usize,
    pool_min: u32,
}

#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub policies: Vec<Policy>,
    /// `d = max_j d_j`.
    pub delay: u32,
    pub seed: u64,
    pub engine: EngineConfig,
    /// Keep the full weight vector after every resolution.
    pub record_weights: bool,
}

/// Samples a policy per arriving job and learns from counterfactual costs.
#[derive(Debug, Clone)]
pub struct OptiLearner {
    policies: Vec<Policy>,
    weights: Weights,
    delay: u32,
    engine: EngineConfig,
    max_bid: Money,
    rng: ChaCha8Rng,
    pending: VecDeque<Pending>,
    history: Vec<Resolution>,
    record_weights: bool,
}

impl OptiLearner {
    pub fn new(cfg: LearnerConfig) -> Result<OptiLearner, LearningError> {
        if cfg.delay == 0 {
            return Err(LearningError::ZeroDelay);
        }
        let weights = Weights::uniform(cfg.policies.len())?;
        let max_bid = cfg
            .policies
            .iter()
            .map(|p| p.bid)
            .max()
            .unwrap_or(Money::ZERO);
        Ok(OptiLearner {
            weights,
            delay: cfg.delay,
            engine: cfg.engine,
            max_bid,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            pending: VecDeque::new(),
            history: Vec::new(),
            record_weights: cfg.record_weights,
            policies: cfg.policies,
        })
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.weights.probabilities()
    }

    pub fn history(&self) -> &[Resolution] {
        &self.history
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Applies one job's normalized cost vector at slot `t`. No-op for `t ≤ d`.
    pub fn update(&mut self, t: Slot, normalized: &[f64]) -> Result<(), LearningError> {
        if t <= self.delay {
            return Ok(());
        }
        let eta = learning_rate(self.policies.len(), self.delay, t);
        self.weights.apply(eta, normalized)
    }

    fn resolve(&mut self, p: Pending, prices: &SpotPriceTrace) -> Result<(), EngineError> {
        let costs = self
            .policies
            .iter()
            .map(|pi| counterfactual_cost(&p.job, pi, prices, p.pool_min, &self.engine))
            .collect::<Result<Vec<Money>, EngineError>>()?;
        let scale = cost_scale(
            &p.job,
            self.engine.on_demand_price,
            self.max_bid,
            self.engine.len,
        );
        let normalized: Vec<f64> = costs
            .iter()
            .map(|c| (c.as_f64() / scale).min(1.0))
            .collect();
        let t = p.job.arrival + self.delay;
        self.update(t, &normalized)
            .map_err(|e| EngineError::Chooser(e.to_string()))?;
        self.history.push(Resolution {
            t,
            job_id: p.job.id,
            chosen: p.chosen,
            costs,
            normalized,
            weights: self.record_weights.then(|| self.weights.probabilities()),
        });
        Ok(())
    }

    /// Resolves every job whose `d`-slot window ends by `t`, in arrival order.
    pub fn resolve_through(&mut self, t: Slot, prices: &SpotPriceTrace) -> Result<(), EngineError> {
        while let Some(p) = self.pending.front() {
            if p.job.arrival + self.delay - 1 > t {
                break;
            }
            let p = self.pending.pop_front().expect("front exists");
            self.resolve(p, prices)?;
        }
        Ok(())
    }

    /// Resolves all remaining jobs; their windows must be covered by `prices`.
    pub fn finish(&mut self, prices: &SpotPriceTrace) -> Result<(), EngineError> {
        while let Some(p) = self.pending.pop_front() {
            self.resolve(p, prices)?;
        }
        Ok(())
    }

    /// One line per resolution: `t job_id chosen c_chosen argmin w_0 … w_{n−1}`.
    pub fn trajectory_log(&self) -> String {
        let mut out = String::from("# t job_id chosen c_chosen argmin weights...\n");
        for r in &self.history {
            let _ = write!(
                out,
                "{} {} {} {} {}",
                r.t,
                r.job_id,
                r.chosen,
                r.costs[r.chosen],
                r.argmin()
            );
            if let Some(w) = &r.weights {
                for v in w {
                    let _ = write!(out, " {v:.12e}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn regret_report(&self, confidence: f64) -> RegretReport {
        regret_report(&self.history, self.policies.len(), self.delay, confidence)
    }
}

impl PolicyChooser for OptiLearner {
    fn choose(&mut self, job: &Job, pool_min: u32) -> Choice {
        let index = self.weights.sample(&mut self.rng);
        if let Some(last) = self.pending.back() {
            debug_assert!(last.job.arrival <= job.arrival);
        }
        self.pending.push_back(Pending {
            job: *job,
            chosen: index,
            pool_min,
        });
        Choice {
            index,
            policy: self.policies[index],
        }
    }

    fn end_slot(&mut self, t: Slot, prices: &SpotPriceTrace) -> Result<(), EngineError> {
        self.resolve_through(t, prices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretReport {
    /// `N′`.
    pub resolved: usize,
    /// `max_π Σ_j (ĉ_j(π_j) − ĉ_j(π)) / N′` on normalized costs.
    pub avg_regret: f64,
    /// `9·sqrt(2d·ln(n/δ)/N′)`.
    pub bound: f64,
    /// Best fixed policy in hindsight.
    pub best_policy: usize,
}

pub fn regret_report(
    history: &[Resolution],
    n: usize,
    delay: u32,
    confidence: f64,
) -> RegretReport {
    let resolved = history.len();
    if resolved == 0 || n == 0 {
        return RegretReport {
            resolved,
            avg_regret: 0.0,
            bound: f64::INFINITY,
            best_policy: 0,
        };
    }
    let mut totals = vec![0.0; n];
    let mut chosen_total = 0.0;
    for r in history {
        for (acc, c) in totals.iter_mut().zip(&r.normalized) {
            *acc += c;
        }
        chosen_total += r.normalized[r.chosen];
    }
    let mut best = 0;
    for i in 1..n {
        if totals[i] < totals[best] {
            best = i;
        }
    }
    let avg_regret = (chosen_total - totals[best]) / resolved as f64;
    let bound = 9.0 * (2.0 * delay as f64 * (n as f64 / confidence).ln() / resolved as f64).sqrt();
    RegretReport {
        resolved,
        avg_regret,
        bound,
        best_policy: best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::model::{Rational, SpotPriceTrace};
    use crate::policy::{SelfOwnedRule, SplitRule};
    use num_rational::Ratio;

    fn policy(theta: Rational, bid: f64) -> Policy {
        Policy {
            self_owned: SelfOwnedRule::Intuitive,
            split: SplitRule::Theta { theta },
            bid: Money::from_f64(bid),
        }
    }

    fn engine() -> EngineConfig {
        EngineConfig::new(12, Money::from_f64(0.25), 0)
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let w = Weights::uniform(7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 7];
        let draws = 100_000;
        for _ in 0..draws {
            counts[w.sample(&mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 7.0).abs() < 0.01);
        }
    }

    #[test]
    fn near_degenerate_sampling() {
        let eps = 1e-6;
        let mut p = vec![eps; 7];
        p[3] = 1.0 - 6.0 * eps;
        let w = Weights::from_probabilities(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hits = (0..10_000).filter(|_| w.sample(&mut rng) == 3).count();
        assert!(hits as f64 / 10_000.0 >= 0.99);
        let one = Weights::uniform(1).unwrap();
        assert_eq!(one.sample(&mut rng), 0);
    }

    #[test]
    fn equal_costs_leave_weights() {
        let mut w = Weights::from_probabilities(&[0.2, 0.3, 0.5]).unwrap();
        w.apply(0.7, &[0.4, 0.4, 0.4]).unwrap();
        let p = w.probabilities();
        for (a, b) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_policy_update_closed_form() {
        let mut w = Weights::uniform(2).unwrap();
        w.apply(1.0, &[0.0, 1.0]).unwrap();
        let p = w.probabilities();
        let e = (-1.0f64).exp();
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((p[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn bad_costs_rejected() {
        let mut w = Weights::uniform(2).unwrap();
        assert!(matches!(
            w.apply(1.0, &[0.1, -0.1]),
            Err(LearningError::BadCost { index: 1, .. })
        ));
        assert!(w.apply(1.0, &[f64::NAN, 0.1]).is_err());
        assert!(matches!(
            w.apply(1.0, &[0.1]),
            Err(LearningError::CostCount { .. })
        ));
    }

    #[test]
    fn no_update_until_delay_passes() {
        let mut learner = OptiLearner::new(LearnerConfig {
            policies: vec![
                policy(Ratio::from_integer(0), 0.1),
                policy(Ratio::from_integer(1), 0.1),
            ],
            delay: 10,
            seed: 0,
            engine: engine(),
            record_weights: false,
        })
        .unwrap();
        learner.update(10, &[0.0, 1.0]).unwrap();
        assert_eq!(learner.probabilities(), vec![0.5, 0.5]);
        learner.update(11, &[0.0, 1.0]).unwrap();
        assert!(learner.probabilities()[0] > 0.5);
    }

    #[test]
    fn learning_rate_formula() {
        assert_eq!(learning_rate(7, 10, 10), 0.0);
        let eta = learning_rate(7, 10, 15);
        assert!((eta - (2.0 * 7f64.ln() / 50.0).sqrt()).abs() < 1e-15);
        assert_eq!(learning_rate(1, 10, 15), 0.0);
    }

    #[test]
    fn weights_stay_positive_under_extreme_losses() {
        let mut w = Weights::uniform(3).unwrap();
        for _ in 0..10_000 {
            w.apply(50.0, &[0.0, 1.0, 1.0]).unwrap();
        }
        let p = w.probabilities();
        assert!(p.iter().all(|v| *v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn counterfactual_closed_forms() {
        let job = Job::new(1, 1, 24, 24, 2).unwrap();
        let cheap = SpotPriceTrace::new(vec![Money::from_f64(0.1); 24]).unwrap();
        // spot for the whole first hour at 0.1 on two instances
        let all_spot = counterfactual_cost(
            &job,
            &policy(Ratio::from_integer(1), 0.2),
            &cheap,
            0,
            &engine(),
        )
        .unwrap();
        assert_eq!(all_spot, Money::from_f64(0.2));
        // bid below every price: on-demand only
        let never = counterfactual_cost(
            &job,
            &Policy {
                bid: Money::from_micros(1),
                ..policy(Ratio::from_integer(1), 0.2)
            },
            &cheap,
            0,
            &engine(),
        )
        .unwrap();
        assert_eq!(never, Money::from_f64(0.5));
        let tiny = Job::new(2, 1, 1000, 1, 1).unwrap();
        let long = SpotPriceTrace::new(vec![Money::from_f64(0.1); 1000]).unwrap();
        let one_hour = counterfactual_cost(
            &tiny,
            &policy(Ratio::from_integer(1), 0.2),
            &long,
            0,
            &engine(),
        )
        .unwrap();
        assert_eq!(one_hour, Money::from_f64(0.1));
    }

    #[test]
    fn single_policy_learner_matches_fixed_run() {
        let jobs: Vec<Job> = (0..40)
            .map(|k| Job::new(k + 1, 1 + k as u32 * 3, 30, 40 + k, 4).unwrap())
            .collect();
        let prices = SpotPriceTrace::new(
            (0..300)
                .map(|k| Money::from_f64(if k % 5 == 0 { 0.5 } else { 0.08 }))
                .collect(),
        )
        .unwrap();
        let pi = policy(Ratio::new(1, 2), 0.2);
        let fixed = run(
            &jobs,
            &prices,
            &mut crate::engine::FixedPolicy(pi),
            &engine(),
        )
        .unwrap();
        let mut learner = OptiLearner::new(LearnerConfig {
            policies: vec![pi],
            delay: 30,
            seed: 9,
            engine: engine(),
            record_weights: true,
        })
        .unwrap();
        let learned = run(&jobs, &prices, &mut learner, &engine()).unwrap();
        learner.finish(&prices).unwrap();
        assert_eq!(fixed.ledger, learned.ledger);
        assert_eq!(learner.history().len(), 40);
        assert_eq!(learner.regret_report(0.05).avg_regret, 0.0);
        for (r, j) in learner.history().iter().zip(&fixed.jobs) {
            assert_eq!(r.costs[0], j.cost);
        }
    }

    #[test]
    fn dominant_policy_takes_the_weight() {
        let mut learner = OptiLearner::new(LearnerConfig {
            policies: vec![policy(Ratio::from_integer(0), 0.1); 3],
            delay: 5,
            seed: 0,
            engine: engine(),
            record_weights: false,
        })
        .unwrap();
        for t in 6..5006 {
            learner.update(t, &[0.2, 0.9, 0.6]).unwrap();
        }
        assert!(learner.probabilities()[0] > 0.9);
    }

    #[test]
    fn regret_report_trivial_cases() {
        let report = regret_report(&[], 3, 10, 0.05);
        assert_eq!(report.resolved, 0);
        let h = vec![Resolution {
            t: 11,
            job_id: 1,
            chosen: 1,
            costs: vec![Money::from_f64(0.1), Money::from_f64(0.3)],
            normalized: vec![0.1, 0.3],
            weights: None,
        }];
        let r = regret_report(&h, 2, 10, 0.05);
        assert!((r.avg_regret - 0.2).abs() < 1e-12);
        assert_eq!(r.best_policy, 0);
        assert!((r.bound - 9.0 * (20.0 * (40.0f64).ln()).sqrt()).abs() < 1e-9);
    }
}
