//! Slot-by-slot driver: arrivals, hourly allocation updates, spot
//! acquisition and termination against the price trace, the on-demand
//! endgame, self-owned reservations and the cost ledger.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{
    Job, JobRun, ModelError, Money, SelfOwnedPool, Slot, SlotUsage, SpotOutcome, SpotPriceTrace,
    UpdateRecord,
};
use crate::policy::{endgame_schedule, EndgameRequest, EndgameSchedule, Policy, PolicyError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("price trace covers {available} slots but jobs run until slot {needed}")]
    PriceTraceTooShort { needed: Slot, available: usize },
    #[error(
        "job {id} missed its deadline at slot {deadline} with {remaining} instance-slots left"
    )]
    DeadlineMissed {
        id: u64,
        deadline: Slot,
        remaining: u64,
    },
    #[error("job {id}: {source}")]
    Policy { id: u64, source: PolicyError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("policy chooser failed: {0}")]
    Chooser(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    /// Slots per hour.
    pub len: u32,
    /// On-demand price per instance-hour.
    pub on_demand_price: Money,
    /// Self-owned pool size `R`.
    pub self_owned: u32,
    /// Self-owned price per instance-hour.
    pub self_owned_price: Money,
    /// Return self-owned reservations to the pool when a job completes early.
    pub release_on_completion: bool,
}

impl EngineConfig {
    pub fn new(len: u32, on_demand_price: Money, self_owned: u32) -> EngineConfig {
        EngineConfig {
            len,
            on_demand_price,
            self_owned,
            self_owned_price: Money::ZERO,
            release_on_completion: true,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.len == 0 {
            return Err(EngineError::Config(
                "slots per hour must be positive".into(),
            ));
        }
        if self.on_demand_price <= Money::ZERO {
            return Err(EngineError::Config(
                "on-demand price must be positive".into(),
            ));
        }
        if self.self_owned_price < Money::ZERO {
            return Err(EngineError::Config(
                "self-owned price must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A policy assigned to an arriving job, with its index in the chooser's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub index: usize,
    pub policy: Policy,
}

/// Maps arriving jobs to policies.
pub trait PolicyChooser {
    /// Called once per job at its arrival slot, before any work is processed.
    fn choose(&mut self, job: &Job, pool_min: u32) -> Choice;

    /// Called after all jobs have been processed at slot `t`; the trace is
    /// final up to `t`.
    fn end_slot(&mut self, _t: Slot, _prices: &SpotPriceTrace) -> Result<(), EngineError> {
        Ok(())
    }
}

/// Applies one policy to every job.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub Policy);

impl PolicyChooser for FixedPolicy {
    fn choose(&mut self, _job: &Job, _pool_min: u32) -> Choice {
        Choice {
            index: 0,
            policy: self.0,
        }
    }
}

// The allocation hour currently in force.
#[derive(Debug, Clone, Copy)]
struct Hour {
    end: Slot,
    spot: u32,
    on_demand: u32,
    alive: bool,
    record: usize,
}

/// One job's execution under a fixed policy. Drive it with [`ActiveJob::step`]
/// for every slot of its window.
#[derive(Debug, Clone)]
pub struct ActiveJob {
    pub run: JobRun,
    pub policy: Policy,
    pub policy_index: usize,
    hour: Option<Hour>,
    endgame: Option<EndgameSchedule>,
    next_block: usize,
}

impl ActiveJob {
    pub fn new(job: Job, choice: Choice, self_owned: u32) -> ActiveJob {
        ActiveJob {
            run: JobRun::new(job, self_owned),
            policy: choice.policy,
            policy_index: choice.index,
            hour: None,
            endgame: None,
            next_block: 0,
        }
    }

    pub fn endgame(&self) -> Option<&EndgameSchedule> {
        self.endgame.as_ref()
    }

    fn lanes(&self) -> u32 {
        self.run.job.parallelism - self.run.self_owned
    }

    // Work left for cloud instances once self-owned instances run through `last`
    // starting at `from`.
    fn cloud_work(&self, from: Slot) -> u64 {
        let last = self.run.job.last_slot();
        let self_slots = if from > last {
            0
        } else {
            (last - from + 1) as u64
        };
        self.run
            .remaining
            .saturating_sub(self.run.self_owned as u64 * self_slots)
    }

    fn install_endgame(
        &mut self,
        t_prime: Slot,
        o_existing: u32,
        busy_until: Slot,
        len: u32,
    ) -> Result<(), EngineError> {
        let job = self.run.job;
        let remaining = self.cloud_work(t_prime + 1);
        if remaining == 0 {
            return Ok(());
        }
        let req = EndgameRequest {
            remaining,
            t_prime,
            deadline: job.last_slot(),
            lanes: self.lanes(),
            o_existing,
            busy_until,
            len,
        };
        let schedule =
            endgame_schedule(&req).map_err(|source| EngineError::Policy { id: job.id, source })?;
        self.run.endgame_started = Some(t_prime + 1);
        self.endgame = Some(schedule);
        self.next_block = 0;
        Ok(())
    }

    fn open_update(&mut self, t: Slot, len: u32) -> Result<(), EngineError> {
        let job = self.run.job;
        let last = job.last_slot();
        let offset = t - job.arrival;
        self.run.update_index = offset / len + 1;
        let d_rem = last - t + 1;
        let lanes = self.lanes();
        let cloud = self.cloud_work(t);
        if cloud == 0 {
            return Ok(());
        }
        if cloud > lanes as u64 * d_rem as u64 {
            return self.install_endgame(t - 1, 0, t - 1, len);
        }
        let split = self
            .policy
            .split_for(cloud, d_rem, lanes, len)
            .map_err(|source| EngineError::Policy { id: job.id, source })?;
        self.run.updates.push(UpdateRecord::new(
            self.run.update_index,
            t,
            split.spot,
            split.on_demand,
            split.bid,
        ));
        self.hour = Some(Hour {
            end: (t + len - 1).min(last),
            spot: split.spot,
            on_demand: split.on_demand,
            alive: split.spot > 0,
            record: self.run.updates.len() - 1,
        });
        Ok(())
    }

    fn close_update(&mut self, outcome: SpotOutcome) {
        let Some(hour) = self.hour.take() else {
            return;
        };
        let rec = &mut self.run.updates[hour.record];
        rec.outcome = Some(outcome);
        if outcome.is_charged() && rec.spot_slots > 0 {
            rec.spot_charge = rec
                .spot_price_sum
                .mul_div(rec.spot as i64, rec.spot_slots as i64);
        }
    }

    /// Advances the job through slot `t`. Returns `true` when the job completes at `t`.
    pub fn step(&mut self, t: Slot, price: Money, len: u32) -> Result<bool, EngineError> {
        let job = self.run.job;
        let last = job.last_slot();
        debug_assert!(job.arrival <= t && t <= last && !self.run.is_complete());

        if (t - job.arrival).is_multiple_of(len) && self.endgame.is_none() {
            self.open_update(t, len)?;
        }

        // spot resolution; a lost bid stays lost until the next update
        let mut spot_running = 0;
        let mut lost = false;
        if let Some(hour) = self.hour.as_mut() {
            if hour.alive {
                if price <= self.policy.bid {
                    spot_running = hour.spot;
                } else {
                    hour.alive = false;
                    lost = true;
                }
            }
        }

        if lost && self.endgame.is_none() {
            let hour = self.hour.expect("loss implies an open hour");
            let covered = hour.on_demand as u64 * (hour.end - t + 1) as u64;
            let projected = self.cloud_work(t).saturating_sub(covered);
            let capacity_after = self.lanes() as u64 * (last - hour.end) as u64;
            if projected > capacity_after {
                self.install_endgame(t - 1, hour.on_demand, hour.end, len)?;
            }
        }

        let mut endgame_running = 0;
        if let Some(schedule) = &self.endgame {
            while let Some(block) = schedule.blocks.get(self.next_block) {
                if block.start > t {
                    break;
                }
                self.run.endgame_hours += block.count;
                self.next_block += 1;
            }
            endgame_running = schedule.count_at(t);
        }

        let paid_on_demand = self.hour.map_or(0, |h| h.on_demand) + endgame_running;
        let mut left = self.run.remaining;
        let mut take = |cap: u32| -> u32 {
            let used = (cap as u64).min(left);
            left -= used;
            used as u32
        };
        let usage = SlotUsage {
            self_owned: take(self.run.self_owned),
            spot: take(spot_running),
            on_demand: take(paid_on_demand),
        };
        self.run.remaining = left;
        self.run.usage[(t - job.arrival) as usize] = usage;

        if let Some(hour) = self.hour {
            if spot_running > 0 {
                let rec = &mut self.run.updates[hour.record];
                rec.spot_slots += 1;
                rec.spot_price_sum += price;
                rec.spot_work += usage.spot as u64;
            }
        }

        if self.run.remaining == 0 {
            self.run.completed_at = Some(t);
            if let Some(hour) = self.hour {
                let slots = self.run.updates[hour.record].spot_slots;
                let outcome = if spot_running > 0 {
                    SpotOutcome::UntilCompletion { slots }
                } else {
                    SpotOutcome::Interrupted { slots }
                };
                self.close_update(outcome);
            }
            return Ok(true);
        }

        if let Some(hour) = self.hour {
            if t == hour.end {
                let slots = self.run.updates[hour.record].spot_slots;
                let outcome = if hour.spot > 0 && slots == len {
                    SpotOutcome::FullHour
                } else {
                    SpotOutcome::Interrupted { slots }
                };
                self.close_update(outcome);
            }
        }

        if t == last {
            return Err(EngineError::DeadlineMissed {
                id: job.id,
                deadline: last,
                remaining: self.run.remaining,
            });
        }
        Ok(false)
    }
}

/// Simulates a single job in isolation given the self-owned instances that
/// are idle over its whole window.
pub fn replay_job(
    job: &Job,
    policy: &Policy,
    pool_min: u32,
    prices: &SpotPriceTrace,
    cfg: &EngineConfig,
) -> Result<JobRun, EngineError> {
    if prices.len() < job.last_slot() as usize {
        return Err(EngineError::PriceTraceTooShort {
            needed: job.last_slot(),
            available: prices.len(),
        });
    }
    let r = policy.self_owned_for(job, pool_min, cfg.len);
    let mut active = ActiveJob::new(
        *job,
        Choice {
            index: 0,
            policy: *policy,
        },
        r,
    );
    for t in job.arrival..=job.last_slot() {
        let price = prices.at(t).expect("trace length checked");
        if active.step(t, price, cfg.len)? {
            break;
        }
    }
    Ok(active.run)
}

/// A finished job with the policy it ran under.
#[derive(Debug, Clone)]
pub struct CompletedJob {
    pub run: JobRun,
    pub policy_index: usize,
    pub cost: Money,
}

/// Money and work totals of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    /// Total money, including self-owned usage at its configured price.
    pub total_cost: Money,
    pub total_workload: u64,
    pub spot_money: Money,
    pub spot_work: u64,
    pub on_demand_money: Money,
    pub on_demand_work: u64,
    pub self_owned_money: Money,
    pub self_owned_work: u64,
    pub self_owned_capacity: u32,
    pub horizon_end: Slot,
    pub len: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Average money per instance-slot of completed work.
    pub alpha: Option<f64>,
    /// Fraction of self-owned instance-slots used over `[1, horizon_end]`.
    pub gamma: Option<f64>,
    /// Spot money per instance-hour of spot work.
    pub p_prime: f64,
}

impl CostLedger {
    pub fn record(&mut self, job: &CompletedJob, cfg: &EngineConfig) {
        let run = &job.run;
        let self_work = run.self_owned_work();
        let self_money = cfg
            .self_owned_price
            .mul_div(self_work as i64, cfg.len as i64);
        self.total_cost += job.cost + self_money;
        self.total_workload += run.job.size;
        self.spot_money += run.spot_charge();
        self.spot_work += run.spot_work();
        self.on_demand_money += cfg.on_demand_price * run.on_demand_hours() as i64;
        self.on_demand_work += run.on_demand_work();
        self.self_owned_money += self_money;
        self.self_owned_work += self_work;
        self.horizon_end = self.horizon_end.max(run.job.last_slot());
    }

    pub fn metrics(&self) -> Metrics {
        let alpha = (self.total_workload > 0)
            .then(|| self.total_cost.as_f64() / self.total_workload as f64);
        let gamma = (self.self_owned_capacity > 0 && self.horizon_end > 0).then(|| {
            self.self_owned_work as f64
                / (self.self_owned_capacity as f64 * self.horizon_end as f64)
        });
        let p_prime = if self.spot_work == 0 {
            0.0
        } else {
            self.spot_money.as_f64() * self.len as f64 / self.spot_work as f64
        };
        Metrics {
            alpha,
            gamma,
            p_prime,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Completed jobs in arrival order.
    pub jobs: Vec<CompletedJob>,
    pub ledger: CostLedger,
}

impl RunOutput {
    /// One line per job: `id policy cost completion spot_work on_demand_work self_owned_work`.
    pub fn completion_log(&self) -> String {
        let mut out =
            String::from("# id policy cost completion spot_work on_demand_work self_owned_work\n");
        for j in &self.jobs {
            let r = &j.run;
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                r.job.id,
                j.policy_index,
                j.cost,
                r.completed_at.unwrap_or(0),
                r.spot_work(),
                r.on_demand_work(),
                r.self_owned_work()
            );
        }
        out
    }
}

/// Runs every job to completion. Jobs are processed in arrival order, ties in
/// input order.
pub fn run<C: PolicyChooser + ?Sized>(
    jobs: &[Job],
    prices: &SpotPriceTrace,
    chooser: &mut C,
    cfg: &EngineConfig,
) -> Result<RunOutput, EngineError> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by_key(|&i| jobs[i].arrival);
    let horizon = jobs.iter().map(Job::last_slot).max().unwrap_or(0);
    if prices.len() < horizon as usize {
        return Err(EngineError::PriceTraceTooShort {
            needed: horizon,
            available: prices.len(),
        });
    }

    let mut pool = SelfOwnedPool::new(cfg.self_owned, horizon);
    let mut ledger = CostLedger {
        self_owned_capacity: cfg.self_owned,
        len: cfg.len,
        ..CostLedger::default()
    };
    let mut done: Vec<Option<CompletedJob>> = vec![None; jobs.len()];
    let mut live: Vec<(usize, ActiveJob)> = Vec::new();
    let mut next = 0;
    let start = order.first().map_or(1, |&i| jobs[i].arrival);

    for t in start..=horizon {
        while next < order.len() && jobs[order[next]].arrival == t {
            let job = &jobs[order[next]];
            let pool_min = pool.min_idle(t, job.last_slot());
            let choice = chooser.choose(job, pool_min);
            let r = choice.policy.self_owned_for(job, pool_min, cfg.len);
            pool.reserve(t, job.last_slot(), r)?;
            live.push((order[next], ActiveJob::new(*job, choice, r)));
            next += 1;
        }

        let price = prices.at(t).expect("trace length checked");
        let mut k = 0;
        while k < live.len() {
            if live[k].1.step(t, price, cfg.len)? {
                let (slot, active) = live.remove(k);
                let job = active.run.job;
                if cfg.release_on_completion && t < job.last_slot() {
                    pool.release(t + 1, job.last_slot(), active.run.self_owned);
                }
                let finished = CompletedJob {
                    cost: active.run.cost(cfg.on_demand_price),
                    policy_index: active.policy_index,
                    run: active.run,
                };
                ledger.record(&finished, cfg);
                done[slot] = Some(finished);
            } else {
                k += 1;
            }
        }
        chooser.end_slot(t, prices)?;
    }

    let mut completed: Vec<CompletedJob> = order
        .iter()
        .map(|&i| done[i].take().expect("every job completes or errors"))
        .collect();
    completed.shrink_to_fit();
    Ok(RunOutput {
        jobs: completed,
        ledger,
    })
}
