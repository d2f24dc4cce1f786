//! Allocation decisions: self-owned instances at arrival, the spot/on-demand
//! split at each hourly update, the on-demand endgame once a job can no
//! longer afford to wait for spot capacity, and the two baselines.
//!
//! Everything here is a pure function of its arguments.

use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::model::{Job, Money, PolicyParams, Rational, Slot};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("beta = 1 makes the spot budget unbounded")]
    BetaOne,
    #[error("negative slack: {work} work does not fit {delta} x {window} slots")]
    NegativeSlack { work: u64, delta: u32, window: u32 },
    #[error("effective parallelism must be positive")]
    NoParallelism,
    #[error("endgame cannot complete {needed} instance-slots by slot {deadline}: at most {capacity} available")]
    EndgameInfeasible {
        needed: u64,
        capacity: u64,
        deadline: Slot,
    },
    #[error("endgame request is malformed: {0}")]
    BadRequest(&'static str),
}

/// Spot/on-demand split of one allocation update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitDecision {
    /// Spot instances to bid for.
    pub spot: u32,
    /// On-demand instances acquired for the whole hour.
    pub on_demand: u32,
    pub bid: Money,
}

fn ratio(n: i64) -> Rational {
    Rational::from_integer(n)
}

/// `κ₀ = ⌈d/Len⌉ − 1`.
pub fn kappa0(d: u32, len: u32) -> u32 {
    d.div_ceil(len) - 1
}

/// Minimum self-owned count after which the job is expected to finish on spot
/// alone, given spot runs for `β·Len` slots per update.
///
/// Returns `δ − (dδ − z)/denom` where the denominator depends on whether the
/// last (partial) hour is longer than `β·Len`. A vanishing denominator makes
/// the underlying constraint independent of the self-owned count.
pub fn r_bar(job: &Job, beta: Rational, len: u32) -> Rational {
    let d = job.deadline as i64;
    let delta = job.parallelism as i64;
    let len = len as i64;
    let k0 = kappa0(job.deadline, len as u32) as i64;
    let slack = ratio(d * delta - job.size as i64);
    let spot_slots = beta * len;
    let denom = if ratio(d - k0 * len) >= spot_slots {
        ratio(d) - spot_slots * (k0 + 1)
    } else {
        (ratio(1) - beta) * (k0 * len)
    };
    if denom <= Rational::zero() {
        if slack >= Rational::zero() {
            Rational::zero()
        } else {
            ratio(delta)
        }
    } else {
        ratio(delta) - slack / denom
    }
}

/// Tuned self-owned allocation at arrival: `min(⌈max(r̄(β₀), 0)⌉, pool_min, δ)`.
pub fn self_owned_allocation(job: &Job, beta0: Rational, pool_min: u32, len: u32) -> u32 {
    let rb = r_bar(job, beta0, len);
    if !rb.is_positive() {
        return 0;
    }
    let up = rb.ceil().to_integer();
    (up.min(job.parallelism as i64) as u32).min(pool_min)
}

/// Greedy baseline: as many idle instances as the job can use on average,
/// `min(pool_min, ⌈z/d⌉, δ)`.
pub fn intuitive_self_owned(job: &Job, pool_min: u32) -> u32 {
    let per_slot = job.size.div_ceil(job.deadline as u64);
    (per_slot.min(job.parallelism as u64) as u32).min(pool_min)
}

/// Spot-bid budget `ν = ⌊(dδ − z) / (Len·(1 − β))⌋`.
pub fn nu(z: u64, d: u32, delta: u32, beta: Rational, len: u32) -> Result<u64, PolicyError> {
    if beta >= ratio(1) {
        return Err(PolicyError::BetaOne);
    }
    let cap = d as i64 * delta as i64;
    if (z as i64) > cap {
        return Err(PolicyError::NegativeSlack {
            work: z,
            delta,
            window: d,
        });
    }
    let budget = ratio(cap - z as i64) / ((ratio(1) - beta) * len as i64);
    Ok(budget.floor().to_integer() as u64)
}

/// `κ₂ = ⌊ν/δ⌋`: updates at which all `δ` instances bid for spot.
pub fn kappa2(nu: u64, delta: u32) -> u64 {
    nu / delta as u64
}

/// Spot/on-demand split at a flexible update. The remaining work is treated
/// as a fresh job with `d_rem` slots left and `delta_eff = δ − r` lanes.
pub fn proportion(
    z_rem: u64,
    d_rem: u32,
    delta_eff: u32,
    beta: Rational,
    bid: Money,
    len: u32,
) -> Result<SplitDecision, PolicyError> {
    if delta_eff == 0 {
        return Err(PolicyError::NoParallelism);
    }
    let budget = nu(z_rem, d_rem, delta_eff, beta, len)?;
    let (spot, on_demand) = if kappa2(budget, delta_eff) >= 1 || budget == 0 {
        (delta_eff, 0)
    } else {
        let spot = budget as u32;
        (spot, delta_eff - spot)
    };
    Ok(SplitDecision {
        spot,
        on_demand,
        bid,
    })
}

/// Expected maximum spot workload `(ν + δ)·Len·β`.
pub fn expected_max_spot_workload(
    job: &Job,
    beta: Rational,
    len: u32,
) -> Result<Rational, PolicyError> {
    let budget = nu(job.size, job.deadline, job.parallelism, beta, len)?;
    Ok(ratio(budget as i64 + job.parallelism as i64) * len as i64 * beta)
}

/// Fixed fraction baseline: `round(θ·δ)` spot, the rest on-demand.
pub fn theta_split(delta: u32, theta: Rational, bid: Money) -> SplitDecision {
    let spot = (theta * delta as i64)
        .round()
        .to_integer()
        .clamp(0, delta as i64) as u32;
    SplitDecision {
        spot,
        on_demand: delta - spot,
        bid,
    }
}

/// State of a job at the moment it loses flexibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndgameRequest {
    /// Work left for cloud instances (self-owned commitments already deducted).
    pub remaining: u64,
    /// Last slot before the endgame takes over (`t′`).
    pub t_prime: Slot,
    /// Absolute deadline slot.
    pub deadline: Slot,
    /// Cloud lanes available to the job (`δ − r`).
    pub lanes: u32,
    /// On-demand instances already paid until `busy_until`.
    pub o_existing: u32,
    /// Last slot of the already-paid hour (clipped to the deadline).
    pub busy_until: Slot,
    pub len: u32,
}

impl EndgameRequest {
    /// Instance-slots the already-paid on-demand instances still process after `t′`.
    pub fn committed(&self) -> u64 {
        self.o_existing as u64 * self.busy_until.saturating_sub(self.t_prime) as u64
    }
}

/// One on-demand purchase: `count` instances over `[start, end]`, one hour each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OnDemandBlock {
    pub start: Slot,
    pub end: Slot,
    pub count: u32,
}

impl OnDemandBlock {
    pub fn slots(&self) -> u32 {
        self.end - self.start + 1
    }
}

/// On-demand schedule that completes a job without further spot use.
///
/// Full-hour blocks are packed against the deadline (`[t″, deadline]`), and
/// `extra_count` more instances cover the leading partial interval
/// `[t′ + 1, t″ − 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndgameSchedule {
    pub t_prime: Slot,
    /// `t″ = deadline + 1 − κ·Len`.
    pub t_dd: Slot,
    pub deadline: Slot,
    /// `κ = ⌊(deadline − t′)/Len⌋`.
    pub kappa: u32,
    pub committed: u64,
    /// Instances running at the deadline slot.
    pub full_count: u32,
    /// `ō`: instances bought for the partial interval on idle lanes.
    pub extra_count: u32,
    pub blocks: Vec<OnDemandBlock>,
}

impl EndgameSchedule {
    /// Instance-hours purchased.
    pub fn instance_hours(&self) -> u64 {
        self.blocks.iter().map(|b| b.count as u64).sum()
    }

    /// Instance-slots the purchased blocks can process.
    pub fn capacity(&self) -> u64 {
        self.blocks
            .iter()
            .map(|b| b.count as u64 * b.slots() as u64)
            .sum()
    }

    /// Purchased instances running at slot `t`.
    pub fn count_at(&self, t: Slot) -> u32 {
        self.blocks
            .iter()
            .filter(|b| b.start <= t && t <= b.end)
            .map(|b| b.count)
            .sum()
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    start: Slot,
    end: Slot,
    idle_lane: bool,
}

impl Candidate {
    fn slots(&self) -> u64 {
        (self.end - self.start + 1) as u64
    }
}

// Hour blocks a lane can host when packed backwards from the deadline,
// starting no earlier than `first`.
fn lane_blocks(first: Slot, deadline: Slot, len: u32, idle_lane: bool, out: &mut Vec<Candidate>) {
    if first > deadline {
        return;
    }
    let window = deadline - first + 1;
    let full = window / len;
    for k in 0..full {
        let end = deadline - k * len;
        out.push(Candidate {
            start: end + 1 - len,
            end,
            idle_lane,
        });
    }
    let rest = window - full * len;
    if rest > 0 {
        out.push(Candidate {
            start: first,
            end: first + rest - 1,
            idle_lane,
        });
    }
}

/// Cheapest hourly-charged on-demand schedule finishing `remaining` work by
/// the deadline.
///
/// Each lane is packed with full hours against the deadline plus one leading
/// partial hour; blocks are bought largest first (latest first on ties) until
/// the work is covered. When the remaining work needs every full hour this is
/// exactly `δ` instances over `[t″, deadline]` plus
/// `ō = ⌈(z − committed − κ·δ·Len)/(t″ − 1 − t′)⌉` over `[t′ + 1, t″ − 1]`;
/// with less work it buys `⌈z/Len⌉` hours, which the fixed `δ`-wide block
/// would overshoot.
pub fn endgame_schedule(req: &EndgameRequest) -> Result<EndgameSchedule, PolicyError> {
    if req.len == 0 {
        return Err(PolicyError::BadRequest("zero slots per hour"));
    }
    if req.t_prime >= req.deadline {
        return Err(PolicyError::BadRequest("t' must precede the deadline"));
    }
    if req.o_existing > req.lanes {
        return Err(PolicyError::BadRequest("more paid instances than lanes"));
    }
    if req.o_existing > 0 && (req.busy_until < req.t_prime || req.busy_until > req.deadline) {
        return Err(PolicyError::BadRequest("paid hour outside the window"));
    }
    let len = req.len;
    let window = req.deadline - req.t_prime;
    let kappa = window / len;
    let t_dd = req.deadline + 1 - kappa * len;
    let committed = req.committed();
    let needed = req.remaining.saturating_sub(committed);

    let mut candidates = Vec::new();
    for _ in 0..req.lanes - req.o_existing {
        lane_blocks(req.t_prime + 1, req.deadline, len, true, &mut candidates);
    }
    let busy_first = if req.o_existing > 0 {
        req.busy_until + 1
    } else {
        req.t_prime + 1
    };
    for _ in 0..req.o_existing {
        lane_blocks(busy_first, req.deadline, len, false, &mut candidates);
    }
    candidates.sort_by(|a, b| {
        b.slots()
            .cmp(&a.slots())
            .then(b.start.cmp(&a.start))
            .then(b.idle_lane.cmp(&a.idle_lane))
    });

    let mut covered = 0u64;
    let mut chosen = Vec::new();
    for c in candidates.iter() {
        if covered >= needed {
            break;
        }
        covered += c.slots();
        chosen.push(*c);
    }
    if covered < needed {
        return Err(PolicyError::EndgameInfeasible {
            needed,
            capacity: covered,
            deadline: req.deadline,
        });
    }

    let extra_count = chosen
        .iter()
        .filter(|c| c.idle_lane && c.end < t_dd)
        .count() as u32;
    let full_count = chosen.iter().filter(|c| c.end == req.deadline).count() as u32;

    let mut blocks: Vec<OnDemandBlock> = Vec::new();
    chosen.sort_by_key(|c| (c.start, c.end));
    for c in chosen {
        match blocks.last_mut() {
            Some(b) if b.start == c.start && b.end == c.end => b.count += 1,
            _ => blocks.push(OnDemandBlock {
                start: c.start,
                end: c.end,
                count: 1,
            }),
        }
    }

    Ok(EndgameSchedule {
        t_prime: req.t_prime,
        t_dd,
        deadline: req.deadline,
        kappa,
        committed,
        full_count,
        extra_count,
        blocks,
    })
}

/// How self-owned instances are assigned at arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfOwnedRule {
    /// `min(⌈max(r̄(β₀), 0)⌉, pool_min, δ)`.
    Tuned { beta0: Rational },
    /// `min(pool_min, ⌈z/d⌉, δ)`.
    Intuitive,
}

/// How spot and on-demand instances are split at each flexible update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    Proportion { beta: Rational },
    Theta { theta: Rational },
}

/// A complete allocation policy applied to one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Policy {
    pub self_owned: SelfOwnedRule,
    pub split: SplitRule,
    pub bid: Money,
}

impl Policy {
    pub fn from_params(params: &PolicyParams) -> Policy {
        Policy {
            self_owned: SelfOwnedRule::Tuned {
                beta0: params.beta0,
            },
            split: SplitRule::Proportion { beta: params.beta },
            bid: params.bid,
        }
    }

    pub fn theta_baseline(theta: Rational, bid: Money, self_owned: SelfOwnedRule) -> Policy {
        Policy {
            self_owned,
            split: SplitRule::Theta { theta },
            bid,
        }
    }

    pub fn self_owned_for(&self, job: &Job, pool_min: u32, len: u32) -> u32 {
        match self.self_owned {
            SelfOwnedRule::Tuned { beta0 } => self_owned_allocation(job, beta0, pool_min, len),
            SelfOwnedRule::Intuitive => intuitive_self_owned(job, pool_min),
        }
    }

    pub fn split_for(
        &self,
        z_rem: u64,
        d_rem: u32,
        delta_eff: u32,
        len: u32,
    ) -> Result<SplitDecision, PolicyError> {
        match self.split {
            SplitRule::Proportion { beta } => {
                proportion(z_rem, d_rem, delta_eff, beta, self.bid, len)
            }
            SplitRule::Theta { theta } => Ok(theta_split(delta_eff, theta, self.bid)),
        }
    }
}
