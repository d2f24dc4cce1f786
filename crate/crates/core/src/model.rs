//! Domain types shared by the policy functions, the engine and the learner.
//!
//! Work, time and capacity are integers: work is measured in instance-slots,
//! time in 1-based slots, capacity in instance counts. Money is fixed-point
//! (micro-units) so that charge accounting is bit-exact across runs.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use thiserror::Error;

/// A 1-based time slot index.
pub type Slot = u32;

/// Exact rational used for slackness, β grids and other threshold comparisons.
pub type Rational = Ratio<i64>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("job {id}: {field} must be at least 1")]
    NonPositive { id: u64, field: &'static str },
    #[error("job {id}: size {size} exceeds parallelism {parallelism} x deadline {deadline} (z <= delta * d)")]
    Infeasible {
        id: u64,
        size: u64,
        parallelism: u32,
        deadline: u32,
    },
    #[error("slackness of job {0} is undefined: no remaining work")]
    NoRemainingWork(u64),
    #[error("slot length of {0} minutes does not divide an hour")]
    SlotLength(u32),
    #[error("policy parameter {name} = {value} outside {range}")]
    ParamRange {
        name: &'static str,
        value: Rational,
        range: &'static str,
    },
    #[error("bid must be positive, got {0}")]
    Bid(Money),
    #[error("negative spot price {price} at slot {slot}")]
    NegativePrice { slot: Slot, price: Money },
    #[error(
        "reservation of {count} instances over [{from}, {to}] exceeds pool capacity {capacity}"
    )]
    PoolOverflow {
        from: Slot,
        to: Slot,
        count: u32,
        capacity: u32,
    },
    #[error("invalid money literal {0:?}")]
    MoneyLiteral(String),
}

/// Slots per hour (`Len`) for a slot length of `slot_minutes` minutes.
pub fn slots_per_hour(slot_minutes: u32) -> Result<u32, ModelError> {
    if slot_minutes == 0 || 60 % slot_minutes != 0 {
        return Err(ModelError::SlotLength(slot_minutes));
    }
    Ok(60 / slot_minutes)
}

/// Fixed-point money amount in micro-units (1e-6).
///
/// Prices are per instance-hour unless stated otherwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);
    pub const SCALE: i64 = 1_000_000;

    pub const fn from_micros(micros: i64) -> Money {
        Money(micros)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    /// Rounds to the nearest micro-unit.
    pub fn from_f64(value: f64) -> Money {
        Money((value * Self::SCALE as f64).round() as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    /// `self * num / den`, rounded half away from zero.
    pub fn mul_div(self, num: i64, den: i64) -> Money {
        assert!(den > 0, "mul_div by non-positive denominator");
        let wide = self.0 as i128 * num as i128;
        let half = den as i128 / 2;
        let q = if wide >= 0 {
            (wide + half) / den as i128
        } else {
            (wide - half) / den as i128
        };
        Money(q as i64)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(
            f,
            "{sign}{}.{:06}",
            abs / Self::SCALE as u64,
            abs % Self::SCALE as u64
        )
    }
}

impl FromStr for Money {
    type Err = ModelError;

    /// Parses a decimal literal exactly (at most six fractional digits).
    fn from_str(s: &str) -> Result<Money, ModelError> {
        let bad = || ModelError::MoneyLiteral(s.to_string());
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if (int_part.is_empty() && frac_part.is_empty())
            || frac_part.len() > 6
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let int: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let mut frac: i64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| bad())?
        };
        for _ in frac_part.len()..6 {
            frac *= 10;
        }
        let micros = int
            .checked_mul(Self::SCALE)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        Ok(Money(if neg { -micros } else { micros }))
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Mul<i64> for Money {
    type Output = Money;
    fn mul(self, rhs: i64) -> Money {
        Money(self.0 * rhs)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

/// Static description of one arriving job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Job {
    pub id: u64,
    /// Arrival slot `a_j`.
    pub arrival: Slot,
    /// Relative deadline `d_j` in slots; the job must finish by `arrival + deadline - 1`.
    pub deadline: u32,
    /// Size `z_j` in instance-slots.
    pub size: u64,
    /// Parallelism bound `δ_j`.
    pub parallelism: u32,
}

impl Job {
    pub fn new(
        id: u64,
        arrival: Slot,
        deadline: u32,
        size: u64,
        parallelism: u32,
    ) -> Result<Job, ModelError> {
        let positive = [
            ("arrival", arrival as u64),
            ("deadline", deadline as u64),
            ("size", size),
            ("parallelism", parallelism as u64),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::NonPositive { id, field });
        }
        if size > parallelism as u64 * deadline as u64 {
            return Err(ModelError::Infeasible {
                id,
                size,
                parallelism,
                deadline,
            });
        }
        Ok(Job {
            id,
            arrival,
            deadline,
            size,
            parallelism,
        })
    }

    /// Absolute deadline slot `a_j + d_j - 1`.
    pub fn last_slot(&self) -> Slot {
        self.arrival + self.deadline - 1
    }

    /// `d_j·δ_j − z_j`, never negative for a valid job.
    pub fn slack(&self) -> u64 {
        self.deadline as u64 * self.parallelism as u64 - self.size
    }

    /// Initial slackness `d_j·δ_j / z_j`.
    pub fn slackness(&self) -> Rational {
        Ratio::new(
            self.deadline as i64 * self.parallelism as i64,
            self.size as i64,
        )
    }
}

/// One point `{β₀, β, b}` of the policy grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolicyParams {
    pub beta: Rational,
    pub beta0: Rational,
    pub bid: Money,
}

impl PolicyParams {
    pub fn new(beta: Rational, beta0: Rational, bid: Money) -> Result<PolicyParams, ModelError> {
        let zero = Rational::from_integer(0);
        let one = Rational::from_integer(1);
        if beta < zero || beta > one {
            return Err(ModelError::ParamRange {
                name: "beta",
                value: beta,
                range: "[0, 1]",
            });
        }
        if beta0 < zero || beta0 >= one {
            return Err(ModelError::ParamRange {
                name: "beta0",
                value: beta0,
                range: "[0, 1)",
            });
        }
        if bid <= Money::ZERO {
            return Err(ModelError::Bid(bid));
        }
        Ok(PolicyParams { beta, beta0, bid })
    }
}

/// Per-slot spot prices, indexed from slot 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpotPriceTrace {
    prices: Vec<Money>,
}

impl SpotPriceTrace {
    pub fn new(prices: Vec<Money>) -> Result<SpotPriceTrace, ModelError> {
        if let Some(i) = prices.iter().position(|p| *p < Money::ZERO) {
            return Err(ModelError::NegativePrice {
                slot: i as Slot + 1,
                price: prices[i],
            });
        }
        Ok(SpotPriceTrace { prices })
    }

    /// Price at slot `t` (1-based).
    pub fn at(&self, t: Slot) -> Option<Money> {
        t.checked_sub(1)
            .and_then(|i| self.prices.get(i as usize))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn prices(&self) -> &[Money] {
        &self.prices
    }
}

/// Reservation table over `R` self-owned instances.
#[derive(Debug, Clone)]
pub struct SelfOwnedPool {
    capacity: u32,
    // reserved[t - 1] = instances reserved at slot t
    reserved: Vec<u32>,
}

impl SelfOwnedPool {
    pub fn new(capacity: u32, horizon: Slot) -> SelfOwnedPool {
        SelfOwnedPool {
            capacity,
            reserved: vec![0; horizon as usize],
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    fn ensure(&mut self, t: Slot) {
        if self.reserved.len() < t as usize {
            self.reserved.resize(t as usize, 0);
        }
    }

    /// Idle instances `N(t)`.
    pub fn idle(&self, t: Slot) -> u32 {
        let used = self
            .reserved
            .get(t.saturating_sub(1) as usize)
            .copied()
            .unwrap_or(0);
        self.capacity - used
    }

    /// `m_{t1}(t2)`: instances idle at every slot of `[t1, t2]`.
    pub fn min_idle(&self, t1: Slot, t2: Slot) -> u32 {
        debug_assert!(1 <= t1 && t1 <= t2);
        (t1..=t2)
            .map(|t| self.idle(t))
            .min()
            .unwrap_or(self.capacity)
    }

    pub fn reserve(&mut self, t1: Slot, t2: Slot, count: u32) -> Result<(), ModelError> {
        if count == 0 || t1 > t2 {
            return Ok(());
        }
        if self.min_idle(t1, t2) < count {
            return Err(ModelError::PoolOverflow {
                from: t1,
                to: t2,
                count,
                capacity: self.capacity,
            });
        }
        self.ensure(t2);
        for slot in &mut self.reserved[(t1 - 1) as usize..t2 as usize] {
            *slot += count;
        }
        Ok(())
    }

    /// Returns `count` instances over `[t1, t2]`; the range must have been reserved.
    pub fn release(&mut self, t1: Slot, t2: Slot, count: u32) {
        if count == 0 || t1 > t2 {
            return;
        }
        for slot in &mut self.reserved[(t1 - 1) as usize..t2 as usize] {
            debug_assert!(*slot >= count);
            *slot -= count;
        }
    }
}

/// How the spot instances of one allocation update ended (the `X_{j,·}^i`
/// indicators together with `T_{j,1}^i` / `T_{j,2}^i`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpotOutcome {
    /// Ran for the entire hour and the job continued afterwards (X1).
    FullHour,
    /// Ran until the job completed; the tenant terminates them (X2, `T1` slots).
    UntilCompletion { slots: u32 },
    /// Interrupted by the cloud or never obtained (X3, `T2` slots, not charged).
    Interrupted { slots: u32 },
}

impl SpotOutcome {
    /// `(X1, X2, X3)`.
    pub fn indicators(self) -> (u8, u8, u8) {
        match self {
            SpotOutcome::FullHour => (1, 0, 0),
            SpotOutcome::UntilCompletion { .. } => (0, 1, 0),
            SpotOutcome::Interrupted { .. } => (0, 0, 1),
        }
    }

    pub fn is_charged(self) -> bool {
        !matches!(self, SpotOutcome::Interrupted { .. })
    }

    /// Slots during which spot instances ran in this update.
    pub fn slots(self, len: u32) -> u32 {
        match self {
            SpotOutcome::FullHour => len,
            SpotOutcome::UntilCompletion { slots } | SpotOutcome::Interrupted { slots } => slots,
        }
    }
}

/// One hourly allocation update of a job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateRecord {
    /// 1-based update index `i`.
    pub index: u32,
    pub start: Slot,
    /// `si_j^i`.
    pub spot: u32,
    /// `o_j^i`, charged one full hour each.
    pub on_demand: u32,
    /// `b_j^i`.
    pub bid: Money,
    /// Slots during which the spot instances were running.
    pub spot_slots: u32,
    /// Sum of trace prices over the running slots.
    pub spot_price_sum: Money,
    /// Instance-slots of work actually done by spot instances.
    pub spot_work: u64,
    pub outcome: Option<SpotOutcome>,
    /// Spot charge `si·p̄·(X1 + X2)`.
    pub spot_charge: Money,
}

impl UpdateRecord {
    pub fn new(index: u32, start: Slot, spot: u32, on_demand: u32, bid: Money) -> UpdateRecord {
        UpdateRecord {
            index,
            start,
            spot,
            on_demand,
            bid,
            spot_slots: 0,
            spot_price_sum: Money::ZERO,
            spot_work: 0,
            outcome: None,
            spot_charge: Money::ZERO,
        }
    }

    /// Average spot price `p_j^i` over the slots the instances ran.
    pub fn average_spot_price(&self) -> Money {
        if self.spot_slots == 0 {
            Money::ZERO
        } else {
            self.spot_price_sum.mul_div(1, self.spot_slots as i64)
        }
    }
}

/// Instances actually used by a job at one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotUsage {
    pub self_owned: u32,
    pub spot: u32,
    pub on_demand: u32,
}

impl SlotUsage {
    pub fn total(&self) -> u64 {
        self.self_owned as u64 + self.spot as u64 + self.on_demand as u64
    }
}

/// Mutable execution state of one job.
#[derive(Debug, Clone)]
pub struct JobRun {
    pub job: Job,
    /// `r_j`, fixed at arrival for the whole window.
    pub self_owned: u32,
    /// Unprocessed work; equals `z_j^i` at update boundaries.
    pub remaining: u64,
    /// Current allocation update index `i` (1-based).
    pub update_index: u32,
    pub updates: Vec<UpdateRecord>,
    /// Usage per slot of `[a_j, a_j + d_j − 1]`.
    pub usage: Vec<SlotUsage>,
    /// On-demand instance-hours bought by the endgame schedule.
    pub endgame_hours: u32,
    pub endgame_started: Option<Slot>,
    pub completed_at: Option<Slot>,
}

impl JobRun {
    pub fn new(job: Job, self_owned: u32) -> JobRun {
        JobRun {
            job,
            self_owned,
            remaining: job.size,
            update_index: 1,
            updates: Vec::new(),
            usage: vec![SlotUsage::default(); job.deadline as usize],
            endgame_hours: 0,
            endgame_started: None,
            completed_at: None,
        }
    }

    /// Usage at absolute slot `t`.
    pub fn usage_at(&self, t: Slot) -> Option<&SlotUsage> {
        t.checked_sub(self.job.arrival)
            .and_then(|k| self.usage.get(k as usize))
    }

    pub fn is_complete(&self) -> bool {
        self.completed_at.is_some()
    }

    /// Money charged for this job (spot and on-demand only).
    pub fn cost(&self, on_demand_price: Money) -> Money {
        let spot: Money = self.updates.iter().map(|u| u.spot_charge).sum();
        let hours: i64 = self.updates.iter().map(|u| u.on_demand as i64).sum::<i64>()
            + self.endgame_hours as i64;
        spot + on_demand_price * hours
    }

    pub fn spot_charge(&self) -> Money {
        self.updates.iter().map(|u| u.spot_charge).sum()
    }

    pub fn on_demand_hours(&self) -> u64 {
        self.updates.iter().map(|u| u.on_demand as u64).sum::<u64>() + self.endgame_hours as u64
    }

    pub fn spot_work(&self) -> u64 {
        self.usage.iter().map(|u| u.spot as u64).sum()
    }

    pub fn on_demand_work(&self) -> u64 {
        self.usage.iter().map(|u| u.on_demand as u64).sum()
    }

    pub fn self_owned_work(&self) -> u64 {
        self.usage.iter().map(|u| u.self_owned as u64).sum()
    }

    /// Work accounted by the update records plus per-slot on-demand and
    /// self-owned usage. Equals `z_j` for every completed job.
    pub fn accounted_work(&self) -> u64 {
        let spot: u64 = self.updates.iter().map(|u| u.spot_work).sum();
        spot + self.on_demand_work() + self.self_owned_work()
    }
}

/// Current slackness `s_j^i = (d_j − (i−1)·Len)·δ_j / z_j^i`, exact.
pub fn slackness(run: &JobRun, len: u32) -> Result<Rational, ModelError> {
    if run.remaining == 0 {
        return Err(ModelError::NoRemainingWork(run.job.id));
    }
    let window = run.job.deadline as i64 - (run.update_index as i64 - 1) * len as i64;
    Ok(Ratio::new(
        window * run.job.parallelism as i64,
        run.remaining as i64,
    ))
}

/// Whether the job can still use spot instances at the next update
/// (`s_j^{i+1} ≥ 1` with the current remaining work).
pub fn has_flexibility(run: &JobRun, len: u32) -> bool {
    if run.remaining == 0 {
        return false;
    }
    let window = run.job.deadline as i64 - run.update_index as i64 * len as i64;
    window * run.job.parallelism as i64 >= run.remaining as i64
}
