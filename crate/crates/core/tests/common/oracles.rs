//! Independent reference implementations used as test oracles. Nothing here
//! calls into the allocation code it checks.

#![allow(dead_code)]

use spotalloc::model::{JobRun, Money, SpotOutcome};

/// Expected-availability model of a job served by spot and on-demand only:
/// spot runs exactly `spot_slots` of every hour.
#[derive(Debug, Clone, Copy)]
pub struct SpotModel {
    pub z: i64,
    pub d: i64,
    pub delta: i64,
    pub len: i64,
    pub spot_slots: i64,
}

impl SpotModel {
    pub fn updates(&self) -> i64 {
        (self.d + self.len - 1) / self.len
    }

    /// Maximum of `Σ (δ − o^i)·spot_slots` over all on-demand sequences
    /// `o^1..o^κ₁` with `κ₁` updates inside the window such that
    /// - the bids before the last stay within the slack,
    ///   `Σ_{i<κ₁} (δ − o^i)·(len − spot_slots) ≤ dδ − z`;
    /// - the last one exceeds it, `Σ_{i≤κ₁} (δ − o^i)·(len − spot_slots) > dδ − z`;
    /// - expected work remains before every update.
    ///
    /// Returns `None` when no sequence is admissible.
    pub fn brute_max_spot(&self) -> Option<i64> {
        let slack = self.d * self.delta - self.z;
        let lost = self.len - self.spot_slots;
        let mut best = None;
        let mut seq = Vec::new();
        self.search(&mut seq, slack, lost, &mut best);
        best
    }

    fn search(&self, seq: &mut Vec<i64>, slack: i64, lost: i64, best: &mut Option<i64>) {
        let k = seq.len() as i64;
        if k >= self.updates() {
            return;
        }
        let done: i64 = seq
            .iter()
            .map(|o| o * self.len + (self.delta - o) * self.spot_slots)
            .sum();
        if self.z - done <= 0 {
            return;
        }
        let bids_before: i64 = seq.iter().map(|o| self.delta - o).sum();
        if bids_before * lost > slack {
            return;
        }
        for o in 0..=self.delta {
            let bids = bids_before + self.delta - o;
            if bids * lost > slack {
                let value = bids * self.spot_slots;
                if best.is_none_or(|b| value > b) {
                    *best = Some(value);
                }
            }
            seq.push(o);
            self.search(seq, slack, lost, best);
            seq.pop();
        }
    }

    /// `(⌊(dδ − z)/(len − spot_slots)⌋ + δ)·spot_slots`.
    pub fn closed_form(&self) -> i64 {
        let nu = (self.d * self.delta - self.z) / (self.len - self.spot_slots);
        (nu + self.delta) * self.spot_slots
    }
}

/// Minimum number of hour blocks (each at most `len` consecutive slots)
/// covering the set bits of `mask` over `width` slots.
fn blocks_to_cover(mask: u32, width: u32, len: u32) -> u32 {
    let mut count = 0;
    let mut t = 0;
    while t < width {
        if mask & (1 << t) != 0 {
            count += 1;
            t += len;
        } else {
            t += 1;
        }
    }
    count
}

// best[c] = most slots a lane can use for cost c, over every usage pattern
// of the `width` slots it may be charged for.
fn lane_table(width: u32, len: u32, max_cost: usize) -> Vec<u32> {
    let mut best = vec![0u32; max_cost + 1];
    for mask in 0u32..(1 << width) {
        let c = blocks_to_cover(mask, width, len) as usize;
        if c <= max_cost {
            best[c] = best[c].max(mask.count_ones());
        }
    }
    for c in 1..=max_cost {
        best[c] = best[c].max(best[c - 1]);
    }
    best
}

/// Cheapest hourly-charged on-demand completion by exhaustive enumeration of
/// every lane's usage pattern.
///
/// `window` slots follow `t′`; `busy` of the `lanes` lanes are already paid for
/// the first `paid` slots. Returns the minimum number of purchased hours, or
/// `None` if the work cannot be finished.
pub fn brute_endgame_hours(
    remaining: u32,
    window: u32,
    lanes: u32,
    busy: u32,
    paid: u32,
    len: u32,
) -> Option<u32> {
    let committed = busy * paid;
    let needed = remaining.saturating_sub(committed);
    let max_cost = (window as usize).div_ceil(len as usize) * lanes as usize + 1;
    let free = lane_table(window, len, max_cost);
    let after_paid = lane_table(window - paid, len, max_cost);
    // dp[c] = most work for total cost c
    let mut dp = vec![0u32; max_cost + 1];
    for lane in 0..lanes {
        let table = if lane < busy { &after_paid } else { &free };
        let mut next = vec![0u32; max_cost + 1];
        for c in 0..=max_cost {
            for k in 0..=c {
                next[c] = next[c].max(dp[c - k] + table[k]);
            }
        }
        dp = next;
    }
    (0..=max_cost).find(|&c| dp[c] >= needed).map(|c| c as u32)
}

/// Job cost recomputed from the update records.
pub fn recomputed_cost(run: &JobRun, on_demand_price: Money) -> Money {
    let mut total = Money::ZERO;
    for u in &run.updates {
        let outcome = u.outcome.expect("finalized update");
        let (x1, x2, _) = outcome.indicators();
        if x1 + x2 == 1 && u.spot_slots > 0 {
            total += u.spot_price_sum.mul_div(u.spot as i64, u.spot_slots as i64);
        }
        total += on_demand_price * u.on_demand as i64;
    }
    total + on_demand_price * run.endgame_hours as i64
}

/// Checks the completion identity and the per-update and per-slot
/// invariants of a finished run. Returns a description of the first violation.
pub fn check_run(run: &JobRun, len: u32, on_demand_price: Money) -> Result<(), String> {
    let job = run.job;
    let done = run
        .completed_at
        .ok_or_else(|| format!("job {} not completed", job.id))?;
    if done > job.last_slot() {
        return Err(format!(
            "job {} finished at {done} after {}",
            job.id,
            job.last_slot()
        ));
    }
    if run.remaining != 0 {
        return Err(format!("job {} has {} work left", job.id, run.remaining));
    }
    let mut spot_capacity = 0u64;
    let mut spot_work = 0u64;
    for u in &run.updates {
        if u.spot + u.on_demand + run.self_owned != job.parallelism {
            return Err(format!(
                "job {} update {}: r + si + o != delta",
                job.id, u.index
            ));
        }
        let outcome = u
            .outcome
            .ok_or_else(|| format!("job {} update {} unresolved", job.id, u.index))?;
        let slots = match outcome {
            SpotOutcome::FullHour => {
                if u.spot_work != u.spot as u64 * len as u64 {
                    return Err(format!(
                        "job {} update {}: full hour short",
                        job.id, u.index
                    ));
                }
                len
            }
            SpotOutcome::UntilCompletion { slots } => {
                if slots > len {
                    return Err(format!("job {}: T1 > Len", job.id));
                }
                slots
            }
            SpotOutcome::Interrupted { slots } => {
                if slots >= len {
                    return Err(format!("job {}: T2 >= Len", job.id));
                }
                slots
            }
        };
        if slots != u.spot_slots {
            return Err(format!(
                "job {} update {}: slot count mismatch",
                job.id, u.index
            ));
        }
        if !outcome.is_charged() && u.spot_charge != Money::ZERO {
            return Err(format!("job {} update {}: charged X3", job.id, u.index));
        }
        spot_capacity += u.spot as u64 * slots as u64;
        spot_work += u.spot_work;
    }
    let per_slot_spot: u64 = run.usage.iter().map(|s| s.spot as u64).sum();
    if per_slot_spot != spot_work {
        return Err(format!("job {}: spot work disagrees with usage", job.id));
    }
    // only the completion slot may leave capacity unused
    if spot_work > spot_capacity || spot_capacity - spot_work >= job.parallelism as u64 {
        return Err(format!(
            "job {}: spot capacity {spot_capacity} vs work {spot_work}",
            job.id
        ));
    }
    let other: u64 = run
        .usage
        .iter()
        .map(|s| s.on_demand as u64 + s.self_owned as u64)
        .sum();
    if spot_work + other != job.size {
        return Err(format!(
            "job {}: processed {} of {}",
            job.id,
            spot_work + other,
            job.size
        ));
    }
    for (k, s) in run.usage.iter().enumerate() {
        if s.total() > job.parallelism as u64 || s.self_owned > run.self_owned {
            return Err(format!("job {}: slot {} over capacity", job.id, k));
        }
        if job.arrival + k as u32 > done && s.total() > 0 {
            return Err(format!("job {}: work after completion", job.id));
        }
    }
    let cost = run.cost(on_demand_price);
    if cost != recomputed_cost(run, on_demand_price) {
        return Err(format!("job {}: cost mismatch", job.id));
    }
    Ok(())
}
