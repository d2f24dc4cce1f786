//! Acceptance criteria, one line each. Exits non-zero if any criterion fails.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::time::{Duration, Instant};

use oracles::{brute_endgame_hours, check_run, SpotModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spotalloc::engine::replay_job;
use spotalloc::model::{Job, Money, Rational, SpotPriceTrace};
use spotalloc::policy::{
    endgame_schedule, kappa2, nu, proportion, r_bar, EndgameRequest, Policy, SelfOwnedRule,
    SplitRule,
};
use spotalloc::EngineConfig;
use spotalloc_cli::experiment::{execute, Family, Report};
use spotalloc_cli::{ExperimentConfig, Mode};

const P: Money = Money::from_micros(250_000);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn beta_grid() -> Vec<Rational> {
    let mut g: Vec<Rational> = (0..12).map(|i| Rational::new(i, 12)).collect();
    g.push(Rational::new(9999, 10000));
    g
}

fn formula_fixtures() -> Outcome {
    let half = Rational::new(1, 2);
    let bid = Money::from_f64(0.1);
    let mut failures = Vec::new();
    let n1 = nu(122, 42, 4, half, 12).unwrap();
    if n1 != 7 || kappa2(n1, 4) != 1 {
        failures.push(format!("nu(122,42)={n1} kappa2={}", kappa2(n1, 4)));
    }
    let n2 = nu(132, 36, 4, half, 12).unwrap();
    let split = proportion(132, 36, 4, half, bid, 12).unwrap();
    if n2 != 2 || (split.spot, split.on_demand) != (2, 2) {
        failures.push(format!(
            "nu(132,36)={n2} split=({},{})",
            split.spot, split.on_demand
        ));
    }
    let a = Job::new(1, 1, 24, 72, 4).unwrap();
    let b = Job::new(2, 1, 24, 48, 4).unwrap();
    let (ra, rb) = (r_bar(&a, half, 12), r_bar(&b, half, 12));
    if ra != Rational::from_integer(2) || rb != Rational::from_integer(0) {
        failures.push(format!("r_bar = {ra}, {rb}"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "nu=7 kappa2=1; nu=2 split (2,2); r_bar 2 and 0".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn random_policy(rng: &mut ChaCha8Rng) -> Policy {
    let grid = beta_grid();
    let self_owned = if rng.random_bool(0.5) {
        SelfOwnedRule::Tuned {
            beta0: grid[rng.random_range(0..grid.len())],
        }
    } else {
        SelfOwnedRule::Intuitive
    };
    let split = if rng.random_bool(0.6) {
        SplitRule::Proportion {
            beta: grid[rng.random_range(0..grid.len())],
        }
    } else {
        SplitRule::Theta {
            theta: Rational::new(rng.random_range(0..=10), 10),
        }
    };
    Policy {
        self_owned,
        split,
        bid: Money::from_micros(rng.random_range(1..400_000)),
    }
}

fn random_trace(rng: &mut ChaCha8Rng, horizon: u32) -> SpotPriceTrace {
    let kind = rng.random_range(0..3);
    let mean = rng.random_range(0.02..1.5);
    let prices = (0..horizon)
        .map(|_| match kind {
            0 => Money::from_f64(-mean * (1.0 - rng.random::<f64>()).ln()),
            1 => Money::from_f64(mean),
            _ => Money::from_micros(rng.random_range(0..600_000)),
        })
        .collect();
    SpotPriceTrace::new(prices).unwrap()
}

fn completion_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let len = 12;
    let triples = 10_000;
    for k in 0..triples {
        let delta = rng.random_range(1..=20);
        let d = rng.random_range(1..=120);
        let z = rng.random_range(1..=(d as u64 * delta as u64));
        let arrival = rng.random_range(1..30);
        let job = Job::new(k + 1, arrival, d, z, delta).unwrap();
        let trace = random_trace(&mut rng, job.last_slot());
        let policy = random_policy(&mut rng);
        let pool = rng.random_range(0..=delta);
        let cfg = EngineConfig::new(len, P, pool);
        let run = match replay_job(&job, &policy, pool, &trace, &cfg) {
            Ok(run) => run,
            Err(e) => return outcome(false, format!("{job:?} {policy:?}: {e}")),
        };
        if let Err(msg) = check_run(&run, len, P) {
            return outcome(false, format!("{msg}: {job:?} {policy:?}"));
        }
    }
    outcome(
        true,
        format!("{triples} triples, identity exact, no deadline missed"),
    )
}

fn proportion_spot_work(m: &SpotModel, beta: Rational) -> (i64, bool) {
    let mut z_rem = m.z;
    let mut spot = 0;
    let mut i = 1;
    loop {
        let d_rem = m.d - (i - 1) * m.len;
        let split = proportion(
            z_rem as u64,
            d_rem as u32,
            m.delta as u32,
            beta,
            Money::from_f64(0.1),
            m.len as u32,
        )
        .unwrap();
        let hour = m.len.min(d_rem);
        let spot_run = m.spot_slots.min(hour);
        z_rem -= split.on_demand as i64 * hour + split.spot as i64 * spot_run;
        spot += split.spot as i64 * spot_run;
        if z_rem <= 0 {
            return (spot, false);
        }
        if (m.d - i * m.len) * m.delta < z_rem {
            return (spot, true);
        }
        i += 1;
    }
}

fn prop3_enumeration() -> Outcome {
    let mut compared = 0;
    for len in [4i64, 12] {
        for (num, den) in [(1, 4), (1, 2), (3, 4)] {
            let beta = Rational::new(num, den);
            for delta in 1..=4 {
                for d in 1..=4 * len {
                    for z in 1..=d * delta {
                        let m = SpotModel {
                            z,
                            d,
                            delta,
                            len,
                            spot_slots: len * num / den,
                        };
                        let (spot, lost) = proportion_spot_work(&m, beta);
                        if !lost {
                            continue;
                        }
                        let best = m.brute_max_spot();
                        if best != Some(spot) || best != Some(m.closed_form()) {
                            return outcome(
                                false,
                                format!("{m:?} beta={beta}: alg {spot} brute {best:?}"),
                            );
                        }
                        compared += 1;
                    }
                }
            }
        }
    }
    outcome(
        compared > 0,
        format!("{compared} instances, proportion = enumeration = (nu+delta)*Len*beta"),
    )
}

fn prop4_enumeration() -> Outcome {
    let len = 4;
    let mut checked = 0;
    for lanes in 1..=3u32 {
        for window in 1..=3 * len {
            for busy in 0..=lanes {
                let paid: Vec<u32> = if busy == 0 {
                    vec![0]
                } else {
                    (1..=window.min(len)).collect()
                };
                for paid in paid {
                    for remaining in 1..=lanes * window {
                        let req = EndgameRequest {
                            remaining: remaining as u64,
                            t_prime: 10,
                            deadline: 10 + window,
                            lanes,
                            o_existing: busy,
                            busy_until: 10 + paid,
                            len,
                        };
                        let brute = brute_endgame_hours(remaining, window, lanes, busy, paid, len);
                        let got = endgame_schedule(&req)
                            .ok()
                            .map(|s| s.instance_hours() as u32);
                        if got != brute {
                            return outcome(
                                false,
                                format!("{req:?}: schedule {got:?} brute {brute:?}"),
                            );
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    outcome(true, format!("{checked} instances, never beaten"))
}

fn monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = beta_grid();
    for _ in 0..1000 {
        let delta = rng.random_range(1..=40);
        let d = rng.random_range(1..=400);
        let z = rng.random_range(1..=(d as u64 * delta as u64));
        let job = Job::new(1, 1, d, z, delta).unwrap();
        let r: Vec<i64> = grid
            .iter()
            .map(|b| {
                r_bar(&job, *b, 12)
                    .max(Rational::from_integer(0))
                    .ceil()
                    .to_integer()
            })
            .collect();
        if r.windows(2).any(|w| w[1] > w[0]) {
            return outcome(false, format!("{job:?}: {r:?}"));
        }
    }
    outcome(true, "1000 jobs, non-increasing over 13 beta0 values")
}

fn preset(mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("paper-v-a").unwrap();
    cfg.experiment.mode = mode;
    cfg
}

fn rho_for(report: &Report, x0: f64, r: u32) -> f64 {
    report
        .rho
        .iter()
        .find(|row| row.x0 == x0 && row.self_owned == r)
        .map_or(f64::NAN, |row| row.rho)
}

fn experiment1(report: &Report) -> Outcome {
    let r3 = rho_for(report, 3.0, 0);
    let r13 = rho_for(report, 13.0, 0);
    outcome(
        r3 > 0.35 && r13 > 0.45,
        format!("rho(x0=3)={r3:.4} (need > 0.35), rho(x0=13)={r13:.4} (need > 0.45)"),
    )
}

fn experiment2() -> Outcome {
    let mut cfg = preset(Mode::SweepSelfowned);
    cfg.experiment.sweep_selfowned.job_types = vec![13.0];
    cfg.experiment.sweep_selfowned.self_owned = vec![200, 400];
    let report = execute(&cfg).unwrap();
    let r200 = rho_for(&report, 13.0, 200);
    let r400 = rho_for(&report, 13.0, 400);
    outcome(
        r200 > 0.20 && r400 > 0.20,
        format!("rho(R=200)={r200:.4}, rho(R=400)={r400:.4} (need > 0.20)"),
    )
}

fn learning() -> Outcome {
    let cfg = preset(Mode::Learn);
    let run = &cfg.experiment.learn;
    assert_eq!(
        (
            run.jobs,
            run.job_types.as_slice(),
            run.self_owned.as_slice()
        ),
        (30_000, &[5.0][..], &[0][..])
    );
    assert!(run.seeds.len() >= 20);
    let report = execute(&cfg).unwrap();
    let rho = rho_for(&report, 5.0, 0);
    let gap = report.learning[0].gap;
    let worst = report
        .regret
        .iter()
        .map(|r| r.report.avg_regret - r.report.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_regret = report
        .regret
        .iter()
        .map(|r| r.report.avg_regret)
        .fold(0.0, f64::max);
    let min_bound = report
        .regret
        .iter()
        .map(|r| r.report.bound)
        .fold(f64::INFINITY, f64::min);
    outcome(
        rho > 0.40 && gap <= 0.10 && worst <= 0.0,
        format!(
            "rho_bar={rho:.4} (need > 0.40); gap to best fixed={gap:.4} (need <= 0.10); \
             regret max {max_regret:.5} vs bound min {min_bound:.3} over {} seeds",
            report.regret.len()
        ),
    )
}

fn price_ordering(report: &Report) -> Outcome {
    let spot_rows: Vec<_> = report
        .policies
        .iter()
        .filter(|r| r.family != Family::Theta || r.theta() != Some(Rational::from_integer(0)))
        .collect();
    let worst = spot_rows
        .iter()
        .map(|r| r.tally.p_prime())
        .fold(0.0, f64::max);
    let bids: std::collections::BTreeSet<_> = spot_rows.iter().map(|r| r.policy.bid).collect();
    outcome(
        worst < P.as_f64() && bids.len() == 7,
        format!(
            "max p' = {worst:.6} over {} policies, {} bids (need < 0.25)",
            spot_rows.len(),
            bids.len()
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report_line = |n: u32, budget: Duration, started: Instant, o: Outcome| {
        let took = started.elapsed();
        let pass = o.pass && took <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n}: {} ({}; {:.1?} of {:?})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took,
            budget
        );
    };

    let t = Instant::now();
    report_line(1, Duration::from_secs(1), t, formula_fixtures());
    let t = Instant::now();
    report_line(2, Duration::from_secs(60), t, completion_identity());
    let t = Instant::now();
    report_line(3, Duration::from_secs(120), t, prop3_enumeration());
    let t = Instant::now();
    report_line(4, Duration::from_secs(120), t, prop4_enumeration());
    let t = Instant::now();
    report_line(5, Duration::from_secs(5), t, monotonicity());

    let t = Instant::now();
    let spot = execute(&preset(Mode::SweepSpot)).unwrap();
    report_line(6, Duration::from_secs(600), t, experiment1(&spot));
    let t = Instant::now();
    report_line(7, Duration::from_secs(900), t, experiment2());
    let t = Instant::now();
    report_line(8, Duration::from_secs(1800), t, learning());
    let t = Instant::now();
    report_line(9, Duration::from_secs(600), t, price_ordering(&spot));

    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
