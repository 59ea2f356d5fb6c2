//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any fails.

use std::time::Instant;

use dlsched::experiment::{random_instance, RandomProtocol};
use dlsched::metrics::Estimate;
use dlsched::multi::{self, queue_bound_multi, MultiUserOptions};
use dlsched::special::{
    coupled_dominance_check, exact_policy_throughput, exact_priority_two_queue,
    simulate_single_buffer, single_buffer_config,
};
use dlsched::{
    build_occupation_lp, optimal_value, presets, relative_error, run_trials, single, Action,
    FileLengthMode, FileSize, RngStream, SystemConfig, UserParams, ZooPolicy,
};
use rand::seq::SliceRandom;
use rand::Rng;

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

fn c1_exact_two_queue() -> Outcome {
    let a = exact_priority_two_queue(0.5, 0.25).unwrap();
    let b = exact_priority_two_queue(0.25, 0.5).unwrap();
    let reps = 1000;
    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(exact_priority_two_queue(std::hint::black_box(0.5), 0.25).unwrap());
    }
    let per_call = t0.elapsed().as_secs_f64() / reps as f64;
    let pass = (a - 0.7).abs() <= 1e-10 && (b - 0.6786).abs() <= 5e-5 && per_call < 1e-3;
    outcome(
        pass,
        format!("(1/2,1/4) = {a:.12} [0.7 +/- 1e-10], (1/4,1/2) = {b:.12} [0.6786 +/- 5e-5], {:.1} us/call [< 1 ms]", per_call * 1e6),
    )
}

fn c2_simulated_two_queue() -> Outcome {
    let prio = ZooPolicy::Priority(vec![0, 1]);
    let a = simulate_single_buffer(&prio, &[0.5, 0.25], 1, 1_000_000, 1, 0)
        .unwrap()
        .throughput;
    let b = simulate_single_buffer(&prio, &[0.25, 0.5], 1, 1_000_000, 1, 0)
        .unwrap()
        .throughput;
    let pass = (a - 0.7).abs() <= 0.005 && (b - 0.6786).abs() <= 0.005;
    outcome(
        pass,
        format!("10^6 slots: {a:.4} [0.7 +/- 0.005], {b:.4} [0.6786 +/- 0.005]"),
    )
}

fn random_user(rng: &mut RngStream, packets_only: bool) -> UserParams {
    let lambda = rng.gen_range(0.02..1.0);
    let weight = rng.gen_range(1.0..5.0);
    let k = rng.gen_range(1..=3u32);
    let packets = packets_only || rng.gen_bool(0.5);
    let mu: f64 = rng.gen_range(0.05..1.0);
    let mut actions = vec![Action::idle()];
    for id in 1..=k {
        let q: f64 = rng.gen_range(0.01..1.0);
        let phi = if packets { q * mu } else { q };
        actions.push(Action::new(id, rng.gen_range(0.25..6.0), phi));
    }
    UserParams {
        lambda,
        file: if packets {
            FileSize::Packets(1.0 / mu)
        } else {
            FileSize::Bits(rng.gen_range(1.0..50.0))
        },
        weight,
        actions,
        length_law: None,
    }
}

fn random_tradeoff(rng: &mut RngStream) -> f64 {
    if rng.gen_bool(0.1) {
        0.0
    } else {
        rng.gen_range(0.0..200.0)
    }
}

fn c3_queue_bounds() -> Outcome {
    let horizon = 100_000;
    let mut rng = RngStream::new(303, 0, 0);
    let (mut queue_violations, mut overspend_violations) = (0, 0);
    let mut tightest: f64 = 0.0;
    for k in 0..100u64 {
        let user = random_user(&mut rng, false);
        let beta = rng.gen_range(0.2..5.0);
        let v = random_tradeoff(&mut rng);
        let bound = single::queue_bound(v, &user, beta).unwrap();
        let mut s = RngStream::new(303, k, 1);
        let m = single::simulate(&user, beta, v, horizon, &mut s, 0, |_| {});
        queue_violations += (m.max_queue > bound) as u32;
        overspend_violations += (m.max_overspend > bound) as u32;
        if bound > 0.0 {
            tightest = tightest.max(m.max_queue / bound);
        }
    }
    for k in 0..100u64 {
        let n = rng.gen_range(2..=8usize);
        let packets_only = k % 2 == 1;
        let config = SystemConfig {
            users: (0..n)
                .map(|_| random_user(&mut rng, packets_only))
                .collect(),
            servers: rng.gen_range(1..n),
            power_budget: rng.gen_range(0.5..10.0),
            tradeoff: random_tradeoff(&mut rng),
        };
        config.validate().unwrap();
        let bound = queue_bound_multi(&config).unwrap();
        let mode = if config.users.iter().all(|u| u.mu().is_some()) {
            FileLengthMode::Packet
        } else {
            FileLengthMode::Memoryless
        };
        let opts = MultiUserOptions {
            mode,
            thinning: 0,
            initial: None,
        };
        let m = multi::simulate(&config, horizon, 303, k, &opts, |_| {}).unwrap();
        queue_violations += (m.max_queue > bound) as u32;
        overspend_violations += (m.max_overspend > bound) as u32;
        if bound > 0.0 {
            tightest = tightest.max(m.max_queue / bound);
        }
    }
    outcome(
        queue_violations == 0 && overspend_violations == 0,
        format!(
            "200 configs x 10^5 slots: {queue_violations} queue-bound and {overspend_violations} overspend violations [0]; max Q/bound = {tightest:.3}"
        ),
    )
}

fn c4_power_constraint(table1: &SystemConfig) -> Outcome {
    let beta = table1.power_budget;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for v in [1.0, 10.0, 70.0, 200.0] {
        let config = table1.with_tradeoff(v);
        let powers: Vec<f64> = (0..5)
            .map(|t| {
                multi::simulate(
                    &config,
                    1_000_000,
                    4,
                    t,
                    &MultiUserOptions::default(),
                    |_| {},
                )
                .unwrap()
                .power
            })
            .collect();
        let max = powers.iter().copied().fold(0.0, f64::max);
        worst = worst.max(max);
        parts.push(format!("V={v}: {max:.5}"));
    }
    outcome(
        worst <= beta + 1e-3,
        format!(
            "max power over 5 trials x 10^6 slots: {} [<= {}]",
            parts.join(", "),
            beta + 1e-3
        ),
    )
}

fn c5_relative_error(table1_opt: f64, v70: &Estimate) -> Outcome {
    let table_err = relative_error(v70.mean, table1_opt).unwrap();
    let base = presets::table1();
    let mean_error = |protocol| {
        let mut rng = RngStream::new(2024, 0, 0);
        let mut sum = 0.0;
        for k in 0..50 {
            let cfg = random_instance(&base, 4, 2, protocol, &mut rng).unwrap();
            let opt = optimal_value(&cfg).unwrap();
            let m = multi::run_multi_user(&cfg, 1_000_000, k, FileLengthMode::Memoryless).unwrap();
            sum += relative_error(m.throughput, opt).unwrap();
        }
        sum / 50.0
    };
    let system = mean_error(RandomProtocol::SystemParameters);
    let control = mean_error(RandomProtocol::ControlParameters);
    outcome(
        table_err <= 0.005 && system <= 0.01,
        format!(
            "Table I V=70: OPT {table1_opt:.6}, mean {:.5} +/- {:.5}, error {table_err:.5} [<= 0.005]; \
             50 random N=4 M=2 instances: mean error {system:.5} [<= 0.01] \
             (control-parameter family, informational: {control:.5})",
            v70.mean, v70.stderr
        ),
    )
}

fn c6_gap_slope() -> Outcome {
    let desc = presets::preset("single-user").unwrap();
    let config = desc.config.unwrap();
    let user = &config.users[0];
    let opt = optimal_value(&config).unwrap();
    let grid = [1.0, 10.0, 100.0, 1000.0];
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .map(|&v| {
            let perf = single::frame_chain_performance(user, config.power_budget, v).unwrap();
            ((v as f64).ln(), (opt - perf.throughput).ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    outcome(
        (slope + 1.0).abs() <= 0.3,
        format!("log-log slope of OPT - throughput over V in {{1,10,100,1000}}: {slope:.3} [-1 +/- 0.3]"),
    )
}

const TRIALS: u64 = 10;
const HORIZON: u64 = 100_000;

fn estimate(policy: &ZooPolicy, lambdas: &[f64], m: usize, seed: u64) -> Estimate {
    let samples: Vec<f64> = (0..TRIALS)
        .map(|t| {
            simulate_single_buffer(policy, lambdas, m, HORIZON, seed, t)
                .unwrap()
                .throughput
        })
        .collect();
    Estimate::from_samples(&samples)
}

fn c7_max_lambda_optimal() -> Outcome {
    let mut rng = RngStream::new(707, 0, 0);
    let (mut beaten, mut off_opt, mut exact_off, mut degenerate) = (0, 0, 0, 0);
    let mut worst_exact: f64 = 0.0;
    for k in 0..20u64 {
        let n = rng.gen_range(2..=6usize);
        let m = rng.gen_range(1..=3.min(n - 1));
        let mut lambdas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        lambdas.sort_by(f64::total_cmp);
        let opt = optimal_value(&single_buffer_config(&lambdas, m).unwrap()).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let max = estimate(&ZooPolicy::MaxLambda, &lambdas, m, 700 + k);
        // A saturated instance can give identical trials and a zero stderr;
        // the estimate cannot resolve gaps finer than one served packet.
        let resolution = 1.0 / (TRIALS * HORIZON) as f64;
        if (max.mean - opt).abs() > 3.0 * max.stderr + resolution {
            off_opt += 1;
        }
        if max.stderr < resolution {
            degenerate += 1;
        }
        for (i, pi) in [
            ZooPolicy::MinLambda,
            ZooPolicy::RandomWorkConserving,
            ZooPolicy::Priority(order),
        ]
        .iter()
        .enumerate()
        {
            let e = estimate(pi, &lambdas, m, 800 + 10 * k + i as u64);
            if max.mean < e.mean - 3.0 * e.stderr.hypot(max.stderr) {
                beaten += 1;
            }
        }
        let exact = exact_policy_throughput(&ZooPolicy::MaxLambda, &lambdas, m).unwrap();
        worst_exact = worst_exact.max((exact - opt).abs());
        exact_off += ((exact - opt).abs() > 1e-9) as u32;
    }
    outcome(
        beaten == 0 && off_opt == 0 && exact_off == 0,
        format!(
            "20 instances (N<=6, M<=3), 10 trials x 10^5 slots: Max-lambda beaten {beaten} times, \
             off LP OPT beyond 3 stderr + 1e-6 resolution {off_opt} times [0, 0] ({degenerate} with zero-variance trials); \
             exact chain vs OPT max diff {worst_exact:.1e} ({exact_off} > 1e-9)"
        ),
    )
}

fn c8_coupling() -> Outcome {
    let lambdas = [0.15, 0.3, 0.45, 0.6, 0.8];
    let m = 2;
    let horizon = 100_000u64;
    let mut violations = 0;
    let mut arrivals = vec![0u64; lambdas.len()];
    let mut identical = 0;
    for seed in 0..100u64 {
        let r =
            coupled_dominance_check(&ZooPolicy::RandomWorkConserving, &lambdas, m, horizon, seed)
                .unwrap();
        violations += !r.holds as u32;
        identical += r.states_identical as u32;
        for (acc, a) in arrivals.iter_mut().zip(&r.arrivals_max_lambda) {
            *acc += a;
        }
    }
    let slots = 100.0 * horizon as f64;
    let max_z = lambdas
        .iter()
        .zip(&arrivals)
        .map(|(&l, &a)| (a as f64 / slots - l).abs() / (l * (1.0 - l) / slots).sqrt())
        .fold(0.0, f64::max);
    outcome(
        violations == 0 && max_z <= 4.0,
        format!(
            "100 seeds x 10^5 slots, random work-conserving vs Max-lambda: {violations} violations [0]; \
             pooled A^lambda marginals max |z| = {max_z:.2} [<= 4]; {identical} runs never diverged"
        ),
    )
}

fn c9_file_length_laws() -> Outcome {
    let mut values = Vec::new();
    for law in ["geometric", "uniform", "poisson"] {
        let mut desc = presets::preset(&format!("table2-{law}")).unwrap();
        desc.horizon = 1_000_000;
        desc.v_grid = Some(vec![70.0]);
        let report = run_trials(&desc, 10, 9).unwrap();
        values.push((law, report.rows[0].summary.throughput));
    }
    let means: Vec<f64> = values.iter().map(|v| v.1.mean).collect();
    let hi = means.iter().copied().fold(f64::MIN, f64::max);
    let lo = means.iter().copied().fold(f64::MAX, f64::min);
    let spread = hi / lo - 1.0;
    let parts: Vec<String> = values
        .iter()
        .map(|(l, e)| format!("{l} {:.4}", e.mean))
        .collect();
    outcome(
        spread <= 0.05,
        format!(
            "Table II V=70, 10 trials x 10^6 slots: {}; spread {spread:.4} [<= 0.05]",
            parts.join(", ")
        ),
    )
}

fn c10_lp_dimensions(table1: &SystemConfig) -> Outcome {
    let d = build_occupation_lp(table1).unwrap().dims();
    outcome(
        d.constraints == 258 && d.variables == 5984 && d.states == 256,
        format!(
            "Table I LP: {} states, {} variables [5984], {} constraints [258]",
            d.states, d.variables, d.constraints
        ),
    )
}

fn c11_packet_equivalence(memoryless: &Estimate) -> Outcome {
    let mut desc = presets::preset("table1").unwrap();
    desc.horizon = 1_000_000;
    desc.v_grid = Some(vec![70.0]);
    desc.file_length_mode = FileLengthMode::Packet;
    let packet = run_trials(&desc, 20, 5).unwrap().rows[0].summary.throughput;
    let tol = 3.0 * memoryless.stderr.hypot(packet.stderr);
    let diff = (memoryless.mean - packet.mean).abs();
    outcome(
        diff <= tol,
        format!(
            "Table I V=70, 20 trials each: memoryless {:.5}, packet {:.5}, |diff| {diff:.5} [<= {tol:.5}]",
            memoryless.mean, packet.mean
        ),
    )
}

fn main() {
    let table1 = presets::table1();
    let table1_opt = optimal_value(&table1).unwrap();
    let mut desc = presets::preset("table1").unwrap();
    desc.horizon = 1_000_000;
    desc.v_grid = Some(vec![70.0]);
    let v70 = run_trials(&desc, 20, 7).unwrap().rows[0].summary.throughput;

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("exact two-queue throughput", Box::new(c1_exact_two_queue)),
        (
            "simulated two-queue throughput",
            Box::new(c2_simulated_two_queue),
        ),
        ("deterministic queue bounds", Box::new(c3_queue_bounds)),
        (
            "Table I power constraint",
            Box::new(|| c4_power_constraint(&table1)),
        ),
        (
            "relative error vs LP optimum",
            Box::new(|| c5_relative_error(table1_opt, &v70)),
        ),
        ("O(1/V) gap", Box::new(c6_gap_slope)),
        ("Max-lambda optimality", Box::new(c7_max_lambda_optimal)),
        ("stochastic coupling", Box::new(c8_coupling)),
        ("file-length robustness", Box::new(c9_file_length_laws)),
        ("LP dimensions", Box::new(|| c10_lp_dimensions(&table1))),
        (
            "memoryless vs packet mode",
            Box::new(|| c11_packet_equivalence(&v70)),
        ),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = check();
        failed += !o.pass as u32;
        println!(
            "{} criterion {:>2} {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() as u32 - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
