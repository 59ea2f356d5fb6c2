//! Single-buffer queues with `mu_n = 1 - lambda_n`: each queue holds at most
//! one packet, a served packet always departs, and a new packet arrives with
//! probability `lambda_n` at the end of the slot, accepted only into an empty
//! buffer.
//!
//! Besides plain simulation this module provides exact policy-induced chains
//! and a coupled run of an arbitrary work-conserving policy against Max-λ
//! that asserts the sample-path orderings on every slot.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::metrics::Estimate;
use crate::model::{SystemConfig, UserParams};
use crate::oracle::steady_state;
use crate::sim::RngStream;

/// Work-conserving rules for choosing which non-empty buffers to serve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZooPolicy {
    /// Largest arrival rates first, ties to the smaller position.
    MaxLambda,
    /// Smallest arrival rates first, ties to the smaller position.
    MinLambda,
    /// Fixed priority order over queue positions (first = highest).
    Priority(Vec<usize>),
    /// Uniformly random subset of the non-empty buffers.
    RandomWorkConserving,
}

impl ZooPolicy {
    pub fn name(&self) -> String {
        match self {
            Self::MaxLambda => "max-lambda".into(),
            Self::MinLambda => "min-lambda".into(),
            Self::Priority(order) => {
                let o: Vec<String> = order.iter().map(|n| (n + 1).to_string()).collect();
                format!("priority-{}", o.join(">"))
            }
            Self::RandomWorkConserving => "random-work-conserving".into(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Self::RandomWorkConserving)
    }

    /// Queues to serve, in priority order.
    pub fn serve(
        &self,
        buffer: &[bool],
        lambdas: &[f64],
        m: usize,
        rng: &mut RngStream,
    ) -> Vec<usize> {
        match self {
            Self::MaxLambda => max_lambda_serve(buffer, lambdas, m),
            Self::MinLambda => min_lambda_serve(buffer, lambdas, m),
            Self::Priority(order) => priority_serve(buffer, order, m),
            Self::RandomWorkConserving => {
                let full: Vec<usize> = (0..buffer.len()).filter(|&n| buffer[n]).collect();
                let k = full.len().min(m);
                sample(rng, full.len(), k)
                    .into_iter()
                    .map(|i| full[i])
                    .collect()
            }
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if let Self::Priority(order) = self {
            let mut seen = vec![false; n];
            for &q in order {
                if q >= n || std::mem::replace(&mut seen[q], true) {
                    return Err(domain(format!(
                        "priority order {order:?} is not a permutation of 0..{n}"
                    )));
                }
            }
            if order.len() != n {
                return Err(domain(format!(
                    "priority order {order:?} is not a permutation of 0..{n}"
                )));
            }
        }
        Ok(())
    }
}

fn priority_serve(buffer: &[bool], order: &[usize], m: usize) -> Vec<usize> {
    order
        .iter()
        .copied()
        .filter(|&n| buffer[n])
        .take(m)
        .collect()
}

fn rate_order(lambdas: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| {
        let c = lambdas[a].total_cmp(&lambdas[b]);
        (if descending { c.reverse() } else { c }).then(a.cmp(&b))
    });
    order
}

/// The `min(M, #non-empty)` non-empty queues with the largest rates.
pub fn max_lambda_serve(buffer: &[bool], lambdas: &[f64], m: usize) -> Vec<usize> {
    priority_serve(buffer, &rate_order(lambdas, true), m)
}

/// The `min(M, #non-empty)` non-empty queues with the smallest rates.
pub fn min_lambda_serve(buffer: &[bool], lambdas: &[f64], m: usize) -> Vec<usize> {
    priority_serve(buffer, &rate_order(lambdas, false), m)
}

fn check_rates(lambdas: &[f64], m: usize) -> Result<()> {
    if lambdas.is_empty() {
        return Err(domain("at least one queue is required"));
    }
    if m == 0 {
        return Err(domain("at least one server is required"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(domain(format!("arrival rates must lie in (0, 1), got {l}")));
    }
    Ok(())
}

/// Buffer contents after service: served queues are emptied.
fn temporary_state(buffer: &[bool], served: &[usize]) -> Vec<bool> {
    let mut t = buffer.to_vec();
    for &n in served {
        debug_assert!(t[n], "served an empty buffer");
        t[n] = false;
    }
    t
}

/// Result of one single-buffer run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleBufferRun {
    pub horizon: u64,
    /// Packets served per slot.
    pub throughput: f64,
    pub served: Vec<u64>,
}

/// Simulates `horizon` slots from all-full buffers. Stream `n` drives the
/// arrivals of queue `n`; stream `N` drives the policy's own randomness.
pub fn simulate_single_buffer(
    policy: &ZooPolicy,
    lambdas: &[f64],
    m: usize,
    horizon: u64,
    seed: u64,
    trial: u64,
) -> Result<SingleBufferRun> {
    check_rates(lambdas, m)?;
    policy.check(lambdas.len())?;
    let n = lambdas.len();
    let mut arrivals: Vec<RngStream> = (0..n)
        .map(|q| RngStream::new(seed, trial, q as u64))
        .collect();
    let mut policy_rng = RngStream::new(seed, trial, n as u64);
    let mut buffer = vec![true; n];
    let mut served = vec![0u64; n];
    let mut total = 0u64;
    for _ in 0..horizon {
        let s = policy.serve(&buffer, lambdas, m, &mut policy_rng);
        debug_assert_eq!(s.len(), m.min(buffer.iter().filter(|&&b| b).count()));
        total += s.len() as u64;
        for &q in &s {
            buffer[q] = false;
            served[q] += 1;
        }
        for (q, b) in buffer.iter_mut().enumerate() {
            let a = arrivals[q].bernoulli(lambdas[q]);
            *b = *b || a;
        }
    }
    Ok(SingleBufferRun {
        horizon,
        throughput: total as f64 / horizon.max(1) as f64,
        served,
    })
}

pub fn run_single_buffer(
    policy: &ZooPolicy,
    lambdas: &[f64],
    m: usize,
    horizon: u64,
    seed: u64,
) -> Result<f64> {
    Ok(simulate_single_buffer(policy, lambdas, m, horizon, seed, 0)?.throughput)
}

/// Exact long-run throughput of `policy` from the stationary distribution of
/// the induced chain on `2^N` buffer states. Random selection is averaged
/// over all equally likely subsets.
pub fn exact_policy_throughput(policy: &ZooPolicy, lambdas: &[f64], m: usize) -> Result<f64> {
    check_rates(lambdas, m)?;
    policy.check(lambdas.len())?;
    let n = lambdas.len();
    if n > 12 {
        return Err(crate::Error::Capacity(format!(
            "{n} queues exceed the exact-chain limit of 12"
        )));
    }
    let states = 1usize << n;
    let mut p = vec![vec![0.0; states]; states];
    let mut tx = vec![0.0; states];
    for s in 0..states {
        let buffer: Vec<bool> = (0..n).map(|q| s >> q & 1 == 1).collect();
        for (served, w) in service_distribution(policy, &buffer, lambdas, m) {
            tx[s] += w * served.len() as f64;
            let temp = temporary_state(&buffer, &served);
            let mut dist = vec![w];
            for q in 0..n {
                let up = if temp[q] { 1.0 } else { lambdas[q] };
                let mut next = vec![0.0; dist.len() * 2];
                for (k, &pk) in dist.iter().enumerate() {
                    next[k] += pk * (1.0 - up);
                    next[k | 1 << q] += pk * up;
                }
                dist = next;
            }
            for (t, pt) in dist.into_iter().enumerate() {
                p[s][t] += pt;
            }
        }
    }
    let pi = steady_state(&p)?;
    Ok(pi.iter().zip(&tx).map(|(a, b)| a * b).sum())
}

fn service_distribution(
    policy: &ZooPolicy,
    buffer: &[bool],
    lambdas: &[f64],
    m: usize,
) -> Vec<(Vec<usize>, f64)> {
    if policy.is_deterministic() {
        // The rng is unused by deterministic rules.
        let mut unused = RngStream::new(0, 0, 0);
        return vec![(policy.serve(buffer, lambdas, m, &mut unused), 1.0)];
    }
    let full: Vec<usize> = (0..buffer.len()).filter(|&q| buffer[q]).collect();
    let k = full.len().min(m);
    let subsets: Vec<Vec<usize>> = (0u32..1 << full.len())
        .filter(|mask| mask.count_ones() as usize == k)
        .map(|mask| {
            (0..full.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| full[i])
                .collect()
        })
        .collect();
    let w = 1.0 / subsets.len() as f64;
    subsets.into_iter().map(|s| (s, w)).collect()
}

/// Two queues, one server, strict priority to queue 1: `p10 + p01 + p11`.
pub fn exact_priority_two_queue(lambda1: f64, lambda2: f64) -> Result<f64> {
    exact_policy_throughput(&ZooPolicy::Priority(vec![0, 1]), &[lambda1, lambda2], 1)
}

/// The equivalent multi-user configuration: `c = 1`, `mu = 1 - lambda`,
/// `phi = mu`, unit power and no power constraint.
pub fn single_buffer_config(lambdas: &[f64], m: usize) -> Result<SystemConfig> {
    check_rates(lambdas, m)?;
    Ok(SystemConfig {
        users: lambdas
            .iter()
            .map(|&l| UserParams::binary(l, 1.0 - l, 1.0 - l, 1.0, 1.0))
            .collect(),
        servers: m,
        power_budget: f64::INFINITY,
        tradeoff: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingCheck {
    /// `sum_{n<=j} F^pi <= sum_{n<=j} F^maxλ` after arrivals.
    PartialSum,
    /// The same ordering on the post-service temporary states.
    TemporaryPartialSum,
    /// π transmits no more packets than Max-λ.
    TransmitCount,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingViolation {
    pub slot: u64,
    pub check: CouplingCheck,
    pub state_pi: Vec<bool>,
    pub state_max_lambda: Vec<bool>,
    pub prefix_pi: Vec<u32>,
    pub prefix_max_lambda: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingReport {
    pub holds: bool,
    pub slots: u64,
    pub first_violation: Option<CouplingViolation>,
    pub transmissions_pi: u64,
    pub transmissions_max_lambda: u64,
    /// Number of slots with `A^λ_j = 1`, per queue.
    pub arrivals_max_lambda: Vec<u64>,
    /// Largest `|rate - lambda_j| / stderr` over queues.
    pub max_marginal_z: f64,
    /// The two systems were in the same state on every slot.
    pub states_identical: bool,
}

impl CouplingReport {
    pub fn marginals_ok(&self, z: f64) -> bool {
        self.max_marginal_z <= z
    }
}

fn prefix_sums(state: &[bool]) -> Vec<u32> {
    state
        .iter()
        .scan(0u32, |acc, &b| {
            *acc += b as u32;
            Some(*acc)
        })
        .collect()
}

fn dominated(lo: &[u32], hi: &[u32]) -> bool {
    lo.iter().zip(hi).all(|(a, b)| a <= b)
}

/// Runs `policy_pi` and Max-λ side by side from all-full buffers. The
/// arrivals of π are i.i.d.; those of Max-λ are built from them so that the
/// `l`-th empty temporary buffer of each system is paired, and each `A^λ_j`
/// keeps its Bernoulli(λ_j) law. Stops at the first violated ordering.
///
/// `lambdas` must be sorted ascending.
pub fn coupled_dominance_check(
    policy_pi: &ZooPolicy,
    lambdas: &[f64],
    m: usize,
    horizon: u64,
    seed: u64,
) -> Result<CouplingReport> {
    check_rates(lambdas, m)?;
    policy_pi.check(lambdas.len())?;
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(domain("coupling requires arrival rates sorted ascending"));
    }
    let n = lambdas.len();
    let mut arrivals: Vec<RngStream> = (0..n).map(|q| RngStream::new(seed, 0, q as u64)).collect();
    let mut coupling_rng = RngStream::new(seed, 0, n as u64);
    let mut policy_rng = RngStream::new(seed, 0, n as u64 + 1);

    let mut f_pi = vec![true; n];
    let mut f_ml = vec![true; n];
    let mut report = CouplingReport {
        holds: true,
        slots: 0,
        first_violation: None,
        transmissions_pi: 0,
        transmissions_max_lambda: 0,
        arrivals_max_lambda: vec![0; n],
        max_marginal_z: 0.0,
        states_identical: true,
    };
    let mut a_pi = vec![false; n];
    let mut a_ml = vec![false; n];

    for slot in 0..horizon {
        let s_pi = policy_pi.serve(&f_pi, lambdas, m, &mut policy_rng);
        let s_ml = max_lambda_serve(&f_ml, lambdas, m);
        report.transmissions_pi += s_pi.len() as u64;
        report.transmissions_max_lambda += s_ml.len() as u64;
        let t_pi = temporary_state(&f_pi, &s_pi);
        let t_ml = temporary_state(&f_ml, &s_ml);

        let fail = |check, a: &[bool], b: &[bool]| CouplingViolation {
            slot,
            check,
            state_pi: a.to_vec(),
            state_max_lambda: b.to_vec(),
            prefix_pi: prefix_sums(a),
            prefix_max_lambda: prefix_sums(b),
        };
        if s_pi.len() > s_ml.len() {
            report.first_violation = Some(fail(CouplingCheck::TransmitCount, &f_pi, &f_ml));
            break;
        }
        if !dominated(&prefix_sums(&t_pi), &prefix_sums(&t_ml)) {
            report.first_violation = Some(fail(CouplingCheck::TemporaryPartialSum, &t_pi, &t_ml));
            break;
        }

        for q in 0..n {
            a_pi[q] = arrivals[q].bernoulli(lambdas[q]);
        }
        let empty_pi = (0..n).filter(|&q| !t_pi[q]);
        let mut empty_ml = (0..n).filter(|&q| !t_ml[q]).peekable();
        for q in 0..n {
            a_ml[q] = false;
        }
        // Pair the l-th empty buffers; the temporary ordering guarantees
        // j_pi(l) <= j_ml(l), hence lambda_pi <= lambda_ml.
        for jp in empty_pi {
            let Some(jl) = empty_ml.next() else { break };
            a_ml[jl] = if a_pi[jp] {
                true
            } else {
                let p = (lambdas[jl] - lambdas[jp]) / (1.0 - lambdas[jp]);
                coupling_rng.bernoulli(p)
            };
        }
        for q in 0..n {
            if t_ml[q] {
                a_ml[q] = coupling_rng.bernoulli(lambdas[q]);
            }
        }
        for q in 0..n {
            report.arrivals_max_lambda[q] += a_ml[q] as u64;
            f_pi[q] = t_pi[q] || a_pi[q];
            f_ml[q] = t_ml[q] || a_ml[q];
        }
        report.slots = slot + 1;
        report.states_identical &= f_pi == f_ml;
        if !dominated(&prefix_sums(&f_pi), &prefix_sums(&f_ml)) {
            report.first_violation = Some(fail(CouplingCheck::PartialSum, &f_pi, &f_ml));
            break;
        }
    }
    report.holds = report.first_violation.is_none();
    if report.slots > 0 {
        let t = report.slots as f64;
        report.max_marginal_z = lambdas
            .iter()
            .zip(&report.arrivals_max_lambda)
            .map(|(&l, &c)| (c as f64 / t - l).abs() / (l * (1.0 - l) / t).sqrt())
            .fold(0.0, f64::max);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dominance {
    pub pi: Estimate,
    pub max_lambda: Estimate,
}

impl Dominance {
    /// `mean_pi <= mean_maxλ + z * combined stderr`.
    pub fn holds(&self, z: f64) -> bool {
        let se = self.pi.stderr.hypot(self.max_lambda.stderr);
        self.pi.mean <= self.max_lambda.mean + z * se
    }
}

/// Independent (uncoupled) trials of π and of Max-λ.
pub fn empirical_dominance(
    policy_pi: &ZooPolicy,
    lambdas: &[f64],
    m: usize,
    horizon: u64,
    trials: u64,
    seed: u64,
) -> Result<Dominance> {
    let run = |policy: &ZooPolicy, offset: u64| -> Result<Estimate> {
        let samples = (0..trials)
            .into_par_iter()
            .map(|t| {
                simulate_single_buffer(policy, lambdas, m, horizon, seed, offset + t)
                    .map(|r| r.throughput)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Estimate::from_samples(&samples))
    };
    Ok(Dominance {
        pi: run(policy_pi, 0)?,
        max_lambda: run(&ZooPolicy::MaxLambda, trials)?,
    })
}
