//! Lyapunov indexing for `N` users sharing `M` servers under an average
//! power budget.
//!
//! Every slot each active user gets the index
//! `gamma_n = max_a (V c_n B_n phi_n(a) - Q p_n(a)) / (1 + phi_n(a) / lambda_n)`,
//! the `M` users with the largest positive index are served with their
//! maximizing action, and the shared queue is updated with the slot's power.

use crate::error::{domain, Result};
use crate::metrics::{Metrics, Recorder};
use crate::model::{Action, SystemConfig, SystemState, UserParams};
use crate::sim::{sample_file_length, step_idle, step_user_packet_mode, FileLengthMode, RngStream};

/// Per-slot virtual power queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotQueue {
    value: f64,
    budget: f64,
}

impl SlotQueue {
    pub fn new(budget: f64) -> Self {
        Self { value: 0.0, budget }
    }

    pub fn with_value(budget: f64, value: f64) -> Self {
        Self {
            value: value.max(0.0),
            budget,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }
}

/// `Q(t+1) = max{Q(t) + total_power - beta, 0}`.
pub fn update_slot_queue(queue: SlotQueue, total_power: f64) -> SlotQueue {
    SlotQueue {
        value: (queue.value + total_power - queue.budget).max(0.0),
        ..queue
    }
}

fn reward(user: &UserParams, a: &Action, queue_value: f64, v: f64) -> f64 {
    (v * user.weight * user.mean_file() * a.success_prob - queue_value * a.power)
        / (1.0 + a.success_prob / user.lambda)
}

/// Per-slot reward of serving `user` with `action` at backlog `queue_value`.
pub fn reward_g(user: &UserParams, action: &Action, queue_value: f64, v: f64) -> Result<f64> {
    if !user.contains(action) {
        return Err(domain(format!(
            "action {} is not in the user's action set",
            action.id
        )));
    }
    Ok(reward(user, action, queue_value, v))
}

/// Largest reward over the user's actions and the action achieving it
/// (smallest id on ties, so a zero index always maps to idle).
pub fn user_index(user: &UserParams, queue_value: f64, v: f64) -> (f64, &Action) {
    let mut best: Option<(&Action, f64)> = None;
    for a in &user.actions {
        let r = reward(user, a, queue_value, v);
        best = match best {
            Some((b, br)) if br > r || (br == r && b.id < a.id) => Some((b, br)),
            _ => Some((a, r)),
        };
    }
    let (a, g) = best.expect("nonempty action set");
    (g, a)
}

/// Actions for one slot. `served` lists users with a non-idle action, in
/// decreasing index order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotDecision {
    pub actions: Vec<u32>,
    pub served: Vec<usize>,
}

impl SlotDecision {
    pub fn served_count(&self) -> usize {
        self.actions.iter().filter(|&&a| a != Action::IDLE).count()
    }
}

/// Reusable buffers for [`select_into`].
#[derive(Debug, Default)]
pub struct Scratch {
    candidates: Vec<(f64, usize, u32)>,
}

/// Allocation-free form of [`select_and_act`].
pub fn select_into(
    active: &[bool],
    queue_value: f64,
    config: &SystemConfig,
    scratch: &mut Scratch,
    out: &mut SlotDecision,
) {
    let v = config.tradeoff;
    out.actions.clear();
    out.actions.resize(config.users.len(), Action::IDLE);
    out.served.clear();
    scratch.candidates.clear();
    for (n, user) in config.users.iter().enumerate() {
        if !active[n] {
            continue;
        }
        let (gamma, a) = user_index(user, queue_value, v);
        // A zero index means the best action is idle; it would occupy a
        // server without doing anything.
        if gamma > 0.0 {
            scratch.candidates.push((gamma, n, a.id));
        }
    }
    let cands = &mut scratch.candidates;
    let m = config.servers.min(cands.len());
    let by_rank =
        |x: &(f64, usize, u32), y: &(f64, usize, u32)| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1));
    if m < cands.len() {
        cands.select_nth_unstable_by(m, by_rank);
    }
    cands[..m].sort_unstable_by(by_rank);
    for &(_, n, id) in &cands[..m] {
        out.actions[n] = id;
        out.served.push(n);
    }
}

/// Serves the (at most `M`) active users with the largest positive index,
/// ties broken by user position.
pub fn select_and_act(
    state: &SystemState,
    queue: &SlotQueue,
    config: &SystemConfig,
) -> SlotDecision {
    let mut out = SlotDecision::default();
    select_into(
        &state.file_state,
        queue.value,
        config,
        &mut Scratch::default(),
        &mut out,
    );
    out
}

/// Deterministic bound on the slot queue:
/// `max{V c_max B_max / p_min + sum_n p_n^max - beta, 0}`.
pub fn queue_bound_multi(config: &SystemConfig) -> Result<f64> {
    let p_min = config.p_min().unwrap_or(f64::INFINITY);
    if !(p_min > 0.0) {
        return Err(domain("p^min must be positive"));
    }
    let c_max = config.users.iter().map(|u| u.weight).fold(0.0, f64::max);
    let b_max = config
        .users
        .iter()
        .map(|u| u.mean_file())
        .fold(0.0, f64::max);
    let drift = if config.tradeoff == 0.0 {
        0.0
    } else {
        config.tradeoff * c_max * b_max / p_min
    };
    let p_sum: f64 = config.users.iter().map(|u| u.p_max()).sum();
    Ok((drift + p_sum - config.power_budget).max(0.0))
}

/// Trace of one slot handed to simulation observers.
#[derive(Debug)]
pub struct SlotTrace<'a> {
    pub slot: u64,
    pub queue: f64,
    pub active: &'a [bool],
    pub decision: &'a SlotDecision,
    pub total_power: f64,
}

/// Simulation options beyond the configuration itself.
#[derive(Debug, Clone)]
pub struct MultiUserOptions {
    pub mode: FileLengthMode,
    pub thinning: u64,
    /// Initial file state; all users active when `None`.
    pub initial: Option<Vec<bool>>,
}

impl Default for MultiUserOptions {
    fn default() -> Self {
        Self {
            mode: FileLengthMode::Memoryless,
            thinning: 0,
            initial: None,
        }
    }
}

/// Runs the indexing policy for `horizon` slots of trial `trial`. User `n`
/// draws from stream `(seed, trial, n)`.
pub fn simulate(
    config: &SystemConfig,
    horizon: u64,
    seed: u64,
    trial: u64,
    opts: &MultiUserOptions,
    mut observer: impl FnMut(&SlotTrace<'_>),
) -> Result<Metrics> {
    let n_users = config.users.len();
    let mut rngs: Vec<RngStream> = (0..n_users as u64)
        .map(|n| RngStream::new(seed, trial, n))
        .collect();
    let mut active = opts.initial.clone().unwrap_or_else(|| vec![true; n_users]);
    if active.len() != n_users {
        return Err(domain(
            "initial state length differs from the number of users",
        ));
    }

    let packet = opts.mode == FileLengthMode::Packet;
    let mut laws = Vec::new();
    let mut q_hat = Vec::new();
    let mut residual = vec![0u32; n_users];
    if packet {
        for (n, user) in config.users.iter().enumerate() {
            let law = user.packet_law()?;
            law.validate()?;
            let mu = user.mu().expect("packet law implies packet user");
            // Per-packet success of each action, indexed like `user.actions`.
            let per_action = user
                .actions
                .iter()
                .map(|a| {
                    let q = a.success_prob / mu;
                    if q > 1.0 + 1e-12 {
                        Err(domain(format!(
                            "users[{n}]: success_prob exceeds mu for action {}",
                            a.id
                        )))
                    } else {
                        Ok(q.min(1.0))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            q_hat.push(per_action);
            laws.push(law);
            if active[n] {
                residual[n] = sample_file_length(&law, &mut rngs[n]);
            }
        }
    }

    let mut rec = Recorder::new(n_users, config.power_budget, horizon, opts.thinning);
    let mut queue = SlotQueue::new(config.power_budget);
    let mut scratch = Scratch::default();
    let mut decision = SlotDecision::default();

    for slot in 0..horizon {
        select_into(&active, queue.value, config, &mut scratch, &mut decision);
        let mut total_power = 0.0;
        let mut total_reward = 0.0;
        for &n in &decision.served {
            let user = &config.users[n];
            let a = user
                .action(decision.actions[n])
                .expect("chosen from the user's set");
            total_power += a.power;
            total_reward += user.weight * user.mean_file() * a.success_prob;
            rec.served(n);
        }
        observer(&SlotTrace {
            slot,
            queue: queue.value,
            active: &active,
            decision: &decision,
            total_power,
        });
        rec.slot(total_reward, total_power, queue.value);

        for n in 0..n_users {
            let rng = &mut rngs[n];
            if active[n] {
                let id = decision.actions[n];
                if id == Action::IDLE {
                    continue;
                }
                let user = &config.users[n];
                let done = if packet {
                    let k = user
                        .actions
                        .iter()
                        .position(|a| a.id == id)
                        .expect("known action");
                    let step = step_user_packet_mode(residual[n], q_hat[n][k], rng)?;
                    residual[n] = step.residual;
                    step.completed
                } else {
                    rng.bernoulli(user.action(id).expect("known action").success_prob)
                };
                if done {
                    active[n] = false;
                    rec.completed(n);
                }
            } else if step_idle(config.users[n].lambda, rng) {
                active[n] = true;
                if packet {
                    residual[n] = sample_file_length(&laws[n], rng);
                }
            }
        }
        queue = update_slot_queue(queue, total_power);
    }
    Ok(rec.finish())
}

/// Single-trial run of the indexing policy from the all-active state.
pub fn run_multi_user(
    config: &SystemConfig,
    horizon: u64,
    seed: u64,
    mode: FileLengthMode,
) -> Result<Metrics> {
    let opts = MultiUserOptions {
        mode,
        ..Default::default()
    };
    simulate(config, horizon, seed, 0, &opts, |_| {})
}
