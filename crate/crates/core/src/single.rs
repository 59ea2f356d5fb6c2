//! Renewal-frame drift-plus-penalty control of a single user.
//!
//! A frame starts every time the user returns to the active state. One
//! action is chosen per frame, maximizing
//!
//! ```text
//! (V * B * phi(a) - Q * p(a)) / (1 + phi(a) / lambda)
//! ```
//!
//! and the virtual queue `Q` is updated once per frame with the frame's
//! power and length.

use std::collections::HashMap;

use crate::error::{domain, Result};
use crate::metrics::{Metrics, Recorder};
use crate::model::{Action, UserParams};
use crate::oracle::markov::steady_state;
use crate::sim::{sample_idle_duration, RngStream};

/// Per-frame virtual power queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameQueue {
    value: f64,
    budget: f64,
}

impl FrameQueue {
    pub fn new(budget: f64) -> Self {
        Self { value: 0.0, budget }
    }

    /// A queue holding `value`; used to evaluate decisions at a given backlog.
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

/// `Q' = max{Q + p - beta * T, 0}`.
pub fn update_frame_queue(queue: FrameQueue, power: f64, frame_length: u64) -> Result<FrameQueue> {
    if !(power >= 0.0) {
        return Err(domain(format!(
            "frame power must be nonnegative, got {power}"
        )));
    }
    if frame_length == 0 {
        return Err(domain("frame length must be at least one slot"));
    }
    let value = (queue.value + power - queue.budget * frame_length as f64).max(0.0);
    Ok(FrameQueue { value, ..queue })
}

fn ratio(v: f64, mean_file: f64, lambda: f64, queue: f64, a: &Action) -> f64 {
    (v * mean_file * a.success_prob - queue * a.power) / (1.0 + a.success_prob / lambda)
}

/// Drift-plus-penalty ratio of `action` at the current backlog.
pub fn dpp_index(action: &Action, queue: &FrameQueue, v: f64, user: &UserParams) -> Result<f64> {
    if !user.contains(action) {
        return Err(domain(format!(
            "action {} is not in the user's action set",
            action.id
        )));
    }
    Ok(ratio(v, user.mean_file(), user.lambda, queue.value, action))
}

/// The action maximizing [`dpp_index`]; ties go to the smallest id.
pub fn choose_action<'u>(queue: &FrameQueue, v: f64, user: &'u UserParams) -> &'u Action {
    let mut best: Option<(&Action, f64)> = None;
    for a in &user.actions {
        let r = ratio(v, user.mean_file(), user.lambda, queue.value, a);
        best = match best {
            Some((b, br)) if br > r || (br == r && b.id < a.id) => Some((b, br)),
            _ => Some((a, r)),
        };
    }
    best.expect("nonempty action set").0
}

/// Deterministic bound `max{V * B / p_min + p_max - beta, 0}` on the frame
/// queue.
pub fn queue_bound(v: f64, user: &UserParams, beta: f64) -> Result<f64> {
    let p_min = user.p_min().unwrap_or(f64::INFINITY);
    if !(p_min > 0.0) {
        return Err(domain("p^min must be positive"));
    }
    let drift = if v == 0.0 {
        0.0
    } else {
        v * user.mean_file() / p_min
    };
    Ok((drift + user.p_max() - beta).max(0.0))
}

/// What happened in one renewal frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub index: u64,
    pub start_slot: u64,
    pub action: u32,
    pub frame_length: u64,
    pub power: f64,
    pub completed: bool,
    /// Queue value in force during the frame.
    pub queue: f64,
}

/// Runs the frame-based controller for `horizon` slots starting from an
/// active file and an empty queue. `on_frame` sees every frame, including a
/// final frame truncated by the horizon.
pub fn simulate(
    user: &UserParams,
    beta: f64,
    v: f64,
    horizon: u64,
    rng: &mut RngStream,
    thinning: u64,
    mut on_frame: impl FnMut(&FrameRecord),
) -> Metrics {
    let mut rec = Recorder::new(1, beta, horizon, thinning);
    let mut queue = FrameQueue::new(beta);
    let b = user.mean_file();
    let mut slot = 0u64;
    let mut index = 0u64;
    while slot < horizon {
        let action = choose_action(&queue, v, user);
        let completed = rng.bernoulli(action.success_prob);
        let frame_length = if completed {
            1 + sample_idle_duration(user.lambda, rng)
        } else {
            1
        };
        let record = FrameRecord {
            index,
            start_slot: slot,
            action: action.id,
            frame_length,
            power: action.power,
            completed,
            queue: queue.value,
        };
        on_frame(&record);
        if !action.is_idle() {
            rec.served(0);
        }
        if completed {
            rec.completed(0);
        }
        // Power and expected reward are attributed to the frame's first slot.
        rec.slot(b * action.success_prob, action.power, queue.value);
        let end = (slot + frame_length).min(horizon);
        for _ in slot + 1..end {
            rec.slot(0.0, 0.0, queue.value);
        }
        slot += frame_length;
        index += 1;
        queue = update_frame_queue(queue, action.power, frame_length).expect("valid frame");
    }
    rec.finish()
}

/// Single-trial run with seed stream `(seed, 0, 0)`.
pub fn run_single_user(user: &UserParams, beta: f64, v: f64, horizon: u64, seed: u64) -> Metrics {
    let mut rng = RngStream::new(seed, 0, 0);
    simulate(user, beta, v, horizon, &mut rng, 0, |_| {})
}

/// Long-run performance of the controller computed from the frame-level
/// queue chain rather than by simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameChainPerformance {
    pub throughput: f64,
    pub power: f64,
    /// Number of recurrent-or-reachable queue levels in the chain.
    pub states: usize,
}

/// Exact time-average throughput and power of the controller.
///
/// With integer action powers and an integer budget the frame queue lives on
/// the integers `0..=queue_bound`, so `Q[k]` is a finite Markov chain. Its
/// stationary law gives the renewal-reward averages
/// `E[B phi] / E[1 + phi/lambda]` and `E[p] / E[1 + phi/lambda]`.
pub fn frame_chain_performance(
    user: &UserParams,
    beta: f64,
    v: f64,
) -> Result<FrameChainPerformance> {
    let integral = |x: f64| x.is_finite() && x.fract() == 0.0;
    if !integral(beta) || !user.actions.iter().all(|a| integral(a.power)) {
        return Err(domain("exact frame chain needs integer powers and budget"));
    }
    let bound = queue_bound(v, user, beta)?;
    if bound > 5.0e4 {
        return Err(crate::Error::Capacity(format!(
            "queue bound {bound} too large for a dense chain"
        )));
    }
    let beta = beta as i64;
    let lambda = user.lambda;

    let step = |q: i64| -> (f64, Vec<(i64, f64)>) {
        let a = choose_action(&FrameQueue::with_value(beta as f64, q as f64), v, user);
        let (p, phi) = (a.power as i64, a.success_prob);
        let mut next = Vec::new();
        if phi < 1.0 {
            next.push(((q + p - beta).max(0), 1.0 - phi));
        }
        if phi > 0.0 {
            // Idle gap g >= 1 with P[g] = lambda (1 - lambda)^(g-1); once the
            // queue hits zero the rest of the tail lumps into state 0.
            let mut tail = 1.0;
            let mut g = 1i64;
            loop {
                let target = q + p - beta * (1 + g);
                if target <= 0 || lambda == 1.0 {
                    next.push((target.max(0), phi * tail));
                    break;
                }
                next.push((target, phi * tail * lambda));
                tail *= 1.0 - lambda;
                g += 1;
            }
        }
        (phi, next)
    };

    let mut index: HashMap<i64, usize> = HashMap::new();
    let mut levels = vec![0i64];
    index.insert(0, 0);
    let mut rows = Vec::new();
    let mut i = 0;
    while i < levels.len() {
        let (_, next) = step(levels[i]);
        let mut row = Vec::with_capacity(next.len());
        for (q, pr) in next {
            let j = *index.entry(q).or_insert_with(|| {
                levels.push(q);
                levels.len() - 1
            });
            row.push((j, pr));
        }
        rows.push(row);
        i += 1;
    }
    let n = levels.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for (r, row) in rows.iter().enumerate() {
        for &(j, pr) in row {
            matrix[r][j] += pr;
        }
    }
    let pi = steady_state(&matrix)?;
    let (mut reward, mut power, mut length) = (0.0, 0.0, 0.0);
    for (k, &q) in levels.iter().enumerate() {
        let a = choose_action(&FrameQueue::with_value(beta as f64, q as f64), v, user);
        reward += pi[k] * user.mean_file() * a.success_prob;
        power += pi[k] * a.power;
        length += pi[k] * (1.0 + a.success_prob / lambda);
    }
    Ok(FrameChainPerformance {
        throughput: reward / length,
        power: power / length,
        states: n,
    })
}
