//! Time series and time averages collected by the simulators, and their
//! aggregation over independent trials.

use std::io::{self, Write};

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    /// Number of slots elapsed (1-based).
    pub slot: u64,
    pub running_throughput: f64,
    pub running_power: f64,
    pub queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub horizon: u64,
    /// Series records every `thinning`-th slot; 0 disables the series.
    pub thinning: u64,
    pub series: Vec<SeriesPoint>,
    pub throughput: f64,
    pub power: f64,
    pub mean_queue: f64,
    pub max_queue: f64,
    /// `max_T (sum_{t<T} p(t) - T * beta)`, the worst cumulative overspend.
    pub max_overspend: f64,
    pub served_slots: Vec<u64>,
    pub completions: Vec<u64>,
}

impl Metrics {
    /// Fraction of slots each user was served.
    pub fn service_shares(&self) -> Vec<f64> {
        self.served_slots
            .iter()
            .map(|&s| s as f64 / self.horizon as f64)
            .collect()
    }
}

/// Accumulates per-slot samples into [`Metrics`].
#[derive(Debug)]
pub(crate) struct Recorder {
    budget: f64,
    thinning: u64,
    slot: u64,
    reward: f64,
    power: f64,
    queue_sum: f64,
    max_queue: f64,
    max_overspend: f64,
    series: Vec<SeriesPoint>,
    served: Vec<u64>,
    completions: Vec<u64>,
}

impl Recorder {
    pub fn new(users: usize, budget: f64, horizon: u64, thinning: u64) -> Self {
        let points = if thinning == 0 { 0 } else { horizon / thinning };
        Self {
            budget,
            thinning,
            slot: 0,
            reward: 0.0,
            power: 0.0,
            queue_sum: 0.0,
            max_queue: 0.0,
            max_overspend: f64::NEG_INFINITY,
            series: Vec::with_capacity(points as usize),
            served: vec![0; users],
            completions: vec![0; users],
        }
    }

    /// Records one slot. `queue` is the virtual queue value in force during
    /// the slot.
    pub fn slot(&mut self, reward: f64, power: f64, queue: f64) {
        self.slot += 1;
        self.reward += reward;
        self.power += power;
        self.queue_sum += queue;
        self.max_queue = self.max_queue.max(queue);
        if self.budget.is_finite() {
            self.max_overspend = self
                .max_overspend
                .max(self.power - self.slot as f64 * self.budget);
        }
        if self.thinning > 0 && self.slot % self.thinning == 0 {
            let t = self.slot as f64;
            self.series.push(SeriesPoint {
                slot: self.slot,
                running_throughput: self.reward / t,
                running_power: self.power / t,
                queue,
            });
        }
    }

    pub fn served(&mut self, user: usize) {
        self.served[user] += 1;
    }

    pub fn completed(&mut self, user: usize) {
        self.completions[user] += 1;
    }

    pub fn finish(self) -> Metrics {
        let t = self.slot.max(1) as f64;
        Metrics {
            horizon: self.slot,
            thinning: self.thinning,
            series: self.series,
            throughput: self.reward / t,
            power: self.power / t,
            mean_queue: self.queue_sum / t,
            max_queue: self.max_queue,
            max_overspend: if self.budget.is_finite() {
                self.max_overspend
            } else {
                0.0
            },
            served_slots: self.served,
            completions: self.completions,
        }
    }
}

/// Sample mean with its standard error (zero for a single sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = samples.iter().sum::<f64>() / n;
        let stderr = if samples.len() < 2 {
            0.0
        } else {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { mean, stderr }
    }
}

/// Per-metric mean and standard error over independent trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub horizon: u64,
    pub throughput: Estimate,
    pub power: Estimate,
    pub mean_queue: Estimate,
    pub max_queue: f64,
    pub service_shares: Vec<f64>,
}

impl TrialSummary {
    pub fn from_trials(runs: &[Metrics]) -> Self {
        let pick = |f: fn(&Metrics) -> f64| {
            Estimate::from_samples(&runs.iter().map(f).collect::<Vec<_>>())
        };
        let users = runs.first().map_or(0, |m| m.served_slots.len());
        let mut shares = vec![0.0; users];
        for m in runs {
            for (acc, s) in shares.iter_mut().zip(m.service_shares()) {
                *acc += s / runs.len() as f64;
            }
        }
        Self {
            trials: runs.len(),
            horizon: runs.first().map_or(0, |m| m.horizon),
            throughput: pick(|m| m.throughput),
            power: pick(|m| m.power),
            mean_queue: pick(|m| m.mean_queue),
            max_queue: runs.iter().map(|m| m.max_queue).fold(0.0, f64::max),
            service_shares: shares,
        }
    }
}

pub const SERIES_HEADER: &str = "slot,running_throughput,running_power,queue_value";

/// Per-slot series followed by a `summary` row with the final averages.
pub fn write_series_csv(out: &mut impl Write, m: &Metrics) -> io::Result<()> {
    let users = m.served_slots.len();
    write!(out, "{SERIES_HEADER}")?;
    for n in 0..users {
        write!(out, ",share_{n}")?;
    }
    writeln!(out)?;
    for p in &m.series {
        writeln!(
            out,
            "{},{},{},{}{}",
            p.slot,
            p.running_throughput,
            p.running_power,
            p.queue,
            ",".repeat(users)
        )?;
    }
    write!(out, "summary,{},{},{}", m.throughput, m.power, m.mean_queue)?;
    for s in m.service_shares() {
        write!(out, ",{s}")?;
    }
    writeln!(out)
}

pub const SUMMARY_HEADER: &str =
    "v,trials,horizon,throughput_mean,throughput_stderr,power_mean,power_stderr,queue_mean,queue_stderr,max_queue";

/// One sweep row per `(V, summary)` pair.
pub fn write_summary_csv<'a>(
    out: &mut impl Write,
    rows: impl IntoIterator<Item = (f64, &'a TrialSummary)>,
) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for (v, s) in rows {
        writeln!(
            out,
            "{v},{},{},{},{},{},{},{},{},{}",
            s.trials,
            s.horizon,
            s.throughput.mean,
            s.throughput.stderr,
            s.power.mean,
            s.power.stderr,
            s.mean_queue.mean,
            s.mean_queue.stderr,
            s.max_queue
        )?;
    }
    Ok(())
}
