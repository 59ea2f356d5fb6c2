//! Experiment descriptors and the parallel, deterministic trial runner.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::metrics::{Metrics, TrialSummary};
use crate::model::{Action, SystemConfig, UserParams};
use crate::multi::{self, MultiUserOptions};
use crate::sim::{FileLengthMode, RngStream};
use crate::single;
use crate::special::{simulate_single_buffer, ZooPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Multi-user Lyapunov indexing.
    LyapunovIndex,
    /// Single-user frame-based drift-plus-penalty.
    FrameDpp,
    MaxLambda,
    MinLambda,
    RandomWorkConserving,
}

impl PolicyKind {
    pub fn zoo(self) -> Option<ZooPolicy> {
        match self {
            Self::MaxLambda => Some(ZooPolicy::MaxLambda),
            Self::MinLambda => Some(ZooPolicy::MinLambda),
            Self::RandomWorkConserving => Some(ZooPolicy::RandomWorkConserving),
            Self::LyapunovIndex | Self::FrameDpp => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleBufferSpec {
    pub lambdas: Vec<f64>,
    pub servers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDescriptor {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_buffer: Option<SingleBufferSpec>,
    pub policy: PolicyKind,
    pub horizon: u64,
    pub trials: u64,
    #[serde(default)]
    pub file_length_mode: FileLengthMode,
    #[serde(default)]
    pub thinning: u64,
    /// Tradeoff values to sweep; the configured `V` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_grid: Option<Vec<f64>>,
}

impl ExperimentDescriptor {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The grid actually swept.
    pub fn grid(&self) -> Vec<f64> {
        match (&self.v_grid, &self.config) {
            (Some(g), _) => g.clone(),
            (None, Some(c)) => vec![c.tradeoff],
            (None, None) => vec![0.0],
        }
    }
}

/// Trials at one tradeoff value.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub v: f64,
    pub summary: TrialSummary,
    /// Per-trial metrics in trial order.
    #[serde(skip)]
    pub runs: Vec<Metrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub policy: PolicyKind,
    pub master_seed: u64,
    pub rows: Vec<SweepRow>,
}

/// Runs `trials` independent trials per grid point. Trial `t` uses the
/// streams `(master_seed, t, ·)`, so results do not depend on scheduling.
pub fn run_trials(
    desc: &ExperimentDescriptor,
    trials: u64,
    master_seed: u64,
) -> Result<ExperimentReport> {
    if trials == 0 {
        return Err(domain("at least one trial is required"));
    }
    let grid = desc.grid();
    if grid.is_empty() {
        return Err(domain("empty V grid"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &v in &grid {
        let runs: Vec<Metrics> = (0..trials)
            .into_par_iter()
            .map(|t| run_one(desc, v, master_seed, t))
            .collect::<Result<_>>()?;
        rows.push(SweepRow {
            v,
            summary: TrialSummary::from_trials(&runs),
            runs,
        });
    }
    Ok(ExperimentReport {
        name: desc.name.clone(),
        policy: desc.policy,
        master_seed,
        rows,
    })
}

fn require_config(desc: &ExperimentDescriptor) -> Result<&SystemConfig> {
    desc.config
        .as_ref()
        .ok_or_else(|| domain(format!("experiment {} needs a config", desc.name)))
}

fn run_one(desc: &ExperimentDescriptor, v: f64, seed: u64, trial: u64) -> Result<Metrics> {
    match desc.policy {
        PolicyKind::LyapunovIndex => {
            let config = require_config(desc)?.with_tradeoff(v);
            config.validate()?;
            let opts = MultiUserOptions {
                mode: desc.file_length_mode,
                thinning: desc.thinning,
                initial: None,
            };
            multi::simulate(&config, desc.horizon, seed, trial, &opts, |_| {})
        }
        PolicyKind::FrameDpp => {
            let config = require_config(desc)?;
            let [user] = config.users.as_slice() else {
                return Err(domain("frame-dpp needs exactly one user"));
            };
            check_single_user(user, config.power_budget, v)?;
            let mut rng = RngStream::new(seed, trial, 0);
            Ok(single::simulate(
                user,
                config.power_budget,
                v,
                desc.horizon,
                &mut rng,
                desc.thinning,
                |_| {},
            ))
        }
        kind => {
            let zoo = kind.zoo().expect("zoo policy");
            let spec = desc.single_buffer.as_ref().ok_or_else(|| {
                domain(format!(
                    "experiment {} needs a single_buffer block",
                    desc.name
                ))
            })?;
            let run = simulate_single_buffer(
                &zoo,
                &spec.lambdas,
                spec.servers,
                desc.horizon,
                seed,
                trial,
            )?;
            let served_slots = run.served.clone();
            Ok(Metrics {
                horizon: run.horizon,
                thinning: 0,
                series: Vec::new(),
                throughput: run.throughput,
                power: 0.0,
                mean_queue: 0.0,
                max_queue: 0.0,
                max_overspend: 0.0,
                served_slots,
                completions: run.served,
            })
        }
    }
}

/// Single-user inputs: a valid user, a positive budget and a finite `V >= 0`.
pub fn check_single_user(user: &UserParams, beta: f64, v: f64) -> Result<()> {
    let mut violations = crate::model::validate_user(0, user);
    if !(beta > 0.0) {
        violations.push(crate::Violation::new(
            "power_budget",
            "power budget must be positive",
        ));
    }
    if !(v >= 0.0 && v.is_finite()) {
        violations.push(crate::Violation::new(
            "tradeoff_v",
            "V must be a finite nonnegative number",
        ));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(crate::Error::InvalidConfig(violations))
    }
}

/// Random instance families used to probe the suboptimality gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomProtocol {
    /// `lambda_n, mu_n ~ U(0,1)`, `c_n ~ U(1,5)`; powers and per-packet
    /// success `phi/mu` from the base users.
    SystemParameters,
    /// `p_n(1) ~ U(2,4)`, `phi_n(1)/mu_n ~ U(0,1)`; everything else from the
    /// base users.
    ControlParameters,
}

/// Draws an instance with `n` users based on the first `n` users of `base`
/// (cycled if `base` is shorter), `m` servers and the budget scaled by
/// `n / base.len()`. Draws are strictly inside the open intervals.
pub fn random_instance(
    base: &SystemConfig,
    n: usize,
    m: usize,
    protocol: RandomProtocol,
    rng: &mut RngStream,
) -> Result<SystemConfig> {
    if base.is_empty() || n == 0 {
        return Err(domain("random instances need a nonempty base and n >= 1"));
    }
    let mut open = |lo: f64, hi: f64| loop {
        let x: f64 = rng.gen_range(lo..hi);
        if x > lo {
            break x;
        }
    };
    let mut users = Vec::with_capacity(n);
    for k in 0..n {
        let b = &base.users[k % base.len()];
        let mu_b = b
            .mu()
            .ok_or_else(|| domain("random instances need packet-based base users"))?;
        let act = b
            .non_idle()
            .next()
            .ok_or_else(|| domain("random instances need a transmit action"))?;
        let q_b = act.success_prob / mu_b;
        let user = match protocol {
            RandomProtocol::SystemParameters => {
                let (lambda, mu, c) = (open(0.0, 1.0), open(0.0, 1.0), open(1.0, 5.0));
                UserParams::binary(lambda, mu, q_b * mu, c, act.power)
            }
            RandomProtocol::ControlParameters => {
                let (p, q) = (open(2.0, 4.0), open(0.0, 1.0));
                UserParams {
                    actions: vec![Action::idle(), Action::new(act.id, p, q * mu_b)],
                    ..b.clone()
                }
            }
        };
        users.push(user);
    }
    Ok(SystemConfig {
        users,
        servers: m,
        power_budget: base.power_budget * n as f64 / base.len() as f64,
        tradeoff: base.tradeoff,
    })
}
