//! Exact offline optimum of the multi-user problem over stationary
//! randomized policies on the joint file state, as an occupation-measure
//! linear program.

pub mod linalg;
pub mod markov;
pub mod simplex;

use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::model::{validate_user, SystemConfig};
use simplex::{solve_lp_from, LinearProgram, LpSolution, Pricing, Relation};

pub use markov::steady_state;
pub use simplex::solve_lp as solve_linear_program;

/// Largest number of users whose joint state space is enumerated.
pub const MAX_USERS: usize = 20;
/// Largest number of `(state, action)` variables.
pub const MAX_VARIABLES: usize = 1_000_000;
/// Largest dense tableau (rows times columns) the solver will allocate.
pub const MAX_TABLEAU_ENTRIES: usize = 100_000_000;

/// Joint file state; bit `n` is `F_n`, user 0 in the least significant bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CompositeState(pub u32);

impl CompositeState {
    pub fn from_bits(bits: &[bool]) -> Self {
        Self(bits.iter().enumerate().map(|(n, &b)| (b as u32) << n).sum())
    }

    pub fn is_active(self, n: usize) -> bool {
        self.0 >> n & 1 == 1
    }

    pub fn to_bits(self, users: usize) -> Vec<bool> {
        (0..users).map(|n| self.is_active(n)).collect()
    }

    pub fn active_count(self) -> u32 {
        self.0.count_ones()
    }
}

/// One action id per user.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct FeasibleAction(pub Vec<u32>);

impl FeasibleAction {
    pub fn served(&self) -> usize {
        self.0.iter().filter(|&&a| a != 0).count()
    }
}

/// Checks the oracle's requirements on `config`. Unlike the heuristic, the
/// oracle accepts `M >= N`.
fn check_config(config: &SystemConfig) -> Result<()> {
    let mut violations: Vec<_> = config
        .users
        .iter()
        .enumerate()
        .flat_map(|(n, u)| validate_user(n, u))
        .collect();
    if config.users.is_empty() {
        return Err(domain("at least one user is required"));
    }
    if config.servers == 0 {
        violations.push(crate::Violation::new("servers", "servers must be positive"));
    }
    if !(config.power_budget > 0.0) {
        violations.push(crate::Violation::new(
            "power_budget",
            "power budget must be positive",
        ));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(violations))
    }
}

fn check_feasible(
    state: CompositeState,
    action: &FeasibleAction,
    config: &SystemConfig,
) -> Result<()> {
    if action.0.len() != config.len() {
        return Err(domain(format!(
            "action has {} entries for {} users",
            action.0.len(),
            config.len()
        )));
    }
    for (n, (&id, user)) in action.0.iter().zip(&config.users).enumerate() {
        if user.action(id).is_none() {
            return Err(domain(format!("user {n} has no action {id}")));
        }
        if id != 0 && !state.is_active(n) {
            return Err(domain(format!(
                "user {n} is inactive but assigned action {id}"
            )));
        }
    }
    if action.served() > config.servers {
        return Err(domain(format!(
            "{} users served with {} servers",
            action.served(),
            config.servers
        )));
    }
    Ok(())
}

/// Per-user action ids sorted with idle first.
fn action_ids(config: &SystemConfig) -> Vec<Vec<u32>> {
    config
        .users
        .iter()
        .map(|u| {
            let mut ids: Vec<u32> = u.actions.iter().map(|a| a.id).collect();
            ids.sort_unstable();
            ids
        })
        .collect()
}

/// All actions for `state`: inactive users idle, at most `M` non-idle.
/// Ordered lexicographically by user, user 0 varying slowest.
pub fn enumerate_feasible_actions(
    state: CompositeState,
    config: &SystemConfig,
) -> Vec<FeasibleAction> {
    let ids = action_ids(config);
    let mut out = Vec::new();
    let mut current = vec![0u32; ids.len()];
    fn rec(
        n: usize,
        served: usize,
        state: CompositeState,
        m: usize,
        ids: &[Vec<u32>],
        current: &mut Vec<u32>,
        out: &mut Vec<FeasibleAction>,
    ) {
        if n == ids.len() {
            out.push(FeasibleAction(current.clone()));
            return;
        }
        if !state.is_active(n) {
            current[n] = 0;
            rec(n + 1, served, state, m, ids, current, out);
            return;
        }
        for &id in &ids[n] {
            let s = served + (id != 0) as usize;
            if s <= m {
                current[n] = id;
                rec(n + 1, s, state, m, ids, current, out);
            }
        }
        current[n] = 0;
    }
    rec(0, 0, state, config.servers, &ids, &mut current, &mut out);
    out
}

/// Number of feasible actions in `state` without enumerating them.
fn count_feasible_actions(state: CompositeState, config: &SystemConfig) -> u128 {
    // poly[j] = number of partial actions with j non-idle users.
    let mut poly = vec![0u128; config.servers + 1];
    poly[0] = 1;
    for (n, user) in config.users.iter().enumerate() {
        if !state.is_active(n) {
            continue;
        }
        let k = user.non_idle().count() as u128;
        for j in (1..poly.len()).rev() {
            poly[j] += poly[j - 1] * k;
        }
    }
    poly.iter().sum()
}

/// `P(next | state, action)`; users evolve independently.
pub fn transition_prob(
    state: CompositeState,
    action: &FeasibleAction,
    next: CompositeState,
    config: &SystemConfig,
) -> Result<f64> {
    check_feasible(state, action, config)?;
    let mut p = 1.0;
    for (n, (user, &id)) in config.users.iter().zip(&action.0).enumerate() {
        let phi = user.action(id).expect("checked").success_prob;
        p *= match (state.is_active(n), next.is_active(n)) {
            (true, false) => phi,
            (true, true) => 1.0 - phi,
            (false, true) => user.lambda,
            (false, false) => 1.0 - user.lambda,
        };
    }
    Ok(p)
}

/// Full next-state distribution, indexed by composite state.
fn next_distribution(
    state: CompositeState,
    action: &FeasibleAction,
    config: &SystemConfig,
) -> Vec<f64> {
    let mut dist = vec![1.0];
    for (n, (user, &id)) in config.users.iter().zip(&action.0).enumerate() {
        let up = if state.is_active(n) {
            1.0 - user.action(id).expect("feasible").success_prob
        } else {
            user.lambda
        };
        let mut next = vec![0.0; dist.len() * 2];
        let bit = 1 << n;
        for (s, &p) in dist.iter().enumerate() {
            next[s] += p * (1.0 - up);
            next[s | bit] += p * up;
        }
        dist = next;
    }
    dist
}

/// The occupation-measure program: variables `x(s, a)` in state-major,
/// action-minor order; rows are one balance equation per state, the
/// normalization and, for a finite budget, the average-power row.
#[derive(Debug, Clone)]
pub struct OccupationLp {
    pub users: usize,
    pub pairs: Vec<(CompositeState, FeasibleAction)>,
    /// Expected reward `sum_n c_n B_n phi_n(a_n)` per variable.
    pub reward: Vec<f64>,
    /// Total power `sum_n p_n(a_n)` per variable.
    pub power: Vec<f64>,
    pub lp: LinearProgram,
}

#[derive(Debug, Clone, Serialize)]
pub struct LpDims {
    pub states: usize,
    pub variables: usize,
    pub constraints: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSolution {
    pub opt_value: f64,
    pub power: f64,
    pub dims: LpDims,
    pub occupation: Vec<f64>,
    pub primal_residual: f64,
    pub max_reduced_cost: f64,
    pub iterations: usize,
}

/// Per-state action distribution derived from an occupation measure.
#[derive(Debug, Clone, Serialize)]
pub struct RandomizedPolicy {
    /// Indexed by composite state; empty for states with zero occupation.
    pub rules: Vec<Vec<(FeasibleAction, f64)>>,
}

pub fn build_occupation_lp(config: &SystemConfig) -> Result<OccupationLp> {
    check_config(config)?;
    let n = config.len();
    if n > MAX_USERS {
        return Err(Error::Capacity(format!(
            "{n} users exceed the oracle limit of {MAX_USERS}"
        )));
    }
    let states = 1usize << n;
    let variables: u128 = (0..states as u32)
        .map(|s| count_feasible_actions(CompositeState(s), config))
        .sum();
    if variables > MAX_VARIABLES as u128 {
        return Err(Error::Capacity(format!(
            "{variables} variables exceed {MAX_VARIABLES}"
        )));
    }
    let rows = states + 2;
    if variables as usize * rows > MAX_TABLEAU_ENTRIES {
        return Err(Error::Capacity(format!(
            "{variables} variables by {rows} rows exceed the dense tableau limit"
        )));
    }

    let mut pairs = Vec::with_capacity(variables as usize);
    for s in 0..states as u32 {
        let s = CompositeState(s);
        pairs.extend(
            enumerate_feasible_actions(s, config)
                .into_iter()
                .map(|a| (s, a)),
        );
    }
    let cols = pairs.len();
    let mut reward = Vec::with_capacity(cols);
    let mut power = Vec::with_capacity(cols);
    let mut balance = vec![vec![0.0; cols]; states];
    for (j, (s, a)) in pairs.iter().enumerate() {
        let (mut r, mut p) = (0.0, 0.0);
        for (user, &id) in config.users.iter().zip(&a.0) {
            let act = user.action(id).expect("enumerated");
            r += user.weight * user.mean_file() * act.success_prob;
            p += act.power;
        }
        reward.push(r);
        power.push(p);
        for (next, prob) in next_distribution(*s, a, config).into_iter().enumerate() {
            balance[next][j] -= prob;
        }
        balance[s.0 as usize][j] += 1.0;
    }

    let names = pairs
        .iter()
        .map(|(s, a)| {
            let ids: Vec<String> = a.0.iter().map(u32::to_string).collect();
            format!("x_{}_{}", s.0, ids.join("_"))
        })
        .collect();
    let mut lp = LinearProgram::new(names, reward.clone());
    for (s, row) in balance.into_iter().enumerate() {
        lp.add(format!("balance_{s}"), row, Relation::Eq, 0.0);
    }
    lp.add("normalization", vec![1.0; cols], Relation::Eq, 1.0);
    if config.power_budget.is_finite() {
        lp.add("power", power.clone(), Relation::Le, config.power_budget);
    }
    Ok(OccupationLp {
        users: n,
        pairs,
        reward,
        power,
        lp,
    })
}

impl OccupationLp {
    pub fn dims(&self) -> LpDims {
        LpDims {
            states: 1 << self.users,
            variables: self.lp.num_vars(),
            constraints: self.lp.constraints.len(),
        }
    }

    pub fn solve(&self) -> Result<OracleSolution> {
        // Idling everywhere is a unichain policy whose stationary law is a
        // feasible basic solution.
        let idle: Vec<usize> = (0..self.pairs.len())
            .filter(|&j| self.pairs[j].1 .0.iter().all(|&id| id == 0))
            .collect();
        let sol: LpSolution = solve_lp_from(&self.lp, Pricing::default(), &idle)?;
        Ok(OracleSolution {
            opt_value: sol.objective,
            power: self.power.iter().zip(&sol.x).map(|(p, x)| p * x).sum(),
            dims: self.dims(),
            primal_residual: sol.primal_residual,
            max_reduced_cost: sol.max_reduced_cost,
            iterations: sol.iterations,
            occupation: sol.x,
        })
    }

    pub fn policy(&self, occupation: &[f64]) -> RandomizedPolicy {
        let mut rules: Vec<Vec<(FeasibleAction, f64)>> = vec![Vec::new(); 1 << self.users];
        let mut mass = vec![0.0; 1 << self.users];
        for ((s, _), &x) in self.pairs.iter().zip(occupation) {
            mass[s.0 as usize] += x;
        }
        for ((s, a), &x) in self.pairs.iter().zip(occupation) {
            let m = mass[s.0 as usize];
            if m > 0.0 && x > 0.0 {
                rules[s.0 as usize].push((a.clone(), x / m));
            }
        }
        RandomizedPolicy { rules }
    }
}

/// `OPT`, the best long-run weighted throughput of any policy.
pub fn optimal_value(config: &SystemConfig) -> Result<f64> {
    Ok(build_occupation_lp(config)?.solve()?.opt_value)
}

/// `|obj - opt| / opt`.
pub fn relative_error(obj: f64, opt: f64) -> Result<f64> {
    if !(opt > 0.0) {
        return Err(domain(format!(
            "relative error needs a positive optimum, got {opt}"
        )));
    }
    Ok((obj - opt).abs() / opt)
}
