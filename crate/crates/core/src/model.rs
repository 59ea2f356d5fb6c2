//! Domain types shared by every algorithm: actions, users, system
//! configuration and file state, plus the closed-form completion
//! probabilities used to calibrate actions.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, Violation};
use crate::sim::FileLengthLaw;

/// Completion probability for an exponentially distributed file length:
/// `q * P[B <= r] = q * (1 - exp(-r / mean_file))`.
pub fn completion_prob_exponential(
    rate_bits: f64,
    link_success: f64,
    mean_file: f64,
) -> Result<f64> {
    if !(mean_file > 0.0) {
        return Err(domain(format!(
            "mean file size must be positive, got {mean_file}"
        )));
    }
    if !(rate_bits >= 0.0) {
        return Err(domain(format!("rate must be nonnegative, got {rate_bits}")));
    }
    check_unit("link success probability", link_success)?;
    Ok(link_success * -(-rate_bits / mean_file).exp_m1())
}

/// Completion probability when a file is a geometric number of packets with
/// per-slot packet success `link_success`: `mu * link_success`.
pub fn completion_prob_geometric(mu: f64, link_success: f64) -> Result<f64> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(domain(format!("mu must lie in (0, 1], got {mu}")));
    }
    check_unit("link success probability", link_success)?;
    Ok(mu * link_success)
}

/// Mean renewal-frame length `1 + phi / lambda` given the action's
/// completion probability.
pub fn expected_frame_length(phi: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(domain(format!("lambda must be positive, got {lambda}")));
    }
    check_unit("completion probability", phi)?;
    Ok(1.0 + phi / lambda)
}

fn check_unit(what: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(domain(format!("{what} must lie in [0, 1], got {p}")))
    }
}

/// Bit-level transmission parameters an action was calibrated from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub rate_bits: f64,
    pub link_success: f64,
}

/// One transmission option. Id 0 is the idle action.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub id: u32,
    pub power: f64,
    pub success_prob: f64,
    pub link: Option<LinkModel>,
}

impl Action {
    pub const IDLE: u32 = 0;

    pub fn idle() -> Self {
        Self::new(Self::IDLE, 0.0, 0.0)
    }

    pub fn new(id: u32, power: f64, success_prob: f64) -> Self {
        Self {
            id,
            power,
            success_prob,
            link: None,
        }
    }

    /// Calibrates the success probability from a rate and link success under
    /// exponentially distributed file sizes with mean `mean_file_bits`.
    pub fn from_link(id: u32, power: f64, link: LinkModel, mean_file_bits: f64) -> Result<Self> {
        let phi = completion_prob_exponential(link.rate_bits, link.link_success, mean_file_bits)?;
        Ok(Self {
            id,
            power,
            success_prob: phi,
            link: Some(link),
        })
    }

    pub fn is_idle(&self) -> bool {
        self.id == Self::IDLE
    }
}

/// Mean file size, either in bits (exponential lengths) or in packets
/// (geometric lengths, `mu = 1 / mean`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FileSize {
    Bits(f64),
    Packets(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserParams {
    /// Probability per idle slot of a new file arriving.
    pub lambda: f64,
    pub file: FileSize,
    pub weight: f64,
    pub actions: Vec<Action>,
    /// Actual packet-count law used in packet mode. The scheduler never sees
    /// it; when absent the law is geometric with the nominal mean.
    pub length_law: Option<FileLengthLaw>,
}

impl UserParams {
    /// A packet-based user with the binary action set {idle, transmit}.
    pub fn binary(lambda: f64, mu: f64, phi: f64, weight: f64, power: f64) -> Self {
        Self {
            lambda,
            file: FileSize::Packets(1.0 / mu),
            weight,
            actions: vec![Action::idle(), Action::new(1, power, phi)],
            length_law: None,
        }
    }

    /// Expected file volume used in the reward: bits, or packets `1/mu`.
    pub fn mean_file(&self) -> f64 {
        match self.file {
            FileSize::Bits(b) | FileSize::Packets(b) => b,
        }
    }

    /// Per-packet completion parameter, for packet-based users only.
    pub fn mu(&self) -> Option<f64> {
        match self.file {
            FileSize::Packets(z) => Some(1.0 / z),
            FileSize::Bits(_) => None,
        }
    }

    pub fn action(&self, id: u32) -> Option<&Action> {
        self.actions.iter().find(|a| a.id == id)
    }

    pub fn contains(&self, action: &Action) -> bool {
        self.action(action.id).is_some_and(|a| a == action)
    }

    pub fn non_idle(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter().filter(|a| !a.is_idle())
    }

    /// Smallest power over non-idle actions, `None` if there are none.
    pub fn p_min(&self) -> Option<f64> {
        self.non_idle().map(|a| a.power).reduce(f64::min)
    }

    /// Largest power over all actions (0 when only idle exists).
    pub fn p_max(&self) -> f64 {
        self.actions.iter().map(|a| a.power).fold(0.0, f64::max)
    }

    /// The law packet-mode simulation draws file lengths from.
    pub fn packet_law(&self) -> Result<FileLengthLaw> {
        match (self.length_law, self.mu()) {
            (Some(law), _) => Ok(law),
            (None, Some(mu)) => Ok(FileLengthLaw::Geometric { mu }),
            (None, None) => Err(domain("packet mode requires users with mean_packets")),
        }
    }
}

/// `N` users sharing `M` servers under average power budget `beta`, with
/// tradeoff parameter `V`. An infinite budget means no power constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigFile", into = "ConfigFile")]
pub struct SystemConfig {
    pub users: Vec<UserParams>,
    pub servers: usize,
    pub power_budget: f64,
    pub tradeoff: f64,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_tradeoff(&self, v: f64) -> Self {
        Self {
            tradeoff: v,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Smallest non-idle power across all users.
    pub fn p_min(&self) -> Option<f64> {
        self.users
            .iter()
            .filter_map(UserParams::p_min)
            .reduce(f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let violations = validate_config(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::InvalidConfig(violations))
        }
    }
}

/// Reports every violated invariant of `config`; empty when valid.
pub fn validate_config(config: &SystemConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if config.users.is_empty() {
        out.push(Violation::new("users", "at least one user is required"));
    }
    for (n, user) in config.users.iter().enumerate() {
        out.extend(validate_user(n, user));
    }
    if config.servers == 0 {
        out.push(Violation::new("servers", "servers must be positive"));
    }
    if config.servers >= config.users.len() {
        out.push(Violation::new("servers", "servers must be < users"));
    }
    if !(config.power_budget > 0.0) {
        out.push(Violation::new(
            "power_budget",
            "power budget must be positive",
        ));
    }
    if !(config.tradeoff >= 0.0 && config.tradeoff.is_finite()) {
        out.push(Violation::new(
            "tradeoff_v",
            "V must be a finite nonnegative number",
        ));
    }
    out
}

/// Per-user invariants. `n` is used only to label the offending field.
pub fn validate_user(n: usize, user: &UserParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let field = |name: &str| format!("users[{n}].{name}");
    if !(user.lambda > 0.0 && user.lambda <= 1.0) {
        out.push(Violation::new(field("lambda"), "lambda must lie in (0, 1]"));
    }
    let mean = user.mean_file();
    if !(mean > 0.0 && mean.is_finite()) {
        out.push(Violation::new(
            field("mean_file"),
            "mean file size must be positive",
        ));
    }
    if let FileSize::Packets(z) = user.file {
        if z < 1.0 {
            out.push(Violation::new(
                field("mean_packets"),
                "mean packet count must be >= 1",
            ));
        }
    }
    if !(user.weight > 0.0 && user.weight.is_finite()) {
        out.push(Violation::new(field("weight"), "weight must be positive"));
    }
    if user.actions.is_empty() {
        out.push(Violation::new(
            field("actions"),
            "action set must be nonempty",
        ));
    }
    let mut seen = HashSet::new();
    for a in &user.actions {
        if !seen.insert(a.id) {
            out.push(Violation::new(
                field("actions"),
                format!("duplicate action id {}", a.id),
            ));
        }
        if !(0.0..=1.0).contains(&a.success_prob) {
            out.push(Violation::new(
                field(&format!("actions[{}].success_prob", a.id)),
                "success probability must lie in [0, 1]",
            ));
        }
        if a.is_idle() {
            if a.power != 0.0 || a.success_prob != 0.0 {
                out.push(Violation::new(
                    field("actions[0]"),
                    "idle action must have zero power and zero success probability",
                ));
            }
        } else if !(a.power > 0.0 && a.power.is_finite()) {
            out.push(Violation::new(
                field(&format!("actions[{}].power", a.id)),
                "p^min must be positive",
            ));
        }
    }
    if !seen.contains(&Action::IDLE) {
        out.push(Violation::new(
            field("actions"),
            "idle action (id 0) is missing",
        ));
    }
    out
}

/// Binary file state of every user, plus residual packet counts in packet
/// mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemState {
    pub file_state: Vec<bool>,
    pub residual_packets: Option<Vec<u32>>,
}

impl SystemState {
    pub fn all_active(n: usize) -> Self {
        Self {
            file_state: vec![true; n],
            residual_packets: None,
        }
    }

    pub fn all_idle(n: usize) -> Self {
        Self {
            file_state: vec![false; n],
            residual_packets: None,
        }
    }

    pub fn len(&self) -> usize {
        self.file_state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file_state.is_empty()
    }

    pub fn is_active(&self, n: usize) -> bool {
        self.file_state[n]
    }

    pub fn active_count(&self) -> usize {
        self.file_state.iter().filter(|&&f| f).count()
    }

    /// Residual counters must be positive exactly for active users.
    pub fn is_consistent(&self) -> bool {
        match &self.residual_packets {
            None => true,
            Some(r) => {
                r.len() == self.file_state.len()
                    && r.iter().zip(&self.file_state).all(|(&k, &f)| (k >= 1) == f)
            }
        }
    }
}

// JSON representation.

#[derive(Debug, Serialize, Deserialize)]
struct ConfigFile {
    users: Vec<UserFile>,
    #[serde(default = "one")]
    servers: usize,
    /// `null` encodes an unconstrained system.
    power_budget: Option<f64>,
    #[serde(default)]
    tradeoff_v: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
struct UserFile {
    lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean_packets: Option<f64>,
    /// Alternative to `mean_packets`: per-packet completion parameter, `1 / mean_packets`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean_file_bits: Option<f64>,
    #[serde(default = "unit_weight")]
    weight: f64,
    actions: Vec<ActionFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file_length: Option<FileLengthLaw>,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
struct ActionFile {
    id: u32,
    power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate_bits: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    link_success: Option<f64>,
}

impl TryFrom<ConfigFile> for SystemConfig {
    type Error = crate::Error;

    fn try_from(file: ConfigFile) -> Result<Self> {
        let users = file
            .users
            .into_iter()
            .enumerate()
            .map(|(n, u)| user_from_file(n, u))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            users,
            servers: file.servers,
            power_budget: file.power_budget.unwrap_or(f64::INFINITY),
            tradeoff: file.tradeoff_v,
        })
    }
}

fn user_from_file(n: usize, u: UserFile) -> Result<UserParams> {
    let file = match (u.mean_packets, u.mu, u.mean_file_bits) {
        (Some(z), None, None) => FileSize::Packets(z),
        (None, Some(mu), None) => FileSize::Packets(1.0 / mu),
        (None, None, Some(b)) => FileSize::Bits(b),
        _ => {
            return Err(domain(format!(
                "users[{n}]: exactly one of mean_packets, mu and mean_file_bits is required"
            )))
        }
    };
    let actions = u
        .actions
        .into_iter()
        .map(|a| action_from_file(n, a, file))
        .collect::<Result<Vec<_>>>()?;
    Ok(UserParams {
        lambda: u.lambda,
        file,
        weight: u.weight,
        actions,
        length_law: u.file_length,
    })
}

fn action_from_file(n: usize, a: ActionFile, file: FileSize) -> Result<Action> {
    match (a.success_prob, a.link_success, file) {
        (Some(phi), _, _) => Ok(Action {
            id: a.id,
            power: a.power,
            success_prob: phi,
            link: a
                .rate_bits
                .zip(a.link_success)
                .map(|(rate_bits, link_success)| LinkModel {
                    rate_bits,
                    link_success,
                }),
        }),
        (None, Some(q), FileSize::Bits(mean)) => {
            let rate_bits = a.rate_bits.ok_or_else(|| {
                domain(format!(
                    "users[{n}].actions[{}]: rate_bits required with link_success",
                    a.id
                ))
            })?;
            Action::from_link(
                a.id,
                a.power,
                LinkModel {
                    rate_bits,
                    link_success: q,
                },
                mean,
            )
        }
        (None, Some(q), FileSize::Packets(z)) => Ok(Action {
            id: a.id,
            power: a.power,
            success_prob: completion_prob_geometric(1.0 / z, q)?,
            link: None,
        }),
        (None, None, _) => Err(domain(format!(
            "users[{n}].actions[{}]: success_prob or link_success is required",
            a.id
        ))),
    }
}

impl From<SystemConfig> for ConfigFile {
    fn from(c: SystemConfig) -> Self {
        let users = c
            .users
            .into_iter()
            .map(|u| {
                let (mean_packets, mean_file_bits) = match u.file {
                    FileSize::Packets(z) => (Some(z), None),
                    FileSize::Bits(b) => (None, Some(b)),
                };
                UserFile {
                    lambda: u.lambda,
                    mean_packets,
                    mu: None,
                    mean_file_bits,
                    weight: u.weight,
                    actions: u
                        .actions
                        .into_iter()
                        .map(|a| ActionFile {
                            id: a.id,
                            power: a.power,
                            success_prob: Some(a.success_prob),
                            rate_bits: a.link.map(|l| l.rate_bits),
                            link_success: a.link.map(|l| l.link_success),
                        })
                        .collect(),
                    file_length: u.length_law,
                }
            })
            .collect();
        ConfigFile {
            users,
            servers: c.servers,
            power_budget: c.power_budget.is_finite().then_some(c.power_budget),
            tradeoff_v: c.tradeoff,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    #[test]
    fn exponential_edges() {
        assert_eq!(completion_prob_exponential(0.0, 1.0, 5.0).unwrap(), 0.0);
        let big = completion_prob_exponential(1e6, 1.0, 5.0).unwrap();
        assert!(big > 1.0 - 1e-12 && big <= 1.0);
        // 1 - e^{-ln 2} = 1/2
        let half = completion_prob_exponential(5.0 * std::f64::consts::LN_2, 1.0, 5.0).unwrap();
        assert!((half - 0.5).abs() < 1e-15);
        assert!(matches!(
            completion_prob_exponential(1.0, 1.0, 0.0),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn geometric_edges() {
        assert_eq!(completion_prob_geometric(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(completion_prob_geometric(0.5, 0.0).unwrap(), 0.0);
        let phi = completion_prob_geometric(0.5380, 0.90).unwrap();
        assert!((phi - 0.4842).abs() < 5e-5, "{phi}");
        assert!(completion_prob_geometric(0.0, 0.5).is_err());
        assert!(completion_prob_geometric(1.5, 0.5).is_err());
    }

    #[test]
    fn frame_length() {
        assert_eq!(expected_frame_length(0.0, 0.3).unwrap(), 1.0);
        assert_eq!(expected_frame_length(1.0, 0.5).unwrap(), 3.0);
        let t = expected_frame_length(0.4842, 0.0028).unwrap();
        assert_eq!(t, 1.0 + 0.4842 / 0.0028);
        assert!(expected_frame_length(0.5, 0.0).is_err());
    }

    #[test]
    fn table1_is_valid() {
        let c = presets::table1();
        assert_eq!((c.len(), c.servers, c.power_budget), (8, 4, 5.0));
        assert!(validate_config(&c).is_empty(), "{:?}", validate_config(&c));
    }

    #[test]
    fn servers_must_be_below_users() {
        let mut c = presets::table1();
        c.servers = 8;
        let v = validate_config(&c);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "servers must be < users");
    }

    #[test]
    fn zero_power_action_flagged() {
        let mut c = presets::table1();
        c.users[2].actions[1].power = 0.0;
        let v = validate_config(&c);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "users[2].actions[1].power");
        assert_eq!(v[0].message, "p^min must be positive");
    }

    #[test]
    fn missing_idle_and_duplicates_flagged() {
        let mut c = presets::table1();
        c.users[0].actions = vec![Action::new(1, 2.0, 0.5), Action::new(1, 3.0, 0.6)];
        let msgs: Vec<_> = validate_config(&c).into_iter().map(|v| v.message).collect();
        assert!(msgs.iter().any(|m| m.contains("duplicate")));
        assert!(msgs.iter().any(|m| m.contains("id 0")));
    }

    #[test]
    fn json_round_trip_and_link_actions() {
        let c = presets::table1();
        let back = SystemConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);

        let text = r#"{
            "users": [
              {"lambda": 0.5, "mean_file_bits": 5.0, "weight": 1.0,
               "actions": [{"id": 0, "power": 0.0, "success_prob": 0.0},
                           {"id": 1, "power": 2.0, "rate_bits": 3.4657359027997265, "link_success": 1.0}]},
              {"lambda": 0.2, "mean_packets": 2.0,
               "actions": [{"id": 0, "power": 0.0, "success_prob": 0.0},
                           {"id": 1, "power": 2.0, "link_success": 0.9}]}
            ],
            "servers": 1, "power_budget": null, "tradeoff_v": 3.0
        }"#;
        let c = SystemConfig::from_json(text).unwrap();
        assert!(c.power_budget.is_infinite());
        assert!((c.users[0].actions[1].success_prob - 0.5).abs() < 1e-15);
        assert!((c.users[1].actions[1].success_prob - 0.45).abs() < 1e-15);
        assert_eq!(c.users[1].weight, 1.0);
        assert!(validate_config(&c).is_empty());
    }

    #[test]
    fn state_consistency() {
        let mut s = SystemState::all_active(3);
        assert!(s.is_consistent());
        s.residual_packets = Some(vec![1, 4, 2]);
        assert!(s.is_consistent());
        s.file_state[1] = false;
        assert!(!s.is_consistent());
    }

    proptest! {
        #[test]
        fn completion_probs_in_unit_interval(r in 0.0f64..1e3, q in 0.0f64..=1.0, b in 1e-3f64..1e3, mu in 1e-6f64..=1.0) {
            let e = completion_prob_exponential(r, q, b).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            let g = completion_prob_geometric(mu, q).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert!(expected_frame_length(g, mu).unwrap() >= 1.0);
        }

        #[test]
        fn exponential_monotone(r in 0.0f64..100.0, dr in 0.0f64..10.0, q in 0.0f64..=1.0, dq in 0.0f64..=1.0, b in 0.1f64..50.0) {
            let q2 = (q + dq).min(1.0);
            let base = completion_prob_exponential(r, q, b).unwrap();
            prop_assert!(completion_prob_exponential(r + dr, q, b).unwrap() >= base);
            prop_assert!(completion_prob_exponential(r, q2, b).unwrap() >= base);
        }
    }
}
