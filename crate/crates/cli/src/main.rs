use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dlsched::experiment::{check_single_user, SingleBufferSpec};
use dlsched::metrics::{write_series_csv, write_summary_csv};
use dlsched::special::{
    coupled_dominance_check, exact_priority_two_queue, run_single_buffer, CouplingReport,
};
use dlsched::{
    multi, oracle, presets, run_trials, single, ExperimentDescriptor, FileLengthMode, PolicyKind,
    SystemConfig, ZooPolicy,
};

/// Scheduling simulators and exact optimum for power-constrained file downloading.
#[derive(Parser)]
#[command(name = "dlsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frame-based controller for a single user.
    Single(RunArgs),
    /// Lyapunov indexing at one V.
    Multi(RunArgs),
    /// Lyapunov indexing over a grid of V values, one CSV row per V.
    SweepV(RunArgs),
    /// Exact optimum from the occupation-measure LP.
    Oracle(OracleArgs),
    /// |OBJ - OPT| / OPT for Lyapunov indexing.
    RelativeError(RunArgs),
    /// Two single-buffer queues under strict priority: exact and simulated.
    AppendixA(AppendixArgs),
    /// Coupled run of a work-conserving policy against Max-λ.
    CouplingCheck(CouplingArgs),
    /// List built-in presets.
    Presets,
}

#[derive(Args)]
struct Source {
    /// System config or experiment descriptor (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Preset name, looked up in the preset directory first, then built in.
    #[arg(long)]
    preset: Option<String>,
    /// Directory searched for `<preset>.json`.
    #[arg(long, env = "DLSCHED_PRESET_DIR", hide_env_values = true)]
    preset_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Tradeoff parameter (overrides the config).
    #[arg(long)]
    v: Option<f64>,
    /// Comma-separated V values for sweep-v.
    #[arg(long, value_delimiter = ',')]
    v_grid: Option<Vec<f64>>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Summary CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-slot series CSV of trial 0.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Record every k-th slot in the series.
    #[arg(long)]
    thin: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Memoryless,
    Packet,
}

impl From<Mode> for FileLengthMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Memoryless => FileLengthMode::Memoryless,
            Mode::Packet => FileLengthMode::Packet,
        }
    }
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    source: Source,
    /// Write the LP in CPLEX LP format.
    #[arg(long)]
    export_lp: Option<PathBuf>,
    /// Report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AppendixArgs {
    #[arg(long, default_value_t = 1_000_000)]
    horizon: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct CouplingArgs {
    /// Arrival rates, sorted ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    servers: usize,
    /// max-lambda, min-lambda, random-work-conserving or priority:3,1,2 (1-based).
    #[arg(long, default_value = "random-work-conserving")]
    policy: String,
    #[arg(long, default_value_t = 100_000)]
    horizon: u64,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV of the partial sums at the first violation.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad invocation; exit code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A checked invariant failed; exit code 3.
#[derive(Debug)]
struct InvariantViolation(String);

impl std::fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvariantViolation {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.is::<Usage>() {
                1
            } else if e.is::<InvariantViolation>() {
                3
            } else {
                2
            };
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Single(a) => cmd_single(a),
        Command::Multi(a) => cmd_multi(a, false),
        Command::SweepV(a) => cmd_multi(a, true),
        Command::Oracle(a) => cmd_oracle(a),
        Command::RelativeError(a) => cmd_relative_error(a),
        Command::AppendixA(a) => cmd_appendix_a(a),
        Command::CouplingCheck(a) => cmd_coupling_check(a),
        Command::Presets => {
            for name in presets::NAMES {
                println!("{name}");
            }
            Ok(())
        }
    }
}

/// Reads a descriptor; a bare system config becomes a one-off descriptor.
fn load(source: &Source) -> anyhow::Result<ExperimentDescriptor> {
    let text = match (&source.config, &source.preset) {
        (Some(path), _) => {
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(name)) => {
            let on_disk = source
                .preset_dir
                .as_ref()
                .map(|d| d.join(format!("{name}.json")));
            match on_disk.filter(|p| p.is_file()) {
                Some(p) => std::fs::read_to_string(&p)
                    .with_context(|| format!("reading {}", p.display()))?,
                None => presets::preset_text(name)
                    .ok_or_else(|| {
                        usage(format!(
                            "unknown preset {name:?}; available: {}",
                            presets::NAMES.join(", ")
                        ))
                    })?
                    .to_string(),
            }
        }
        (None, None) => return Err(usage("one of --config or --preset is required")),
    };
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("users").is_some() {
        let config = SystemConfig::from_json(&text)?;
        let policy = if config.len() == 1 {
            PolicyKind::FrameDpp
        } else {
            PolicyKind::LyapunovIndex
        };
        Ok(ExperimentDescriptor {
            name: "custom".into(),
            config: Some(config),
            single_buffer: None,
            policy,
            horizon: 1_000_000,
            trials: 1,
            file_length_mode: FileLengthMode::Memoryless,
            thinning: 0,
            v_grid: None,
        })
    } else {
        Ok(ExperimentDescriptor::from_json(&text)?)
    }
}

fn config_of(desc: &ExperimentDescriptor) -> anyhow::Result<&SystemConfig> {
    desc.config
        .as_ref()
        .ok_or_else(|| usage(format!("{} has no system config", desc.name)))
}

/// Applies the run flags to the descriptor.
fn apply(desc: &mut ExperimentDescriptor, a: &RunArgs, sweep: bool) -> anyhow::Result<()> {
    if let Some(h) = a.horizon {
        desc.horizon = h;
    }
    if let Some(t) = a.trials {
        desc.trials = t;
    }
    if let Some(k) = a.thin {
        desc.thinning = k;
    }
    if let Some(m) = a.mode {
        desc.file_length_mode = m.into();
    }
    if desc.trials == 0 || desc.horizon == 0 {
        return Err(usage("--trials and --horizon must be positive"));
    }
    if sweep {
        if let Some(g) = &a.v_grid {
            desc.v_grid = Some(g.clone());
        }
        if desc.grid().is_empty() {
            return Err(usage("empty V grid"));
        }
    } else {
        let v = match a.v {
            Some(v) => v,
            None => config_of(desc)?.tradeoff,
        };
        desc.v_grid = Some(vec![v]);
    }
    Ok(())
}

fn output(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_series(path: &Path, m: &dlsched::Metrics) -> anyhow::Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_series_csv(&mut w, m)?;
    w.flush()?;
    Ok(())
}

fn cmd_single(a: RunArgs) -> anyhow::Result<()> {
    let mut desc = load(&a.source)?;
    let config = config_of(&desc)?;
    if config.len() != 1 {
        return Err(usage(format!(
            "single needs exactly one user, found {}",
            config.len()
        )));
    }
    desc.policy = PolicyKind::FrameDpp;
    apply(&mut desc, &a, false)?;
    let config = config_of(&desc)?;
    let user = &config.users[0];
    let v = desc.grid()[0];
    check_single_user(user, config.power_budget, v)?;
    let report = run_trials(&desc, desc.trials, a.seed)?;
    let bound = single::queue_bound(v, user, config.power_budget)?;
    check_queue_bound(&report, bound)?;
    emit(&a, &report)
}

fn cmd_multi(a: RunArgs, sweep: bool) -> anyhow::Result<()> {
    let mut desc = load(&a.source)?;
    if desc.policy != PolicyKind::LyapunovIndex {
        desc.policy = PolicyKind::LyapunovIndex;
    }
    apply(&mut desc, &a, sweep)?;
    config_of(&desc)?.validate()?;
    let report = run_trials(&desc, desc.trials, a.seed)?;
    for row in &report.rows {
        let bound = multi::queue_bound_multi(&config_of(&desc)?.with_tradeoff(row.v))?;
        if row.summary.max_queue > bound {
            bail!(InvariantViolation(format!(
                "queue {} exceeds the bound {bound} at V = {}",
                row.summary.max_queue, row.v
            )));
        }
    }
    emit(&a, &report)
}

fn check_queue_bound(report: &dlsched::ExperimentReport, bound: f64) -> anyhow::Result<()> {
    for row in &report.rows {
        if row.summary.max_queue > bound {
            bail!(InvariantViolation(format!(
                "queue {} exceeds the bound {bound}",
                row.summary.max_queue
            )));
        }
    }
    Ok(())
}

fn emit(a: &RunArgs, report: &dlsched::ExperimentReport) -> anyhow::Result<()> {
    let mut out = output(&a.out)?;
    write_summary_csv(&mut out, report.rows.iter().map(|r| (r.v, &r.summary)))?;
    out.flush()?;
    if let Some(path) = &a.series {
        write_series(path, &report.rows[0].runs[0])?;
    }
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> anyhow::Result<()> {
    let desc = load(&a.source)?;
    let config = match (&desc.config, &desc.single_buffer) {
        (Some(c), _) => c.clone(),
        (None, Some(SingleBufferSpec { lambdas, servers })) => {
            dlsched::special::single_buffer_config(lambdas, *servers)?
        }
        (None, None) => return Err(usage("descriptor has neither config nor single_buffer")),
    };
    let lp = oracle::build_occupation_lp(&config)?;
    if let Some(path) = &a.export_lp {
        std::fs::write(path, lp.lp.to_lp_format())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let sol = lp.solve()?;
    if a.json {
        let report = serde_json::json!({
            "opt_value": sol.opt_value,
            "average_power": sol.power,
            "states": sol.dims.states,
            "variables": sol.dims.variables,
            "constraints": sol.dims.constraints,
            "iterations": sol.iterations,
            "primal_residual": sol.primal_residual,
            "max_reduced_cost": sol.max_reduced_cost,
        });
        println!("{report}");
    } else {
        println!("opt_value {}", sol.opt_value);
        println!("average_power {}", sol.power);
        println!("states {}", sol.dims.states);
        println!("variables {}", sol.dims.variables);
        println!("constraints {}", sol.dims.constraints);
        println!("iterations {}", sol.iterations);
        println!("primal_residual {:e}", sol.primal_residual);
        println!("max_reduced_cost {:e}", sol.max_reduced_cost);
    }
    Ok(())
}

fn cmd_relative_error(a: RunArgs) -> anyhow::Result<()> {
    let mut desc = load(&a.source)?;
    desc.policy = PolicyKind::LyapunovIndex;
    apply(&mut desc, &a, false)?;
    let config = config_of(&desc)?.clone();
    config.validate()?;
    let opt = oracle::optimal_value(&config)?;
    let report = run_trials(&desc, desc.trials, a.seed)?;
    let s = &report.rows[0].summary;
    let err = oracle::relative_error(s.throughput.mean, opt)?;
    let mut out = output(&a.out)?;
    writeln!(
        out,
        "v,trials,horizon,obj_mean,obj_stderr,opt,relative_error"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        report.rows[0].v, s.trials, s.horizon, s.throughput.mean, s.throughput.stderr, opt, err
    )?;
    out.flush()?;
    Ok(())
}

fn cmd_appendix_a(a: AppendixArgs) -> anyhow::Result<()> {
    let priority = ZooPolicy::Priority(vec![0, 1]);
    println!("case,lambda1,lambda2,policy,exact,simulated");
    for (l1, l2, name) in [(0.5, 0.25, "max-lambda"), (0.25, 0.5, "min-lambda")] {
        let exact = exact_priority_two_queue(l1, l2)?;
        let sim = run_single_buffer(&priority, &[l1, l2], 1, a.horizon, a.seed)?;
        println!("priority-to-1,{l1},{l2},{name},{exact},{sim}");
    }
    Ok(())
}

fn parse_policy(s: &str, n: usize) -> anyhow::Result<ZooPolicy> {
    Ok(match s {
        "max-lambda" => ZooPolicy::MaxLambda,
        "min-lambda" => ZooPolicy::MinLambda,
        "random-work-conserving" | "random" => ZooPolicy::RandomWorkConserving,
        other => {
            let order = other
                .strip_prefix("priority:")
                .ok_or_else(|| usage(format!("unknown policy {other:?}")))?;
            let order = order
                .split(',')
                .map(|q| {
                    q.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&q| (1..=n).contains(&q))
                        .map(|q| q - 1)
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| usage(format!("bad priority order {order:?}")))?;
            ZooPolicy::Priority(order)
        }
    })
}

fn cmd_coupling_check(a: CouplingArgs) -> anyhow::Result<()> {
    if a.lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(usage("--lambdas must be sorted ascending"));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let policy = parse_policy(&a.policy, a.lambdas.len())?;
    let mut worst_z: f64 = 0.0;
    let (mut tx_pi, mut tx_ml) = (0u64, 0u64);
    for seed in a.seed..a.seed + a.seeds {
        let r = coupled_dominance_check(&policy, &a.lambdas, a.servers, a.horizon, seed)?;
        worst_z = worst_z.max(r.max_marginal_z);
        tx_pi += r.transmissions_pi;
        tx_ml += r.transmissions_max_lambda;
        if !r.holds {
            let v = r.first_violation.as_ref().expect("violation recorded");
            if let Some(path) = &a.out {
                write_violation(path, &r)?;
            }
            bail!(InvariantViolation(format!(
                "VIOLATED seed {seed} slot {} check {:?}",
                v.slot, v.check
            )));
        }
    }
    let slots = (a.horizon * a.seeds) as f64;
    println!("verdict HOLDS");
    println!("policy {}", policy.name());
    println!("seeds {}", a.seeds);
    println!("slots_per_seed {}", a.horizon);
    println!("throughput_pi {}", tx_pi as f64 / slots);
    println!("throughput_max_lambda {}", tx_ml as f64 / slots);
    println!("max_marginal_z {worst_z}");
    Ok(())
}

fn write_violation(path: &Path, r: &CouplingReport) -> anyhow::Result<()> {
    let v = r
        .first_violation
        .as_ref()
        .ok_or_else(|| anyhow!("no violation"))?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "slot,check,queue,state_pi,state_max_lambda,prefix_pi,prefix_max_lambda"
    )?;
    for q in 0..v.state_pi.len() {
        writeln!(
            w,
            "{},{:?},{},{},{},{},{}",
            v.slot,
            v.check,
            q + 1,
            v.state_pi[q] as u8,
            v.state_max_lambda[q] as u8,
            v.prefix_pi[q],
            v.prefix_max_lambda[q]
        )?;
    }
    w.flush()?;
    Ok(())
}
