//! Command-line front end: scenario loading, runs, comparisons and exports.
//!
//! Exit codes: 0 success, 1 run or I/O failure, 2 invalid scenario or
//! arguments, 3 goal not reached.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::controller::Strategy;
use crate::frenet::errors_from_reference;
use crate::metrics::{compare, compute_metrics, MetricReport};
use crate::sim::{make_paper_scenarios, simulate, RunRecord, Scenario, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_UNREACHED: i32 = 3;

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "DYNOBJ_SEED";

pub const TRACE_HEADER: &str = "t,x,y,phi,v,delta,theta,a,delta_dot,theta_dot,e_l,e_c,mode,q_c_eff,q_l_eff,gamma_eff,violation";

#[derive(Debug, Parser)]
#[command(
    name = "dynobj",
    version,
    about = "Path following and goal-pose reaching with a single MPC"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and export its trace.
    Run {
        /// Scenario JSON file or built-in scenario name.
        scenario: String,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run several strategies on one scenario and tabulate the metrics.
    Compare {
        scenario: String,
        /// Comma-separated strategy names.
        #[arg(long, default_value = "unified,separated,switched")]
        strategies: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// List the built-in scenarios.
    Scenarios {
        /// Directory to write each built-in scenario as JSON.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ScenarioInvalid(_) => CliError::Invalid(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

/// Loads a scenario from a JSON file, falling back to the built-in name.
pub fn load_scenario(source: &str) -> Result<Scenario, CliError> {
    let path = Path::new(source);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        return serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())));
    }
    make_paper_scenarios()
        .into_iter()
        .find(|s| s.name == source)
        .ok_or_else(|| CliError::Invalid(format!("{source}: no such file or built-in scenario")))
}

pub fn parse_strategies(list: &str) -> Result<Vec<Strategy>, CliError> {
    let strategies = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Strategy>().map_err(CliError::Invalid))
        .collect::<Result<Vec<_>, _>>()?;
    if strategies.is_empty() {
        return Err(CliError::Invalid("no strategies given".into()));
    }
    Ok(strategies)
}

/// Seed precedence: environment, then flag, then the scenario file.
pub fn effective_seed(flag: Option<u64>, scenario_seed: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Invalid(format!("{SEED_ENV}: not an unsigned integer: {v:?}"))),
        Err(_) => Ok(flag.unwrap_or(scenario_seed)),
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(dir, e))?;
    tmp.write_all(contents).map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

/// One row per plant state. The final state has no applied input; its input
/// columns are zero and its weight columns repeat the last tick.
pub fn trace_csv(scenario: &Scenario, record: &RunRecord) -> Result<String, CliError> {
    let path = scenario.build_path()?;
    let mut out = String::with_capacity(160 * record.states.len());
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for (k, s) in record.states.iter().enumerate() {
        let tick = record.ticks.get(k).or(record.ticks.last());
        let (input, (e_l, e_c)) = match record.ticks.get(k) {
            Some(t) => (t.input, (t.e_l, t.e_c)),
            None => {
                let e = errors_from_reference(s.x, s.y, &path.eval(record.progress[k]));
                (Default::default(), (e.e_l, e.e_c))
            }
        };
        let (mode, q_c, q_l, gamma) = match tick {
            Some(t) => (
                t.stage0.mode.tag(),
                t.stage0.q_c,
                t.stage0.q_l,
                t.stage0.gamma,
            ),
            None => ("C", 0.0, 0.0, 0.0),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            k as f64 * record.dt,
            s.x,
            s.y,
            s.phi,
            s.v,
            s.delta,
            s.theta,
            input.a,
            input.delta_dot,
            input.theta_dot,
            e_l,
            e_c,
            mode,
            q_c,
            q_l,
            gamma,
            record.violation[k],
        );
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    scenario: &'a str,
    strategy: Strategy,
    seed: u64,
    goal_reached: bool,
    ticks: usize,
    degraded_ticks: usize,
    max_prediction_error: f64,
    #[serde(flatten)]
    metrics: &'a MetricReport,
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Result of one exported run.
pub struct RunOutcome {
    pub record: RunRecord,
    pub report: MetricReport,
}

/// Simulates `scenario` and writes trace, metrics and resolved scenario to `out`.
pub fn run_and_export(scenario: &Scenario, out: &Path) -> Result<RunOutcome, CliError> {
    let record = simulate(scenario)?;
    let report = compute_metrics(&record).map_err(|e| CliError::Failed(e.to_string()))?;
    write_atomic(
        &out.join("trace.csv"),
        trace_csv(scenario, &record)?.as_bytes(),
    )?;
    let metrics = MetricsFile {
        scenario: &scenario.name,
        strategy: scenario.strategy,
        seed: scenario.sim.seed,
        goal_reached: record.goal_reach_time.is_some(),
        ticks: record.ticks.len(),
        degraded_ticks: record.degraded_ticks,
        max_prediction_error: record.max_prediction_error,
        metrics: &report,
    };
    write_atomic(&out.join("metrics.json"), &to_json(&metrics))?;
    write_atomic(&out.join("scenario.resolved.json"), &to_json(scenario))?;
    Ok(RunOutcome { record, report })
}

fn resolve(
    source: &str,
    strategy: Option<Strategy>,
    seed: Option<u64>,
) -> Result<Scenario, CliError> {
    let mut scenario = load_scenario(source)?;
    if let Some(s) = strategy {
        scenario.strategy = s;
    }
    scenario.sim.seed = effective_seed(seed, scenario.sim.seed)?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn cmd_run(
    source: &str,
    strategy: Option<&str>,
    seed: Option<u64>,
    out: &Path,
) -> Result<i32, CliError> {
    let strategy = strategy
        .map(|s| s.parse::<Strategy>().map_err(CliError::Invalid))
        .transpose()?;
    let scenario = resolve(source, strategy, seed)?;
    let outcome = run_and_export(&scenario, out)?;
    let r = &outcome.report;
    match r.t {
        Some(t) => println!(
            "{} [{}]: goal reached at {t:.1} s, safe = {}, direction changes = {}",
            scenario.name, scenario.strategy, r.safe, r.direction_changes
        ),
        None => println!(
            "{} [{}]: goal not reached within {:.1} s, safe = {}",
            scenario.name,
            scenario.strategy,
            outcome.record.duration(),
            r.safe
        ),
    }
    Ok(if r.t.is_some() {
        EXIT_OK
    } else {
        EXIT_UNREACHED
    })
}

pub fn cmd_compare(
    source: &str,
    strategies: &str,
    seed: Option<u64>,
    out: &Path,
) -> Result<i32, CliError> {
    let strategies = parse_strategies(strategies)?;
    let base = resolve(source, None, seed)?;
    let results: Vec<(String, Result<MetricReport, String>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = strategies
            .iter()
            .map(|&strategy| {
                let mut scenario = base.clone();
                scenario.strategy = strategy;
                let dir = out.join(strategy.name());
                scope.spawn(move || run_and_export(&scenario, &dir).map(|o| o.report))
            })
            .collect();
        strategies
            .iter()
            .zip(handles)
            .map(|(s, h)| {
                let result = h
                    .join()
                    .unwrap_or_else(|_| Err(CliError::Failed("run panicked".into())))
                    .map_err(|e| e.to_string());
                (s.name().to_string(), result)
            })
            .collect()
    });
    let failed = results.iter().any(|(_, r)| r.is_err());
    let unreached = results
        .iter()
        .any(|(_, r)| r.as_ref().is_ok_and(|r| r.t.is_none()));
    for (name, r) in &results {
        if let Err(e) = r {
            eprintln!("{name}: {e}");
        }
    }
    let table = compare(results);
    write_atomic(&out.join("comparison.csv"), table.to_csv().as_bytes())?;
    print!("{}", table.to_text());
    Ok(if failed {
        EXIT_FAILURE
    } else if unreached {
        EXIT_UNREACHED
    } else {
        EXIT_OK
    })
}

pub fn cmd_scenarios(emit: Option<&Path>) -> Result<i32, CliError> {
    for s in make_paper_scenarios() {
        println!("{:<12} {}", s.name, s.description);
        if let Some(dir) = emit {
            write_atomic(&dir.join(format!("{}.json", s.name)), &to_json(&s))?;
        }
    }
    Ok(EXIT_OK)
}

/// Executes a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Run {
            scenario,
            strategy,
            seed,
            out,
        } => cmd_run(scenario, strategy.as_deref(), *seed, out),
        Command::Compare {
            scenario,
            strategies,
            seed,
            out,
        } => cmd_compare(scenario, strategies, *seed, out),
        Command::Scenarios { emit } => cmd_scenarios(emit.as_deref()),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    })
}
