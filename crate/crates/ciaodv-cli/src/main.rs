//! Command-line runner: simulate a scenario, compare the two admission
//! behaviors on identical inputs, or sweep a parameter across values and
//! seeds.
//!
//! Exit codes: 0 success, 1 internal error, 2 user or scenario error.
//! All randomness flows from the `--seed` flag; nothing is drawn from the
//! environment, so identical invocations produce byte-identical output.

use ciaodv::model::{Protocol, RouteLimit};
use ciaodv::scenario::{builtin, ScenarioSpec, BUILTIN_NAMES};
use ciaodv::{compare, compute_report, MetricsReport, Simulation};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
enum Failure {
    /// Bad input: unknown scenario, malformed value, unusable combination.
    User(String),
    /// A bug or an environment problem (I/O on our own output paths).
    Internal(String),
}

impl Failure {
    fn user(msg: impl Into<String>) -> Failure {
        Failure::User(msg.into())
    }
}

#[derive(Parser)]
#[command(
    name = "ciaodv",
    version,
    about = "Deterministic ad-hoc network simulator with admission control",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario and print its metrics report.
    Run(RunArgs),
    /// Run both protocols on the same scenario and seed and print deltas.
    Compare(CompareArgs),
    /// Re-run a scenario across parameter values and seeds (in parallel).
    Sweep(SweepArgs),
    /// List built-in scenarios, or print one in scenario format.
    Scenarios(ScenariosArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name (unique prefixes accepted) or a file path.
    #[arg(long)]
    scenario: String,
    /// Admission behavior: `ci` enforces per-node limits, `baseline` admits everything.
    #[arg(long, default_value = "ci", value_parser = parse_protocol)]
    protocol: Protocol,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override the scenario's configured duration.
    #[arg(long)]
    duration_ms: Option<u64>,
    /// Also write the full event trace to this file.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Also write the metrics report to this file.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// What to print on stdout: the metrics report or the trace lines.
    #[arg(long, value_enum, default_value_t = StdoutFormat::Csv)]
    format: StdoutFormat,
}

#[derive(Args)]
struct CompareArgs {
    /// Built-in scenario name (unique prefixes accepted) or a file path.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override the scenario's configured duration.
    #[arg(long)]
    duration_ms: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Built-in scenario name (unique prefixes accepted) or a file path.
    #[arg(long)]
    scenario: String,
    /// Admission behavior used for every run in the sweep.
    #[arg(long, default_value = "ci", value_parser = parse_protocol)]
    protocol: Protocol,
    /// Which knob to vary.
    #[arg(long, value_enum)]
    sweep_param: SweepParam,
    /// Comma-separated values; `route_limit` accepts integers or `unlimited`.
    #[arg(long)]
    sweep_values: String,
    /// Comma-separated seeds; `a..b` spans an inclusive range.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Override the scenario's configured duration.
    #[arg(long)]
    duration_ms: Option<u64>,
}

#[derive(Args)]
struct ScenariosArgs {
    /// Print this built-in scenario instead of listing names.
    #[arg(long)]
    show: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StdoutFormat {
    /// The metrics report.
    Csv,
    /// The event trace line format.
    Lines,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    /// Per-node carried-route cap, applied to every node.
    #[value(name = "route_limit")]
    RouteLimit,
    /// Keep only the first N configured flows.
    #[value(name = "flow_count")]
    FlowCount,
    /// Independent per-transmission loss probability.
    #[value(name = "loss_rate")]
    LossRate,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|_| format!("unknown protocol {s:?}; use `baseline` or `ci`"))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Compare(args) => cmd_compare(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Scenarios(args) => cmd_scenarios(args),
    }
}

/// Resolves `--scenario`: an exact built-in name, a unique prefix of one,
/// or a path to a scenario file.
fn load_scenario(selector: &str) -> Result<ScenarioSpec, Failure> {
    if let Some(spec) = builtin(selector) {
        return Ok(spec);
    }
    let matches: Vec<&str> =
        BUILTIN_NAMES.iter().copied().filter(|n| n.starts_with(selector)).collect();
    match matches.as_slice() {
        [unique] => return Ok(builtin(unique).expect("listed builtins exist")),
        [] => {}
        many => {
            return Err(Failure::user(format!(
                "scenario {selector:?} is ambiguous: matches {}",
                many.join(", ")
            )))
        }
    }
    let text = std::fs::read_to_string(selector).map_err(|e| {
        Failure::user(format!(
            "unknown scenario {selector:?}: not a built-in ({}) and not a readable file ({e})",
            BUILTIN_NAMES.join(", ")
        ))
    })?;
    ScenarioSpec::parse(&text).map_err(|e| Failure::user(format!("{selector}: {e}")))
}

fn apply_duration(spec: &mut ScenarioSpec, duration_ms: Option<u64>) -> Result<(), Failure> {
    if let Some(d) = duration_ms {
        if d == 0 {
            return Err(Failure::user("duration must be positive"));
        }
        spec.params.duration_ms = d;
    }
    Ok(())
}

fn simulate(spec: &ScenarioSpec, protocol: Protocol, seed: u64) -> Result<Simulation, Failure> {
    let mut sim = Simulation::new(spec, protocol, seed);
    sim.run();
    if !sim.violations().is_empty() {
        return Err(Failure::Internal(format!(
            "simulation invariants violated: {}",
            sim.violations().join("; ")
        )));
    }
    Ok(sim)
}

fn report_of(sim: &Simulation, spec: &ScenarioSpec) -> Result<MetricsReport, Failure> {
    compute_report(sim.trace(), spec).map_err(|e| Failure::Internal(e.to_string()))
}

fn write_file(path: &PathBuf, content: &str) -> Result<(), Failure> {
    std::fs::write(path, content)
        .map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut spec = load_scenario(&args.scenario)?;
    apply_duration(&mut spec, args.duration_ms)?;
    let sim = simulate(&spec, args.protocol, args.seed)?;
    let report = report_of(&sim, &spec)?;
    let csv = report.to_csv(&spec.labels);
    if let Some(path) = &args.trace_out {
        write_file(path, &sim.trace().to_text())?;
    }
    if let Some(path) = &args.report_out {
        write_file(path, &csv)?;
    }
    match args.format {
        StdoutFormat::Csv => print!("{csv}"),
        StdoutFormat::Lines => print!("{}", sim.trace().to_text()),
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let mut spec = load_scenario(&args.scenario)?;
    apply_duration(&mut spec, args.duration_ms)?;
    let base = simulate(&spec, Protocol::Baseline, args.seed)?;
    let ci = simulate(&spec, Protocol::Ci, args.seed)?;
    let comparison = compare(report_of(&base, &spec)?, report_of(&ci, &spec)?)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    print!("{}", comparison.to_text());
    Ok(())
}

/// One concrete variation of the swept parameter.
#[derive(Clone)]
enum SweepValue {
    Limit(RouteLimit),
    Flows(usize),
    Loss(f64),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Limit(l) => l.fmt(f),
            SweepValue::Flows(n) => n.fmt(f),
            SweepValue::Loss(p) => p.fmt(f),
        }
    }
}

fn parse_sweep_values(param: SweepParam, raw: &str) -> Result<Vec<SweepValue>, Failure> {
    let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Failure::user("no sweep values given"));
    }
    items
        .into_iter()
        .map(|item| match param {
            SweepParam::RouteLimit => {
                if item == "unlimited" {
                    Ok(SweepValue::Limit(RouteLimit::Unlimited))
                } else {
                    item.parse::<u32>()
                        .map(|n| SweepValue::Limit(RouteLimit::Limited(n)))
                        .map_err(|_| {
                            Failure::user(format!(
                                "bad route limit {item:?}: use an integer or `unlimited`"
                            ))
                        })
                }
            }
            SweepParam::FlowCount => item
                .parse::<usize>()
                .map(SweepValue::Flows)
                .map_err(|_| Failure::user(format!("bad flow count {item:?}"))),
            SweepParam::LossRate => match item.parse::<f64>() {
                Ok(p) if (0.0..=1.0).contains(&p) => Ok(SweepValue::Loss(p)),
                _ => Err(Failure::user(format!("bad loss rate {item:?}: use 0.0..=1.0"))),
            },
        })
        .collect()
}

fn parse_seeds(raw: &str) -> Result<Vec<u64>, Failure> {
    let mut out = Vec::new();
    for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let a: u64 =
                a.parse().map_err(|_| Failure::user(format!("bad seed range {item:?}")))?;
            let b: u64 =
                b.parse().map_err(|_| Failure::user(format!("bad seed range {item:?}")))?;
            if a > b {
                return Err(Failure::user(format!("empty seed range {item:?}")));
            }
            out.extend(a..=b);
        } else {
            out.push(item.parse().map_err(|_| Failure::user(format!("bad seed {item:?}")))?);
        }
    }
    if out.is_empty() {
        return Err(Failure::user("no seeds given"));
    }
    Ok(out)
}

fn apply_sweep_value(spec: &ScenarioSpec, value: &SweepValue) -> Result<ScenarioSpec, Failure> {
    let mut s = spec.clone();
    match value {
        SweepValue::Limit(limit) => {
            s.params.route_limit = *limit;
            for n in &mut s.nodes {
                n.route_limit = *limit;
            }
        }
        SweepValue::Flows(n) => {
            if *n > s.flows.len() {
                return Err(Failure::user(format!(
                    "scenario has {} flows, cannot keep {n}",
                    s.flows.len()
                )));
            }
            s.flows.truncate(*n);
        }
        SweepValue::Loss(p) => s.medium.loss_rate = *p,
    }
    Ok(s)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut spec = load_scenario(&args.scenario)?;
    apply_duration(&mut spec, args.duration_ms)?;
    let values = parse_sweep_values(args.sweep_param, &args.sweep_values)?;
    let seeds = parse_seeds(&args.seeds)?;

    // Validate every variation up front so errors surface before any work.
    let variants: Vec<(String, ScenarioSpec)> = values
        .iter()
        .map(|v| apply_sweep_value(&spec, v).map(|s| (v.to_string(), s)))
        .collect::<Result<_, _>>()?;

    let param_name = match args.sweep_param {
        SweepParam::RouteLimit => "route_limit",
        SweepParam::FlowCount => "flow_count",
        SweepParam::LossRate => "loss_rate",
    };
    let jobs: Vec<(&String, &ScenarioSpec, u64)> = variants
        .iter()
        .flat_map(|(label, s)| seeds.iter().map(move |seed| (label, s, *seed)))
        .collect();

    // Share-nothing fan-out: each job simulates its own instance; collect
    // preserves job order, so parallelism never changes the output bytes.
    let rows: Vec<Result<String, Failure>> = jobs
        .par_iter()
        .map(|(label, s, seed)| {
            let sim = simulate(s, args.protocol, *seed)?;
            let report = report_of(&sim, s)?;
            let g = &report.global;
            let admitted = report.flows.iter().filter(|f| f.established > 0).count();
            let mut row = String::new();
            let _ = write!(
                row,
                "{param_name},{label},{seed},{},{},{},{:.4},{:.2},{},{},{},{},{}",
                g.offered,
                g.delivered,
                g.dropped,
                g.pdr(),
                g.avg_latency_ms(),
                g.control_sends,
                admitted,
                g.routes_established,
                g.rejections,
                g.failures_admission_rejected + g.failures_no_route,
            );
            Ok(row)
        })
        .collect();

    println!(
        "param,value,seed,offered,delivered,dropped,pdr,avg_latency_ms,control_sends,\
         admitted_flows,routes_established,rejections,failures"
    );
    for row in rows {
        println!("{}", row?);
    }
    Ok(())
}

fn cmd_scenarios(args: ScenariosArgs) -> Result<(), Failure> {
    match args.show {
        Some(name) => {
            let spec = load_scenario(&name)?;
            print!("{}", spec.render());
        }
        None => {
            for name in BUILTIN_NAMES {
                println!("{name}");
            }
        }
    }
    Ok(())
}
