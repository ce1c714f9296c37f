//! Acceptance gate: the simulator's promised behaviors, each verified end
//! to end and reported as one pass/fail line. Run with `--nocapture` to
//! see the lines on success; they are printed on failure regardless.

use ciaodv::model::{
    ControlMessage, FailReason, NodeId, Protocol, RouteLimit,
};
use ciaodv::node::AdmissionDecision;
use ciaodv::scenario::{builtin, random_scenario, GenParams, MobilityModel, ScenarioSpec};
use ciaodv::trace::{SimTrace, TraceBody, TraceRecord};
use ciaodv::{admission_check, compute_report, Simulation};
use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

const SUITE_SEEDS: std::ops::RangeInclusive<u64> = 1..=500;

fn run(spec: &ScenarioSpec, protocol: Protocol, seed: u64) -> Simulation {
    let mut sim = Simulation::new(spec, protocol, seed);
    sim.run();
    sim
}

/// Same scenario with every admission limit removed.
fn unlimit(spec: &ScenarioSpec) -> ScenarioSpec {
    let mut s = spec.clone();
    s.params.route_limit = RouteLimit::Unlimited;
    for n in &mut s.nodes {
        n.route_limit = RouteLimit::Unlimited;
    }
    s
}

/// The randomized suite: up to 30 nodes, up to 10 flows, everyone walking.
fn suite_spec(seed: u64) -> ScenarioSpec {
    let gp = GenParams {
        n_nodes: 8 + (seed as usize % 23),
        n_flows: 1 + (seed as usize % 10),
        mobile: true,
        ..GenParams::default()
    };
    let mut spec = random_scenario(&gp, seed);
    if let MobilityModel::RandomWaypoint { width, height, step_ms, .. } = spec.mobility.model {
        spec.mobility.model = MobilityModel::RandomWaypoint {
            width,
            height,
            max_speed_mps: 1.0 + (seed % 10) as f64,
            step_ms,
        };
    }
    spec
}

fn lookup(spec: &ScenarioSpec, label: &str) -> NodeId {
    spec.labels.lookup(label).expect("label exists")
}

fn path_of(spec: &ScenarioSpec, labels: &[&str]) -> Vec<NodeId> {
    labels.iter().map(|l| lookup(spec, l)).collect()
}

fn established_paths(trace: &SimTrace) -> Vec<Vec<NodeId>> {
    trace
        .records
        .iter()
        .filter_map(|r| match &r.body {
            TraceBody::Establish { path, .. } => Some(path.clone()),
            _ => None,
        })
        .collect()
}

/// The admission-visible record stream: route commitments and rejections.
fn route_decisions(trace: &SimTrace) -> Vec<TraceRecord> {
    trace
        .records
        .iter()
        .filter(|r| matches!(r.body, TraceBody::Establish { .. } | TraceBody::Reject { .. }))
        .cloned()
        .collect()
}

fn without_protocol_tag(report: &str) -> String {
    report.lines().filter(|l| !l.starts_with("#protocol")).collect::<Vec<_>>().join("\n")
}

fn count(trace: &SimTrace, pred: impl Fn(&TraceBody) -> bool) -> usize {
    trace.records.iter().filter(|r| pred(&r.body)).count()
}

struct Outcome {
    title: &'static str,
    result: Result<String, String>,
    elapsed: Duration,
}

fn timed(
    title: &'static str,
    bound: Option<Duration>,
    f: impl FnOnce() -> Result<String, String>,
) -> Outcome {
    let start = Instant::now();
    let mut result = f();
    let elapsed = start.elapsed();
    if let (Ok(_), Some(limit)) = (&result, bound) {
        if elapsed > limit {
            result = Err(format!("took {elapsed:.2?}, bound is {limit:.2?}"));
        }
    }
    Outcome { title, result, elapsed }
}

fn criterion_1() -> Result<String, String> {
    // Pure check over a preloaded index vector: five path nodes carrying
    // 1, 2, 1, 1 and 0 routes under a uniform cap of two. Only the node
    // at the cap blocks the connection, and it is named alone.
    let (s, n2, n8, n9, d3) = (NodeId(0), NodeId(1), NodeId(2), NodeId(3), NodeId(4));
    let path = [(s, 1), (n2, 2), (n8, 1), (n9, 1), (d3, 0)];
    let limits: BTreeMap<NodeId, RouteLimit> =
        [s, n2, n8, n9, d3].into_iter().map(|n| (n, RouteLimit::Limited(2))).collect();
    match admission_check(&path, &limits) {
        AdmissionDecision::Reject { violators } if violators == vec![n2] => {}
        other => return Err(format!("expected rejection naming only the loaded relay, got {other:?}")),
    }
    let relaxed: BTreeMap<NodeId, RouteLimit> =
        limits.keys().map(|n| (*n, RouteLimit::Limited(3))).collect();
    if admission_check(&path, &relaxed) != AdmissionDecision::Admit {
        return Err("the same vector must be admitted under a cap of three".into());
    }

    // The live fixture with that standing load reproduces the rejection.
    let spec = builtin("table1_fixture").ok_or("missing builtin")?;
    let sim = run(&spec, Protocol::Ci, 1);
    if !sim.violations().is_empty() {
        return Err(format!("violations: {:?}", sim.violations()));
    }
    let n2 = lookup(&spec, "N2");
    let d3 = lookup(&spec, "D3");
    let rejects: Vec<(NodeId, Vec<NodeId>)> = sim
        .trace()
        .records
        .iter()
        .filter_map(|r| match &r.body {
            TraceBody::Reject { dest, violators } => Some((*dest, violators.clone())),
            _ => None,
        })
        .collect();
    if rejects.is_empty() || !rejects.iter().all(|(d, v)| *d == d3 && v == &vec![n2]) {
        return Err(format!("live rejection must name only the loaded relay, got {rejects:?}"));
    }
    if count(sim.trace(), |b| matches!(b, TraceBody::Establish { .. })) != 0 {
        return Err("no route may establish through the loaded relay".into());
    }
    if sim.node(lookup(&spec, "S")).failure_of(d3) != Some(FailReason::AdmissionRejected) {
        return Err("the connection must fail as rejected".into());
    }
    Ok("pure admission check and preloaded live run both reject naming only the loaded relay"
        .into())
}

fn criterion_2() -> Result<String, String> {
    let spec = builtin("fig3_tree").ok_or("missing builtin")?;
    let s = lookup(&spec, "S");
    let n2 = lookup(&spec, "N2");
    let d3 = lookup(&spec, "D3");
    let sim = run(&spec, Protocol::Ci, 5);
    if !sim.violations().is_empty() {
        return Err(format!("violations: {:?}", sim.violations()));
    }
    let paths = established_paths(sim.trace());
    let want = [
        path_of(&spec, &["S", "N2", "N3", "N4", "D1"]),
        path_of(&spec, &["S", "N2", "N5", "N6", "N7", "D2"]),
    ];
    if paths != want {
        return Err(format!("first two connections must establish their tree paths, got {paths:?}"));
    }
    if count(sim.trace(), |b| matches!(b, TraceBody::Reject { dest, .. } if *dest == d3)) == 0 {
        return Err("third connection must be rejected".into());
    }
    let retry_excludes: Vec<BTreeSet<NodeId>> = sim
        .trace()
        .records
        .iter()
        .filter_map(|r| match &r.body {
            TraceBody::Send { to: None, msg: ControlMessage::Rreq(rq) }
                if r.node == s && rq.dest == d3 && !rq.excluded.is_empty() =>
            {
                Some(rq.excluded.iter().copied().collect())
            }
            _ => None,
        })
        .collect();
    if retry_excludes.is_empty() || !retry_excludes.iter().all(|e| e == &BTreeSet::from([n2])) {
        return Err(format!(
            "retry floods must exclude exactly the loaded relay, got {retry_excludes:?}"
        ));
    }
    if sim.node(s).failure_of(d3) != Some(FailReason::AdmissionRejected) {
        return Err("third connection must fail as rejected".into());
    }

    // With limits removed the same request goes through on the tree path.
    let free = unlimit(&spec);
    let sim = run(&free, Protocol::Ci, 5);
    let paths = established_paths(sim.trace());
    let third = path_of(&free, &["S", "N2", "N8", "N9", "D3"]);
    if paths.len() != 3 || paths[2] != third {
        return Err(format!("unlimited run must establish the third path {third:?}, got {paths:?}"));
    }
    Ok("loaded fork rejects with retry exclusion; unlimited variant admits on the same path".into())
}

fn criterion_3() -> Result<String, String> {
    let chain = builtin("fig1_chain").ok_or("missing builtin")?;
    let sim = run(&chain, Protocol::Ci, 1);
    let want = vec![path_of(&chain, &["S", "N1", "N2", "N3", "D"])];
    if established_paths(sim.trace()) != want {
        return Err("chain discovery must produce the straight five-node path".into());
    }

    let fork = builtin("fig2_two_paths").ok_or("missing builtin")?;
    let sim = run(&fork, Protocol::Ci, 1);
    let want = vec![
        path_of(&fork, &["S", "N4", "N5", "D1"]),
        path_of(&fork, &["S", "N4", "N6", "N7", "D2"]),
    ];
    if established_paths(sim.trace()) != want {
        return Err("fork discovery must pick the two shortest branch paths".into());
    }
    let n4 = lookup(&fork, "N4");
    if count(sim.trace(), |b| matches!(b, TraceBody::TornDown { .. })) != 0 {
        return Err("both connections must stay up for the whole run".into());
    }
    let reached_two = sim
        .trace()
        .records
        .iter()
        .any(|r| r.node == n4 && matches!(r.body, TraceBody::Index { value: 2 }));
    if !reached_two || sim.node(n4).own_index() != 2 {
        return Err("the shared relay must carry both connections at once".into());
    }
    Ok("chain and fork discoveries produce exactly the expected paths; shared relay carries two"
        .into())
}

struct SuiteFindings {
    limit_breaches: Vec<String>,
    index_breaches: Vec<String>,
    loop_breaches: Vec<String>,
    unknown: Vec<String>,
    rejections: usize,
    establishes: usize,
    index_checks: u64,
    reduction_failures: Vec<String>,
    seeds: usize,
}

/// One pass over the randomized suite gathers the material for the limit-
/// safety, index-agreement, baseline-reduction and loop-freedom criteria.
fn run_suite() -> SuiteFindings {
    let mut f = SuiteFindings {
        limit_breaches: Vec::new(),
        index_breaches: Vec::new(),
        loop_breaches: Vec::new(),
        unknown: Vec::new(),
        rejections: 0,
        establishes: 0,
        index_checks: 0,
        reduction_failures: Vec::new(),
        seeds: 0,
    };
    for seed in SUITE_SEEDS {
        f.seeds += 1;
        let spec = suite_spec(seed);
        let sim = run(&spec, Protocol::Ci, seed);
        let mut classify = |violations: &[String], tag: &str| {
            for v in violations {
                let line = format!("seed {seed} {tag}: {v}");
                if v.contains("beyond its limit") {
                    f.limit_breaches.push(line);
                } else if v.contains("index out of step") {
                    f.index_breaches.push(line);
                } else if v.contains("flooded request") || v.contains("malformed path") {
                    f.loop_breaches.push(line);
                } else {
                    f.unknown.push(line);
                }
            }
        };
        classify(sim.violations(), "limited");
        f.rejections += count(sim.trace(), |b| matches!(b, TraceBody::Reject { .. }));
        f.establishes += count(sim.trace(), |b| matches!(b, TraceBody::Establish { .. }));
        f.index_checks += sim.index_checks();

        // Baseline reduction over the same scenario with limits removed.
        let free = unlimit(&spec);
        let ci = run(&free, Protocol::Ci, seed);
        let base = run(&free, Protocol::Baseline, seed);
        classify(ci.violations(), "unlimited-ci");
        classify(base.violations(), "unlimited-baseline");
        f.index_checks += ci.index_checks() + base.index_checks();
        f.establishes += count(ci.trace(), |b| matches!(b, TraceBody::Establish { .. }));
        f.establishes += count(base.trace(), |b| matches!(b, TraceBody::Establish { .. }));
        if route_decisions(ci.trace()) != route_decisions(base.trace()) {
            f.reduction_failures.push(format!("seed {seed}: route decision streams differ"));
            continue;
        }
        let rc = compute_report(ci.trace(), &free).expect("same spec");
        let rb = compute_report(base.trace(), &free).expect("same spec");
        if without_protocol_tag(&rc.to_csv(&free.labels))
            != without_protocol_tag(&rb.to_csv(&free.labels))
        {
            f.reduction_failures.push(format!("seed {seed}: reports differ"));
        }
    }
    f
}

fn criterion_4(f: &SuiteFindings) -> Result<String, String> {
    if !f.limit_breaches.is_empty() {
        return Err(format!(
            "{} limit breaches, first: {}",
            f.limit_breaches.len(),
            f.limit_breaches[0]
        ));
    }
    if f.rejections == 0 {
        return Err("vacuous: admission never bound across the suite".into());
    }
    Ok(format!(
        "no limit ever exceeded across {} runs ({} admission rejections show limits binding)",
        f.seeds, f.rejections
    ))
}

fn criterion_5(f: &SuiteFindings) -> Result<String, String> {
    if !f.index_breaches.is_empty() {
        return Err(format!(
            "{} index disagreements, first: {}",
            f.index_breaches.len(),
            f.index_breaches[0]
        ));
    }
    if !f.unknown.is_empty() {
        return Err(format!("unclassified violations: {}", f.unknown[0]));
    }
    if f.index_checks == 0 {
        return Err("vacuous: no quiescent instant was ever checked".into());
    }
    Ok(format!(
        "indices matched the omniscient registry at {} quiescent instants",
        f.index_checks
    ))
}

fn criterion_6(f: &SuiteFindings) -> Result<String, String> {
    if !f.reduction_failures.is_empty() {
        return Err(format!(
            "{} seeds diverged, first: {}",
            f.reduction_failures.len(),
            f.reduction_failures[0]
        ));
    }
    Ok(format!(
        "{} seeds: identical route decisions and byte-identical reports (protocol tag aside)",
        f.seeds
    ))
}

fn criterion_7(f: &SuiteFindings) -> Result<String, String> {
    if !f.loop_breaches.is_empty() {
        return Err(format!(
            "{} loop/dedup breaches, first: {}",
            f.loop_breaches.len(),
            f.loop_breaches[0]
        ));
    }
    Ok(format!(
        "all {} committed paths simple, no duplicate floods across the suite",
        f.establishes
    ))
}

fn criterion_8() -> Result<String, String> {
    let mut compared = 0;
    let mut check = |spec: &ScenarioSpec, protocol: Protocol, seed: u64| -> Result<(), String> {
        let a = run(spec, protocol, seed);
        let b = run(spec, protocol, seed);
        if a.trace().to_text() != b.trace().to_text() {
            return Err(format!("trace replay diverged ({}, {protocol}, seed {seed})", spec.name));
        }
        let ra = compute_report(a.trace(), spec).expect("same spec");
        let rb = compute_report(b.trace(), spec).expect("same spec");
        if ra.to_csv(&spec.labels) != rb.to_csv(&spec.labels) {
            return Err(format!("report replay diverged ({}, {protocol}, seed {seed})", spec.name));
        }
        compared += 1;
        Ok(())
    };
    for name in ciaodv::scenario::BUILTIN_NAMES {
        let spec = builtin(name).ok_or("missing builtin")?;
        for protocol in [Protocol::Baseline, Protocol::Ci] {
            check(&spec, protocol, 11)?;
        }
    }
    for seed in [1, 137, 255, 384, 500] {
        check(&suite_spec(seed), Protocol::Ci, seed)?;
    }
    Ok(format!("{compared} replays byte-identical in trace and report"))
}

fn criterion_9() -> Result<String, String> {
    let spec = builtin("star_relay").ok_or("missing builtin")?;
    let base = run(&spec, Protocol::Baseline, 7);
    let ci = run(&spec, Protocol::Ci, 7);
    let rb = compute_report(base.trace(), &spec).expect("same spec");
    let rc = compute_report(ci.trace(), &spec).expect("same spec");

    // Closed-form saturation oracle: the shared relay is the bottleneck.
    // It can forward at most its service rate from the moment the first
    // connection commits until the end, so everything offered beyond that
    // budget must drown.
    let mut offered: u64 = 0;
    for f in &spec.flows {
        let mut k = 0;
        while f.packet_time(k) <= spec.params.duration_ms {
            k += 1;
        }
        offered += k;
    }
    let relay_pps =
        spec.nodes.iter().map(|n| n.capacity_pps).min().expect("nonempty") as u64;
    let t0 = spec.flows.iter().map(|f| f.start_ms).min().expect("nonempty")
        + spec.params.accept_window_ms;
    let budget = relay_pps * (spec.params.duration_ms - t0) / 1000;
    let predicted_drops = offered.saturating_sub(budget) as f64;
    let actual_drops = rb.global.dropped as f64;
    if (actual_drops - predicted_drops).abs() > 0.05 * predicted_drops {
        return Err(format!(
            "saturation oracle predicts ~{predicted_drops} drops, run produced {actual_drops}"
        ));
    }

    let admitted: Vec<_> = rc.flows.iter().filter(|f| f.established > 0).collect();
    let refused = rc.flows.iter().filter(|f| f.failed.is_some()).count();
    if admitted.len() != 2 || refused != 2 {
        return Err(format!(
            "admission should keep exactly the two connections the relay can serve, got {} kept / {refused} refused",
            admitted.len()
        ));
    }
    let worst_admitted =
        admitted.iter().map(|f| f.pdr()).fold(f64::INFINITY, f64::min);
    let best_baseline = rb.flows.iter().map(|f| f.pdr()).fold(0.0, f64::max);
    if worst_admitted <= best_baseline {
        return Err(format!(
            "admitted connections must beat every baseline flow: {worst_admitted:.4} vs {best_baseline:.4}"
        ));
    }
    Ok(format!(
        "admitted flows deliver {:.1}% vs baseline's best {:.1}%; baseline drops {} within 5% of predicted {}",
        worst_admitted * 100.0,
        best_baseline * 100.0,
        actual_drops,
        predicted_drops
    ))
}

fn criterion_10() -> Result<String, String> {
    let mut spec = builtin("fig2_two_paths").ok_or("missing builtin")?;
    let n5 = lookup(&spec, "N5");
    spec.mobility.departures.push((n5, 3000));
    let s = lookup(&spec, "S");
    let n4 = lookup(&spec, "N4");
    let sim = run(&spec, Protocol::Ci, 2);
    if !sim.violations().is_empty() {
        return Err(format!("violations: {:?}", sim.violations()));
    }
    let trace = sim.trace();
    let rerr_at_source = trace
        .records
        .iter()
        .any(|r| r.node == s && matches!(r.body, TraceBody::Recv { msg: ControlMessage::Rerr(_), .. }));
    if !rerr_at_source {
        return Err("the link-break error must reach the source".into());
    }
    let n4_indices: Vec<u32> = trace
        .records
        .iter()
        .filter_map(|r| match r.body {
            TraceBody::Index { value } if r.node == n4 => Some(value),
            _ => None,
        })
        .collect();
    if n4_indices != vec![1, 2, 1, 2] {
        return Err(format!(
            "relay index must rise to two, drop on teardown and recover, got {n4_indices:?}"
        ));
    }
    let paths = established_paths(trace);
    let replacement = path_of(&spec, &["S", "N4", "N6", "N7", "D1"]);
    if paths.len() != 3 || paths[2] != replacement {
        return Err(format!("re-discovery must commit {replacement:?}, got {paths:?}"));
    }
    Ok("error reached the source, relay index decremented, alternate path re-established".into())
}

#[test]
fn acceptance_gate() {
    let sec = Duration::from_secs;
    let mut outcomes: Vec<Outcome> = Vec::new();

    outcomes.push(timed(
        "preloaded admission vector rejects naming the loaded relay",
        Some(sec(1)),
        criterion_1,
    ));
    outcomes.push(timed(
        "tree rejection with retry exclusion; unlimited variant admits",
        Some(sec(5)),
        criterion_2,
    ));
    outcomes.push(timed(
        "chain and fork scenarios discover the expected paths",
        Some(sec(5)),
        criterion_3,
    ));

    let suite = run_suite();
    outcomes.push(timed("route limits never exceeded (randomized suite)", None, || {
        criterion_4(&suite)
    }));
    outcomes.push(timed("indices agree with the registry at quiescence", None, || {
        criterion_5(&suite)
    }));
    outcomes.push(timed("unlimited admission reduces to baseline", None, || {
        criterion_6(&suite)
    }));
    outcomes.push(timed("paths loop-free, floods deduplicated", None, || criterion_7(&suite)));

    outcomes.push(timed("same seed replays byte-identical outputs", None, criterion_8));
    outcomes.push(timed(
        "admission preserves delivery under relay saturation",
        Some(sec(30)),
        criterion_9,
    ));
    outcomes.push(timed(
        "departure recovery: error, index decrement, alternate route",
        Some(sec(5)),
        criterion_10,
    ));

    let mut failed = 0;
    for (i, o) in outcomes.iter().enumerate() {
        let (verdict, detail) = match &o.result {
            Ok(d) => ("PASS", d.clone()),
            Err(e) => {
                failed += 1;
                ("FAIL", e.clone())
            }
        };
        println!(
            "criterion {:02} {verdict} ({:6.2}s) {} — {}",
            i + 1,
            o.elapsed.as_secs_f64(),
            o.title,
            detail
        );
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
