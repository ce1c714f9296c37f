//! Post-run measurement: per-connection and run-wide counters distilled
//! from a trace, rendered to a byte-stable CSV report, plus side-by-side
//! comparison of two runs over the same scenario and seed.

use crate::model::{DropReason, FailReason, MessageKind, NodeId, Protocol, SimTime};
use crate::scenario::ScenarioSpec;
use crate::trace::{SimTrace, TraceBody};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Counters for one configured traffic flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMetrics {
    pub flow: u16,
    pub src: NodeId,
    pub dst: NodeId,
    /// Packets the application handed to the source.
    pub offered: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Still inside the system when the run ended.
    pub residual: u64,
    pub latency_sum_ms: u64,
    pub max_latency_ms: u64,
    /// Routes committed for this flow's endpoints over the whole run.
    pub established: u64,
    /// Admission rejections observed while connecting these endpoints.
    pub rejected: u64,
    /// Teardowns of this flow's routes, counted at the originator.
    pub torn: u64,
    /// Terminal connection failure, if the flow ended up unroutable.
    pub failed: Option<FailReason>,
}

impl FlowMetrics {
    pub fn pdr(&self) -> f64 {
        if self.offered == 0 {
            0.0
        } else {
            self.delivered as f64 / self.offered as f64
        }
    }

    pub fn avg_latency_ms(&self) -> f64 {
        if self.delivered == 0 {
            0.0
        } else {
            self.latency_sum_ms as f64 / self.delivered as f64
        }
    }
}

/// Counters over the whole run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalMetrics {
    pub offered: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub residual: u64,
    pub latency_sum_ms: u64,
    pub max_latency_ms: u64,
    /// Control transmissions of any kind, one per sending node.
    pub control_sends: u64,
    pub sends_by_kind: BTreeMap<MessageKind, u64>,
    pub drops_by_reason: BTreeMap<DropReason, u64>,
    pub routes_established: u64,
    pub routes_torn: u64,
    pub rejections: u64,
    pub failures_admission_rejected: u64,
    pub failures_no_route: u64,
}

impl GlobalMetrics {
    pub fn pdr(&self) -> f64 {
        if self.offered == 0 {
            0.0
        } else {
            self.delivered as f64 / self.offered as f64
        }
    }

    pub fn avg_latency_ms(&self) -> f64 {
        if self.delivered == 0 {
            0.0
        } else {
            self.latency_sum_ms as f64 / self.delivered as f64
        }
    }

    /// Control transmissions per delivered packet; undefined when nothing
    /// was delivered.
    pub fn control_per_delivered(&self) -> Option<f64> {
        if self.delivered == 0 {
            None
        } else {
            Some(self.control_sends as f64 / self.delivered as f64)
        }
    }
}

/// Everything measured from one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario_hash: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub duration_ms: SimTime,
    pub flows: Vec<FlowMetrics>,
    pub global: GlobalMetrics,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("trace belongs to scenario {got}, expected {expected}")]
    ScenarioMismatch { expected: String, got: String },
    #[error("runs used different seeds ({left} vs {right})")]
    SeedMismatch { left: u64, right: u64 },
}

/// Distills a run trace into counters. The spec must be the same scenario
/// the trace was produced from; the flow table comes from it.
pub fn compute_report(
    trace: &SimTrace,
    spec: &ScenarioSpec,
) -> Result<MetricsReport, MetricsError> {
    let expected = spec.hash();
    if trace.header.scenario_hash != expected {
        return Err(MetricsError::ScenarioMismatch {
            expected,
            got: trace.header.scenario_hash.clone(),
        });
    }

    let mut flows: Vec<FlowMetrics> = spec
        .flows
        .iter()
        .enumerate()
        .map(|(i, f)| FlowMetrics {
            flow: i as u16,
            src: f.src,
            dst: f.dst,
            offered: 0,
            delivered: 0,
            dropped: 0,
            residual: 0,
            latency_sum_ms: 0,
            max_latency_ms: 0,
            established: 0,
            rejected: 0,
            torn: 0,
            failed: None,
        })
        .collect();
    let mut global = GlobalMetrics::default();
    for kind in MessageKind::ALL {
        global.sends_by_kind.insert(kind, 0);
    }
    for reason in DropReason::ALL {
        global.drops_by_reason.insert(reason, 0);
    }

    for r in &trace.records {
        match &r.body {
            TraceBody::Gen { pkt } => {
                global.offered += 1;
                if let Some(f) = flows.get_mut(pkt.flow as usize) {
                    f.offered += 1;
                }
            }
            TraceBody::Deliver { pkt } => {
                let latency = r.at.saturating_sub(pkt.created_at);
                global.delivered += 1;
                global.latency_sum_ms += latency;
                global.max_latency_ms = global.max_latency_ms.max(latency);
                if let Some(f) = flows.get_mut(pkt.flow as usize) {
                    f.delivered += 1;
                    f.latency_sum_ms += latency;
                    f.max_latency_ms = f.max_latency_ms.max(latency);
                }
            }
            TraceBody::Drop { reason, pkt } => {
                global.dropped += 1;
                *global.drops_by_reason.get_mut(reason).expect("seeded") += 1;
                if let Some(f) = flows.get_mut(pkt.flow as usize) {
                    f.dropped += 1;
                }
            }
            TraceBody::Send { msg, .. } => {
                global.control_sends += 1;
                *global.sends_by_kind.get_mut(&msg.kind()).expect("seeded") += 1;
            }
            TraceBody::Establish { route, .. } => {
                global.routes_established += 1;
                for f in flows.iter_mut() {
                    if f.src == route.origin && f.dst == route.dest {
                        f.established += 1;
                    }
                }
            }
            TraceBody::Reject { dest, .. } => {
                global.rejections += 1;
                for f in flows.iter_mut() {
                    if f.src == r.node && f.dst == *dest {
                        f.rejected += 1;
                    }
                }
            }
            TraceBody::Fail { dest, reason } => {
                match reason {
                    FailReason::AdmissionRejected => global.failures_admission_rejected += 1,
                    FailReason::NoRoute => global.failures_no_route += 1,
                }
                for f in flows.iter_mut() {
                    if f.src == r.node && f.dst == *dest && f.failed.is_none() {
                        f.failed = Some(*reason);
                    }
                }
            }
            TraceBody::TornDown { route, .. } if r.node == route.origin => {
                global.routes_torn += 1;
                for f in flows.iter_mut() {
                    if f.src == route.origin && f.dst == route.dest {
                        f.torn += 1;
                    }
                }
            }
            _ => {}
        }
    }

    for f in flows.iter_mut() {
        f.residual = f.offered - f.delivered - f.dropped;
    }
    global.residual = global.offered - global.delivered - global.dropped;

    Ok(MetricsReport {
        scenario_hash: trace.header.scenario_hash.clone(),
        seed: trace.header.seed,
        protocol: trace.header.protocol,
        duration_ms: trace.header.duration_ms,
        flows,
        global,
    })
}

impl MetricsReport {
    /// Byte-stable CSV rendering: a header block, a per-flow table and a
    /// key-value section of run-wide counters.
    pub fn to_csv(&self, labels: &crate::model::Labels) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#ciaodv-report v1");
        let _ = writeln!(out, "#scenario_hash {}", self.scenario_hash);
        let _ = writeln!(out, "#seed {}", self.seed);
        let _ = writeln!(out, "#protocol {}", self.protocol);
        let _ = writeln!(out, "#duration_ms {}", self.duration_ms);
        let _ = writeln!(out);
        let _ = writeln!(out, "[flows]");
        let _ = writeln!(
            out,
            "flow,src,dst,offered,delivered,dropped,residual,pdr,avg_latency_ms,\
             max_latency_ms,established,rejected,torn,failed"
        );
        for f in &self.flows {
            let failed = f.failed.map_or("-".to_string(), |r| r.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.4},{:.2},{},{},{},{},{}",
                f.flow,
                labels.get(f.src),
                labels.get(f.dst),
                f.offered,
                f.delivered,
                f.dropped,
                f.residual,
                f.pdr(),
                f.avg_latency_ms(),
                f.max_latency_ms,
                f.established,
                f.rejected,
                f.torn,
                failed,
            );
        }
        let g = &self.global;
        let _ = writeln!(out);
        let _ = writeln!(out, "[global]");
        let _ = writeln!(out, "offered,{}", g.offered);
        let _ = writeln!(out, "delivered,{}", g.delivered);
        let _ = writeln!(out, "dropped,{}", g.dropped);
        let _ = writeln!(out, "residual,{}", g.residual);
        let _ = writeln!(out, "pdr,{:.4}", g.pdr());
        let _ = writeln!(out, "avg_latency_ms,{:.2}", g.avg_latency_ms());
        let _ = writeln!(out, "max_latency_ms,{}", g.max_latency_ms);
        let _ = writeln!(out, "control_sends,{}", g.control_sends);
        match g.control_per_delivered() {
            Some(v) => {
                let _ = writeln!(out, "control_per_delivered,{v:.4}");
            }
            None => {
                let _ = writeln!(out, "control_per_delivered,-");
            }
        }
        for kind in MessageKind::ALL {
            let _ = writeln!(
                out,
                "sends_{},{}",
                kind.name().to_ascii_lowercase(),
                g.sends_by_kind[&kind]
            );
        }
        for reason in DropReason::ALL {
            let _ = writeln!(out, "drops_{},{}", reason, g.drops_by_reason[&reason]);
        }
        let _ = writeln!(out, "routes_established,{}", g.routes_established);
        let _ = writeln!(out, "routes_torn,{}", g.routes_torn);
        let _ = writeln!(out, "rejections,{}", g.rejections);
        let _ = writeln!(out, "failures_admission_rejected,{}", g.failures_admission_rejected);
        let _ = writeln!(out, "failures_no_route,{}", g.failures_no_route);
        out
    }
}

/// Two reports over the same scenario and seed, side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub left: MetricsReport,
    pub right: MetricsReport,
}

/// Pairs two runs for comparison; they must describe the same scenario and
/// the same seed, otherwise the contrast is meaningless.
pub fn compare(left: MetricsReport, right: MetricsReport) -> Result<Comparison, MetricsError> {
    if left.scenario_hash != right.scenario_hash {
        return Err(MetricsError::ScenarioMismatch {
            expected: left.scenario_hash,
            got: right.scenario_hash,
        });
    }
    if left.seed != right.seed {
        return Err(MetricsError::SeedMismatch { left: left.seed, right: right.seed });
    }
    Ok(Comparison { left, right })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let l = &self.left.global;
        let r = &self.right.global;
        let mut out = String::new();
        let _ = writeln!(out, "#ciaodv-compare v1");
        let _ = writeln!(out, "#scenario_hash {}", self.left.scenario_hash);
        let _ = writeln!(out, "#seed {}", self.left.seed);
        let _ = writeln!(out, "metric,{},{},delta", self.left.protocol, self.right.protocol);
        let int = |name: &str, a: u64, b: u64| {
            format!("{name},{a},{b},{:+}\n", b as i64 - a as i64)
        };
        out.push_str(&int("offered", l.offered, r.offered));
        out.push_str(&int("delivered", l.delivered, r.delivered));
        out.push_str(&int("dropped", l.dropped, r.dropped));
        let _ = writeln!(out, "pdr,{:.4},{:.4},{:+.4}", l.pdr(), r.pdr(), r.pdr() - l.pdr());
        let _ = writeln!(
            out,
            "avg_latency_ms,{:.2},{:.2},{:+.2}",
            l.avg_latency_ms(),
            r.avg_latency_ms(),
            r.avg_latency_ms() - l.avg_latency_ms()
        );
        out.push_str(&int("max_latency_ms", l.max_latency_ms, r.max_latency_ms));
        out.push_str(&int("control_sends", l.control_sends, r.control_sends));
        out.push_str(&int("routes_established", l.routes_established, r.routes_established));
        out.push_str(&int("routes_torn", l.routes_torn, r.routes_torn));
        out.push_str(&int("rejections", l.rejections, r.rejections));
        out.push_str(&int(
            "failures",
            l.failures_admission_rejected + l.failures_no_route,
            r.failures_admission_rejected + r.failures_no_route,
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DataPacket, Protocol, RouteId};
    use crate::scenario::{builtin, ScenarioSpec};
    use crate::sim::Simulation;
    use crate::trace::{TraceHeader, TraceRecord};

    fn synthetic_spec() -> ScenarioSpec {
        ScenarioSpec::parse(
            "name synthetic\n\
             [nodes]\n\
             A 0 0\n\
             B 100 0\n\
             C 200 0\n\
             [flows]\n\
             A C 100 10 256\n\
             A B 50 10 256\n",
        )
        .unwrap()
    }

    fn pkt(flow: u16, src: NodeId, dst: NodeId, seq: u64, created_at: u64) -> DataPacket {
        DataPacket { flow, src, dst, seq, created_at, payload_bytes: 256 }
    }

    /// A hand-built trace with every counter small enough to tally on
    /// paper; the full rendered report is frozen.
    #[test]
    fn synthetic_report_matches_hand_tally() {
        use crate::model::{ControlMessage, Rrep, Rreq, SeqNo, TearReason};
        let spec = synthetic_spec();
        let a = spec.labels.lookup("A").unwrap();
        let b = spec.labels.lookup("B").unwrap();
        let c = spec.labels.lookup("C").unwrap();
        let route = RouteId { origin: a, dest: c, serial: 0 };
        let rec = |at, node, body| TraceRecord { at, node, body };
        let rreq = ControlMessage::Rreq(Rreq {
            origin: a,
            rreq_id: 1,
            dest: c,
            origin_seqno: SeqNo(1),
            dest_seqno_known: None,
            hop_count: 0,
            excluded: Default::default(),
        });
        let rrep = ControlMessage::Rrep(Rrep {
            origin: c,
            dest: a,
            dest_seqno: SeqNo(1),
            hop_count: 0,
            lifetime: 1000,
            path_indices: vec![(c, 0)],
        });
        let trace = SimTrace {
            header: TraceHeader {
                scenario_hash: spec.hash(),
                seed: 42,
                protocol: Protocol::Ci,
                duration_ms: spec.params.duration_ms,
                params: Vec::new(),
            },
            labels: spec.labels.clone(),
            records: vec![
                rec(100, a, TraceBody::Gen { pkt: pkt(0, a, c, 0, 100) }),
                rec(100, a, TraceBody::Send { to: None, msg: rreq }),
                rec(120, c, TraceBody::Send { to: Some(b), msg: rrep }),
                rec(150, a, TraceBody::Gen { pkt: pkt(0, a, c, 1, 150) }),
                rec(160, a, TraceBody::Establish { route, path: vec![a, b, c] }),
                rec(200, c, TraceBody::Deliver { pkt: pkt(0, a, c, 0, 100) }),
                rec(
                    220,
                    b,
                    TraceBody::Drop {
                        reason: DropReason::QueueFull,
                        pkt: pkt(0, a, c, 1, 150),
                    },
                ),
                rec(240, a, TraceBody::Gen { pkt: pkt(0, a, c, 2, 240) }),
                rec(300, c, TraceBody::Deliver { pkt: pkt(0, a, c, 2, 240) }),
                rec(400, a, TraceBody::Gen { pkt: pkt(1, a, b, 0, 400) }),
                rec(500, a, TraceBody::Fail { dest: b, reason: FailReason::NoRoute }),
                rec(
                    520,
                    a,
                    TraceBody::Drop { reason: DropReason::NoRoute, pkt: pkt(1, a, b, 0, 400) },
                ),
                rec(600, a, TraceBody::TornDown { route, reason: TearReason::Expired }),
            ],
        };

        let report = compute_report(&trace, &spec).unwrap();
        let expected = format!(
            "#ciaodv-report v1\n\
             #scenario_hash {}\n\
             #seed 42\n\
             #protocol ci\n\
             #duration_ms {}\n\
             \n\
             [flows]\n\
             flow,src,dst,offered,delivered,dropped,residual,pdr,avg_latency_ms,\
             max_latency_ms,established,rejected,torn,failed\n\
             0,A,C,3,2,1,0,0.6667,80.00,100,1,0,1,-\n\
             1,A,B,1,0,1,0,0.0000,0.00,0,0,0,0,no_route\n\
             \n\
             [global]\n\
             offered,4\n\
             delivered,2\n\
             dropped,2\n\
             residual,0\n\
             pdr,0.5000\n\
             avg_latency_ms,80.00\n\
             max_latency_ms,100\n\
             control_sends,2\n\
             control_per_delivered,1.0000\n\
             sends_rreq,1\n\
             sends_rrep,1\n\
             sends_rerr,0\n\
             sends_hello,0\n\
             sends_activate,0\n\
             sends_teardown,0\n\
             sends_abort,0\n\
             drops_no_route,1\n\
             drops_queue_full,1\n\
             drops_buffer_full,0\n\
             drops_link_out,0\n\
             drops_medium_loss,0\n\
             routes_established,1\n\
             routes_torn,1\n\
             rejections,0\n\
             failures_admission_rejected,0\n\
             failures_no_route,1\n",
            spec.hash(),
            spec.params.duration_ms,
        );
        assert_eq!(report.to_csv(&spec.labels), expected);
    }

    /// The chain run has exact closed-form numbers: the first packet waits
    /// out the discovery window (400 ms), the second trails it by the
    /// 10 ms service interval at each of four hops (210 ms), and every
    /// later packet crosses an empty pipeline in 80 ms. 72 control sends
    /// over 45 deliveries is 1.6 per packet.
    #[test]
    fn chain_report_matches_closed_form() {
        let spec = builtin("fig1_chain").unwrap();
        let mut sim = Simulation::new(&spec, Protocol::Ci, 1);
        sim.run();
        let report = compute_report(sim.trace(), &spec).unwrap();

        let g = &report.global;
        assert_eq!(g.offered, 46);
        assert_eq!(g.delivered, 45);
        assert_eq!(g.dropped, 0);
        assert_eq!(g.residual, 1);
        assert_eq!(g.latency_sum_ms, 400 + 210 + 43 * 80);
        assert_eq!(g.avg_latency_ms(), 90.0);
        assert_eq!(g.max_latency_ms, 400);
        assert_eq!(g.control_sends, 72);
        assert_eq!(g.control_per_delivered(), Some(1.6));
        assert_eq!(g.routes_established, 1);
        assert_eq!(g.routes_torn, 0);

        let csv = report.to_csv(&spec.labels);
        assert!(csv.contains("\n0,S,D,46,45,0,1,0.9783,90.00,400,1,0,0,-\n"));
        assert!(csv.contains("\npdr,0.9783\n"));
        assert!(csv.contains("\ncontrol_per_delivered,1.6000\n"));
    }

    /// Comparison refuses mismatched scenarios or seeds, and renders the
    /// admission contrast for matching runs.
    #[test]
    fn comparison_guards_identity_and_contrasts_runs() {
        let star = builtin("star_relay").unwrap();
        let chain = builtin("fig1_chain").unwrap();

        let report_of = |spec: &ScenarioSpec, protocol, seed| {
            let mut sim = Simulation::new(spec, protocol, seed);
            sim.run();
            compute_report(sim.trace(), spec).unwrap()
        };

        let base = report_of(&star, Protocol::Baseline, 7);
        let ci = report_of(&star, Protocol::Ci, 7);
        let other_scenario = report_of(&chain, Protocol::Ci, 7);
        let other_seed = report_of(&star, Protocol::Ci, 8);

        assert!(matches!(
            compare(base.clone(), other_scenario),
            Err(MetricsError::ScenarioMismatch { .. })
        ));
        assert!(matches!(
            compare(base.clone(), other_seed),
            Err(MetricsError::SeedMismatch { left: 7, right: 8 })
        ));

        let cmp = compare(base, ci).unwrap();
        let text = cmp.to_text();
        assert!(text.starts_with("#ciaodv-compare v1\n"));
        assert!(text.contains("metric,baseline,ci,delta\n"));
        assert!(text.contains("\nroutes_established,4,2,-2\n"));
        assert!(text.contains("\nrejections,0,"));
        assert!(text.contains("\nfailures,0,2,+2\n"));
    }
}
