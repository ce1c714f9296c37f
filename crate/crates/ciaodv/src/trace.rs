//! Simulation trace: an ordered log of everything observable in a run, with
//! a stable line-oriented text form.
//!
//! Each record renders as one line, `time <TAB> kind <TAB> node <TAB>
//! message-kind <TAB> fields...`, preceded by a `#`-prefixed header block
//! recording the scenario hash, seed and parameters. Rendering is
//! byte-stable: the same run always produces the same text.

use crate::model::*;
use std::fmt::Write as _;

const TRACE_VERSION: u32 = 1;

/// Header block carried at the top of every trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub scenario_hash: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub duration_ms: SimTime,
    /// Scenario-level parameters, already in canonical order.
    pub params: Vec<(String, String)>,
}

/// One observable event.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub at: SimTime,
    pub node: NodeId,
    pub body: TraceBody,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceBody {
    /// Node placed at startup.
    Init { x: f64, y: f64 },
    /// Control message transmitted; `to` is `None` for a broadcast.
    Send { to: Option<NodeId>, msg: ControlMessage },
    /// Control message received and processed.
    Recv { from: NodeId, msg: ControlMessage },
    /// Control message lost in the medium (at the sender).
    Lost { to: NodeId, msg: ControlMessage },
    /// Application packet created at its source.
    Gen { pkt: DataPacket },
    /// Data packet transmitted to the next hop.
    SendData { to: NodeId, pkt: DataPacket },
    /// Data packet received by a node (relay or destination).
    RecvData { from: NodeId, pkt: DataPacket },
    /// Data packet handed to the application at its destination.
    Deliver { pkt: DataPacket },
    /// Data packet dropped.
    Drop { reason: DropReason, pkt: DataPacket },
    /// Route admitted and committed at its originator.
    Establish { route: RouteId, path: Vec<NodeId> },
    /// Admission turned a candidate route away at the originator.
    Reject { dest: NodeId, violators: Vec<NodeId> },
    /// Connection request gave up permanently.
    Fail { dest: NodeId, reason: FailReason },
    /// Node stopped carrying a route.
    TornDown { route: RouteId, reason: TearReason },
    /// Node's own connection index changed to `value`.
    Index { value: u32 },
    /// Liveness check removed a silent neighbor.
    NeighborLost { neighbor: NodeId },
}

impl TraceBody {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TraceBody::Init { .. } => "INIT",
            TraceBody::Send { .. } | TraceBody::SendData { .. } => "SEND",
            TraceBody::Recv { .. } | TraceBody::RecvData { .. } => "RECV",
            TraceBody::Lost { .. } => "LOST",
            TraceBody::Gen { .. } => "GEN",
            TraceBody::Deliver { .. } => "DELIVER",
            TraceBody::Drop { .. } => "DROP",
            TraceBody::Establish { .. } => "ESTABLISH",
            TraceBody::Reject { .. } => "REJECT",
            TraceBody::Fail { .. } => "FAIL",
            TraceBody::TornDown { .. } => "TEARDOWN",
            TraceBody::Index { .. } => "INDEX",
            TraceBody::NeighborLost { .. } => "NEIGHBOR_LOST",
        }
    }
}

/// A full run log: header, label table and records in event order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub header: TraceHeader,
    pub labels: Labels,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceParseError {
    #[error("trace line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trace header missing or incomplete")]
    BadHeader,
    #[error("unsupported trace version {0}")]
    BadVersion(u32),
}

fn malformed(line: usize, msg: impl Into<String>) -> TraceParseError {
    TraceParseError::Malformed { line, msg: msg.into() }
}

impl SimTrace {
    /// Renders the whole trace; stable byte-for-byte for a given run.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#ciaodv-trace v{TRACE_VERSION}");
        let _ = writeln!(out, "#scenario_hash {}", self.header.scenario_hash);
        let _ = writeln!(out, "#seed {}", self.header.seed);
        let _ = writeln!(out, "#protocol {}", self.header.protocol);
        let _ = writeln!(out, "#duration_ms {}", self.header.duration_ms);
        let nodes: Vec<&str> = self.labels.ids().map(|id| self.labels.get(id)).collect();
        let _ = writeln!(
            out,
            "#nodes {}",
            if nodes.is_empty() { "-".to_string() } else { nodes.join(",") }
        );
        for (k, v) in &self.header.params {
            let _ = writeln!(out, "#param {k} {v}");
        }
        for rec in &self.records {
            render_record(&mut out, rec, &self.labels);
        }
        out
    }

    /// Parses text produced by [`SimTrace::to_text`].
    pub fn from_text(text: &str) -> Result<SimTrace, TraceParseError> {
        let mut lines = text.lines().enumerate().peekable();

        let (_, first) = lines.next().ok_or(TraceParseError::BadHeader)?;
        let version: u32 = first
            .strip_prefix("#ciaodv-trace v")
            .and_then(|v| v.parse().ok())
            .ok_or(TraceParseError::BadHeader)?;
        if version != TRACE_VERSION {
            return Err(TraceParseError::BadVersion(version));
        }

        let mut scenario_hash = None;
        let mut seed = None;
        let mut protocol = None;
        let mut duration = None;
        let mut labels = Labels::new();
        let mut params = Vec::new();
        while let Some((_, line)) = lines.peek() {
            if !line.starts_with('#') {
                break;
            }
            let (lineno, line) = lines.next().unwrap();
            let rest = &line[1..];
            let (key, value) = rest
                .split_once(' ')
                .ok_or_else(|| malformed(lineno + 1, "bad header line"))?;
            match key {
                "scenario_hash" => scenario_hash = Some(value.to_string()),
                "seed" => {
                    seed = Some(value.parse().map_err(|_| malformed(lineno + 1, "bad seed"))?)
                }
                "protocol" => {
                    protocol =
                        Some(value.parse().map_err(|_| malformed(lineno + 1, "bad protocol"))?)
                }
                "duration_ms" => {
                    duration =
                        Some(value.parse().map_err(|_| malformed(lineno + 1, "bad duration"))?)
                }
                "nodes" => {
                    if value != "-" {
                        for label in value.split(',') {
                            labels
                                .push(label)
                                .map_err(|e| malformed(lineno + 1, e.to_string()))?;
                        }
                    }
                }
                "param" => {
                    let (k, v) = value
                        .split_once(' ')
                        .ok_or_else(|| malformed(lineno + 1, "bad param line"))?;
                    params.push((k.to_string(), v.to_string()));
                }
                other => return Err(malformed(lineno + 1, format!("unknown header key {other}"))),
            }
        }

        let header = TraceHeader {
            scenario_hash: scenario_hash.ok_or(TraceParseError::BadHeader)?,
            seed: seed.ok_or(TraceParseError::BadHeader)?,
            protocol: protocol.ok_or(TraceParseError::BadHeader)?,
            duration_ms: duration.ok_or(TraceParseError::BadHeader)?,
            params,
        };

        let mut records = Vec::new();
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            records.push(parse_record(line, lineno + 1, &labels)?);
        }
        Ok(SimTrace { header, labels, records })
    }
}

fn render_record(out: &mut String, rec: &TraceRecord, labels: &Labels) {
    let node = labels.get(rec.node);
    let kind = rec.body.kind_name();
    let _ = write!(out, "{}\t{}\t{}", rec.at, kind, node);
    match &rec.body {
        TraceBody::Init { x, y } => {
            let _ = write!(out, "\t-\t{x}\t{y}");
        }
        TraceBody::Send { to, msg } => {
            let to = to.map_or("*", |n| labels.get(n));
            let _ = write!(out, "\t{}\t{}\t{}", msg.kind(), to, msg_fields(msg, labels));
        }
        TraceBody::Recv { from, msg } => {
            let _ = write!(
                out,
                "\t{}\t{}\t{}",
                msg.kind(),
                labels.get(*from),
                msg_fields(msg, labels)
            );
        }
        TraceBody::Lost { to, msg } => {
            let _ = write!(
                out,
                "\t{}\t{}\t{}",
                msg.kind(),
                labels.get(*to),
                msg_fields(msg, labels)
            );
        }
        TraceBody::Gen { pkt } => {
            let _ = write!(out, "\tDATA\t{}", pkt_fields(pkt, labels));
        }
        TraceBody::SendData { to, pkt } => {
            let _ = write!(out, "\tDATA\t{}\t{}", labels.get(*to), pkt_fields(pkt, labels));
        }
        TraceBody::RecvData { from, pkt } => {
            let _ = write!(out, "\tDATA\t{}\t{}", labels.get(*from), pkt_fields(pkt, labels));
        }
        TraceBody::Deliver { pkt } => {
            let _ = write!(out, "\tDATA\t{}", pkt_fields(pkt, labels));
        }
        TraceBody::Drop { reason, pkt } => {
            let _ = write!(out, "\tDATA\t{}\t{}", reason, pkt_fields(pkt, labels));
        }
        TraceBody::Establish { route, path } => {
            let _ = write!(out, "\t-\t{}\t{}", fmt_route(route, labels), join_nodes(path, labels));
        }
        TraceBody::Reject { dest, violators } => {
            let _ = write!(out, "\t-\t{}\t{}", labels.get(*dest), join_nodes(violators, labels));
        }
        TraceBody::Fail { dest, reason } => {
            let _ = write!(out, "\t-\t{}\t{}", labels.get(*dest), reason);
        }
        TraceBody::TornDown { route, reason } => {
            let _ = write!(out, "\t-\t{}\t{}", fmt_route(route, labels), reason);
        }
        TraceBody::Index { value } => {
            let _ = write!(out, "\t-\t{value}");
        }
        TraceBody::NeighborLost { neighbor } => {
            let _ = write!(out, "\t-\t{}", labels.get(*neighbor));
        }
    }
    out.push('\n');
}

fn parse_record(line: &str, lineno: usize, labels: &Labels) -> Result<TraceRecord, TraceParseError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 4 {
        return Err(malformed(lineno, "too few fields"));
    }
    let at: SimTime =
        fields[0].parse().map_err(|_| malformed(lineno, "bad timestamp"))?;
    let kind = fields[1];
    let node = parse_node(fields[2], labels, lineno)?;
    let msg_kind = fields[3];
    let rest = &fields[4..];

    let need = |n: usize| -> Result<(), TraceParseError> {
        if rest.len() < n {
            Err(malformed(lineno, "too few fields"))
        } else {
            Ok(())
        }
    };

    let body = match kind {
        "INIT" => {
            need(2)?;
            let x = rest[0].parse().map_err(|_| malformed(lineno, "bad x"))?;
            let y = rest[1].parse().map_err(|_| malformed(lineno, "bad y"))?;
            TraceBody::Init { x, y }
        }
        "SEND" if msg_kind == "DATA" => {
            need(1)?;
            let to = parse_node(rest[0], labels, lineno)?;
            TraceBody::SendData { to, pkt: parse_pkt(&rest[1..], labels, lineno)? }
        }
        "SEND" => {
            need(1)?;
            let to = if rest[0] == "*" { None } else { Some(parse_node(rest[0], labels, lineno)?) };
            TraceBody::Send { to, msg: parse_msg(msg_kind, &rest[1..], labels, lineno)? }
        }
        "RECV" if msg_kind == "DATA" => {
            need(1)?;
            let from = parse_node(rest[0], labels, lineno)?;
            TraceBody::RecvData { from, pkt: parse_pkt(&rest[1..], labels, lineno)? }
        }
        "RECV" => {
            need(1)?;
            let from = parse_node(rest[0], labels, lineno)?;
            TraceBody::Recv { from, msg: parse_msg(msg_kind, &rest[1..], labels, lineno)? }
        }
        "LOST" => {
            need(1)?;
            let to = parse_node(rest[0], labels, lineno)?;
            TraceBody::Lost { to, msg: parse_msg(msg_kind, &rest[1..], labels, lineno)? }
        }
        "GEN" => TraceBody::Gen { pkt: parse_pkt(rest, labels, lineno)? },
        "DELIVER" => TraceBody::Deliver { pkt: parse_pkt(rest, labels, lineno)? },
        "DROP" => {
            need(1)?;
            let reason: DropReason =
                rest[0].parse().map_err(|_| malformed(lineno, "bad drop reason"))?;
            TraceBody::Drop { reason, pkt: parse_pkt(&rest[1..], labels, lineno)? }
        }
        "ESTABLISH" => {
            need(2)?;
            TraceBody::Establish {
                route: parse_route(rest[0], labels, lineno)?,
                path: split_nodes(rest[1], labels, lineno)?,
            }
        }
        "REJECT" => {
            need(2)?;
            TraceBody::Reject {
                dest: parse_node(rest[0], labels, lineno)?,
                violators: split_nodes(rest[1], labels, lineno)?,
            }
        }
        "FAIL" => {
            need(2)?;
            TraceBody::Fail {
                dest: parse_node(rest[0], labels, lineno)?,
                reason: rest[1].parse().map_err(|_| malformed(lineno, "bad fail reason"))?,
            }
        }
        "TEARDOWN" => {
            need(2)?;
            TraceBody::TornDown {
                route: parse_route(rest[0], labels, lineno)?,
                reason: rest[1].parse().map_err(|_| malformed(lineno, "bad tear reason"))?,
            }
        }
        "INDEX" => {
            need(1)?;
            TraceBody::Index {
                value: rest[0].parse().map_err(|_| malformed(lineno, "bad index"))?,
            }
        }
        "NEIGHBOR_LOST" => {
            need(1)?;
            TraceBody::NeighborLost { neighbor: parse_node(rest[0], labels, lineno)? }
        }
        other => return Err(malformed(lineno, format!("unknown record kind {other}"))),
    };
    Ok(TraceRecord { at, node, body })
}

/// Serializes a control message as its tab-separated field block.
pub fn msg_fields(msg: &ControlMessage, labels: &Labels) -> String {
    let l = |n: &NodeId| labels.get(*n).to_string();
    match msg {
        ControlMessage::Rreq(r) => {
            let dseq = r.dest_seqno_known.map_or("-".to_string(), |s| s.to_string());
            let excl = if r.excluded.is_empty() {
                "-".to_string()
            } else {
                r.excluded.iter().map(|n| labels.get(*n)).collect::<Vec<_>>().join(",")
            };
            format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                l(&r.origin), r.rreq_id, l(&r.dest), r.origin_seqno, dseq, r.hop_count, excl
            )
        }
        ControlMessage::Rrep(r) => {
            let path = if r.path_indices.is_empty() {
                "-".to_string()
            } else {
                r.path_indices
                    .iter()
                    .map(|(n, i)| format!("{}:{}", labels.get(*n), i))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            format!(
                "{}\t{}\t{}\t{}\t{}\t{}",
                l(&r.origin), l(&r.dest), r.dest_seqno, r.hop_count, r.lifetime, path
            )
        }
        ControlMessage::Rerr(r) => {
            let list = if r.unreachable.is_empty() {
                "-".to_string()
            } else {
                r.unreachable
                    .iter()
                    .map(|(n, s)| format!("{}:{}", labels.get(*n), s))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            list
        }
        ControlMessage::Hello(h) => {
            format!("{}\t{}\t{}", l(&h.sender), h.sender_seqno, h.connection_index)
        }
        ControlMessage::Activate(a) => {
            format!(
                "{}\t{}\t{}\t{}",
                fmt_route(&a.route, labels),
                join_nodes(&a.path, labels),
                a.dest_seqno,
                a.lifetime
            )
        }
        ControlMessage::Teardown(t) => {
            format!("{}\t{}", fmt_route(&t.route, labels), t.reason)
        }
        ControlMessage::Abort(a) => {
            format!("{}\t{}", fmt_route(&a.route, labels), l(&a.refused_by))
        }
    }
}

/// Parses the field block produced by [`msg_fields`].
pub fn parse_msg(
    kind: &str,
    f: &[&str],
    labels: &Labels,
    lineno: usize,
) -> Result<ControlMessage, TraceParseError> {
    let node = |s: &str| parse_node(s, labels, lineno);
    let seq = |s: &str| -> Result<SeqNo, TraceParseError> {
        s.parse().map(SeqNo).map_err(|_| malformed(lineno, "bad seqno"))
    };
    let int = |s: &str| -> Result<u64, TraceParseError> {
        s.parse().map_err(|_| malformed(lineno, "bad integer"))
    };
    let need = |n: usize| -> Result<(), TraceParseError> {
        if f.len() != n {
            Err(malformed(lineno, format!("expected {n} message fields, got {}", f.len())))
        } else {
            Ok(())
        }
    };
    match kind {
        "RREQ" => {
            need(7)?;
            let excluded = if f[6] == "-" {
                Default::default()
            } else {
                f[6].split(',').map(node).collect::<Result<_, _>>()?
            };
            Ok(ControlMessage::Rreq(Rreq {
                origin: node(f[0])?,
                rreq_id: int(f[1])? as u32,
                dest: node(f[2])?,
                origin_seqno: seq(f[3])?,
                dest_seqno_known: if f[4] == "-" { None } else { Some(seq(f[4])?) },
                hop_count: int(f[5])? as u32,
                excluded,
            }))
        }
        "RREP" => {
            need(6)?;
            let path_indices = if f[5] == "-" {
                Vec::new()
            } else {
                f[5].split(',')
                    .map(|p| {
                        let (n, i) = p
                            .split_once(':')
                            .ok_or_else(|| malformed(lineno, "bad path index entry"))?;
                        Ok((node(n)?, int(i)? as u32))
                    })
                    .collect::<Result<_, TraceParseError>>()?
            };
            Ok(ControlMessage::Rrep(Rrep {
                origin: node(f[0])?,
                dest: node(f[1])?,
                dest_seqno: seq(f[2])?,
                hop_count: int(f[3])? as u32,
                lifetime: int(f[4])?,
                path_indices,
            }))
        }
        "RERR" => {
            need(1)?;
            let unreachable = if f[0] == "-" {
                Vec::new()
            } else {
                f[0].split(',')
                    .map(|p| {
                        let (n, s) = p
                            .split_once(':')
                            .ok_or_else(|| malformed(lineno, "bad unreachable entry"))?;
                        Ok((node(n)?, seq(s)?))
                    })
                    .collect::<Result<_, TraceParseError>>()?
            };
            Ok(ControlMessage::Rerr(Rerr { unreachable }))
        }
        "HELLO" => {
            need(3)?;
            Ok(ControlMessage::Hello(Hello {
                sender: node(f[0])?,
                sender_seqno: seq(f[1])?,
                connection_index: int(f[2])? as u32,
            }))
        }
        "ACTIVATE" => {
            need(4)?;
            Ok(ControlMessage::Activate(Activate {
                route: parse_route(f[0], labels, lineno)?,
                path: split_nodes(f[1], labels, lineno)?,
                dest_seqno: seq(f[2])?,
                lifetime: int(f[3])?,
            }))
        }
        "TEARDOWN" => {
            need(2)?;
            Ok(ControlMessage::Teardown(Teardown {
                route: parse_route(f[0], labels, lineno)?,
                reason: f[1].parse().map_err(|_| malformed(lineno, "bad tear reason"))?,
            }))
        }
        "ABORT" => {
            need(2)?;
            Ok(ControlMessage::Abort(Abort {
                route: parse_route(f[0], labels, lineno)?,
                refused_by: node(f[1])?,
            }))
        }
        other => Err(malformed(lineno, format!("unknown message kind {other}"))),
    }
}

fn pkt_fields(pkt: &DataPacket, labels: &Labels) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        pkt.flow,
        labels.get(pkt.src),
        labels.get(pkt.dst),
        pkt.seq,
        pkt.created_at,
        pkt.payload_bytes
    )
}

fn parse_pkt(f: &[&str], labels: &Labels, lineno: usize) -> Result<DataPacket, TraceParseError> {
    if f.len() != 6 {
        return Err(malformed(lineno, "bad data packet fields"));
    }
    Ok(DataPacket {
        flow: f[0].parse().map_err(|_| malformed(lineno, "bad flow index"))?,
        src: parse_node(f[1], labels, lineno)?,
        dst: parse_node(f[2], labels, lineno)?,
        seq: f[3].parse().map_err(|_| malformed(lineno, "bad packet seq"))?,
        created_at: f[4].parse().map_err(|_| malformed(lineno, "bad created_at"))?,
        payload_bytes: f[5].parse().map_err(|_| malformed(lineno, "bad payload size"))?,
    })
}

/// Renders a route id as `origin>dest#serial`.
pub fn fmt_route(route: &RouteId, labels: &Labels) -> String {
    format!("{}>{}#{}", labels.get(route.origin), labels.get(route.dest), route.serial)
}

fn parse_route(s: &str, labels: &Labels, lineno: usize) -> Result<RouteId, TraceParseError> {
    let (pair, serial) = s.rsplit_once('#').ok_or_else(|| malformed(lineno, "bad route id"))?;
    let (origin, dest) = pair.split_once('>').ok_or_else(|| malformed(lineno, "bad route id"))?;
    Ok(RouteId {
        origin: parse_node(origin, labels, lineno)?,
        dest: parse_node(dest, labels, lineno)?,
        serial: serial.parse().map_err(|_| malformed(lineno, "bad route serial"))?,
    })
}

fn join_nodes(nodes: &[NodeId], labels: &Labels) -> String {
    if nodes.is_empty() {
        "-".to_string()
    } else {
        nodes.iter().map(|n| labels.get(*n)).collect::<Vec<_>>().join(",")
    }
}

fn split_nodes(s: &str, labels: &Labels, lineno: usize) -> Result<Vec<NodeId>, TraceParseError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|n| parse_node(n, labels, lineno)).collect()
}

fn parse_node(s: &str, labels: &Labels, lineno: usize) -> Result<NodeId, TraceParseError> {
    labels
        .lookup(s)
        .ok_or_else(|| malformed(lineno, format!("unknown node label {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn labels() -> Labels {
        let mut l = Labels::new();
        for name in ["S", "N1", "N2", "D"] {
            l.push(name).unwrap();
        }
        l
    }

    fn sample_msgs(l: &Labels) -> Vec<ControlMessage> {
        let n = |s: &str| l.lookup(s).unwrap();
        vec![
            ControlMessage::Rreq(Rreq {
                origin: n("S"),
                rreq_id: 1,
                dest: n("D"),
                origin_seqno: SeqNo(2),
                dest_seqno_known: None,
                hop_count: 0,
                excluded: BTreeSet::new(),
            }),
            ControlMessage::Rreq(Rreq {
                origin: n("S"),
                rreq_id: 2,
                dest: n("D"),
                origin_seqno: SeqNo(3),
                dest_seqno_known: Some(SeqNo(9)),
                hop_count: 4,
                excluded: [n("N2")].into_iter().collect(),
            }),
            ControlMessage::Rrep(Rrep {
                origin: n("D"),
                dest: n("S"),
                dest_seqno: SeqNo(7),
                hop_count: 2,
                lifetime: 10_000,
                path_indices: vec![(n("D"), 0), (n("N2"), 2), (n("N1"), 1)],
            }),
            ControlMessage::Rerr(Rerr { unreachable: vec![(n("D"), SeqNo(8))] }),
            ControlMessage::Hello(Hello {
                sender: n("N1"),
                sender_seqno: SeqNo(4),
                connection_index: 2,
            }),
            ControlMessage::Activate(Activate {
                route: RouteId { origin: n("S"), dest: n("D"), serial: 0 },
                path: vec![n("S"), n("N1"), n("N2"), n("D")],
                dest_seqno: SeqNo(7),
                lifetime: 10_000,
            }),
            ControlMessage::Teardown(Teardown {
                route: RouteId { origin: n("S"), dest: n("D"), serial: 0 },
                reason: TearReason::Expired,
            }),
            ControlMessage::Abort(Abort {
                route: RouteId { origin: n("S"), dest: n("D"), serial: 1 },
                refused_by: n("N2"),
            }),
        ]
    }

    #[test]
    fn message_fields_round_trip() {
        let l = labels();
        for msg in sample_msgs(&l) {
            let text = msg_fields(&msg, &l);
            let fields: Vec<&str> = text.split('\t').collect();
            let back = parse_msg(msg.kind().name(), &fields, &l, 0).unwrap();
            assert_eq!(back, msg, "round trip failed for {text:?}");
        }
    }

    #[test]
    fn trace_text_round_trip() {
        let l = labels();
        let n = |s: &str| l.lookup(s).unwrap();
        let pkt = DataPacket {
            flow: 0,
            src: n("S"),
            dst: n("D"),
            seq: 3,
            created_at: 1200,
            payload_bytes: 512,
        };
        let trace = SimTrace {
            header: TraceHeader {
                scenario_hash: "deadbeef01234567".to_string(),
                seed: 42,
                protocol: Protocol::Ci,
                duration_ms: 10_000,
                params: vec![
                    ("range".to_string(), "120".to_string()),
                    ("route_limit".to_string(), "2".to_string()),
                ],
            },
            labels: l.clone(),
            records: vec![
                TraceRecord { at: 0, node: n("S"), body: TraceBody::Init { x: 0.0, y: 0.0 } },
                TraceRecord {
                    at: 1000,
                    node: n("S"),
                    body: TraceBody::Send { to: None, msg: sample_msgs(&l)[0].clone() },
                },
                TraceRecord {
                    at: 1010,
                    node: n("N1"),
                    body: TraceBody::Recv { from: n("S"), msg: sample_msgs(&l)[0].clone() },
                },
                TraceRecord { at: 1200, node: n("S"), body: TraceBody::Gen { pkt } },
                TraceRecord {
                    at: 1210,
                    node: n("S"),
                    body: TraceBody::SendData { to: n("N1"), pkt },
                },
                TraceRecord {
                    at: 1230,
                    node: n("N1"),
                    body: TraceBody::Drop { reason: DropReason::NoRoute, pkt },
                },
                TraceRecord {
                    at: 1300,
                    node: n("S"),
                    body: TraceBody::Establish {
                        route: RouteId { origin: n("S"), dest: n("D"), serial: 0 },
                        path: vec![n("S"), n("N1"), n("N2"), n("D")],
                    },
                },
                TraceRecord {
                    at: 1300,
                    node: n("S"),
                    body: TraceBody::Reject { dest: n("D"), violators: vec![n("N2")] },
                },
                TraceRecord {
                    at: 1400,
                    node: n("S"),
                    body: TraceBody::Fail { dest: n("D"), reason: FailReason::AdmissionRejected },
                },
                TraceRecord { at: 1500, node: n("N1"), body: TraceBody::Index { value: 1 } },
                TraceRecord {
                    at: 1600,
                    node: n("N1"),
                    body: TraceBody::NeighborLost { neighbor: n("N2") },
                },
                TraceRecord {
                    at: 1600,
                    node: n("N1"),
                    body: TraceBody::TornDown {
                        route: RouteId { origin: n("S"), dest: n("D"), serial: 0 },
                        reason: TearReason::LinkBreak,
                    },
                },
            ],
        };
        let text = trace.to_text();
        let back = SimTrace::from_text(&text).unwrap();
        assert_eq!(back, trace);
        // Re-rendering is byte-identical.
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let l = labels();
        assert!(parse_msg("RREQ", &["S", "x", "D", "2", "-", "0", "-"], &l, 3).is_err());
        assert!(parse_msg("RREQ", &["S", "1"], &l, 3).is_err());
        assert!(parse_msg("HELLO", &["NOPE", "1", "0"], &l, 3).is_err());
        assert!(SimTrace::from_text("garbage").is_err());
    }
}
