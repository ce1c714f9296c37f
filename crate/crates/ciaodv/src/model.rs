//! Core value types shared by every layer of the simulator: node ids and
//! labels, wrapping sequence numbers, routing-table rows, connection-index
//! bookkeeping and the control-message union.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Simulated time in milliseconds.
pub type SimTime = u64;

/// Compact node identifier. Ids are the declaration index of a node within
/// its scenario; the human-readable label lives in [`Labels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Maps node ids to the short labels used in scenario files and traces.
///
/// Labels are unique within a scenario and restricted to
/// `[A-Za-z][A-Za-z0-9_]*` so they can be embedded in trace lines without
/// escaping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Labels {
    names: Vec<String>,
}

impl Labels {
    pub fn new() -> Self {
        Labels { names: Vec::new() }
    }

    /// Validates and registers a label, returning the id assigned to it.
    pub fn push(&mut self, label: &str) -> Result<NodeId, LabelError> {
        if !valid_label(label) {
            return Err(LabelError::Invalid(label.to_string()));
        }
        if self.lookup(label).is_some() {
            return Err(LabelError::Duplicate(label.to_string()));
        }
        if self.names.len() > u16::MAX as usize {
            return Err(LabelError::TooMany);
        }
        let id = NodeId(self.names.len() as u16);
        self.names.push(label.to_string());
        Ok(id)
    }

    pub fn get(&self, id: NodeId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn lookup(&self, label: &str) -> Option<NodeId> {
        self.names
            .iter()
            .position(|n| n == label)
            .map(|i| NodeId(i as u16))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.names.len()).map(|i| NodeId(i as u16))
    }
}

pub fn valid_label(label: &str) -> bool {
    let mut chars = label.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("invalid node label {0:?}")]
    Invalid(String),
    #[error("duplicate node label {0:?}")]
    Duplicate(String),
    #[error("too many nodes")]
    TooMany,
}

/// Wrapping 32-bit sequence number ordered by signed difference, so
/// freshness comparisons survive counter wraparound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SeqNo(pub u32);

impl SeqNo {
    /// True when `self` is strictly fresher than `other`.
    ///
    /// Total against any window smaller than half the counter space;
    /// values exactly 2^31 apart are mutually "not newer".
    pub fn newer_than(self, other: SeqNo) -> bool {
        self != other && (self.0.wrapping_sub(other.0) as i32) > 0
    }

    pub fn next(self) -> SeqNo {
        SeqNo(self.0.wrapping_add(1))
    }
}

impl fmt::Display for SeqNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Per-node cap on concurrently carried routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteLimit {
    Limited(u32),
    Unlimited,
}

impl RouteLimit {
    /// Can a node currently carrying `index` routes accept one more?
    pub fn admits(self, index: u32) -> bool {
        match self {
            RouteLimit::Unlimited => true,
            RouteLimit::Limited(cap) => index < cap,
        }
    }

    /// True when `index` does not exceed the cap (the steady-state bound).
    pub fn holds(self, index: u32) -> bool {
        match self {
            RouteLimit::Unlimited => true,
            RouteLimit::Limited(cap) => index <= cap,
        }
    }
}

impl fmt::Display for RouteLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteLimit::Limited(n) => n.fmt(f),
            RouteLimit::Unlimited => f.write_str("unlimited"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteState {
    Valid,
    Broken,
}

/// One routing-table row: how to reach `destination` and how fresh that
/// knowledge is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteEntry {
    pub destination: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seqno: SeqNo,
    pub expires_at: SimTime,
    pub state: RouteState,
}

impl RouteEntry {
    pub fn is_valid_at(&self, now: SimTime) -> bool {
        self.state == RouteState::Valid && self.expires_at > now
    }
}

/// Identity of one end-to-end connection: the originator, the destination
/// and a per-originator serial so re-established routes stay distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RouteId {
    pub origin: NodeId,
    pub dest: NodeId,
    pub serial: u32,
}

/// Last-heard connection index per neighbor (plus the node's own entry,
/// which is kept exact).
pub type ConnectionIndexTable = BTreeMap<NodeId, u32>;

/// Route request, flooded hop by hop away from `origin`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rreq {
    pub origin: NodeId,
    pub rreq_id: u32,
    pub dest: NodeId,
    pub origin_seqno: SeqNo,
    pub dest_seqno_known: Option<SeqNo>,
    pub hop_count: u32,
    /// Nodes that must not forward or answer this request; grows across
    /// admission-rejection retries.
    pub excluded: BTreeSet<NodeId>,
}

/// Route reply, unicast back along the reverse path toward `dest` (the
/// node that asked). `origin` is the node the route leads to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rrep {
    pub origin: NodeId,
    pub dest: NodeId,
    pub dest_seqno: SeqNo,
    pub hop_count: u32,
    pub lifetime: SimTime,
    /// Every node this reply has traversed so far, most recent last is
    /// *not* used: the list is kept in traversal order starting at the
    /// replying node, each node exactly once, paired with its exact
    /// connection index at forwarding time.
    pub path_indices: Vec<(NodeId, u32)>,
}

/// Route error listing destinations that became unreachable through the
/// sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rerr {
    pub unreachable: Vec<(NodeId, SeqNo)>,
}

/// One-hop beacon. Also advertises the sender's current connection index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub sender: NodeId,
    pub sender_seqno: SeqNo,
    pub connection_index: u32,
}

/// Commit notification sent along the freshly admitted forward path; every
/// node on `path` starts carrying the route when it sees this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Activate {
    pub route: RouteId,
    pub path: Vec<NodeId>,
    pub dest_seqno: SeqNo,
    pub lifetime: SimTime,
}

/// Orderly release of a carried route, forwarded along the remaining path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Teardown {
    pub route: RouteId,
    pub reason: TearReason,
}

/// Activation refusal travelling back toward the originator; every node
/// that had already started carrying the route lets go of it again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abort {
    pub route: RouteId,
    pub refused_by: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TearReason {
    Expired,
    LinkBreak,
    Refused,
    StaleCarry,
}

impl fmt::Display for TearReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TearReason::Expired => "expired",
            TearReason::LinkBreak => "link_break",
            TearReason::Refused => "refused",
            TearReason::StaleCarry => "stale_carry",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for TearReason {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "expired" => Ok(TearReason::Expired),
            "link_break" => Ok(TearReason::LinkBreak),
            "refused" => Ok(TearReason::Refused),
            "stale_carry" => Ok(TearReason::StaleCarry),
            _ => Err(()),
        }
    }
}

/// Everything nodes exchange besides application data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlMessage {
    Rreq(Rreq),
    Rrep(Rrep),
    Rerr(Rerr),
    Hello(Hello),
    Activate(Activate),
    Teardown(Teardown),
    Abort(Abort),
}

impl ControlMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ControlMessage::Rreq(_) => MessageKind::Rreq,
            ControlMessage::Rrep(_) => MessageKind::Rrep,
            ControlMessage::Rerr(_) => MessageKind::Rerr,
            ControlMessage::Hello(_) => MessageKind::Hello,
            ControlMessage::Activate(_) => MessageKind::Activate,
            ControlMessage::Teardown(_) => MessageKind::Teardown,
            ControlMessage::Abort(_) => MessageKind::Abort,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    Rreq,
    Rrep,
    Rerr,
    Hello,
    Activate,
    Teardown,
    Abort,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::Rreq,
        MessageKind::Rrep,
        MessageKind::Rerr,
        MessageKind::Hello,
        MessageKind::Activate,
        MessageKind::Teardown,
        MessageKind::Abort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Rreq => "RREQ",
            MessageKind::Rrep => "RREP",
            MessageKind::Rerr => "RERR",
            MessageKind::Hello => "HELLO",
            MessageKind::Activate => "ACTIVATE",
            MessageKind::Teardown => "TEARDOWN",
            MessageKind::Abort => "ABORT",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which admission behavior a run uses. `Baseline` runs the identical
/// machinery with the admission decision hard-wired to admit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Baseline,
    Ci,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Baseline => f.write_str("baseline"),
            Protocol::Ci => f.write_str("ci"),
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "baseline" => Ok(Protocol::Baseline),
            "ci" => Ok(Protocol::Ci),
            _ => Err(()),
        }
    }
}

/// Why a data packet never reached its destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    /// No valid routing entry at the node holding the packet.
    NoRoute,
    /// The node's forwarding queue was full.
    QueueFull,
    /// The source's awaiting-discovery buffer overflowed.
    BufferFull,
    /// The unicast target was out of range or departed.
    LinkOut,
    /// Random medium loss.
    MediumLoss,
}

impl DropReason {
    pub const ALL: [DropReason; 5] = [
        DropReason::NoRoute,
        DropReason::QueueFull,
        DropReason::BufferFull,
        DropReason::LinkOut,
        DropReason::MediumLoss,
    ];
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DropReason::NoRoute => "no_route",
            DropReason::QueueFull => "queue_full",
            DropReason::BufferFull => "buffer_full",
            DropReason::LinkOut => "link_out",
            DropReason::MediumLoss => "medium_loss",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DropReason {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "no_route" => Ok(DropReason::NoRoute),
            "queue_full" => Ok(DropReason::QueueFull),
            "buffer_full" => Ok(DropReason::BufferFull),
            "link_out" => Ok(DropReason::LinkOut),
            "medium_loss" => Ok(DropReason::MediumLoss),
            _ => Err(()),
        }
    }
}

/// Terminal outcome of a connection request whose retries are exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    /// At least one attempt was turned away by admission control.
    AdmissionRejected,
    /// No reply ever arrived.
    NoRoute,
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailReason::AdmissionRejected => f.write_str("admission_rejected"),
            FailReason::NoRoute => f.write_str("no_route"),
        }
    }
}

impl std::str::FromStr for FailReason {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "admission_rejected" => Ok(FailReason::AdmissionRejected),
            "no_route" => Ok(FailReason::NoRoute),
            _ => Err(()),
        }
    }
}

/// Application payload riding the data plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataPacket {
    /// Index of the owning flow in the scenario's flow list.
    pub flow: u16,
    pub src: NodeId,
    pub dst: NodeId,
    /// Per-flow packet ordinal, starting at 0.
    pub seq: u64,
    pub created_at: SimTime,
    pub payload_bytes: u32,
}

/// Anything the medium can deliver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Control(ControlMessage),
    Data(DataPacket),
}

/// True when no node appears twice.
pub fn path_is_simple(path: &[NodeId]) -> bool {
    let mut seen = BTreeSet::new();
    path.iter().all(|n| seen.insert(*n))
}
