//! Per-node protocol state machine.
//!
//! Every transition is a pure step: `(state, input, now) -> actions`, with
//! the returned [`Action`] list the only externally visible effect. The
//! surrounding engine owns clocks, queues and delivery; this module owns
//! routing state, discovery, admission and connection-index bookkeeping.

use crate::model::*;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Tunables carried by every node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeParams {
    /// Cap on concurrently carried routes (admission threshold).
    pub route_limit: RouteLimit,
    pub hello_interval_ms: SimTime,
    /// Missed-beacon tolerance: a neighbor silent for strictly longer than
    /// `allowed_hello_loss * hello_interval_ms` is considered gone.
    pub allowed_hello_loss: u32,
    pub active_route_timeout_ms: SimTime,
    /// Extra discovery attempts after the first flood.
    pub rreq_retries: u32,
    pub rreq_retry_wait_ms: SimTime,
    /// How long a source collects replies before deciding.
    pub accept_window_ms: SimTime,
    /// Drop route requests at loaded relays instead of forwarding them
    /// (saves flood traffic; the source-side check stays authoritative).
    pub early_prune: bool,
    /// Packets a source may hold while discovery is in flight.
    pub buffer_max: usize,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams {
            route_limit: RouteLimit::Unlimited,
            hello_interval_ms: 1000,
            allowed_hello_loss: 2,
            active_route_timeout_ms: 10_000,
            rreq_retries: 2,
            rreq_retry_wait_ms: 1000,
            accept_window_ms: 320,
            early_prune: false,
            buffer_max: 64,
        }
    }
}

/// Network-wide knowledge a node transition may consult: which admission
/// discipline is running and each node's configured limit.
#[derive(Debug, Clone, Copy)]
pub struct ProtocolCtx<'a> {
    pub protocol: Protocol,
    pub limits: &'a BTreeMap<NodeId, RouteLimit>,
}

impl<'a> ProtocolCtx<'a> {
    pub fn limit_of(&self, node: NodeId) -> RouteLimit {
        self.limits.get(&node).copied().unwrap_or(RouteLimit::Unlimited)
    }
}

/// Timers a node can ask the engine to arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    /// Periodic beacon + liveness sweep.
    HelloTick,
    /// Close of the reply-collection window for one discovery attempt.
    DiscoveryDeadline { dest: NodeId, attempt: u32 },
    /// Delayed re-flood after a silent attempt.
    DiscoveryRetry { dest: NodeId, attempt: u32 },
    /// Re-check an originated route for idleness.
    RouteExpiry { route: RouteId },
}

/// Externally visible effects of a transition.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Broadcast(ControlMessage),
    Unicast(NodeId, ControlMessage),
    /// Hand a data packet toward `0` (the next hop) through the forwarding
    /// queue.
    SendData(NodeId, DataPacket),
    /// Admitted and committed a route this node originated.
    EstablishRoute(RouteId, Vec<NodeId>),
    /// Admission turned the candidate path away.
    RejectRoute { dest: NodeId, violators: Vec<NodeId> },
    /// A connection request gave up for good.
    DiscoveryFailed { dest: NodeId, reason: FailReason },
    /// Data packet arrived at its destination.
    DeliverData(DataPacket),
    /// Data packet abandoned at this node.
    DropData(DataPacket, DropReason),
    /// Arm a timer at the given absolute time.
    SetTimer(TimerKind, SimTime),
    /// Own connection index changed to the given value.
    IndexChanged(u32),
    /// Stopped carrying a route.
    RouteTorn(RouteId, TearReason),
    /// Liveness sweep removed a silent neighbor.
    NeighborLost(NodeId),
}

/// Outcome of checking a candidate path against per-node limits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdmissionDecision {
    Admit,
    Reject { violators: Vec<NodeId> },
}

/// Source-side admission check: every node on the candidate path — the
/// endpoints included — must have room for one more carried route.
pub fn admission_check(
    path_indices: &[(NodeId, u32)],
    limits: &BTreeMap<NodeId, RouteLimit>,
) -> AdmissionDecision {
    let violators: Vec<NodeId> = path_indices
        .iter()
        .filter(|(n, idx)| {
            !limits.get(n).copied().unwrap_or(RouteLimit::Unlimited).admits(*idx)
        })
        .map(|(n, _)| *n)
        .collect();
    if violators.is_empty() {
        AdmissionDecision::Admit
    } else {
        AdmissionDecision::Reject { violators }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DiscoveryError {
    #[error("a discovery for this destination is already pending")]
    AlreadyPending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("route not carried by this node")]
pub struct UnknownRoute;

/// Liveness record for one heard neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborInfo {
    pub last_hello_at: SimTime,
    pub last_seqno: SeqNo,
}

/// A route this node is part of, between activation and teardown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CarriedRoute {
    pub path: Vec<NodeId>,
    pub prev: Option<NodeId>,
    pub next: Option<NodeId>,
    /// Last time activation or matching data traffic touched the route;
    /// lets orphaned carries expire if the teardown never reaches us.
    pub last_refresh: SimTime,
}

/// Best reply collected so far within one acceptance window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BestReply {
    pub arrived_at: SimTime,
    /// Total hop count source-to-destination.
    pub hops: u32,
    /// Forward path, source first, destination last.
    pub path: Vec<NodeId>,
    /// Indices as collected by the reply, same order as `path` minus the
    /// source (which prepends its own exact value at decision time).
    pub indices: Vec<(NodeId, u32)>,
    pub dest_seqno: SeqNo,
}

/// One in-flight connection request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingDiscovery {
    pub dest: NodeId,
    /// 1-based attempt counter; capped at `rreq_retries + 1`.
    pub attempt: u32,
    /// Nodes barred from forwarding or answering; grows monotonically
    /// across this request's retries.
    pub excluded: BTreeSet<NodeId>,
    pub started_at: SimTime,
    pub flooded_at: SimTime,
    pub best: Option<BestReply>,
    /// Whether any attempt of this request was turned away by admission.
    pub rejected: bool,
}

/// Bounded first-seen cache for request dedup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RreqSeen {
    set: BTreeSet<(NodeId, u32)>,
    order: VecDeque<(NodeId, u32)>,
    cap: usize,
}

impl RreqSeen {
    fn with_cap(cap: usize) -> Self {
        RreqSeen { set: BTreeSet::new(), order: VecDeque::new(), cap }
    }

    pub fn contains(&self, key: (NodeId, u32)) -> bool {
        self.set.contains(&key)
    }

    pub fn insert(&mut self, key: (NodeId, u32)) {
        if self.set.insert(key) {
            self.order.push_back(key);
            if self.order.len() > self.cap {
                if let Some(old) = self.order.pop_front() {
                    self.set.remove(&old);
                }
            }
        }
    }
}

const RREQ_SEEN_CAP: usize = 512;
/// Carried routes untouched for this many route timeouts are let go.
const CARRY_LEASE_FACTOR: u64 = 2;

/// Full protocol state of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub me: NodeId,
    pub own_seqno: SeqNo,
    pub routing_table: BTreeMap<NodeId, RouteEntry>,
    pub neighbors: BTreeMap<NodeId, NeighborInfo>,
    /// Last-heard index per neighbor plus an exact own entry.
    pub index_table: ConnectionIndexTable,
    /// Routes currently traversing this node, keyed by identity.
    pub carried: BTreeMap<RouteId, CarriedRoute>,
    pub pending: BTreeMap<NodeId, PendingDiscovery>,
    pub params: NodeParams,
    /// Standing load counted into the connection index on top of the routes
    /// actually carried; normally zero, set by scenarios that model
    /// pre-existing connections.
    pub index_base: u32,
    rreq_seen: RreqSeen,
    next_rreq_id: u32,
    next_route_serial: u32,
    /// Destinations whose connection request failed permanently.
    failed: BTreeMap<NodeId, FailReason>,
    /// Locally generated packets parked while discovery runs.
    buffered: BTreeMap<NodeId, VecDeque<DataPacket>>,
    /// Per-destination damper so unroutable data does not spam errors.
    last_noroute_rerr: BTreeMap<NodeId, SimTime>,
}

impl NodeState {
    pub fn new(me: NodeId, params: NodeParams) -> Self {
        let mut index_table = ConnectionIndexTable::new();
        index_table.insert(me, 0);
        NodeState {
            me,
            own_seqno: SeqNo(0),
            routing_table: BTreeMap::new(),
            neighbors: BTreeMap::new(),
            index_table,
            carried: BTreeMap::new(),
            pending: BTreeMap::new(),
            params,
            index_base: 0,
            rreq_seen: RreqSeen::with_cap(RREQ_SEEN_CAP),
            next_rreq_id: 1,
            next_route_serial: 0,
            failed: BTreeMap::new(),
            buffered: BTreeMap::new(),
            last_noroute_rerr: BTreeMap::new(),
        }
    }

    /// Number of distinct active routes traversing this node right now.
    pub fn own_index(&self) -> u32 {
        self.index_base + self.carried.len() as u32
    }

    /// Initial timers every node arms at startup.
    pub fn startup_actions(&self) -> Vec<Action> {
        vec![Action::SetTimer(TimerKind::HelloTick, 0)]
    }

    /// Locally generated packets currently parked behind a discovery.
    pub fn buffered_count(&self) -> usize {
        self.buffered.values().map(|q| q.len()).sum()
    }

    /// Removes and returns every parked packet; used when the node leaves
    /// the network and its holdings evaporate.
    pub fn take_buffered(&mut self) -> Vec<DataPacket> {
        let mut out = Vec::new();
        for (_, mut q) in std::mem::take(&mut self.buffered) {
            out.extend(q.drain(..));
        }
        out
    }

    // ------------------------------------------------------------------
    // Dispatch
    // ------------------------------------------------------------------

    pub fn handle_message(
        &mut self,
        from: NodeId,
        msg: &ControlMessage,
        now: SimTime,
        ctx: &ProtocolCtx,
    ) -> Vec<Action> {
        match msg {
            ControlMessage::Rreq(r) => self.handle_rreq(from, r, now, ctx),
            ControlMessage::Rrep(r) => self.handle_rrep(from, r, now),
            ControlMessage::Rerr(r) => self.handle_rerr(from, r, now),
            ControlMessage::Hello(h) => self.handle_hello(from, h, now),
            ControlMessage::Activate(a) => self.handle_activate(from, a, now, ctx),
            ControlMessage::Teardown(t) => self.handle_teardown(from, t, now),
            ControlMessage::Abort(a) => self.handle_abort(from, a, now),
        }
    }

    pub fn handle_timer(&mut self, kind: TimerKind, now: SimTime, ctx: &ProtocolCtx) -> Vec<Action> {
        match kind {
            TimerKind::HelloTick => {
                let mut actions = self.check_neighbor_liveness(now);
                actions.extend(self.sweep_stale_carries(now));
                actions.extend(self.emit_hello(now));
                actions.push(Action::SetTimer(
                    TimerKind::HelloTick,
                    now + self.params.hello_interval_ms,
                ));
                actions
            }
            TimerKind::DiscoveryDeadline { dest, attempt } => {
                self.close_discovery(dest, attempt, now, ctx)
            }
            TimerKind::DiscoveryRetry { dest, attempt } => {
                match self.pending.get(&dest) {
                    Some(p) if p.attempt == attempt => self.flood_rreq(dest, now),
                    _ => Vec::new(), // stale timer; request already resolved
                }
            }
            TimerKind::RouteExpiry { route } => self.check_route_expiry(route, now),
        }
    }

    // ------------------------------------------------------------------
    // Discovery: origination and retries
    // ------------------------------------------------------------------

    /// Starts a fresh connection request toward `dest`.
    pub fn originate_discovery(
        &mut self,
        dest: NodeId,
        now: SimTime,
    ) -> Result<Vec<Action>, DiscoveryError> {
        if self.pending.contains_key(&dest) {
            return Err(DiscoveryError::AlreadyPending);
        }
        self.failed.remove(&dest);
        self.pending.insert(
            dest,
            PendingDiscovery {
                dest,
                attempt: 1,
                excluded: BTreeSet::new(),
                started_at: now,
                flooded_at: now,
                best: None,
                rejected: false,
            },
        );
        Ok(self.flood_rreq(dest, now))
    }

    /// (Re)broadcasts the request for the current attempt of `dest`.
    fn flood_rreq(&mut self, dest: NodeId, now: SimTime) -> Vec<Action> {
        self.own_seqno = self.own_seqno.next();
        let rreq_id = self.next_rreq_id;
        self.next_rreq_id += 1;
        self.rreq_seen.insert((self.me, rreq_id));
        let dest_seqno_known = self.routing_table.get(&dest).map(|e| e.dest_seqno);
        let origin_seqno = self.own_seqno;
        let me = self.me;
        let window = self.params.accept_window_ms;
        let p = self.pending.get_mut(&dest).expect("flood without pending request");
        p.flooded_at = now;
        p.best = None;
        let attempt = p.attempt;
        let msg = Rreq {
            origin: me,
            rreq_id,
            dest,
            origin_seqno,
            dest_seqno_known,
            hop_count: 0,
            excluded: p.excluded.clone(),
        };
        vec![
            Action::Broadcast(ControlMessage::Rreq(msg)),
            Action::SetTimer(TimerKind::DiscoveryDeadline { dest, attempt }, now + window),
        ]
    }

    /// Starts (or merges into) a request that already knows some nodes to
    /// avoid — used after link breaks and activation refusals.
    fn reoriginate(
        &mut self,
        dest: NodeId,
        extra_excluded: BTreeSet<NodeId>,
        was_rejected: bool,
        now: SimTime,
    ) -> Vec<Action> {
        if let Some(p) = self.pending.get_mut(&dest) {
            p.excluded.extend(extra_excluded);
            p.rejected |= was_rejected;
            return Vec::new(); // a request is already running; let it finish
        }
        self.failed.remove(&dest);
        self.pending.insert(
            dest,
            PendingDiscovery {
                dest,
                attempt: 1,
                excluded: extra_excluded,
                started_at: now,
                flooded_at: now,
                best: None,
                rejected: was_rejected,
            },
        );
        self.flood_rreq(dest, now)
    }

    /// Window close for one attempt: admit, retry or give up.
    fn close_discovery(
        &mut self,
        dest: NodeId,
        attempt: u32,
        now: SimTime,
        ctx: &ProtocolCtx,
    ) -> Vec<Action> {
        let max_attempts = self.params.rreq_retries + 1;
        let me = self.me;
        let own_index = self.own_index();
        let best = match self.pending.get(&dest) {
            Some(p) if p.attempt == attempt => p.best.clone(),
            _ => return Vec::new(), // stale deadline
        };

        match best {
            Some(reply) => {
                let mut full_indices = Vec::with_capacity(reply.indices.len() + 1);
                full_indices.push((me, own_index));
                full_indices.extend(reply.indices.iter().copied());
                let decision = match ctx.protocol {
                    Protocol::Baseline => AdmissionDecision::Admit,
                    Protocol::Ci => admission_check(&full_indices, ctx.limits),
                };
                match decision {
                    AdmissionDecision::Admit => {
                        self.pending.remove(&dest);
                        self.commit_route(dest, reply, now)
                    }
                    AdmissionDecision::Reject { violators } => {
                        let mut actions = vec![Action::RejectRoute {
                            dest,
                            violators: violators.clone(),
                        }];
                        let p = self.pending.get_mut(&dest).expect("checked above");
                        p.rejected = true;
                        // The endpoints can never be routed around, so they
                        // are not added to the avoidance set.
                        p.excluded
                            .extend(violators.into_iter().filter(|v| *v != me && *v != dest));
                        if p.attempt < max_attempts {
                            p.attempt += 1;
                            actions.extend(self.flood_rreq(dest, now));
                        } else {
                            actions.extend(self.fail_discovery(dest, now));
                        }
                        actions
                    }
                }
            }
            None => {
                let p = self.pending.get_mut(&dest).expect("checked above");
                if p.attempt < max_attempts {
                    p.attempt += 1;
                    let retry_at = now.max(p.flooded_at + self.params.rreq_retry_wait_ms);
                    let attempt = p.attempt;
                    vec![Action::SetTimer(TimerKind::DiscoveryRetry { dest, attempt }, retry_at)]
                } else {
                    self.fail_discovery(dest, now)
                }
            }
        }
    }

    /// Gives up on a request permanently and drops anything parked on it.
    fn fail_discovery(&mut self, dest: NodeId, _now: SimTime) -> Vec<Action> {
        let p = self.pending.remove(&dest).expect("failing an absent request");
        let reason = if p.rejected { FailReason::AdmissionRejected } else { FailReason::NoRoute };
        self.failed.insert(dest, reason);
        let mut actions = vec![Action::DiscoveryFailed { dest, reason }];
        if let Some(parked) = self.buffered.remove(&dest) {
            for pkt in parked {
                actions.push(Action::DropData(pkt, DropReason::NoRoute));
            }
        }
        actions
    }

    // ------------------------------------------------------------------
    // RREQ / RREP
    // ------------------------------------------------------------------

    pub fn handle_rreq(
        &mut self,
        from: NodeId,
        rreq: &Rreq,
        now: SimTime,
        ctx: &ProtocolCtx,
    ) -> Vec<Action> {
        if self.rreq_seen.contains((rreq.origin, rreq.rreq_id)) {
            return Vec::new();
        }
        if rreq.excluded.contains(&self.me) {
            return Vec::new();
        }
        self.rreq_seen.insert((rreq.origin, rreq.rreq_id));

        // Reverse path toward the requester, via whoever handed us the
        // first copy.
        self.install_route(
            rreq.origin,
            from,
            rreq.hop_count + 1,
            rreq.origin_seqno,
            now + self.params.active_route_timeout_ms,
        );

        if rreq.dest == self.me {
            // Answer with a freshness bump so the reply beats anything stale.
            if let Some(known) = rreq.dest_seqno_known {
                if known.newer_than(self.own_seqno) {
                    self.own_seqno = known;
                }
            }
            self.own_seqno = self.own_seqno.next();
            let reply = Rrep {
                origin: self.me,
                dest: rreq.origin,
                dest_seqno: self.own_seqno,
                hop_count: 0,
                lifetime: self.params.active_route_timeout_ms,
                path_indices: vec![(self.me, self.own_index())],
            };
            let next = self
                .routing_table
                .get(&rreq.origin)
                .map(|e| e.next_hop)
                .unwrap_or(from);
            return vec![Action::Unicast(next, ControlMessage::Rrep(reply))];
        }

        if self.params.early_prune
            && ctx.protocol == Protocol::Ci
            && !self.params.route_limit.admits(self.own_index())
        {
            return Vec::new(); // loaded relay refuses to extend the flood
        }

        let mut fwd = rreq.clone();
        fwd.hop_count += 1;
        vec![Action::Broadcast(ControlMessage::Rreq(fwd))]
    }

    pub fn handle_rrep(&mut self, from: NodeId, rrep: &Rrep, now: SimTime) -> Vec<Action> {
        if rrep.dest == self.me {
            // We asked for this route; collect the candidate until the
            // acceptance window closes.
            let Some(p) = self.pending.get_mut(&rrep.origin) else {
                return Vec::new(); // no matching request (late or duplicate)
            };
            if let Some(entry) = self.routing_table.get(&rrep.origin) {
                if entry.dest_seqno.newer_than(rrep.dest_seqno) {
                    return Vec::new(); // stale reply
                }
            }
            let hops = rrep.hop_count + 1;
            let mut path: Vec<NodeId> = Vec::with_capacity(rrep.path_indices.len() + 1);
            path.push(self.me);
            path.extend(rrep.path_indices.iter().rev().map(|(n, _)| *n));
            if !path_is_simple(&path) || path.last() != Some(&rrep.origin) {
                return Vec::new(); // malformed reply
            }
            let mut indices: Vec<(NodeId, u32)> = rrep.path_indices.clone();
            indices.reverse();
            let candidate = BestReply {
                arrived_at: now,
                hops,
                path,
                indices,
                dest_seqno: rrep.dest_seqno,
            };
            let better = match &p.best {
                None => true,
                // Earlier arrival wins; same-instant arrivals fall back to
                // hop count.
                Some(b) => candidate.arrived_at == b.arrived_at && candidate.hops < b.hops,
            };
            if better {
                p.best = Some(candidate);
            }
            return Vec::new();
        }

        // Relay on the reverse path.
        let Some(rev) = self.routing_table.get(&rrep.dest) else {
            return Vec::new(); // reverse path gone
        };
        if !rev.is_valid_at(now) {
            return Vec::new();
        }
        let rev_next = rev.next_hop;
        if let Some(existing) = self.routing_table.get(&rrep.origin) {
            if existing.dest_seqno.newer_than(rrep.dest_seqno) {
                return Vec::new(); // stale reply
            }
        }
        self.install_route(
            rrep.origin,
            from,
            rrep.hop_count + 1,
            rrep.dest_seqno,
            now + rrep.lifetime,
        );
        let mut fwd = rrep.clone();
        fwd.hop_count += 1;
        fwd.path_indices.push((self.me, self.own_index()));
        vec![Action::Unicast(rev_next, ControlMessage::Rrep(fwd))]
    }

    // ------------------------------------------------------------------
    // Commit / activation / teardown
    // ------------------------------------------------------------------

    /// Installs and announces an admitted route. The originator starts
    /// carrying immediately; everyone downstream learns via activation.
    fn commit_route(&mut self, dest: NodeId, reply: BestReply, now: SimTime) -> Vec<Action> {
        let serial = self.next_route_serial;
        self.next_route_serial += 1;
        let route = RouteId { origin: self.me, dest, serial };
        let next_hop = reply.path[1];
        let lifetime = self.params.active_route_timeout_ms;
        self.install_route(dest, next_hop, reply.hops, reply.dest_seqno, now + lifetime);
        self.carried.insert(
            route,
            CarriedRoute {
                path: reply.path.clone(),
                prev: None,
                next: Some(next_hop),
                last_refresh: now,
            },
        );
        let mut actions = vec![Action::EstablishRoute(route, reply.path.clone())];
        actions.extend(self.index_changed());
        actions.extend(self.emit_hello(now)); // advertise the new index at once
        actions.push(Action::Unicast(
            next_hop,
            ControlMessage::Activate(Activate {
                route,
                path: reply.path.clone(),
                dest_seqno: reply.dest_seqno,
                lifetime,
            }),
        ));
        actions.push(Action::SetTimer(TimerKind::RouteExpiry { route }, now + lifetime));
        // Flush whatever was parked while discovery ran.
        if let Some(parked) = self.buffered.remove(&dest) {
            for pkt in parked {
                actions.push(Action::SendData(next_hop, pkt));
            }
        }
        actions
    }

    pub fn handle_activate(
        &mut self,
        from: NodeId,
        act: &Activate,
        now: SimTime,
        ctx: &ProtocolCtx,
    ) -> Vec<Action> {
        let Some(pos) = act.path.iter().position(|n| *n == self.me) else {
            return Vec::new(); // not on this path
        };
        if pos == 0 || self.carried.contains_key(&act.route) {
            return Vec::new(); // origin activates locally; duplicates ignored
        }
        // Concurrent commits can race past the source-side check; a full
        // node refuses here and the origin rolls the route back.
        if ctx.protocol == Protocol::Ci && !self.params.route_limit.admits(self.own_index()) {
            let back = act.path[pos - 1];
            return vec![Action::Unicast(
                back,
                ControlMessage::Abort(Abort { route: act.route, refused_by: self.me }),
            )];
        }
        let prev = Some(act.path[pos - 1]);
        let next = act.path.get(pos + 1).copied();
        self.carried.insert(
            act.route,
            CarriedRoute { path: act.path.clone(), prev, next, last_refresh: now },
        );
        let mut actions = Vec::new();
        actions.extend(self.index_changed());
        actions.extend(self.emit_hello(now));
        if let Some(nx) = next {
            // Keep the forward entry fresh for the data that is about to flow.
            let hops = (act.path.len() - 1 - pos) as u32;
            self.install_route(act.route.dest, nx, hops, act.dest_seqno, now + act.lifetime);
            actions.push(Action::Unicast(nx, ControlMessage::Activate(act.clone())));
        }
        let _ = from;
        actions
    }

    pub fn handle_teardown(&mut self, _from: NodeId, td: &Teardown, _now: SimTime) -> Vec<Action> {
        let Some(c) = self.carried.remove(&td.route) else {
            return Vec::new(); // already gone: teardown is idempotent
        };
        let mut actions = vec![Action::RouteTorn(td.route, td.reason)];
        actions.extend(self.index_changed());
        if let Some(nx) = c.next {
            self.invalidate_route_via(td.route.dest, nx);
            if td.route.dest != self.me {
                actions.push(Action::Unicast(nx, ControlMessage::Teardown(td.clone())));
            }
        }
        actions
    }

    pub fn handle_abort(&mut self, _from: NodeId, abort: &Abort, now: SimTime) -> Vec<Action> {
        if self.me == abort.route.origin {
            let mut actions = Vec::new();
            if let Some(c) = self.carried.remove(&abort.route) {
                actions.push(Action::RouteTorn(abort.route, TearReason::Refused));
                actions.extend(self.index_changed());
                if let Some(nx) = c.next {
                    self.invalidate_route_via(abort.route.dest, nx);
                }
            }
            // The refusal is an admission rejection observed late; retry
            // around the refusing node.
            actions.push(Action::RejectRoute {
                dest: abort.route.dest,
                violators: vec![abort.refused_by],
            });
            let mut excluded = BTreeSet::new();
            if abort.refused_by != self.me && abort.refused_by != abort.route.dest {
                excluded.insert(abort.refused_by);
            }
            actions.extend(self.reoriginate(abort.route.dest, excluded, true, now));
            return actions;
        }
        let Some(c) = self.carried.remove(&abort.route) else {
            return Vec::new();
        };
        let mut actions = vec![Action::RouteTorn(abort.route, TearReason::Refused)];
        actions.extend(self.index_changed());
        if let Some(pv) = c.prev {
            actions.push(Action::Unicast(pv, ControlMessage::Abort(abort.clone())));
        }
        actions
    }

    /// Orderly release of a route this node originated.
    pub fn teardown_route(
        &mut self,
        route: RouteId,
        reason: TearReason,
        _now: SimTime,
    ) -> Result<Vec<Action>, UnknownRoute> {
        let c = self.carried.remove(&route).ok_or(UnknownRoute)?;
        let mut actions = vec![Action::RouteTorn(route, reason)];
        actions.extend(self.index_changed());
        if let Some(nx) = c.next {
            self.invalidate_route_via(route.dest, nx);
            actions.push(Action::Unicast(nx, ControlMessage::Teardown(Teardown { route, reason })));
        }
        Ok(actions)
    }

    /// Expiry timer body: re-arm if the route was refreshed, otherwise
    /// release it.
    fn check_route_expiry(&mut self, route: RouteId, now: SimTime) -> Vec<Action> {
        if !self.carried.contains_key(&route) {
            return Vec::new();
        }
        let expires_at = self
            .routing_table
            .get(&route.dest)
            .filter(|e| e.state == RouteState::Valid)
            .map(|e| e.expires_at)
            .unwrap_or(now);
        if expires_at > now {
            return vec![Action::SetTimer(TimerKind::RouteExpiry { route }, expires_at)];
        }
        self.teardown_route(route, TearReason::Expired, now).unwrap_or_default()
    }

    /// Lets go of carried routes whose refresh lease ran out (the teardown
    /// or error that should have reached us was lost).
    fn sweep_stale_carries(&mut self, now: SimTime) -> Vec<Action> {
        let lease = CARRY_LEASE_FACTOR * self.params.active_route_timeout_ms;
        let stale: Vec<RouteId> = self
            .carried
            .iter()
            .filter(|(id, c)| id.origin != self.me && now.saturating_sub(c.last_refresh) > lease)
            .map(|(id, _)| *id)
            .collect();
        let mut actions = Vec::new();
        for id in stale {
            self.carried.remove(&id);
            actions.push(Action::RouteTorn(id, TearReason::StaleCarry));
            actions.extend(self.index_changed());
        }
        actions
    }

    // ------------------------------------------------------------------
    // HELLO and liveness
    // ------------------------------------------------------------------

    pub fn emit_hello(&mut self, _now: SimTime) -> Vec<Action> {
        let idx = self.own_index();
        self.index_table.insert(self.me, idx);
        vec![Action::Broadcast(ControlMessage::Hello(Hello {
            sender: self.me,
            sender_seqno: self.own_seqno,
            connection_index: idx,
        }))]
    }

    pub fn handle_hello(&mut self, from: NodeId, hello: &Hello, now: SimTime) -> Vec<Action> {
        self.neighbors.insert(
            hello.sender,
            NeighborInfo { last_hello_at: now, last_seqno: hello.sender_seqno },
        );
        self.index_table.insert(hello.sender, hello.connection_index);
        let _ = from;
        Vec::new()
    }

    /// Sweeps the neighbor table; a silent neighbor breaks every route
    /// through it, locally and via an error broadcast.
    pub fn check_neighbor_liveness(&mut self, now: SimTime) -> Vec<Action> {
        let threshold = self.params.allowed_hello_loss as u64 * self.params.hello_interval_ms;
        let dead: Vec<NodeId> = self
            .neighbors
            .iter()
            .filter(|(_, info)| now.saturating_sub(info.last_hello_at) > threshold)
            .map(|(n, _)| *n)
            .collect();
        let mut actions = Vec::new();
        for gone in dead {
            self.neighbors.remove(&gone);
            self.index_table.remove(&gone);
            actions.push(Action::NeighborLost(gone));
            actions.extend(self.break_link(gone, now));
        }
        actions
    }

    /// Invalidates everything that depended on a vanished neighbor and
    /// reports the loss.
    fn break_link(&mut self, gone: NodeId, now: SimTime) -> Vec<Action> {
        let mut actions = Vec::new();
        let mut unreachable: BTreeMap<NodeId, SeqNo> = BTreeMap::new();

        for (dest, entry) in self.routing_table.iter_mut() {
            if entry.next_hop == gone && entry.state == RouteState::Valid {
                entry.state = RouteState::Broken;
                unreachable.insert(*dest, entry.dest_seqno);
            }
        }

        let affected: Vec<(RouteId, CarriedRoute)> = self
            .carried
            .iter()
            .filter(|(_, c)| c.next == Some(gone) || c.prev == Some(gone))
            .map(|(id, c)| (*id, c.clone()))
            .collect();
        let mut rediscover: Vec<NodeId> = Vec::new();
        for (id, c) in affected {
            self.carried.remove(&id);
            actions.push(Action::RouteTorn(id, TearReason::LinkBreak));
            actions.extend(self.index_changed());
            let lost_end = if c.next == Some(gone) { id.dest } else { id.origin };
            let seq = self
                .routing_table
                .get(&lost_end)
                .map(|e| e.dest_seqno)
                .unwrap_or(SeqNo(0));
            unreachable.entry(lost_end).or_insert(seq);
            if self.me == id.origin && c.next == Some(gone) {
                rediscover.push(id.dest);
            }
        }

        if !unreachable.is_empty() {
            actions.push(Action::Broadcast(ControlMessage::Rerr(Rerr {
                unreachable: unreachable.into_iter().collect(),
            })));
        }
        for dest in rediscover {
            if !self.failed.contains_key(&dest) {
                actions.extend(self.reoriginate(dest, BTreeSet::new(), false, now));
            }
        }
        actions
    }

    // ------------------------------------------------------------------
    // RERR
    // ------------------------------------------------------------------

    pub fn handle_rerr(&mut self, from: NodeId, rerr: &Rerr, now: SimTime) -> Vec<Action> {
        let named: BTreeMap<NodeId, SeqNo> = rerr.unreachable.iter().copied().collect();

        // Plain entries through the reporting neighbor go stale unless we
        // know something fresher.
        for (dest, seq) in &named {
            if let Some(entry) = self.routing_table.get_mut(dest) {
                if entry.next_hop == from
                    && entry.state == RouteState::Valid
                    && !entry.dest_seqno.newer_than(*seq)
                {
                    entry.state = RouteState::Broken;
                }
            }
        }

        // Carried routes through the reporter, in either direction.
        let affected: Vec<(RouteId, CarriedRoute)> = self
            .carried
            .iter()
            .filter(|(id, c)| {
                (c.next == Some(from) && named.contains_key(&id.dest))
                    || (c.prev == Some(from) && named.contains_key(&id.origin))
            })
            .map(|(id, c)| (*id, c.clone()))
            .collect();

        let mut actions = Vec::new();
        let mut relay: BTreeMap<NodeId, BTreeMap<NodeId, SeqNo>> = BTreeMap::new();
        let mut rediscover: Vec<NodeId> = Vec::new();
        for (id, c) in affected {
            self.carried.remove(&id);
            actions.push(Action::RouteTorn(id, TearReason::LinkBreak));
            actions.extend(self.index_changed());
            if c.next == Some(from) {
                // Break is downstream: pass the word toward the origin.
                let seq = named.get(&id.dest).copied().unwrap_or(SeqNo(0));
                if self.me == id.origin {
                    rediscover.push(id.dest);
                } else if let Some(pv) = c.prev {
                    relay.entry(pv).or_default().insert(id.dest, seq);
                }
            } else {
                // Break is upstream: pass the word toward the destination.
                let seq = named.get(&id.origin).copied().unwrap_or(SeqNo(0));
                if self.me != id.dest {
                    if let Some(nx) = c.next {
                        relay.entry(nx).or_default().insert(id.origin, seq);
                    }
                }
            }
        }

        for (target, list) in relay {
            actions.push(Action::Unicast(
                target,
                ControlMessage::Rerr(Rerr { unreachable: list.into_iter().collect() }),
            ));
        }
        for dest in rediscover {
            if !self.failed.contains_key(&dest) {
                actions.extend(self.reoriginate(dest, BTreeSet::new(), false, now));
            }
        }
        actions
    }

    // ------------------------------------------------------------------
    // Data plane
    // ------------------------------------------------------------------

    /// Handles a data packet, either locally generated (`from == None`) or
    /// received from a neighbor.
    pub fn handle_data(
        &mut self,
        pkt: DataPacket,
        from: Option<NodeId>,
        now: SimTime,
    ) -> Vec<Action> {
        if pkt.dst == self.me {
            self.refresh_carry(pkt.src, pkt.dst, now);
            return vec![Action::DeliverData(pkt)];
        }

        let route = self
            .routing_table
            .get(&pkt.dst)
            .filter(|e| e.is_valid_at(now))
            .map(|e| e.next_hop);
        if let Some(next_hop) = route {
            let lifetime = now + self.params.active_route_timeout_ms;
            if let Some(entry) = self.routing_table.get_mut(&pkt.dst) {
                entry.expires_at = entry.expires_at.max(lifetime);
            }
            self.refresh_carry(pkt.src, pkt.dst, now);
            return vec![Action::SendData(next_hop, pkt)];
        }

        if from.is_none() {
            // Locally generated and no usable route: park it behind a
            // discovery, unless this connection already gave up.
            if self.failed.contains_key(&pkt.dst) {
                return vec![Action::DropData(pkt, DropReason::NoRoute)];
            }
            let buffered = self.buffered.entry(pkt.dst).or_default();
            if buffered.len() >= self.params.buffer_max {
                return vec![Action::DropData(pkt, DropReason::BufferFull)];
            }
            buffered.push_back(pkt);
            match self.originate_discovery(pkt.dst, now) {
                Ok(actions) => actions,
                Err(DiscoveryError::AlreadyPending) => Vec::new(),
            }
        } else {
            // Midpath with no route: drop and let the upstream know.
            let mut actions = vec![Action::DropData(pkt, DropReason::NoRoute)];
            let recent = self
                .last_noroute_rerr
                .get(&pkt.dst)
                .is_some_and(|t| now.saturating_sub(*t) < self.params.hello_interval_ms);
            if !recent {
                self.last_noroute_rerr.insert(pkt.dst, now);
                let seq = self
                    .routing_table
                    .get(&pkt.dst)
                    .map(|e| e.dest_seqno)
                    .unwrap_or(SeqNo(0));
                actions.push(Action::Broadcast(ControlMessage::Rerr(Rerr {
                    unreachable: vec![(pkt.dst, seq)],
                })));
            }
            actions
        }
    }

    // ------------------------------------------------------------------
    // Internals
    // ------------------------------------------------------------------

    /// Installs or refreshes an entry when the news is at least as fresh.
    fn install_route(
        &mut self,
        dest: NodeId,
        next_hop: NodeId,
        hop_count: u32,
        dest_seqno: SeqNo,
        expires_at: SimTime,
    ) {
        match self.routing_table.get_mut(&dest) {
            Some(e) => {
                let fresher = dest_seqno.newer_than(e.dest_seqno);
                let same_but_better = dest_seqno == e.dest_seqno
                    && (e.state == RouteState::Broken || hop_count <= e.hop_count);
                if fresher || same_but_better {
                    e.next_hop = next_hop;
                    e.hop_count = hop_count;
                    e.dest_seqno = dest_seqno;
                    e.expires_at = e.expires_at.max(expires_at);
                    e.state = RouteState::Valid;
                }
            }
            None => {
                self.routing_table.insert(
                    dest,
                    RouteEntry {
                        destination: dest,
                        next_hop,
                        hop_count,
                        dest_seqno,
                        expires_at,
                        state: RouteState::Valid,
                    },
                );
            }
        }
    }

    fn invalidate_route_via(&mut self, dest: NodeId, next_hop: NodeId) {
        if let Some(e) = self.routing_table.get_mut(&dest) {
            if e.next_hop == next_hop {
                e.state = RouteState::Broken;
            }
        }
    }

    /// Touches the lease of carried routes matching a data packet's
    /// endpoints.
    fn refresh_carry(&mut self, src: NodeId, dst: NodeId, now: SimTime) {
        for (id, c) in self.carried.iter_mut() {
            if id.origin == src && id.dest == dst {
                c.last_refresh = now;
            }
        }
    }

    fn index_changed(&mut self) -> Vec<Action> {
        let idx = self.own_index();
        self.index_table.insert(self.me, idx);
        vec![Action::IndexChanged(idx)]
    }

    /// Terminal failure state of a connection request toward `dest`.
    pub fn failure_of(&self, dest: NodeId) -> Option<FailReason> {
        self.failed.get(&dest).copied()
    }
}
