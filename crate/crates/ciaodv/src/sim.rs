//! Deterministic discrete-event engine.
//!
//! The engine owns the clock, the radio medium, per-node forwarding queues
//! and the run trace; protocol behavior lives entirely in [`crate::node`].
//! Determinism rests on three rules: events are ordered by `(time,
//! scheduling sequence)`, every map iterated during a step is ordered, and
//! all randomness comes from one seeded stream drawn in a fixed order.
//!
//! The engine also keeps an omniscient registry of established routes and
//! cross-checks the protocol against it while running: per-node limits on
//! every index change, flood dedup, loop freedom of committed paths, and —
//! at instants where no route control is in flight — agreement between
//! every node's connection index and the registry. Violations are
//! collected, never panicked, so tests can assert on them.

use crate::model::*;
use crate::node::{Action, NodeState, ProtocolCtx, TimerKind};
use crate::scenario::{distance, Flow, MobilityModel, ScenarioSpec};
use crate::trace::{SimTrace, TraceBody, TraceHeader, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

#[derive(Debug, Clone, PartialEq)]
enum Event {
    /// Control message arriving at `to`.
    Control { from: NodeId, to: NodeId, msg: ControlMessage },
    /// Data packet arriving at `to`.
    Data { from: NodeId, to: NodeId, pkt: DataPacket },
    Timer { node: NodeId, kind: TimerKind },
    /// Creation of packet `k` of flow `flow`.
    Gen { flow: usize, k: u64 },
    /// Head-of-line transmission completes at `node`'s forwarding queue.
    QueueService { node: NodeId },
    MobilityStep,
    Depart { node: NodeId },
}

#[derive(Debug, Clone)]
struct Scheduled {
    at: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Debug)]
struct NodeQueue {
    items: VecDeque<(NodeId, DataPacket)>,
    busy: bool,
    svc_ms: SimTime,
}

/// Per-node random-waypoint walk state.
#[derive(Debug, Clone)]
struct Waypoint {
    target: (f64, f64),
    speed_mps: f64,
}

/// One simulation run over a scenario.
pub struct Simulation {
    pub protocol: Protocol,
    pub seed: u64,
    clock: SimTime,
    duration: SimTime,
    heap: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,
    rng: ChaCha8Rng,
    nodes: BTreeMap<NodeId, NodeState>,
    positions: BTreeMap<NodeId, (f64, f64)>,
    departed: BTreeSet<NodeId>,
    queues: BTreeMap<NodeId, NodeQueue>,
    queue_cap: usize,
    limits: BTreeMap<NodeId, RouteLimit>,
    range: f64,
    loss_rate: f64,
    latency_ms: SimTime,
    flows: Vec<Flow>,
    mobility: Option<(f64, f64, f64, SimTime)>, // width, height, max_speed, step
    waypoints: BTreeMap<NodeId, Waypoint>,
    trace: SimTrace,
    // Omniscient bookkeeping for invariant checking.
    registry: BTreeMap<RouteId, Vec<NodeId>>,
    compromised: BTreeSet<RouteId>,
    in_flight_route_ctl: u64,
    index_dirty: bool,
    index_checks: u64,
    rreq_broadcasts: BTreeMap<(NodeId, NodeId, u32), u32>,
    violations: Vec<String>,
}

impl Simulation {
    pub fn new(spec: &ScenarioSpec, protocol: Protocol, seed: u64) -> Simulation {
        let params = [
            ("range".to_string(), spec.medium.range.to_string()),
            ("loss_rate".to_string(), spec.medium.loss_rate.to_string()),
            ("per_hop_latency_ms".to_string(), spec.medium.per_hop_latency_ms.to_string()),
            ("hello_interval_ms".to_string(), spec.params.hello_interval_ms.to_string()),
            ("active_route_timeout_ms".to_string(), spec.params.active_route_timeout_ms.to_string()),
            ("accept_window_ms".to_string(), spec.params.accept_window_ms.to_string()),
            ("rreq_retries".to_string(), spec.params.rreq_retries.to_string()),
            ("route_limit".to_string(), spec.params.route_limit.to_string()),
            ("capacity_pps".to_string(), spec.params.capacity_pps.to_string()),
        ];
        let mut sim = Simulation {
            protocol,
            seed,
            clock: 0,
            duration: spec.params.duration_ms,
            heap: BinaryHeap::new(),
            next_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: BTreeMap::new(),
            positions: BTreeMap::new(),
            departed: BTreeSet::new(),
            queues: BTreeMap::new(),
            queue_cap: spec.params.queue_len_max,
            limits: spec.limits(),
            range: spec.medium.range,
            loss_rate: spec.medium.loss_rate,
            latency_ms: spec.medium.per_hop_latency_ms,
            flows: spec.flows.clone(),
            mobility: match spec.mobility.model {
                MobilityModel::Static => None,
                MobilityModel::RandomWaypoint { width, height, max_speed_mps, step_ms } => {
                    Some((width, height, max_speed_mps, step_ms))
                }
            },
            waypoints: BTreeMap::new(),
            trace: SimTrace {
                header: TraceHeader {
                    scenario_hash: spec.hash(),
                    seed,
                    protocol,
                    duration_ms: spec.params.duration_ms,
                    params: params.to_vec(),
                },
                labels: spec.labels.clone(),
                records: Vec::new(),
            },
            registry: BTreeMap::new(),
            compromised: BTreeSet::new(),
            in_flight_route_ctl: 0,
            index_dirty: false,
            index_checks: 0,
            rreq_broadcasts: BTreeMap::new(),
            violations: Vec::new(),
        };

        for n in &spec.nodes {
            let mut state = NodeState::new(n.id, spec.node_params(n));
            if let Some(base) = spec.index_fixture.get(&n.id) {
                state.index_base = *base;
                let me = n.id;
                let own = state.own_index();
                state.index_table.insert(me, own);
            }
            sim.positions.insert(n.id, (n.x, n.y));
            sim.queues.insert(
                n.id,
                NodeQueue {
                    items: VecDeque::new(),
                    busy: false,
                    svc_ms: (1000 / n.capacity_pps as u64).max(1),
                },
            );
            sim.record(n.id, TraceBody::Init { x: n.x, y: n.y });
            let startup = state.startup_actions();
            sim.nodes.insert(n.id, state);
            sim.apply_actions(n.id, startup);
        }

        for (i, f) in spec.flows.iter().enumerate() {
            let at = f.packet_time(0);
            if at <= sim.duration {
                sim.schedule(at, Event::Gen { flow: i, k: 0 });
            }
        }
        for (node, at) in &spec.mobility.departures {
            sim.schedule(*at, Event::Depart { node: *node });
        }
        if let Some((w, h, max_speed, step)) = sim.mobility {
            let ids: Vec<NodeId> = sim.nodes.keys().copied().collect();
            for id in ids {
                let wp = sim.draw_waypoint(w, h, max_speed);
                sim.waypoints.insert(id, wp);
            }
            sim.schedule(step, Event::MobilityStep);
        }
        sim
    }

    /// Runs every event up to and including the configured duration.
    pub fn run(&mut self) {
        while let Some(Reverse(head)) = self.heap.peek() {
            if head.at > self.duration {
                break;
            }
            let s = self.heap.pop().unwrap().0;
            debug_assert!(s.at >= self.clock, "event scheduled into the past");
            self.clock = s.at;
            self.dispatch(s.event);
            self.maybe_check_index_truth();
        }
    }

    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SimTrace {
        self.trace
    }

    /// Invariant breaches observed during the run; empty on a sound run.
    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    /// How many quiescent instants had their indices compared against the
    /// omniscient registry during the run.
    pub fn index_checks(&self) -> u64 {
        self.index_checks
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[&id]
    }

    /// Data packets still alive inside the system: queued, in the air, or
    /// parked behind a discovery. Offered traffic always equals delivered
    /// plus dropped plus this.
    pub fn residual_data(&self) -> usize {
        let queued: usize = self
            .queues
            .iter()
            .filter(|(id, _)| !self.departed.contains(id))
            .map(|(_, q)| q.items.len())
            .sum();
        let flying = self
            .heap
            .iter()
            .filter(|Reverse(s)| matches!(s.event, Event::Data { .. }))
            .count();
        let parked: usize = self
            .nodes
            .iter()
            .filter(|(id, _)| !self.departed.contains(id))
            .map(|(_, n)| n.buffered_count())
            .sum();
        queued + flying + parked
    }

    // ------------------------------------------------------------------
    // Event dispatch
    // ------------------------------------------------------------------

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::Control { from, to, msg } => {
                if is_route_ctl(&msg) {
                    self.in_flight_route_ctl -= 1;
                }
                if self.departed.contains(&to) {
                    self.compromise_for_lost(&msg, to);
                    self.record(from, TraceBody::Lost { to, msg });
                    return;
                }
                self.record(to, TraceBody::Recv { from, msg: msg.clone() });
                let now = self.clock;
                let ctx = ProtocolCtx { protocol: self.protocol, limits: &self.limits };
                let actions =
                    self.nodes.get_mut(&to).unwrap().handle_message(from, &msg, now, &ctx);
                self.apply_actions(to, actions);
            }
            Event::Data { from, to, pkt } => {
                if self.departed.contains(&to) {
                    self.record(from, TraceBody::Drop { reason: DropReason::LinkOut, pkt });
                    return;
                }
                self.record(to, TraceBody::RecvData { from, pkt });
                let now = self.clock;
                let actions = self.nodes.get_mut(&to).unwrap().handle_data(pkt, Some(from), now);
                self.apply_actions(to, actions);
            }
            Event::Timer { node, kind } => {
                if self.departed.contains(&node) {
                    return;
                }
                let now = self.clock;
                let ctx = ProtocolCtx { protocol: self.protocol, limits: &self.limits };
                let actions = self.nodes.get_mut(&node).unwrap().handle_timer(kind, now, &ctx);
                self.apply_actions(node, actions);
            }
            Event::Gen { flow, k } => {
                let f = self.flows[flow].clone();
                let next = f.packet_time(k + 1);
                if next <= self.duration {
                    self.schedule(next, Event::Gen { flow, k: k + 1 });
                }
                if self.departed.contains(&f.src) {
                    return;
                }
                let pkt = DataPacket {
                    flow: flow as u16,
                    src: f.src,
                    dst: f.dst,
                    seq: k,
                    created_at: self.clock,
                    payload_bytes: f.payload_bytes,
                };
                self.record(f.src, TraceBody::Gen { pkt });
                let now = self.clock;
                let actions = self.nodes.get_mut(&f.src).unwrap().handle_data(pkt, None, now);
                self.apply_actions(f.src, actions);
            }
            Event::QueueService { node } => {
                if self.departed.contains(&node) {
                    return;
                }
                let (to, pkt) = {
                    let q = self.queues.get_mut(&node).unwrap();
                    match q.items.pop_front() {
                        Some(head) => head,
                        None => {
                            q.busy = false;
                            return;
                        }
                    }
                };
                self.record(node, TraceBody::SendData { to, pkt });
                self.transmit_data(node, to, pkt);
                let q = self.queues.get_mut(&node).unwrap();
                if q.items.is_empty() {
                    q.busy = false;
                } else {
                    let at = self.clock + q.svc_ms;
                    self.schedule(at, Event::QueueService { node });
                }
            }
            Event::MobilityStep => self.step_mobility(),
            Event::Depart { node } => self.depart(node),
        }
    }

    fn apply_actions(&mut self, node: NodeId, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Broadcast(msg) => self.transmit_broadcast(node, msg),
                Action::Unicast(to, msg) => self.transmit_unicast(node, to, msg),
                Action::SendData(to, pkt) => self.enqueue_data(node, to, pkt),
                Action::EstablishRoute(route, path) => {
                    self.record(node, TraceBody::Establish { route, path: path.clone() });
                    if !path_is_simple(&path)
                        || path.first() != Some(&route.origin)
                        || path.last() != Some(&route.dest)
                    {
                        self.violation(format!(
                            "established route {route:?} has a malformed path {path:?}"
                        ));
                    }
                    self.registry.insert(route, path);
                    self.index_dirty = true;
                }
                Action::RejectRoute { dest, violators } => {
                    self.record(node, TraceBody::Reject { dest, violators });
                }
                Action::DiscoveryFailed { dest, reason } => {
                    self.record(node, TraceBody::Fail { dest, reason });
                }
                Action::DeliverData(pkt) => self.record(node, TraceBody::Deliver { pkt }),
                Action::DropData(pkt, reason) => {
                    self.record(node, TraceBody::Drop { reason, pkt });
                }
                Action::SetTimer(kind, at) => {
                    let at = at.max(self.clock);
                    self.schedule(at, Event::Timer { node, kind });
                }
                Action::IndexChanged(value) => {
                    self.record(node, TraceBody::Index { value });
                    self.index_dirty = true;
                    if self.protocol == Protocol::Ci {
                        let limit =
                            self.limits.get(&node).copied().unwrap_or(RouteLimit::Unlimited);
                        if !limit.holds(value) {
                            self.violation(format!(
                                "{node} carries index {value}, beyond its limit {limit}"
                            ));
                        }
                    }
                }
                Action::RouteTorn(route, reason) => {
                    self.record(node, TraceBody::TornDown { route, reason });
                    self.compromised.insert(route);
                    self.index_dirty = true;
                    if node == route.origin {
                        self.registry.remove(&route);
                    }
                }
                Action::NeighborLost(neighbor) => {
                    self.record(node, TraceBody::NeighborLost { neighbor });
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Medium
    // ------------------------------------------------------------------

    fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        distance(self.positions[&a], self.positions[&b]) <= self.range
    }

    fn transmit_broadcast(&mut self, from: NodeId, msg: ControlMessage) {
        if self.departed.contains(&from) {
            return;
        }
        if let ControlMessage::Rreq(r) = &msg {
            let count = self
                .rreq_broadcasts
                .entry((from, r.origin, r.rreq_id))
                .or_insert(0);
            *count += 1;
            if *count > 1 {
                self.violation(format!(
                    "{from} flooded request ({}, {}) more than once",
                    r.origin, r.rreq_id
                ));
            }
        }
        self.record(from, TraceBody::Send { to: None, msg: msg.clone() });
        let recipients: Vec<NodeId> = self
            .nodes
            .keys()
            .copied()
            .filter(|id| *id != from && !self.departed.contains(id) && self.in_range(from, *id))
            .collect();
        for to in recipients {
            self.propagate(from, to, msg.clone());
        }
    }

    fn transmit_unicast(&mut self, from: NodeId, to: NodeId, msg: ControlMessage) {
        if self.departed.contains(&from) {
            return;
        }
        self.record(from, TraceBody::Send { to: Some(to), msg: msg.clone() });
        if self.departed.contains(&to) || !self.in_range(from, to) {
            self.compromise_for_lost(&msg, to);
            self.record(from, TraceBody::Lost { to, msg });
            return;
        }
        self.propagate(from, to, msg);
    }

    /// Final leg of any control transmission: the loss draw and the flight.
    fn propagate(&mut self, from: NodeId, to: NodeId, msg: ControlMessage) {
        if self.loss_rate > 0.0 && self.rng.gen::<f64>() < self.loss_rate {
            self.compromise_for_lost(&msg, to);
            self.record(from, TraceBody::Lost { to, msg });
            return;
        }
        if is_route_ctl(&msg) {
            self.in_flight_route_ctl += 1;
        }
        let at = self.clock + self.latency_ms;
        self.schedule(at, Event::Control { from, to, msg });
    }

    fn enqueue_data(&mut self, node: NodeId, to: NodeId, pkt: DataPacket) {
        if self.departed.contains(&node) {
            return;
        }
        let q = self.queues.get_mut(&node).unwrap();
        if q.items.len() >= self.queue_cap {
            self.record(node, TraceBody::Drop { reason: DropReason::QueueFull, pkt });
            return;
        }
        q.items.push_back((to, pkt));
        if !q.busy {
            q.busy = true;
            let at = self.clock + q.svc_ms;
            self.schedule(at, Event::QueueService { node });
        }
    }

    fn transmit_data(&mut self, from: NodeId, to: NodeId, pkt: DataPacket) {
        if self.departed.contains(&to) || !self.in_range(from, to) {
            self.record(from, TraceBody::Drop { reason: DropReason::LinkOut, pkt });
            return;
        }
        if self.loss_rate > 0.0 && self.rng.gen::<f64>() < self.loss_rate {
            self.record(from, TraceBody::Drop { reason: DropReason::MediumLoss, pkt });
            return;
        }
        let at = self.clock + self.latency_ms;
        self.schedule(at, Event::Data { from, to, pkt });
    }

    // ------------------------------------------------------------------
    // Mobility and departures
    // ------------------------------------------------------------------

    fn draw_waypoint(&mut self, w: f64, h: f64, max_speed: f64) -> Waypoint {
        Waypoint {
            target: (self.rng.gen_range(0.0..w), self.rng.gen_range(0.0..h)),
            speed_mps: self.rng.gen_range(0.0..max_speed),
        }
    }

    fn step_mobility(&mut self) {
        let Some((w, h, max_speed, step)) = self.mobility else {
            return;
        };
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            if self.departed.contains(&id) {
                continue;
            }
            let wp = self.waypoints[&id].clone();
            let pos = self.positions[&id];
            let step_len = wp.speed_mps * step as f64 / 1000.0;
            let remaining = distance(pos, wp.target);
            if remaining <= step_len {
                self.positions.insert(id, wp.target);
                let next = self.draw_waypoint(w, h, max_speed);
                self.waypoints.insert(id, next);
            } else if remaining > 0.0 {
                let frac = step_len / remaining;
                let next = (
                    pos.0 + (wp.target.0 - pos.0) * frac,
                    pos.1 + (wp.target.1 - pos.1) * frac,
                );
                self.positions.insert(id, next);
            }
        }
        let at = self.clock + step;
        self.schedule(at, Event::MobilityStep);
    }

    fn depart(&mut self, node: NodeId) {
        if !self.departed.insert(node) {
            return;
        }
        // Whatever the node was holding dies with it.
        let held: Vec<DataPacket> = {
            let q = self.queues.get_mut(&node).unwrap();
            q.busy = false;
            q.items.drain(..).map(|(_, pkt)| pkt).collect()
        };
        for pkt in held {
            self.record(node, TraceBody::Drop { reason: DropReason::LinkOut, pkt });
        }
        let parked = self.nodes.get_mut(&node).unwrap().take_buffered();
        for pkt in parked {
            self.record(node, TraceBody::Drop { reason: DropReason::LinkOut, pkt });
        }
        // Routes it originated can never be torn down by their origin now.
        let orphaned: Vec<RouteId> =
            self.registry.keys().copied().filter(|r| r.origin == node).collect();
        for rid in orphaned {
            self.registry.remove(&rid);
            self.compromised.insert(rid);
        }
        self.index_dirty = true;
    }

    // ------------------------------------------------------------------
    // Invariant checking
    // ------------------------------------------------------------------

    fn violation(&mut self, msg: String) {
        self.violations.push(format!("{}ms: {msg}", self.clock));
    }

    fn compromise_for_lost(&mut self, msg: &ControlMessage, intended: NodeId) {
        match msg {
            ControlMessage::Activate(a) => {
                self.compromised.insert(a.route);
            }
            ControlMessage::Teardown(t) => {
                self.compromised.insert(t.route);
            }
            ControlMessage::Abort(a) => {
                self.compromised.insert(a.route);
            }
            ControlMessage::Rerr(_) => {
                // The receiver may now fail to release routes it carries.
                let carried: Vec<RouteId> = self
                    .nodes
                    .get(&intended)
                    .map(|n| n.carried.keys().copied().collect())
                    .unwrap_or_default();
                self.compromised.extend(carried);
            }
            _ => {}
        }
    }

    /// Drops compromise marks for routes that no longer exist anywhere.
    fn cleanup_compromised(&mut self) {
        let registry = &self.registry;
        let nodes = &self.nodes;
        let departed = &self.departed;
        self.compromised.retain(|rid| {
            registry.contains_key(rid)
                || nodes
                    .iter()
                    .any(|(id, n)| !departed.contains(id) && n.carried.contains_key(rid))
        });
    }

    /// When no route control is in flight and no route is in a known
    /// transitional state, every node's connection index must equal the
    /// number of registered routes whose path contains it (plus its
    /// configured standing load).
    fn maybe_check_index_truth(&mut self) {
        if !self.index_dirty || self.in_flight_route_ctl > 0 {
            return;
        }
        self.cleanup_compromised();
        if !self.compromised.is_empty() {
            return;
        }
        self.index_checks += 1;
        let mut expected: BTreeMap<NodeId, u32> =
            self.nodes.iter().map(|(id, n)| (*id, n.index_base)).collect();
        for path in self.registry.values() {
            for n in path {
                *expected.get_mut(n).expect("path nodes exist") += 1;
            }
        }
        let mut mismatches = Vec::new();
        for (id, node) in &self.nodes {
            if self.departed.contains(id) {
                continue;
            }
            let want = expected[id];
            let got = node.own_index();
            if want != got {
                mismatches.push(format!("{id} carries {got}, expected {want}"));
            }
        }
        for m in mismatches {
            self.violation(format!("index out of step at quiescence: {m}"));
        }
        self.index_dirty = false;
    }

    // ------------------------------------------------------------------
    // Plumbing
    // ------------------------------------------------------------------

    fn schedule(&mut self, at: SimTime, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Scheduled { at, seq, event }));
    }

    fn record(&mut self, node: NodeId, body: TraceBody) {
        self.trace.records.push(TraceRecord { at: self.clock, node, body });
    }
}

fn is_route_ctl(msg: &ControlMessage) -> bool {
    matches!(
        msg,
        ControlMessage::Activate(_)
            | ControlMessage::Teardown(_)
            | ControlMessage::Abort(_)
            | ControlMessage::Rerr(_)
    )
}
