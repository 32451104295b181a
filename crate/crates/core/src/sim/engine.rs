//! Single-threaded discrete-event engine.
//!
//! Events sharing a timestamp are processed in a fixed category order:
//! transmission completions, frame-boundary promotions, transmission starts,
//! then packet arrivals. Within a category lower keys (packet or link
//! index) go first, so a scenario always replays the same way.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use thiserror::Error;

use crate::buffering::BudgetTable;
use crate::framing::{ClassSet, FrameClock, FramingError, Nanos};
use crate::ids::{ClassId, ConnectionId, LinkId, NodeId, PacketId};
use crate::metrics::{
    AdmissionEcho, ClassPortReport, DropReason, Metrics, PacketFate, PacketRecord, PortReport,
};
use crate::scheduling::{EnqueueError, OutputPort, Packet};
use crate::sim::topology::{Topology, TopologyError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Framing(#[from] FramingError),
    #[error("connection {conn} uses unknown class {class}")]
    UnknownClass { conn: ConnectionId, class: ClassId },
    #[error("connection {0} defined twice")]
    DuplicateConnection(ConnectionId),
    #[error("injection for unknown connection {0}")]
    UnknownConnection(ConnectionId),
    #[error("packet of {size} bits exceeds the maximum packet size {max}")]
    PacketTooLarge { size: u64, max: u64 },
    #[error("packet size must be positive")]
    EmptyPacket,
}

/// Static route of one connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub connection: ConnectionId,
    pub class: ClassId,
    pub path: Vec<LinkId>,
    pub deadline: Nanos,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub classes: ClassSet,
    pub max_packet_bits: u64,
    pub topology: Topology,
    /// Departing-clock phase per (link, class); missing entries are 0.
    pub phases: BTreeMap<(LinkId, ClassId), Nanos>,
    /// Queue budgets; `None` leaves every queue unbounded.
    pub budgets: Option<BudgetTable>,
    pub routes: Vec<Route>,
    pub horizon: Nanos,
    pub warm_up: Nanos,
    pub drop_late: bool,
    pub record_trace: bool,
    pub admission: AdmissionEcho,
}

/// A packet entering the network at the first node of its route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Injection {
    pub time: Nanos,
    pub connection: ConnectionId,
    pub size_bits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceKind {
    /// Transmission finished on `link`.
    TxEnd,
    /// Packet moved to the eligible queue of `link`.
    Eligible,
    TxStart,
    /// Packet reached `node`; `link` is the output link it is queued on.
    Arrive,
    Deliver,
    Drop(DropReasonKey),
}

/// [`DropReason`] with an ordering, for use in trace keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReasonKey {
    Overflow,
    Late,
}

impl From<DropReason> for DropReasonKey {
    fn from(r: DropReason) -> Self {
        match r {
            DropReason::Overflow => DropReasonKey::Overflow,
            DropReason::Late => DropReasonKey::Late,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TraceEvent {
    pub time: Nanos,
    pub kind: TraceKind,
    pub packet: PacketId,
    pub node: NodeId,
    pub link: Option<LinkId>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub metrics: Metrics,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug)]
enum EventKind {
    TransmitComplete { port: usize },
    Promote { port: usize },
    StartCheck { port: usize },
    Arrival { packet: Packet },
}

impl EventKind {
    fn category(&self) -> u8 {
        match self {
            EventKind::TransmitComplete { .. } => 0,
            EventKind::Promote { .. } => 1,
            EventKind::StartCheck { .. } => 2,
            EventKind::Arrival { .. } => 3,
        }
    }

    fn key(&self) -> u64 {
        match self {
            EventKind::TransmitComplete { port }
            | EventKind::Promote { port }
            | EventKind::StartCheck { port } => *port as u64,
            EventKind::Arrival { packet } => packet.id.0,
        }
    }
}

#[derive(Debug)]
struct Scheduled {
    time: Nanos,
    category: u8,
    key: u64,
    seq: u64,
    kind: EventKind,
}

impl Scheduled {
    fn order(&self) -> (Nanos, u8, u64, u64) {
        (self.time, self.category, self.key, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.order() == other.order()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.order().cmp(&self.order())
    }
}

struct RouteState {
    route: Route,
    /// Port index of every link on the path.
    ports: Vec<usize>,
    source: NodeId,
}

pub struct Simulator {
    config: SimConfig,
    ports: Vec<OutputPort>,
    latencies: Vec<Nanos>,
    dsts: Vec<NodeId>,
    routes: Vec<RouteState>,
    route_index: BTreeMap<ConnectionId, usize>,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    next_packet: u64,
    pending_promote: HashSet<(usize, Nanos)>,
    pending_check: HashSet<(usize, Nanos)>,
    finished: Vec<PacketRecord>,
    trace: Vec<TraceEvent>,
    now: Nanos,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let mut ports = Vec::new();
        let mut latencies = Vec::new();
        let mut dsts = Vec::new();
        let mut port_of = BTreeMap::new();
        for link in config.topology.links() {
            let clocks = config
                .classes
                .iter()
                .map(|c| {
                    let phase = config.phases.get(&(link.id, c.id)).copied().unwrap_or(0);
                    FrameClock::new(c.frame, phase).map(|clock| (c.id, clock))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut port = OutputPort::new(link.id, link.src, link.capacity_bps, clocks);
            if let Some(budgets) = &config.budgets {
                for c in config.classes.iter() {
                    // a (link, class) pair without a budget carries no load
                    let bits = budgets.get(link.id, c.id).map_or(0, |b| b.budget_bits);
                    port.set_budget(c.id, bits);
                }
            }
            port_of.insert(link.id, ports.len());
            ports.push(port);
            latencies.push(link.latency);
            dsts.push(link.dst);
        }
        let mut routes = Vec::new();
        let mut route_index = BTreeMap::new();
        for route in &config.routes {
            if config.classes.get(route.class).is_none() {
                return Err(SimError::UnknownClass {
                    conn: route.connection,
                    class: route.class,
                });
            }
            config.topology.validate_path(&route.path)?;
            if route_index.insert(route.connection, routes.len()).is_some() {
                return Err(SimError::DuplicateConnection(route.connection));
            }
            let source = config
                .topology
                .link(route.path[0])
                .expect("validated path")
                .src;
            routes.push(RouteState {
                ports: route.path.iter().map(|l| port_of[l]).collect(),
                route: route.clone(),
                source,
            });
        }
        Ok(Self {
            config,
            ports,
            latencies,
            dsts,
            routes,
            route_index,
            queue: BinaryHeap::new(),
            seq: 0,
            next_packet: 0,
            pending_promote: HashSet::new(),
            pending_check: HashSet::new(),
            finished: Vec::new(),
            trace: Vec::new(),
            now: 0,
        })
    }

    /// Schedules a packet. Ids are assigned in injection order.
    pub fn inject(&mut self, inj: Injection) -> Result<PacketId, SimError> {
        let &r = self
            .route_index
            .get(&inj.connection)
            .ok_or(SimError::UnknownConnection(inj.connection))?;
        if inj.size_bits == 0 {
            return Err(SimError::EmptyPacket);
        }
        if inj.size_bits > self.config.max_packet_bits {
            return Err(SimError::PacketTooLarge {
                size: inj.size_bits,
                max: self.config.max_packet_bits,
            });
        }
        let route = &self.routes[r].route;
        let id = PacketId(self.next_packet);
        self.next_packet += 1;
        let packet = Packet::new(
            id,
            route.class,
            inj.size_bits,
            route.connection,
            inj.time,
            route.deadline,
        );
        self.schedule(inj.time, EventKind::Arrival { packet });
        Ok(id)
    }

    pub fn run(mut self) -> SimOutput {
        while let Some(ev) = self.queue.pop() {
            if ev.time > self.config.horizon {
                self.queue.push(ev);
                break;
            }
            debug_assert!(ev.time >= self.now, "event scheduled in the past");
            self.now = ev.time;
            match ev.kind {
                EventKind::TransmitComplete { port } => self.on_complete(port),
                EventKind::Promote { port } => self.on_promote(port),
                EventKind::StartCheck { port } => self.on_start_check(port),
                EventKind::Arrival { packet } => self.on_arrival(packet),
            }
        }
        self.finish()
    }

    fn schedule(&mut self, time: Nanos, kind: EventKind) {
        let ev = Scheduled {
            time,
            category: kind.category(),
            key: kind.key(),
            seq: self.seq,
            kind,
        };
        self.seq += 1;
        self.queue.push(ev);
    }

    fn schedule_check(&mut self, port: usize, time: Nanos) {
        if self.pending_check.insert((port, time)) {
            self.schedule(time, EventKind::StartCheck { port });
        }
    }

    fn record(&mut self, kind: TraceKind, packet: PacketId, node: NodeId, link: Option<LinkId>) {
        if self.config.record_trace {
            self.trace.push(TraceEvent {
                time: self.now,
                kind,
                packet,
                node,
                link,
            });
        }
    }

    fn on_complete(&mut self, port: usize) {
        let now = self.now;
        let Some(packet) = self.ports[port].complete(now) else {
            return;
        };
        let link = self.ports[port].link();
        let node = self.ports[port].node();
        self.record(TraceKind::TxEnd, packet.id, node, Some(link));
        let at = now + self.latencies[port];
        self.schedule(at, EventKind::Arrival { packet });
        self.schedule_check(port, now);
    }

    fn on_promote(&mut self, port: usize) {
        let now = self.now;
        self.pending_promote.remove(&(port, now));
        let mut promoted = Vec::new();
        self.ports[port].promote_with(now, |p| promoted.push(p.id));
        let link = self.ports[port].link();
        let node = self.ports[port].node();
        for id in promoted {
            self.record(TraceKind::Eligible, id, node, Some(link));
        }
        self.schedule_check(port, now);
    }

    fn on_start_check(&mut self, port: usize) {
        let now = self.now;
        self.pending_check.remove(&(port, now));
        let Some(packet) = self.ports[port].select_next(now) else {
            return;
        };
        let id = packet.id;
        let completion = self.ports[port]
            .transmit(packet, now)
            .expect("selected packet on an idle port");
        let link = self.ports[port].link();
        let node = self.ports[port].node();
        self.record(TraceKind::TxStart, id, node, Some(link));
        self.schedule(completion, EventKind::TransmitComplete { port });
    }

    fn on_arrival(&mut self, mut packet: Packet) {
        let now = self.now;
        let r = self.route_index[&packet.connection];
        let hop = packet.hops.len();
        let node = if hop == 0 {
            self.routes[r].source
        } else {
            self.dsts[self.routes[r].ports[hop - 1]]
        };
        let late = packet.mark_late(now);
        if hop == self.routes[r].ports.len() {
            self.record(TraceKind::Deliver, packet.id, node, None);
            self.finish_packet(packet, PacketFate::Delivered { at: now });
            return;
        }
        let port = self.routes[r].ports[hop];
        let link = self.ports[port].link();
        if late && self.config.drop_late {
            self.record(
                TraceKind::Drop(DropReasonKey::Late),
                packet.id,
                node,
                Some(link),
            );
            self.finish_packet(
                packet,
                PacketFate::Dropped {
                    node,
                    reason: DropReason::Late,
                },
            );
            return;
        }
        self.record(TraceKind::Arrive, packet.id, node, Some(link));
        match self.ports[port].enqueue(packet, now) {
            Ok(eligible) => {
                if self.pending_promote.insert((port, eligible)) {
                    self.schedule(eligible, EventKind::Promote { port });
                }
            }
            Err(EnqueueError::Overflow { packet, .. }) => {
                self.record(
                    TraceKind::Drop(DropReasonKey::Overflow),
                    packet.id,
                    node,
                    Some(link),
                );
                self.finish_packet(
                    *packet,
                    PacketFate::Dropped {
                        node,
                        reason: DropReason::Overflow,
                    },
                );
            }
            Err(e @ EnqueueError::UnknownClass { .. }) => {
                unreachable!("every port carries every class: {e}")
            }
        }
    }

    fn finish_packet(&mut self, packet: Packet, fate: PacketFate) {
        let r = self.route_index[&packet.connection];
        self.finished.push(PacketRecord {
            id: packet.id,
            connection: packet.connection,
            class: packet.class,
            path_len: self.routes[r].ports.len(),
            created: packet.created,
            deadline: packet.deadline,
            late: packet.late,
            hops: packet.hops,
            fate,
        });
    }

    fn finish(mut self) -> SimOutput {
        let horizon = self.config.horizon;
        let mut leftovers: Vec<Packet> = Vec::new();
        while let Some(ev) = self.queue.pop() {
            if let EventKind::Arrival { packet } = ev.kind {
                // injections past the horizon never entered the network
                if !packet.hops.is_empty() {
                    leftovers.push(packet);
                }
            }
        }
        let mut ports = Vec::with_capacity(self.ports.len());
        for (i, port) in self.ports.iter_mut().enumerate() {
            let overshoot = port.busy_until().saturating_sub(horizon);
            let busy = port.busy_ns().saturating_sub(overshoot);
            ports.push(PortReport {
                link: port.link(),
                latency: self.latencies[i],
                frame_overruns: port.frame_overruns(),
                busy_ns: busy,
                utilization: if horizon == 0 {
                    0.0
                } else {
                    busy as f64 / horizon as f64
                },
                classes: port
                    .class_stats()
                    .into_iter()
                    .map(|s| ClassPortReport {
                        class: s.class,
                        budget_bits: s.budget_bits,
                        peak_bits: s.peak_bits,
                        overflow_drops: s.overflow_drops,
                    })
                    .collect(),
            });
            leftovers.extend(port.drain());
        }
        for packet in leftovers {
            self.finish_packet(packet, PacketFate::InFlight);
        }
        let warm_up = self.config.warm_up;
        let mut packets = std::mem::take(&mut self.finished);
        let before = packets.len();
        packets.retain(|p| p.created >= warm_up);
        packets.sort_by_key(|p| p.id);
        let metrics = Metrics {
            horizon,
            warm_up,
            warm_up_excluded: before - packets.len(),
            packets,
            ports,
            admission: self.config.admission.clone(),
        };
        SimOutput {
            metrics,
            trace: self.trace,
        }
    }
}
