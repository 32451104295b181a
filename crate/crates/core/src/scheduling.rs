//! Per-node stop-and-go output ports.
//!
//! A packet that reaches a node is held until the next departing frame of its
//! class begins on the output link. Eligible packets are then served in class
//! priority order (shortest frame first), FIFO within a class, and a started
//! transmission always runs to completion.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::buffering::{occupancy_check, Occupancy};
use crate::framing::{FrameClock, Nanos, NANOS_PER_SEC};
use crate::ids::{ClassId, ConnectionId, LinkId, NodeId, PacketId};

/// Per-node timing of one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopRecord {
    pub node: NodeId,
    pub link: LinkId,
    pub arrival: Nanos,
    /// `None` when the packet was dropped on arrival.
    pub eligible: Option<Nanos>,
    /// Transmission completion on `link`.
    pub departure: Option<Nanos>,
}

impl HopRecord {
    pub fn queuing_delay(&self) -> Option<Nanos> {
        self.departure.map(|d| d - self.arrival)
    }

    pub fn eligibility_wait(&self) -> Option<Nanos> {
        self.eligible.map(|e| e - self.arrival)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    pub class: ClassId,
    pub size_bits: u64,
    pub connection: ConnectionId,
    pub created: Nanos,
    /// Relative end-to-end deadline.
    pub deadline: Nanos,
    pub late: bool,
    pub hops: Vec<HopRecord>,
}

impl Packet {
    pub fn new(
        id: PacketId,
        class: ClassId,
        size_bits: u64,
        connection: ConnectionId,
        created: Nanos,
        deadline: Nanos,
    ) -> Self {
        Self {
            id,
            class,
            size_bits,
            connection,
            created,
            deadline,
            late: false,
            hops: Vec::new(),
        }
    }

    /// Sets the late flag if more than `deadline` has elapsed since creation.
    /// The flag is sticky. Returns the updated flag.
    pub fn mark_late(&mut self, now: Nanos) -> bool {
        if now.saturating_sub(self.created) > self.deadline {
            self.late = true;
        }
        self.late
    }
}

/// Transmission time of `size_bits` at `capacity_bps`, rounded up to whole
/// nanoseconds.
pub fn transmission_time(size_bits: u64, capacity_bps: u64) -> Nanos {
    let num = size_bits as u128 * NANOS_PER_SEC as u128;
    num.div_ceil(capacity_bps as u128) as Nanos
}

#[derive(Debug, Error)]
pub enum EnqueueError {
    #[error("class {class} has no frame clock on link {link}")]
    UnknownClass {
        link: LinkId,
        class: ClassId,
        packet: Box<Packet>,
    },
    #[error("buffer overflow for class {class} on link {link}")]
    Overflow {
        link: LinkId,
        class: ClassId,
        packet: Box<Packet>,
    },
}

impl EnqueueError {
    pub fn into_packet(self) -> Packet {
        match self {
            EnqueueError::UnknownClass { packet, .. } | EnqueueError::Overflow { packet, .. } => {
                *packet
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransmitError {
    #[error("packet {0} has zero size")]
    EmptyPacket(PacketId),
    #[error("link {link} is busy until {busy_until} ns")]
    Busy { link: LinkId, busy_until: Nanos },
}

#[derive(Debug, Clone)]
struct ClassQueue {
    class: ClassId,
    clock: FrameClock,
    /// Keyed by (eligibility time, arrival sequence).
    holding: BTreeMap<(Nanos, u64), Packet>,
    eligible: VecDeque<Packet>,
    queued_bits: u64,
    budget_bits: Option<u64>,
    peak_bits: u64,
    overflow_drops: u64,
}

impl ClassQueue {
    fn is_empty(&self) -> bool {
        self.holding.is_empty() && self.eligible.is_empty()
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    packet: Packet,
    completion: Nanos,
}

/// Occupancy statistics for one class on one port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassQueueStats {
    pub class: ClassId,
    pub peak_bits: u64,
    pub overflow_drops: u64,
    pub budget_bits: Option<u64>,
}

/// The transmitting end of one link.
#[derive(Debug, Clone)]
pub struct OutputPort {
    link: LinkId,
    node: NodeId,
    capacity_bps: u64,
    classes: Vec<ClassQueue>,
    busy_until: Nanos,
    in_flight: Option<InFlight>,
    seq: u64,
    frame_overruns: u64,
    busy_ns: Nanos,
}

impl OutputPort {
    /// `clocks` lists the departing frame clock of every class this port
    /// carries. Classes are served in increasing id order.
    pub fn new(
        link: LinkId,
        node: NodeId,
        capacity_bps: u64,
        clocks: impl IntoIterator<Item = (ClassId, FrameClock)>,
    ) -> Self {
        let mut classes: Vec<ClassQueue> = clocks
            .into_iter()
            .map(|(class, clock)| ClassQueue {
                class,
                clock,
                holding: BTreeMap::new(),
                eligible: VecDeque::new(),
                queued_bits: 0,
                budget_bits: None,
                peak_bits: 0,
                overflow_drops: 0,
            })
            .collect();
        classes.sort_by_key(|q| q.class);
        Self {
            link,
            node,
            capacity_bps,
            classes,
            busy_until: 0,
            in_flight: None,
            seq: 0,
            frame_overruns: 0,
            busy_ns: 0,
        }
    }

    pub fn link(&self) -> LinkId {
        self.link
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn capacity_bps(&self) -> u64 {
        self.capacity_bps
    }

    pub fn busy_until(&self) -> Nanos {
        self.busy_until
    }

    pub fn frame_overruns(&self) -> u64 {
        self.frame_overruns
    }

    /// Total transmission time started on this port.
    pub fn busy_ns(&self) -> Nanos {
        self.busy_ns
    }

    pub fn clock(&self, class: ClassId) -> Option<&FrameClock> {
        self.queue(class).map(|q| &q.clock)
    }

    /// Caps the held + eligible bits of `class`. Without a budget the queue
    /// is unbounded.
    pub fn set_budget(&mut self, class: ClassId, budget_bits: u64) -> bool {
        match self.queue_mut(class) {
            Some(q) => {
                q.budget_bits = Some(budget_bits);
                true
            }
            None => false,
        }
    }

    /// Bits of `class` waiting in the holding and eligible queues.
    pub fn queued_bits(&self, class: ClassId) -> Option<u64> {
        self.queue(class).map(|q| q.queued_bits)
    }

    pub fn is_idle(&self, now: Nanos) -> bool {
        self.in_flight.is_none() && now >= self.busy_until
    }

    pub fn has_eligible(&self) -> bool {
        self.classes.iter().any(|q| !q.eligible.is_empty())
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight.is_none() && self.classes.iter().all(ClassQueue::is_empty)
    }

    /// Class of the highest-priority non-empty eligible queue.
    pub fn top_eligible_class(&self) -> Option<ClassId> {
        self.classes
            .iter()
            .find(|q| !q.eligible.is_empty())
            .map(|q| q.class)
    }

    pub fn class_stats(&self) -> Vec<ClassQueueStats> {
        self.classes
            .iter()
            .map(|q| ClassQueueStats {
                class: q.class,
                peak_bits: q.peak_bits,
                overflow_drops: q.overflow_drops,
                budget_bits: q.budget_bits,
            })
            .collect()
    }

    /// Places `packet` in the holding queue of its class and returns the
    /// instant it becomes eligible: the next departing frame boundary
    /// strictly after `now`. The hop record is appended in every case,
    /// including an overflow drop.
    pub fn enqueue(&mut self, mut packet: Packet, now: Nanos) -> Result<Nanos, EnqueueError> {
        let (link, node) = (self.link, self.node);
        let Some(q) = self.classes.iter_mut().find(|q| q.class == packet.class) else {
            return Err(EnqueueError::UnknownClass {
                link,
                class: packet.class,
                packet: Box::new(packet),
            });
        };
        let mut hop = HopRecord {
            node,
            link,
            arrival: now,
            eligible: None,
            departure: None,
        };
        if let Occupancy::Overflow = occupancy_check(q.queued_bits, packet.size_bits, q.budget_bits)
        {
            q.overflow_drops += 1;
            packet.hops.push(hop);
            return Err(EnqueueError::Overflow {
                link,
                class: packet.class,
                packet: Box::new(packet),
            });
        }
        let eligible = q.clock.next_boundary_after(now);
        hop.eligible = Some(eligible);
        packet.hops.push(hop);
        q.queued_bits += packet.size_bits;
        q.peak_bits = q.peak_bits.max(q.queued_bits);
        q.holding.insert((eligible, self.seq), packet);
        self.seq += 1;
        Ok(eligible)
    }

    /// Moves every held packet whose eligibility time has been reached into
    /// its class's eligible queue. Returns the number moved.
    pub fn promote(&mut self, now: Nanos) -> usize {
        self.promote_with(now, |_| {})
    }

    /// [`promote`](Self::promote), calling `on_promote` for each packet moved.
    pub fn promote_with(&mut self, now: Nanos, mut on_promote: impl FnMut(&Packet)) -> usize {
        let mut moved = 0;
        for q in &mut self.classes {
            while let Some(entry) = q.holding.first_entry() {
                if entry.key().0 > now {
                    break;
                }
                let packet = entry.remove();
                on_promote(&packet);
                q.eligible.push_back(packet);
                moved += 1;
            }
        }
        moved
    }

    /// Head of the highest-priority non-empty eligible queue, or `None` if
    /// nothing is eligible or the link is still transmitting.
    pub fn select_next(&mut self, now: Nanos) -> Option<Packet> {
        if !self.is_idle(now) {
            return None;
        }
        let q = self.classes.iter_mut().find(|q| !q.eligible.is_empty())?;
        let packet = q.eligible.pop_front()?;
        q.queued_bits -= packet.size_bits;
        Some(packet)
    }

    /// Starts sending `packet` and returns its completion time. The packet
    /// stays on the port until [`complete`](Self::complete) is called.
    pub fn transmit(&mut self, mut packet: Packet, now: Nanos) -> Result<Nanos, TransmitError> {
        if packet.size_bits == 0 {
            return Err(TransmitError::EmptyPacket(packet.id));
        }
        if !self.is_idle(now) {
            return Err(TransmitError::Busy {
                link: self.link,
                busy_until: self.busy_until,
            });
        }
        let duration = transmission_time(packet.size_bits, self.capacity_bps);
        let completion = now + duration;
        let frame = self
            .queue(packet.class)
            .map(|q| q.clock.frame())
            .unwrap_or(Nanos::MAX);
        if let Some(hop) = packet.hops.last_mut() {
            hop.departure = Some(completion);
            let eligible = hop.eligible.unwrap_or(now);
            if completion > eligible.saturating_add(frame) {
                self.frame_overruns += 1;
            }
        }
        self.busy_until = completion;
        self.busy_ns += duration;
        self.in_flight = Some(InFlight { packet, completion });
        Ok(completion)
    }

    /// Removes the in-flight packet if its transmission has finished by `now`.
    pub fn complete(&mut self, now: Nanos) -> Option<Packet> {
        match &self.in_flight {
            Some(f) if f.completion <= now => self.in_flight.take().map(|f| f.packet),
            _ => None,
        }
    }

    /// Empties the port, returning every packet it still holds.
    pub fn drain(&mut self) -> Vec<Packet> {
        let mut out: Vec<Packet> = self
            .in_flight
            .take()
            .map(|f| f.packet)
            .into_iter()
            .collect();
        for q in &mut self.classes {
            out.extend(std::mem::take(&mut q.holding).into_values());
            out.extend(q.eligible.drain(..));
            q.queued_bits = 0;
        }
        out
    }

    fn queue(&self, class: ClassId) -> Option<&ClassQueue> {
        self.classes.iter().find(|q| q.class == class)
    }

    fn queue_mut(&mut self, class: ClassId) -> Option<&mut ClassQueue> {
        self.classes.iter_mut().find(|q| q.class == class)
    }
}
