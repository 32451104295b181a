//! Simulation measurements, analytic delay envelopes and bound verification.
//!
//! Per-hop queuing delay is measured from a packet's arrival at a node to
//! the end of its transmission on the output link. Link latencies are not
//! part of it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffering::BudgetTable;
use crate::framing::{ClassSet, Nanos, NANOS_PER_MS};
use crate::ids::{ClassId, ConnectionId, LinkId, NodeId, PacketId};
use crate::scheduling::HopRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    Overflow,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketFate {
    Delivered {
        at: Nanos,
    },
    Dropped {
        node: NodeId,
        reason: DropReason,
    },
    /// Still queued or on a link when the horizon was reached.
    InFlight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub id: PacketId,
    pub connection: ConnectionId,
    pub class: ClassId,
    /// Number of links on the route.
    pub path_len: usize,
    pub created: Nanos,
    pub deadline: Nanos,
    pub late: bool,
    pub hops: Vec<HopRecord>,
    pub fate: PacketFate,
}

impl PacketRecord {
    pub fn is_delivered(&self) -> bool {
        matches!(self.fate, PacketFate::Delivered { .. })
    }

    pub fn is_dropped(&self) -> bool {
        matches!(self.fate, PacketFate::Dropped { .. })
    }

    pub fn e2e(&self) -> Option<Nanos> {
        match self.fate {
            PacketFate::Delivered { at } => Some(at - self.created),
            _ => None,
        }
    }

    /// Queuing delays of the hops that finished transmission.
    pub fn hop_delays(&self) -> impl Iterator<Item = Nanos> + '_ {
        self.hops.iter().filter_map(HopRecord::queuing_delay)
    }

    /// Summed queuing delay over the whole route, for delivered packets.
    pub fn total_queuing(&self) -> Option<Nanos> {
        self.is_delivered().then(|| self.hop_delays().sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassPortReport {
    pub class: ClassId,
    pub budget_bits: Option<u64>,
    pub peak_bits: u64,
    pub overflow_drops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortReport {
    pub link: LinkId,
    pub latency: Nanos,
    pub frame_overruns: u64,
    pub busy_ns: Nanos,
    pub utilization: f64,
    pub classes: Vec<ClassPortReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdmissionEcho {
    pub admitted: bool,
    pub bypassed: bool,
    pub rejected: Vec<ConnectionId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub horizon: Nanos,
    pub warm_up: Nanos,
    /// Packets created at or after the warm-up, in id order.
    pub packets: Vec<PacketRecord>,
    /// Packets created during the warm-up and left out of `packets`.
    pub warm_up_excluded: usize,
    pub ports: Vec<PortReport>,
    pub admission: AdmissionEcho,
}

impl Metrics {
    pub fn empty(horizon: Nanos) -> Self {
        Self {
            horizon,
            warm_up: 0,
            packets: Vec::new(),
            warm_up_excluded: 0,
            ports: Vec::new(),
            admission: AdmissionEcho {
                admitted: true,
                ..Default::default()
            },
        }
    }

    pub fn generated(&self) -> usize {
        self.packets.len()
    }

    pub fn delivered(&self) -> usize {
        self.packets.iter().filter(|p| p.is_delivered()).count()
    }

    pub fn dropped(&self) -> usize {
        self.packets.iter().filter(|p| p.is_dropped()).count()
    }

    pub fn dropped_for(&self, reason: DropReason) -> usize {
        self.packets
            .iter()
            .filter(|p| matches!(p.fate, PacketFate::Dropped { reason: r, .. } if r == reason))
            .count()
    }

    pub fn in_flight(&self) -> usize {
        self.packets
            .iter()
            .filter(|p| matches!(p.fate, PacketFate::InFlight))
            .count()
    }

    pub fn late(&self) -> usize {
        self.packets.iter().filter(|p| p.late).count()
    }

    pub fn frame_overruns(&self) -> u64 {
        self.ports.iter().map(|p| p.frame_overruns).sum()
    }

    /// Overflow drops over the whole run, warm-up included.
    pub fn overflow_drops(&self) -> u64 {
        self.ports
            .iter()
            .flat_map(|p| &p.classes)
            .map(|c| c.overflow_drops)
            .sum()
    }

    pub fn latency(&self, link: LinkId) -> Option<Nanos> {
        self.ports
            .iter()
            .find(|p| p.link == link)
            .map(|p| p.latency)
    }
}

/// Analytic queuing-delay envelope over `hops` nodes: one to two frames per
/// node.
pub fn delay_bounds(frame: Nanos, hops: u32) -> (Nanos, Nanos) {
    let min = frame * hops as Nanos;
    (min, 2 * min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    HopDelay {
        hop: usize,
        delay: Nanos,
        bound: Nanos,
    },
    PathDelay {
        delay: Nanos,
        bound: Nanos,
    },
    EligibilityWait {
        hop: usize,
        wait: Nanos,
        frame: Nanos,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub packet: PacketId,
    pub class: ClassId,
    pub kind: ViolationKind,
}

/// Observed queuing delays of delivered packets sharing a class and route
/// length.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassObservation {
    pub class: ClassId,
    pub frame: Nanos,
    pub hops: usize,
    pub packets: usize,
    pub min: Nanos,
    pub mean: f64,
    pub max: Nanos,
    pub max_hop: Nanos,
    pub bound: (Nanos, Nanos),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundReport {
    pub violations: Vec<Violation>,
    pub frame_overruns: u64,
    pub overflow_drops: u64,
    pub per_class: Vec<ClassObservation>,
}

impl BoundReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.frame_overruns == 0
    }
}

/// Checks every completed hop against `2 * f`, every eligibility wait
/// against `(0, f]`, and every delivered route against `2 * hops * f`.
pub fn verify_bounds(metrics: &Metrics, classes: &ClassSet) -> BoundReport {
    let mut violations = Vec::new();
    let mut groups: BTreeMap<(ClassId, usize), Vec<(Nanos, Nanos)>> = BTreeMap::new();
    for p in &metrics.packets {
        let Some(frame) = classes.frame(p.class) else {
            continue;
        };
        let mut push = |kind| {
            violations.push(Violation {
                packet: p.id,
                class: p.class,
                kind,
            })
        };
        for (hop, h) in p.hops.iter().enumerate() {
            if let Some(wait) = h.eligibility_wait() {
                if wait == 0 || wait > frame {
                    push(ViolationKind::EligibilityWait { hop, wait, frame });
                }
            }
            if let Some(delay) = h.queuing_delay() {
                if delay > 2 * frame {
                    push(ViolationKind::HopDelay {
                        hop,
                        delay,
                        bound: 2 * frame,
                    });
                }
            }
        }
        if let Some(total) = p.total_queuing() {
            let (_, bound) = delay_bounds(frame, p.path_len as u32);
            if total > bound {
                push(ViolationKind::PathDelay {
                    delay: total,
                    bound,
                });
            }
            let max_hop = p.hop_delays().max().unwrap_or(0);
            groups
                .entry((p.class, p.path_len))
                .or_default()
                .push((total, max_hop));
        }
    }
    let per_class = groups
        .into_iter()
        .map(|((class, hops), samples)| {
            let frame = classes.frame(class).unwrap_or(0);
            let sum: u128 = samples.iter().map(|&(t, _)| t as u128).sum();
            ClassObservation {
                class,
                frame,
                hops,
                packets: samples.len(),
                min: samples.iter().map(|s| s.0).min().unwrap_or(0),
                mean: sum as f64 / samples.len() as f64,
                max: samples.iter().map(|s| s.0).max().unwrap_or(0),
                max_hop: samples.iter().map(|s| s.1).max().unwrap_or(0),
                bound: delay_bounds(frame, hops as u32),
            }
        })
        .collect();
    BoundReport {
        violations,
        frame_overruns: metrics.frame_overruns(),
        overflow_drops: metrics.overflow_drops(),
        per_class,
    }
}

/// Milliseconds with three decimals.
pub fn fmt_ms(ns: Nanos) -> String {
    format!("{}.{:03}", ns / NANOS_PER_MS, (ns % NANOS_PER_MS) / 1000)
}

fn fmt_ms_f(ns: f64) -> String {
    format!("{:.3}", ns / NANOS_PER_MS as f64)
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// One CSV row: a packet at one hop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvRow {
    pub packet_id: u64,
    pub class: u32,
    pub hop: usize,
    pub arrival_ns: Nanos,
    pub eligible_ns: Option<Nanos>,
    pub departure_ns: Option<Nanos>,
    pub e2e_ns: Option<Nanos>,
    pub late: bool,
    pub dropped: bool,
}

/// What the CSV carries about one packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvPacket {
    pub id: PacketId,
    pub class: ClassId,
    /// (arrival, eligible, departure) per hop.
    pub hops: Vec<(Nanos, Option<Nanos>, Option<Nanos>)>,
    pub e2e: Option<Nanos>,
    pub late: bool,
    pub dropped: bool,
}

impl From<&PacketRecord> for CsvPacket {
    fn from(p: &PacketRecord) -> Self {
        Self {
            id: p.id,
            class: p.class,
            hops: p
                .hops
                .iter()
                .map(|h| (h.arrival, h.eligible, h.departure))
                .collect(),
            e2e: p.e2e(),
            late: p.late,
            dropped: p.is_dropped(),
        }
    }
}

pub fn csv_rows(metrics: &Metrics) -> impl Iterator<Item = CsvRow> + '_ {
    metrics.packets.iter().flat_map(|p| {
        let e2e = p.e2e();
        let dropped = p.is_dropped();
        p.hops.iter().enumerate().map(move |(hop, h)| CsvRow {
            packet_id: p.id.0,
            class: p.class.0,
            hop,
            arrival_ns: h.arrival,
            eligible_ns: h.eligible,
            departure_ns: h.departure,
            e2e_ns: e2e,
            late: p.late,
            dropped,
        })
    })
}

pub fn write_csv<W: io::Write>(metrics: &Metrics, out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record([
        "packet_id",
        "class",
        "hop",
        "arrival_ns",
        "eligible_ns",
        "departure_ns",
        "e2e_ns",
        "late",
        "dropped",
    ])?;
    for row in csv_rows(metrics) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a CSV produced by [`write_csv`] back into per-packet form.
pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<CsvPacket>, csv::Error> {
    let mut packets: Vec<CsvPacket> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize::<CsvRow>() {
        let row = row?;
        let hop = (row.arrival_ns, row.eligible_ns, row.departure_ns);
        match packets.last_mut() {
            Some(p) if p.id.0 == row.packet_id => p.hops.push(hop),
            _ => packets.push(CsvPacket {
                id: PacketId(row.packet_id),
                class: ClassId(row.class),
                hops: vec![hop],
                e2e: row.e2e_ns,
                late: row.late,
                dropped: row.dropped,
            }),
        }
    }
    Ok(packets)
}

/// Plain-text run summary: counts, per-class delays against the analytic
/// envelope, buffers and link utilization.
pub fn summary(metrics: &Metrics, classes: &ClassSet, budgets: Option<&BudgetTable>) -> String {
    let report = verify_bounds(metrics, classes);
    let mut s = String::new();
    let yes_no = |b: bool| if b { "yes" } else { "no" };
    let _ = writeln!(s, "horizon_ms {}", fmt_ms(metrics.horizon));
    let _ = writeln!(s, "warm_up_ms {}", fmt_ms(metrics.warm_up));
    let rejected = if metrics.admission.rejected.is_empty() {
        "none".to_string()
    } else {
        metrics
            .admission
            .rejected
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(
        s,
        "admission admitted={} bypassed={} rejected={}",
        yes_no(metrics.admission.admitted),
        yes_no(metrics.admission.bypassed),
        rejected
    );
    let _ = writeln!(
        s,
        "packets generated={} delivered={} dropped={} in_flight={} late={} warm_up_excluded={}",
        metrics.generated(),
        metrics.delivered(),
        metrics.dropped(),
        metrics.in_flight(),
        metrics.late(),
        metrics.warm_up_excluded
    );
    let _ = writeln!(
        s,
        "drops overflow={} late={}",
        metrics.dropped_for(DropReason::Overflow),
        metrics.dropped_for(DropReason::Late)
    );
    let _ = writeln!(s, "frame_overruns {}", report.frame_overruns);
    let _ = writeln!(s, "bound_violations {}", report.violations.len());
    let _ = writeln!(s);
    let _ = writeln!(s, "queuing delay (ms)");
    let _ = writeln!(
        s,
        "{:<6} {:>9} {:>5} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "class",
        "frame",
        "hops",
        "packets",
        "min",
        "mean",
        "max",
        "bound_min",
        "bound_max",
        "max_hop"
    );
    for o in &report.per_class {
        let _ = writeln!(
            s,
            "{:<6} {:>9} {:>5} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            format!("TYPE-{}", o.class),
            fmt_ms(o.frame),
            o.hops,
            o.packets,
            fmt_ms(o.min),
            fmt_ms_f(o.mean),
            fmt_ms(o.max),
            fmt_ms(o.bound.0),
            fmt_ms(o.bound.1),
            fmt_ms(o.max_hop)
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "buffers");
    let _ = writeln!(
        s,
        "{:<5} {:<6} {:>5} {:>12} {:>9} {:>12} {:>10} {:>12} {:>9}",
        "link",
        "class",
        "y",
        "load_bps",
        "frame_ms",
        "budget_bits",
        "budget_kb",
        "peak_bits",
        "overflow"
    );
    for port in &metrics.ports {
        for c in &port.classes {
            let budget = budgets.and_then(|b| b.get(port.link, c.class));
            let (y, load, frame) = match budget {
                Some(b) => (format!("{}", b.y), b.load_bps.to_string(), fmt_ms(b.frame)),
                None => ("-".into(), "-".into(), "-".into()),
            };
            let bits = c.budget_bits.map_or("-".to_string(), |b| b.to_string());
            let kb = budget.map_or("-".to_string(), |b| format!("{}", b.kilobits()));
            let _ = writeln!(
                s,
                "{:<5} {:<6} {:>5} {:>12} {:>9} {:>12} {:>10} {:>12} {:>9}",
                port.link,
                format!("TYPE-{}", c.class),
                y,
                load,
                frame,
                bits,
                kb,
                c.peak_bits,
                c.overflow_drops
            );
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "links");
    let _ = writeln!(s, "{:<5} {:>11} {:>9}", "link", "utilization", "overruns");
    for port in &metrics.ports {
        let _ = writeln!(
            s,
            "{:<5} {:>11.4} {:>9}",
            port.link, port.utilization, port.frame_overruns
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Summary,
}

/// Writes metrics to `path` in the given format.
pub fn emit(
    metrics: &Metrics,
    classes: &ClassSet,
    budgets: Option<&BudgetTable>,
    format: Format,
    path: &Path,
) -> Result<(), EmitError> {
    let file = std::fs::File::create(path).map_err(|source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = io::BufWriter::new(file);
    match format {
        Format::Csv => write_csv(metrics, &mut out).map_err(|source| EmitError::Csv {
            path: path.to_path_buf(),
            source,
        })?,
        Format::Summary => {
            io::Write::write_all(&mut out, summary(metrics, classes, budgets).as_bytes()).map_err(
                |source| EmitError::Io {
                    path: path.to_path_buf(),
                    source,
                },
            )?
        }
    }
    io::Write::flush(&mut out).map_err(|source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    })
}
