//! Scenario files.
//!
//! A scenario is a TOML document describing classes, topology, clock phases,
//! connections and run options. Loading validates every field and reports
//! all problems at once, each tagged with the path of the offending field.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admission::{AdmissionControl, AdmissionError, Connection, Decision};
use crate::buffering::{BudgetTable, BufferBudget, DEFAULT_Y};
use crate::framing::{ClassSet, Nanos, TrafficClass, NANOS_PER_MS};
use crate::ids::{ClassId, ConnectionId, LinkId, NodeId};
use crate::sim::engine::Injection;
use crate::sim::generator::Generator;
use crate::sim::topology::{LinkSpec, Topology};

pub const SCHEMA_VERSION: u32 = 1;

fn default_y() -> f64 {
    DEFAULT_Y
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub max_packet_size_bits: u64,
    pub horizon_ns: u64,
    #[serde(default)]
    pub warm_up_ns: u64,
    #[serde(default)]
    pub seed: u64,
    /// Draw phases that are not listed in `phases` uniformly from `[0, f)`.
    #[serde(default)]
    pub random_phases: bool,
    #[serde(default = "default_y")]
    pub default_y: f64,
    #[serde(default)]
    pub options: OptionsFile,
    pub nodes: Vec<u32>,
    pub classes: Vec<ClassFile>,
    pub links: Vec<LinkFile>,
    #[serde(default)]
    pub phases: Vec<PhaseFile>,
    #[serde(default)]
    pub buffer_y: Vec<BufferYFile>,
    #[serde(default)]
    pub connections: Vec<ConnectionFile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsFile {
    #[serde(default)]
    pub drop_late: bool,
    #[serde(default)]
    pub bypass_admission: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassFile {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_ns: Option<u64>,
    #[serde(default)]
    pub bandwidth_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFile {
    pub id: u32,
    pub src: u32,
    pub dst: u32,
    pub capacity_bps: u64,
    #[serde(default)]
    pub latency_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseFile {
    pub link: u32,
    pub class: u32,
    pub phase_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferYFile {
    pub link: u32,
    pub class: u32,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionFile {
    pub id: u32,
    pub class: u32,
    pub rate_bps: u64,
    pub path: Vec<u32>,
    pub packet_size_bits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ns: Option<u64>,
    #[serde(default)]
    pub start_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_ns: Option<u64>,
    #[serde(default)]
    pub offset_ns: u64,
    /// Replace `offset_ns` by a seeded draw from `[0, f)`.
    #[serde(default)]
    pub random_offset: bool,
}

/// One validation problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: schema_version {found} is not supported (expected {expected})")]
    SchemaVersion {
        origin: String,
        found: u32,
        expected: u32,
    },
    #[error("{origin}: invalid scenario\n{}", list(.errors))]
    Invalid {
        origin: String,
        errors: Vec<FieldError>,
    },
    #[error(transparent)]
    Admission(#[from] AdmissionError),
}

fn list(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offset {
    Fixed(Nanos),
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionSpec {
    pub id: ConnectionId,
    pub class: ClassId,
    pub rate_bps: u64,
    pub path: Vec<LinkId>,
    pub packet_bits: u64,
    pub deadline: Option<Nanos>,
    pub start: Nanos,
    pub stop: Option<Nanos>,
    pub offset: Offset,
}

impl ConnectionSpec {
    pub fn connection(&self) -> Connection {
        Connection {
            id: self.id,
            class: self.class,
            rate_bps: self.rate_bps,
            path: self.path.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScenarioOptions {
    pub drop_late: bool,
    pub bypass_admission: bool,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub classes: ClassSet,
    pub max_packet_bits: u64,
    pub topology: Topology,
    pub explicit_phases: BTreeMap<(LinkId, ClassId), Nanos>,
    pub random_phases: bool,
    pub default_y: f64,
    pub y_overrides: BTreeMap<(LinkId, ClassId), f64>,
    pub connections: Vec<ConnectionSpec>,
    pub horizon: Nanos,
    pub warm_up: Nanos,
    pub seed: u64,
    pub options: ScenarioOptions,
}

/// Admission decisions for every connection, in scenario order.
#[derive(Debug, Clone)]
pub struct AdmissionOutcome {
    pub control: AdmissionControl,
    pub decisions: Vec<(ConnectionId, Decision)>,
}

impl AdmissionOutcome {
    pub fn all_admitted(&self) -> bool {
        self.decisions.iter().all(|(_, d)| d.is_admitted())
    }

    pub fn rejected(&self) -> Vec<ConnectionId> {
        self.decisions
            .iter()
            .filter(|(_, d)| !d.is_admitted())
            .map(|(c, _)| *c)
            .collect()
    }
}

fn frame_from_ms(ms: f64) -> Option<Nanos> {
    if !ms.is_finite() || ms <= 0.0 {
        return None;
    }
    let ns = ms * NANOS_PER_MS as f64;
    let rounded = ns.round();
    ((ns - rounded).abs() < 1e-3 && rounded >= 1.0 && rounded < u64::MAX as f64)
        .then_some(rounded as Nanos)
}

struct Collector(Vec<FieldError>);

impl Collector {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError {
            field: field.into(),
            message: message.into(),
        });
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates scenario text; `origin` names it in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        Self::from_file(file, origin)
    }

    pub fn from_file(file: ScenarioFile, origin: &str) -> Result<Self, ScenarioError> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion {
                origin: origin.to_string(),
                found: file.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut errs = Collector(Vec::new());

        if file.max_packet_size_bits == 0 {
            errs.push("max_packet_size_bits", "must be positive");
        }
        if file.horizon_ns == 0 {
            errs.push("horizon_ns", "must be positive");
        }
        if file.warm_up_ns >= file.horizon_ns && file.warm_up_ns > 0 {
            errs.push("warm_up_ns", "must be shorter than the horizon");
        }
        if !file.default_y.is_finite() || file.default_y < 1.0 {
            errs.push("default_y", "must be at least 1");
        }

        // classes
        let mut classes = Vec::new();
        for (i, c) in file.classes.iter().enumerate() {
            let frame = match (c.frame_ms, c.frame_ns) {
                (Some(ms), None) => frame_from_ms(ms).or_else(|| {
                    errs.push(
                        format!("classes[{i}].frame_ms"),
                        format!("{ms} is not a positive whole number of nanoseconds"),
                    );
                    None
                }),
                (None, Some(0)) => {
                    errs.push(format!("classes[{i}].frame_ns"), "must be positive");
                    None
                }
                (None, Some(ns)) => Some(ns),
                _ => {
                    errs.push(
                        format!("classes[{i}]"),
                        "exactly one of frame_ms and frame_ns is required",
                    );
                    None
                }
            };
            if let Some(frame) = frame {
                classes.push(TrafficClass {
                    id: ClassId(c.id),
                    frame,
                    bandwidth_fraction: c.bandwidth_fraction,
                });
            }
        }
        let class_set = if classes.len() == file.classes.len() {
            ClassSet::new(classes)
                .map_err(|e| errs.push("classes", e.to_string()))
                .ok()
        } else {
            None
        };

        // topology
        let mut nodes = BTreeSet::new();
        for (i, &n) in file.nodes.iter().enumerate() {
            if !nodes.insert(n) {
                errs.push(format!("nodes[{i}]"), format!("duplicate node id {n}"));
            }
        }
        let mut link_ids = BTreeSet::new();
        let mut links = Vec::new();
        for (i, l) in file.links.iter().enumerate() {
            let mut ok = true;
            if !link_ids.insert(l.id) {
                errs.push(
                    format!("links[{i}].id"),
                    format!("duplicate link id {}", l.id),
                );
                ok = false;
            }
            for (field, node) in [("src", l.src), ("dst", l.dst)] {
                if !nodes.contains(&node) {
                    errs.push(
                        format!("links[{i}].{field}"),
                        format!("unknown node {node}"),
                    );
                    ok = false;
                }
            }
            if l.src == l.dst {
                errs.push(format!("links[{i}]"), "src and dst are the same node");
                ok = false;
            }
            if l.capacity_bps == 0 {
                errs.push(format!("links[{i}].capacity_bps"), "must be positive");
                ok = false;
            }
            if ok {
                links.push(LinkSpec {
                    id: LinkId(l.id),
                    src: NodeId(l.src),
                    dst: NodeId(l.dst),
                    capacity_bps: l.capacity_bps,
                    latency: l.latency_ns,
                });
            }
        }
        let topology = if links.len() == file.links.len() {
            Topology::new(nodes.iter().map(|&n| NodeId(n)), links)
                .map_err(|e| errs.push("links", e.to_string()))
                .ok()
        } else {
            None
        };

        // phases and buffer constants
        let frame_of = |class: u32| class_set.as_ref().and_then(|s| s.frame(ClassId(class)));
        let mut explicit_phases = BTreeMap::new();
        for (i, p) in file.phases.iter().enumerate() {
            if !link_ids.contains(&p.link) {
                errs.push(
                    format!("phases[{i}].link"),
                    format!("unknown link {}", p.link),
                );
            }
            match frame_of(p.class) {
                None => errs.push(
                    format!("phases[{i}].class"),
                    format!("unknown class {}", p.class),
                ),
                Some(f) if p.phase_ns >= f => errs.push(
                    format!("phases[{i}].phase_ns"),
                    format!("{} is not below the frame duration {f}", p.phase_ns),
                ),
                Some(_) => {}
            }
            if explicit_phases
                .insert((LinkId(p.link), ClassId(p.class)), p.phase_ns)
                .is_some()
            {
                errs.push(
                    format!("phases[{i}]"),
                    format!("duplicate phase for link {} class {}", p.link, p.class),
                );
            }
        }
        let mut y_overrides = BTreeMap::new();
        for (i, b) in file.buffer_y.iter().enumerate() {
            if !link_ids.contains(&b.link) {
                errs.push(
                    format!("buffer_y[{i}].link"),
                    format!("unknown link {}", b.link),
                );
            }
            if frame_of(b.class).is_none() {
                errs.push(
                    format!("buffer_y[{i}].class"),
                    format!("unknown class {}", b.class),
                );
            }
            if !b.y.is_finite() || b.y < 1.0 {
                errs.push(format!("buffer_y[{i}].y"), "must be at least 1");
            }
            y_overrides.insert((LinkId(b.link), ClassId(b.class)), b.y);
        }

        // connections
        let mut conn_ids = BTreeSet::new();
        let mut connections = Vec::new();
        for (i, c) in file.connections.iter().enumerate() {
            let at = |f: &str| format!("connections[{i}].{f}");
            if !conn_ids.insert(c.id) {
                errs.push(at("id"), format!("duplicate connection id {}", c.id));
            }
            let path: Vec<LinkId> = c.path.iter().map(|&l| LinkId(l)).collect();
            if let Some(t) = &topology {
                if let Err(e) = t.validate_path(&path) {
                    errs.push(at("path"), e.to_string());
                }
            }
            if c.packet_size_bits == 0 {
                errs.push(at("packet_size_bits"), "must be positive");
            } else if c.packet_size_bits > file.max_packet_size_bits {
                errs.push(
                    at("packet_size_bits"),
                    format!(
                        "{} exceeds max_packet_size_bits {}",
                        c.packet_size_bits, file.max_packet_size_bits
                    ),
                );
            }
            match frame_of(c.class) {
                None => errs.push(at("class"), format!("unknown class {}", c.class)),
                Some(frame) => {
                    let gen = Generator {
                        connection: ConnectionId(c.id),
                        rate_bps: c.rate_bps,
                        packet_bits: c.packet_size_bits.max(1),
                        start: 0,
                        stop: 0,
                        offset: 0,
                    };
                    if let Err(e @ crate::sim::GeneratorError::ExceedsFrameBudget { .. }) =
                        gen.validate(u64::MAX, frame)
                    {
                        errs.push(at("rate_bps"), e.to_string());
                    }
                }
            }
            if let Some(0) = c.deadline_ns {
                errs.push(at("deadline_ns"), "must be positive");
            }
            if let Some(stop) = c.stop_ns {
                if stop <= c.start_ns {
                    errs.push(at("stop_ns"), "must be after start_ns");
                }
            }
            connections.push(ConnectionSpec {
                id: ConnectionId(c.id),
                class: ClassId(c.class),
                rate_bps: c.rate_bps,
                path,
                packet_bits: c.packet_size_bits,
                deadline: c.deadline_ns,
                start: c.start_ns,
                stop: c.stop_ns,
                offset: if c.random_offset {
                    Offset::Random
                } else {
                    Offset::Fixed(c.offset_ns)
                },
            });
        }

        match (class_set, topology) {
            (Some(classes), Some(topology)) if errs.0.is_empty() => Ok(Scenario {
                name: file.name.unwrap_or_else(|| origin.to_string()),
                classes,
                max_packet_bits: file.max_packet_size_bits,
                topology,
                explicit_phases,
                random_phases: file.random_phases,
                default_y: file.default_y,
                y_overrides,
                connections,
                horizon: file.horizon_ns,
                warm_up: file.warm_up_ns,
                seed: file.seed,
                options: ScenarioOptions {
                    drop_late: file.options.drop_late,
                    bypass_admission: file.options.bypass_admission,
                },
            }),
            _ => Err(ScenarioError::Invalid {
                origin: origin.to_string(),
                errors: errs.0,
            }),
        }
    }

    /// Runs admission over the connections in file order.
    pub fn admission(&self) -> Result<AdmissionOutcome, ScenarioError> {
        let mut control = AdmissionControl::new(
            self.classes.clone(),
            self.max_packet_bits,
            self.topology.links().map(|l| (l.id, l.capacity_bps)),
        );
        let mut decisions = Vec::with_capacity(self.connections.len());
        for c in &self.connections {
            decisions.push((c.id, control.admit(&c.connection())?));
        }
        Ok(AdmissionOutcome { control, decisions })
    }

    /// Connections that generate traffic: the admitted ones, or all of them
    /// when admission is bypassed.
    pub fn active_connections<'a>(&'a self, outcome: &AdmissionOutcome) -> Vec<&'a ConnectionSpec> {
        if self.options.bypass_admission {
            return self.connections.iter().collect();
        }
        self.connections
            .iter()
            .zip(&outcome.decisions)
            .filter(|(_, (_, d))| d.is_admitted())
            .map(|(c, _)| c)
            .collect()
    }

    /// Summed rate per (link, class) of the given connections.
    pub fn class_loads(&self, active: &[&ConnectionSpec]) -> BTreeMap<(LinkId, ClassId), u64> {
        let mut loads = BTreeMap::new();
        for link in self.topology.links() {
            for class in self.classes.iter() {
                loads.insert((link.id, class.id), 0u64);
            }
        }
        for c in active {
            for l in &c.path {
                *loads.entry((*l, c.class)).or_insert(0) += c.rate_bps;
            }
        }
        loads
    }

    pub fn y(&self, link: LinkId, class: ClassId) -> f64 {
        self.y_overrides
            .get(&(link, class))
            .copied()
            .unwrap_or(self.default_y)
    }

    /// Buffer budgets for every (link, class) from the given loads.
    pub fn budgets(&self, loads: &BTreeMap<(LinkId, ClassId), u64>) -> BudgetTable {
        let entries = loads
            .iter()
            .map(|(&(link, class), &load)| {
                let frame = self.classes.frame(class).expect("validated class");
                BufferBudget::new(link, class, self.y(link, class), load, frame)
                    .expect("validated y")
            })
            .collect();
        BudgetTable::new(entries)
    }

    /// Departing-clock phase of every (link, class).
    pub fn phases(&self, seed: u64) -> BTreeMap<(LinkId, ClassId), Nanos> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = BTreeMap::new();
        for link in self.topology.links() {
            for class in self.classes.iter() {
                let drawn = rng.gen_range(0..class.frame);
                let key = (link.id, class.id);
                let phase = match self.explicit_phases.get(&key) {
                    Some(&p) => p,
                    None if self.random_phases => drawn,
                    None => 0,
                };
                out.insert(key, phase);
            }
        }
        out
    }

    pub fn deadline(&self, c: &ConnectionSpec) -> Nanos {
        c.deadline.unwrap_or_else(|| {
            let frame = self.classes.frame(c.class).expect("validated class");
            2 * c.path.len() as Nanos * frame
        })
    }

    /// Packets emitted by the given connections over the horizon, ordered by
    /// time and then connection id.
    pub fn injections(
        &self,
        active: &[&ConnectionSpec],
        phases: &BTreeMap<(LinkId, ClassId), Nanos>,
        seed: u64,
    ) -> Vec<Injection> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let offsets: BTreeMap<ConnectionId, Nanos> = self
            .connections
            .iter()
            .map(|c| {
                let frame = self.classes.frame(c.class).expect("validated class");
                let drawn = rng.gen_range(0..frame);
                let offset = match c.offset {
                    Offset::Fixed(o) => o,
                    Offset::Random => drawn,
                };
                (c.id, offset)
            })
            .collect();
        let mut out = Vec::new();
        for c in active {
            let frame = self.classes.frame(c.class).expect("validated class");
            let phase = phases.get(&(c.path[0], c.class)).copied().unwrap_or(0);
            let clock = crate::framing::FrameClock::new(frame, phase).expect("phase below frame");
            let gen = Generator {
                connection: c.id,
                rate_bps: c.rate_bps,
                packet_bits: c.packet_bits,
                start: c.start,
                stop: c.stop.unwrap_or(Nanos::MAX),
                offset: offsets[&c.id],
            };
            out.extend(
                gen.emissions(&clock, self.horizon)
                    .into_iter()
                    .map(|time| Injection {
                        time,
                        connection: c.id,
                        size_bits: c.packet_bits,
                    }),
            );
        }
        out.sort_by_key(|i| (i.time, i.connection));
        out
    }
}
