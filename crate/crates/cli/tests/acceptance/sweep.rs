//! Randomized admitted scenarios on in-trees toward a sink. One sweep is
//! shared by the delay, eligibility and buffer criteria; every check reads
//! the raw per-hop records rather than the library's own bound report.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sgmh_core::admission::{AdmissionControl, Connection, Decision};
use sgmh_core::scenario::{ClassFile, ConnectionFile, LinkFile, OptionsFile, ScenarioFile};
use sgmh_core::{sim, ClassId, ClassSet, ConnectionId, LinkId, Scenario};

use crate::{ensure, Outcome};

pub const SCENARIOS: u64 = 120;
pub const MIN_PACKETS: usize = 10_000;

const FRAME_LADDER_US: [u64; 7] = [500, 1_000, 2_000, 2_500, 5_000, 10_000, 20_000];
const CAPACITIES: [u64; 5] = [10_000_000, 20_000_000, 50_000_000, 100_000_000, 200_000_000];

pub struct Generated {
    pub file: ScenarioFile,
    pub height: usize,
}

/// Random in-tree of height 3..=7 rooted at node 1, random classes and a
/// random connection mix that admission accepted one connection at a time.
pub fn generate(index: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + index);
    let n_classes = rng.gen_range(2..=3);
    let mut frames_us: Vec<u64> = FRAME_LADDER_US
        .choose_multiple(&mut rng, n_classes)
        .copied()
        .collect();
    frames_us.sort_unstable();
    let frames: Vec<u64> = frames_us.iter().map(|f| f * 1_000).collect();
    let capacity = *CAPACITIES.choose(&mut rng).unwrap();
    let max_packet = rng.gen_range(2..=24u64) * 500;

    // node 1 is the sink; a chain of `height` links guarantees the height,
    // extra nodes hang off nodes that are at most height - 1 hops up
    let height = rng.gen_range(3..=7usize);
    let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
    let mut hops: BTreeMap<u32, usize> = BTreeMap::from([(1, 0)]);
    for n in 2..=height as u32 + 1 {
        parent.insert(n, n - 1);
        hops.insert(n, n as usize - 1);
    }
    let extra = rng.gen_range(0..=5u32);
    for k in 0..extra {
        let n = height as u32 + 2 + k;
        let candidates: Vec<u32> = hops
            .iter()
            .filter(|&(_, &h)| h < height)
            .map(|(&id, _)| id)
            .collect();
        let p = *candidates.choose(&mut rng).unwrap();
        parent.insert(n, p);
        hops.insert(n, hops[&p] + 1);
    }
    // the link leaving node n has id n - 1
    let links: Vec<LinkFile> = parent
        .iter()
        .map(|(&n, &p)| LinkFile {
            id: n - 1,
            src: n,
            dst: p,
            capacity_bps: capacity,
            latency_ns: rng.gen_range(0..=100_000),
        })
        .collect();
    let path_from = |mut n: u32| {
        let mut path = Vec::new();
        while let Some(&p) = parent.get(&n) {
            path.push(n - 1);
            n = p;
        }
        path
    };

    let classes = ClassSet::from_frames(&frames).expect("ladder frames increase");
    let mut control = AdmissionControl::new(
        classes,
        max_packet,
        links.iter().map(|l| (LinkId(l.id), l.capacity_bps)),
    );
    let sources: Vec<u32> = parent.keys().copied().collect();
    let mut connections = Vec::new();
    for attempt in 0..200u32 {
        let src = *sources.choose(&mut rng).unwrap();
        let class = rng.gen_range(1..=n_classes as u32);
        let frame = frames[class as usize - 1];
        let rate = (capacity as f64 * rng.gen_range(0.005..0.4)) as u64 / 1_000 * 1_000;
        let frame_bits = (rate as u128 * frame as u128 / 1_000_000_000) as u64;
        let size = rng.gen_range(max_packet / 10..=max_packet).min(frame_bits);
        if size < 100 {
            continue;
        }
        let path = path_from(src);
        let conn = Connection {
            id: ConnectionId(attempt + 1),
            class: ClassId(class),
            rate_bps: rate,
            path: path.iter().map(|&l| LinkId(l)).collect(),
        };
        let random_offset = rng.gen_bool(0.5);
        let offset_ns = rng.gen_range(0..frame);
        if control.admit(&conn).expect("valid connection") == Decision::Admitted {
            connections.push(ConnectionFile {
                id: attempt + 1,
                class,
                rate_bps: rate,
                path,
                packet_size_bits: size,
                deadline_ns: None,
                start_ns: 0,
                stop_ns: None,
                offset_ns,
                random_offset,
            });
        }
    }

    let packets_per_sec: f64 = connections
        .iter()
        .map(|c| c.rate_bps as f64 / c.packet_size_bits as f64)
        .sum();
    let horizon_ns = ((1.5 * MIN_PACKETS as f64 / packets_per_sec) * 1e9)
        .max(200e6)
        .ceil() as u64;

    let file = ScenarioFile {
        schema_version: 1,
        name: Some(format!("sweep-{index}")),
        max_packet_size_bits: max_packet,
        horizon_ns,
        warm_up_ns: 0,
        seed: index,
        random_phases: true,
        default_y: 2.0,
        options: OptionsFile::default(),
        nodes: hops.keys().copied().collect(),
        classes: frames
            .iter()
            .enumerate()
            .map(|(i, &f)| ClassFile {
                id: i as u32 + 1,
                frame_ms: None,
                frame_ns: Some(f),
                bandwidth_fraction: 0.0,
            })
            .collect(),
        links,
        phases: Vec::new(),
        buffer_y: Vec::new(),
        connections,
    };
    Generated { file, height }
}

#[derive(Debug, Default, Clone)]
pub struct ScenarioStats {
    pub packets: usize,
    pub height: usize,
    pub hop_records: usize,
    pub hop_violations: usize,
    pub overruns: u64,
    pub max_hop_ratio: f64,
    pub wait_violations: usize,
    pub max_wait_ratio: f64,
    pub min_wait_ns: u64,
    pub overflow_drops: u64,
    pub max_fill_ratio: f64,
    pub max_utilization: f64,
    pub fully_admitted: bool,
    pub first_failure: Option<String>,
}

fn evaluate(index: u64) -> Result<ScenarioStats, String> {
    let Generated { file, height } = generate(index);
    let sc = Scenario::from_file(file, &format!("sweep-{index}")).map_err(|e| e.to_string())?;
    let run = sim::run(&sc, sc.seed, false).map_err(|e| e.to_string())?;
    let m = &run.metrics;
    let mut s = ScenarioStats {
        packets: m.packets.len(),
        height,
        min_wait_ns: u64::MAX,
        fully_admitted: run.admission.all_admitted() && !sc.options.bypass_admission,
        ..Default::default()
    };
    for p in &m.packets {
        let f = sc.classes.frame(p.class).ok_or("unknown class")?;
        for (hop, h) in p.hops.iter().enumerate() {
            if let Some(e) = h.eligible {
                let wait = e.checked_sub(h.arrival).ok_or("eligible before arrival")?;
                s.min_wait_ns = s.min_wait_ns.min(wait);
                s.max_wait_ratio = s.max_wait_ratio.max(wait as f64 / f as f64);
                if wait == 0 || wait > f {
                    s.wait_violations += 1;
                    s.first_failure.get_or_insert(format!(
                        "packet {} hop {hop}: wait {wait} ns, f {f} ns",
                        p.id
                    ));
                }
            }
            if let Some(d) = h.departure {
                s.hop_records += 1;
                let delay = d - h.arrival;
                s.max_hop_ratio = s.max_hop_ratio.max(delay as f64 / f as f64);
                if delay > 2 * f {
                    s.hop_violations += 1;
                    s.first_failure.get_or_insert(format!(
                        "packet {} hop {hop}: delay {delay} ns, 2f {} ns",
                        p.id,
                        2 * f
                    ));
                }
            }
        }
    }
    for port in &m.ports {
        s.overruns += port.frame_overruns;
        if port.frame_overruns > 0 {
            s.first_failure.get_or_insert(format!(
                "link {}: {} frame overruns at utilization {:.4}",
                port.link, port.frame_overruns, port.utilization
            ));
        }
        s.max_utilization = s.max_utilization.max(port.utilization);
        for c in &port.classes {
            s.overflow_drops += c.overflow_drops;
            if let Some(b) = c.budget_bits.filter(|&b| b > 0) {
                s.max_fill_ratio = s.max_fill_ratio.max(c.peak_bits as f64 / b as f64);
            }
        }
    }
    Ok(s)
}

pub struct Sweep {
    pub stats: Vec<ScenarioStats>,
}

impl Sweep {
    fn total<T: std::iter::Sum<T>>(&self, f: impl Fn(&ScenarioStats) -> T) -> T {
        self.stats.iter().map(f).sum()
    }

    fn max(&self, f: impl Fn(&ScenarioStats) -> f64) -> f64 {
        self.stats.iter().map(f).fold(0.0, f64::max)
    }

    fn first_failure(&self, pred: impl Fn(&ScenarioStats) -> bool) -> String {
        self.stats
            .iter()
            .enumerate()
            .find(|(_, s)| pred(s))
            .map(|(i, s)| {
                format!(
                    "scenario {i}: {}",
                    s.first_failure.clone().unwrap_or_default()
                )
            })
            .unwrap_or_default()
    }
}

static SWEEP: OnceLock<Result<Sweep, String>> = OnceLock::new();

pub fn sweep() -> Result<&'static Sweep, String> {
    SWEEP
        .get_or_init(|| {
            let stats = (0..SCENARIOS)
                .into_par_iter()
                .map(evaluate)
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Sweep { stats })
        })
        .as_ref()
        .map_err(Clone::clone)
}

/// Shape requirements shared by the three sweep criteria.
fn well_formed(sw: &Sweep) -> Result<String, String> {
    ensure(sw.stats.len() as u64 >= 100, || {
        format!("{} scenarios", sw.stats.len())
    })?;
    for (i, s) in sw.stats.iter().enumerate() {
        ensure(s.fully_admitted, || {
            format!("scenario {i} is not fully admitted")
        })?;
        ensure((3..=7).contains(&s.height), || {
            format!("scenario {i} height {}", s.height)
        })?;
        ensure(s.packets >= MIN_PACKETS, || {
            format!("scenario {i} has {} packets", s.packets)
        })?;
    }
    let min_packets = sw.stats.iter().map(|s| s.packets).min().unwrap_or(0);
    Ok(format!(
        "{} scenarios, {} packets (min {min_packets}), {} hop records",
        sw.stats.len(),
        sw.total(|s| s.packets),
        sw.total(|s| s.hop_records),
    ))
}

pub fn delay_bound() -> Outcome {
    let sw = sweep()?;
    let shape = well_formed(sw)?;
    let violations: usize = sw.total(|s| s.hop_violations);
    let overruns: u64 = sw.total(|s| s.overruns);
    ensure(violations == 0 && overruns == 0, || {
        format!(
            "{violations} hop delays above 2f, {overruns} frame overruns; {}",
            sw.first_failure(|s| s.hop_violations > 0 || s.overruns > 0)
        )
    })?;
    Ok(format!(
        "{shape}; 0 violations, 0 overruns; max delay/f {:.3}, max link utilization {:.3}",
        sw.max(|s| s.max_hop_ratio),
        sw.max(|s| s.max_utilization)
    ))
}

pub fn eligibility_wait() -> Outcome {
    let sw = sweep()?;
    let shape = well_formed(sw)?;
    let violations: usize = sw.total(|s| s.wait_violations);
    ensure(violations == 0, || {
        format!(
            "{violations} waits outside (0, f]; {}",
            sw.first_failure(|s| s.wait_violations > 0)
        )
    })?;
    let min_wait = sw.stats.iter().map(|s| s.min_wait_ns).min().unwrap_or(0);
    Ok(format!(
        "{shape}; 0 violations; min wait {min_wait} ns, max wait/f {:.6}",
        sw.max(|s| s.max_wait_ratio)
    ))
}

pub fn buffer_sufficiency() -> Outcome {
    let sw = sweep()?;
    let shape = well_formed(sw)?;
    let drops: u64 = sw.total(|s| s.overflow_drops);
    ensure(drops == 0, || {
        format!(
            "{drops} overflow drops; first in scenario {}",
            sw.stats
                .iter()
                .position(|s| s.overflow_drops > 0)
                .unwrap_or(0)
        )
    })?;
    Ok(format!(
        "{shape}; 0 overflow drops; max peak/budget {:.3}",
        sw.max(|s| s.max_fill_ratio)
    ))
}
