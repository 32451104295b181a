//! Brute-force reference simulator for tiny instances. It steps time one
//! microsecond at a time, lists every frame boundary of every (link, class)
//! up front, and releases held packets whenever the clock hits one of
//! them. At each tick it runs, in link order: completions, releases,
//! transmission starts; then arrivals in packet-id order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sgmh_core::buffering::{BudgetTable, BufferBudget};
use sgmh_core::metrics::AdmissionEcho;
use sgmh_core::sim::{
    DropReasonKey, Injection, LinkSpec, Route, SimConfig, Simulator, Topology, TraceEvent,
    TraceKind,
};
use sgmh_core::{ClassId, ClassSet, ConnectionId, LinkId, NodeId, PacketId};

use crate::{ensure, Outcome};

const US: u64 = 1_000;
const INSTANCES: u64 = 1_000;
const HORIZON: u64 = 20_000 * US;

#[derive(Debug, Clone)]
struct Instance {
    frames: Vec<u64>,
    nodes: Vec<u32>,
    links: Vec<LinkSpec>,
    phases: BTreeMap<(LinkId, ClassId), u64>,
    routes: Vec<Route>,
    injections: Vec<Injection>,
    max_packet: u64,
    budgets: Option<BTreeMap<(LinkId, ClassId), u64>>,
    drop_late: bool,
}

fn link(id: u32, src: u32, dst: u32, rng: &mut ChaCha8Rng) -> LinkSpec {
    LinkSpec {
        id: LinkId(id),
        src: NodeId(src),
        dst: NodeId(dst),
        capacity_bps: *[1_000_000, 500_000, 250_000].choose(rng).unwrap(),
        latency: rng.gen_range(0..=30) * US,
    }
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let n_classes = rng.gen_range(1..=2);
    let f1 = *[100u64, 200, 250, 300, 500].choose(rng).unwrap();
    let mut frames = vec![f1 * US];
    if n_classes == 2 {
        frames.push(rng.gen_range(f1 / 50 + 1..=40) * 50 * US);
    }
    let (nodes, links, paths): (Vec<u32>, Vec<LinkSpec>, Vec<Vec<u32>>) = match rng.gen_range(0..5)
    {
        0 => (vec![1, 2], vec![link(1, 1, 2, rng)], vec![vec![1]]),
        1 => (
            vec![1, 2, 3],
            vec![link(1, 1, 2, rng), link(2, 2, 3, rng)],
            vec![vec![1, 2], vec![1], vec![2]],
        ),
        2 => (
            vec![1, 2, 3],
            vec![link(1, 1, 3, rng), link(2, 2, 3, rng)],
            vec![vec![1], vec![2]],
        ),
        3 => (
            vec![1, 2, 3],
            vec![link(1, 1, 2, rng), link(2, 1, 3, rng)],
            vec![vec![1], vec![2]],
        ),
        _ => (
            vec![1, 2, 3],
            vec![link(1, 1, 2, rng), link(2, 2, 3, rng), link(3, 1, 3, rng)],
            vec![vec![1, 2], vec![3], vec![1], vec![2]],
        ),
    };
    let mut phases = BTreeMap::new();
    for l in &links {
        for (i, &f) in frames.iter().enumerate() {
            phases.insert((l.id, ClassId(i as u32 + 1)), rng.gen_range(0..f / US) * US);
        }
    }
    let drop_late = rng.gen_bool(0.3);
    let routes: Vec<Route> = (1..=rng.gen_range(1..=3u32))
        .map(|c| Route {
            connection: ConnectionId(c),
            class: ClassId(rng.gen_range(1..=n_classes as u32)),
            path: paths
                .choose(rng)
                .unwrap()
                .iter()
                .map(|&l| LinkId(l))
                .collect(),
            deadline: if rng.gen_bool(0.3) {
                rng.gen_range(50..=2_000) * US
            } else {
                HORIZON * 10
            },
        })
        .collect();
    let max_packet = rng.gen_range(20..=200);
    let n_packets = rng.gen_range(1..=10);
    let mut injections: Vec<Injection> = (0..n_packets)
        .map(|_| {
            let route = routes.choose(rng).unwrap();
            let time = if rng.gen_bool(0.3) {
                // land exactly on a boundary of the first link
                let f = frames[route.class.0 as usize - 1];
                phases[&(route.path[0], route.class)] + rng.gen_range(0..4) * f
            } else {
                rng.gen_range(0..3_000) * US
            };
            Injection {
                time,
                connection: route.connection,
                size_bits: rng.gen_range(1..=max_packet),
            }
        })
        .collect();
    injections.sort_by_key(|i| (i.time, i.connection));
    let budgets = rng.gen_bool(0.3).then(|| {
        let mut b = BTreeMap::new();
        for l in &links {
            for i in 0..frames.len() {
                b.insert(
                    (l.id, ClassId(i as u32 + 1)),
                    rng.gen_range(0..=3 * max_packet),
                );
            }
        }
        b
    });
    Instance {
        frames,
        nodes,
        links,
        phases,
        routes,
        injections,
        max_packet,
        budgets,
        drop_late,
    }
}

fn engine(inst: &Instance) -> Result<(Vec<TraceEvent>, Vec<u64>), String> {
    let budgets = inst.budgets.as_ref().map(|b| {
        BudgetTable::new(
            b.iter()
                .map(|(&(link, class), &bits)| BufferBudget {
                    link,
                    class,
                    y: 1.0,
                    load_bps: 0,
                    frame: inst.frames[class.0 as usize - 1],
                    budget_bits: bits,
                })
                .collect(),
        )
    });
    let config = SimConfig {
        classes: ClassSet::from_frames(&inst.frames).map_err(|e| e.to_string())?,
        max_packet_bits: inst.max_packet,
        topology: Topology::new(
            inst.nodes.iter().map(|&n| NodeId(n)),
            inst.links.iter().copied(),
        )
        .map_err(|e| e.to_string())?,
        phases: inst.phases.clone(),
        budgets,
        routes: inst.routes.clone(),
        horizon: HORIZON,
        warm_up: 0,
        drop_late: inst.drop_late,
        record_trace: true,
        admission: AdmissionEcho::default(),
    };
    let mut sim = Simulator::new(config).map_err(|e| e.to_string())?;
    for inj in &inst.injections {
        sim.inject(*inj).map_err(|e| e.to_string())?;
    }
    let out = sim.run();
    let overruns = out.metrics.ports.iter().map(|p| p.frame_overruns).collect();
    Ok((out.trace, overruns))
}

struct Pkt {
    id: PacketId,
    route: usize,
    class: usize,
    size: u64,
    created: u64,
    /// Index of the next link on the route.
    hop: usize,
}

struct Wire {
    boundaries: Vec<BTreeSet<u64>>,
    held: Vec<usize>,
    eligible: Vec<VecDeque<(usize, u64)>>,
    /// (packet, completion, frame end of the instance it was released in)
    busy: Option<(usize, u64, u64)>,
    overruns: u64,
}

fn brute_force(inst: &Instance) -> (Vec<TraceEvent>, Vec<u64>) {
    let n_classes = inst.frames.len();
    let mut wires: Vec<Wire> = inst
        .links
        .iter()
        .map(|l| Wire {
            boundaries: (0..n_classes)
                .map(|c| {
                    let f = inst.frames[c];
                    let mut b = inst.phases[&(l.id, ClassId(c as u32 + 1))];
                    let mut set = BTreeSet::new();
                    while b <= HORIZON {
                        set.insert(b);
                        b += f;
                    }
                    set
                })
                .collect(),
            held: Vec::new(),
            eligible: vec![VecDeque::new(); n_classes],
            busy: None,
            overruns: 0,
        })
        .collect();
    let wire_of: BTreeMap<LinkId, usize> = inst
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id, i))
        .collect();
    let route_of: BTreeMap<ConnectionId, usize> = inst
        .routes
        .iter()
        .enumerate()
        .map(|(i, r)| (r.connection, i))
        .collect();

    let mut pkts: Vec<Pkt> = Vec::new();
    let mut arrivals: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, inj) in inst.injections.iter().enumerate() {
        let r = route_of[&inj.connection];
        pkts.push(Pkt {
            id: PacketId(i as u64),
            route: r,
            class: inst.routes[r].class.0 as usize - 1,
            size: inj.size_bits,
            created: inj.time,
            hop: 0,
        });
        arrivals.entry(inj.time).or_default().push(i);
    }

    let mut trace = Vec::new();
    let mut t = 0;
    while t <= HORIZON {
        for (w, l) in inst.links.iter().enumerate() {
            if let Some((p, end, _)) = wires[w].busy {
                if end == t {
                    wires[w].busy = None;
                    trace.push(ev(t, TraceKind::TxEnd, pkts[p].id, l.src, Some(l.id)));
                    pkts[p].hop += 1;
                    arrivals.entry(t + l.latency).or_default().push(p);
                }
            }
        }
        for (w, l) in inst.links.iter().enumerate() {
            for c in 0..n_classes {
                if !wires[w].boundaries[c].contains(&t) {
                    continue;
                }
                let (release, keep): (Vec<usize>, Vec<usize>) =
                    wires[w].held.iter().partition(|&&p| pkts[p].class == c);
                wires[w].held = keep;
                for p in release {
                    trace.push(ev(t, TraceKind::Eligible, pkts[p].id, l.src, Some(l.id)));
                    wires[w].eligible[c].push_back((p, t + inst.frames[c]));
                }
            }
        }
        for (w, l) in inst.links.iter().enumerate() {
            if wires[w].busy.is_some() {
                continue;
            }
            let Some(c) = (0..n_classes).find(|&c| !wires[w].eligible[c].is_empty()) else {
                continue;
            };
            let (p, frame_end) = wires[w].eligible[c].pop_front().unwrap();
            let end = t + pkts[p].size * 1_000_000_000 / l.capacity_bps;
            if end > frame_end {
                wires[w].overruns += 1;
            }
            wires[w].busy = Some((p, end, frame_end));
            trace.push(ev(t, TraceKind::TxStart, pkts[p].id, l.src, Some(l.id)));
        }
        if let Some(mut now) = arrivals.remove(&t) {
            now.sort_by_key(|&p| pkts[p].id);
            for p in now {
                let route = &inst.routes[pkts[p].route];
                let hop = pkts[p].hop;
                let late = t - pkts[p].created > route.deadline;
                if hop == route.path.len() {
                    let last = &inst.links[wire_of[route.path.last().unwrap()]];
                    trace.push(ev(t, TraceKind::Deliver, pkts[p].id, last.dst, None));
                    continue;
                }
                let w = wire_of[&route.path[hop]];
                let l = &inst.links[w];
                if late && inst.drop_late {
                    trace.push(ev(
                        t,
                        TraceKind::Drop(DropReasonKey::Late),
                        pkts[p].id,
                        l.src,
                        Some(l.id),
                    ));
                    continue;
                }
                trace.push(ev(t, TraceKind::Arrive, pkts[p].id, l.src, Some(l.id)));
                if let Some(budgets) = &inst.budgets {
                    let c = pkts[p].class;
                    let queued: u64 = wires[w]
                        .held
                        .iter()
                        .filter(|&&q| pkts[q].class == c)
                        .map(|&q| pkts[q].size)
                        .chain(wires[w].eligible[c].iter().map(|&(q, _)| pkts[q].size))
                        .sum();
                    if queued + pkts[p].size > budgets[&(l.id, ClassId(c as u32 + 1))] {
                        trace.push(ev(
                            t,
                            TraceKind::Drop(DropReasonKey::Overflow),
                            pkts[p].id,
                            l.src,
                            Some(l.id),
                        ));
                        continue;
                    }
                }
                wires[w].held.push(p);
            }
        }
        t += US;
    }
    let overruns = wires.iter().map(|w| w.overruns).collect();
    (trace, overruns)
}

fn ev(
    time: u64,
    kind: TraceKind,
    packet: PacketId,
    node: NodeId,
    link: Option<LinkId>,
) -> TraceEvent {
    TraceEvent {
        time,
        kind,
        packet,
        node,
        link,
    }
}

pub fn criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b5e_55ed);
    let mut events = 0usize;
    let mut packets = 0usize;
    let mut overruns = 0u64;
    let mut drops = 0usize;
    for n in 0..INSTANCES {
        let inst = instance(&mut rng);
        let (mut got, got_overruns) = engine(&inst)?;
        ensure(got.windows(2).all(|w| w[0].time <= w[1].time), || {
            format!("instance {n}: engine trace out of time order")
        })?;
        let (mut want, want_overruns) = brute_force(&inst);
        got.sort();
        want.sort();
        if got != want {
            let at = got
                .iter()
                .zip(&want)
                .position(|(a, b)| a != b)
                .unwrap_or(got.len().min(want.len()));
            return Err(format!(
                "instance {n}: traces differ at event {at}: engine {:?} vs reference {:?} \
                 ({} vs {} events); instance {inst:?}",
                got.get(at),
                want.get(at),
                got.len(),
                want.len()
            ));
        }
        ensure(got_overruns == want_overruns, || {
            format!("instance {n}: overruns {got_overruns:?} vs {want_overruns:?}")
        })?;
        events += got.len();
        packets += inst.injections.len();
        overruns += got_overruns.iter().sum::<u64>();
        drops += got
            .iter()
            .filter(|e| matches!(e.kind, TraceKind::Drop(_)))
            .count();
    }
    Ok(format!(
        "{INSTANCES} instances, {packets} packets, {events} trace events equal \
         ({drops} drops, {overruns} overruns matched)"
    ))
}
