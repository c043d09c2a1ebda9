//! Deterministic discrete-event simulation of TT frames through cyclic
//! shapers.
//!
//! Frame lifecycle: a source end station emits frame `k` of a flow at
//! `k * period + phi` and serializes it immediately (sources are not gated).
//! At each switch the frame is classified after the processing delay, using
//! the switch's local clock, and waits in a shaper queue until its gate
//! opens. Frames released at a slot boundary are sent back to back; a frame
//! that would not finish before its group's slot closes is held for the
//! queue's next transmitting slot and counted as a slot overrun.
//!
//! Events at equal timestamps run in a fixed order: slot boundaries, then
//! emissions and arrivals, then transmission completions. Within a class the
//! order is (node id, flow id or neighbor id, sequence or gid).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shaper::{PortShaper, QueuedFrame, ShaperConfig, ShaperError};
use crate::time::Nanos;
use crate::topology::{NetworkGraph, NodeId};
use crate::traffic::{validate_offsets, Flow, FlowId, FlowSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayParams {
    /// Per switch traversal.
    pub processing: Nanos,
    /// Each switch's clock is off by a constant drawn from
    /// `[-sync_error_bound, +sync_error_bound]`.
    pub sync_error_bound: Nanos,
}

impl Default for DelayParams {
    fn default() -> Self {
        DelayParams { processing: Nanos::from_us(1), sync_error_bound: Nanos::ZERO }
    }
}

pub const DEFAULT_FRAME_OVERHEAD: u32 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub hypercycles: u64,
    pub warmup_hypercycles: u64,
    pub seed: u64,
    /// Bytes added to the payload on the wire (header, FCS, preamble, IFG).
    pub frame_overhead: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { hypercycles: 10, warmup_hypercycles: 0, seed: 0, frame_overhead: DEFAULT_FRAME_OVERHEAD }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("scenario failed validation: {0}")]
    Validation(String),
    #[error("frame has no hop {0}")]
    UnknownHop(usize),
}

impl From<ShaperError> for EngineError {
    fn from(e: ShaperError) -> Self {
        EngineError::Validation(e.to_string())
    }
}

/// Timestamps of one frame at one transmitting node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopRecord {
    pub node: NodeId,
    pub arrival: Nanos,
    pub enqueue: Nanos,
    pub dequeue: Nanos,
    pub tx_start: Nanos,
    pub tx_end: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub flow: FlowId,
    pub seq: u64,
    pub payload: u32,
    pub wire_bytes: u32,
    pub emission: Nanos,
    /// Source end station first, then every switch on the route.
    pub hops: Vec<HopRecord>,
    pub delivery: Option<Nanos>,
    pub dropped_at: Option<NodeId>,
    pub slot_overruns: u32,
}

impl FrameRecord {
    /// End-to-end delay, emission to delivery.
    pub fn delay(&self) -> Option<Nanos> {
        self.delivery.map(|d| d - self.emission)
    }
}

/// Time a frame spent gated in the queue at `hop` (0 is the source).
pub fn residence_time(frame: &FrameRecord, hop: usize) -> Result<Nanos, EngineError> {
    let h = frame.hops.get(hop).ok_or(EngineError::UnknownHop(hop))?;
    Ok(h.dequeue - h.enqueue)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub emitted: u64,
    pub delivered: Vec<FrameRecord>,
    pub dropped: Vec<FrameRecord>,
    pub slot_overruns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortOccupancy {
    pub node: NodeId,
    pub next: NodeId,
    pub gid: u8,
    pub max_occupied: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSet {
    pub hypercycle: Nanos,
    /// Frames emitted before this instant belong to the warmup.
    pub measure_from: Nanos,
    pub flows: BTreeMap<FlowId, FlowTrace>,
    pub occupancy: Vec<PortOccupancy>,
    pub drops: u64,
    pub slot_overruns: u64,
}

impl TraceSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace set serializes")
    }

    /// Delivered frames emitted after the warmup.
    pub fn measured(&self, flow: FlowId) -> impl Iterator<Item = &FrameRecord> {
        let from = self.measure_from;
        self.flows.get(&flow).into_iter().flat_map(move |t| t.delivered.iter().filter(move |f| f.emission >= from))
    }
}

/// Checks everything `run` relies on.
pub fn validate_scenario(
    graph: &NetworkGraph,
    flows: &FlowSet,
    shaper: &ShaperConfig,
    sim: &SimConfig,
) -> Result<(), EngineError> {
    let fail = |m: String| Err(EngineError::Validation(m));
    if sim.hypercycles < 1 || sim.hypercycles <= sim.warmup_hypercycles {
        return fail(format!(
            "horizon of {} hypercycles must exceed warmup of {}",
            sim.hypercycles, sim.warmup_hypercycles
        ));
    }
    shaper.validate(flows.hypercycle_us())?;
    if let Some(v) = validate_offsets(flows.flows()).violations.first() {
        return fail(format!("flow {} offset {} outside [0, {}us]", v.flow, v.phi, v.period_us));
    }
    for f in flows.flows() {
        let group = shaper.group_for(f.gid)?;
        if group.queue_count == 3 && f.qid.is_none() {
            return Err(ShaperError::MissingQid(group.gid).into());
        }
        for (a, b) in f.route.hops() {
            if graph.link_between(a, b).is_none() {
                return fail(format!("flow {} routes over missing link {a}-{b}", f.id));
            }
        }
        if !graph.is_end_station(f.src) || !graph.is_end_station(f.dst) {
            return fail(format!("flow {} endpoints must be end stations", f.id));
        }
    }
    Ok(())
}

/// Constant per-switch clock offsets drawn from the run seed.
pub fn clock_offsets(graph: &NetworkGraph, delays: &DelayParams, seed: u64) -> BTreeMap<NodeId, Nanos> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = delays.sync_error_bound.0.max(0);
    graph
        .switches()
        .into_iter()
        .map(|sw| {
            let off = if bound == 0 { 0 } else { rng.gen_range(-bound..=bound) };
            (sw, Nanos(off))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Boundary { port: usize, group: usize },
    Emit { flow: usize, seq: u64 },
    Arrive { frame: usize },
    TxDone { port: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: Nanos,
    class: u8,
    keys: (u32, u32, u64),
    kind: EventKind,
}

struct SwitchPort {
    shaper: PortShaper,
    /// Frames released by the gate, per group, not yet on the wire.
    released: Vec<VecDeque<QueuedFrame>>,
    released_from: Vec<usize>,
    next_boundary: Vec<Nanos>,
    /// Group indices by ascending gid; lower gid wins the link.
    priority: Vec<usize>,
}

enum PortKind {
    Station(VecDeque<usize>),
    Switch(Box<SwitchPort>),
}

struct Port {
    node: NodeId,
    next: NodeId,
    rate_bps: u64,
    propagation: Nanos,
    busy: Option<usize>,
    kind: PortKind,
}

struct Sim<'a> {
    graph: &'a NetworkGraph,
    flows: &'a [Flow],
    delays: DelayParams,
    overhead: u32,
    horizon: Nanos,
    offsets: BTreeMap<NodeId, Nanos>,
    ports: Vec<Port>,
    port_index: BTreeMap<(NodeId, NodeId), usize>,
    frames: Vec<FrameRecord>,
    /// Frame -> index of its flow.
    frame_flow: Vec<usize>,
    events: BinaryHeap<Reverse<Event>>,
    in_flight: usize,
    emitting: usize,
    traces: BTreeMap<FlowId, FlowTrace>,
    overruns: u64,
    drops: u64,
}

/// Runs the scenario over `sim.hypercycles` hypercycles of emissions and
/// until every emitted frame is delivered or dropped.
pub fn run(
    graph: &NetworkGraph,
    flows: &FlowSet,
    shaper: &ShaperConfig,
    delays: &DelayParams,
    sim: &SimConfig,
) -> Result<TraceSet, EngineError> {
    validate_scenario(graph, flows, shaper, sim)?;
    let hypercycle = flows.hypercycle();
    let mut out = TraceSet {
        hypercycle,
        measure_from: hypercycle * sim.warmup_hypercycles as i64,
        ..Default::default()
    };
    if flows.is_empty() {
        return Ok(out);
    }

    let mut state = Sim::new(graph, flows.flows(), shaper, delays, sim, hypercycle);
    state.run();

    out.occupancy = state.occupancy();
    out.flows = state.traces;
    out.drops = state.drops;
    out.slot_overruns = state.overruns;
    Ok(out)
}

impl<'a> Sim<'a> {
    fn new(
        graph: &'a NetworkGraph,
        flows: &'a [Flow],
        shaper: &ShaperConfig,
        delays: &DelayParams,
        sim: &SimConfig,
        hypercycle: Nanos,
    ) -> Self {
        let offsets = clock_offsets(graph, delays, sim.seed);
        let mut ports = Vec::new();
        let mut port_index = BTreeMap::new();
        for node in graph.nodes() {
            for next in graph.neighbors(node.id) {
                let link = graph.link_between(node.id, next).unwrap();
                let kind = if graph.is_switch(node.id) {
                    let offset = offsets[&node.id];
                    let port = PortShaper::new(shaper, hypercycle, |g| offset.slots(g.slot_length()));
                    let next_boundary = port
                        .groups()
                        .iter()
                        .map(|g| g.clock.slot_length * (g.current_slot() + 1) - offset)
                        .collect();
                    let mut priority: Vec<usize> = (0..shaper.groups.len()).collect();
                    priority.sort_by_key(|&i| shaper.groups[i].gid);
                    PortKind::Switch(Box::new(SwitchPort {
                        released: vec![VecDeque::new(); shaper.groups.len()],
                        released_from: port.groups().iter().map(|g| g.transmitting()).collect(),
                        shaper: port,
                        next_boundary,
                        priority,
                    }))
                } else {
                    PortKind::Station(VecDeque::new())
                };
                port_index.insert((node.id, next), ports.len());
                ports.push(Port {
                    node: node.id,
                    next,
                    rate_bps: link.rate_bps,
                    propagation: link.propagation_delay,
                    busy: None,
                    kind,
                });
            }
        }
        let traces = flows.iter().map(|f| (f.id, FlowTrace::default())).collect();
        Sim {
            graph,
            flows,
            delays: *delays,
            overhead: sim.frame_overhead,
            horizon: hypercycle * sim.hypercycles as i64,
            offsets,
            ports,
            port_index,
            frames: Vec::new(),
            frame_flow: Vec::new(),
            events: BinaryHeap::new(),
            in_flight: 0,
            emitting: 0,
            traces,
            overruns: 0,
            drops: 0,
        }
    }

    fn push(&mut self, time: Nanos, kind: EventKind) {
        let (class, keys) = match kind {
            EventKind::Boundary { port, group } => {
                let p = &self.ports[port];
                let gid = match &p.kind {
                    PortKind::Switch(sw) => sw.shaper.group(group).config.gid,
                    PortKind::Station(_) => 0,
                };
                (0, (p.node.0, p.next.0, gid as u64))
            }
            EventKind::Emit { flow, seq } => {
                let f = &self.flows[flow];
                (1, (f.src.0, f.id.0, seq))
            }
            EventKind::Arrive { frame } => {
                let rec = &self.frames[frame];
                let node = self.flows[self.frame_flow[frame]].route.path[rec.hops.len()];
                (1, (node.0, rec.flow.0, rec.seq))
            }
            EventKind::TxDone { port } => {
                let frame = self.ports[port].busy.expect("transmitting");
                let rec = &self.frames[frame];
                (2, (self.ports[port].node.0, rec.flow.0, rec.seq))
            }
        };
        self.events.push(Reverse(Event { time, class, keys, kind }));
    }

    fn active(&self) -> bool {
        self.emitting > 0 || self.in_flight > 0
    }

    fn run(&mut self) {
        for (i, f) in self.flows.iter().enumerate() {
            if f.emission(0) < self.horizon {
                self.emitting += 1;
                self.push(f.emission(0), EventKind::Emit { flow: i, seq: 0 });
            }
        }
        for port in 0..self.ports.len() {
            if let PortKind::Switch(sw) = &self.ports[port].kind {
                let boundaries: Vec<_> = sw.next_boundary.iter().copied().enumerate().collect();
                for (group, at) in boundaries {
                    self.push(at, EventKind::Boundary { port, group });
                }
            }
        }

        while let Some(Reverse(ev)) = self.events.pop() {
            let now = ev.time;
            match ev.kind {
                EventKind::Boundary { port, group } => self.on_boundary(now, port, group),
                EventKind::Emit { flow, seq } => self.on_emit(now, flow, seq),
                EventKind::Arrive { frame } => self.on_arrive(now, frame),
                EventKind::TxDone { port } => self.on_tx_done(now, port),
            }
        }
    }

    fn on_emit(&mut self, now: Nanos, flow_idx: usize, seq: u64) {
        let flows = self.flows;
        let flow = &flows[flow_idx];
        let frame = self.frames.len();
        self.frames.push(FrameRecord {
            flow: flow.id,
            seq,
            payload: flow.size,
            wire_bytes: flow.size + self.overhead,
            emission: now,
            hops: vec![HopRecord { node: flow.src, arrival: now, enqueue: now, dequeue: now, ..Default::default() }],
            delivery: None,
            dropped_at: None,
            slot_overruns: 0,
        });
        self.frame_flow.push(flow_idx);
        self.in_flight += 1;
        self.traces.get_mut(&flow.id).unwrap().emitted += 1;

        let next = flow.emission(seq + 1);
        if next < self.horizon {
            self.push(next, EventKind::Emit { flow: flow_idx, seq: seq + 1 });
        } else {
            self.emitting -= 1;
        }

        let port = self.port_index[&(flow.route.path[0], flow.route.path[1])];
        if let PortKind::Station(fifo) = &mut self.ports[port].kind {
            fifo.push_back(frame);
        }
        self.try_start(now, port);
    }

    fn on_arrive(&mut self, now: Nanos, frame: usize) {
        let flows = self.flows;
        let flow = &flows[self.frame_flow[frame]];
        let hop = self.frames[frame].hops.len();
        let node = flow.route.path[hop];
        if hop == flow.route.path.len() - 1 {
            let rec = &mut self.frames[frame];
            rec.delivery = Some(now);
            self.in_flight -= 1;
            self.traces.get_mut(&flow.id).unwrap().delivered.push(rec.clone());
            return;
        }

        let processing = self.delays.processing;
        let payload = self.frames[frame].payload;
        self.frames[frame].hops.push(HopRecord { node, arrival: now - processing, enqueue: now, ..Default::default() });

        let port = self.port_index[&(node, flow.route.path[hop + 1])];
        let t_local = now + self.offsets[&node];
        let PortKind::Switch(sw) = &mut self.ports[port].kind else {
            unreachable!("interior route nodes are switches");
        };
        let (group, queue) = sw.shaper.classify(flow.gid, flow.qid, t_local).expect("validated before run");
        if sw.shaper.enqueue(group, queue, QueuedFrame { frame, payload }).is_err() {
            let rec = &mut self.frames[frame];
            rec.dropped_at = Some(node);
            self.in_flight -= 1;
            self.drops += 1;
            self.traces.get_mut(&flow.id).unwrap().dropped.push(rec.clone());
        }
    }

    fn on_tx_done(&mut self, now: Nanos, port: usize) {
        let frame = self.ports[port].busy.take().expect("port was transmitting");
        let next = self.ports[port].next;
        let mut arrive = now + self.ports[port].propagation;
        if self.graph.is_switch(next) {
            arrive += self.delays.processing;
        }
        self.push(arrive, EventKind::Arrive { frame });
        self.try_start(now, port);
    }

    fn on_boundary(&mut self, now: Nanos, port: usize, group: usize) {
        let PortKind::Switch(sw) = &mut self.ports[port].kind else {
            unreachable!("only switch ports are gated");
        };
        let leftover: Vec<QueuedFrame> = sw.released[group].drain(..).collect();
        if !leftover.is_empty() {
            for f in &leftover {
                self.frames[f.frame].slot_overruns += 1;
                let id = self.frames[f.frame].flow;
                self.traces.get_mut(&id).unwrap().slot_overruns += 1;
            }
            self.overruns += leftover.len() as u64;
            sw.shaper.restore(group, sw.released_from[group], leftover);
        }

        let new_slot = sw.shaper.group(group).current_slot() + 1;
        let drained = sw.shaper.rotate(group, new_slot);
        for f in &drained {
            self.frames[f.frame].hops.last_mut().unwrap().dequeue = now;
        }
        sw.released[group] = drained.into();
        sw.released_from[group] = sw.shaper.group(group).transmitting();
        let slot_length = sw.shaper.group(group).clock.slot_length;
        sw.next_boundary[group] = now + slot_length;

        if self.active() {
            self.push(now + slot_length, EventKind::Boundary { port, group });
        }
        self.try_start(now, port);
    }

    fn try_start(&mut self, now: Nanos, port_idx: usize) {
        let port = &mut self.ports[port_idx];
        if port.busy.is_some() {
            return;
        }
        let rate = port.rate_bps;
        let frame = match &mut port.kind {
            PortKind::Station(fifo) => fifo.pop_front(),
            PortKind::Switch(sw) => {
                let mut chosen = None;
                for &g in &sw.priority {
                    let Some(head) = sw.released[g].front() else { continue };
                    let tx = Nanos::transmission(self.frames[head.frame].wire_bytes as u64, rate);
                    if now + tx <= sw.next_boundary[g] {
                        chosen = sw.released[g].pop_front().map(|f| f.frame);
                        break;
                    }
                }
                chosen
            }
        };
        let Some(frame) = frame else { return };
        let tx = Nanos::transmission(self.frames[frame].wire_bytes as u64, rate);
        let hop = self.frames[frame].hops.last_mut().unwrap();
        hop.tx_start = now;
        hop.tx_end = now + tx;
        port.busy = Some(frame);
        self.push(now + tx, EventKind::TxDone { port: port_idx });
    }

    fn occupancy(&self) -> Vec<PortOccupancy> {
        let mut out = Vec::new();
        for port in &self.ports {
            if let PortKind::Switch(sw) = &port.kind {
                for g in sw.shaper.groups() {
                    out.push(PortOccupancy {
                        node: port.node,
                        next: port.next,
                        gid: g.config.gid,
                        max_occupied: g.max_occupied(),
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{generate_one_switch, generate_ring, shortest_path, LinkParams};
    use crate::traffic::{generate_flows, FlowGenParams, QueueSelector};
    use proptest::prelude::*;

    fn flow(g: &NetworkGraph, id: u32, src: u32, dst: u32, period_us: u64, phi_us: i64, size: u32) -> Flow {
        Flow {
            id: FlowId(id),
            src: NodeId(src),
            dst: NodeId(dst),
            period_us,
            deadline_us: period_us,
            size,
            route: shortest_path(g, NodeId(src), NodeId(dst)).unwrap(),
            phi: Nanos::from_us(phi_us),
            priority: 7,
            gid: 1,
            qid: Some(QueueSelector::Normal),
        }
    }

    /// SW0 with ES1..ES3; wire sizes 200, 500 and 100 bytes.
    fn timeline() -> (NetworkGraph, Vec<Flow>) {
        let g = generate_one_switch(3, LinkParams::default()).unwrap();
        let flows = vec![
            flow(&g, 1, 1, 3, 200, 0, 158),
            flow(&g, 2, 2, 3, 400, 10, 458),
            flow(&g, 3, 1, 2, 400, 60, 58),
        ];
        (g, flows)
    }

    fn sim(hypercycles: u64) -> SimConfig {
        SimConfig { hypercycles, ..Default::default() }
    }

    fn deliveries(t: &TraceSet, id: u32) -> Vec<i64> {
        t.flows[&FlowId(id)].delivered.iter().map(|f| f.delivery.unwrap().0).collect()
    }

    fn run_set(g: &NetworkGraph, flows: Vec<Flow>, shaper: &ShaperConfig) -> TraceSet {
        run(g, &FlowSet::new(flows).unwrap(), shaper, &DelayParams::default(), &sim(2)).unwrap()
    }

    #[test]
    fn cqf_timeline() {
        let (g, flows) = timeline();
        let t = run_set(&g, flows, &ShaperConfig::cqf(50));
        assert_eq!(deliveries(&t, 1), vec![51_700, 251_700, 451_700, 651_700]);
        assert_eq!(deliveries(&t, 2), vec![55_700, 455_700]);
        assert_eq!(deliveries(&t, 3), vec![100_900, 500_900]);

        let f2 = &t.flows[&FlowId(2)].delivered[0];
        assert_eq!(f2.hops[0].tx_start, Nanos(10_000));
        assert_eq!(f2.hops[0].tx_end, Nanos(14_000));
        let sw = f2.hops[1];
        assert_eq!(
            (sw.arrival.0, sw.enqueue.0, sw.dequeue.0, sw.tx_start.0, sw.tx_end.0),
            (14_100, 15_100, 50_000, 51_600, 55_600)
        );
        assert_eq!(f2.delay(), Some(Nanos(45_700)));
        assert_eq!(t.drops, 0);
        assert_eq!(t.slot_overruns, 0);
    }

    #[test]
    fn three_queue_timeline() {
        let (g, mut flows) = timeline();
        flows[1].qid = Some(QueueSelector::Tolerating);
        let t = run_set(&g, flows, &ShaperConfig::three_queue(50));
        assert_eq!(deliveries(&t, 1), vec![51_700, 251_700, 451_700, 651_700]);
        assert_eq!(deliveries(&t, 2), vec![104_100, 504_100]);
        assert_eq!(deliveries(&t, 3), vec![100_900, 500_900]);
        let sw = t.flows[&FlowId(2)].delivered[0].hops[1];
        assert_eq!((sw.dequeue.0, sw.tx_start.0), (100_000, 100_000));
    }

    #[test]
    fn mcqf_timeline() {
        let (g, mut flows) = timeline();
        flows[1].gid = 2;
        flows[2].gid = 3;
        let t = run_set(&g, flows, &ShaperConfig::mcqf([25, 50, 100]));
        assert_eq!(deliveries(&t, 1), vec![26_700, 226_700, 426_700, 626_700]);
        assert_eq!(deliveries(&t, 2), vec![54_100, 454_100]);
        assert_eq!(deliveries(&t, 3), vec![100_900, 500_900]);
    }

    #[test]
    fn three_queue_all_normal_matches_cqf() {
        let g = generate_ring(4, 2, LinkParams::default()).unwrap();
        let params = FlowGenParams { n_flows: 12, payload_range: (55, 300), seed: 5, ..Default::default() };
        let flows = generate_flows(&g, &params).unwrap();
        let delays = DelayParams::default();
        let a = run(&g, &flows, &ShaperConfig::cqf(50), &delays, &sim(3)).unwrap();
        let b = run(&g, &flows, &ShaperConfig::three_queue(50), &delays, &sim(3)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn residence_time_is_dequeue_minus_enqueue() {
        let (g, flows) = timeline();
        let t = run_set(&g, flows, &ShaperConfig::cqf(50));
        let f = &t.flows[&FlowId(2)].delivered[0];
        assert_eq!(residence_time(f, 1), Ok(Nanos(50_000 - 15_100)));
        assert_eq!(residence_time(f, 7), Err(EngineError::UnknownHop(7)));
    }

    #[test]
    fn warmup_excluded_from_measurement() {
        let (g, flows) = timeline();
        let cfg = SimConfig { hypercycles: 3, warmup_hypercycles: 1, ..Default::default() };
        let t = run(&g, &FlowSet::new(flows).unwrap(), &ShaperConfig::cqf(50), &DelayParams::default(), &cfg).unwrap();
        assert_eq!(t.measure_from, Nanos::from_us(400));
        assert_eq!(t.measured(FlowId(1)).count(), 4);
        assert_eq!(t.flows[&FlowId(1)].delivered.len(), 6);
    }

    #[test]
    fn bad_horizon_rejected() {
        let (g, flows) = timeline();
        let cfg = SimConfig { hypercycles: 1, warmup_hypercycles: 1, ..Default::default() };
        let r = run(&g, &FlowSet::new(flows).unwrap(), &ShaperConfig::cqf(50), &DelayParams::default(), &cfg);
        assert!(matches!(r, Err(EngineError::Validation(_))));
    }

    #[test]
    fn missing_qid_rejected_under_three_queues() {
        let (g, mut flows) = timeline();
        flows[0].qid = None;
        let r = run(&g, &FlowSet::new(flows).unwrap(), &ShaperConfig::three_queue(50), &DelayParams::default(), &sim(1));
        assert_eq!(r.unwrap_err(), ShaperError::MissingQid(1).into());
    }

    #[test]
    fn overflow_drops_are_counted() {
        let g = generate_one_switch(3, LinkParams::default()).unwrap();
        let flows = vec![flow(&g, 1, 1, 3, 100, 0, 100), flow(&g, 2, 2, 3, 100, 0, 100)];
        let shaper = ShaperConfig::cqf(50).with_capacity(crate::shaper::CapacityMode::Frames(1));
        let t = run_set(&g, flows, &shaper);
        assert_eq!(t.drops, 2);
        let emitted: u64 = t.flows.values().map(|f| f.emitted).sum();
        let done: usize = t.flows.values().map(|f| f.delivered.len() + f.dropped.len()).sum();
        assert_eq!(emitted as usize, done);
    }

    #[test]
    fn sync_offsets_within_bound() {
        let g = generate_ring(5, 1, LinkParams::default()).unwrap();
        let delays = DelayParams { sync_error_bound: Nanos(500), ..Default::default() };
        let offs = clock_offsets(&g, &delays, 9);
        assert_eq!(offs.len(), 5);
        assert!(offs.values().all(|o| o.0.abs() <= 500));
        assert_eq!(offs, clock_offsets(&g, &delays, 9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn conservation_causality_determinism(
            seed in any::<u64>(),
            kind in 0usize..3,
            n_flows in 1usize..10,
            sync_ns in 0i64..2_000,
        ) {
            let g = generate_ring(4, 2, LinkParams::default()).unwrap();
            let params = FlowGenParams {
                n_flows,
                payload_range: (55, 1500),
                qid_weights: (1, 1),
                seed,
                ..Default::default()
            };
            let flows = generate_flows(&g, &params).unwrap();
            let shaper = match kind {
                0 => ShaperConfig::cqf(50),
                1 => ShaperConfig::three_queue(50),
                _ => ShaperConfig::mcqf([25, 50, 100]),
            }.with_capacity(crate::shaper::CapacityMode::Frames(4));
            let delays = DelayParams { sync_error_bound: Nanos(sync_ns), ..Default::default() };
            let cfg = SimConfig { hypercycles: 2, seed, ..Default::default() };
            let a = run(&g, &flows, &shaper, &delays, &cfg).unwrap();
            let b = run(&g, &flows, &shaper, &delays, &cfg).unwrap();
            prop_assert_eq!(a.to_json(), b.to_json());

            for f in flows.flows() {
                let t = &a.flows[&f.id];
                prop_assert_eq!(t.emitted, 2 * flows.hypercycle_us() / f.period_us);
                prop_assert_eq!(t.emitted as usize, t.delivered.len() + t.dropped.len());
                for rec in &t.delivered {
                    prop_assert_eq!(rec.hops.len(), f.route.path.len() - 1);
                    let mut last = rec.emission;
                    for h in &rec.hops {
                        prop_assert!(last <= h.arrival && h.arrival <= h.enqueue);
                        prop_assert!(h.enqueue <= h.dequeue && h.dequeue <= h.tx_start && h.tx_start < h.tx_end);
                        last = h.tx_end;
                    }
                    prop_assert!(last < rec.delivery.unwrap());
                }
            }
        }
    }
}
