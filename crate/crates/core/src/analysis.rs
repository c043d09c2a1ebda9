//! Closed-form end-to-end delay bounds and static feasibility checks.
//!
//! Bounds are measured from frame emission (which already includes the
//! flow's offset). [`DelayBounds::from_period_start`] adds the offset back
//! for period-start accounting.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{DelayParams, TraceSet};
use crate::shaper::{CapacityMode, GroupConfig, ShaperConfig, ShaperError, ShaperKind};
use crate::time::Nanos;
use crate::topology::{NetworkGraph, NodeId, Route};
use crate::traffic::{validate_offsets, Flow, FlowId, FlowSet, OffsetViolation, QueueSelector};

/// Tolerance for comparing simulated delays against bounds, in microseconds.
pub const VALIDATION_EPSILON_US: f64 = 1e-6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Shaper(#[from] ShaperError),
    #[error("flow {0} missing from traces or bounds")]
    MissingFlow(FlowId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DelayBounds {
    pub flow: FlowId,
    pub gid: u8,
    pub sw_num: usize,
    pub slot: Nanos,
    pub wcd: Nanos,
    pub bcd: Nanos,
    pub d_queue: Nanos,
    pub xi: Nanos,
    pub phi: Nanos,
}

impl DelayBounds {
    pub fn from_period_start(mut self) -> Self {
        self.wcd += self.phi;
        self.bcd += self.phi;
        self
    }

    /// Width of the delay envelope, `wcd - bcd`.
    pub fn jitter_envelope(&self) -> Nanos {
        self.wcd - self.bcd
    }
}

/// Worst-case lumped network delay along a route: every link's propagation
/// delay, one processing delay per switch and one synchronization error term.
pub fn xi_worst(graph: &NetworkGraph, route: &Route, delays: &DelayParams) -> Nanos {
    let propagation: Nanos = route
        .hops()
        .map(|(a, b)| graph.link_between(a, b).map_or(Nanos::ZERO, |l| l.propagation_delay))
        .sum();
    propagation + delays.processing * route.sw_count as i64 + delays.sync_error_bound
}

/// `(wcd, bcd)` for a cyclic shaper with slot `slot` and per-switch
/// queuing delay `d_queue`:
/// `wcd = (n+1)*T + n*d_queue + xi`, `bcd = (n-1)*T + xi`.
pub fn envelope(sw_num: usize, slot: Nanos, d_queue: Nanos, xi: Nanos) -> Result<(Nanos, Nanos), AnalysisError> {
    if slot <= Nanos::ZERO {
        return Err(AnalysisError::InvalidParameter("slot length must be positive".into()));
    }
    if sw_num == 0 {
        return Err(AnalysisError::InvalidParameter("route has no switches".into()));
    }
    let n = sw_num as i64;
    let wcd = slot * (n + 1) + d_queue * n + xi;
    let bcd = slot * (n - 1) + xi;
    Ok((wcd, bcd))
}

fn make(flow: &Flow, gid: u8, slot: Nanos, d_queue: Nanos, xi: Nanos) -> Result<DelayBounds, AnalysisError> {
    let (wcd, bcd) = envelope(flow.sw_count(), slot, d_queue, xi)?;
    Ok(DelayBounds { flow: flow.id, gid, sw_num: flow.sw_count(), slot, wcd, bcd, d_queue, xi, phi: flow.phi })
}

/// Two-queue CQF: no queuing delay beyond the slot structure.
pub fn bounds_cqf(flow: &Flow, graph: &NetworkGraph, slot: Nanos, delays: &DelayParams) -> Result<DelayBounds, AnalysisError> {
    make(flow, flow.gid, slot, Nanos::ZERO, xi_worst(graph, &flow.route, delays))
}

/// Three-queue CQF. The worst case charges one slot of queuing at every
/// switch whatever the flow's qid.
pub fn bounds_3q(flow: &Flow, graph: &NetworkGraph, slot: Nanos, delays: &DelayParams) -> Result<DelayBounds, AnalysisError> {
    make(flow, flow.gid, slot, slot, xi_worst(graph, &flow.route, delays))
}

/// MCQF: the flow's group slot, plus one slot of queuing per switch for
/// group 1 (the three-queue group).
pub fn bounds_mcqf(
    flow: &Flow,
    graph: &NetworkGraph,
    groups: &[GroupConfig],
    delays: &DelayParams,
) -> Result<DelayBounds, AnalysisError> {
    let group = groups.iter().find(|g| g.gid == flow.gid).ok_or(ShaperError::UnknownGroup(flow.gid))?;
    let slot = group.slot_length();
    let d_queue = if group.gid == 1 { slot } else { Nanos::ZERO };
    make(flow, group.gid, slot, d_queue, xi_worst(graph, &flow.route, delays))
}

pub fn bounds_for(
    flow: &Flow,
    graph: &NetworkGraph,
    shaper: &ShaperConfig,
    delays: &DelayParams,
) -> Result<DelayBounds, AnalysisError> {
    let slot = || shaper.groups.first().map_or(Nanos::ZERO, |g| g.slot_length());
    match shaper.kind {
        ShaperKind::Cqf => bounds_cqf(flow, graph, slot(), delays),
        ShaperKind::ThreeQueueCqf => bounds_3q(flow, graph, slot(), delays),
        ShaperKind::Mcqf => bounds_mcqf(flow, graph, &shaper.groups, delays),
    }
}

pub fn bounds_all(
    flows: &FlowSet,
    graph: &NetworkGraph,
    shaper: &ShaperConfig,
    delays: &DelayParams,
) -> Result<Vec<DelayBounds>, AnalysisError> {
    flows.flows().iter().map(|f| bounds_for(f, graph, shaper, delays)).collect()
}

// ---- feasibility ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueueViolation {
    pub node: NodeId,
    pub next: NodeId,
    pub gid: u8,
    /// Hypercycle slot index in which the queue transmits.
    pub slot: i64,
    /// First flow whose frame finds too little free space.
    pub flow: FlowId,
    pub free: u64,
    pub needed: u64,
    pub limit: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BandwidthViolation {
    pub node: NodeId,
    pub next: NodeId,
    pub gid: u8,
    pub slot: i64,
    /// Worst-case link busy time within the slot.
    pub busy: Nanos,
    pub slot_length: Nanos,
}

/// A frame may reach the next node only after the slot it was sent in closed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LateArrival {
    pub node: NodeId,
    pub next: NodeId,
    pub gid: u8,
    pub slot: i64,
    /// Worst-case arrival measured from the slot start.
    pub arrival: Nanos,
    pub slot_length: Nanos,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FeasibilityReport {
    pub offset_violations: Vec<OffsetViolation>,
    pub queue_violations: Vec<QueueViolation>,
    pub bandwidth_violations: Vec<BandwidthViolation>,
    pub late_arrivals: Vec<LateArrival>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
struct Placement {
    flow: FlowId,
    payload: u32,
    tx: Nanos,
    /// Absolute slot in which the frame arrives at this port.
    received: i64,
}

type WindowKey = (NodeId, NodeId, usize, i64);

/// Maps one hypercycle of frames onto per-port, per-slot queues assuming
/// synchronized clocks, then checks queue capacity, per-slot link time and
/// that every frame reaches the next node within the slot it was sent in.
///
/// Link time in a window counts the group's own frames, frames of
/// higher-priority (lower gid) groups whose windows overlap it, and the
/// longest lower-priority frame that may still be on the wire when it opens.
pub fn check_feasibility(
    graph: &NetworkGraph,
    flows: &FlowSet,
    shaper: &ShaperConfig,
    delays: &DelayParams,
    frame_overhead: u32,
) -> Result<FeasibilityReport, AnalysisError> {
    let mut report = FeasibilityReport {
        offset_violations: validate_offsets(flows.flows()).violations,
        ..Default::default()
    };
    if flows.is_empty() {
        report.pass = report.offset_violations.is_empty();
        return Ok(report);
    }
    shaper.validate(flows.hypercycle_us())?;
    let hyper = flows.hypercycle();
    let slots_in_hyper = |g: usize| hyper.0 / shaper.groups[g].slot_length().0;

    let mut windows: BTreeMap<WindowKey, Vec<Placement>> = BTreeMap::new();
    let mut late_sources: BTreeMap<(NodeId, NodeId, u8, i64), Nanos> = BTreeMap::new();

    for (flow, k, first_arrival) in source_departures(graph, flows, delays, frame_overhead, hyper) {
        let gi = shaper.group_index(flow.gid)?;
        let group = &shaper.groups[gi];
        let slot_len = group.slot_length();
        let emission = flow.emission(k);
        let mut slot = first_arrival.slots(slot_len);
        if slot != emission.slots(slot_len) {
            let window = emission.slots(slot_len);
            let key = (flow.route.path[0], flow.route.path[1], group.gid, window.rem_euclid(slots_in_hyper(gi)));
            let arrival = first_arrival - slot_len * window;
            let worst = late_sources.entry(key).or_insert(arrival);
            *worst = (*worst).max(arrival);
        }
        let hold = match (group.queue_count, flow.qid) {
            (3, Some(QueueSelector::Tolerating)) => 2,
            _ => 1,
        };
        let tx_wire = flow.size + frame_overhead;
        for i in 1..flow.route.path.len() - 1 {
            let (node, next) = (flow.route.path[i], flow.route.path[i + 1]);
            let rate = graph.link_between(node, next).expect("routed over existing links").rate_bps;
            let drain = slot + hold;
            windows.entry((node, next, gi, drain.rem_euclid(slots_in_hyper(gi)))).or_default().push(Placement {
                flow: flow.id,
                payload: flow.size,
                tx: Nanos::transmission(tx_wire as u64, rate),
                received: slot,
            });
            slot = drain;
        }
    }
    for ((node, next, gid, slot), arrival) in late_sources {
        let slot_length = shaper.groups[shaper.group_index(gid)?].slot_length();
        report.late_arrivals.push(LateArrival { node, next, gid, slot, arrival, slot_length });
    }

    let mut priority: Vec<usize> = (0..shaper.groups.len()).collect();
    priority.sort_by_key(|&g| shaper.groups[g].gid);

    for (&(node, next, gi, slot), frames) in &windows {
        let group = &shaper.groups[gi];
        if let Some(v) = capacity_violation(shaper.capacity, frames) {
            report.queue_violations.push(QueueViolation { node, next, gid: group.gid, slot, ..v });
        }

        let slot_len = group.slot_length();
        let start = slot_len * slot;
        let end = start + slot_len;
        let own: Nanos = frames.iter().map(|p| p.tx).sum();
        let rank = priority.iter().position(|&g| g == gi).unwrap();
        let mut busy = own;
        for &hi in &priority[..rank] {
            let t = shaper.groups[hi].slot_length();
            let m = slots_in_hyper(hi);
            let first = start.slots(t);
            let last = Nanos(end.0 - 1).slots(t);
            for w in first..=last {
                if let Some(list) = windows.get(&(node, next, hi, w.rem_euclid(m))) {
                    busy += list.iter().map(|p| p.tx).sum();
                }
            }
        }
        let mut blocking = Nanos::ZERO;
        for &lo in &priority[rank + 1..] {
            let t = shaper.groups[lo].slot_length();
            if start.0 % t.0 != 0 {
                let w = start.slots(t).rem_euclid(slots_in_hyper(lo));
                if let Some(list) = windows.get(&(node, next, lo, w)) {
                    blocking = blocking.max(list.iter().map(|p| p.tx).max().unwrap_or_default());
                }
            }
        }
        busy += blocking;

        if busy > slot_len {
            report.bandwidth_violations.push(BandwidthViolation {
                node,
                next,
                gid: group.gid,
                slot,
                busy,
                slot_length: slot_len,
            });
        } else if graph.is_switch(next) {
            let link = graph.link_between(node, next).unwrap();
            let arrival = busy + link.propagation_delay + delays.processing;
            if arrival >= slot_len {
                report.late_arrivals.push(LateArrival { node, next, gid: group.gid, slot, arrival, slot_length: slot_len });
            }
        }
    }

    report.pass = report.offset_violations.is_empty()
        && report.queue_violations.is_empty()
        && report.bandwidth_violations.is_empty()
        && report.late_arrivals.is_empty();
    Ok(report)
}

/// Steady-state source serialization: every frame emitted in the second of
/// two hypercycles, with its classification time at the first switch. Frames
/// leave each end station FIFO in (emission, flow id, sequence) order.
fn source_departures<'a>(
    graph: &NetworkGraph,
    flows: &'a FlowSet,
    delays: &DelayParams,
    overhead: u32,
    hyper: Nanos,
) -> Vec<(&'a Flow, u64, Nanos)> {
    let mut per_source: BTreeMap<NodeId, Vec<(Nanos, FlowId, u64, &Flow)>> = BTreeMap::new();
    for f in flows.flows() {
        let mut k = 0;
        while f.emission(k) < hyper * 2 {
            per_source.entry(f.src).or_default().push((f.emission(k), f.id, k, f));
            k += 1;
        }
    }
    let mut out = Vec::new();
    for (_, mut list) in per_source {
        list.sort_by_key(|&(e, id, k, _)| (e, id, k));
        let mut free = Nanos::ZERO;
        for (e, _, k, f) in list {
            let link = graph.link_between(f.route.path[0], f.route.path[1]).expect("first hop exists");
            let start = e.max(free);
            free = start + Nanos::transmission((f.size + overhead) as u64, link.rate_bps);
            if e >= hyper {
                out.push((f, k, free + link.propagation_delay + delays.processing));
            }
        }
    }
    out
}

fn capacity_violation(capacity: CapacityMode, frames: &[Placement]) -> Option<QueueViolation> {
    let mut ordered: Vec<&Placement> = frames.iter().collect();
    ordered.sort_by_key(|p| (p.received, p.flow));
    let limit = capacity.limit();
    let mut occupied = 0u64;
    for p in ordered {
        let needed = capacity.cost(p.payload);
        if limit - occupied.min(limit) < needed {
            return Some(QueueViolation {
                node: NodeId(0),
                next: NodeId(0),
                gid: 0,
                slot: 0,
                flow: p.flow,
                free: limit.saturating_sub(occupied),
                needed,
                limit,
            });
        }
        occupied += needed;
    }
    None
}

// ---- trace validation ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowValidation {
    pub flow: FlowId,
    pub delivered: usize,
    pub min_us: Option<f64>,
    pub mean_us: Option<f64>,
    pub max_us: Option<f64>,
    pub bcd_us: f64,
    pub wcd_us: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub flows: Vec<FlowValidation>,
    pub pass: bool,
}

/// Checks that every measured delay lies within `[bcd - eps, wcd + eps]`.
/// Flows without deliveries pass vacuously.
pub fn validate_traces(traces: &TraceSet, bounds: &[DelayBounds]) -> Result<ValidationReport, AnalysisError> {
    let by_flow: BTreeMap<FlowId, &DelayBounds> = bounds.iter().map(|b| (b.flow, b)).collect();
    if let Some(id) = traces.flows.keys().find(|id| !by_flow.contains_key(id)) {
        return Err(AnalysisError::MissingFlow(*id));
    }
    if let Some(id) = by_flow.keys().find(|id| !traces.flows.contains_key(id)) {
        return Err(AnalysisError::MissingFlow(*id));
    }
    let mut report = ValidationReport { flows: Vec::new(), pass: true };
    for (&id, b) in &by_flow {
        let delays: Vec<Nanos> = traces.measured(id).filter_map(|f| f.delay()).collect();
        let min = delays.iter().min().map(|d| d.as_us_f64());
        let max = delays.iter().max().map(|d| d.as_us_f64());
        let mean = (!delays.is_empty())
            .then(|| delays.iter().map(|d| d.0 as f64).sum::<f64>() / delays.len() as f64 / 1_000.0);
        let (bcd_us, wcd_us) = (b.bcd.as_us_f64(), b.wcd.as_us_f64());
        let pass = min.is_none_or(|m| m >= bcd_us - VALIDATION_EPSILON_US)
            && max.is_none_or(|m| m <= wcd_us + VALIDATION_EPSILON_US);
        report.pass &= pass;
        report.flows.push(FlowValidation {
            flow: id,
            delivered: delays.len(),
            min_us: min,
            mean_us: mean,
            max_us: max,
            bcd_us,
            wcd_us,
            pass,
        });
    }
    Ok(report)
}
