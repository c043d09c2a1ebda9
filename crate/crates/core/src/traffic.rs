//! Periodic time-triggered flows, the hypercycle, offset validation and
//! synthetic flow generation.

use std::collections::BTreeSet;
use std::fmt;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Nanos;
use crate::topology::{shortest_path, NetworkGraph, NodeId, Route, TopologyError};

pub const TT_PRIORITY: u8 = 7;
pub const MIN_PAYLOAD: u32 = 55;
pub const MAX_PAYLOAD: u32 = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which queue of a 3-queue group a flow's frames are classified into,
/// relative to the slot they arrive in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueSelector {
    /// Forwarded in the next slot.
    Normal,
    /// Held for one additional slot.
    Tolerating,
}

impl fmt::Display for QueueSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueueSelector::Normal => "normal",
            QueueSelector::Tolerating => "tolerating",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flow {
    pub id: FlowId,
    pub src: NodeId,
    pub dst: NodeId,
    pub period_us: u64,
    pub deadline_us: u64,
    /// Payload bytes.
    pub size: u32,
    pub route: Route,
    pub phi: Nanos,
    pub priority: u8,
    pub gid: u8,
    pub qid: Option<QueueSelector>,
}

impl Flow {
    pub fn period(&self) -> Nanos {
        Nanos::from_us(self.period_us as i64)
    }

    pub fn deadline(&self) -> Nanos {
        Nanos::from_us(self.deadline_us as i64)
    }

    pub fn sw_count(&self) -> usize {
        self.route.sw_count
    }

    /// Emission time of the `k`-th frame.
    pub fn emission(&self, k: u64) -> Nanos {
        self.period() * k as i64 + self.phi
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrafficError {
    #[error("flow set is empty")]
    EmptyFlowSet,
    #[error("period must be positive")]
    ZeroPeriod,
    #[error("hypercycle overflows")]
    Overflow,
    #[error("duplicate flow id {0}")]
    DuplicateFlowId(FlowId),
    #[error("unknown flow id {0}")]
    UnknownFlowId(FlowId),
    #[error("flow {flow}: offset {phi} outside [0, {period_us}us]")]
    OffsetConstraintViolation { flow: FlowId, phi: Nanos, period_us: u64 },
    #[error("flow {flow}: {reason}")]
    InvalidFlow { flow: FlowId, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Least common multiple of all periods, in microseconds.
pub fn hypercycle(periods: &[u64]) -> Result<u64, TrafficError> {
    let (&first, rest) = periods.split_first().ok_or(TrafficError::EmptyFlowSet)?;
    if periods.contains(&0) {
        return Err(TrafficError::ZeroPeriod);
    }
    rest.iter().try_fold(first, |acc, &p| {
        (acc / gcd(acc, p)).checked_mul(p).ok_or(TrafficError::Overflow)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OffsetViolation {
    pub flow: FlowId,
    pub phi: Nanos,
    pub period_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OffsetReport {
    pub violations: Vec<OffsetViolation>,
}

impl OffsetReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every flow whose offset falls outside `[0, period]` (both ends inclusive).
pub fn validate_offsets<'a>(flows: impl IntoIterator<Item = &'a Flow>) -> OffsetReport {
    let violations = flows
        .into_iter()
        .filter(|f| f.phi < Nanos::ZERO || f.phi > f.period())
        .map(|f| OffsetViolation { flow: f.id, phi: f.phi, period_us: f.period_us })
        .collect();
    OffsetReport { violations }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSet {
    flows: Vec<Flow>,
    hypercycle_us: u64,
}

impl FlowSet {
    /// Flows are kept sorted by id. An empty set has a zero hypercycle.
    pub fn new(mut flows: Vec<Flow>) -> Result<Self, TrafficError> {
        flows.sort_by_key(|f| f.id);
        for pair in flows.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(TrafficError::DuplicateFlowId(pair[0].id));
            }
        }
        for f in &flows {
            check_flow(f)?;
        }
        let hypercycle_us = if flows.is_empty() {
            0
        } else {
            hypercycle(&flows.iter().map(|f| f.period_us).collect::<Vec<_>>())?
        };
        Ok(FlowSet { flows, hypercycle_us })
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn get(&self, id: FlowId) -> Option<&Flow> {
        self.flows.binary_search_by_key(&id, |f| f.id).ok().map(|i| &self.flows[i])
    }

    pub fn hypercycle_us(&self) -> u64 {
        self.hypercycle_us
    }

    pub fn hypercycle(&self) -> Nanos {
        Nanos::from_us(self.hypercycle_us as i64)
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn into_flows(self) -> Vec<Flow> {
        self.flows
    }
}

fn check_flow(f: &Flow) -> Result<(), TrafficError> {
    let invalid = |reason: &str| TrafficError::InvalidFlow { flow: f.id, reason: reason.into() };
    if f.period_us == 0 {
        return Err(TrafficError::ZeroPeriod);
    }
    if f.deadline_us == 0 {
        return Err(invalid("deadline must be positive"));
    }
    if f.src == f.dst {
        return Err(invalid("src equals dst"));
    }
    if f.route.src() != f.src || f.route.dst() != f.dst {
        return Err(invalid("route does not connect src to dst"));
    }
    if f.priority > 7 {
        return Err(invalid("priority must be 0..=7"));
    }
    if f.phi < Nanos::ZERO || f.phi > f.period() {
        return Err(TrafficError::OffsetConstraintViolation { flow: f.id, phi: f.phi, period_us: f.period_us });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowGenParams {
    pub n_flows: usize,
    pub period_choices_us: Vec<u64>,
    pub payload_range: (u32, u32),
    /// Weight per gid, gid = index + 1.
    pub gid_weights: Vec<u32>,
    /// Weights for (Normal, Tolerating).
    pub qid_weights: (u32, u32),
    pub seed: u64,
}

impl Default for FlowGenParams {
    fn default() -> Self {
        FlowGenParams {
            n_flows: 20,
            period_choices_us: vec![100, 200, 400],
            payload_range: (MIN_PAYLOAD, MAX_PAYLOAD),
            gid_weights: vec![1, 1, 1],
            qid_weights: (1, 0),
            seed: 0,
        }
    }
}

/// Random flows between distinct end stations, routed by [`shortest_path`],
/// with zero offsets.
pub fn generate_flows(graph: &NetworkGraph, params: &FlowGenParams) -> Result<FlowSet, TrafficError> {
    let bad = |m: String| Err(TrafficError::InvalidParameter(m));
    let stations = graph.end_stations();
    if stations.len() < 2 {
        return bad("graph needs at least two end stations".into());
    }
    let (lo, hi) = params.payload_range;
    if lo > hi || lo < MIN_PAYLOAD || hi > MAX_PAYLOAD {
        return bad(format!("payload range [{lo}, {hi}] not within [{MIN_PAYLOAD}, {MAX_PAYLOAD}]"));
    }
    if params.period_choices_us.is_empty() || params.period_choices_us.contains(&0) {
        return bad("period choices must be nonempty and positive".into());
    }
    let gid_dist = WeightedIndex::new(&params.gid_weights)
        .map_err(|e| TrafficError::InvalidParameter(format!("gid weights: {e}")))?;
    let qid_dist = WeightedIndex::new([params.qid_weights.0, params.qid_weights.1])
        .map_err(|e| TrafficError::InvalidParameter(format!("qid weights: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut flows = Vec::with_capacity(params.n_flows);
    for i in 0..params.n_flows {
        let src = stations[rng.gen_range(0..stations.len())];
        let mut dst = stations[rng.gen_range(0..stations.len() - 1)];
        if dst >= src {
            // skip over src to keep the draw uniform over the others
            let idx = stations.binary_search(&dst).unwrap();
            dst = stations[idx + 1];
        }
        let period_us = params.period_choices_us[rng.gen_range(0..params.period_choices_us.len())];
        let size = rng.gen_range(lo..=hi);
        let gid = gid_dist.sample(&mut rng) as u8 + 1;
        let qid = if qid_dist.sample(&mut rng) == 0 { QueueSelector::Normal } else { QueueSelector::Tolerating };
        let route = shortest_path(graph, src, dst)?;
        flows.push(Flow {
            id: FlowId(i as u32 + 1),
            src,
            dst,
            period_us,
            deadline_us: period_us,
            size,
            route,
            phi: Nanos::ZERO,
            priority: TT_PRIORITY,
            gid,
            qid: Some(qid),
        });
    }
    FlowSet::new(flows)
}

/// Per-flow output of an external scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub id: FlowId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gid: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qid: Option<QueueSelector>,
}

/// Overwrites offsets, groups and queue selectors from schedule entries.
pub fn apply_schedule(flows: FlowSet, entries: &[ScheduleEntry]) -> Result<FlowSet, TrafficError> {
    let mut flows = flows.into_flows();
    let ids: BTreeSet<FlowId> = flows.iter().map(|f| f.id).collect();
    if let Some(e) = entries.iter().find(|e| !ids.contains(&e.id)) {
        return Err(TrafficError::UnknownFlowId(e.id));
    }
    for entry in entries {
        let flow = flows.iter_mut().find(|f| f.id == entry.id).unwrap();
        if let Some(phi) = entry.phi_us {
            flow.phi = Nanos::from_us_f64(phi);
        }
        if let Some(gid) = entry.gid {
            flow.gid = gid;
        }
        if let Some(qid) = entry.qid {
            flow.qid = Some(qid);
        }
    }
    if let Some(v) = validate_offsets(&flows).violations.into_iter().next() {
        return Err(TrafficError::OffsetConstraintViolation { flow: v.flow, phi: v.phi, period_us: v.period_us });
    }
    FlowSet::new(flows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{generate_one_switch, generate_ring, LinkParams};
    use proptest::prelude::*;

    fn flow(id: u32, period_us: u64, phi_us: i64) -> Flow {
        let g = generate_one_switch(2, LinkParams::default()).unwrap();
        Flow {
            id: FlowId(id),
            src: NodeId(1),
            dst: NodeId(2),
            period_us,
            deadline_us: period_us,
            size: 100,
            route: shortest_path(&g, NodeId(1), NodeId(2)).unwrap(),
            phi: Nanos::from_us(phi_us),
            priority: TT_PRIORITY,
            gid: 1,
            qid: Some(QueueSelector::Normal),
        }
    }

    #[test]
    fn hypercycle_examples() {
        assert_eq!(hypercycle(&[100, 200, 400]), Ok(400));
        assert_eq!(hypercycle(&[400]), Ok(400));
        assert_eq!(hypercycle(&[300, 400]), Ok(1200));
        assert_eq!(hypercycle(&[]), Err(TrafficError::EmptyFlowSet));
        assert_eq!(hypercycle(&[u64::MAX, u64::MAX - 1]), Err(TrafficError::Overflow));
    }

    #[test]
    fn offset_boundaries_are_inclusive() {
        let flows = [flow(1, 100, 0), flow(2, 100, 100), flow(3, 100, 150)];
        let report = validate_offsets(&flows);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].flow, FlowId(3));
    }

    #[test]
    fn schedule_application() {
        let set = FlowSet::new(vec![flow(1, 100, 0)]).unwrap();
        let entry = |phi| ScheduleEntry { id: FlowId(1), phi_us: Some(phi), gid: Some(2), qid: None };
        let applied = apply_schedule(set.clone(), &[entry(50.0)]).unwrap();
        assert_eq!(applied.flows()[0].phi, Nanos::from_us(50));
        assert_eq!(applied.flows()[0].gid, 2);
        assert!(matches!(
            apply_schedule(set.clone(), &[entry(150.0)]),
            Err(TrafficError::OffsetConstraintViolation { .. })
        ));
        let unknown = ScheduleEntry { id: FlowId(999), phi_us: None, gid: None, qid: None };
        assert_eq!(apply_schedule(set, &[unknown]), Err(TrafficError::UnknownFlowId(FlowId(999))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert_eq!(
            FlowSet::new(vec![flow(1, 100, 0), flow(1, 200, 0)]),
            Err(TrafficError::DuplicateFlowId(FlowId(1)))
        );
    }

    #[test]
    fn generated_flows_are_deterministic_and_bounded() {
        let g = generate_ring(4, 2, LinkParams::default()).unwrap();
        let params = FlowGenParams { n_flows: 10, seed: 42, ..Default::default() };
        let a = generate_flows(&g, &params).unwrap();
        assert_eq!(a, generate_flows(&g, &params).unwrap());
        assert_eq!(a.len(), 10);
        assert_eq!(400 % a.hypercycle_us(), 0);
        for f in a.flows() {
            assert!((MIN_PAYLOAD..=MAX_PAYLOAD).contains(&f.size));
            assert_eq!(f.priority, TT_PRIORITY);
            assert_ne!(f.src, f.dst);
            assert_eq!(f.phi, Nanos::ZERO);
        }
        let bad = FlowGenParams { payload_range: (10, 1500), ..params };
        assert!(generate_flows(&g, &bad).is_err());
    }

    proptest! {
        #[test]
        fn hypercycle_is_least_common_multiple(periods in prop::collection::vec(1u64..60, 1..5)) {
            let h = hypercycle(&periods).unwrap();
            prop_assert!(periods.iter().all(|p| h.is_multiple_of(*p)));
            // brute force: no smaller positive common multiple
            let smaller = (1..h).find(|c| periods.iter().all(|p| c % p == 0));
            prop_assert_eq!(smaller, None);
        }

        #[test]
        fn generated_flows_satisfy_constraints(seed in any::<u64>(), n in 1usize..30) {
            let g = generate_ring(5, 1, LinkParams::default()).unwrap();
            let params = FlowGenParams { n_flows: n, seed, payload_range: (60, 900), ..Default::default() };
            let set = generate_flows(&g, &params).unwrap();
            prop_assert!(validate_offsets(set.flows()).is_valid());
            for f in set.flows() {
                prop_assert!((60..=900).contains(&f.size));
                prop_assert!(g.is_end_station(f.src) && g.is_end_station(f.dst));
            }
        }
    }
}
