#![allow(dead_code)]

use std::path::PathBuf;

use cyclicsim_core::analysis::check_feasibility;
use cyclicsim_core::engine::{DelayParams, DEFAULT_FRAME_OVERHEAD};
use cyclicsim_core::scenario::{
    FlowDoc, GeneratorDoc, GeneratorKind, ScenarioDoc, ShaperDoc, SimDoc, TopologySource,
};
use cyclicsim_core::shaper::{ShaperConfig, ShaperKind};
use cyclicsim_core::time::Nanos;
use cyclicsim_core::topology::{load_topology, NetworkGraph, NodeId, Route};
use cyclicsim_core::traffic::{generate_flows, Flow, FlowGenParams, FlowId, FlowSet, QueueSelector};

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn data(rel: &str) -> PathBuf {
    root().join("data").join(rel)
}

/// Default shapers: CQF and 3-queue CQF at 50 us, MCQF at 25/50/100 us.
pub fn all_shapers() -> [ShaperConfig; 3] {
    [ShaperConfig::cqf(50), ShaperConfig::three_queue(50), ShaperConfig::mcqf([25, 50, 100])]
}

pub fn feasible_under_all(graph: &NetworkGraph, flows: &FlowSet) -> bool {
    all_shapers().iter().all(|s| {
        check_feasibility(graph, flows, s, &DelayParams::default(), DEFAULT_FRAME_OVERHEAD).is_ok_and(|r| r.pass)
    })
}

fn renumber(flows: &[Flow]) -> FlowSet {
    let flows = flows
        .iter()
        .enumerate()
        .map(|(i, f)| Flow { id: FlowId(i as u32 + 1), ..f.clone() })
        .collect();
    FlowSet::new(flows).expect("candidate flows are valid")
}

/// Greedily admits candidates, trying offsets in 25 us steps, until `want`
/// flows are feasible together under every default shaper.
pub fn place_offsets(graph: &NetworkGraph, candidates: Vec<Flow>, want: usize) -> Option<FlowSet> {
    let mut accepted: Vec<Flow> = Vec::new();
    for cand in candidates {
        if accepted.len() == want {
            break;
        }
        for k in 0..(cand.period_us / 25) as i64 {
            let mut trial = accepted.clone();
            trial.push(Flow { phi: Nanos::from_us(25 * k), ..cand.clone() });
            if feasible_under_all(graph, &renumber(&trial)) {
                accepted = trial;
                break;
            }
        }
    }
    (accepted.len() == want).then(|| renumber(&accepted))
}

pub struct Fixture {
    pub name: &'static str,
    pub topology: &'static str,
    pub description: &'static str,
    pub generator: Option<GeneratorDoc>,
    pub seed: u64,
}

fn generator(kind: GeneratorKind, switches: u32, es_per_switch: u32, f: impl FnOnce(&mut GeneratorDoc)) -> GeneratorDoc {
    let mut g = GeneratorDoc::new(kind);
    if kind == GeneratorKind::OneSwitch {
        g.end_stations = Some(switches);
    } else {
        g.switches = Some(switches);
        g.es_per_switch = Some(es_per_switch);
        g.seed = Some(1);
    }
    f(&mut g);
    g
}

/// The bundled scenarios with 20 feasible flows each.
pub fn fixtures() -> Vec<Fixture> {
    vec![
        Fixture {
            name: "one_switch",
            topology: "one_switch8",
            description: "One switch, eight end stations, 20 flows",
            generator: Some(generator(GeneratorKind::OneSwitch, 8, 0, |_| {})),
            seed: 11,
        },
        Fixture {
            name: "ring4",
            topology: "ring4",
            description: "Ring of 4 switches, two end stations each, 20 flows",
            generator: Some(generator(GeneratorKind::Ring, 4, 2, |_| {})),
            seed: 12,
        },
        Fixture {
            name: "erg6",
            topology: "erg6",
            description: "Erdos-Renyi backbone, 6 switches, p = 0.5, 20 flows",
            generator: Some(generator(GeneratorKind::ErdosRenyi, 6, 2, |g| g.p = Some(0.5))),
            seed: 13,
        },
        Fixture {
            name: "rrg6",
            topology: "rrg6",
            description: "Random 3-regular backbone, 6 switches, 20 flows",
            generator: Some(generator(GeneratorKind::RandomRegular, 6, 2, |g| g.degree = Some(3))),
            seed: 14,
        },
        Fixture {
            name: "bag6",
            topology: "bag6",
            description: "Barabasi-Albert backbone, 6 switches, m = 2, 20 flows",
            generator: Some(generator(GeneratorKind::BarabasiAlbert, 6, 2, |g| g.m_attach = Some(2))),
            seed: 15,
        },
    ]
}

pub const FIXTURE_FLOWS: usize = 20;

pub fn candidate_flows(graph: &NetworkGraph, seed: u64) -> Vec<Flow> {
    let params = FlowGenParams {
        n_flows: 200,
        period_choices_us: vec![100, 200, 400],
        payload_range: (55, 1500),
        gid_weights: vec![1, 1, 1],
        qid_weights: (1, 1),
        seed,
    };
    generate_flows(graph, &params).expect("generator parameters are valid").into_flows()
}

pub fn scenario_doc(description: &str, topology: &str, flows: &FlowSet, hypercycles: u64) -> ScenarioDoc {
    ScenarioDoc {
        description: Some(description.into()),
        topology: TopologySource::File(format!("../topologies/{topology}.topo")),
        flows: Some(flows.flows().iter().map(FlowDoc::from_flow).collect()),
        flow_generator: None,
        schedule: None,
        shaper: ShaperDoc { kind: ShaperKind::Cqf, groups: None, queue_capacity: None },
        delays: None,
        sim: Some(SimDoc { hypercycles: Some(hypercycles), warmup_hypercycles: Some(1), seed: Some(7), frame_overhead_b: None }),
        output: None,
    }
}

/// Low-load flows on the orion topology: three same-route flows, one per
/// MCQF group, plus a few others on disjoint routes.
pub fn orion_flows(graph: &NetworkGraph) -> FlowSet {
    let flow = |id: u32, path: &[u32], gid: u8, period_us: u64, size: u32| Flow {
        id: FlowId(id),
        src: NodeId(path[0]),
        dst: NodeId(*path.last().unwrap()),
        period_us,
        deadline_us: period_us,
        size,
        route: Route::from_path(graph, path.iter().copied().map(NodeId).collect()).unwrap(),
        phi: Nanos::ZERO,
        priority: 7,
        gid,
        qid: Some(QueueSelector::Normal),
    };
    let shared = [8, 0, 1, 2, 14];
    FlowSet::new(vec![
        flow(1, &shared, 1, 400, 200),
        flow(2, &shared, 2, 400, 200),
        flow(3, &shared, 3, 400, 200),
        flow(4, &[20, 4, 5, 6, 26], 1, 200, 100),
        flow(5, &[21, 4, 7, 29], 2, 400, 300),
        flow(6, &[11, 1, 12], 3, 400, 500),
        flow(7, &[17, 3, 0, 4, 22], 2, 200, 120),
    ])
    .unwrap()
}

pub fn load_fixture_topology(name: &str) -> NetworkGraph {
    load_topology(data(&format!("topologies/{name}.topo"))).unwrap()
}
