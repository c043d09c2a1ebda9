//! Scenario files: topology, flows, shaper, delays and run settings in one
//! JSON document. Relative paths resolve against the scenario's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{validate_scenario, DelayParams, EngineError, SimConfig, DEFAULT_FRAME_OVERHEAD};
use crate::kpi::ExportFormat;
use crate::shaper::{CapacityMode, GroupConfig, ShaperConfig, ShaperError, ShaperKind};
use crate::time::Nanos;
use crate::topology::{
    generate_barabasi_albert, generate_erdos_renyi, generate_one_switch, generate_random_regular, generate_ring,
    load_topology, shortest_path, LinkParams, NetworkGraph, NodeId, Route, TopologyDoc, TopologyError,
};
use crate::traffic::{
    apply_schedule, generate_flows, Flow, FlowGenParams, FlowId, FlowSet, QueueSelector, ScheduleEntry, TrafficError,
    MAX_PAYLOAD, MIN_PAYLOAD, TT_PRIORITY,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Shaper(#[from] ShaperError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Parse { line: e.line(), message: e.to_string() })
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    OneSwitch,
    Ring,
    ErdosRenyi,
    RandomRegular,
    BarabasiAlbert,
}

/// Parameters for a generated topology. Fields not used by `kind` are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDoc {
    pub kind: GeneratorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switches: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_stations: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub es_per_switch: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_attach: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop_delay_us: Option<f64>,
}

impl GeneratorDoc {
    pub fn new(kind: GeneratorKind) -> Self {
        GeneratorDoc {
            kind,
            switches: None,
            end_stations: None,
            es_per_switch: None,
            p: None,
            degree: None,
            m_attach: None,
            seed: None,
            rate_bps: None,
            prop_delay_us: None,
        }
    }

    pub fn generate(&self) -> Result<NetworkGraph, TopologyError> {
        let d = LinkParams::default();
        let params = LinkParams {
            rate_bps: self.rate_bps.unwrap_or(d.rate_bps),
            propagation_delay: self.prop_delay_us.map_or(d.propagation_delay, Nanos::from_us_f64),
        };
        let need = |v: Option<u32>, name: &str| {
            v.ok_or_else(|| TopologyError::InvalidParameter(format!("{:?} generator needs '{name}'", self.kind)))
        };
        let es = self.es_per_switch.unwrap_or(1);
        let seed = self.seed.unwrap_or(0);
        match self.kind {
            GeneratorKind::OneSwitch => generate_one_switch(need(self.end_stations, "end_stations")?, params),
            GeneratorKind::Ring => generate_ring(need(self.switches, "switches")?, es, params),
            GeneratorKind::ErdosRenyi => {
                let p = self.p.ok_or_else(|| TopologyError::InvalidParameter("erdos_renyi generator needs 'p'".into()))?;
                generate_erdos_renyi(need(self.switches, "switches")?, p, es, seed, params)
            }
            GeneratorKind::RandomRegular => {
                generate_random_regular(need(self.switches, "switches")?, need(self.degree, "degree")?, es, seed, params)
            }
            GeneratorKind::BarabasiAlbert => generate_barabasi_albert(
                need(self.switches, "switches")?,
                need(self.m_attach, "m_attach")?,
                es,
                seed,
                params,
            ),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySource {
    File(String),
    Generate(GeneratorDoc),
    Inline(TopologyDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowDoc {
    pub id: u32,
    pub src: u32,
    pub dst: u32,
    pub period_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_us: Option<u64>,
    pub size_b: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gid: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qid: Option<QueueSelector>,
    /// Explicit node path; shortest path when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u8>,
}

impl FlowDoc {
    pub fn into_flow(self, graph: &NetworkGraph) -> Result<Flow, TrafficError> {
        let (src, dst) = (NodeId(self.src), NodeId(self.dst));
        let route = match self.route {
            Some(path) => Route::from_path(graph, path.into_iter().map(NodeId).collect())?,
            None => shortest_path(graph, src, dst)?,
        };
        if route.src() != src || route.dst() != dst {
            return Err(TrafficError::InvalidFlow {
                flow: FlowId(self.id),
                reason: "route endpoints do not match src/dst".into(),
            });
        }
        Ok(Flow {
            id: FlowId(self.id),
            src,
            dst,
            period_us: self.period_us,
            deadline_us: self.deadline_us.unwrap_or(self.period_us),
            size: self.size_b,
            route,
            phi: self.phi_us.map_or(Nanos::ZERO, Nanos::from_us_f64),
            priority: self.priority.unwrap_or(TT_PRIORITY),
            gid: self.gid.unwrap_or(1),
            qid: self.qid,
        })
    }

    pub fn from_flow(flow: &Flow) -> Self {
        FlowDoc {
            id: flow.id.0,
            src: flow.src.0,
            dst: flow.dst.0,
            period_us: flow.period_us,
            deadline_us: Some(flow.deadline_us),
            size_b: flow.size,
            phi_us: Some(flow.phi.as_us_f64()),
            gid: Some(flow.gid),
            qid: flow.qid,
            route: Some(flow.route.path.iter().map(|n| n.0).collect()),
            priority: (flow.priority != TT_PRIORITY).then_some(flow.priority),
        }
    }
}

/// A standalone flow file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowsDoc {
    pub flows: Vec<FlowDoc>,
}

pub fn parse_flows(text: &str, graph: &NetworkGraph) -> Result<FlowSet, ScenarioError> {
    let doc: FlowsDoc = parse_json(text)?;
    let flows = doc.flows.into_iter().map(|f| f.into_flow(graph)).collect::<Result<Vec<_>, _>>()?;
    Ok(FlowSet::new(flows)?)
}

pub fn flows_to_string(flows: &FlowSet) -> String {
    let doc = FlowsDoc { flows: flows.flows().iter().map(FlowDoc::from_flow).collect() };
    let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowGenDoc {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods_us: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_b: Option<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gid_weights: Option<Vec<u32>>,
    /// Weights for (normal, tolerating).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qid_weights: Option<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FlowGenDoc {
    pub fn params(&self) -> FlowGenParams {
        let d = FlowGenParams::default();
        FlowGenParams {
            n_flows: self.count,
            period_choices_us: self.periods_us.clone().unwrap_or(d.period_choices_us),
            payload_range: self.payload_b.unwrap_or((MIN_PAYLOAD, MAX_PAYLOAD)),
            gid_weights: self.gid_weights.clone().unwrap_or(d.gid_weights),
            qid_weights: self.qid_weights.unwrap_or(d.qid_weights),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDoc {
    pub gid: u8,
    pub slot_us: u64,
    pub queues: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaperDoc {
    pub kind: ShaperKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<GroupDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_capacity: Option<CapacityMode>,
}

impl ShaperDoc {
    pub fn config(&self) -> ShaperConfig {
        let mut cfg = ShaperConfig::default_for(self.kind);
        if let Some(groups) = &self.groups {
            cfg.groups = groups
                .iter()
                .map(|g| GroupConfig { gid: g.gid, slot_us: g.slot_us, queue_count: g.queues })
                .collect();
        }
        if let Some(cap) = self.queue_capacity {
            cfg.capacity = cap;
        }
        cfg
    }

    pub fn from_config(cfg: &ShaperConfig) -> Self {
        ShaperDoc {
            kind: cfg.kind,
            groups: Some(
                cfg.groups.iter().map(|g| GroupDoc { gid: g.gid, slot_us: g.slot_us, queues: g.queue_count }).collect(),
            ),
            queue_capacity: Some(cfg.capacity),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaysDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processing_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_error_bound_us: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypercycles: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_hypercycles: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_overhead_b: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<ExportFormat>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub topology: TopologySource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flows: Option<Vec<FlowDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_generator: Option<FlowGenDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<ScheduleEntry>>,
    pub shaper: ShaperDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<DelaysDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputDoc>,
}

/// A fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub description: Option<String>,
    pub graph: NetworkGraph,
    pub flows: FlowSet,
    pub shaper: ShaperConfig,
    pub delays: DelayParams,
    pub sim: SimConfig,
    pub output_dir: Option<PathBuf>,
    pub output_format: ExportFormat,
}

impl Scenario {
    pub fn from_doc(doc: ScenarioDoc, base_dir: &Path) -> Result<Self, ScenarioError> {
        let graph = match doc.topology {
            TopologySource::File(p) => load_topology(base_dir.join(p))?,
            TopologySource::Generate(g) => g.generate()?,
            TopologySource::Inline(t) => t.into_graph()?,
        };
        let flows = match (doc.flows, doc.flow_generator) {
            (Some(_), Some(_)) => {
                return Err(ScenarioError::Invalid("give either 'flows' or 'flow_generator', not both".into()))
            }
            (Some(fs), None) => {
                FlowSet::new(fs.into_iter().map(|f| f.into_flow(&graph)).collect::<Result<Vec<_>, _>>()?)?
            }
            (None, Some(gen)) => generate_flows(&graph, &gen.params())?,
            (None, None) => return Err(ScenarioError::Invalid("scenario has no flows".into())),
        };
        let flows = match doc.schedule {
            Some(entries) => apply_schedule(flows, &entries)?,
            None => flows,
        };
        let dd = DelayParams::default();
        let delays = doc.delays.unwrap_or_default();
        let delays = DelayParams {
            processing: delays.processing_us.map_or(dd.processing, Nanos::from_us_f64),
            sync_error_bound: delays.sync_error_bound_us.map_or(dd.sync_error_bound, Nanos::from_us_f64),
        };
        let sd = SimConfig::default();
        let sim = doc.sim.unwrap_or_default();
        let sim = SimConfig {
            hypercycles: sim.hypercycles.unwrap_or(sd.hypercycles),
            warmup_hypercycles: sim.warmup_hypercycles.unwrap_or(sd.warmup_hypercycles),
            seed: sim.seed.unwrap_or(sd.seed),
            frame_overhead: sim.frame_overhead_b.unwrap_or(DEFAULT_FRAME_OVERHEAD),
        };
        let output = doc.output.unwrap_or_default();
        Ok(Scenario {
            description: doc.description,
            graph,
            flows,
            shaper: doc.shaper.config(),
            delays,
            sim,
            output_dir: output.dir.map(|d| base_dir.join(d)),
            output_format: output.format.unwrap_or_default(),
        })
    }

    /// Self-contained document with inline topology and explicit flows.
    pub fn to_doc(&self) -> ScenarioDoc {
        let mut topo = TopologyDoc::from_graph(&self.graph);
        topo.description = None;
        ScenarioDoc {
            description: self.description.clone(),
            topology: TopologySource::Inline(topo),
            flows: Some(self.flows.flows().iter().map(FlowDoc::from_flow).collect()),
            flow_generator: None,
            schedule: None,
            shaper: ShaperDoc::from_config(&self.shaper),
            delays: Some(DelaysDoc {
                processing_us: Some(self.delays.processing.as_us_f64()),
                sync_error_bound_us: Some(self.delays.sync_error_bound.as_us_f64()),
            }),
            sim: Some(SimDoc {
                hypercycles: Some(self.sim.hypercycles),
                warmup_hypercycles: Some(self.sim.warmup_hypercycles),
                seed: Some(self.sim.seed),
                frame_overhead_b: Some(self.sim.frame_overhead),
            }),
            output: None,
        }
    }

    /// Same scenario under another shaper. Flows without a queue selector
    /// default to normal.
    pub fn with_shaper(&self, shaper: ShaperConfig) -> Self {
        let flows = self
            .flows
            .flows()
            .iter()
            .cloned()
            .map(|mut f| {
                f.qid.get_or_insert(QueueSelector::Normal);
                f
            })
            .collect();
        Scenario {
            flows: FlowSet::new(flows).expect("flows were valid before"),
            shaper,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        validate_scenario(&self.graph, &self.flows, &self.shaper, &self.sim)?;
        Ok(())
    }
}

pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    Scenario::from_doc(parse_json(text)?, base_dir)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&read(path)?, base)
}

pub fn scenario_to_string(scenario: &Scenario) -> String {
    let mut s = serde_json::to_string_pretty(&scenario.to_doc()).expect("serializable");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "topology": {"generate": {"kind": "one_switch", "end_stations": 3}},
        "flows": [
            {"id": 1, "src": 1, "dst": 3, "period_us": 200, "size_b": 158},
            {"id": 2, "src": 2, "dst": 3, "period_us": 400, "size_b": 458, "phi_us": 10, "qid": "tolerating"}
        ],
        "shaper": {"kind": "3q"}
    }"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = parse_scenario(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(s.flows.len(), 2);
        assert_eq!(s.flows.hypercycle_us(), 400);
        assert_eq!(s.shaper, ShaperConfig::three_queue(50));
        assert_eq!(s.delays, DelayParams::default());
        assert_eq!(s.sim.frame_overhead, DEFAULT_FRAME_OVERHEAD);
        assert_eq!(s.flows.get(FlowId(2)).unwrap().phi, Nanos::from_us(10));
        assert!(s.validate().is_err(), "flow 1 has no qid under 3q");
        let s = s.with_shaper(s.shaper.clone());
        assert_eq!(s.flows.get(FlowId(1)).unwrap().qid, Some(QueueSelector::Normal));
        assert_eq!(s.flows.get(FlowId(2)).unwrap().qid, Some(QueueSelector::Tolerating));
        s.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("\"shaper\"", "\"shapr\": 1, \"shaper\"");
        assert!(matches!(parse_scenario(&text, Path::new(".")), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\n  \"topology\": {\n  \"file\": 3 }\n}";
        match parse_scenario(text, Path::new(".")) {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_through_doc() {
        let s = parse_scenario(MINIMAL, Path::new(".")).unwrap().with_shaper(ShaperConfig::mcqf([25, 50, 100]));
        let back = parse_scenario(&scenario_to_string(&s), Path::new(".")).unwrap();
        assert_eq!(back.graph, s.graph);
        assert_eq!(back.flows, s.flows);
        assert_eq!(back.shaper, s.shaper);
        assert_eq!(back.delays, s.delays);
        assert_eq!(back.sim, s.sim);
    }

    #[test]
    fn schedule_overrides_offsets() {
        let text = MINIMAL.replace("\"shaper\"", "\"schedule\": [{\"id\": 1, \"phi_us\": 75}], \"shaper\"");
        let s = parse_scenario(&text, Path::new(".")).unwrap();
        assert_eq!(s.flows.get(FlowId(1)).unwrap().phi, Nanos::from_us(75));
    }

    #[test]
    fn both_flow_sources_rejected() {
        let text = MINIMAL.replace("\"shaper\"", "\"flow_generator\": {\"count\": 3}, \"shaper\"");
        assert!(matches!(parse_scenario(&text, Path::new(".")), Err(ScenarioError::Invalid(_))));
    }
}
