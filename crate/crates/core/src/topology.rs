//! Undirected end-station/switch graphs, synthetic generators, the topology
//! file format and deterministic shortest-path routing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Nanos;

/// Draw budget for generators that reject disconnected or non-simple graphs.
pub const GENERATION_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    EndStation,
    Switch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub name: String,
}

impl Node {
    pub fn switch(id: u32) -> Self {
        Node { id: NodeId(id), kind: NodeKind::Switch, name: format!("SW{id}") }
    }

    pub fn end_station(id: u32) -> Self {
        Node { id: NodeId(id), kind: NodeKind::EndStation, name: format!("ES{id}") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkParams {
    pub rate_bps: u64,
    pub propagation_delay: Nanos,
}

impl Default for LinkParams {
    /// 1 Gbit/s with 0.1 us of propagation delay.
    fn default() -> Self {
        LinkParams { rate_bps: 1_000_000_000, propagation_delay: Nanos(100) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub rate_bps: u64,
    pub propagation_delay: Nanos,
}

impl Link {
    pub fn new(a: u32, b: u32, params: LinkParams) -> Self {
        Link {
            a: NodeId(a),
            b: NodeId(b),
            rate_bps: params.rate_bps,
            propagation_delay: params.propagation_delay,
        }
    }

    fn key(&self) -> (NodeId, NodeId) {
        if self.a <= self.b {
            (self.a, self.b)
        } else {
            (self.b, self.a)
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("duplicate node id {0}")]
    DuplicateNodeId(NodeId),
    #[error("link {a}-{b} references unknown node {missing}")]
    DanglingLinkEndpoint { a: NodeId, b: NodeId, missing: NodeId },
    #[error("invalid link {a}-{b}: {reason}")]
    InvalidLink { a: NodeId, b: NodeId, reason: String },
    #[error("graph is disconnected; node {0} is unreachable")]
    DisconnectedGraph(NodeId),
    #[error("end station {0} must have exactly one link, to a switch")]
    EndStationDegreeViolation(NodeId),
    #[error("a topology needs at least one switch and two end stations")]
    TooFewNodes,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("generation failed after {0} attempts")]
    GenerationFailed(usize),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("no path from {0} to {1}")]
    NoPath(NodeId, NodeId),
    #[error("source and destination must be distinct end stations ({0} -> {1})")]
    InvalidEndpoints(NodeId, NodeId),
    #[error("invalid route: {0}")]
    InvalidRoute(String),
}

/// Validated undirected graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    nodes: BTreeMap<NodeId, Node>,
    links: Vec<Link>,
    // neighbor -> link index, neighbors sorted by id
    adjacency: BTreeMap<NodeId, BTreeMap<NodeId, usize>>,
}

/// Validates nodes and links and assembles a [`NetworkGraph`].
pub fn build_graph(nodes: Vec<Node>, links: Vec<Link>) -> Result<NetworkGraph, TopologyError> {
    let mut node_map = BTreeMap::new();
    for node in nodes {
        let id = node.id;
        if node_map.insert(id, node).is_some() {
            return Err(TopologyError::DuplicateNodeId(id));
        }
    }

    let mut adjacency: BTreeMap<NodeId, BTreeMap<NodeId, usize>> =
        node_map.keys().map(|id| (*id, BTreeMap::new())).collect();
    let mut seen = BTreeSet::new();
    for (idx, link) in links.iter().enumerate() {
        for end in [link.a, link.b] {
            if !node_map.contains_key(&end) {
                return Err(TopologyError::DanglingLinkEndpoint { a: link.a, b: link.b, missing: end });
            }
        }
        let invalid = |reason: &str| TopologyError::InvalidLink {
            a: link.a,
            b: link.b,
            reason: reason.to_string(),
        };
        if link.a == link.b {
            return Err(invalid("self loop"));
        }
        if link.rate_bps == 0 {
            return Err(invalid("rate must be positive"));
        }
        if link.propagation_delay < Nanos::ZERO {
            return Err(invalid("negative propagation delay"));
        }
        if !seen.insert(link.key()) {
            return Err(invalid("parallel link"));
        }
        adjacency.get_mut(&link.a).unwrap().insert(link.b, idx);
        adjacency.get_mut(&link.b).unwrap().insert(link.a, idx);
    }

    let switches = node_map.values().filter(|n| n.kind == NodeKind::Switch).count();
    let stations = node_map.len() - switches;
    if switches == 0 || stations < 2 {
        return Err(TopologyError::TooFewNodes);
    }

    for node in node_map.values().filter(|n| n.kind == NodeKind::EndStation) {
        let adj = &adjacency[&node.id];
        let ok = adj.len() == 1
            && adj.keys().all(|nb| node_map[nb].kind == NodeKind::Switch);
        if !ok {
            return Err(TopologyError::EndStationDegreeViolation(node.id));
        }
    }

    let graph = NetworkGraph { nodes: node_map, links, adjacency };
    let first = *graph.nodes.keys().next().unwrap();
    let reached = graph.reachable_from(first);
    if let Some(missing) = graph.nodes.keys().find(|id| !reached.contains(id)) {
        return Err(TopologyError::DisconnectedGraph(*missing));
    }
    Ok(graph)
}

impl NetworkGraph {
    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn is_switch(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.kind == NodeKind::Switch)
    }

    pub fn is_end_station(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.kind == NodeKind::EndStation)
    }

    pub fn end_stations(&self) -> Vec<NodeId> {
        self.nodes.values().filter(|n| n.kind == NodeKind::EndStation).map(|n| n.id).collect()
    }

    pub fn switches(&self) -> Vec<NodeId> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Switch).map(|n| n.id).collect()
    }

    /// Neighbors in ascending id order.
    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&id).into_iter().flat_map(|m| m.keys().copied())
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adjacency.get(&id).map_or(0, |m| m.len())
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.adjacency.get(&a)?.get(&b).map(|&i| &self.links[i])
    }

    /// Number of links whose endpoints are both switches.
    pub fn backbone_link_count(&self) -> usize {
        self.links.iter().filter(|l| self.is_switch(l.a) && self.is_switch(l.b)).count()
    }

    fn reachable_from(&self, start: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for nb in self.neighbors(n) {
                if seen.insert(nb) {
                    queue.push_back(nb);
                }
            }
        }
        seen
    }
}

/// An end-to-end path between two end stations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub path: Vec<NodeId>,
    pub sw_count: usize,
}

impl Route {
    /// Checks an explicit node list against the graph.
    pub fn from_path(graph: &NetworkGraph, path: Vec<NodeId>) -> Result<Route, TopologyError> {
        let bad = |m: String| TopologyError::InvalidRoute(m);
        if path.len() < 3 {
            return Err(bad(format!("path {path:?} is too short")));
        }
        let (first, last) = (path[0], path[path.len() - 1]);
        if !graph.is_end_station(first) || !graph.is_end_station(last) || first == last {
            return Err(TopologyError::InvalidEndpoints(first, last));
        }
        for &interior in &path[1..path.len() - 1] {
            if !graph.is_switch(interior) {
                return Err(bad(format!("interior node {interior} is not a switch")));
            }
        }
        for hop in path.windows(2) {
            if graph.link_between(hop[0], hop[1]).is_none() {
                return Err(bad(format!("no link between {} and {}", hop[0], hop[1])));
            }
        }
        let sw_count = path.len() - 2;
        Ok(Route { path, sw_count })
    }

    pub fn src(&self) -> NodeId {
        self.path[0]
    }

    pub fn dst(&self) -> NodeId {
        self.path[self.path.len() - 1]
    }

    /// Consecutive (from, to) pairs along the path.
    pub fn hops(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.path.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Minimum-hop route by BFS, expanding neighbors in ascending id order.
pub fn shortest_path(graph: &NetworkGraph, src: NodeId, dst: NodeId) -> Result<Route, TopologyError> {
    if src == dst || !graph.is_end_station(src) || !graph.is_end_station(dst) {
        return Err(TopologyError::InvalidEndpoints(src, dst));
    }
    let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut queue = VecDeque::from([src]);
    let mut visited = BTreeSet::from([src]);
    while let Some(n) = queue.pop_front() {
        if n == dst {
            break;
        }
        // end stations never relay
        if n != src && !graph.is_switch(n) {
            continue;
        }
        for nb in graph.neighbors(n) {
            if visited.insert(nb) {
                parent.insert(nb, n);
                queue.push_back(nb);
            }
        }
    }
    if !visited.contains(&dst) {
        return Err(TopologyError::NoPath(src, dst));
    }
    let mut path = vec![dst];
    let mut cur = dst;
    while let Some(&p) = parent.get(&cur) {
        path.push(p);
        cur = p;
    }
    path.reverse();
    let sw_count = path.iter().filter(|&&n| graph.is_switch(n)).count();
    Ok(Route { path, sw_count })
}

fn attach_end_stations(
    backbone: &[(u32, u32)],
    n_sw: u32,
    es_per_sw: u32,
    params: LinkParams,
) -> Result<NetworkGraph, TopologyError> {
    let mut nodes: Vec<Node> = (0..n_sw).map(Node::switch).collect();
    let mut links: Vec<Link> = backbone.iter().map(|&(a, b)| Link::new(a, b, params)).collect();
    let mut next = n_sw;
    for _round in 0..es_per_sw {
        for sw in 0..n_sw {
            nodes.push(Node::end_station(next));
            links.push(Link::new(sw, next, params));
            next += 1;
        }
    }
    build_graph(nodes, links)
}

fn backbone_connected(n: u32, edges: &[(u32, u32)]) -> bool {
    let mut parent: Vec<u32> = (0..n).collect();
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }
    let mut components = n;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra as usize] = rb;
            components -= 1;
        }
    }
    components <= 1
}

/// Star: switch 0 with end stations 1..=n_es.
pub fn generate_one_switch(n_es: u32, params: LinkParams) -> Result<NetworkGraph, TopologyError> {
    if n_es < 2 {
        return Err(TopologyError::InvalidParameter(format!(
            "one-switch topology needs at least 2 end stations, got {n_es}"
        )));
    }
    attach_end_stations(&[], 1, n_es, params)
}

pub fn generate_ring(n_sw: u32, es_per_sw: u32, params: LinkParams) -> Result<NetworkGraph, TopologyError> {
    if n_sw < 3 {
        return Err(TopologyError::InvalidParameter(format!("a ring needs at least 3 switches, got {n_sw}")));
    }
    if es_per_sw < 1 {
        return Err(TopologyError::InvalidParameter("es_per_sw must be at least 1".into()));
    }
    let backbone: Vec<_> = (0..n_sw).map(|i| (i, (i + 1) % n_sw)).collect();
    attach_end_stations(&backbone, n_sw, es_per_sw, params)
}

/// G(n, p) switch backbone. Pairs (i < j) are drawn in lexicographic order, one
/// uniform `f64` each; disconnected draws are discarded.
pub fn generate_erdos_renyi(
    n_sw: u32,
    p: f64,
    es_per_sw: u32,
    seed: u64,
    params: LinkParams,
) -> Result<NetworkGraph, TopologyError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(TopologyError::InvalidParameter(format!("edge probability {p} outside (0, 1]")));
    }
    if n_sw < 1 {
        return Err(TopologyError::InvalidParameter("n_sw must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..GENERATION_RETRIES {
        let mut edges = Vec::new();
        for i in 0..n_sw {
            for j in i + 1..n_sw {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        if backbone_connected(n_sw, &edges) {
            return attach_end_stations(&edges, n_sw, es_per_sw, params);
        }
    }
    Err(TopologyError::GenerationFailed(GENERATION_RETRIES))
}

/// Random `degree`-regular backbone via the pairing model with rejection.
pub fn generate_random_regular(
    n_sw: u32,
    degree: u32,
    es_per_sw: u32,
    seed: u64,
    params: LinkParams,
) -> Result<NetworkGraph, TopologyError> {
    if degree == 0 || degree >= n_sw || !(n_sw * degree).is_multiple_of(2) {
        return Err(TopologyError::InvalidParameter(format!(
            "no connected {degree}-regular graph on {n_sw} switches (need 0 < degree < n and n*degree even)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stubs: Vec<u32> = (0..n_sw).flat_map(|v| std::iter::repeat_n(v, degree as usize)).collect();
    'attempt: for _ in 0..GENERATION_RETRIES {
        stubs.shuffle(&mut rng);
        let mut seen = BTreeSet::new();
        let mut edges = Vec::with_capacity(stubs.len() / 2);
        for pair in stubs.chunks(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b || !seen.insert((a, b)) {
                continue 'attempt;
            }
            edges.push((a, b));
        }
        if backbone_connected(n_sw, &edges) {
            edges.sort_unstable();
            return attach_end_stations(&edges, n_sw, es_per_sw, params);
        }
    }
    Err(TopologyError::GenerationFailed(GENERATION_RETRIES))
}

/// Preferential attachment from an `m_attach`-node clique: every later switch
/// links to `m_attach` distinct earlier switches chosen proportionally to degree.
pub fn generate_barabasi_albert(
    n_sw: u32,
    m_attach: u32,
    es_per_sw: u32,
    seed: u64,
    params: LinkParams,
) -> Result<NetworkGraph, TopologyError> {
    if m_attach < 1 || m_attach >= n_sw {
        return Err(TopologyError::InvalidParameter(format!(
            "m_attach must satisfy 1 <= m < n_sw (m={m_attach}, n_sw={n_sw})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..m_attach {
        for j in i + 1..m_attach {
            edges.push((i, j));
        }
    }
    // every edge endpoint, so uniform picks are degree-proportional
    let mut endpoints: Vec<u32> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    for v in m_attach..n_sw {
        let mut targets = BTreeSet::new();
        while targets.len() < m_attach as usize {
            let t = if endpoints.is_empty() {
                rng.gen_range(0..v)
            } else {
                endpoints[rng.gen_range(0..endpoints.len())]
            };
            targets.insert(t);
        }
        for t in targets {
            edges.push((t, v));
            endpoints.push(t);
            endpoints.push(v);
        }
    }
    attach_end_stations(&edges, n_sw, es_per_sw, params)
}

// ---- file format ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub nodes: Vec<NodeDoc>,
    pub links: Vec<LinkDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: u32,
    pub kind: NodeKind,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub a: u32,
    pub b: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop_delay_us: Option<f64>,
}

impl TopologyDoc {
    pub fn into_graph(self) -> Result<NetworkGraph, TopologyError> {
        let defaults = LinkParams::default();
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| Node {
                id: NodeId(n.id),
                kind: n.kind,
                name: n.name.unwrap_or_else(|| match n.kind {
                    NodeKind::Switch => format!("SW{}", n.id),
                    NodeKind::EndStation => format!("ES{}", n.id),
                }),
            })
            .collect();
        let links = self
            .links
            .into_iter()
            .map(|l| Link {
                a: NodeId(l.a),
                b: NodeId(l.b),
                rate_bps: l.rate_bps.unwrap_or(defaults.rate_bps),
                propagation_delay: l
                    .prop_delay_us
                    .map_or(defaults.propagation_delay, Nanos::from_us_f64),
            })
            .collect();
        build_graph(nodes, links)
    }

    pub fn from_graph(graph: &NetworkGraph) -> Self {
        TopologyDoc {
            description: None,
            nodes: graph
                .nodes()
                .map(|n| NodeDoc { id: n.id.0, kind: n.kind, name: Some(n.name.clone()) })
                .collect(),
            links: graph
                .links()
                .iter()
                .map(|l| LinkDoc {
                    a: l.a.0,
                    b: l.b.0,
                    rate_bps: Some(l.rate_bps),
                    prop_delay_us: Some(l.propagation_delay.as_us_f64()),
                })
                .collect(),
        }
    }
}

pub fn parse_topology(text: &str) -> Result<NetworkGraph, TopologyError> {
    let doc: TopologyDoc = serde_json::from_str(text)
        .map_err(|e| TopologyError::ParseError { line: e.line(), message: e.to_string() })?;
    doc.into_graph()
}

pub fn load_topology(path: impl AsRef<Path>) -> Result<NetworkGraph, TopologyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| TopologyError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_topology(&text)
}

pub fn topology_to_string(graph: &NetworkGraph) -> String {
    let mut s = serde_json::to_string_pretty(&TopologyDoc::from_graph(graph)).expect("serializable");
    s.push('\n');
    s
}
