use std::path::PathBuf;

use cyclicsim_core::topology::{generate_one_switch, load_topology, LinkParams, NetworkGraph};
use cyclicsim_core::kpi::{export, join_rows, Export, ExportFormat};
use cyclicsim_core::{bounds_all, compute_kpis, load_scenario, run};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn check(g: &NetworkGraph) {
    for es in g.end_stations() {
        assert_eq!(g.degree(es), 1);
    }
}

#[test]
fn every_bundled_topology_loads() {
    let mut count = 0;
    for entry in std::fs::read_dir(data("topologies")).unwrap() {
        let path = entry.unwrap().path();
        let g = load_topology(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        check(&g);
        count += 1;
    }
    assert!(count >= 7);
}

#[test]
fn bundled_one_switch_is_the_minimal_star() {
    let g = load_topology(data("topologies/one_switch.topo")).unwrap();
    assert_eq!(g, generate_one_switch(2, LinkParams::default()).unwrap());
}

#[test]
fn orion_shape() {
    let g = load_topology(data("topologies/orion.topo")).unwrap();
    assert_eq!(g.switches().len(), 8);
    assert_eq!(g.end_stations().len(), 24);
    assert_eq!(g.backbone_link_count(), 10);
}

#[test]
fn kpi_exports_are_byte_identical() {
    let s = load_scenario(data("scenarios/ring4.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for round in 0..2 {
        let traces = run(&s.graph, &s.flows, &s.shaper, &s.delays, &s.sim).unwrap();
        let kpis = compute_kpis(&traces, &s.flows);
        let bounds = bounds_all(&s.flows, &s.graph, &s.shaper, &s.delays).unwrap();
        let rows = join_rows(&kpis, &bounds, None);
        for format in [ExportFormat::Csv, ExportFormat::Json] {
            let path = dir.path().join(format!("k{round}.{}", format.extension()));
            export(Export::Kpis(&rows), &path, format).unwrap();
            texts.push(std::fs::read_to_string(&path).unwrap());
        }
    }
    assert_eq!(texts[0], texts[2]);
    assert_eq!(texts[1], texts[3]);
    assert!(texts[0].starts_with("# delay_us"));
    serde_json::from_str::<serde_json::Value>(&texts[1]).unwrap();
}
