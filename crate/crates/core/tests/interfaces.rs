//! File-format integration: topology files with external latency matrices or
//! synthetic specs, plan files, coordinate files, and placement exports all
//! round-trip through the loaders the CLI uses.

use nova_core::costspace::Coordinates;
use nova_core::demo;
use nova_core::placement::PlacementFile;
use nova_core::plan::PlanSpec;
use nova_core::topology::{
    generate_synthetic, load_topology, save_latency_matrix, save_topology, LatencySource,
    SyntheticSpec, TopologyFile,
};

#[test]
fn topology_with_external_matrix_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let topo = demo::topology();
    let dense = topo.latency.to_dense(100).unwrap();
    save_latency_matrix(&dense, &dir.path().join("latency.txt")).unwrap();
    save_topology(&topo, &dir.path().join("topology.json"), Some("latency.txt")).unwrap();

    let loaded = load_topology(&dir.path().join("topology.json")).unwrap();
    assert_eq!(loaded.len(), topo.len());
    for i in 0..topo.len() {
        assert_eq!(loaded.node(topo.nodes[i].id).role, topo.nodes[i].role);
        for j in 0..topo.len() {
            assert!((loaded.latency.probe(i, j) - topo.latency.probe(i, j)).abs() < 1e-9);
        }
    }
}

#[test]
fn topology_with_synthetic_spec_regenerates_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { n_nodes: 40, n_clusters: 2, seed: 9, ..Default::default() };
    let generated = generate_synthetic(&spec).unwrap();
    let workload = nova_core::topology::WorkloadSpec::default();
    let assigned = nova_core::topology::assign_workload(&generated, &workload).unwrap();

    let file = TopologyFile {
        nodes: assigned.nodes.clone(),
        latency_path: None,
        latency_format: None,
        synthetic_spec: Some(spec),
    };
    let path = dir.path().join("topo.json");
    std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
    let loaded = load_topology(&path).unwrap();
    assert!(matches!(loaded.latency, LatencySource::Points(_)));
    assert_eq!(loaded.latency.probe(3, 7), assigned.latency.probe(3, 7));
    assert_eq!(loaded.sink().unwrap(), assigned.sink().unwrap());
}

#[test]
fn missing_latency_description_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = TopologyFile {
        nodes: demo::topology().nodes,
        latency_path: None,
        latency_format: None,
        synthetic_spec: None,
    };
    let path = dir.path().join("topo.json");
    std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
    assert!(load_topology(&path).is_err());
}

#[test]
fn placement_export_matches_the_documented_schema() {
    let topo = demo::topology();
    let coords = demo::ground_truth();
    let (placement, _) = nova_core::baselines::run_strategy(
        nova_core::baselines::Strategy::Nova,
        &topo,
        &coords,
        &demo::plan_spec(),
        &demo::config(),
        None,
        7,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("placement.json");
    placement.save(&path).unwrap();
    let back: PlacementFile =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back.strategy, "nova");
    assert_eq!(back.assignments.len(), placement.groups.len());
    assert!(back.spread_even_used);
    let total_subs: usize = back.assignments.iter().map(|a| a.merged_subs).sum();
    assert_eq!(total_subs, 625 + 3);
}

#[test]
fn plan_and_coordinate_files_cover_the_walkthrough() {
    let dir = tempfile::tempdir().unwrap();
    let plan = demo::plan_spec();
    plan.save(&dir.path().join("plan.json")).unwrap();
    let loaded = PlanSpec::load(&dir.path().join("plan.json")).unwrap();
    loaded.validate(&demo::topology()).unwrap();

    let coords = demo::ground_truth();
    coords.save(&dir.path().join("coords.json")).unwrap();
    let back = Coordinates::load(&dir.path().join("coords.json")).unwrap();
    assert_eq!(back, coords);
}
