//! End-to-end checks of the `nova` binary: exit codes, determinism, and the
//! machine-readable outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nova() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nova"))
}

fn run(args: &[&str]) -> Output {
    nova().args(args).output().expect("binary runs")
}

fn write_demo_inputs(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    use nova_core::demo;
    use nova_core::topology::{save_latency_matrix, save_topology};
    let topo = demo::topology();
    let latency_path = dir.join("latency.txt");
    let dense = topo.latency.to_dense(100).unwrap();
    save_latency_matrix(&dense, &latency_path).unwrap();
    let topo_path = dir.join("topology.json");
    save_topology(&topo, &topo_path, Some("latency.txt")).unwrap();
    let plan_path = dir.join("plan.json");
    demo::plan_spec().save(&plan_path).unwrap();
    (topo_path, latency_path, plan_path)
}

#[test]
fn example_walkthrough_is_stable_and_complete() {
    let first = run(&["example"]);
    assert!(first.status.success());
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.contains("j1 -> A"), "missing j1 placement:\n{text}");
    assert!(text.contains("j3 -> G"));
    assert!(text.contains("j4 -> G"));
    assert!(text.contains("region 1 = 150 ms"));
    assert!(text.contains("region 2 = 175 ms"));
    let second = run(&["example"]);
    assert_eq!(text, String::from_utf8(second.stdout).unwrap(), "output must be stable");
}

#[test]
fn embed_is_deterministic_under_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a.json");
    let out2 = dir.path().join("b.json");
    for out in [&out1, &out2] {
        let r = run(&[
            "embed",
            "--synthetic",
            "n=200,clusters=4,std=8,seed=7",
            "--method",
            "vivaldi",
            "-m",
            "8",
            "--iters",
            "50",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    assert_eq!(a, b, "same seed must give identical coordinate files");
}

#[test]
fn place_reproduces_the_walkthrough_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let (topo_path, latency_path, plan_path) = write_demo_inputs(dir.path());
    let coords_path = dir.path().join("coords.json");
    let r = run(&[
        "embed",
        "--latency",
        latency_path.to_str().unwrap(),
        "--method",
        "mds",
        "--iters",
        "500",
        "--out",
        coords_path.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let out_path = dir.path().join("placement.json");
    let r = run(&[
        "place",
        "--topology",
        topo_path.to_str().unwrap(),
        "--coords",
        coords_path.to_str().unwrap(),
        "--plan",
        plan_path.to_str().unwrap(),
        "--strategy",
        "nova",
        "--sigma",
        "0",
        "--cmin",
        "15",
        "-k",
        "2",
        "--fallback",
        "spread-even",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let placement: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let rows = placement["assignments"].as_array().unwrap();
    // j1 on A (node 6), j3 and j4 on G (node 12), j2 merged over B and C.
    let host = |replica: &str| -> Vec<i64> {
        rows.iter()
            .filter(|r| r["replica"] == replica)
            .map(|r| r["node"].as_i64().unwrap())
            .collect()
    };
    assert_eq!(host("j0"), vec![6]);
    assert_eq!(host("j1"), vec![7, 8]);
    assert_eq!(host("j2"), vec![12]);
    assert_eq!(host("j3"), vec![12]);
    assert_eq!(placement["spread_even_used"], true);
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (topo_path, _, plan_path) = write_demo_inputs(dir.path());
    let r = run(&[
        "place",
        "--topology",
        topo_path.to_str().unwrap(),
        "--coords",
        "nowhere.json",
        "--plan",
        plan_path.to_str().unwrap(),
        "--strategy",
        "magic",
        "--out",
        "out.json",
    ]);
    assert_eq!(r.status.code(), Some(2), "unknown strategy must exit 2");
}

#[test]
fn missing_events_file_is_a_usage_error() {
    let r = run(&["reopt-bench", "--sizes", "100", "--events", "does-not-exist.jsonl"]);
    assert!(!r.status.success());
    // Clap-level missing flag is also 2.
    let r2 = run(&["reopt-bench", "--sizes", "100"]);
    assert_eq!(r2.status.code(), Some(2));
}

#[test]
fn compare_emits_the_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "name": "smoke",
        "n_nodes": 120,
        "n_clusters": 3,
        "cluster_std": 8.0,
        "seeds": [5],
        "strategies": ["nova", "sink", "top-c"],
        "capacity_sweep": [{"kind": "uniform", "lo": 1.0, "hi": 200.0}],
        "source_fraction": 0.6,
        "rate_range": [1.0, 200.0],
        "source_capacity": "from_dist",
        "capacity_budget": {"kind": "partitioned_margin", "margin": 1.45},
        "c_min": 10.0,
        "sigma": {"mode": "fixed", "sigma": 0.4},
        "fallback": "expand_k",
        "embed": {"method": "ground_truth"},
        "latency_mode": "true"
    });
    let spec_path = dir.path().join("exp.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let csv_path = dir.path().join("out.csv");
    let r = run(&[
        "compare",
        "--experiment",
        spec_path.to_str().unwrap(),
        "--out-csv",
        csv_path.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with(
        "experiment,strategy,n_nodes,cv,seed,overload_pct,mean_ms,p90_ms,p99_ms,delta_vs_sink_ms"
    ));
    assert_eq!(lines.count(), 3, "one row per strategy");

    // An empty strategy list is a validation error.
    let bad = serde_json::json!({
        "name": "bad", "n_nodes": 50, "n_clusters": 2, "cluster_std": 8.0,
        "seeds": [1], "strategies": [],
        "capacity_sweep": [{"kind": "uniform", "lo": 1.0, "hi": 200.0}],
        "source_fraction": 0.6, "rate_range": [1.0, 200.0],
        "source_capacity": "from_dist",
        "capacity_budget": {"kind": "partitioned_margin", "margin": 1.45},
        "c_min": 10.0, "sigma": {"mode": "fixed", "sigma": 0.4},
        "fallback": "expand_k", "embed": {"method": "ground_truth"},
        "latency_mode": "true"
    });
    let bad_path = dir.path().join("bad.json");
    std::fs::write(&bad_path, bad.to_string()).unwrap();
    let r = run(&["compare", "--experiment", bad_path.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn reopt_bench_runs_a_template_script() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("events.jsonl");
    std::fs::write(
        &script,
        concat!(
            "{\"type\":\"add_source\",\"stream_tag\":\"\",\"data_rate\":0.0,",
            "\"join_partners\":[],\"probes\":[]}\n",
            "{\"type\":\"remove_source\",\"node\":4294967295}\n",
            "{\"type\":\"change_data_rate\",\"node\":4294967295,\"new_rate\":0.0}\n",
        ),
    )
    .unwrap();
    let out = dir.path().join("bench.csv");
    let r = run(&[
        "reopt-bench",
        "--sizes",
        "300",
        "--events",
        script.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("n_nodes,event,event_time_s,full_time_s"));
    assert_eq!(csv.lines().count(), 4, "header plus one row per event");
}

#[test]
fn scale_bench_reports_per_phase_timings() {
    let r = run(&["scale-bench", "--sizes", "300,600", "--iters", "30", "-m", "8"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = String::from_utf8(r.stdout).unwrap();
    assert!(csv.starts_with("n_nodes,gen_s,embed_s,place_s,total_s"));
    assert_eq!(csv.lines().count(), 3);
}
