//! Bundled demonstration fixture: a 14-node edge/fog/cloud topology with two
//! sensor regions feeding one sink, plus the matching two-stream join plan.
//! Latencies are Euclidean distances between fixed ground-truth positions, so
//! the dense embedding recovers them exactly.

use std::sync::Arc;

use crate::costspace::Coordinates;
use crate::median::MedianConfig;
use crate::placement::{FallbackPolicy, NovaConfig, SigmaMode};
use crate::plan::{PlanSpec, StreamSpec};
use crate::spatial::IndexMode;
use crate::topology::{DenseMatrix, LatencySource, Node, NodeId, Role, Topology};

pub const NODE_NAMES: [&str; 14] =
    ["t1", "t2", "t3", "t4", "w1", "w2", "A", "B", "C", "D", "E", "F", "G", "sink"];

pub const T1: NodeId = NodeId(0);
pub const T2: NodeId = NodeId(1);
pub const T3: NodeId = NodeId(2);
pub const T4: NodeId = NodeId(3);
pub const W1: NodeId = NodeId(4);
pub const W2: NodeId = NodeId(5);
pub const A: NodeId = NodeId(6);
pub const B: NodeId = NodeId(7);
pub const C: NodeId = NodeId(8);
pub const D: NodeId = NodeId(9);
pub const E: NodeId = NodeId(10);
pub const F: NodeId = NodeId(11);
pub const G: NodeId = NodeId(12);
pub const SINK: NodeId = NodeId(13);

pub fn node_name(id: NodeId) -> &'static str {
    NODE_NAMES[id.index()]
}

/// Ground-truth positions (ms units). Region 1 lies on the x-axis west of the
/// sink; region 2 extends north of it; the cloud node E sits 100 ms from the
/// sink and 175 ms from the farthest region-1 source.
pub fn positions() -> Vec<[f64; 2]> {
    let e_x = 143.75;
    let e_y = (175.0f64 * 175.0 - e_x * e_x).sqrt();
    vec![
        [40.0, 0.0],    // t1
        [60.0, 0.0],    // t2
        [150.0, 175.0], // t3
        [150.0, 120.0], // t4
        [0.0, 0.0],     // w1
        [150.0, 130.0], // w2
        [50.0, 0.0],    // A
        [75.0, 0.0],    // B
        [100.0, 0.0],   // C
        [125.0, 60.0],  // D
        [e_x, e_y],     // E
        [150.0, 100.0], // F
        [150.0, 115.0], // G
        [150.0, 0.0],   // sink
    ]
}

pub fn ground_truth() -> Coordinates {
    let pos = positions();
    let mut flat = Vec::with_capacity(pos.len() * 2);
    for p in &pos {
        flat.extend_from_slice(p);
    }
    Coordinates::from_flat(2, flat).expect("static fixture")
}

fn capacities() -> [f64; 14] {
    [10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 55.0, 40.0, 40.0, 30.0, 1000.0, 20.0, 200.0, 20.0]
}

pub fn topology() -> Topology {
    let pos = positions();
    let caps = capacities();
    let pressure: Arc<str> = Arc::from("pressure");
    let humidity: Arc<str> = Arc::from("humidity");
    let mut nodes = Vec::with_capacity(14);
    for i in 0..14u32 {
        let id = NodeId(i);
        let (role, rate, tag) = match i {
            0..=3 => (Role::Source, 25.0, Some(pressure.clone())),
            4 | 5 => (Role::Source, 25.0, Some(humidity.clone())),
            13 => (Role::Sink, 0.0, None),
            _ => (Role::Worker, 0.0, None),
        };
        nodes.push(Node {
            id,
            role,
            capacity: caps[i as usize],
            data_rate: rate,
            stream_tag: tag,
        });
    }
    let mut matrix = DenseMatrix::zeros(14);
    for i in 0..14 {
        for j in (i + 1)..14 {
            let (p, q) = (pos[i], pos[j]);
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            matrix.set_symmetric(i, j, d);
        }
    }
    Topology { nodes, latency: LatencySource::Dense(matrix) }
}

pub fn plan_spec() -> PlanSpec {
    PlanSpec {
        streams: vec![
            StreamSpec { tag: "pressure".into(), sources: vec![T1, T2, T3, T4] },
            StreamSpec { tag: "humidity".into(), sources: vec![W1, W2] },
        ],
        join_pairs: vec![(T1, W1), (T2, W1), (T3, W2), (T4, W2)],
        sink: SINK,
    }
}

/// Configuration used throughout the walkthrough: k=2 candidates, C_min=15,
/// full partitioning (sigma 0), spread-even fallback.
pub fn config() -> NovaConfig {
    NovaConfig {
        sigma: SigmaMode::Fixed { sigma: 0.0 },
        c_min: 15.0,
        k_override: Some(2),
        fallback: FallbackPolicy::SpreadEven,
        knn_mode: IndexMode::Exact,
        selectivity: 1.0,
        median: MedianConfig::default(),
        record_audit: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costspace::{embed_mds, EmbedConfig};

    #[test]
    fn fixture_latencies_match_the_narrative() {
        let topo = topology();
        let lat = &topo.latency;
        // t1 reaches C via its 10 ms uplink plus 50 ms of backbone.
        assert!((lat.probe(T1.index(), C.index()) - 60.0).abs() < 1e-9);
        assert!((lat.probe(T1.index(), SINK.index()) - 110.0).abs() < 1e-9);
        assert!((lat.probe(W1.index(), A.index()) - 50.0).abs() < 1e-9);
        assert!((lat.probe(A.index(), SINK.index()) - 100.0).abs() < 1e-9);
        assert!((lat.probe(E.index(), SINK.index()) - 100.0).abs() < 1e-9);
        assert!((lat.probe(W1.index(), E.index()) - 175.0).abs() < 1e-9);
        topo.validate().unwrap();
    }

    #[test]
    fn fixture_embeds_with_negligible_stress() {
        let topo = topology();
        let dense = topo.latency.to_dense(100).unwrap();
        let r = embed_mds(&dense, &EmbedConfig { iterations: 500, ..Default::default() }).unwrap();
        assert!(r.stress < 1e-6, "stress {}", r.stress);
    }
}
