//! Logical plans, streams, and the join matrix: source expansion turns
//! logical streams into pinned per-node sources, and pair-wise replication
//! creates one independent join replica per join-matrix entry.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{NodeId, Role, Topology};

pub type OpId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub id: OpId,
    pub replica: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Source,
    Join,
    Sink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRef {
    pub stream: u32,
    pub data_rate: f64,
    pub origin: InstanceId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Operator {
    pub id: OpId,
    pub replica: u32,
    /// Total instance count sharing this id.
    pub rho: u32,
    pub kind: OpKind,
    pub inputs: Vec<StreamRef>,
    pub outputs: Vec<StreamRef>,
    pub pinned_node: Option<NodeId>,
}

impl Operator {
    pub fn instance(&self) -> InstanceId {
        InstanceId { id: self.id, replica: self.replica }
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned_node.is_some()
    }
}

/// Sum of input data rates: the compute capacity an operator instance needs.
pub fn required_capacity(op: &Operator) -> f64 {
    op.inputs.iter().map(|s| s.data_rate).sum()
}

/// Two-way join plan description as it arrives from the outside world:
/// logical streams with their physical source nodes, the join matrix as
/// explicit (left, right) pairs, and the sink node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanSpec {
    pub streams: Vec<StreamSpec>,
    pub join_pairs: Vec<(NodeId, NodeId)>,
    pub sink: NodeId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamSpec {
    pub tag: String,
    pub sources: Vec<NodeId>,
}

/// Left-to-right source pairing for generated workloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Seeded shuffle: partners land anywhere in the network.
    Random,
    /// Each left source joins its nearest right source, mirroring joins on
    /// region identifiers between co-located sensors.
    Regional,
}

impl PlanSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Derives the plan from a workload-assigned topology: two logical
    /// streams from the node tags, one join pair per left source.
    pub fn from_topology(topology: &Topology, pairing: Pairing, seed: u64) -> Result<PlanSpec> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut by_tag: HashMap<&str, Vec<NodeId>> = HashMap::new();
        for node in topology.sources() {
            let tag = node.stream_tag.as_deref().unwrap_or_default();
            by_tag.entry(tag).or_default().push(node.id);
        }
        let mut tags: Vec<&str> = by_tag.keys().copied().collect();
        tags.sort();
        if tags.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "expected exactly two logical streams, found {}",
                tags.len()
            )));
        }
        let left = by_tag[tags[0]].clone();
        let mut right = by_tag[tags[1]].clone();
        if right.is_empty() {
            return Err(Error::InvalidInput("right stream has no sources".into()));
        }
        // One entry per row: each left source joins exactly one right source.
        let join_pairs = match pairing {
            Pairing::Random => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                right.shuffle(&mut rng);
                left.iter()
                    .enumerate()
                    .map(|(i, &l)| (l, right[i % right.len()]))
                    .collect()
            }
            Pairing::Regional => regional_pairs(topology, &left, &right),
        };
        Ok(PlanSpec {
            streams: vec![
                StreamSpec { tag: tags[0].to_string(), sources: left },
                StreamSpec { tag: tags[1].to_string(), sources: right },
            ],
            join_pairs,
            sink: topology.sink()?,
        })
    }

    /// Dense join matrix: every left source joins every right source.
    pub fn dense_pairs(left: &[NodeId], right: &[NodeId]) -> Vec<(NodeId, NodeId)> {
        let mut pairs = Vec::with_capacity(left.len() * right.len());
        for &l in left {
            for &r in right {
                pairs.push((l, r));
            }
        }
        pairs
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if self.streams.len() != 2 {
            return Err(Error::InvalidInput("a join plan needs exactly two streams".into()));
        }
        for stream in &self.streams {
            if stream.sources.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "logical stream '{}' has no physical sources",
                    stream.tag
                )));
            }
            for &id in &stream.sources {
                if id.index() >= topology.len() || topology.node(id).role != Role::Source {
                    return Err(Error::InvalidInput(format!(
                        "stream '{}' references node {id} which is not a source",
                        stream.tag
                    )));
                }
            }
        }
        if self.join_pairs.is_empty() {
            return Err(Error::InvalidInput("join matrix has no entries".into()));
        }
        let lefts = &self.streams[0].sources;
        let rights = &self.streams[1].sources;
        for &(l, r) in &self.join_pairs {
            if !lefts.contains(&l) {
                return Err(Error::InvalidInput(format!(
                    "join pair references {l} outside the left stream"
                )));
            }
            if !rights.contains(&r) {
                return Err(Error::InvalidInput(format!(
                    "join pair references {r} outside the right stream"
                )));
            }
        }
        if topology.node(self.sink).role != Role::Sink {
            return Err(Error::InvalidInput(format!("node {} is not the sink", self.sink)));
        }
        Ok(())
    }
}

/// Nearest-right-source pairing. Point-backed topologies above a size cutoff
/// go through a spatial index; everything else scans.
fn regional_pairs(topology: &Topology, left: &[NodeId], right: &[NodeId]) -> Vec<(NodeId, NodeId)> {
    use crate::costspace::Coordinates;
    use crate::spatial::{IndexMode, NeighborIndex};
    use crate::topology::LatencySource;
    if let LatencySource::Points(points) = &topology.latency {
        if left.len().saturating_mul(right.len()) > 250_000 {
            let mut flat = Vec::with_capacity(right.len() * points.dim);
            for id in right {
                flat.extend_from_slice(points.point(id.index()));
            }
            let coords = Coordinates::from_flat(points.dim, flat).expect("point geometry");
            let index = NeighborIndex::build(&coords, IndexMode::Approximate);
            return left
                .iter()
                .map(|&l| {
                    let hit = index.knn(points.point(l.index()), 1, &|_| true);
                    (l, right[hit[0].0.index()])
                })
                .collect();
        }
    }
    let probe = &topology.latency;
    left.iter()
        .map(|&l| {
            let partner = right
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    probe
                        .probe(l.index(), a.index())
                        .total_cmp(&probe.probe(l.index(), b.index()))
                        .then(a.cmp(&b))
                })
                .expect("right stream non-empty");
            (l, partner)
        })
        .collect()
}

/// Operator ids in generated plans: expanded sources for each stream, then
/// the join, then the sink.
pub const LEFT_SOURCE_OP: OpId = 0;
pub const RIGHT_SOURCE_OP: OpId = 1;
pub const JOIN_OP: OpId = 2;
pub const SINK_OP: OpId = 3;

#[derive(Debug, Clone)]
pub struct LogicalPlan {
    pub operators: Vec<Operator>,
    pub spec: PlanSpec,
    pub expanded: bool,
}

/// Builds the initial logical plan (replication factor one everywhere):
/// two logical sources, one join, one sink.
pub fn logical_plan(spec: &PlanSpec, topology: &Topology) -> Result<LogicalPlan> {
    spec.validate(topology)?;
    let mk_stream = |stream, origin| StreamRef { stream, data_rate: 0.0, origin };
    let left = Operator {
        id: LEFT_SOURCE_OP,
        replica: 0,
        rho: 1,
        kind: OpKind::Source,
        inputs: vec![],
        outputs: vec![mk_stream(0, InstanceId { id: LEFT_SOURCE_OP, replica: 0 })],
        pinned_node: None,
    };
    let right = Operator {
        id: RIGHT_SOURCE_OP,
        replica: 0,
        rho: 1,
        kind: OpKind::Source,
        inputs: vec![],
        outputs: vec![mk_stream(1, InstanceId { id: RIGHT_SOURCE_OP, replica: 0 })],
        pinned_node: None,
    };
    let join = Operator {
        id: JOIN_OP,
        replica: 0,
        rho: 1,
        kind: OpKind::Join,
        inputs: left.outputs.clone().into_iter().chain(right.outputs.clone()).collect(),
        outputs: vec![mk_stream(2, InstanceId { id: JOIN_OP, replica: 0 })],
        pinned_node: None,
    };
    let sink = Operator {
        id: SINK_OP,
        replica: 0,
        rho: 1,
        kind: OpKind::Sink,
        inputs: join.outputs.clone(),
        outputs: vec![],
        pinned_node: Some(spec.sink),
    };
    Ok(LogicalPlan {
        operators: vec![left, right, join, sink],
        spec: spec.clone(),
        expanded: false,
    })
}

/// Replaces each logical source with one pinned source operator per physical
/// source node, carrying that node's data rate.
pub fn expand_sources(plan: &LogicalPlan, topology: &Topology) -> Result<LogicalPlan> {
    let spec = &plan.spec;
    spec.validate(topology)?;
    let mut operators = Vec::new();
    let mut stream_counter: u32 = 0;
    for (side, stream) in spec.streams.iter().enumerate() {
        let op_id = if side == 0 { LEFT_SOURCE_OP } else { RIGHT_SOURCE_OP };
        let rho = stream.sources.len() as u32;
        for (r, &node) in stream.sources.iter().enumerate() {
            let origin = InstanceId { id: op_id, replica: r as u32 };
            operators.push(Operator {
                id: op_id,
                replica: r as u32,
                rho,
                kind: OpKind::Source,
                inputs: vec![],
                outputs: vec![StreamRef {
                    stream: stream_counter,
                    data_rate: topology.node(node).data_rate,
                    origin,
                }],
                pinned_node: Some(node),
            });
            stream_counter += 1;
        }
    }
    // The join and sink carry over untouched until pair-wise replication.
    for op in &plan.operators {
        if op.kind != OpKind::Source {
            operators.push(op.clone());
        }
    }
    Ok(LogicalPlan { operators, spec: spec.clone(), expanded: true })
}

/// One join replica per join-matrix pair, plus provenance back to the pair's
/// physical source nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinPair {
    pub left: NodeId,
    pub right: NodeId,
    pub left_rate: f64,
    pub right_rate: f64,
}

impl JoinPair {
    pub fn required_capacity(&self) -> f64 {
        self.left_rate + self.right_rate
    }
}

#[derive(Debug, Clone)]
pub struct ParallelizedPlan {
    pub operators: Vec<Operator>,
    pub pairs: Vec<JoinPair>,
    pub sink_node: NodeId,
    /// Output rate model: egress of a replica = selectivity * C_r.
    pub selectivity: f64,
}

/// Creates the parallelized logical plan: one join replica per matrix entry,
/// each consuming exactly its pair's two source streams and feeding the sink.
pub fn replicate_pairwise(plan: &LogicalPlan, _topology: &Topology) -> Result<ParallelizedPlan> {
    if !plan.expanded {
        return Err(Error::InvalidInput("expand sources before pair-wise replication".into()));
    }
    let spec = &plan.spec;
    if spec.join_pairs.is_empty() {
        return Err(Error::InvalidInput("join matrix has no entries".into()));
    }
    // Source operators indexed by node for stream lookup.
    let mut source_ops: HashMap<NodeId, &Operator> = HashMap::new();
    for op in &plan.operators {
        if op.kind == OpKind::Source {
            if let Some(node) = op.pinned_node {
                source_ops.insert(node, op);
            }
        }
    }
    let mut operators: Vec<Operator> = plan
        .operators
        .iter()
        .filter(|op| op.kind == OpKind::Source)
        .cloned()
        .collect();
    let rho = spec.join_pairs.len() as u32;
    let mut sink_inputs = Vec::with_capacity(spec.join_pairs.len());
    let mut pairs = Vec::with_capacity(spec.join_pairs.len());
    let mut join_stream: u32 = 1000;
    for (r, &(l, rgt)) in spec.join_pairs.iter().enumerate() {
        let left_op = source_ops
            .get(&l)
            .ok_or_else(|| Error::InvalidInput(format!("pair references unknown source {l}")))?;
        let right_op = source_ops
            .get(&rgt)
            .ok_or_else(|| Error::InvalidInput(format!("pair references unknown source {rgt}")))?;
        let left_stream = left_op.outputs[0].clone();
        let right_stream = right_op.outputs[0].clone();
        let c_r = left_stream.data_rate + right_stream.data_rate;
        let origin = InstanceId { id: JOIN_OP, replica: r as u32 };
        let out = StreamRef { stream: join_stream, data_rate: c_r, origin };
        join_stream += 1;
        sink_inputs.push(out.clone());
        pairs.push(JoinPair {
            left: l,
            right: rgt,
            left_rate: left_stream.data_rate,
            right_rate: right_stream.data_rate,
        });
        operators.push(Operator {
            id: JOIN_OP,
            replica: r as u32,
            rho,
            kind: OpKind::Join,
            inputs: vec![left_stream, right_stream],
            outputs: vec![out],
            pinned_node: None,
        });
    }
    operators.push(Operator {
        id: SINK_OP,
        replica: 0,
        rho: 1,
        kind: OpKind::Sink,
        inputs: sink_inputs,
        outputs: vec![],
        pinned_node: Some(spec.sink),
    });
    Ok(ParallelizedPlan { operators, pairs, sink_node: spec.sink, selectivity: 1.0 })
}

/// All producer -> consumer operator pairs, derived from stream sharing.
pub fn connected_pairs(operators: &[Operator]) -> Vec<(InstanceId, InstanceId)> {
    let mut producers: HashMap<u32, InstanceId> = HashMap::new();
    for op in operators {
        for out in &op.outputs {
            producers.insert(out.stream, op.instance());
        }
    }
    let mut out = Vec::new();
    for op in operators {
        for input in &op.inputs {
            if let Some(&p) = producers.get(&input.stream) {
                out.push((p, op.instance()));
            }
        }
    }
    out
}

/// End-to-end convenience: expand + replicate in one step (Algorithm phase
/// "resolve operators").
pub fn resolve_operators(spec: &PlanSpec, topology: &Topology) -> Result<ParallelizedPlan> {
    let logical = logical_plan(spec, topology)?;
    let expanded = expand_sources(&logical, topology)?;
    replicate_pairwise(&expanded, topology)
}
