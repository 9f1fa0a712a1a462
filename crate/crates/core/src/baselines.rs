//! Comparison strategies: sink-based, source-based, top-capacity,
//! spanning-tree intersections, and the two cluster-head variants. All of
//! them produce the same `Placement` shape as the main engine.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::costspace::{dist, Coordinates};
use crate::error::{Error, Result};
use crate::placement::{NovaConfig, PairPartition, Placement, PlacedGroup};
use crate::plan::{OpKind, ParallelizedPlan, PlanSpec};
use crate::spatial::NeighborIndex;
use crate::topology::{LatencySource, NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Nova,
    Sink,
    SourceBased,
    TopC,
    Tree,
    ClSf,
    ClTreeSf,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Nova,
        Strategy::Sink,
        Strategy::SourceBased,
        Strategy::TopC,
        Strategy::Tree,
        Strategy::ClSf,
        Strategy::ClTreeSf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Nova => "nova",
            Strategy::Sink => "sink",
            Strategy::SourceBased => "source-based",
            Strategy::TopC => "top-c",
            Strategy::Tree => "tree",
            Strategy::ClSf => "cl-sf",
            Strategy::ClTreeSf => "cl-tree-sf",
        }
    }

    pub fn parse(s: &str) -> Result<Strategy> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown strategy '{s}'")))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Builds a whole-pair placement from per-pair host decisions, tracking
/// residuals so overloads surface in the report.
fn placement_from_hosts(
    name: &str,
    topology: &Topology,
    plan: &ParallelizedPlan,
    hosts: Vec<NodeId>,
) -> Placement {
    let mut residuals: Vec<f64> = topology.nodes.iter().map(|n| n.capacity).collect();
    let mut groups = Vec::with_capacity(plan.pairs.len());
    let mut partitions = Vec::with_capacity(plan.pairs.len());
    for (idx, (pair, &node)) in plan.pairs.iter().zip(&hosts).enumerate() {
        let c_r = pair.required_capacity();
        residuals[node.index()] -= c_r;
        groups.push(PlacedGroup {
            pair: idx,
            node,
            subs: vec![(0, 0)],
            c_r,
            left_in: pair.left_rate,
            right_in: pair.right_rate,
        });
        partitions.push(PairPartition::whole(pair.left_rate, pair.right_rate));
    }
    let mut placement = Placement {
        strategy: name.into(),
        groups,
        pinned: plan
            .operators
            .iter()
            .filter(|op| op.kind != OpKind::Join)
            .map(|op| (op.instance(), op.pinned_node.expect("pinned")))
            .collect(),
        residuals,
        overloaded: Vec::new(),
        fallbacks: Vec::new(),
        bandwidth_violations: Vec::new(),
        partitions,
        audit: Vec::new(),
    };
    placement.recompute_overloads(topology);
    placement
}

/// Every join replica on the sink node.
pub fn place_sink(topology: &Topology, plan: &ParallelizedPlan) -> Placement {
    let hosts = vec![plan.sink_node; plan.pairs.len()];
    placement_from_hosts("sink", topology, plan, hosts)
}

/// Each pair joins at the source with the higher data rate (ties toward the
/// lower node id).
pub fn place_source_based(topology: &Topology, plan: &ParallelizedPlan) -> Placement {
    let hosts = plan
        .pairs
        .iter()
        .map(|pair| {
            if pair.left_rate > pair.right_rate
                || (pair.left_rate == pair.right_rate && pair.left <= pair.right)
            {
                pair.left
            } else {
                pair.right
            }
        })
        .collect();
    placement_from_hosts("source-based", topology, plan, hosts)
}

/// Each pair goes to the node with the highest remaining capacity; when even
/// that node cannot fit the pair it is placed there regardless (overload
/// recorded, no spill).
pub fn place_top_c(topology: &Topology, plan: &ParallelizedPlan) -> Placement {
    let mut residuals: Vec<f64> = topology.nodes.iter().map(|n| n.capacity).collect();
    let mut hosts = Vec::with_capacity(plan.pairs.len());
    for pair in &plan.pairs {
        let best = residuals
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.total_cmp(b).then(j.cmp(i)))
            .map(|(i, _)| NodeId(i as u32))
            .expect("non-empty topology");
        residuals[best.index()] -= pair.required_capacity();
        hosts.push(best);
    }
    placement_from_hosts("top-c", topology, plan, hosts)
}

/// Sink-rooted minimum spanning tree over latency weights, with parent and
/// depth arrays for meeting-point queries.
#[derive(Debug, Clone)]
pub struct SpanningTree {
    pub root: NodeId,
    pub parent: Vec<Option<u32>>,
    pub depth: Vec<u32>,
    /// Original node id per tree position (identity for full-topology trees).
    pub nodes: Vec<NodeId>,
}

impl SpanningTree {
    /// Prim's algorithm over the complete latency graph restricted to
    /// `members`, rooted at `root`. O(|members|^2) probes.
    pub fn build(latency: &LatencySource, members: &[NodeId], root: NodeId) -> Result<Self> {
        let n = members.len();
        let pos_of: HashMap<NodeId, usize> =
            members.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let root_pos = *pos_of
            .get(&root)
            .ok_or_else(|| Error::InvalidInput("tree root must be a member".into()))?;
        let mut in_tree = vec![false; n];
        let mut best = vec![f64::INFINITY; n];
        let mut parent: Vec<Option<u32>> = vec![None; n];
        best[root_pos] = 0.0;
        for _ in 0..n {
            let mut u = usize::MAX;
            let mut u_best = f64::INFINITY;
            for v in 0..n {
                if !in_tree[v] && (best[v] < u_best || (best[v] == u_best && u == usize::MAX)) {
                    u = v;
                    u_best = best[v];
                }
            }
            if u == usize::MAX || !u_best.is_finite() {
                return Err(Error::InvalidInput("latency graph is disconnected".into()));
            }
            in_tree[u] = true;
            for v in 0..n {
                if !in_tree[v] {
                    let w = latency.probe(members[u].index(), members[v].index());
                    if w < best[v] {
                        best[v] = w;
                        parent[v] = Some(u as u32);
                    }
                }
            }
        }
        // Depths by walking up (forest is a tree rooted at root_pos).
        let mut depth = vec![0u32; n];
        let mut order: Vec<usize> = (0..n).collect();
        // Repeated relaxation is fine at these sizes; parents always point
        // toward already-extracted nodes, so a single pass in extraction
        // order would suffice, but we do not track it.
        let mut changed = true;
        while changed {
            changed = false;
            for &v in &order {
                if let Some(p) = parent[v] {
                    let d = depth[p as usize] + 1;
                    if depth[v] != d {
                        depth[v] = d;
                        changed = true;
                    }
                }
            }
        }
        order.clear();
        Ok(SpanningTree { root, parent, depth, nodes: members.to_vec() })
    }

    fn pos(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id)
    }

    /// Meeting node of the two root-ward paths (lowest common ancestor).
    pub fn meeting_node(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (mut u, mut v) = match (self.pos(a), self.pos(b)) {
            (Some(u), Some(v)) => (u, v),
            _ => return Err(Error::InvalidInput("meeting-node query outside the tree".into())),
        };
        while self.depth[u] > self.depth[v] {
            u = self.parent[u].expect("deeper node has a parent") as usize;
        }
        while self.depth[v] > self.depth[u] {
            v = self.parent[v].expect("deeper node has a parent") as usize;
        }
        while u != v {
            u = self.parent[u].expect("non-root") as usize;
            v = self.parent[v].expect("non-root") as usize;
        }
        Ok(self.nodes[u])
    }
}

/// Joins happen where the sources' root-ward paths intersect in the
/// sink-rooted spanning tree. No partitioning.
pub fn place_tree(topology: &Topology, plan: &ParallelizedPlan) -> Result<Placement> {
    let members: Vec<NodeId> = topology.nodes.iter().map(|n| n.id).collect();
    let tree = SpanningTree::build(&topology.latency, &members, plan.sink_node)?;
    let hosts = plan
        .pairs
        .iter()
        .map(|pair| tree.meeting_node(pair.left, pair.right))
        .collect::<Result<Vec<_>>>()?;
    Ok(placement_from_hosts("tree", topology, plan, hosts))
}

/// Seeded fuzzy c-means over node coordinates (fuzziness 2), with cluster
/// heads chosen as the node nearest each centroid.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub cluster_of: HashMap<NodeId, usize>,
    pub heads: Vec<NodeId>,
}

pub fn fuzzy_c_means(coords: &Coordinates, k: usize, seed: u64) -> Result<Clustering> {
    use rand::SeedableRng;
    let n = coords.len();
    if k < 1 {
        return Err(Error::InvalidInput("cluster count must be >= 1".into()));
    }
    let k = k.min(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, k);
    let mut centroids: Vec<Vec<f64>> =
        picks.iter().map(|i| coords.point(i).to_vec()).collect();

    let mut memberships = vec![0.0f64; n * k];
    for _ in 0..100 {
        // Membership update, fuzziness m = 2.
        for i in 0..n {
            let p = coords.point(i);
            let mut dists: Vec<f64> = centroids.iter().map(|c| dist(p, c)).collect();
            if let Some(zero) = dists.iter().position(|&d| d < 1e-12) {
                for c in 0..k {
                    memberships[i * k + c] = if c == zero { 1.0 } else { 0.0 };
                }
                continue;
            }
            for c in 0..k {
                let mut inv = 0.0;
                for other in 0..k {
                    let ratio = dists[c] / dists[other];
                    inv += ratio * ratio;
                }
                memberships[i * k + c] = 1.0 / inv;
            }
            dists.clear();
        }
        // Centroid update.
        let mut moved: f64 = 0.0;
        for c in 0..k {
            let mut num = vec![0.0; coords.dim()];
            let mut den = 0.0;
            for i in 0..n {
                let u = memberships[i * k + c];
                let w = u * u;
                den += w;
                for (acc, &v) in num.iter_mut().zip(coords.point(i)) {
                    *acc += w * v;
                }
            }
            if den > 0.0 {
                for v in num.iter_mut() {
                    *v /= den;
                }
                moved = moved.max(dist(&num, &centroids[c]));
                centroids[c] = num;
            }
        }
        if moved < 1e-6 {
            break;
        }
    }

    let mut cluster_of = HashMap::with_capacity(n);
    for i in 0..n {
        let mut best = 0;
        for c in 1..k {
            if memberships[i * k + c] > memberships[i * k + best] {
                best = c;
            }
        }
        cluster_of.insert(NodeId(i as u32), best);
    }
    let mut heads = Vec::with_capacity(k);
    for centroid in &centroids {
        let mut head = NodeId(0);
        let mut head_d = f64::INFINITY;
        for i in 0..n {
            let d = dist(coords.point(i), centroid);
            if d < head_d {
                head_d = d;
                head = NodeId(i as u32);
            }
        }
        heads.push(head);
    }
    Ok(Clustering { cluster_of, heads })
}

pub fn default_cluster_count(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

/// Pairs whose sources fall into one cluster join at that cluster's head;
/// cross-cluster pairs fall back to the sink.
pub fn place_cl_sf(
    topology: &Topology,
    coords: &Coordinates,
    plan: &ParallelizedPlan,
    n_clusters: usize,
    seed: u64,
) -> Result<Placement> {
    let clustering = fuzzy_c_means(coords, n_clusters, seed)?;
    let hosts = plan
        .pairs
        .iter()
        .map(|pair| {
            let cl = clustering.cluster_of[&pair.left];
            if cl == clustering.cluster_of[&pair.right] {
                clustering.heads[cl]
            } else {
                plan.sink_node
            }
        })
        .collect();
    Ok(placement_from_hosts("cl-sf", topology, plan, hosts))
}

/// Cluster heads plus the sink form a spanning tree over latency weights;
/// each pair joins where its sources' head paths meet.
pub fn place_cl_tree_sf(
    topology: &Topology,
    coords: &Coordinates,
    plan: &ParallelizedPlan,
    n_clusters: usize,
    seed: u64,
) -> Result<Placement> {
    let clustering = fuzzy_c_means(coords, n_clusters, seed)?;
    let mut members = clustering.heads.clone();
    if !members.contains(&plan.sink_node) {
        members.push(plan.sink_node);
    }
    members.sort();
    members.dedup();
    let tree = SpanningTree::build(&topology.latency, &members, plan.sink_node)?;
    let hosts = plan
        .pairs
        .iter()
        .map(|pair| {
            let hl = clustering.heads[clustering.cluster_of[&pair.left]];
            let hr = clustering.heads[clustering.cluster_of[&pair.right]];
            tree.meeting_node(hl, hr)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(placement_from_hosts("cl-tree-sf", topology, plan, hosts))
}

/// Uniform entry point used by the experiment harness and the CLI.
pub fn run_strategy(
    strategy: Strategy,
    topology: &Topology,
    coords: &Coordinates,
    spec: &PlanSpec,
    config: &NovaConfig,
    n_clusters: Option<usize>,
    seed: u64,
) -> Result<(Placement, ParallelizedPlan)> {
    let plan = crate::plan::resolve_operators(spec, topology)?;
    let clusters = n_clusters.unwrap_or_else(|| default_cluster_count(topology.len()));
    let placement = match strategy {
        Strategy::Nova => {
            let index = NeighborIndex::build(coords, config.knn_mode);
            let outcome =
                crate::placement::nova_place_with_index(topology, coords, &index, spec, config)?;
            return Ok((outcome.placement, outcome.plan));
        }
        Strategy::Sink => place_sink(topology, &plan),
        Strategy::SourceBased => place_source_based(topology, &plan),
        Strategy::TopC => place_top_c(topology, &plan),
        Strategy::Tree => place_tree(topology, &plan)?,
        Strategy::ClSf => place_cl_sf(topology, coords, &plan, clusters, seed)?,
        Strategy::ClTreeSf => place_cl_tree_sf(topology, coords, &plan, clusters, seed)?,
    };
    Ok((placement, plan))
}
