//! Phase III: bandwidth-aware stream partitioning, capacity-aware candidate
//! selection, and greedy physical assignment of join replicas, with fallback
//! handling when local capacity runs out.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costspace::Coordinates;
use crate::error::{Error, Result};
use crate::median::{compute_optima, MedianConfig, VirtualPlacement};
use crate::plan::{resolve_operators, InstanceId, JoinPair, OpKind, ParallelizedPlan, PlanSpec};
use crate::spatial::{IndexMode, NeighborIndex};
use crate::topology::{NodeId, Role, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SigmaMode {
    Fixed { sigma: f64 },
    /// Derive sigma per pair from the bandwidth threshold t_b.
    Auto { t_b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Round-robin leftovers over the candidate set, accepting overload.
    SpreadEven,
    /// Double k and retry once before degrading to SpreadEven.
    ExpandK,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NovaConfig {
    pub sigma: SigmaMode,
    /// Minimum residual capacity a node must advertise to receive work.
    pub c_min: f64,
    pub k_override: Option<usize>,
    pub fallback: FallbackPolicy,
    pub knn_mode: IndexMode,
    /// Join output rate = selectivity * C_r; evaluator bandwidth model.
    pub selectivity: f64,
    pub median: MedianConfig,
    /// Record per-assignment residual observations for auditing.
    pub record_audit: bool,
}

impl Default for NovaConfig {
    fn default() -> Self {
        NovaConfig {
            sigma: SigmaMode::Fixed { sigma: 0.4 },
            c_min: 1.0,
            k_override: None,
            fallback: FallbackPolicy::ExpandK,
            knn_mode: IndexMode::Exact,
            selectivity: 1.0,
            median: MedianConfig::default(),
            record_audit: true,
        }
    }
}

impl NovaConfig {
    pub fn validate(&self) -> Result<()> {
        if let SigmaMode::Fixed { sigma } = self.sigma {
            if !(0.0..=1.0).contains(&sigma) {
                return Err(Error::InvalidInput(format!("sigma {sigma} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Maximum partition load threshold: max(1, sigma * 0.5 * (dr_s + dr_t)).
pub fn p_max(dr_s: f64, dr_t: f64, sigma: f64) -> f64 {
    1f64.max(sigma * 0.5 * (dr_s + dr_t))
}

/// Closed form of argmin over sigma in [0,1] of (sigma*2*dr_s*dr_t - t_b)^2.
/// Zero rates leave the stream unsplittable, so sigma is defined as 1.
pub fn derive_sigma(dr_s: f64, dr_t: f64, t_b: f64) -> f64 {
    let denom = 2.0 * dr_s * dr_t;
    if denom <= 0.0 {
        return 1.0;
    }
    (t_b / denom).clamp(0.0, 1.0)
}

/// Splits a stream so no partition exceeds `p_max`: all partitions carry
/// `p_max` except a smaller final remainder.
pub fn partition_stream(rate: f64, p_max: f64) -> Vec<f64> {
    assert!(p_max >= 1.0, "p_max must be at least 1");
    if rate <= 0.0 {
        return Vec::new();
    }
    if rate <= p_max {
        return vec![rate];
    }
    let full = (rate / p_max - 1e-9).floor() as usize;
    let mut parts = vec![p_max; full];
    let rest = rate - p_max * full as f64;
    if rest > 1e-9 {
        parts.push(rest);
    }
    parts
}

/// Both streams of one join pair partitioned under a shared p_max, yielding
/// an m x n replica grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairPartition {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub sigma: f64,
    pub p_max: f64,
}

impl PairPartition {
    pub fn replica_count(&self) -> usize {
        self.left.len() * self.right.len()
    }

    pub fn sub_cr(&self, i: usize, j: usize) -> f64 {
        self.left[i] + self.right[j]
    }

    /// Total ingress over all replicas: every left partition travels to n
    /// replicas and every right partition to m.
    pub fn total_network_rate(&self) -> f64 {
        let (m, n) = (self.left.len() as f64, self.right.len() as f64);
        let dr_s: f64 = self.left.iter().sum();
        let dr_t: f64 = self.right.iter().sum();
        n * dr_s + m * dr_t
    }

    pub fn whole(dr_s: f64, dr_t: f64) -> Self {
        PairPartition {
            left: vec![dr_s],
            right: vec![dr_t],
            sigma: 1.0,
            p_max: dr_s.max(dr_t).max(1.0),
        }
    }
}

pub fn partition_pair(dr_s: f64, dr_t: f64, sigma: f64) -> PairPartition {
    let p = p_max(dr_s, dr_t, sigma);
    PairPartition {
        left: partition_stream(dr_s, p),
        right: partition_stream(dr_t, p),
        sigma,
        p_max: p,
    }
}

/// Number of candidate nodes to fetch: the ratio of the operator's total
/// demand to the median eligible capacity, at least 1, at most the eligible
/// node count.
pub fn candidate_k(total_required: f64, eligible_capacities: &[f64]) -> Result<usize> {
    if eligible_capacities.is_empty() {
        return Err(Error::Infeasible("no eligible workers for candidate selection".into()));
    }
    let mut caps = eligible_capacities.to_vec();
    caps.sort_by(|a, b| a.total_cmp(b));
    let median = if caps.len() % 2 == 1 {
        caps[caps.len() / 2]
    } else {
        0.5 * (caps[caps.len() / 2 - 1] + caps[caps.len() / 2])
    };
    Ok(k_from_median(total_required, median, caps.len()))
}

pub fn k_from_median(total_required: f64, median: f64, eligible: usize) -> usize {
    if median <= 0.0 {
        return 1;
    }
    let k = (total_required / median).ceil() as usize;
    k.max(1).min(eligible.max(1))
}

/// Median and count of eligible capacities, snapshotted once per placement
/// run so per-pair k derivation stays O(1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CapacitySnapshot {
    pub median: f64,
    pub eligible: usize,
}

pub fn capacity_snapshot(
    topology: &Topology,
    residuals: &[f64],
    alive: impl Fn(NodeId) -> bool,
    c_min: f64,
) -> CapacitySnapshot {
    let mut caps: Vec<f64> = topology
        .nodes
        .iter()
        .filter(|n| alive(n.id) && eligible_for(n.role, residuals[n.id.index()], c_min))
        .map(|n| residuals[n.id.index()])
        .collect();
    caps.sort_by(|a, b| a.total_cmp(b));
    let eligible = caps.len();
    let median = if eligible == 0 {
        0.0
    } else if eligible % 2 == 1 {
        caps[eligible / 2]
    } else {
        0.5 * (caps[eligible / 2 - 1] + caps[eligible / 2])
    };
    CapacitySnapshot { median, eligible }
}

/// Eligibility under the availability constraint: residual >= c_min, and
/// pinned source/sink nodes additionally need spare capacity to host joins.
#[inline]
pub fn eligible_for(role: Role, residual: f64, c_min: f64) -> bool {
    residual >= c_min && (role == Role::Worker || residual > 0.0)
}

/// The k nearest eligible nodes to a virtual point, ascending by cost-space
/// distance (ties toward lower ids).
pub fn select_candidates(
    point: &[f64],
    index: &NeighborIndex,
    topology: &Topology,
    residuals: &[f64],
    c_min: f64,
    k: usize,
) -> Vec<(NodeId, f64)> {
    index.knn(point, k, &|id: NodeId| {
        eligible_for(topology.node(id).role, residuals[id.index()], c_min)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacedGroup {
    pub pair: usize,
    pub node: NodeId,
    /// Merged sub-replicas: (left partition index, right partition index).
    pub subs: Vec<(u32, u32)>,
    pub c_r: f64,
    /// Ingress split by side, with sub multiplicity.
    pub left_in: f64,
    pub right_in: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FallbackEvent {
    ExpandedK { pair: usize, from: usize, to: usize },
    SpreadEven { pair: usize, subs: usize },
}

impl FallbackEvent {
    pub fn is_spread_even(&self) -> bool {
        matches!(self, FallbackEvent::SpreadEven { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentAudit {
    pub pair: usize,
    pub node: NodeId,
    pub c_r: f64,
    pub residual_before: f64,
    pub via_fallback: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Placement {
    pub strategy: String,
    pub groups: Vec<PlacedGroup>,
    /// Pinned operator instances (sources, sink) and their nodes.
    pub pinned: Vec<(InstanceId, NodeId)>,
    /// Residual capacity per node id after assignment (negative = overload).
    pub residuals: Vec<f64>,
    pub overloaded: Vec<NodeId>,
    pub fallbacks: Vec<FallbackEvent>,
    /// Pairs whose minimum achievable partition load still exceeds t_b.
    pub bandwidth_violations: Vec<usize>,
    pub partitions: Vec<PairPartition>,
    pub audit: Vec<AssignmentAudit>,
}

impl Placement {
    pub fn spread_even_used(&self) -> bool {
        self.fallbacks.iter().any(|f| f.is_spread_even())
    }

    pub fn groups_of_pair(&self, pair: usize) -> impl Iterator<Item = &PlacedGroup> {
        self.groups.iter().filter(move |g| g.pair == pair)
    }

    pub fn recompute_overloads(&mut self, topology: &Topology) {
        let mut load = vec![0.0; topology.len()];
        for g in &self.groups {
            load[g.node.index()] += g.c_r;
        }
        self.overloaded = topology
            .nodes
            .iter()
            .filter(|n| load[n.id.index()] > n.capacity + 1e-9)
            .map(|n| n.id)
            .collect();
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&PlacementFile::from(self))?)?;
        Ok(())
    }
}

/// External JSON schema: one assignment row per merged replica group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacementFile {
    pub strategy: String,
    pub assignments: Vec<AssignmentRow>,
    pub overloads: Vec<NodeId>,
    pub fallbacks: Vec<FallbackEvent>,
    pub spread_even_used: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub replica: String,
    pub node: NodeId,
    pub c_r: f64,
    pub merged_subs: usize,
}

impl From<&Placement> for PlacementFile {
    fn from(p: &Placement) -> Self {
        PlacementFile {
            strategy: p.strategy.clone(),
            assignments: p
                .groups
                .iter()
                .map(|g| AssignmentRow {
                    replica: format!("j{}", g.pair),
                    node: g.node,
                    c_r: g.c_r,
                    merged_subs: g.subs.len(),
                })
                .collect(),
            overloads: p.overloaded.clone(),
            fallbacks: p.fallbacks.clone(),
            spread_even_used: p.spread_even_used(),
        }
    }
}

/// Shared per-pair placement engine, used by the full run and by
/// re-optimization events.
pub(crate) struct PairPlacer<'a> {
    pub topology: &'a Topology,
    pub index: &'a NeighborIndex,
    pub config: &'a NovaConfig,
    pub snapshot: CapacitySnapshot,
}

pub(crate) struct PairOutcome {
    pub groups: Vec<PlacedGroup>,
    pub partition: PairPartition,
    pub fallbacks: Vec<FallbackEvent>,
    pub audit: Vec<AssignmentAudit>,
    pub bandwidth_violation: bool,
}

impl<'a> PairPlacer<'a> {
    fn usable(&self, residual: f64, c_r: f64) -> bool {
        residual >= self.config.c_min && residual >= c_r
    }

    fn candidates(
        &self,
        point: &[f64],
        residuals: &[f64],
        k: usize,
        floor: f64,
    ) -> Vec<(NodeId, f64)> {
        let c_min = self.config.c_min.max(floor);
        select_candidates(point, self.index, self.topology, residuals, c_min, k)
    }

    pub fn place_pair(
        &self,
        pair_idx: usize,
        pair: &JoinPair,
        point: &[f64],
        residuals: &mut [f64],
    ) -> Result<PairOutcome> {
        let c_r = pair.required_capacity();
        let mut k = self
            .config
            .k_override
            .unwrap_or_else(|| k_from_median(c_r, self.snapshot.median, self.snapshot.eligible));
        let mut candidates = self.candidates(point, residuals, k, 0.0);
        let mut out = PairOutcome {
            groups: Vec::new(),
            partition: PairPartition::whole(pair.left_rate, pair.right_rate),
            fallbacks: Vec::new(),
            audit: Vec::new(),
            bandwidth_violation: false,
        };

        // Whole-operator shortcut: the nearest candidate that fits the entire
        // pair hosts it unpartitioned.
        if let Some(&(node, _)) = candidates
            .iter()
            .find(|&&(node, _)| self.usable(residuals[node.index()], c_r))
        {
            self.assign(&mut out, pair_idx, pair, node, (0, 0), c_r, residuals, false);
            return Ok(out);
        }

        // Partition both streams under the configured or derived sigma.
        let sigma = match self.config.sigma {
            SigmaMode::Fixed { sigma } => sigma,
            SigmaMode::Auto { t_b } => derive_sigma(pair.left_rate, pair.right_rate, t_b),
        };
        let partition = partition_pair(pair.left_rate, pair.right_rate, sigma);
        if let SigmaMode::Auto { t_b } = self.config.sigma {
            let worst = partition
                .left
                .iter()
                .fold(0.0f64, |a, &b| a.max(b))
                + partition.right.iter().fold(0.0f64, |a, &b| a.max(b));
            out.bandwidth_violation = worst > t_b + 1e-9;
        }
        out.partition = partition;

        // Candidates must satisfy the compute constraint for the replicas
        // being placed: filter to nodes that can host the largest sub, so
        // selection skips drained regions instead of wasting slots on them.
        let max_left = out.partition.left.iter().copied().fold(0.0f64, f64::max);
        let max_right = out.partition.right.iter().copied().fold(0.0f64, f64::max);
        let floor = max_left + max_right;

        // Partitioning multiplies the operator's total demand (every left
        // partition reaches n replicas and vice versa), so the candidate
        // count is re-derived from the partitioned total. Each candidate is
        // only guaranteed to fit one largest sub, so the replica count also
        // bounds k from below.
        if self.config.k_override.is_none() {
            let total = out.partition.total_network_rate();
            let replicas = out.partition.replica_count().min(self.snapshot.eligible.max(1));
            k = k
                .max(k_from_median(total, self.snapshot.median, self.snapshot.eligible))
                .max(replicas);
            candidates = self.candidates(point, residuals, k, floor);
        }

        let m = out.partition.left.len();
        let n = out.partition.right.len();
        let mut pending: Vec<(u32, u32)> = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                pending.push((i as u32, j as u32));
            }
        }
        // Largest sub-replicas first: big loads grab big residuals while they
        // exist. Ties keep row-major order, so uniform partitions (the fully
        // split sigma = 0 case) are unaffected.
        pending.sort_by(|&(i1, j1), &(i2, j2)| {
            out.partition
                .sub_cr(i2 as usize, j2 as usize)
                .total_cmp(&out.partition.sub_cr(i1 as usize, j1 as usize))
                .then(i1.cmp(&i2))
                .then(j1.cmp(&j2))
        });

        let mut cursor = 0usize;
        let mut expanded = self.config.fallback != FallbackPolicy::ExpandK;
        'outer: while cursor < pending.len() {
            let (i, j) = pending[cursor];
            let sub_cr = out.partition.sub_cr(i as usize, j as usize);
            let slot = candidates
                .iter()
                .find(|&&(node, _)| self.usable(residuals[node.index()], sub_cr));
            match slot {
                Some(&(node, _)) => {
                    self.assign(&mut out, pair_idx, pair, node, (i, j), sub_cr, residuals, false);
                    cursor += 1;
                }
                None => {
                    if !expanded {
                        // Expand the neighborhood once before giving up.
                        expanded = true;
                        let new_k = (k * 2).max(2);
                        out.fallbacks.push(FallbackEvent::ExpandedK {
                            pair: pair_idx,
                            from: k,
                            to: new_k,
                        });
                        k = new_k;
                        candidates = self.candidates(point, residuals, k, floor);
                        continue 'outer;
                    }
                    // Spread the remaining sub-replicas evenly, overload
                    // permitted and recorded.
                    if candidates.is_empty() {
                        candidates = self.index.knn(point, k.max(1), &|_| true);
                        if candidates.is_empty() {
                            return Err(Error::Infeasible(
                                "no nodes available for placement".into(),
                            ));
                        }
                    }
                    out.fallbacks.push(FallbackEvent::SpreadEven {
                        pair: pair_idx,
                        subs: pending.len() - cursor,
                    });
                    for (offset, &(i, j)) in pending[cursor..].iter().enumerate() {
                        let node = candidates[offset % candidates.len()].0;
                        let sub_cr = out.partition.sub_cr(i as usize, j as usize);
                        self.assign(&mut out, pair_idx, pair, node, (i, j), sub_cr, residuals, true);
                    }
                    break 'outer;
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn assign(
        &self,
        out: &mut PairOutcome,
        pair_idx: usize,
        _pair: &JoinPair,
        node: NodeId,
        sub: (u32, u32),
        sub_cr: f64,
        residuals: &mut [f64],
        via_fallback: bool,
    ) {
        if self.config.record_audit {
            out.audit.push(AssignmentAudit {
                pair: pair_idx,
                node,
                c_r: sub_cr,
                residual_before: residuals[node.index()],
                via_fallback,
            });
        }
        residuals[node.index()] -= sub_cr;
        let left_in = out.partition.left[sub.0 as usize];
        let right_in = out.partition.right[sub.1 as usize];
        match out.groups.iter_mut().find(|g| g.node == node) {
            Some(group) => {
                group.subs.push(sub);
                group.c_r += sub_cr;
                group.left_in += left_in;
                group.right_in += right_in;
            }
            None => out.groups.push(PlacedGroup {
                pair: pair_idx,
                node,
                subs: vec![sub],
                c_r: sub_cr,
                left_in,
                right_in,
            }),
        }
    }
}

pub struct NovaOutcome {
    pub placement: Placement,
    pub plan: ParallelizedPlan,
    pub virt: VirtualPlacement,
    pub snapshot: CapacitySnapshot,
}

/// Full pipeline: resolve operators, compute virtual optima, then assign
/// every replica to physical nodes under the capacity constraints.
pub fn nova_place(
    topology: &Topology,
    coords: &Coordinates,
    spec: &PlanSpec,
    config: &NovaConfig,
) -> Result<NovaOutcome> {
    let index = NeighborIndex::build(coords, config.knn_mode);
    nova_place_with_index(topology, coords, &index, spec, config)
}

pub fn nova_place_with_index(
    topology: &Topology,
    coords: &Coordinates,
    index: &NeighborIndex,
    spec: &PlanSpec,
    config: &NovaConfig,
) -> Result<NovaOutcome> {
    config.validate()?;
    if coords.len() < topology.len() {
        return Err(Error::InvalidInput(format!(
            "coordinates cover {} nodes but the topology has {}",
            coords.len(),
            topology.len()
        )));
    }
    let plan = resolve_operators(spec, topology)?;
    let virt = compute_optima(coords, &plan, &config.median)?;

    let mut residuals: Vec<f64> = topology.nodes.iter().map(|n| n.capacity).collect();
    let snapshot =
        capacity_snapshot(topology, &residuals, |id| index.is_alive(id), config.c_min);
    let placer = PairPlacer { topology, index, config, snapshot };

    let mut placement = Placement {
        strategy: "nova".into(),
        groups: Vec::new(),
        pinned: plan
            .operators
            .iter()
            .filter(|op| op.kind != OpKind::Join)
            .map(|op| (op.instance(), op.pinned_node.expect("pinned")))
            .collect(),
        residuals: Vec::new(),
        overloaded: Vec::new(),
        fallbacks: Vec::new(),
        bandwidth_violations: Vec::new(),
        partitions: Vec::with_capacity(plan.pairs.len()),
        audit: Vec::new(),
    };

    for (idx, pair) in plan.pairs.iter().enumerate() {
        let mut outcome = placer.place_pair(idx, pair, virt.point(idx), &mut residuals)?;
        placement.groups.append(&mut outcome.groups);
        placement.fallbacks.append(&mut outcome.fallbacks);
        placement.audit.append(&mut outcome.audit);
        if outcome.bandwidth_violation {
            placement.bandwidth_violations.push(idx);
        }
        placement.partitions.push(outcome.partition);
    }
    placement.residuals = residuals;
    placement.recompute_overloads(topology);
    Ok(NovaOutcome { placement, plan, virt, snapshot })
}
