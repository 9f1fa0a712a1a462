//! Metrics over placements: overloaded-node percentage, per-pair end-to-end
//! latencies (estimated from the cost space or true from measurements),
//! percentile statistics, and bandwidth accounting.

use serde::{Deserialize, Serialize};

use crate::costspace::Coordinates;
use crate::error::{Error, Result};
use crate::placement::Placement;
use crate::plan::ParallelizedPlan;
use crate::topology::{LatencySource, NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyMode {
    Estimated,
    True,
}

/// Distance oracle for latency accounting.
pub enum LatencyView<'a> {
    Estimated(&'a Coordinates),
    True(&'a LatencySource),
}

impl<'a> LatencyView<'a> {
    fn between(&self, a: NodeId, b: NodeId) -> Result<f64> {
        match self {
            LatencyView::Estimated(coords) => {
                if a.index() >= coords.len() || b.index() >= coords.len() {
                    return Err(Error::InvalidInput(format!(
                        "missing coordinates for node pair ({a}, {b})"
                    )));
                }
                Ok(coords.distance(a.index(), b.index()))
            }
            LatencyView::True(lat) => {
                if a.index() >= lat.len() || b.index() >= lat.len() {
                    return Err(Error::InvalidInput(format!(
                        "missing latency entry for node pair ({a}, {b})"
                    )));
                }
                Ok(lat.probe(a.index(), b.index()))
            }
        }
    }
}

/// Percentage of replica-hosting nodes whose summed required capacity
/// exceeds their available capacity.
pub fn overload_percentage(placement: &Placement, topology: &Topology) -> Result<f64> {
    let mut load = vec![0.0f64; topology.len()];
    let mut hosting = vec![false; topology.len()];
    for g in &placement.groups {
        load[g.node.index()] += g.c_r;
        hosting[g.node.index()] = true;
    }
    let hosts = hosting.iter().filter(|&&h| h).count();
    if hosts == 0 {
        return Err(Error::InvalidInput("placement hosts no replicas".into()));
    }
    let overloaded = topology
        .nodes
        .iter()
        .filter(|n| hosting[n.id.index()] && load[n.id.index()] > n.capacity + 1e-9)
        .count();
    Ok(100.0 * overloaded as f64 / hosts as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairLatencies {
    /// Worst merged-group path per pair: max(source->host) + host->sink.
    pub per_pair: Vec<f64>,
    /// Sum of distances over every placed edge (both inputs plus the output
    /// of each merged group) — the aggregate objective value.
    pub aggregate_sum: f64,
}

/// End-to-end latency per join pair under the requested distance oracle.
pub fn pair_latency(
    placement: &Placement,
    plan: &ParallelizedPlan,
    view: &LatencyView,
) -> Result<PairLatencies> {
    let mut per_pair = vec![f64::NEG_INFINITY; plan.pairs.len()];
    let mut aggregate = 0.0;
    for g in &placement.groups {
        let pair = &plan.pairs[g.pair];
        let dl = view.between(pair.left, g.node)?;
        let dr = view.between(pair.right, g.node)?;
        let ds = view.between(g.node, plan.sink_node)?;
        aggregate += dl + dr + ds;
        let path = dl.max(dr) + ds;
        if path > per_pair[g.pair] {
            per_pair[g.pair] = path;
        }
    }
    if per_pair.iter().any(|&v| v == f64::NEG_INFINITY) {
        return Err(Error::InvalidInput("placement is not total: a pair has no groups".into()));
    }
    Ok(PairLatencies { per_pair, aggregate_sum: aggregate })
}

/// Nearest-rank percentile over unsorted values; p in (0, 100].
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("percentile of an empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p90: f64,
    pub p99: f64,
    pub p9999: f64,
}

pub fn latency_stats(values: &[f64]) -> Result<LatencyStats> {
    if values.is_empty() {
        return Err(Error::InvalidInput("latency stats over an empty list".into()));
    }
    Ok(LatencyStats {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        p90: percentile(values, 90.0)?,
        p99: percentile(values, 99.0)?,
        p9999: percentile(values, 99.99)?,
    })
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Bandwidth {
    /// Tuples/sec entering replica hosts (co-located source edges excluded).
    pub ingress: f64,
    /// Tuples/sec leaving replica hosts toward the sink.
    pub egress: f64,
}

impl Bandwidth {
    pub fn total(&self) -> f64 {
        self.ingress + self.egress
    }
}

/// Network transfer accounting: each merged group receives its partitioned
/// inputs (unless co-located with the producing source) and emits
/// selectivity * C_r toward the sink (unless it sits on the sink).
pub fn bandwidth_total(
    placement: &Placement,
    plan: &ParallelizedPlan,
    selectivity: f64,
) -> Bandwidth {
    let mut bw = Bandwidth::default();
    for g in &placement.groups {
        let pair = &plan.pairs[g.pair];
        if g.node != pair.left {
            bw.ingress += g.left_in;
        }
        if g.node != pair.right {
            bw.ingress += g.right_in;
        }
        if g.node != plan.sink_node {
            bw.egress += selectivity * g.c_r;
        }
    }
    bw
}

/// Full metric set for one placement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub overload_pct: f64,
    pub stats: LatencyStats,
    pub aggregate_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_vs_sink_p90_ms: Option<f64>,
    pub bandwidth: Bandwidth,
    pub per_pair_ms: Vec<f64>,
    pub spread_even_used: bool,
}

pub fn evaluate(
    placement: &Placement,
    plan: &ParallelizedPlan,
    topology: &Topology,
    view: &LatencyView,
    selectivity: f64,
) -> Result<EvalReport> {
    let lat = pair_latency(placement, plan, view)?;
    let stats = latency_stats(&lat.per_pair)?;
    Ok(EvalReport {
        strategy: placement.strategy.clone(),
        overload_pct: overload_percentage(placement, topology)?,
        stats,
        aggregate_ms: lat.aggregate_sum,
        delta_vs_sink_p90_ms: None,
        bandwidth: bandwidth_total(placement, plan, selectivity),
        per_pair_ms: lat.per_pair,
        spread_even_used: placement.spread_even_used(),
    })
}
