//! Seeded experiment harness: builds synthetic workloads across a capacity
//! heterogeneity sweep, runs every requested strategy, and aggregates metric
//! rows into CSV/JSON reports.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_strategy, Strategy};
use crate::costspace::{embed_mds, embed_vivaldi, Coordinates, EmbedConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, LatencyMode, LatencyView};
use crate::placement::{partition_pair, FallbackPolicy, NovaConfig, SigmaMode};
use crate::plan::PlanSpec;
use crate::topology::{
    assign_workload, coefficient_of_variation, generate_synthetic, CapacityDist, LatencySource,
    SourceCapacity, SyntheticSpec, Topology, WorkloadSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapacityBudget {
    /// Rescale capacities so their mean hits this value.
    TargetMean { mean: f64 },
    /// Rescale so total capacity = margin x the raw demand (sum of pair
    /// required capacities) of the generated join workload.
    RawMargin { margin: f64 },
    /// Rescale so total capacity = margin x the worst-case partitioned
    /// demand of the generated join workload.
    PartitionedMargin { margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EmbedMethod {
    Vivaldi { m: usize, iterations: usize },
    Mds,
    /// Synthetic ground-truth positions used directly.
    GroundTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub n_nodes: usize,
    pub n_clusters: usize,
    pub cluster_std: f64,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    /// Heterogeneity sweep: one cell per (distribution, seed).
    pub capacity_sweep: Vec<CapacityDist>,
    pub source_fraction: f64,
    pub rate_range: (f64, f64),
    #[serde(default)]
    pub hot_fraction: f64,
    #[serde(default)]
    pub hot_rate_range: (f64, f64),
    pub source_capacity: SourceCapacity,
    pub capacity_budget: CapacityBudget,
    pub c_min: f64,
    pub sigma: SigmaMode,
    pub fallback: FallbackPolicy,
    pub embed: EmbedMethod,
    pub latency_mode: LatencyMode,
    #[serde(default)]
    pub baseline_clusters: Option<usize>,
    #[serde(default = "default_pairing")]
    pub pairing: crate::plan::Pairing,
}

fn default_pairing() -> crate::plan::Pairing {
    crate::plan::Pairing::Regional
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "sweep".into(),
            n_nodes: 1000,
            n_clusters: 5,
            cluster_std: 8.0,
            seeds: vec![1, 2, 3],
            strategies: Strategy::ALL.to_vec(),
            capacity_sweep: default_capacity_sweep(),
            source_fraction: 0.6,
            rate_range: (1.0, 200.0),
            hot_fraction: 0.1,
            hot_rate_range: (200.0, 800.0),
            source_capacity: SourceCapacity::FromDist,
            capacity_budget: CapacityBudget::PartitionedMargin { margin: 1.45 },
            c_min: 25.0,
            sigma: SigmaMode::Fixed { sigma: 0.4 },
            fallback: FallbackPolicy::ExpandK,
            embed: EmbedMethod::Vivaldi { m: 20, iterations: 200 },
            latency_mode: LatencyMode::True,
            baseline_clusters: None,
            pairing: crate::plan::Pairing::Regional,
        }
    }
}

impl ExperimentSpec {
    /// The heterogeneity sweep: a 1000-node topology whose capacity budget
    /// leaves the placement engine room to avoid every overload while the
    /// per-node ceilings stay below the largest join pairs.
    pub fn overload_sweep() -> Self {
        ExperimentSpec {
            name: "overload-sweep".into(),
            seeds: vec![1, 2, 3],
            baseline_clusters: Some(2),
            ..Default::default()
        }
    }
}

/// Near-uniform through increasingly skewed clamped exponentials.
pub fn default_capacity_sweep() -> Vec<CapacityDist> {
    vec![
        CapacityDist::Uniform { lo: 1.0, hi: 200.0 },
        CapacityDist::Exponential { scale: 900.0, clamp_hi: 1000.0 },
        CapacityDist::Exponential { scale: 650.0, clamp_hi: 1000.0 },
        CapacityDist::Exponential { scale: 500.0, clamp_hi: 1000.0 },
        CapacityDist::Exponential { scale: 400.0, clamp_hi: 1000.0 },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRow {
    pub experiment: String,
    pub strategy: String,
    pub n_nodes: usize,
    pub dist_index: usize,
    pub cv: f64,
    pub seed: u64,
    pub overload_pct: f64,
    pub mean_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub delta_vs_sink_ms: f64,
    pub bw_tuples_s: f64,
    pub opt_time_s: f64,
    pub reopt_time_s: f64,
    pub spread_even_used: bool,
    pub fallback_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: String,
    pub dist_index: usize,
    pub cv_mean: f64,
    pub overload_mean: f64,
    pub overload_std: f64,
    pub p90_mean: f64,
    pub p90_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec_name: String,
    pub rows: Vec<CellRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Worst-case partitioned demand of the whole workload: the sum over pairs
/// of their fully partitioned network rate under the effective sigma.
pub fn partitioned_demand(spec: &PlanSpec, topology: &Topology, sigma: &SigmaMode) -> f64 {
    spec.join_pairs
        .iter()
        .map(|&(l, r)| {
            let (dl, dr) = (topology.node(l).data_rate, topology.node(r).data_rate);
            let s = match *sigma {
                SigmaMode::Fixed { sigma } => sigma,
                SigmaMode::Auto { t_b } => crate::placement::derive_sigma(dl, dr, t_b),
            };
            partition_pair(dl, dr, s).total_network_rate()
        })
        .sum()
}

/// Unpartitioned demand: the sum of pair required capacities.
pub fn raw_demand(spec: &PlanSpec, topology: &Topology) -> f64 {
    spec.join_pairs
        .iter()
        .map(|&(l, r)| topology.node(l).data_rate + topology.node(r).data_rate)
        .sum()
}

/// Rescales carrier capacities to the requested budget, preserving the
/// distribution shape (and thus the CV).
pub fn apply_budget(
    topology: &mut Topology,
    spec: &PlanSpec,
    sigma: &SigmaMode,
    budget: CapacityBudget,
) {
    let carriers: Vec<usize> =
        (0..topology.len()).filter(|&i| topology.nodes[i].capacity > 0.0).collect();
    if carriers.is_empty() {
        return;
    }
    let total: f64 = carriers.iter().map(|&i| topology.nodes[i].capacity).sum();
    let target_total = match budget {
        CapacityBudget::TargetMean { mean } => mean * carriers.len() as f64,
        CapacityBudget::RawMargin { margin } => margin * raw_demand(spec, topology),
        CapacityBudget::PartitionedMargin { margin } => {
            margin * partitioned_demand(spec, topology, sigma)
        }
    };
    if total <= 0.0 || target_total <= 0.0 {
        return;
    }
    let scale = target_total / total;
    for &i in &carriers {
        topology.nodes[i].capacity *= scale;
    }
}

/// One experiment cell: build the workload, embed, run one strategy.
struct Cell {
    dist_index: usize,
    seed: u64,
}

struct PreparedCell {
    topology: Topology,
    coords: Coordinates,
    plan_spec: PlanSpec,
    cv: f64,
}

fn prepare_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<PreparedCell> {
    let synth = SyntheticSpec {
        n_nodes: spec.n_nodes,
        n_clusters: spec.n_clusters,
        cluster_std: spec.cluster_std,
        seed: cell.seed,
        ..Default::default()
    };
    let bare = generate_synthetic(&synth)?;
    let workload = WorkloadSpec {
        source_fraction: spec.source_fraction,
        rate_range: spec.rate_range,
        hot_fraction: spec.hot_fraction,
        hot_rate_range: spec.hot_rate_range,
        capacity_dist: spec.capacity_sweep[cell.dist_index],
        capacity_mean_target: None,
        source_capacity: spec.source_capacity,
        c_min: spec.c_min,
        t_b: match spec.sigma {
            SigmaMode::Auto { t_b } => t_b,
            _ => 0.0,
        },
        sigma: crate::topology::SigmaSpec::Fixed(0.4),
        seed: cell.seed.wrapping_mul(1000).wrapping_add(cell.dist_index as u64),
    };
    let mut topology = assign_workload(&bare, &workload)?;
    let plan_spec = PlanSpec::from_topology(&topology, spec.pairing, cell.seed ^ 0x5EED)?;
    apply_budget(&mut topology, &plan_spec, &spec.sigma, spec.capacity_budget);

    let coords = match spec.embed {
        EmbedMethod::GroundTruth => match &topology.latency {
            LatencySource::Points(p) => Coordinates::from_points(p),
            _ => return Err(Error::InvalidInput("ground-truth embed needs points".into())),
        },
        EmbedMethod::Vivaldi { m, iterations } => {
            let cfg = EmbedConfig {
                neighbors: m,
                iterations,
                seed: cell.seed ^ 0xE33B,
                ..Default::default()
            };
            embed_vivaldi(&topology.latency, &cfg)?
        }
        EmbedMethod::Mds => {
            let dense = topology.latency.to_dense(5000)?;
            embed_mds(&dense, &EmbedConfig { seed: cell.seed, ..Default::default() })?.coords
        }
    };
    let caps: Vec<f64> = topology
        .nodes
        .iter()
        .filter(|n| n.capacity > 0.0)
        .map(|n| n.capacity)
        .collect();
    let cv = coefficient_of_variation(&caps)?;
    Ok(PreparedCell { topology, coords, plan_spec, cv })
}

fn nova_config(spec: &ExperimentSpec) -> NovaConfig {
    NovaConfig {
        sigma: spec.sigma,
        c_min: spec.c_min,
        fallback: spec.fallback,
        ..Default::default()
    }
}

fn eval_cell(
    prepared: &PreparedCell,
    placement: &crate::placement::Placement,
    plan: &crate::plan::ParallelizedPlan,
    mode: LatencyMode,
    selectivity: f64,
) -> Result<EvalReport> {
    let view = match mode {
        LatencyMode::True => LatencyView::True(&prepared.topology.latency),
        LatencyMode::Estimated => LatencyView::Estimated(&prepared.coords),
    };
    evaluate(placement, plan, &prepared.topology, &view, selectivity)
}

fn run_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<Vec<CellRow>> {
    let prepared = prepare_cell(spec, cell)?;
    let config = nova_config(spec);
    // Sink reference for latency deltas, always computed.
    let (sink_placement, sink_plan) = run_strategy(
        Strategy::Sink,
        &prepared.topology,
        &prepared.coords,
        &prepared.plan_spec,
        &config,
        spec.baseline_clusters,
        cell.seed,
    )?;
    let sink_report =
        eval_cell(&prepared, &sink_placement, &sink_plan, spec.latency_mode, config.selectivity)?;

    let mut rows = Vec::with_capacity(spec.strategies.len());
    for &strategy in &spec.strategies {
        let started = Instant::now();
        let (placement, plan) = run_strategy(
            strategy,
            &prepared.topology,
            &prepared.coords,
            &prepared.plan_spec,
            &config,
            spec.baseline_clusters,
            cell.seed,
        )?;
        let opt_time = started.elapsed().as_secs_f64();
        let report =
            eval_cell(&prepared, &placement, &plan, spec.latency_mode, config.selectivity)?;
        rows.push(CellRow {
            experiment: spec.name.clone(),
            strategy: strategy.name().into(),
            n_nodes: spec.n_nodes,
            dist_index: cell.dist_index,
            cv: prepared.cv,
            seed: cell.seed,
            overload_pct: report.overload_pct,
            mean_ms: report.stats.mean,
            p90_ms: report.stats.p90,
            p99_ms: report.stats.p99,
            delta_vs_sink_ms: report.stats.p90 - sink_report.stats.p90,
            bw_tuples_s: report.bandwidth.total(),
            opt_time_s: opt_time,
            reopt_time_s: 0.0,
            spread_even_used: report.spread_even_used,
            fallback_count: placement.fallbacks.len(),
        });
    }
    Ok(rows)
}

/// Runs every (distribution, seed, strategy) cell. Cells are independent;
/// `threads` > 1 processes them concurrently with deterministic output
/// ordering.
pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<ExperimentReport> {
    if spec.strategies.is_empty() {
        return Err(Error::InvalidInput("experiment needs at least one strategy".into()));
    }
    if spec.capacity_sweep.is_empty() {
        return Err(Error::InvalidInput("experiment needs at least one capacity point".into()));
    }
    let mut cells = Vec::new();
    for dist_index in 0..spec.capacity_sweep.len() {
        for &seed in &spec.seeds {
            cells.push(Cell { dist_index, seed });
        }
    }
    let results: Vec<Mutex<Option<Result<Vec<CellRow>>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = threads.max(1).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let out = run_cell(spec, &cells[i]);
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });
    let mut rows = Vec::new();
    for slot in results {
        let cell_rows = slot.into_inner().unwrap().expect("cell executed")?;
        rows.extend(cell_rows);
    }
    let aggregates = aggregate(&rows);
    Ok(ExperimentReport { spec_name: spec.name.clone(), rows, aggregates })
}

fn aggregate(rows: &[CellRow]) -> Vec<AggregateRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(usize, String), Vec<&CellRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.dist_index, row.strategy.clone())).or_default().push(row);
    }
    let stats = |vals: &[f64]| -> (f64, f64) {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    groups
        .into_iter()
        .map(|((dist_index, strategy), rows)| {
            let overloads: Vec<f64> = rows.iter().map(|r| r.overload_pct).collect();
            let p90s: Vec<f64> = rows.iter().map(|r| r.p90_ms).collect();
            let cvs: Vec<f64> = rows.iter().map(|r| r.cv).collect();
            let (o_mean, o_std) = stats(&overloads);
            let (p_mean, p_std) = stats(&p90s);
            AggregateRow {
                strategy,
                dist_index,
                cv_mean: cvs.iter().sum::<f64>() / cvs.len() as f64,
                overload_mean: o_mean,
                overload_std: o_std,
                p90_mean: p_mean,
                p90_std: p_std,
            }
        })
        .collect()
}

pub const CSV_HEADER: &str = "experiment,strategy,n_nodes,cv,seed,overload_pct,mean_ms,p90_ms,\
                              p99_ms,delta_vs_sink_ms,bw_tuples_s,opt_time_s,reopt_time_s";

pub fn write_csv<W: Write>(report: &ExperimentReport, mut w: W) -> Result<()> {
    writeln!(w, "{}", CSV_HEADER)?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{:.4},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.4},{:.4}",
            r.experiment,
            r.strategy,
            r.n_nodes,
            r.cv,
            r.seed,
            r.overload_pct,
            r.mean_ms,
            r.p90_ms,
            r.p99_ms,
            r.delta_vs_sink_ms,
            r.bw_tuples_s,
            r.opt_time_s,
            r.reopt_time_s
        )?;
    }
    Ok(())
}
