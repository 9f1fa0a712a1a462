//! Physical network model: nodes with roles, capacities and data rates, plus
//! a latency source that is either a dense measured matrix or a pairwise
//! probe over synthetic ground-truth positions.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense node identifier, unique within a topology and contiguous in `[0, n)`
/// at construction time. Re-optimization may leave holes (tombstones).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Worker,
    Sink,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub role: Role,
    /// Available compute capacity in tuples/sec.
    pub capacity: f64,
    /// Emission rate in tuples/sec; positive iff the node is a source.
    pub data_rate: f64,
    /// Logical-stream label, sources only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_tag: Option<Arc<str>>,
}

/// Symmetric latency matrix in milliseconds with zero diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set_symmetric(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
        self.data[j * self.n + i] = value;
    }

    /// Builds a symmetric matrix from parsed rows. Asymmetric entries are
    /// averaged as `(a_ij + a_ji) / 2`; the number of averaged pairs is
    /// returned alongside. Diagonals are forced to zero.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<(Self, usize)> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidInput(format!(
                    "latency matrix is not square: row {} has {} columns, expected {}",
                    i,
                    row.len(),
                    n
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "latency matrix entry ({i},{j}) = {v} is negative or not finite"
                    )));
                }
            }
        }
        let mut m = DenseMatrix::zeros(n);
        let mut warnings = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let a = rows[i][j];
                let b = rows[j][i];
                if a != b {
                    warnings += 1;
                }
                m.set_symmetric(i, j, 0.5 * (a + b));
            }
        }
        Ok((m, warnings))
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Ground-truth positions serving latencies as Euclidean distances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointLatency {
    pub dim: usize,
    /// Flat row-major point storage, `len == n * dim`.
    pub points: Vec<f64>,
}

impl PointLatency {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.points.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (p, q) = (self.point(i), self.point(j));
        p.iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Latency data: a full matrix, or a pair probe over ground-truth points for
/// topologies too large to materialize densely.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum LatencySource {
    Dense(DenseMatrix),
    Points(PointLatency),
}

impl LatencySource {
    pub fn len(&self) -> usize {
        match self {
            LatencySource::Dense(m) => m.n(),
            LatencySource::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn probe(&self, i: usize, j: usize) -> f64 {
        match self {
            LatencySource::Dense(m) => m.get(i, j),
            LatencySource::Points(p) => p.distance(i, j),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, LatencySource::Dense(_))
    }

    /// Materializes a dense view, refusing sizes above `limit`.
    pub fn to_dense(&self, limit: usize) -> Result<DenseMatrix> {
        let n = self.len();
        if n > limit {
            return Err(Error::InvalidInput(format!(
                "refusing to materialize a {n}x{n} latency matrix (limit {limit})"
            )));
        }
        match self {
            LatencySource::Dense(m) => Ok(m.clone()),
            LatencySource::Points(p) => {
                let mut m = DenseMatrix::zeros(n);
                for i in 0..n {
                    for j in (i + 1)..n {
                        m.set_symmetric(i, j, p.distance(i, j));
                    }
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub latency: LatencySource,
}

impl Topology {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn sink(&self) -> Result<NodeId> {
        let mut it = self.nodes.iter().filter(|n| n.role == Role::Sink);
        match (it.next(), it.next()) {
            (Some(s), None) => Ok(s.id),
            (None, _) => Err(Error::InvalidInput("topology has no sink".into())),
            (Some(_), Some(_)) => Err(Error::InvalidInput("topology has multiple sinks".into())),
        }
    }

    pub fn sources(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.role == Role::Source)
    }

    pub fn workers(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.role == Role::Worker)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latency.len() != self.nodes.len() {
            return Err(Error::InvalidInput(format!(
                "latency covers {} nodes but topology has {}",
                self.latency.len(),
                self.nodes.len()
            )));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(Error::InvalidInput(format!(
                    "node ids must be dense: position {} holds id {}",
                    i, node.id
                )));
            }
            if node.capacity < 0.0 || node.data_rate < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "node {} has negative capacity or data rate",
                    node.id
                )));
            }
            let is_source = node.role == Role::Source;
            if is_source != (node.data_rate > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "node {}: data_rate > 0 must hold exactly for sources",
                    node.id
                )));
            }
            if is_source && node.stream_tag.is_none() {
                return Err(Error::InvalidInput(format!(
                    "source node {} is missing a stream tag",
                    node.id
                )));
            }
        }
        self.sink()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Whitespace,
    Csv,
}

/// Loads a plain-text latency matrix: n rows of n non-negative reals,
/// whitespace- or comma-separated. Returns the symmetrized matrix plus the
/// count of asymmetric entries that were averaged.
pub fn load_latency_matrix(path: &Path, format: MatrixFormat) -> Result<(DenseMatrix, usize)> {
    let text = std::fs::read_to_string(path)?;
    parse_latency_matrix(&text, format)
}

pub fn parse_latency_matrix(text: &str, format: MatrixFormat) -> Result<(DenseMatrix, usize)> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = match format {
            MatrixFormat::Whitespace => line.split_whitespace().collect(),
            MatrixFormat::Csv => line.split(',').map(str::trim).collect(),
        };
        let mut row = Vec::with_capacity(tokens.len());
        for tok in tokens {
            if tok.is_empty() {
                continue;
            }
            let v: f64 = tok.parse().map_err(|_| {
                Error::Parse(format!("line {}: cannot parse '{}' as a number", lineno + 1, tok))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("latency matrix file is empty".into()));
    }
    DenseMatrix::from_rows(rows)
}

/// Synthetic topology generator: Gaussian clusters inside a bounding box,
/// with latencies defined as Euclidean distances between ground-truth points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub n_clusters: usize,
    /// Std-dev of the per-cluster Gaussian, in coordinate units (ms).
    pub cluster_std: f64,
    /// [[x_lo, x_hi], [y_lo, y_hi]]
    pub bbox: [[f64; 2]; 2],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_nodes: 1000,
            n_clusters: 5,
            cluster_std: 8.0,
            bbox: [[0.0, 100.0], [-50.0, 50.0]],
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters < 1 || self.n_nodes < self.n_clusters {
            return Err(Error::InvalidInput(format!(
                "need n_nodes >= n_clusters >= 1, got {} and {}",
                self.n_nodes, self.n_clusters
            )));
        }
        if self.cluster_std < 0.0 {
            return Err(Error::InvalidInput("cluster_std must be non-negative".into()));
        }
        for d in 0..2 {
            if self.bbox[d][0] >= self.bbox[d][1] {
                return Err(Error::InvalidInput("bbox bounds must be increasing".into()));
            }
        }
        Ok(())
    }
}

/// Generates node ground-truth points; all nodes start as zero-capacity
/// workers until a workload is assigned. Latencies are kept lazy (pair probe
/// over the points) and never materialized densely here.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Topology> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [bx, by] = spec.bbox;
    let mut centers = Vec::with_capacity(spec.n_clusters);
    for _ in 0..spec.n_clusters {
        let cx = rng.random_range(bx[0]..bx[1]);
        let cy = rng.random_range(by[0]..by[1]);
        centers.push((cx, cy));
    }
    let normal = Normal::new(0.0, spec.cluster_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(format!("bad cluster std: {e}")))?;
    let mut points = Vec::with_capacity(spec.n_nodes * 2);
    for i in 0..spec.n_nodes {
        let (cx, cy) = centers[i % spec.n_clusters];
        let x = (cx + normal.sample(&mut rng)).clamp(bx[0], bx[1]);
        let y = (cy + normal.sample(&mut rng)).clamp(by[0], by[1]);
        points.push(x);
        points.push(y);
    }
    let nodes = (0..spec.n_nodes)
        .map(|i| Node {
            id: NodeId(i as u32),
            role: Role::Worker,
            capacity: 0.0,
            data_rate: 0.0,
            stream_tag: None,
        })
        .collect();
    Ok(Topology {
        nodes,
        latency: LatencySource::Points(PointLatency { dim: 2, points }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CapacityDist {
    Uniform { lo: f64, hi: f64 },
    /// Exp(scale) clamped to [1, clamp_hi].
    Exponential { scale: f64, clamp_hi: f64 },
}

impl CapacityDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CapacityDist::Uniform { lo, hi } => rng.random_range(lo..hi),
            CapacityDist::Exponential { scale, clamp_hi } => {
                let exp = Exp::new(1.0 / scale).expect("positive scale");
                exp.sample(rng).clamp(1.0, clamp_hi)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceCapacity {
    /// Sources advertise no spare capacity and stay ineligible for hosting.
    Zero,
    /// Sources draw capacity from the same distribution as workers.
    FromDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaSpec {
    Fixed(f64),
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub source_fraction: f64,
    pub rate_range: (f64, f64),
    /// Fraction of sources drawing from `hot_rate_range` instead, emulating
    /// skewed key distributions. Zero disables the hot tier.
    #[serde(default)]
    pub hot_fraction: f64,
    #[serde(default)]
    pub hot_rate_range: (f64, f64),
    pub capacity_dist: CapacityDist,
    /// When set, capacity samples are rescaled so their mean hits this target,
    /// keeping the total capacity constant across distribution shapes.
    pub capacity_mean_target: Option<f64>,
    pub source_capacity: SourceCapacity,
    pub c_min: f64,
    pub t_b: f64,
    pub sigma: SigmaSpec,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            source_fraction: 0.6,
            rate_range: (1.0, 200.0),
            hot_fraction: 0.0,
            hot_rate_range: (200.0, 800.0),
            capacity_dist: CapacityDist::Uniform { lo: 1.0, hi: 200.0 },
            capacity_mean_target: Some(35.0),
            source_capacity: SourceCapacity::Zero,
            c_min: 1.0,
            t_b: 0.0,
            sigma: SigmaSpec::Fixed(0.4),
            seed: 42,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.source_fraction > 0.0 && self.source_fraction < 1.0) {
            return Err(Error::InvalidInput("source_fraction must be in (0, 1)".into()));
        }
        if self.rate_range.0 <= 0.0 || self.rate_range.1 < self.rate_range.0 {
            return Err(Error::InvalidInput("rate_range must be positive and increasing".into()));
        }
        if let SigmaSpec::Fixed(s) = self.sigma {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidInput(format!("sigma {s} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub const LEFT_TAG: &str = "left";
pub const RIGHT_TAG: &str = "right";

/// Assigns roles, stream tags, data rates and capacities to a bare topology.
/// Deterministic for a fixed seed.
pub fn assign_workload(topology: &Topology, spec: &WorkloadSpec) -> Result<Topology> {
    spec.validate()?;
    let n = topology.len();
    if n < 3 {
        return Err(Error::InvalidInput("workload assignment needs at least 3 nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let n_sources = ((n as f64) * spec.source_fraction).round() as usize;
    let n_sources = n_sources.clamp(1, n - 2);
    if n - n_sources < 2 {
        return Err(Error::Infeasible("fewer than 1 worker after assignment".into()));
    }

    let left: Arc<str> = Arc::from(LEFT_TAG);
    let right: Arc<str> = Arc::from(RIGHT_TAG);
    let mut nodes = topology.nodes.clone();

    for &i in order.iter().take(n_sources) {
        let tag = if rng.random_range(0..2u32) == 0 { left.clone() } else { right.clone() };
        nodes[i].role = Role::Source;
        nodes[i].stream_tag = Some(tag);
        let range = if spec.hot_fraction > 0.0 && rng.random_range(0.0..1.0) < spec.hot_fraction {
            spec.hot_rate_range
        } else {
            spec.rate_range
        };
        nodes[i].data_rate = rng.random_range(range.0..range.1);
        nodes[i].capacity = 0.0;
    }
    let rest = &order[n_sources..];
    let sink_pos = rest[rng.random_range(0..rest.len())];
    for &i in rest {
        nodes[i].role = if i == sink_pos { Role::Sink } else { Role::Worker };
        nodes[i].stream_tag = None;
        nodes[i].data_rate = 0.0;
        nodes[i].capacity = spec.capacity_dist.sample(&mut rng);
    }
    if spec.source_capacity == SourceCapacity::FromDist {
        for &i in order.iter().take(n_sources) {
            nodes[i].capacity = spec.capacity_dist.sample(&mut rng);
        }
    }
    if let Some(target) = spec.capacity_mean_target {
        let carriers: Vec<usize> =
            (0..n).filter(|&i| nodes[i].capacity > 0.0).collect();
        let mean: f64 =
            carriers.iter().map(|&i| nodes[i].capacity).sum::<f64>() / carriers.len().max(1) as f64;
        if mean > 0.0 {
            let scale = target / mean;
            for &i in &carriers {
                nodes[i].capacity *= scale;
            }
        }
    }

    let out = Topology { nodes, latency: topology.latency.clone() };
    out.validate()?;
    Ok(out)
}

/// Population coefficient of variation: std / mean.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty value list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(Error::InvalidInput("coefficient of variation needs mean > 0".into()));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// On-disk topology description. Latency comes from a matrix file (resolved
/// relative to the topology file) or is regenerated from a synthetic spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    pub nodes: Vec<Node>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_format: Option<MatrixFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_spec: Option<SyntheticSpec>,
}

pub fn load_topology(path: &Path) -> Result<Topology> {
    let text = std::fs::read_to_string(path)?;
    let file: TopologyFile = serde_json::from_str(&text)?;
    let latency = match (&file.latency_path, &file.synthetic_spec) {
        (Some(rel), _) => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            let format = file.latency_format.unwrap_or(MatrixFormat::Whitespace);
            let (m, _) = load_latency_matrix(&base.join(rel), format)?;
            LatencySource::Dense(m)
        }
        (None, Some(spec)) => generate_synthetic(spec)?.latency,
        (None, None) => {
            return Err(Error::InvalidInput(
                "topology file needs latency_path or synthetic_spec".into(),
            ))
        }
    };
    let topo = Topology { nodes: file.nodes, latency };
    topo.validate()?;
    Ok(topo)
}

pub fn save_topology(topology: &Topology, path: &Path, latency_path: Option<&str>) -> Result<()> {
    let file = TopologyFile {
        nodes: topology.nodes.clone(),
        latency_path: latency_path.map(str::to_owned),
        latency_format: latency_path.map(|_| MatrixFormat::Whitespace),
        synthetic_spec: None,
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn save_latency_matrix(matrix: &DenseMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..matrix.n() {
        for j in 0..matrix.n() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{}", matrix.get(i, j)));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_smallest_symmetric_matrix() {
        let (m, warnings) = parse_latency_matrix("0 5\n5 0\n", MatrixFormat::Whitespace).unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(m.get(0, 1), 5.0);
        assert_eq!(warnings, 0);
    }

    #[test]
    fn asymmetric_entries_are_averaged_with_warning() {
        let (m, warnings) = parse_latency_matrix("0,4\n6,0\n", MatrixFormat::Csv).unwrap();
        assert_eq!(m.get(0, 1), 5.0);
        assert_eq!(m.get(1, 0), 5.0);
        assert_eq!(warnings, 1);
    }

    #[test]
    fn rejects_non_square_and_negative_and_garbage() {
        assert!(parse_latency_matrix("0 1 2\n1 0\n", MatrixFormat::Whitespace).is_err());
        assert!(parse_latency_matrix("0 -1\n-1 0\n", MatrixFormat::Whitespace).is_err());
        assert!(parse_latency_matrix("0 x\n1 0\n", MatrixFormat::Whitespace).is_err());
    }

    #[test]
    fn synthetic_generation_is_reproducible() {
        let spec = SyntheticSpec { n_nodes: 1000, n_clusters: 5, seed: 42, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        match (&a.latency, &b.latency) {
            (LatencySource::Points(pa), LatencySource::Points(pb)) => {
                assert_eq!(pa.points, pb.points);
            }
            _ => panic!("synthetic latency must be point-backed"),
        }
    }

    #[test]
    fn synthetic_single_node_is_degenerate() {
        let spec = SyntheticSpec { n_nodes: 1, n_clusters: 1, ..Default::default() };
        let t = generate_synthetic(&spec).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.latency.len(), 1);
    }

    #[test]
    fn synthetic_latency_is_symmetric_with_zero_diagonal() {
        let spec = SyntheticSpec { n_nodes: 200, ..Default::default() };
        let t = generate_synthetic(&spec).unwrap();
        for (i, j) in [(0usize, 1usize), (5, 17), (100, 199), (3, 3)] {
            assert_eq!(t.latency.probe(i, j), t.latency.probe(j, i));
        }
        for i in [0usize, 7, 199] {
            assert_eq!(t.latency.probe(i, i), 0.0);
        }
        // Points stay inside the bounding box.
        if let LatencySource::Points(p) = &t.latency {
            for i in 0..p.len() {
                let pt = p.point(i);
                assert!((0.0..=100.0).contains(&pt[0]));
                assert!((-50.0..=50.0).contains(&pt[1]));
            }
        }
    }

    #[test]
    fn large_generation_stays_lazy() {
        let spec = SyntheticSpec { n_nodes: 100_000, ..Default::default() };
        let t = generate_synthetic(&spec).unwrap();
        assert!(!t.latency.is_dense());
        assert!(t.latency.to_dense(10_000).is_err());
    }

    #[test]
    fn workload_counts_and_determinism() {
        let topo = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let spec = WorkloadSpec::default();
        let a = assign_workload(&topo, &spec).unwrap();
        let b = assign_workload(&topo, &spec).unwrap();
        let sources = a.sources().count();
        let workers = a.workers().count();
        let sinks = a.nodes.iter().filter(|n| n.role == Role::Sink).count();
        assert_eq!(sources, 600);
        assert_eq!(workers, 399);
        assert_eq!(sinks, 1);
        for (x, y) in a.nodes.iter().zip(&b.nodes) {
            assert_eq!(x.role, y.role);
            assert_eq!(x.capacity, y.capacity);
            assert_eq!(x.data_rate, y.data_rate);
        }
        a.validate().unwrap();
    }

    #[test]
    fn uniform_capacity_median_matches_target() {
        let topo = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let spec = WorkloadSpec::default();
        let t = assign_workload(&topo, &spec).unwrap();
        let mut caps: Vec<f64> =
            t.nodes.iter().filter(|n| n.capacity > 0.0).map(|n| n.capacity).collect();
        caps.sort_by(|a, b| a.total_cmp(b));
        let median = caps[caps.len() / 2];
        // Uniform shape normalized to mean 35 puts the median near 35.
        assert!((median - 35.0).abs() <= 7.0, "median {median} too far from 35");
    }

    #[test]
    fn exponential_capacities_are_more_heterogeneous_than_uniform() {
        let topo =
            generate_synthetic(&SyntheticSpec { n_nodes: 3000, ..Default::default() }).unwrap();
        let uni = assign_workload(&topo, &WorkloadSpec::default()).unwrap();
        let exp = assign_workload(
            &topo,
            &WorkloadSpec {
                capacity_dist: CapacityDist::Exponential { scale: 500.0, clamp_hi: 1000.0 },
                ..Default::default()
            },
        )
        .unwrap();
        let caps = |t: &Topology| -> Vec<f64> {
            t.nodes.iter().filter(|n| n.capacity > 0.0).map(|n| n.capacity).collect()
        };
        let cv_uni = coefficient_of_variation(&caps(&uni)).unwrap();
        let cv_exp = coefficient_of_variation(&caps(&exp)).unwrap();
        assert!(cv_exp > cv_uni, "expected exponential CV {cv_exp} > uniform CV {cv_uni}");
    }

    #[test]
    fn exponential_capacity_median_lands_near_28() {
        let topo = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let spec = WorkloadSpec {
            capacity_dist: CapacityDist::Exponential { scale: 500.0, clamp_hi: 1000.0 },
            ..Default::default()
        };
        let t = assign_workload(&topo, &spec).unwrap();
        let mut caps: Vec<f64> =
            t.nodes.iter().filter(|n| n.capacity > 0.0).map(|n| n.capacity).collect();
        caps.sort_by(|a, b| a.total_cmp(b));
        let median = caps[caps.len() / 2];
        assert!((median - 28.0).abs() <= 6.0, "median {median} too far from 28");
    }

    #[test]
    fn coefficient_of_variation_reference_values() {
        assert_eq!(coefficient_of_variation(&[10.0, 10.0, 10.0]).unwrap(), 0.0);
        assert!((coefficient_of_variation(&[0.0, 20.0]).unwrap() - 1.0).abs() < 1e-12);
        let cv = coefficient_of_variation(&[1.0, 1.0, 1.0, 97.0]).unwrap();
        assert!((cv - 1.66).abs() <= 0.01, "cv = {cv}");
        assert!(coefficient_of_variation(&[]).is_err());
        assert!(coefficient_of_variation(&[0.0, 0.0]).is_err());
    }
}
