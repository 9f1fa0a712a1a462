//! Phase I: embeds pairwise latencies into a d-dimensional Euclidean cost
//! space. Small dense matrices go through iterative stress majorization;
//! large topologies use a Vivaldi-style spring relaxation that only probes
//! O(n*m) latency entries.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{DenseMatrix, LatencySource, NodeId, PointLatency};

/// Per-node coordinate vectors, flat row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    dim: usize,
    data: Vec<f64>,
}

impl Coordinates {
    pub fn zeros(dim: usize, n: usize) -> Self {
        Coordinates { dim, data: vec![0.0; dim * n] }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidInput("coordinate data not a multiple of dim".into()));
        }
        Ok(Coordinates { dim, data })
    }

    pub fn from_points(points: &PointLatency) -> Self {
        Coordinates { dim: points.dim, data: points.points.clone() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, point: &[f64]) -> NodeId {
        assert_eq!(point.len(), self.dim);
        let id = NodeId(self.len() as u32);
        self.data.extend_from_slice(point);
        id
    }

    pub fn set(&mut self, i: usize, point: &[f64]) {
        assert_eq!(point.len(), self.dim);
        self.point_mut(i).copy_from_slice(point);
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(self.point(i), self.point(j))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CoordsFile { d: self.dim, coords: self.rows() };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: CoordsFile = serde_json::from_str(&text)?;
        let mut data = Vec::with_capacity(file.coords.len() * file.d);
        for row in &file.coords {
            if row.len() != file.d {
                return Err(Error::InvalidInput("coordinate row has wrong dimension".into()));
            }
            data.extend_from_slice(row);
        }
        Coordinates::from_flat(file.d, data)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i).to_vec()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CoordsFile {
    d: usize,
    coords: Vec<Vec<f64>>,
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub dim: usize,
    /// Vivaldi neighbor count m.
    pub neighbors: usize,
    pub iterations: usize,
    /// Step schedule alpha_t = step0 / (1 + t / step_tau).
    pub step0: f64,
    pub step_tau: f64,
    pub seed: u64,
    /// Relative stress-improvement threshold for MDS termination.
    pub mds_tol: f64,
    /// Random restarts for MDS; the lowest-stress embedding wins.
    pub mds_restarts: usize,
    /// Matrices larger than this must use Vivaldi.
    pub dense_limit: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 2,
            neighbors: 20,
            iterations: 200,
            step0: 0.25,
            step_tau: 50.0,
            seed: 42,
            mds_tol: 1e-12,
            mds_restarts: 4,
            dense_limit: 5000,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::InvalidInput("embedding dimension must be >= 1".into()));
        }
        if self.neighbors < 1 {
            return Err(Error::InvalidInput("neighbor count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MdsResult {
    pub coords: Coordinates,
    /// Final squared Frobenius stress ||D(X) - A||_F^2.
    pub stress: f64,
    pub iterations: usize,
    /// Stress after each accepted iteration of the winning restart.
    pub stress_trace: Vec<f64>,
}

fn frobenius_stress(coords: &Coordinates, matrix: &DenseMatrix) -> f64 {
    let n = matrix.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = coords.distance(i, j);
            let a = matrix.get(i, j);
            s += (d - a) * (d - a);
        }
    }
    2.0 * s
}

/// Iterative stress majorization over a dense symmetric latency matrix.
/// Each iteration applies the Guttman transform, so the stress trace is
/// non-increasing; starts are seeded uniform draws in the latency-scale box.
pub fn embed_mds(matrix: &DenseMatrix, cfg: &EmbedConfig) -> Result<MdsResult> {
    cfg.validate()?;
    let n = matrix.n();
    if n > cfg.dense_limit {
        return Err(Error::InvalidInput(format!(
            "matrix size {n} exceeds the dense embedding limit {}; use the sparse embedding",
            cfg.dense_limit
        )));
    }
    if n == 0 {
        return Ok(MdsResult {
            coords: Coordinates::zeros(cfg.dim, 0),
            stress: 0.0,
            iterations: 0,
            stress_trace: vec![],
        });
    }
    if n == 1 {
        return Ok(MdsResult {
            coords: Coordinates::zeros(cfg.dim, 1),
            stress: 0.0,
            iterations: 0,
            stress_trace: vec![0.0],
        });
    }

    let scale = matrix.max_entry().max(1.0);
    let eps = 1e-12 * scale;
    let mut best: Option<MdsResult> = None;

    for restart in 0..cfg.mds_restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(restart as u64));
        let mut x = Coordinates::zeros(cfg.dim, n);
        for i in 0..n {
            for v in x.point_mut(i) {
                *v = rng.random_range(0.0..scale);
            }
        }
        let mut stress = frobenius_stress(&x, matrix);
        let mut trace = vec![stress];
        let mut iters = 0;
        let max_iter = cfg.iterations.max(1) * 10;

        let mut next = Coordinates::zeros(cfg.dim, n);
        for _ in 0..max_iter {
            // Guttman transform with uniform weights: X' = B(X) X / n.
            for i in 0..n {
                let mut acc = vec![0.0; cfg.dim];
                let mut diag = 0.0;
                let pi = x.point(i).to_vec();
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let d = dist(&pi, x.point(j)).max(eps);
                    let b = matrix.get(i, j) / d;
                    diag += b;
                    for (a, &v) in acc.iter_mut().zip(x.point(j)) {
                        *a -= b * v;
                    }
                }
                for ((t, a), &v) in next.point_mut(i).iter_mut().zip(acc).zip(&pi) {
                    *t = (diag * v + a) / n as f64;
                }
            }
            std::mem::swap(&mut x, &mut next);
            let new_stress = frobenius_stress(&x, matrix);
            debug_assert!(
                new_stress <= stress + 1e-9 * (1.0 + stress),
                "stress increased: {stress} -> {new_stress}"
            );
            iters += 1;
            trace.push(new_stress);
            let improved = stress - new_stress;
            stress = new_stress;
            if improved < cfg.mds_tol * (1.0 + stress) {
                break;
            }
        }

        let candidate = MdsResult { coords: x, stress, iterations: iters, stress_trace: trace };
        if best.as_ref().map_or(true, |b| candidate.stress < b.stress) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Vivaldi-style embedding: every node keeps a fixed set of m uniformly
/// sampled neighbors and relaxes spring forces against them with a decaying
/// step. Only the n*m sampled pairs are ever probed.
pub fn embed_vivaldi(latency: &LatencySource, cfg: &EmbedConfig) -> Result<Coordinates> {
    cfg.validate()?;
    let n = latency.len();
    let m = cfg.neighbors;
    if n == 0 {
        return Ok(Coordinates::zeros(cfg.dim, 0));
    }
    if n == 1 {
        return Ok(Coordinates::zeros(cfg.dim, 1));
    }
    if m >= n {
        return Err(Error::InvalidInput(format!(
            "neighbor count m={m} must be smaller than the node count n={n}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut neighbors = Vec::with_capacity(n * m);
    let mut probed = Vec::with_capacity(n * m);
    for i in 0..n {
        let sample = rand::seq::index::sample(&mut rng, n - 1, m);
        for raw in sample.iter() {
            let j = if raw >= i { raw + 1 } else { raw };
            neighbors.push(j as u32);
            probed.push(latency.probe(i, j));
        }
    }

    // Seed positions inside a box matching the probed latency scale.
    let mut sorted = probed.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let scale = sorted[sorted.len() / 2].max(1.0);
    let mut coords = Coordinates::zeros(cfg.dim, n);
    for i in 0..n {
        for v in coords.point_mut(i) {
            *v = rng.random_range(0.0..scale);
        }
    }

    let dimensionality = cfg.dim;
    let mut delta = vec![0.0; dimensionality];
    for t in 0..cfg.iterations {
        let alpha = cfg.step0 / (1.0 + t as f64 / cfg.step_tau);
        for i in 0..n {
            for k in 0..m {
                let j = neighbors[i * m + k] as usize;
                let rtt = probed[i * m + k];
                let mut d2 = 0.0;
                {
                    let (pi, pj) = (coords.point(i), coords.point(j));
                    for (s, (a, b)) in delta.iter_mut().zip(pi.iter().zip(pj)) {
                        *s = a - b;
                        d2 += *s * *s;
                    }
                }
                let d = d2.sqrt();
                if d < 1e-12 {
                    // Coincident points: pick a deterministic direction.
                    let mut h = (i as u64).wrapping_mul(0x9E3779B97F4A7C15) ^ (j as u64);
                    for s in delta.iter_mut() {
                        h = h.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        *s = ((h >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                    }
                    let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    let step = alpha * rtt;
                    for (p, s) in coords.point_mut(i).iter_mut().zip(&delta) {
                        *p += step * s / norm;
                    }
                    continue;
                }
                let err = d - rtt;
                let step = alpha * err / d;
                for (p, s) in coords.point_mut(i).iter_mut().zip(&delta) {
                    *p -= step * s;
                }
            }
        }
    }
    Ok(coords)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Mean absolute error between embedded distances and latencies (ms).
    pub mae: f64,
    /// Median of |d_hat - a| / a over sampled pairs with a > 0.
    pub relative_error_median: f64,
    pub sampled_pairs: usize,
}

/// Compares embedded distances against latencies over sampled node pairs.
pub fn embedding_error(
    coords: &Coordinates,
    latency: &LatencySource,
    sample_pairs: usize,
    seed: u64,
) -> Result<ErrorStats> {
    let n = coords.len().min(latency.len());
    if n < 2 || sample_pairs == 0 {
        return Err(Error::InvalidInput("need >= 2 nodes and >= 1 sample pair".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut abs_errors = Vec::with_capacity(sample_pairs);
    let mut rel_errors = Vec::new();
    for _ in 0..sample_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let d = coords.distance(i, j);
        let a = latency.probe(i, j);
        abs_errors.push((d - a).abs());
        if a > 0.0 {
            rel_errors.push((d - a).abs() / a);
        }
    }
    let mae = abs_errors.iter().sum::<f64>() / abs_errors.len() as f64;
    let median = if rel_errors.is_empty() {
        0.0
    } else {
        rel_errors.sort_by(|a, b| a.total_cmp(b));
        rel_errors[rel_errors.len() / 2]
    };
    Ok(ErrorStats { mae, relative_error_median: median, sampled_pairs: sample_pairs })
}

/// Solves for a new node's coordinate from latency probes against already
/// embedded nodes, minimizing sum((|x - a_j| - L_j)^2) by gradient descent
/// with backtracking. Runtime depends only on the probe count.
pub fn solve_new_coordinate(
    coords: &Coordinates,
    probes: &[(NodeId, f64)],
) -> Result<(Vec<f64>, f64)> {
    if probes.is_empty() {
        return Err(Error::InvalidInput("need at least one probe".into()));
    }
    let dim = coords.dim();
    for (id, lat) in probes {
        if id.index() >= coords.len() {
            return Err(Error::InvalidInput(format!("probe references unknown node {id}")));
        }
        if !lat.is_finite() || *lat < 0.0 {
            return Err(Error::InvalidInput("probe latency must be non-negative".into()));
        }
    }
    let anchors: Vec<&[f64]> = probes.iter().map(|(id, _)| coords.point(id.index())).collect();
    let lats: Vec<f64> = probes.iter().map(|&(_, l)| l).collect();

    let objective = |x: &[f64]| -> f64 {
        anchors
            .iter()
            .zip(&lats)
            .map(|(a, &l)| {
                let d = dist(x, a);
                (d - l) * (d - l)
            })
            .sum()
    };

    // Centroid start, nudged off any coincident anchor.
    let mut x = vec![0.0; dim];
    for a in &anchors {
        for (xi, ai) in x.iter_mut().zip(*a) {
            *xi += ai / anchors.len() as f64;
        }
    }
    let scale = lats.iter().copied().fold(1.0, f64::max);
    if anchors.iter().any(|a| dist(&x, a) < 1e-9 * scale) {
        x[0] += 1e-3 * scale;
    }

    let mut fx = objective(&x);
    let mut grad = vec![0.0; dim];
    // Warm-started backtracking keeps the per-iteration line search short.
    let mut step0 = 1.0f64;
    for _ in 0..500 {
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        for (a, &l) in anchors.iter().zip(&lats) {
            let d = dist(&x, a).max(1e-12);
            let c = 2.0 * (d - l) / d;
            for (g, (xi, ai)) in grad.iter_mut().zip(x.iter().zip(*a)) {
                *g += c * (xi - ai);
            }
        }
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() < 1e-10 * (1.0 + scale) {
            break;
        }
        let mut step = step0;
        let mut accepted = false;
        while step > 1e-16 {
            let cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, g)| xi - step * g).collect();
            let fc = objective(&cand);
            if fc <= fx - 1e-4 * step * gnorm2 {
                let moved = step * gnorm2.sqrt();
                x = cand;
                fx = fc;
                accepted = true;
                step0 = (step * 2.0).min(1.0);
                if moved < 1e-10 * (1.0 + scale) {
                    return Ok((x, fx));
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((x, fx))
}

/// Copying wrapper around [`solve_new_coordinate`]: pre-existing coordinates
/// come back bit-identical with the new node appended.
pub fn add_node_coordinates(
    coords: &Coordinates,
    probes: &[(NodeId, f64)],
) -> Result<(Coordinates, f64)> {
    let (point, residual) = solve_new_coordinate(coords, probes)?;
    let mut out = coords.clone();
    out.push(&point);
    Ok((out, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{generate_synthetic, SyntheticSpec};

    fn matrix_from(rows: &[&[f64]]) -> DenseMatrix {
        let (m, _) = DenseMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap();
        m
    }

    #[test]
    fn mds_embeds_a_metric_triangle_exactly() {
        // 3-4-5 triangle is realizable in the plane.
        let m = matrix_from(&[&[0.0, 3.0, 4.0], &[3.0, 0.0, 5.0], &[4.0, 5.0, 0.0]]);
        let r = embed_mds(&m, &EmbedConfig { iterations: 500, ..Default::default() }).unwrap();
        assert!(r.stress < 1e-6, "stress = {}", r.stress);
        assert!((r.coords.distance(0, 1) - 3.0).abs() < 1e-4);
        assert!((r.coords.distance(0, 2) - 4.0).abs() < 1e-4);
        assert!((r.coords.distance(1, 2) - 5.0).abs() < 1e-4);
    }

    #[test]
    fn mds_single_node_is_zero() {
        let m = matrix_from(&[&[0.0]]);
        let r = embed_mds(&m, &EmbedConfig::default()).unwrap();
        assert_eq!(r.coords.len(), 1);
        assert_eq!(r.stress, 0.0);
        assert_eq!(r.coords.point(0), &[0.0, 0.0]);
    }

    #[test]
    fn mds_stress_trace_never_increases() {
        let m = matrix_from(&[
            &[0.0, 10.0, 20.0, 15.0],
            &[10.0, 0.0, 12.0, 30.0],
            &[20.0, 12.0, 0.0, 25.0],
            &[15.0, 30.0, 25.0, 0.0],
        ]);
        let r = embed_mds(&m, &EmbedConfig::default()).unwrap();
        for w in r.stress_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]), "trace increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn mds_keeps_positive_stress_on_triangle_violations() {
        // Star with a severe violation: d(1,2)=100 but both are 1 from node 3.
        let m = matrix_from(&[
            &[0.0, 1.0, 1.0, 1.0],
            &[1.0, 0.0, 100.0, 1.0],
            &[1.0, 100.0, 0.0, 1.0],
            &[1.0, 1.0, 1.0, 0.0],
        ]);
        let r = embed_mds(&m, &EmbedConfig { iterations: 500, ..Default::default() }).unwrap();
        assert!(r.stress > 1.0, "TIV cannot embed, stress = {}", r.stress);
    }

    #[test]
    fn mds_refuses_matrices_above_dense_limit() {
        let m = DenseMatrix::zeros(11);
        let cfg = EmbedConfig { dense_limit: 10, ..Default::default() };
        assert!(embed_mds(&m, &cfg).is_err());
    }

    #[test]
    fn vivaldi_two_nodes_single_spring() {
        let m = matrix_from(&[&[0.0, 40.0], &[40.0, 0.0]]);
        let cfg = EmbedConfig { neighbors: 1, iterations: 400, ..Default::default() };
        let coords = embed_vivaldi(&LatencySource::Dense(m), &cfg).unwrap();
        let d = coords.distance(0, 1);
        assert!((d - 40.0).abs() / 40.0 < 0.05, "distance {d} not within 5% of 40");
    }

    #[test]
    fn vivaldi_rejects_oversized_neighborhoods() {
        let m = matrix_from(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let cfg = EmbedConfig { neighbors: 2, ..Default::default() };
        assert!(embed_vivaldi(&LatencySource::Dense(m), &cfg).is_err());
    }

    #[test]
    fn vivaldi_recovers_euclidean_synthetic_topology() {
        let topo =
            generate_synthetic(&SyntheticSpec { n_nodes: 1000, ..Default::default() }).unwrap();
        let cfg = EmbedConfig { neighbors: 20, iterations: 200, ..Default::default() };
        let coords = embed_vivaldi(&topo.latency, &cfg).unwrap();
        let stats = embedding_error(&coords, &topo.latency, 20_000, 7).unwrap();
        assert!(
            stats.relative_error_median < 0.10,
            "median relative error {} >= 10%",
            stats.relative_error_median
        );
    }

    #[test]
    fn embedding_error_identities() {
        let topo =
            generate_synthetic(&SyntheticSpec { n_nodes: 50, ..Default::default() }).unwrap();
        let truth = match &topo.latency {
            LatencySource::Points(p) => Coordinates::from_points(p),
            _ => unreachable!(),
        };
        let stats = embedding_error(&truth, &topo.latency, 500, 3).unwrap();
        assert!(stats.mae < 1e-9);

        // All-at-origin coordinates: MAE equals the mean sampled latency.
        let origin = Coordinates::zeros(2, 50);
        let stats0 = embedding_error(&origin, &topo.latency, 500, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mean = 0.0;
        for _ in 0..500 {
            let i = rng.random_range(0..50);
            let mut j = rng.random_range(0..49);
            if j >= i {
                j += 1;
            }
            mean += topo.latency.probe(i, j);
        }
        mean /= 500.0;
        assert!((stats0.mae - mean).abs() < 1e-9);
    }

    #[test]
    fn perturbed_coordinates_bound_the_error() {
        let topo =
            generate_synthetic(&SyntheticSpec { n_nodes: 80, ..Default::default() }).unwrap();
        let mut coords = match &topo.latency {
            LatencySource::Points(p) => Coordinates::from_points(p),
            _ => unreachable!(),
        };
        let eps = 0.5;
        for i in 0..coords.len() {
            coords.point_mut(i)[0] += eps;
        }
        // Shifting every point equally leaves distances unchanged; perturb one
        // coordinate only to create a bounded error instead.
        let stats = embedding_error(&coords, &topo.latency, 1000, 5).unwrap();
        assert!(stats.mae <= 2.0 * eps + 1e-9);
    }

    #[test]
    fn new_node_single_probe_lands_on_the_circle() {
        let mut coords = Coordinates::zeros(2, 1); // one anchor at the origin
        coords.set(0, &[0.0, 0.0]);
        let (extended, residual) =
            add_node_coordinates(&coords, &[(NodeId(0), 10.0)]).unwrap();
        let d = dist(extended.point(1), &[0.0, 0.0]);
        assert!((d - 10.0).abs() < 1e-3, "d = {d}");
        assert!(residual < 1e-6);
        // Pre-existing coordinates are untouched.
        assert_eq!(extended.point(0), coords.point(0));
    }

    #[test]
    fn new_node_trilateration_recovers_position() {
        let mut coords = Coordinates::zeros(2, 3);
        coords.set(0, &[0.0, 0.0]);
        coords.set(1, &[100.0, 0.0]);
        coords.set(2, &[0.0, 80.0]);
        let target = [37.0, 22.0];
        let probes: Vec<(NodeId, f64)> = (0..3u32)
            .map(|i| (NodeId(i), dist(coords.point(i as usize), &target)))
            .collect();
        let (point, residual) = solve_new_coordinate(&coords, &probes).unwrap();
        assert!(dist(&point, &target) < 1e-3, "recovered {:?}", point);
        assert!(residual < 1e-6);
    }

    #[test]
    fn new_node_with_inconsistent_probes_is_least_squares() {
        let mut coords = Coordinates::zeros(2, 3);
        coords.set(0, &[0.0, 0.0]);
        coords.set(1, &[10.0, 0.0]);
        coords.set(2, &[5.0, 10.0]);
        // Latencies that no single point can satisfy.
        let probes = vec![(NodeId(0), 1.0), (NodeId(1), 1.0), (NodeId(2), 1.0)];
        let (point, residual) = solve_new_coordinate(&coords, &probes).unwrap();
        assert!(residual > 1.0);
        // Grid-search oracle over the bounding box, refined once.
        let objective = |x: f64, y: f64| -> f64 {
            [(0.0, 0.0, 1.0), (10.0, 0.0, 1.0), (5.0, 10.0, 1.0)]
                .iter()
                .map(|&(ax, ay, l): &(f64, f64, f64)| {
                    let d = ((x - ax).powi(2) + (y - ay).powi(2)).sqrt();
                    (d - l) * (d - l)
                })
                .sum()
        };
        let mut best = f64::INFINITY;
        let mut best_xy = (0.0, 0.0);
        for xi in -20..=40 {
            for yi in -20..=40 {
                let (x, y) = (xi as f64 * 0.5, yi as f64 * 0.5);
                let v = objective(x, y);
                if v < best {
                    best = v;
                    best_xy = (x, y);
                }
            }
        }
        for xi in -50..=50 {
            for yi in -50..=50 {
                let (x, y) = (best_xy.0 + xi as f64 * 0.01, best_xy.1 + yi as f64 * 0.01);
                best = best.min(objective(x, y));
            }
        }
        assert!(residual <= best + 1e-2, "descent {residual} vs grid oracle {best}");
        let _ = point;
    }

    #[test]
    fn coordinates_roundtrip_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coords.json");
        let mut coords = Coordinates::zeros(2, 3);
        coords.set(0, &[1.5, -2.0]);
        coords.set(1, &[0.0, 4.25]);
        coords.set(2, &[-3.0, 0.125]);
        coords.save(&path).unwrap();
        let back = Coordinates::load(&path).unwrap();
        assert_eq!(coords, back);
    }
}
