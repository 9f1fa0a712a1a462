//! Phase II: each join replica's ideal position is the geometric median of
//! its pinned anchors (the two sources and the sink), solved by Weiszfeld
//! reweighting with distance smoothing.

use serde::{Deserialize, Serialize};

use crate::costspace::{dist, Coordinates};
use crate::error::{Error, Result};
use crate::plan::ParallelizedPlan;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MedianConfig {
    /// Stop once the iterate moves less than this (ms).
    pub tol: f64,
    pub max_iter: usize,
    /// Distance smoothing floor; handles iterates landing on an anchor.
    pub eps: f64,
}

impl Default for MedianConfig {
    fn default() -> Self {
        MedianConfig { tol: 1e-6, max_iter: 1000, eps: 1e-9 }
    }
}

fn objective(anchors: &[Vec<f64>], y: &[f64]) -> f64 {
    anchors.iter().map(|a| dist(a, y)).sum()
}

/// Point minimizing the sum of Euclidean distances to the anchors, plus the
/// achieved objective. Coincident anchors act as weight (listing a point
/// twice doubles its pull). The objective is non-increasing per iteration.
pub fn geometric_median(anchors: &[Vec<f64>], cfg: &MedianConfig) -> Result<(Vec<f64>, f64)> {
    if anchors.is_empty() {
        return Err(Error::InvalidInput("geometric median needs at least one anchor".into()));
    }
    let dim = anchors[0].len();
    // Centroid start: inside the hull, converges fast.
    let mut start = vec![0.0; dim];
    for a in anchors {
        if a.len() != dim {
            return Err(Error::InvalidInput("anchors must share a dimension".into()));
        }
        for (si, ai) in start.iter_mut().zip(a) {
            *si += ai / anchors.len() as f64;
        }
    }
    geometric_median_from(anchors, start, cfg)
}

/// Weiszfeld iteration from an explicit start point. The problem is convex,
/// so any start converges to the same optimum.
pub fn geometric_median_from(
    anchors: &[Vec<f64>],
    start: Vec<f64>,
    cfg: &MedianConfig,
) -> Result<(Vec<f64>, f64)> {
    let dim = start.len();
    for a in anchors {
        if a.len() != dim || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("anchors must be finite and share a dimension".into()));
        }
    }
    let mut y = start;
    let mut obj = objective(anchors, &y);
    let mut next = vec![0.0; dim];
    let mut prev_step = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let mut den = 0.0;
        for v in next.iter_mut() {
            *v = 0.0;
        }
        for a in anchors {
            let d = dist(a, &y).max(cfg.eps);
            let w = 1.0 / d;
            den += w;
            for (n, ai) in next.iter_mut().zip(a) {
                *n += w * ai;
            }
        }
        for n in next.iter_mut() {
            *n /= den;
        }
        let step = dist(&next, &y);
        y.copy_from_slice(&next);
        let new_obj = objective(anchors, &y);
        debug_assert!(
            new_obj <= obj + 1e-9 * (1.0 + obj),
            "median objective increased: {obj} -> {new_obj}"
        );
        obj = new_obj;
        // Linear convergence: the remaining distance to the fixed point is
        // about step * r / (1 - r) for contraction rate r, so stop on that
        // estimate rather than the raw step.
        let rate = (step / prev_step).clamp(0.0, 0.99);
        let remaining = step * rate / (1.0 - rate);
        prev_step = step.max(1e-300);
        if step.max(remaining) < cfg.tol {
            break;
        }
    }
    Ok((y, obj))
}

/// Virtual positions for every join replica, keyed by pair index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VirtualPlacement {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    /// Achieved sum of distances to the anchors, per replica (ms).
    pub objectives: Vec<f64>,
}

impl VirtualPlacement {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, pair: usize) -> &[f64] {
        &self.points[pair]
    }
}

/// Runs one independent geometric-median solve per join replica over the
/// coordinates of its two sources and the sink.
pub fn compute_optima(
    coords: &Coordinates,
    plan: &ParallelizedPlan,
    cfg: &MedianConfig,
) -> Result<VirtualPlacement> {
    let mut points = Vec::with_capacity(plan.pairs.len());
    let mut objectives = Vec::with_capacity(plan.pairs.len());
    let sink = plan.sink_node;
    if sink.index() >= coords.len() {
        return Err(Error::InvalidInput(format!("no coordinates for sink node {sink}")));
    }
    for pair in &plan.pairs {
        for node in [pair.left, pair.right] {
            if node.index() >= coords.len() {
                return Err(Error::InvalidInput(format!("no coordinates for pinned node {node}")));
            }
        }
        let anchors = vec![
            coords.point(pair.left.index()).to_vec(),
            coords.point(pair.right.index()).to_vec(),
            coords.point(sink.index()).to_vec(),
        ];
        let (point, obj) = geometric_median(&anchors, cfg)?;
        points.push(point);
        objectives.push(obj);
    }
    Ok(VirtualPlacement { dim: coords.dim(), points, objectives })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn median(anchors: &[[f64; 2]]) -> (Vec<f64>, f64) {
        let v: Vec<Vec<f64>> = anchors.iter().map(|a| a.to_vec()).collect();
        geometric_median(&v, &MedianConfig::default()).unwrap()
    }

    /// Coarse grid scan refined around the best cell; the standard oracle for
    /// small instances.
    pub(crate) fn grid_oracle(anchors: &[[f64; 2]], lo: f64, hi: f64) -> f64 {
        let obj = |x: f64, y: f64| -> f64 {
            anchors.iter().map(|a| ((x - a[0]).powi(2) + (y - a[1]).powi(2)).sqrt()).sum()
        };
        let mut best = f64::INFINITY;
        let mut best_xy = (lo, lo);
        let coarse = 0.1;
        let steps = ((hi - lo) / coarse) as i64;
        for xi in 0..=steps {
            for yi in 0..=steps {
                let (x, y) = (lo + xi as f64 * coarse, lo + yi as f64 * coarse);
                let v = obj(x, y);
                if v < best {
                    best = v;
                    best_xy = (x, y);
                }
            }
        }
        for xi in -100..=100 {
            for yi in -100..=100 {
                let x = best_xy.0 + xi as f64 * 0.002;
                let y = best_xy.1 + yi as f64 * 0.002;
                best = best.min(obj(x, y));
            }
        }
        best
    }

    #[test]
    fn identical_anchors_collapse() {
        let (y, obj) = median(&[[3.0, 4.0], [3.0, 4.0], [3.0, 4.0]]);
        assert!(dist(&y, &[3.0, 4.0]) < 1e-9);
        assert!(obj < 1e-6);
    }

    #[test]
    fn equilateral_triangle_gives_the_centroid() {
        let h = 3f64.sqrt() / 2.0;
        let anchors = [[0.0, 0.0], [1.0, 0.0], [0.5, h]];
        let (y, obj) = median(&anchors);
        let centroid = [0.5, h / 3.0];
        assert!(dist(&y, &centroid) < 1e-4, "got {:?}", y);
        // Objective = 3 * circumradius (distance from centroid to a vertex).
        let circumradius = dist(&centroid, &anchors[0]);
        assert!((obj - 3.0 * circumradius).abs() < 1e-4);
    }

    #[test]
    fn obtuse_triangle_median_is_the_wide_vertex() {
        // Angle at the origin is > 120 degrees.
        let anchors = [[0.0, 0.0], [10.0, 1.0], [-10.0, 1.0]];
        let (y, obj) = median(&anchors);
        assert!(dist(&y, &[0.0, 0.0]) < 1e-3, "got {:?}", y);
        let oracle = grid_oracle(&anchors, -12.0, 12.0);
        assert!(obj <= oracle + 1e-2);
    }

    #[test]
    fn square_corners_meet_in_the_center() {
        let (y, obj) = median(&[[0.0, 0.0], [0.0, 2.0], [2.0, 0.0], [2.0, 2.0]]);
        assert!(dist(&y, &[1.0, 1.0]) < 1e-4);
        assert!((obj - 4.0 * 2f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn collinear_anchors_pick_the_middle_point() {
        let (y, _) = median(&[[0.0, 0.0], [40.0, 0.0], [150.0, 0.0]]);
        assert!(dist(&y, &[40.0, 0.0]) < 1e-3, "got {:?}", y);
    }

    #[test]
    fn random_instances_match_the_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..25 {
            let anchors: Vec<[f64; 2]> = (0..3)
                .map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)])
                .collect();
            let (_, obj) = median(&anchors);
            let oracle = grid_oracle(&anchors, 0.0, 100.0);
            assert!(obj <= oracle + 1e-2, "weiszfeld {obj} vs oracle {oracle}");
        }
    }

    #[test]
    fn median_stays_inside_the_anchor_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a: Vec<[f64; 2]> = (0..3)
                .map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)])
                .collect();
            let (y, _) = median(&a);
            // Barycentric coordinates of y w.r.t. the triangle must all be
            // non-negative (up to solver tolerance).
            let det = (a[1][0] - a[0][0]) * (a[2][1] - a[0][1])
                - (a[2][0] - a[0][0]) * (a[1][1] - a[0][1]);
            if det.abs() < 1e-9 {
                continue; // Degenerate triangle.
            }
            let l1 = ((a[1][0] - y[0]) * (a[2][1] - y[1]) - (a[2][0] - y[0]) * (a[1][1] - y[1]))
                / det;
            let l2 = ((a[2][0] - y[0]) * (a[0][1] - y[1]) - (a[0][0] - y[0]) * (a[2][1] - y[1]))
                / det;
            let l3 = 1.0 - l1 - l2;
            let tol = -1e-6;
            assert!(l1 >= tol && l2 >= tol && l3 >= tol, "median left the hull: {l1} {l2} {l3}");
        }
    }

    #[test]
    fn empty_anchor_set_is_an_error() {
        assert!(geometric_median(&[], &MedianConfig::default()).is_err());
    }

    #[test]
    fn compute_optima_is_order_independent_and_empty_safe() {
        use crate::plan::JoinPair;
        use crate::topology::NodeId;
        let mut coords = Coordinates::zeros(2, 4);
        coords.set(0, &[0.0, 0.0]);
        coords.set(1, &[10.0, 0.0]);
        coords.set(2, &[5.0, 8.0]);
        coords.set(3, &[2.0, 2.0]);
        let mk = |left: u32, right: u32| JoinPair {
            left: NodeId(left),
            right: NodeId(right),
            left_rate: 1.0,
            right_rate: 1.0,
        };
        let plan = ParallelizedPlan {
            operators: vec![],
            pairs: vec![mk(0, 1), mk(1, 2), mk(0, 2)],
            sink_node: NodeId(3),
            selectivity: 1.0,
        };
        let forward = compute_optima(&coords, &plan, &MedianConfig::default()).unwrap();
        let reversed_plan = ParallelizedPlan {
            operators: vec![],
            pairs: vec![mk(0, 2), mk(1, 2), mk(0, 1)],
            sink_node: NodeId(3),
            selectivity: 1.0,
        };
        let reversed = compute_optima(&coords, &reversed_plan, &MedianConfig::default()).unwrap();
        // Replicas are independent: permuting them permutes results exactly.
        assert_eq!(forward.points[0], reversed.points[2]);
        assert_eq!(forward.points[2], reversed.points[0]);
        assert_eq!(forward.points[1], reversed.points[1]);

        let empty_plan = ParallelizedPlan {
            operators: vec![],
            pairs: vec![],
            sink_node: NodeId(3),
            selectivity: 1.0,
        };
        let empty = compute_optima(&coords, &empty_plan, &MedianConfig::default()).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn different_starts_agree_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let anchors: Vec<Vec<f64>> = (0..4)
                .map(|_| vec![rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)])
                .collect();
            let cfg = MedianConfig { max_iter: 5000, ..Default::default() };
            let s1 = vec![rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)];
            let s2 = vec![rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)];
            let (y1, _) = geometric_median_from(&anchors, s1, &cfg).unwrap();
            let (y2, _) = geometric_median_from(&anchors, s2, &cfg).unwrap();
            assert!(dist(&y1, &y2) <= 10.0 * cfg.tol, "starts disagree: {:?} vs {:?}", y1, y2);
        }
    }
}
