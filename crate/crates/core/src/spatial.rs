//! Nearest-neighbor search over node coordinates: an exact k-d tree for
//! small topologies and a bucketed grid with candidate over-fetch for large
//! ones. Both support tombstone removal and incremental insertion so that
//! re-optimization events stay cheap.


use serde::{Deserialize, Serialize};

use crate::costspace::{dist, Coordinates};
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    Exact,
    Approximate,
}

/// Candidate entry ordered by (distance, id) so ties break toward lower ids.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded worst-first collector for the current best k candidates.
struct TopK {
    k: usize,
    heap: std::collections::BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK { k, heap: std::collections::BinaryHeap::with_capacity(k + 1) }
    }

    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn worst_dist(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.dist)
        }
    }

    fn into_sorted(self) -> Vec<(NodeId, f64)> {
        let mut v: Vec<Candidate> = self.heap.into_vec();
        v.sort();
        v.into_iter().map(|c| (NodeId(c.id), c.dist)).collect()
    }
}

/// Static k-d tree. Split values are baked at build time so that later
/// coordinate updates (served through the overflow list) cannot corrupt
/// pruning decisions.
#[derive(Debug, Clone)]
struct KdTree {
    order: Vec<u32>,
    splits: Vec<f64>,
}

impl KdTree {
    fn build(points: &Coordinates, ids: Vec<u32>) -> Self {
        let n = ids.len();
        let mut tree = KdTree { order: ids, splits: vec![0.0; n] };
        if n > 0 {
            tree.build_rec(points, 0, n, 0);
        }
        tree
    }

    fn build_rec(&mut self, points: &Coordinates, lo: usize, hi: usize, depth: usize) {
        if hi - lo == 0 {
            return;
        }
        let axis = depth % points.dim();
        let mid = lo + (hi - lo) / 2;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            points.point(a as usize)[axis]
                .total_cmp(&points.point(b as usize)[axis])
                .then(a.cmp(&b))
        });
        self.splits[mid] = points.point(self.order[mid] as usize)[axis];
        if hi - lo == 1 {
            return;
        }
        self.build_rec(points, lo, mid, depth + 1);
        self.build_rec(points, mid + 1, hi, depth + 1);
    }

    fn search(
        &self,
        points: &Coordinates,
        query: &[f64],
        top: &mut TopK,
        accept: &dyn Fn(u32) -> bool,
    ) {
        if !self.order.is_empty() {
            self.search_rec(points, query, 0, self.order.len(), 0, top, accept);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn search_rec(
        &self,
        points: &Coordinates,
        query: &[f64],
        lo: usize,
        hi: usize,
        depth: usize,
        top: &mut TopK,
        accept: &dyn Fn(u32) -> bool,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let id = self.order[mid];
        if accept(id) {
            top.offer(Candidate { dist: dist(query, points.point(id as usize)), id });
        }
        if hi - lo == 1 {
            return;
        }
        let axis = depth % points.dim();
        let diff = query[axis] - self.splits[mid];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search_rec(points, query, near.0, near.1, depth + 1, top, accept);
        if diff.abs() <= top.worst_dist() {
            self.search_rec(points, query, far.0, far.1, depth + 1, top, accept);
        }
    }
}

/// Uniform 2-D bucket grid with ring-expansion queries. Buckets live in a
/// dense row-major array sized at build time; later insertions clamp into
/// the border cells, which keeps the ring distance bounds valid because a
/// clamped point is at least as far from any in-grid query as its cell.
#[derive(Debug, Clone)]
struct Grid {
    cell: f64,
    origin: (i64, i64),
    dims: (i64, i64),
    buckets: Vec<Vec<u32>>,
}

impl Grid {
    fn build(points: &Coordinates, ids: &[u32]) -> Self {
        debug_assert_eq!(points.dim(), 2);
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for &id in ids {
            let p = points.point(id as usize);
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        if ids.is_empty() {
            min = [0.0, 0.0];
            max = [1.0, 1.0];
        }
        let extent = (max[0] - min[0]).max(max[1] - min[1]).max(1e-9);
        let cell = (extent / (ids.len().max(1) as f64).sqrt().ceil().max(1.0)).max(1e-9);
        let origin = ((min[0] / cell).floor() as i64, (min[1] / cell).floor() as i64);
        let dims = (
            ((max[0] / cell).floor() as i64 - origin.0 + 1).max(1),
            ((max[1] / cell).floor() as i64 - origin.1 + 1).max(1),
        );
        let mut grid = Grid {
            cell,
            origin,
            dims,
            buckets: vec![Vec::new(); (dims.0 * dims.1) as usize],
        };
        for &id in ids {
            grid.insert(points.point(id as usize), id);
        }
        grid
    }

    /// Unclamped cell coordinates.
    fn key(&self, p: &[f64]) -> (i64, i64) {
        ((p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64)
    }

    fn clamp(&self, key: (i64, i64)) -> (i64, i64) {
        (
            key.0.clamp(self.origin.0, self.origin.0 + self.dims.0 - 1),
            key.1.clamp(self.origin.1, self.origin.1 + self.dims.1 - 1),
        )
    }

    fn slot(&self, key: (i64, i64)) -> usize {
        let (x, y) = self.clamp(key);
        ((y - self.origin.1) * self.dims.0 + (x - self.origin.0)) as usize
    }

    fn insert(&mut self, p: &[f64], id: u32) {
        let slot = self.slot(self.key(p));
        self.buckets[slot].push(id);
    }

    fn remove(&mut self, p: &[f64], id: u32) {
        let slot = self.slot(self.key(p));
        self.buckets[slot].retain(|&x| x != id);
    }

    /// Ring expansion around the query cell. Stops once a full ring cannot
    /// beat the current k-th distance, or (approximate mode) once 4k
    /// candidates have been ranked.
    fn search(
        &self,
        points: &Coordinates,
        query: &[f64],
        k: usize,
        top: &mut TopK,
        accept: &dyn Fn(u32) -> bool,
        overfetch_stop: bool,
    ) {
        let raw = self.key(query);
        let (cx, cy) = self.clamp(raw);
        // An out-of-grid query weakens ring lower bounds by its clamp gap.
        let clamp_gap = (raw.0 - cx).abs().max((raw.1 - cy).abs()) as f64 * self.cell;
        let max_ring = self.dims.0.max(self.dims.1);
        let mut seen = 0usize;
        for r in 0..=max_ring {
            if r > 0 {
                let ring_floor = ((r - 1) as f64 * self.cell - clamp_gap).max(0.0);
                if top.worst_dist() < ring_floor {
                    break;
                }
                if overfetch_stop && seen >= 4 * k && r >= 2 {
                    break;
                }
            }
            let (x_lo, x_hi) = (self.origin.0, self.origin.0 + self.dims.0 - 1);
            let (y_lo, y_hi) = (self.origin.1, self.origin.1 + self.dims.1 - 1);
            let mut visit = |x: i64, y: i64, seen: &mut usize| {
                if x < x_lo || x > x_hi || y < y_lo || y > y_hi {
                    return;
                }
                let slot = ((y - self.origin.1) * self.dims.0 + (x - self.origin.0)) as usize;
                for &id in &self.buckets[slot] {
                    if accept(id) {
                        *seen += 1;
                        top.offer(Candidate { dist: dist(query, points.point(id as usize)), id });
                    }
                }
            };
            if r == 0 {
                visit(cx, cy, &mut seen);
            } else {
                for x in (cx - r)..=(cx + r) {
                    visit(x, cy - r, &mut seen);
                    visit(x, cy + r, &mut seen);
                }
                for y in (cy - r + 1)..(cy + r) {
                    visit(cx - r, y, &mut seen);
                    visit(cx + r, y, &mut seen);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Kd(KdTree),
    Grid(Grid),
}

/// Spatial index over node coordinates with a liveness bitmap and an overflow
/// list for nodes inserted or moved after the initial build.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    mode: IndexMode,
    points: Coordinates,
    alive: Vec<bool>,
    alive_count: usize,
    backend: Backend,
    /// Ids whose authoritative position lives outside the static backend;
    /// scanned linearly during queries. Stays tiny between rebuilds.
    extra: Vec<u32>,
}

impl NeighborIndex {
    pub fn build(coords: &Coordinates, mode: IndexMode) -> Self {
        let n = coords.len();
        let ids: Vec<u32> = (0..n as u32).collect();
        let backend = match mode {
            // The grid layout is 2-D; other dimensions fall back to the tree.
            IndexMode::Approximate if coords.dim() == 2 => Backend::Grid(Grid::build(coords, &ids)),
            _ => Backend::Kd(KdTree::build(coords, ids)),
        };
        NeighborIndex {
            mode,
            points: coords.clone(),
            alive: vec![true; n],
            alive_count: n,
            backend,
            extra: Vec::new(),
        }
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn len_alive(&self) -> usize {
        self.alive_count
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.alive.get(id.index()).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, point: &[f64]) -> NodeId {
        let id = self.points.push(point);
        self.alive.push(true);
        self.alive_count += 1;
        match &mut self.backend {
            Backend::Grid(g) => g.insert(point, id.0),
            Backend::Kd(_) => self.extra.push(id.0),
        }
        id
    }

    pub fn remove(&mut self, id: NodeId) {
        let i = id.index();
        if i < self.alive.len() && self.alive[i] {
            self.alive[i] = false;
            self.alive_count -= 1;
            if let Backend::Grid(g) = &mut self.backend {
                g.remove(self.points.point(i), id.0);
            }
            self.extra.retain(|&x| x != id.0);
        }
    }

    /// Moves a node. Tree-backed indices serve the fresh position through the
    /// overflow list; the stale tree entry is masked during queries (its baked
    /// split value keeps pruning sound).
    pub fn update(&mut self, id: NodeId, point: &[f64]) {
        let i = id.index();
        match &mut self.backend {
            Backend::Grid(g) => {
                g.remove(self.points.point(i), id.0);
                g.insert(point, id.0);
            }
            Backend::Kd(_) => {
                if !self.extra.contains(&id.0) {
                    self.extra.push(id.0);
                }
            }
        }
        self.points.set(i, point);
    }

    /// k nearest alive nodes passing `filter`, sorted by ascending distance
    /// with ties broken toward lower node ids.
    pub fn knn(
        &self,
        query: &[f64],
        k: usize,
        filter: &dyn Fn(NodeId) -> bool,
    ) -> Vec<(NodeId, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut top = TopK::new(k);
        let in_backend = |id: u32| -> bool {
            self.alive[id as usize] && !self.extra.contains(&id) && filter(NodeId(id))
        };
        match &self.backend {
            Backend::Kd(tree) => tree.search(&self.points, query, &mut top, &in_backend),
            Backend::Grid(grid) => grid.search(
                &self.points,
                query,
                k,
                &mut top,
                &in_backend,
                self.mode == IndexMode::Approximate,
            ),
        }
        for &id in &self.extra {
            if self.alive[id as usize] && filter(NodeId(id)) {
                top.offer(Candidate { dist: dist(query, self.points.point(id as usize)), id });
            }
        }
        top.into_sorted()
    }

    pub fn point(&self, id: NodeId) -> &[f64] {
        self.points.point(id.index())
    }
}

/// Brute-force reference used by tests and the tree/cluster baselines.
pub fn linear_scan_knn(
    coords: &Coordinates,
    query: &[f64],
    k: usize,
    filter: &dyn Fn(NodeId) -> bool,
) -> Vec<(NodeId, f64)> {
    let mut all: Vec<Candidate> = (0..coords.len() as u32)
        .filter(|&i| filter(NodeId(i)))
        .map(|i| Candidate { dist: dist(query, coords.point(i as usize)), id: i })
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter().map(|c| (NodeId(c.id), c.dist)).collect()
}
