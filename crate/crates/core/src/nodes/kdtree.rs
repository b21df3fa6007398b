//! Exact k-nearest-neighbour search over a static 2D point set.
//!
//! The tree is a plain median-split binary space partition stored in a flat
//! node array. Queries are exact: results are ordered by `(distance, index)`
//! so equidistant points always come back in the same order.

use crate::geom::Point;
use crate::{Error, Result};

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
enum TreeNode {
    Split { axis: usize, value: f64, left: usize, right: usize },
    Leaf { start: usize, end: usize },
}

/// Immutable spatial index over a point set.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point>,
    // Point indices permuted so that each leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<TreeNode>,
}

impl KdTree {
    pub fn new(points: &[Point]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(TreeNode::Leaf { start, end });
            return id;
        }
        let (mut lo_x, mut hi_x, mut lo_z, mut hi_z) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &i in &self.order[start..end] {
            let p = self.points[i];
            lo_x = lo_x.min(p.x);
            hi_x = hi_x.max(p.x);
            lo_z = lo_z.min(p.z);
            hi_z = hi_z.max(p.z);
        }
        let axis = if hi_x - lo_x >= hi_z - lo_z { 0 } else { 1 };
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| points[a].coord(axis).total_cmp(&points[b].coord(axis)));
        let value = self.points[self.order[mid]].coord(axis);
        self.nodes.push(TreeNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = TreeNode::Split { axis, value, left, right };
        id
    }

    /// The `k` points closest to `center`, sorted by ascending distance with
    /// ties broken by lower index.
    pub fn knn(&self, center: Point, k: usize) -> Result<Vec<usize>> {
        Ok(self.knn_with_distances(center, k)?.into_iter().map(|(i, _)| i).collect())
    }

    /// Like [`KdTree::knn`] but also returns squared distances.
    pub fn knn_with_distances(&self, center: Point, k: usize) -> Result<Vec<(usize, f64)>> {
        if k > self.points.len() {
            return Err(Error::TooFewPoints { k, available: self.points.len() });
        }
        let mut best = Candidates::new(k);
        if k > 0 {
            self.search(0, center, &mut best);
        }
        Ok(best.items.into_iter().map(|(d2, i)| (i, d2)).collect())
    }

    fn search(&self, node: usize, center: Point, best: &mut Candidates) {
        match self.nodes[node] {
            TreeNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    best.offer(center.dist2(self.points[i]), i);
                }
            }
            TreeNode::Split { axis, value, left, right } => {
                let delta = center.coord(axis) - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, center, best);
                // Equal distance must still be visited so index tie-breaking stays exact.
                if delta * delta <= best.worst() {
                    self.search(far, center, best);
                }
            }
        }
    }

    /// All point indices within `radius` (inclusive) of `center`, sorted by index.
    pub fn within_radius(&self, center: Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.collect_radius(0, center, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn collect_radius(&self, node: usize, center: Point, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            TreeNode::Leaf { start, end } => {
                out.extend(self.order[start..end].iter().copied().filter(|&i| center.dist2(self.points[i]) <= r2));
            }
            TreeNode::Split { axis, value, left, right } => {
                let delta = center.coord(axis) - value;
                if delta <= 0.0 || delta * delta <= r2 {
                    self.collect_radius(left, center, r2, out);
                }
                if delta >= 0.0 || delta * delta <= r2 {
                    self.collect_radius(right, center, r2, out);
                }
            }
        }
    }
}

/// Bounded, sorted candidate list. `k` is small (stencil sizes), so a sorted
/// vector with insertion beats a heap.
struct Candidates {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Candidates {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::with_capacity(k + 1) }
    }

    fn worst(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    fn offer(&mut self, d2: f64, idx: usize) {
        if self.items.len() == self.k {
            let (wd, wi) = self.items[self.k - 1];
            if (d2, idx) >= (wd, wi) {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&(d, i)| d < d2 || (d == d2 && i < idx));
        self.items.insert(pos, (d2, idx));
    }
}
