//! Scattered node generation, boundary classification and neighbour search.

mod kdtree;

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{Point, Rect};
use crate::{Error, Result};

pub use kdtree::KdTree;

/// Exact k-nearest-neighbour index over a [`NodeSet`].
pub type NeighborQuery = KdTree;

/// Default minimum-separation factor relative to the local target spacing.
pub const DEFAULT_SEPARATION: f64 = 0.75;

/// Depth of the staggered edge row in local spacings.
pub const EDGE_LAYER_DEPTH: f64 = 1.1;

/// Target inter-nodal distance `a(x, z)` over the domain.
#[derive(Clone)]
pub struct SpacingField {
    eval: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    average: f64,
}

impl fmt::Debug for SpacingField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpacingField").field("average", &self.average).finish_non_exhaustive()
    }
}

impl SpacingField {
    pub fn constant(a: f64) -> Self {
        Self { eval: Arc::new(move |_| a), average: a }
    }

    /// Wraps an arbitrary evaluator; the average is the mean over a regular
    /// probe lattice of `domain`.
    pub fn from_fn<F>(domain: &Rect, f: F) -> Self
    where
        F: Fn(Point) -> f64 + Send + Sync + 'static,
    {
        const M: usize = 64;
        let mut sum = 0.0;
        for j in 0..M {
            for i in 0..M {
                let p = Point::new(
                    domain.x_min + (i as f64 + 0.5) / M as f64 * domain.width(),
                    domain.z_min + (j as f64 + 0.5) / M as f64 * domain.depth(),
                );
                sum += f(p);
            }
        }
        Self { eval: Arc::new(f), average: sum / (M * M) as f64 }
    }

    #[inline]
    pub fn at(&self, p: Point) -> f64 {
        (self.eval)(p)
    }

    pub fn average(&self) -> f64 {
        self.average
    }

    /// Samples the field on a lattice covering `domain` (edges included) and
    /// returns `(min, max)`, rejecting non-positive or non-finite values.
    pub fn bounds(&self, domain: &Rect) -> Result<(f64, f64)> {
        const M: usize = 129;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for j in 0..M {
            for i in 0..M {
                let p = Point::new(
                    domain.x_min + i as f64 / (M - 1) as f64 * domain.width(),
                    domain.z_min + j as f64 / (M - 1) as f64 * domain.depth(),
                );
                let a = self.at(p);
                if !(a.is_finite() && a > 0.0) {
                    return Err(Error::NonPositiveSpacing { x: p.x, z: p.z, value: a });
                }
                lo = lo.min(a);
                hi = hi.max(a);
            }
        }
        if !(self.average.is_finite() && self.average > 0.0) {
            return Err(Error::NonPositiveSpacing { x: f64::NAN, z: f64::NAN, value: self.average });
        }
        Ok((lo, hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Interior,
    TopBoundary,
    SideOrBottomBoundary,
}

impl NodeKind {
    pub fn is_boundary(self) -> bool {
        self != NodeKind::Interior
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Interior => "interior",
            NodeKind::TopBoundary => "top_boundary",
            NodeKind::SideOrBottomBoundary => "side_or_bottom_boundary",
        }
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "interior" => Ok(NodeKind::Interior),
            "top_boundary" => Ok(NodeKind::TopBoundary),
            "side_or_bottom_boundary" => Ok(NodeKind::SideOrBottomBoundary),
            other => Err(format!("unknown node kind `{other}`")),
        }
    }
}

/// Classifies a position against the domain edges. The top edge wins at the
/// two upper corners.
pub fn classify_boundary(p: Point, domain: &Rect) -> NodeKind {
    if p.z == domain.z_min {
        NodeKind::TopBoundary
    } else if p.x == domain.x_min || p.x == domain.x_max || p.z == domain.z_max {
        NodeKind::SideOrBottomBoundary
    } else {
        NodeKind::Interior
    }
}

/// Shortest distance from `p` to the domain boundary. With `include_top =
/// false` the free-surface edge is ignored, as the absorbing layer does.
pub fn distance_to_boundary(p: Point, domain: &Rect, include_top: bool) -> f64 {
    if include_top {
        domain.distance_to_edge(p)
    } else {
        domain.distance_to_absorbing_edge(p)
    }
}

/// The discrete domain: node positions, their boundary classification and the
/// target spacing sampled at each node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    pub domain: Rect,
    pub positions: Vec<Point>,
    pub kinds: Vec<NodeKind>,
    pub spacing: Vec<f64>,
}

impl NodeSet {
    pub fn new(domain: Rect, positions: Vec<Point>, spacing: Vec<f64>) -> Result<Self> {
        if positions.len() != spacing.len() {
            return Err(Error::LengthMismatch { expected: positions.len(), got: spacing.len() });
        }
        let kinds = positions.iter().map(|&p| classify_boundary(p, &domain)).collect();
        Ok(Self { domain, positions, kinds, spacing })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn interior_count(&self) -> usize {
        self.kinds.iter().filter(|k| !k.is_boundary()).count()
    }

    pub fn neighbor_query(&self) -> NeighborQuery {
        KdTree::new(&self.positions)
    }

    pub fn mean_spacing(&self) -> f64 {
        self.spacing.iter().sum::<f64>() / self.spacing.len().max(1) as f64
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Node closest to `p` (lowest index among ties).
    pub fn nearest(&self, p: Point) -> Option<usize> {
        self.positions
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| p.dist2(**a).total_cmp(&p.dist2(**b)).then(i.cmp(j)))
            .map(|(i, _)| i)
    }

    /// Writes `x,z,kind,spacing` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,z,kind,spacing")?;
        for i in 0..self.len() {
            let p = self.positions[i];
            writeln!(w, "{:.16e},{:.16e},{},{:.16e}", p.x, p.z, self.kinds[i].as_str(), self.spacing[i])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(domain: Rect, r: R) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { what: "node csv".into(), line, msg };
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "x,z,kind,spacing" {
            return Err(parse_err(1, "expected header `x,z,kind,spacing`".into()));
        }
        let (mut positions, mut kinds, mut spacing) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let line = line?;
            let lineno = n + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 4 {
                return Err(parse_err(lineno, format!("expected 4 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(lineno, e.to_string()));
            positions.push(Point::new(num(f[0])?, num(f[1])?));
            kinds.push(f[2].parse::<NodeKind>().map_err(|e| parse_err(lineno, e))?);
            spacing.push(num(f[3])?);
        }
        Ok(Self { domain, positions, kinds, spacing })
    }
}

/// Poisson-disk style node generator with a boundary-first pass.
#[derive(Clone, Debug)]
pub struct NodeGenerator {
    /// Minimum separation as a fraction of the local spacing.
    pub separation: f64,
    /// Candidates tried around each accepted node.
    pub candidates: usize,
    /// Interior nodes keep at least this many local spacings from the edges.
    pub edge_margin: f64,
    /// Depth, in local spacings, of a staggered node row laid along every edge
    /// before the fill; 0 disables it. Without the row, fill nodes can end up
    /// more than one spacing from an edge with no edge node among their
    /// nearest neighbours, giving one-sided (extrapolating) stencils.
    pub edge_layer: f64,
    /// Interior points to place before the fill (receivers, probes). Points
    /// outside the domain or too close to an earlier node are skipped.
    pub fixed_points: Vec<Point>,
}

impl Default for NodeGenerator {
    fn default() -> Self {
        Self {
            separation: DEFAULT_SEPARATION,
            candidates: 13,
            edge_margin: 0.8,
            edge_layer: EDGE_LAYER_DEPTH,
            fixed_points: Vec::new(),
        }
    }
}

/// Generates nodes with the default generator settings.
pub fn generate_nodes(domain: &Rect, spacing: &SpacingField, seed: u64) -> Result<NodeSet> {
    NodeGenerator::default().generate(domain, spacing, seed)
}

impl NodeGenerator {
    pub fn with_fixed_points(mut self, points: Vec<Point>) -> Self {
        self.fixed_points = points;
        self
    }

    pub fn generate(&self, domain: &Rect, spacing: &SpacingField, seed: u64) -> Result<NodeSet> {
        if !(self.separation > 0.0 && self.separation <= 1.0) {
            return Err(Error::Config(format!("separation factor must be in (0, 1], got {}", self.separation)));
        }
        let (a_min, _) = spacing.bounds(domain)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = BucketGrid::new(*domain, self.separation * a_min);
        let mut positions: Vec<Point> = Vec::new();

        for p in boundary_points(domain, spacing) {
            grid.insert(p, positions.len());
            positions.push(p);
        }

        if self.edge_layer > 0.0 {
            for p in edge_layer_points(domain, spacing, self.edge_layer) {
                let r = self.separation * spacing.at(p);
                if domain.contains_strictly(p) && grid.any_within(&positions, p, r).is_none() {
                    grid.insert(p, positions.len());
                    positions.push(p);
                }
            }
        }
        let seeds_from = positions.len();

        for &p in &self.fixed_points {
            if !domain.contains_strictly(p) {
                debug!("fixed node {p} is not strictly inside the domain; skipped");
                continue;
            }
            let r = self.separation * spacing.at(p);
            if let Some(q) = grid.any_within(&positions, p, r) {
                debug!("fixed node {p} is within {r:.3} m of node {}; skipped", positions[q]);
                continue;
            }
            grid.insert(p, positions.len());
            positions.push(p);
        }

        // The front grows from the pinned points and the domain centre; edge
        // and edge-row nodes only act as obstacles.
        let centre = Point::new(0.5 * (domain.x_min + domain.x_max), 0.5 * (domain.z_min + domain.z_max));
        if grid.any_within(&positions, centre, self.separation * spacing.at(centre)).is_none() {
            grid.insert(centre, positions.len());
            positions.push(centre);
        }
        let mut front: VecDeque<usize> = (seeds_from..positions.len()).collect();
        let m = self.candidates.max(3);
        while let Some(i) = front.pop_front() {
            let p = positions[i];
            let radius = spacing.at(p);
            let phase: f64 = rng.gen::<f64>() * TAU;
            for j in 0..m {
                let theta = phase + TAU * j as f64 / m as f64;
                let c = Point::new(p.x + radius * theta.cos(), p.z + radius * theta.sin());
                if !domain.contains_strictly(c) {
                    continue;
                }
                let a = spacing.at(c);
                if domain.distance_to_edge(c) < self.edge_margin * a {
                    continue;
                }
                let r = self.separation * a;
                if grid.any_within(&positions, c, r).is_some() {
                    continue;
                }
                grid.insert(c, positions.len());
                front.push_back(positions.len());
                positions.push(c);
            }
        }

        let values = positions.iter().map(|&p| spacing.at(p)).collect();
        NodeSet::new(*domain, positions, values)
    }
}

/// Staggered row at `depth · a` inside every edge, one node between each pair
/// of consecutive edge nodes.
fn edge_layer_points(domain: &Rect, spacing: &SpacingField, depth: f64) -> Vec<Point> {
    let (x0, x1, z0, z1) = (domain.x_min, domain.x_max, domain.z_min, domain.z_max);
    let edges = [
        (Point::new(x0, z0), Point::new(x1, z0), Point::new(0.0, 1.0)),
        (Point::new(x0, z1), Point::new(x1, z1), Point::new(0.0, -1.0)),
        (Point::new(x0, z0), Point::new(x0, z1), Point::new(1.0, 0.0)),
        (Point::new(x1, z0), Point::new(x1, z1), Point::new(-1.0, 0.0)),
    ];
    let mut out = Vec::new();
    for (from, to, inward) in edges {
        let pts = edge_points(spacing, from, to, true);
        for w in pts.windows(2) {
            let mid = Point::new(0.5 * (w[0].x + w[1].x), 0.5 * (w[0].z + w[1].z));
            let d = depth * spacing.at(mid);
            out.push(Point::new(mid.x + d * inward.x, mid.z + d * inward.z));
        }
    }
    out
}

/// Edge nodes placed so that consecutive gaps follow the local spacing: the
/// arclength parameter is mapped through the cumulative integral of `1/a`.
fn boundary_points(domain: &Rect, spacing: &SpacingField) -> Vec<Point> {
    let (x0, x1, z0, z1) = (domain.x_min, domain.x_max, domain.z_min, domain.z_max);
    let mut out = Vec::new();
    // Top and bottom edges include their corners.
    out.extend(edge_points(spacing, Point::new(x0, z0), Point::new(x1, z0), true));
    out.extend(edge_points(spacing, Point::new(x0, z1), Point::new(x1, z1), true));
    out.extend(edge_points(spacing, Point::new(x0, z0), Point::new(x0, z1), false));
    out.extend(edge_points(spacing, Point::new(x1, z0), Point::new(x1, z1), false));
    out
}

fn edge_points(spacing: &SpacingField, from: Point, to: Point, with_ends: bool) -> Vec<Point> {
    const SUB: usize = 4096;
    let length = from.dist(to);
    let at = |s: f64| {
        let t = s / length;
        Point::new(from.x + t * (to.x - from.x), from.z + t * (to.z - from.z))
    };
    // Cumulative integral of 1/a by the midpoint rule.
    let ds = length / SUB as f64;
    let mut cumulative = Vec::with_capacity(SUB + 1);
    cumulative.push(0.0);
    for k in 0..SUB {
        let a = spacing.at(at((k as f64 + 0.5) * ds));
        cumulative.push(cumulative[k] + ds / a);
    }
    let total = cumulative[SUB];
    let segments = total.round().max(1.0) as usize;

    let mut out = Vec::with_capacity(segments + 1);
    if with_ends {
        out.push(from);
    }
    let mut k = 0;
    for s in 1..segments {
        let target = total * s as f64 / segments as f64;
        while cumulative[k + 1] < target {
            k += 1;
        }
        let frac = (target - cumulative[k]) / (cumulative[k + 1] - cumulative[k]);
        out.push(at((k as f64 + frac) * ds));
    }
    if with_ends {
        out.push(to);
    }
    out
}

/// Uniform bucket grid used for separation checks while the set grows.
struct BucketGrid {
    domain: Rect,
    cell: f64,
    nx: usize,
    nz: usize,
    cells: Vec<Vec<u32>>,
}

impl BucketGrid {
    fn new(domain: Rect, cell: f64) -> Self {
        // Keep the table bounded for very fine spacings over huge domains.
        let cell = cell.max((domain.area() / 4.0e7).sqrt());
        let nx = (domain.width() / cell).ceil() as usize + 1;
        let nz = (domain.depth() / cell).ceil() as usize + 1;
        Self { domain, cell, nx, nz, cells: vec![Vec::new(); nx * nz] }
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let i = ((p.x - self.domain.x_min) / self.cell).floor().max(0.0) as usize;
        let j = ((p.z - self.domain.z_min) / self.cell).floor().max(0.0) as usize;
        (i.min(self.nx - 1), j.min(self.nz - 1))
    }

    fn insert(&mut self, p: Point, idx: usize) {
        let (i, j) = self.cell_of(p);
        self.cells[j * self.nx + i].push(idx as u32);
    }

    /// Some node strictly closer than `r` to `p`, if any.
    fn any_within(&self, positions: &[Point], p: Point, r: f64) -> Option<usize> {
        let r2 = r * r;
        let reach = (r / self.cell).ceil() as isize;
        let (ci, cj) = self.cell_of(p);
        let (ci, cj) = (ci as isize, cj as isize);
        for j in (cj - reach).max(0)..=(cj + reach).min(self.nz as isize - 1) {
            for i in (ci - reach).max(0)..=(ci + reach).min(self.nx as isize - 1) {
                for &q in &self.cells[j as usize * self.nx + i as usize] {
                    if positions[q as usize].dist2(p) < r2 {
                        return Some(q as usize);
                    }
                }
            }
        }
        None
    }
}
