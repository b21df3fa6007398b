//! Recorders, snapshot export and cross-method comparison.
//!
//! Scattered values are read back with nearest-k Shepard interpolation; grid
//! values (FDM) with bilinear interpolation.

use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::config::{Backend, ScenarioConfig, SpacingSpec};
use crate::fdm::UniformGrid;
use crate::geom::Point;
use crate::media::{shepard_weights, DEFAULT_SHEPARD_K, DEFAULT_SHEPARD_POWER};
use crate::nodes::{KdTree, NodeSet};
use crate::solver::{self, RunOptions, WaveState};
use crate::{Error, Result};

/// Precomputed Shepard weights from a node set to a fixed list of points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSampler {
    rows: Vec<Vec<(usize, f64)>>,
}

impl PointSampler {
    pub fn new(nodes: &NodeSet, points: &[Point], k: usize, power: f64) -> Result<Self> {
        if points.is_empty() {
            return Ok(Self { rows: Vec::new() });
        }
        Self::with_tree(&nodes.neighbor_query(), points, k, power)
    }

    pub fn with_tree(tree: &KdTree, points: &[Point], k: usize, power: f64) -> Result<Self> {
        let k = k.min(tree.len()).max(1);
        let rows = points
            .iter()
            .map(|&p| Ok(shepard_weights(&tree.knn_with_distances(p, k)?, power)))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sample(&self, field: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|&(i, w)| w * field[i]).sum()).collect()
    }
}

/// Values of `u_curr` at surface receivers `(x, z_top + depth)`.
pub fn record_seismogram(state: &WaveState, nodes: &NodeSet, receivers: &[f64], depth: f64) -> Result<Vec<f64>> {
    let z = nodes.domain.z_min + depth;
    let points: Vec<Point> = receivers.iter().map(|&x| Point::new(x, z)).collect();
    let sampler = PointSampler::new(nodes, &points, DEFAULT_SHEPARD_K, DEFAULT_SHEPARD_POWER)?;
    Ok(sampler.sample(&state.u_curr))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Seismogram {
    pub receivers: Vec<f64>,
    pub times: Vec<f64>,
    /// One row per time sample.
    pub values: Vec<Vec<f64>>,
}

impl Seismogram {
    pub fn new(receivers: Vec<f64>) -> Self {
        Self { receivers, times: Vec::new(), values: Vec::new() }
    }

    /// Appends a row; times must increase strictly.
    pub fn push(&mut self, t: f64, row: Vec<f64>) {
        assert_eq!(row.len(), self.receivers.len(), "seismogram row length");
        if let Some(&last) = self.times.last() {
            assert!(t > last, "seismogram times must increase ({t} after {last})");
        }
        self.times.push(t);
        self.values.push(row);
    }

    pub fn trace(&self, receiver: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[receiver]).collect()
    }

    pub fn peak_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise difference to a seismogram with the same layout.
    pub fn max_abs_difference(&self, other: &Seismogram) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::LengthMismatch { expected: self.values.len(), got: other.values.len() });
        }
        if self.receivers.len() != other.receivers.len() {
            return Err(Error::LengthMismatch { expected: self.receivers.len(), got: other.receivers.len() });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }

    /// First row: receiver x positions after a `t\x` label. Then `t,v1,v2,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t\\x")?;
        for x in &self.receivers {
            write!(w, ",{x:e}")?;
        }
        writeln!(w)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            write!(w, "{t:e}")?;
            for v in row {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let parse = |line: usize, s: &str| -> Result<f64> {
            s.trim().parse().map_err(|e| Error::Parse {
                what: "seismogram".into(),
                line,
                msg: format!("bad number {s:?}: {e}"),
            })
        };
        let receivers = match lines.next() {
            Some((_, header)) => {
                let header = header?;
                header.split(',').skip(1).map(|s| parse(1, s)).collect::<Result<Vec<_>>>()?
            }
            None => Vec::new(),
        };
        let mut out = Self::new(receivers);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',').map(|s| parse(i + 1, s));
            let t = cells.next().transpose()?.unwrap_or_default();
            let row = cells.collect::<Result<Vec<_>>>()?;
            if row.len() != out.receivers.len() {
                return Err(Error::Parse {
                    what: "seismogram".into(),
                    line: i + 1,
                    msg: format!("expected {} values, got {}", out.receivers.len(), row.len()),
                });
            }
            out.times.push(t);
            out.values.push(row);
        }
        Ok(out)
    }
}

/// Time series at interior probe points, sampled every step.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSeries {
    pub points: Vec<Point>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ProbeSeries {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points, times: Vec::new(), values: Vec::new() }
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) {
        self.times.push(t);
        self.values.push(row);
    }

    pub fn series(&self, probe: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[probe]).collect()
    }

    /// Largest |u| at `probe` for times in `[t0, t1]`.
    pub fn peak_in_window(&self, probe: usize, t0: f64, t1: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= t0 && **t <= t1)
            .fold(0.0, |m, (_, row)| m.max(row[probe].abs()))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for p in &self.points {
            write!(w, ",u({} {})", p.x, p.z)?;
        }
        writeln!(w)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            write!(w, "{t:e}")?;
            for v in row {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Node values at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotField {
    pub positions: Arc<Vec<Point>>,
    /// Local node spacing, used to flag interpolation holes.
    pub spacing: Vec<f64>,
    pub values: Vec<f64>,
    pub t: f64,
    pub backend: Backend,
    /// Set when the nodes form a uniform grid (FDM), enabling bilinear reads.
    pub grid: Option<UniformGrid>,
}

impl SnapshotField {
    pub fn from_nodes(nodes: &NodeSet, values: Vec<f64>, t: f64, backend: Backend) -> Result<Self> {
        if values.len() != nodes.len() {
            return Err(Error::LengthMismatch { expected: nodes.len(), got: values.len() });
        }
        Ok(Self {
            positions: Arc::new(nodes.positions.clone()),
            spacing: nodes.spacing.clone(),
            values,
            t,
            backend,
            grid: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Interpolated values at arbitrary points.
    pub fn sample(&self, points: &[Point]) -> Result<Vec<f64>> {
        match &self.grid {
            Some(g) => Ok(points.iter().map(|&p| bilinear(g, &self.values, p)).collect()),
            None => {
                let tree = KdTree::new(&self.positions);
                let s = PointSampler::with_tree(&tree, points, DEFAULT_SHEPARD_K, DEFAULT_SHEPARD_POWER)?;
                Ok(s.sample(&self.values))
            }
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,z,u")?;
        for (p, u) in self.positions.iter().zip(&self.values) {
            writeln!(w, "{:e},{:e},{:e}", p.x, p.z, u)?;
        }
        Ok(())
    }
}

/// Bilinear read from grid values; points outside the grid are clamped.
pub fn bilinear(grid: &UniformGrid, values: &[f64], p: Point) -> f64 {
    let fx = ((p.x - grid.origin.x) / grid.h).clamp(0.0, (grid.nx - 1) as f64);
    let fz = ((p.z - grid.origin.z) / grid.h).clamp(0.0, (grid.nz - 1) as f64);
    let i = (fx.floor() as usize).min(grid.nx - 2);
    let j = (fz.floor() as usize).min(grid.nz - 2);
    let (tx, tz) = (fx - i as f64, fz - j as f64);
    let v = |i: usize, j: usize| values[grid.index(i, j)];
    (1.0 - tx) * (1.0 - tz) * v(i, j)
        + tx * (1.0 - tz) * v(i + 1, j)
        + (1.0 - tx) * tz * v(i, j + 1)
        + tx * tz * v(i + 1, j + 1)
}

/// A snapshot resampled onto a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridValues {
    pub grid: UniformGrid,
    pub values: Vec<f64>,
    /// Grid indices with no node within three local spacings; their value is NaN.
    pub holes: Vec<usize>,
}

pub fn to_grid(snapshot: &SnapshotField, grid: &UniformGrid) -> Result<GridValues> {
    if snapshot.is_empty() {
        return Err(Error::Config("cannot resample an empty snapshot".into()));
    }
    let tree = KdTree::new(&snapshot.positions);
    let k = DEFAULT_SHEPARD_K.min(tree.len());
    let points = grid.positions();
    let values: Vec<f64> = points
        .par_iter()
        .map(|&p| {
            let near = tree.knn_with_distances(p, k).expect("k clamped to node count");
            let (i0, d2) = near[0];
            let reach = 3.0 * snapshot.spacing[i0];
            if d2 > reach * reach {
                return f64::NAN;
            }
            match &snapshot.grid {
                Some(g) => bilinear(g, &snapshot.values, p),
                None => {
                    shepard_weights(&near, DEFAULT_SHEPARD_POWER).into_iter().map(|(i, w)| w * snapshot.values[i]).sum()
                }
            }
        })
        .collect();
    let holes = values.iter().enumerate().filter(|(_, v)| v.is_nan()).map(|(i, _)| i).collect();
    Ok(GridValues { grid: *grid, values, holes })
}

/// Entrywise `|a − b|`.
pub fn difference_field(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircleProbe {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Samples `samples` equiangular points on a circle, starting on the `+x` axis.
pub fn circle_probe(snapshot: &SnapshotField, center: Point, radius: f64, samples: usize) -> Result<CircleProbe> {
    if samples == 0 || !(radius > 0.0) {
        return Err(Error::Config(format!("circle probe needs samples > 0 and radius > 0, got {samples}, {radius}")));
    }
    let points: Vec<Point> = (0..samples)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / samples as f64;
            Point::new(center.x + radius * th.cos(), center.z + radius * th.sin())
        })
        .collect();
    let values = snapshot.sample(&points)?;
    let (mean, std) = mean_std(&values);
    Ok(CircleProbe { points, values, mean, std })
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Azimuthal mean of a snapshot in radial bins around `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialProfile {
    /// Bin centres.
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

/// Bins every node within `r_max` of `center` into rings of width `bin`.
/// Empty rings are filled by linear interpolation from their neighbours.
pub fn radial_profile(snapshot: &SnapshotField, center: Point, bin: f64, r_max: f64) -> Result<RadialProfile> {
    if !(bin > 0.0 && r_max > bin) {
        return Err(Error::Config(format!("radial profile needs 0 < bin < r_max, got {bin}, {r_max}")));
    }
    let nb = (r_max / bin).floor() as usize;
    let mut sum = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    for (p, u) in snapshot.positions.iter().zip(&snapshot.values) {
        let b = (p.dist(center) / bin) as usize;
        if b < nb {
            sum[b] += u;
            count[b] += 1;
        }
    }
    let filled: Vec<usize> = (0..nb).filter(|&b| count[b] > 0).collect();
    if filled.is_empty() {
        return Err(Error::Config("no nodes inside the radial profile".into()));
    }
    let mean = |b: usize| sum[b] / count[b] as f64;
    let values = (0..nb)
        .map(|b| {
            if count[b] > 0 {
                return mean(b);
            }
            let hi = filled.partition_point(|&f| f < b);
            match (hi.checked_sub(1).map(|i| filled[i]), filled.get(hi)) {
                (Some(l), Some(&h)) => mean(l) + (mean(h) - mean(l)) * (b - l) as f64 / (h - l) as f64,
                (Some(l), None) => mean(l),
                (None, Some(&h)) => mean(h),
                (None, None) => 0.0,
            }
        })
        .collect();
    let radii = (0..nb).map(|b| (b as f64 + 0.5) * bin).collect();
    Ok(RadialProfile { radii, values })
}

/// Magnitude of the analytic signal (Hilbert envelope), zero-padded to twice
/// the input length.
pub fn envelope(values: &[f64]) -> Vec<f64> {
    use rustfft::{num_complex::Complex, FftPlanner};
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let m = 2 * n;
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let h = if k == 0 || k == m / 2 {
            1.0
        } else if k < m / 2 {
            2.0
        } else {
            0.0
        };
        *c *= h;
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[..n].iter().map(|c| c.norm() / m as f64).collect()
}

/// Abscissa of the largest sample, refined with a parabola through its neighbours.
pub fn peak_position(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let i = (0..ys.len()).max_by(|&a, &b| ys[a].total_cmp(&ys[b]))?;
    if i == 0 || i + 1 >= ys.len() {
        return Some(xs[i]);
    }
    let (a, b, c) = (ys[i - 1], ys[i], ys[i + 1]);
    let d = a - 2.0 * b + c;
    let shift = if d < 0.0 { 0.5 * (a - c) / d } else { 0.0 };
    Some(xs[i] + shift * (xs[i + 1] - xs[i - 1]) / 2.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Wavefront {
    /// Radius of the envelope maximum: the centre of the outgoing wave packet.
    pub radius: f64,
    /// Radius of the largest signed value of the profile.
    pub signed_peak_radius: f64,
    pub profile: RadialProfile,
}

/// Locates the outgoing wavefront in a snapshot from the radial profile
/// around `center`, searching radii in `[r_min, r_max)`.
pub fn wavefront_radius(
    snapshot: &SnapshotField,
    center: Point,
    bin: f64,
    r_min: f64,
    r_max: f64,
) -> Result<Wavefront> {
    let profile = radial_profile(snapshot, center, bin, r_max)?;
    let env = envelope(&profile.values);
    let lo = profile.radii.partition_point(|&r| r < r_min);
    let pick = |ys: &[f64]| peak_position(&profile.radii[lo..], &ys[lo..]);
    let radius = pick(&env).ok_or_else(|| Error::Config("empty wavefront search range".into()))?;
    let signed_peak_radius = pick(&profile.values).unwrap_or(radius);
    Ok(Wavefront { radius, signed_peak_radius, profile })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergencePoint {
    pub spacing: f64,
    pub nodes: usize,
    /// Probe value at the step nearest `t_probe`.
    pub value: f64,
    /// Largest |u| at the probe up to `t_probe`.
    pub peak: f64,
}

/// Runs `scenario` once per constant spacing and records the probe response.
pub fn convergence_study(
    scenario: &ScenarioConfig,
    spacings: &[f64],
    probe: Point,
    t_probe: f64,
) -> Result<Vec<ConvergencePoint>> {
    if spacings.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Config("convergence spacings must not increase".into()));
    }
    let dt = scenario.active_dt();
    let mut out = Vec::with_capacity(spacings.len());
    for &a in spacings {
        let mut cfg = scenario.clone();
        cfg.spacing = SpacingSpec::Constant { a };
        if cfg.backend == Backend::Fdm {
            cfg.fdm_h = Some(a);
        }
        cfg.output.probes = vec![probe];
        cfg.output.snapshot_times.clear();
        cfg.steps = (t_probe / dt).round() as usize;
        let run = solver::run_with(&cfg, &RunOptions::default(), |_, _| {})?;
        let series = run.probes.series(0);
        out.push(ConvergencePoint {
            spacing: a,
            nodes: run.diagnostics.node_count,
            value: series.last().copied().unwrap_or_default(),
            peak: series.iter().fold(0.0, |m, v| m.max(v.abs())),
        });
    }
    Ok(out)
}

const MAGIC: &[u8; 4] = b"MWV1";

/// Binary grid dump: `MWV1`, u32 nx, u32 nz, f64 origin x, origin z, spacing,
/// then row-major f64 values. Little endian throughout.
pub fn write_grid_binary<W: Write>(mut w: W, grid: &UniformGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
    }
    let dim = |n: usize| u32::try_from(n).map_err(|_| Error::Config(format!("grid dimension {n} too large")));
    w.write_all(MAGIC)?;
    w.write_all(&dim(grid.nx)?.to_le_bytes())?;
    w.write_all(&dim(grid.nz)?.to_le_bytes())?;
    for v in [grid.origin.x, grid.origin.z, grid.h].iter().chain(values) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid_binary<R: Read>(mut r: R) -> Result<(UniformGrid, Vec<f64>)> {
    let bad = |msg: &str| Error::Parse { what: "MWV1 grid".into(), line: 0, msg: msg.into() };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u = [0u8; 4];
    r.read_exact(&mut u)?;
    let nx = u32::from_le_bytes(u) as usize;
    r.read_exact(&mut u)?;
    let nz = u32::from_le_bytes(u) as usize;
    let mut read_f64 = || -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let origin = Point::new(read_f64()?, read_f64()?);
    let h = read_f64()?;
    let grid = UniformGrid::new(nx, nz, h, origin)?;
    let values = (0..grid.len()).map(|_| read_f64()).collect::<Result<_>>()?;
    Ok((grid, values))
}
