//! Velocity models and the spacing fields derived from them.

use std::io::BufRead;
use std::sync::Arc;

use crate::geom::{Point, Rect};
use crate::nodes::{KdTree, SpacingField};
use crate::source::characteristic_period;
use crate::{Error, Result};

/// Neighbours used by Shepard interpolation unless configured otherwise.
pub const DEFAULT_SHEPARD_K: usize = 8;
pub const DEFAULT_SHEPARD_POWER: f64 = 2.0;
/// Default depth window of the spacing moving average, metres.
pub const DEFAULT_SMOOTHING_WINDOW: f64 = 40.0;

/// Inverse-distance weighted interpolation over scattered samples.
#[derive(Clone, Debug)]
pub struct Shepard {
    tree: KdTree,
    values: Vec<f64>,
    pub k: usize,
    pub power: f64,
}

impl Shepard {
    pub fn new(positions: &[Point], values: Vec<f64>, k: usize, power: f64) -> Result<Self> {
        if positions.len() != values.len() {
            return Err(Error::LengthMismatch { expected: positions.len(), got: values.len() });
        }
        if k == 0 || positions.is_empty() {
            return Err(Error::Config("Shepard interpolation needs at least one sample".into()));
        }
        Ok(Self { tree: KdTree::new(positions), values, k, power })
    }

    pub fn positions(&self) -> &[Point] {
        self.tree.points()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, p: Point) -> f64 {
        let k = self.k.min(self.values.len());
        let near = self.tree.knn_with_distances(p, k).expect("k clamped to sample count");
        shepard_weights(&near, self.power).into_iter().map(|(i, w)| w * self.values[i]).sum()
    }
}

/// Normalized inverse-distance weights from `(index, squared distance)` pairs
/// sorted nearest first. A coincident sample takes all the weight.
pub fn shepard_weights(near: &[(usize, f64)], power: f64) -> Vec<(usize, f64)> {
    if let Some(&(i, d2)) = near.first() {
        if d2 == 0.0 {
            return vec![(i, 1.0)];
        }
    }
    let raw: Vec<(usize, f64)> = near.iter().map(|&(i, d2)| (i, d2.powf(-0.5 * power))).collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    raw.into_iter().map(|(i, w)| (i, w / total)).collect()
}

/// One-shot Shepard interpolation over `samples`, brute force.
pub fn shepard_interpolate(samples: &[(Point, f64)], p: Point, k: usize, power: f64) -> f64 {
    let mut near: Vec<(usize, f64)> = samples.iter().enumerate().map(|(i, (q, _))| (i, p.dist2(*q))).collect();
    near.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    near.truncate(k.max(1));
    shepard_weights(&near, power).into_iter().map(|(i, w)| w * samples[i].1).sum()
}

/// Regular velocity grid; sample `(i, j)` sits at `origin + (i dx, j dz)`.
#[derive(Clone, Debug)]
pub struct VelocityGrid {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    pub origin: Point,
    /// Row-major, one row per depth level starting at the surface.
    pub values: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64, origin: Point, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || nz == 0 || !(dx > 0.0) || !(dz > 0.0) {
            return Err(Error::Config(format!("invalid velocity grid header {nx} {nz} {dx} {dz}")));
        }
        if values.len() != nx * nz {
            return Err(Error::LengthMismatch { expected: nx * nz, got: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("velocity must be positive, found {v}")));
        }
        Ok(Self { nx, nz, dx, dz, origin, values })
    }

    /// Parses the ASCII format: a header `nx nz dx dz` then `nx·nz` values.
    pub fn read<R: BufRead>(r: R, origin: Point) -> Result<Self> {
        let err = |line, msg: String| Error::Parse { what: "velocity grid".into(), line, msg };
        let mut tokens: Vec<(usize, String)> = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("");
            tokens.extend(body.split_whitespace().map(|t| (n + 1, t.to_string())));
        }
        if tokens.len() < 4 {
            return Err(err(1, "missing `nx nz dx dz` header".into()));
        }
        let int = |(l, t): &(usize, String)| t.parse::<usize>().map_err(|e| err(*l, format!("`{t}`: {e}")));
        let num = |(l, t): &(usize, String)| t.parse::<f64>().map_err(|e| err(*l, format!("`{t}`: {e}")));
        let (nx, nz) = (int(&tokens[0])?, int(&tokens[1])?);
        let (dx, dz) = (num(&tokens[2])?, num(&tokens[3])?);
        let values = tokens[4..].iter().map(num).collect::<Result<Vec<_>>>()?;
        if values.len() != nx * nz {
            let line = tokens.last().map(|t| t.0).unwrap_or(1);
            return Err(err(line, format!("expected {} values, found {}", nx * nz, values.len())));
        }
        Self::new(nx, nz, dx, dz, origin, values)
    }

    pub fn footprint(&self) -> Rect {
        Rect {
            x_min: self.origin.x,
            x_max: self.origin.x + (self.nx - 1) as f64 * self.dx,
            z_min: self.origin.z,
            z_max: self.origin.z + (self.nz - 1) as f64 * self.dz,
        }
    }

    pub fn position(&self, i: usize, j: usize) -> Point {
        Point::new(self.origin.x + i as f64 * self.dx, self.origin.z + j as f64 * self.dz)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }
}

/// Reads `x,z,v` scattered samples (header line required).
pub fn read_scattered_csv<R: BufRead>(r: R) -> Result<(Vec<Point>, Vec<f64>)> {
    let err = |line, msg: String| Error::Parse { what: "velocity samples".into(), line, msg };
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.replace(' ', "") != "x,z,v" {
        return Err(err(1, "expected header `x,z,v`".into()));
    }
    let (mut pts, mut vals) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| err(n + 2, e.to_string())))
            .collect::<Result<_>>()?;
        if f.len() != 3 {
            return Err(err(n + 2, format!("expected 3 fields, got {}", f.len())));
        }
        if !(f[2] > 0.0) {
            return Err(err(n + 2, format!("velocity must be positive, found {}", f[2])));
        }
        pts.push(Point::new(f[0], f[1]));
        vals.push(f[2]);
    }
    Ok((pts, vals))
}

/// P-wave velocity `v_p(x, z)`.
#[derive(Clone, Debug)]
pub enum VelocityModel {
    Uniform {
        v: f64,
    },
    /// `v_top` above `interface_depth`, `v_bottom` at and below it.
    TwoLayer {
        v_top: f64,
        v_bottom: f64,
        interface_depth: f64,
    },
    Gridded {
        grid: Arc<VelocityGrid>,
        shepard: Arc<Shepard>,
    },
    Scattered {
        shepard: Arc<Shepard>,
    },
}

impl VelocityModel {
    pub fn uniform(v: f64) -> Result<Self> {
        check_velocity(v)?;
        Ok(Self::Uniform { v })
    }

    pub fn two_layer(v_top: f64, v_bottom: f64, interface_depth: f64) -> Result<Self> {
        check_velocity(v_top)?;
        check_velocity(v_bottom)?;
        Ok(Self::TwoLayer { v_top, v_bottom, interface_depth })
    }

    pub fn gridded(grid: VelocityGrid, k: usize, power: f64) -> Result<Self> {
        let positions: Vec<Point> =
            (0..grid.nz).flat_map(|j| (0..grid.nx).map(move |i| (i, j))).map(|(i, j)| grid.position(i, j)).collect();
        let shepard = Shepard::new(&positions, grid.values.clone(), k, power)?;
        Ok(Self::Gridded { grid: Arc::new(grid), shepard: Arc::new(shepard) })
    }

    pub fn scattered(positions: &[Point], values: Vec<f64>, k: usize, power: f64) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Config(format!("velocity must be positive, found {v}")));
        }
        Ok(Self::Scattered { shepard: Arc::new(Shepard::new(positions, values, k, power)?) })
    }

    /// Velocity at `p`. Gridded queries outside the grid footprint are clamped
    /// onto it first.
    pub fn velocity_at(&self, p: Point) -> f64 {
        match self {
            Self::Uniform { v } => *v,
            Self::TwoLayer { v_top, v_bottom, interface_depth } => {
                if p.z < *interface_depth {
                    *v_top
                } else {
                    *v_bottom
                }
            }
            Self::Gridded { grid, shepard } => shepard.eval(grid.footprint().clamp(p)),
            Self::Scattered { shepard } => shepard.eval(p),
        }
    }

    /// Largest velocity the model can return.
    pub fn max_velocity(&self) -> f64 {
        match self {
            Self::Uniform { v } => *v,
            Self::TwoLayer { v_top, v_bottom, .. } => v_top.max(*v_bottom),
            Self::Gridded { shepard, .. } | Self::Scattered { shepard } => {
                shepard.values().iter().copied().fold(0.0, f64::max)
            }
        }
    }

    /// Multiplies every velocity by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        check_velocity(factor)?;
        Ok(match self {
            Self::Uniform { v } => Self::Uniform { v: v * factor },
            Self::TwoLayer { v_top, v_bottom, interface_depth } => {
                Self::TwoLayer { v_top: v_top * factor, v_bottom: v_bottom * factor, interface_depth: *interface_depth }
            }
            Self::Gridded { grid, shepard } => {
                let mut g = (**grid).clone();
                g.values.iter_mut().for_each(|v| *v *= factor);
                Self::gridded(g, shepard.k, shepard.power)?
            }
            Self::Scattered { shepard } => {
                let vals = shepard.values().iter().map(|v| v * factor).collect();
                Self::scattered(shepard.positions(), vals, shepard.k, shepard.power)?
            }
        })
    }
}

fn check_velocity(v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("velocity must be positive, got {v}")))
    }
}

/// Piecewise-constant function of depth, optionally box-filtered.
///
/// `values[0]` holds above `breaks[0]`, `values[i]` on `[breaks[i-1], breaks[i])`.
/// The moving average of a step function is piecewise linear, so it is
/// evaluated exactly from the antiderivative.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthProfile {
    breaks: Vec<f64>,
    values: Vec<f64>,
    window: f64,
}

impl DepthProfile {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>, window: f64) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::LengthMismatch { expected: breaks.len() + 1, got: values.len() });
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("profile breaks must increase".into()));
        }
        if !(window >= 0.0 && window.is_finite()) {
            return Err(Error::Config(format!("smoothing window must be non-negative, got {window}")));
        }
        Ok(Self { breaks, values, window })
    }

    fn step(&self, z: f64) -> f64 {
        self.values[self.breaks.partition_point(|b| *b <= z)]
    }

    /// Antiderivative relative to the first break (any anchor works since only
    /// differences are used).
    fn antiderivative(&self, z: f64) -> f64 {
        let anchor = self.breaks.first().copied().unwrap_or(0.0);
        let mut total = 0.0;
        if z < anchor {
            return -(anchor - z) * self.values[0];
        }
        let mut lo = anchor;
        for (i, &b) in self.breaks.iter().enumerate().skip(1) {
            if z <= b {
                return total + (z - lo) * self.values[i];
            }
            total += (b - lo) * self.values[i];
            lo = b;
        }
        total + (z - lo) * self.values[self.breaks.len()]
    }

    pub fn eval(&self, z: f64) -> f64 {
        if self.window == 0.0 || self.breaks.is_empty() {
            return self.step(z);
        }
        let h = 0.5 * self.window;
        (self.antiderivative(z + h) - self.antiderivative(z - h)) / self.window
    }
}

/// Step from `a_shallow` to `a_deep` at `jump_depth`, moving-averaged over
/// `smoothing_window` in depth.
pub fn delayed_jump_spacing(
    domain: &Rect,
    a_shallow: f64,
    a_deep: f64,
    jump_depth: f64,
    smoothing_window: f64,
) -> Result<SpacingField> {
    if !(a_shallow > 0.0 && a_deep > 0.0) {
        return Err(Error::Config(format!("spacings must be positive, got {a_shallow} and {a_deep}")));
    }
    let profile = DepthProfile::new(vec![jump_depth], vec![a_shallow, a_deep], smoothing_window)?;
    Ok(SpacingField::from_fn(domain, move |p| profile.eval(p.z)))
}

/// Spacing that resolves each local wavelength with `nodes_per_wavelength`
/// nodes: `a = v T / npw` with `T = 2π σ_R`, moving-averaged in depth.
pub fn spacing_from_velocity(
    domain: &Rect,
    model: &VelocityModel,
    sigma_r: f64,
    nodes_per_wavelength: f64,
    smoothing_window: f64,
) -> Result<SpacingField> {
    if !(sigma_r > 0.0 && nodes_per_wavelength > 0.0 && smoothing_window >= 0.0) {
        return Err(Error::Config(format!(
            "spacing rule needs positive sigma_r and nodes per wavelength, got {sigma_r} and {nodes_per_wavelength}"
        )));
    }
    let scale = characteristic_period(sigma_r) / nodes_per_wavelength;
    match model {
        VelocityModel::Uniform { v } => Ok(SpacingField::constant(v * scale)),
        VelocityModel::TwoLayer { v_top, v_bottom, interface_depth } => {
            let profile =
                DepthProfile::new(vec![*interface_depth], vec![v_top * scale, v_bottom * scale], smoothing_window)?;
            Ok(SpacingField::from_fn(domain, move |p| profile.eval(p.z)))
        }
        VelocityModel::Gridded { .. } | VelocityModel::Scattered { .. } => {
            let raster = SmoothedRaster::build(domain, model, scale, smoothing_window);
            Ok(SpacingField::from_fn(domain, move |p| raster.eval(p)))
        }
    }
}

/// Raw spacing sampled on a raster, depth-averaged column by column and then
/// read back bilinearly.
struct SmoothedRaster {
    domain: Rect,
    nx: usize,
    nz: usize,
    values: Vec<f64>,
}

impl SmoothedRaster {
    fn build(domain: &Rect, model: &VelocityModel, scale: f64, window: f64) -> Self {
        let (nx, nz) = match model {
            VelocityModel::Gridded { grid, .. } => (grid.nx.clamp(2, 2048), grid.nz.clamp(2, 2048)),
            _ => (256, 256),
        };
        let dz = domain.depth() / (nz - 1) as f64;
        let x_of = |i: usize| domain.x_min + i as f64 * domain.width() / (nx - 1) as f64;
        let raw: Vec<f64> = (0..nz)
            .flat_map(|j| (0..nx).map(move |i| (i, j)))
            .map(|(i, j)| scale * model.velocity_at(Point::new(x_of(i), domain.z_min + j as f64 * dz)))
            .collect();
        let column = |i: usize, z: f64| {
            let t = ((z - domain.z_min) / dz).clamp(0.0, (nz - 1) as f64);
            let j = (t.floor() as usize).min(nz - 2);
            let f = t - j as f64;
            (1.0 - f) * raw[j * nx + i] + f * raw[(j + 1) * nx + i]
        };
        const TAPS: usize = 33;
        let mut values = raw.clone();
        if window > 0.0 {
            for j in 0..nz {
                let z = domain.z_min + j as f64 * dz;
                for i in 0..nx {
                    let sum: f64 =
                        (0..TAPS).map(|k| column(i, z - 0.5 * window + window * k as f64 / (TAPS - 1) as f64)).sum();
                    values[j * nx + i] = sum / TAPS as f64;
                }
            }
        }
        Self { domain: *domain, nx, nz, values }
    }

    fn eval(&self, p: Point) -> f64 {
        let d = &self.domain;
        let tx = ((p.x - d.x_min) / d.width() * (self.nx - 1) as f64).clamp(0.0, (self.nx - 1) as f64);
        let tz = ((p.z - d.z_min) / d.depth() * (self.nz - 1) as f64).clamp(0.0, (self.nz - 1) as f64);
        let i = (tx.floor() as usize).min(self.nx - 2);
        let j = (tz.floor() as usize).min(self.nz - 2);
        let (fx, fz) = (tx - i as f64, tz - j as f64);
        let v = |i: usize, j: usize| self.values[j * self.nx + i];
        (1.0 - fz) * ((1.0 - fx) * v(i, j) + fx * v(i + 1, j)) + fz * ((1.0 - fx) * v(i, j + 1) + fx * v(i + 1, j + 1))
    }
}
