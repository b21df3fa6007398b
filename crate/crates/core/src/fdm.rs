//! Classical 5-point finite differences on a uniform grid.
//!
//! Shares the time stepper, source and recorders with the RBF-FD path; only
//! the Laplacian, node layout and damping form differ.

use rayon::prelude::*;

use crate::config::{Backend, ScenarioConfig};
use crate::geom::{Point, Rect};
use crate::nodes::NodeSet;
use crate::solver::{self, cerjan_factor, AbsorbingLayer, Discretization, RunArtifacts, RunOptions, SpatialOperator};
use crate::{Error, Result};

/// Vertex grid, row-major in `x` (`index = j * nx + i`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub nx: usize,
    pub nz: usize,
    pub h: f64,
    pub origin: Point,
}

impl UniformGrid {
    pub fn new(nx: usize, nz: usize, h: f64, origin: Point) -> Result<Self> {
        if nx < 3 || nz < 3 {
            return Err(Error::Config(format!("grid needs at least 3x3 points, got {nx}x{nz}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("grid spacing must be positive, got {h}")));
        }
        Ok(Self { nx, nz, h, origin })
    }

    /// Grid whose outer points lie on the edges of `domain`. The domain sides
    /// must be whole multiples of `h`.
    pub fn covering(domain: &Rect, h: f64) -> Result<Self> {
        let cells = |len: f64, axis: &str| -> Result<usize> {
            let c = len / h;
            let r = c.round();
            if (c - r).abs() > 1e-6 * c.max(1.0) {
                return Err(Error::Config(format!("domain {axis} {len} is not a multiple of h = {h}")));
            }
            Ok(r as usize)
        };
        let nx = cells(domain.width(), "width")? + 1;
        let nz = cells(domain.depth(), "depth")? + 1;
        Self::new(nx, nz, h, Point::new(domain.x_min, domain.z_min))
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn position(&self, i: usize, j: usize) -> Point {
        Point::new(self.origin.x + i as f64 * self.h, self.origin.z + j as f64 * self.h)
    }

    pub fn extent(&self) -> Rect {
        Rect {
            x_min: self.origin.x,
            x_max: self.origin.x + (self.nx - 1) as f64 * self.h,
            z_min: self.origin.z,
            z_max: self.origin.z + (self.nz - 1) as f64 * self.h,
        }
    }

    pub fn positions(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.nz {
            for i in 0..self.nx {
                out.push(self.position(i, j));
            }
        }
        out
    }

    /// Grid points as a node set over `domain`. The last row and column are
    /// snapped onto the domain edges so boundary classification is exact.
    pub fn node_set(&self, domain: Rect) -> Result<NodeSet> {
        let mut positions = self.positions();
        for j in 0..self.nz {
            for i in 0..self.nx {
                let p = &mut positions[j * self.nx + i];
                if i == self.nx - 1 {
                    p.x = domain.x_max;
                }
                if j == self.nz - 1 {
                    p.z = domain.z_max;
                }
            }
        }
        NodeSet::new(domain, positions, vec![self.h; self.len()])
    }

    fn is_edge(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.nz - 1
    }
}

/// 5-point Laplacian; edge rows are zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridLaplacian {
    pub grid: UniformGrid,
}

impl SpatialOperator for GridLaplacian {
    fn len(&self) -> usize {
        self.grid.len()
    }

    fn apply_into(&self, field: &[f64], out: &mut [f64]) -> Result<()> {
        let g = self.grid;
        for len in [field.len(), out.len()] {
            if len != g.len() {
                return Err(Error::LengthMismatch { expected: g.len(), got: len });
            }
        }
        let inv_h2 = 1.0 / (g.h * g.h);
        out.par_chunks_mut(g.nx).enumerate().for_each(|(j, row)| {
            for (i, o) in row.iter_mut().enumerate() {
                *o = if g.is_edge(i, j) {
                    0.0
                } else {
                    let c = j * g.nx + i;
                    (field[c - 1] + field[c + 1] + field[c - g.nx] + field[c + g.nx] - 4.0 * field[c]) * inv_h2
                };
            }
        });
        Ok(())
    }
}

pub fn fdm_laplacian(grid: &UniformGrid, field: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.len()];
    GridLaplacian { grid: *grid }.apply_into(field, &mut out)?;
    Ok(out)
}

/// Index-form Cerjan layer: the depth of a point is its grid distance to the
/// nearest side or bottom edge. Points nearer the top edge are undamped.
pub fn grid_damping(grid: &UniformGrid, i_max: usize) -> AbsorbingLayer {
    let mut factors = Vec::with_capacity(grid.len());
    for j in 0..grid.nz {
        for i in 0..grid.nx {
            let d = i.min(grid.nx - 1 - i).min(grid.nz - 1 - j);
            factors.push(if j < d { 1.0 } else { cerjan_factor(i_max, d as f64) });
        }
    }
    AbsorbingLayer { i_max, coefficient: solver::CERJAN_COEFFICIENT, spacing: grid.h, factors }
}

/// Builds the grid discretization for a scenario regardless of its backend key.
pub fn discretize(cfg: &ScenarioConfig) -> Result<Discretization> {
    let h =
        cfg.fdm_spacing().ok_or_else(|| Error::Config("fdm backend needs fdm.h for non-constant spacing".into()))?;
    let grid = UniformGrid::covering(&cfg.domain, h)?;
    let nodes = grid.node_set(cfg.domain)?;
    let model = solver::velocity_model(cfg)?;
    let damping = grid_damping(&grid, cfg.i_max);
    Discretization::finish(
        cfg,
        Backend::Fdm,
        nodes,
        Box::new(GridLaplacian { grid }),
        &model,
        damping,
        None,
        Some(grid),
    )
}

pub fn fdm_run(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let mut cfg = cfg.clone();
    cfg.backend = Backend::Fdm;
    solver::run_with(&cfg, &RunOptions::default(), |_, _| {})
}
