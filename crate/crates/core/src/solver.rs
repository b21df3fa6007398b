//! Explicit time integration of the constant-density acoustic wave equation
//!
//! ```text
//! u_next = 2 u − u_prev + dt² v² (L u + s(t) δ̃)
//! ```
//!
//! on whatever node layout the spatial operator was built for. Boundary nodes
//! are held at zero (free surface and truncation edges alike); the Cerjan
//! damping factors are applied to both time levels after every update.

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use crate::config::{Backend, ScenarioConfig, SpacingSpec, VelocitySpec};
use crate::fdm::{self, UniformGrid};
use crate::media::{self, VelocityGrid, VelocityModel};
use crate::nodes::{NodeGenerator, NodeSet, SpacingField};
use crate::post::{PointSampler, ProbeSeries, Seismogram, SnapshotField};
use crate::rbf::{assemble_laplacian, AssemblyDiagnostics, LaplacianOperator};
use crate::source::RickerSource;
use crate::{Error, Result};

/// Damping coefficient of the Cerjan layer.
pub const CERJAN_COEFFICIENT: f64 = 0.015;

/// Stride of the per-step blow-up probe; every node is checked each
/// [`FULL_CHECK_INTERVAL`] steps.
const PROBE_STRIDE: usize = 61;
const FULL_CHECK_INTERVAL: usize = 100;

/// A discrete Laplacian that can be applied to a nodal field.
pub trait SpatialOperator: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn apply_into(&self, field: &[f64], out: &mut [f64]) -> Result<()>;
}

impl SpatialOperator for LaplacianOperator {
    fn len(&self) -> usize {
        LaplacianOperator::len(self)
    }

    fn apply_into(&self, field: &[f64], out: &mut [f64]) -> Result<()> {
        LaplacianOperator::apply_into(self, field, out)
    }
}

/// Two consecutive time levels of the pressure field.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    pub u_prev: Vec<f64>,
    pub u_curr: Vec<f64>,
    pub step_index: usize,
    pub t: f64,
}

impl WaveState {
    pub fn at_rest(n: usize) -> Self {
        Self { u_prev: vec![0.0; n], u_curr: vec![0.0; n], step_index: 0, t: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.u_curr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_curr.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.u_curr.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Cerjan damping `exp(-[c (i_max - depth)]²)` inside the layer, 1 outside.
/// `depth` is measured in nodes from the absorbing edge.
pub fn cerjan_factor(i_max: usize, depth: f64) -> f64 {
    let i_max = i_max as f64;
    if depth >= i_max {
        1.0
    } else {
        let e = CERJAN_COEFFICIENT * (i_max - depth);
        (-e * e).exp()
    }
}

/// Per-node multiplicative damping factors.
#[derive(Clone, Debug, PartialEq)]
pub struct AbsorbingLayer {
    pub i_max: usize,
    pub coefficient: f64,
    /// Spacing used to convert distances to node counts.
    pub spacing: f64,
    pub factors: Vec<f64>,
}

impl AbsorbingLayer {
    /// No damping anywhere.
    pub fn none(n: usize) -> Self {
        Self { i_max: 0, coefficient: CERJAN_COEFFICIENT, spacing: 1.0, factors: vec![1.0; n] }
    }

    /// True when no node is damped.
    pub fn is_identity(&self) -> bool {
        self.factors.iter().all(|g| *g == 1.0)
    }
}

/// Continuous-distance Cerjan layer on the side and bottom edges.
///
/// Nodes whose nearest edge is the free surface are left undamped.
pub fn build_damping(nodes: &NodeSet, i_max: usize, a: f64) -> Result<AbsorbingLayer> {
    if !(a > 0.0) {
        return Err(Error::Config(format!("average spacing must be positive, got {a}")));
    }
    let domain = nodes.domain;
    let factors = nodes
        .positions
        .iter()
        .map(|&p| {
            let x = domain.distance_to_absorbing_edge(p);
            if domain.distance_to_top(p) < x {
                1.0
            } else {
                cerjan_factor(i_max, x / a)
            }
        })
        .collect();
    Ok(AbsorbingLayer { i_max, coefficient: CERJAN_COEFFICIENT, spacing: a, factors })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    pub cfl_constant: f64,
    pub velocity_squared: Vec<f64>,
    /// Per-node hyperviscosity `γ` in m⁴/s; empty when disabled.
    pub hyperviscosity: Vec<f64>,
}

impl StepperConfig {
    pub fn new(dt: f64, cfl_constant: f64, velocity_squared: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        if let Some(v) = velocity_squared.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Config(format!("squared velocity must be positive, got {v}")));
        }
        Ok(Self { dt, cfl_constant, velocity_squared, hyperviscosity: Vec::new() })
    }

    /// Adds the damping term `−γ Δ² ∂u/∂t` with `γ = β v a³` per node.
    pub fn with_hyperviscosity(mut self, beta: f64, spacing: &[f64]) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("hyperviscosity must be non-negative, got {beta}")));
        }
        if spacing.len() != self.velocity_squared.len() {
            return Err(Error::LengthMismatch { expected: self.velocity_squared.len(), got: spacing.len() });
        }
        self.hyperviscosity = if beta == 0.0 {
            Vec::new()
        } else {
            spacing.iter().zip(&self.velocity_squared).map(|(a, v2)| beta * v2.sqrt() * a.powi(3)).collect()
        };
        Ok(self)
    }

    pub fn max_velocity(&self) -> f64 {
        self.velocity_squared.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub dt: f64,
    /// `C · min_spacing / max_velocity`.
    pub dt_max: f64,
    /// `C · min(a/v)` over nodes, when per-node data was supplied. Equals
    /// `dt_max` for a homogeneous setup and exceeds it when spacing tracks velocity.
    pub dt_max_local: Option<f64>,
    pub min_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
    pub passed: bool,
}

/// CFL-type check `dt ≤ C · min_spacing / max_velocity`.
pub fn check_stability(cfg: &StepperConfig, min_spacing: f64, max_velocity: f64) -> Result<StabilityReport> {
    if !(min_spacing > 0.0 && max_velocity > 0.0 && cfg.cfl_constant > 0.0) {
        return Err(Error::Config(format!(
            "stability check needs positive inputs (spacing {min_spacing}, velocity {max_velocity})"
        )));
    }
    let dt_max = cfg.cfl_constant * min_spacing / max_velocity;
    Ok(StabilityReport {
        dt: cfg.dt,
        dt_max,
        dt_max_local: None,
        min_ratio: None,
        max_ratio: None,
        passed: cfg.dt <= dt_max,
    })
}

/// Adds the per-node spacing-to-velocity ratio `a(p)/v(p)` to a report.
pub fn with_local_ratios(mut report: StabilityReport, cfg: &StepperConfig, spacing: &[f64]) -> StabilityReport {
    let ratios = spacing.iter().zip(&cfg.velocity_squared).map(|(a, v2)| a / v2.sqrt());
    let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
    report.min_ratio = Some(lo);
    report.max_ratio = Some(hi);
    report.dt_max_local = Some(cfg.cfl_constant * lo);
    report
}

/// Advances a [`WaveState`] one step at a time.
pub struct Stepper<'a> {
    op: &'a dyn SpatialOperator,
    source: Option<(&'a RickerSource, &'a [f64])>,
    damping: &'a AbsorbingLayer,
    cfg: &'a StepperConfig,
    boundary: &'a [bool],
    lap: Vec<f64>,
    next: Vec<f64>,
    /// `Δ²(u − u_prev)` scratch; empty without hyperviscosity.
    visc: Vec<f64>,
}

impl<'a> Stepper<'a> {
    /// `source` pairs the wavelet with its per-node delta weights.
    pub fn new(
        op: &'a dyn SpatialOperator,
        source: Option<(&'a RickerSource, &'a [f64])>,
        damping: &'a AbsorbingLayer,
        cfg: &'a StepperConfig,
        boundary: &'a [bool],
    ) -> Result<Self> {
        let n = op.len();
        if !cfg.hyperviscosity.is_empty() && cfg.hyperviscosity.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: cfg.hyperviscosity.len() });
        }
        for len in [damping.factors.len(), cfg.velocity_squared.len(), boundary.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, got: len });
            }
        }
        if let Some((_, w)) = source {
            if w.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: w.len() });
            }
        }
        let visc = if cfg.hyperviscosity.is_empty() { Vec::new() } else { vec![0.0; n] };
        Ok(Self { op, source, damping, cfg, boundary, lap: vec![0.0; n], next: vec![0.0; n], visc })
    }

    pub fn step(&mut self, state: &mut WaveState) -> Result<()> {
        let n = self.op.len();
        if state.u_curr.len() != n || state.u_prev.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: state.u_curr.len() });
        }
        self.op.apply_into(&state.u_curr, &mut self.lap)?;
        if !self.visc.is_empty() {
            // next <- u − u_prev, visc <- L(next), next <- L(visc)
            self.next.par_iter_mut().enumerate().with_min_len(4096).for_each(|(i, d)| {
                *d = state.u_curr[i] - state.u_prev[i];
            });
            self.op.apply_into(&self.next, &mut self.visc)?;
            self.op.apply_into(&self.visc, &mut self.next)?;
            std::mem::swap(&mut self.next, &mut self.visc);
        }

        let dt2 = self.cfg.dt * self.cfg.dt;
        let (signal, weights) = match self.source {
            Some((src, w)) => (src.signal(state.t), w),
            None => (0.0, &[][..]),
        };
        let g = &self.damping.factors;
        let v2 = &self.cfg.velocity_squared;
        let boundary = self.boundary;
        let gamma = &self.cfg.hyperviscosity;
        let visc = &self.visc;
        let dt = self.cfg.dt;
        let lap = &self.lap;
        let curr = &state.u_curr;
        let prev = &state.u_prev;
        self.next.par_iter_mut().enumerate().with_min_len(4096).for_each(|(i, out)| {
            *out = if boundary[i] {
                0.0
            } else {
                let forcing = if weights.is_empty() { 0.0 } else { signal * weights[i] };
                let damping = if gamma.is_empty() { 0.0 } else { dt * gamma[i] * visc[i] };
                g[i] * (2.0 * curr[i] - prev[i] + dt2 * v2[i] * (lap[i] + forcing) - damping)
            };
        });
        state.u_curr.par_iter_mut().zip(g.par_iter()).with_min_len(4096).for_each(|(u, g)| *u *= g);

        // prev <- damped curr, curr <- next
        std::mem::swap(&mut state.u_prev, &mut state.u_curr);
        std::mem::swap(&mut state.u_curr, &mut self.next);
        state.step_index += 1;
        state.t = state.step_index as f64 * self.cfg.dt;

        let full = state.step_index.is_multiple_of(FULL_CHECK_INTERVAL);
        let stride = if full { 1 } else { PROBE_STRIDE };
        if let Some(node) = (0..n).step_by(stride).find(|&i| !state.u_curr[i].is_finite()) {
            return Err(Error::BlowUp { step: state.step_index, node });
        }
        Ok(())
    }
}

/// Everything the time loop needs, for either backend.
pub struct Discretization {
    pub backend: Backend,
    pub nodes: NodeSet,
    pub operator: Box<dyn SpatialOperator>,
    pub boundary: Vec<bool>,
    pub stepper: StepperConfig,
    pub damping: AbsorbingLayer,
    pub source: RickerSource,
    pub source_weights: Vec<f64>,
    pub assembly: Option<AssemblyDiagnostics>,
    /// Present for the FDM backend.
    pub grid: Option<UniformGrid>,
}

impl Discretization {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        match cfg.backend {
            Backend::RbfFd => Self::rbffd(cfg),
            Backend::Fdm => fdm::discretize(cfg),
        }
    }

    /// Scattered nodes, RBF-FD stencils and the continuous Cerjan layer.
    pub fn rbffd(cfg: &ScenarioConfig) -> Result<Self> {
        let model = velocity_model(cfg)?;
        let spacing = spacing_field(cfg, &model)?;
        let mut fixed = Vec::new();
        if cfg.output.pin_recorders {
            fixed.extend(cfg.receiver_points());
            fixed.extend(cfg.output.probes.iter().copied());
        }
        let generator = NodeGenerator { separation: cfg.separation, ..Default::default() }.with_fixed_points(fixed);
        let nodes = generator.generate(&cfg.domain, &spacing, cfg.seed)?;
        let query = nodes.neighbor_query();
        let op = assemble_laplacian(&nodes, &query, cfg.shape, cfg.support)?;
        let assembly = Some(op.diagnostics);
        let damping = build_damping(&nodes, cfg.i_max, spacing.average())?;
        Self::finish(cfg, Backend::RbfFd, nodes, Box::new(op), &model, damping, assembly, None)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn finish(
        cfg: &ScenarioConfig,
        backend: Backend,
        nodes: NodeSet,
        operator: Box<dyn SpatialOperator>,
        model: &VelocityModel,
        damping: AbsorbingLayer,
        assembly: Option<AssemblyDiagnostics>,
        grid: Option<UniformGrid>,
    ) -> Result<Self> {
        let v2: Vec<f64> = nodes.positions.par_iter().map(|&p| model.velocity_at(p).powi(2)).collect();
        let dt = match backend {
            Backend::RbfFd => cfg.dt,
            Backend::Fdm => cfg.fdm_dt.unwrap_or(cfg.dt),
        };
        let mut stepper = StepperConfig::new(dt, cfg.cfl, v2)?;
        if backend == Backend::RbfFd {
            stepper = stepper.with_hyperviscosity(cfg.hyperviscosity, &nodes.spacing)?;
        }
        let s = &cfg.source;
        let source = RickerSource::new(s.s0, s.sigma_r, s.position, s.epsilon)?.with_delay(s.t_delay);
        let source_weights = source.spatial_weights(&nodes);
        let boundary = nodes.kinds.iter().map(|k| k.is_boundary()).collect();
        Ok(Self { backend, nodes, operator, boundary, stepper, damping, source, source_weights, assembly, grid })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stepper(&self) -> Result<Stepper<'_>> {
        Stepper::new(
            self.operator.as_ref(),
            Some((&self.source, &self.source_weights)),
            &self.damping,
            &self.stepper,
            &self.boundary,
        )
    }

    pub fn stability(&self) -> Result<StabilityReport> {
        let report = check_stability(&self.stepper, self.nodes.min_spacing(), self.stepper.max_velocity())?;
        Ok(with_local_ratios(report, &self.stepper, &self.nodes.spacing))
    }
}

/// Builds the velocity model named by the scenario, loading files relative to
/// the config location.
pub fn velocity_model(cfg: &ScenarioConfig) -> Result<VelocityModel> {
    match &cfg.velocity {
        VelocitySpec::Uniform { v } => VelocityModel::uniform(*v),
        VelocitySpec::TwoLayer { v_top, v_bottom, interface_depth } => {
            VelocityModel::two_layer(*v_top, *v_bottom, *interface_depth)
        }
        VelocitySpec::Gridded { file, origin } => {
            let f = std::fs::File::open(cfg.resolve(file))?;
            let grid = VelocityGrid::read(std::io::BufReader::new(f), *origin)?;
            VelocityModel::gridded(grid, cfg.shepard_k, cfg.shepard_power)
        }
        VelocitySpec::Scattered { file } => {
            let f = std::fs::File::open(cfg.resolve(file))?;
            let (pts, vals) = media::read_scattered_csv(std::io::BufReader::new(f))?;
            VelocityModel::scattered(&pts, vals, cfg.shepard_k, cfg.shepard_power)
        }
    }
}

pub fn spacing_field(cfg: &ScenarioConfig, model: &VelocityModel) -> Result<SpacingField> {
    match cfg.spacing {
        SpacingSpec::Constant { a } => Ok(SpacingField::constant(a)),
        SpacingSpec::DelayedJump { a_shallow, a_deep, jump_depth, window } => {
            media::delayed_jump_spacing(&cfg.domain, a_shallow, a_deep, jump_depth, window)
        }
        SpacingSpec::FromVelocity { nodes_per_wavelength, window } => {
            media::spacing_from_velocity(&cfg.domain, model, cfg.source.sigma_r, nodes_per_wavelength, window)
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Run even when the stability check fails.
    pub force: bool,
}

#[derive(Clone, Debug)]
pub struct RunDiagnostics {
    pub node_count: usize,
    pub stability: StabilityReport,
    pub assembly: Option<AssemblyDiagnostics>,
    /// Human-readable progress log (every 100 steps).
    pub log: Vec<String>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub backend: Backend,
    pub nodes: NodeSet,
    pub snapshots: Vec<SnapshotField>,
    pub seismogram: Seismogram,
    pub probes: ProbeSeries,
    pub final_state: WaveState,
    pub diagnostics: RunDiagnostics,
}

/// Runs a scenario with its configured backend.
pub fn run(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    run_with(cfg, &RunOptions::default(), |_, _| {})
}

/// Like [`run`], calling `observer` with the state after every step (and once
/// for the initial state).
pub fn run_with<F>(cfg: &ScenarioConfig, opts: &RunOptions, observer: F) -> Result<RunArtifacts>
where
    F: FnMut(&WaveState, &Discretization),
{
    let disc = Discretization::build(cfg)?;
    simulate(&disc, cfg, opts, observer)
}

/// Time loop over a prepared discretization.
pub fn simulate<F>(
    disc: &Discretization,
    cfg: &ScenarioConfig,
    opts: &RunOptions,
    mut observer: F,
) -> Result<RunArtifacts>
where
    F: FnMut(&WaveState, &Discretization),
{
    let started = Instant::now();
    let stability = disc.stability()?;
    if !stability.passed {
        if opts.force {
            warn!(
                "dt = {:e} s exceeds the stability limit {:e} s; continuing (forced)",
                stability.dt, stability.dt_max
            );
        } else {
            return Err(Error::Unstable { dt: stability.dt, dt_max: stability.dt_max });
        }
    }

    let mut log = Vec::new();
    if let Some(a) = &disc.assembly {
        log.push(format!(
            "assembly: {} stencils, {} ill-conditioned, min rcond {:e}, max residual {:e}",
            a.stencils, a.ill_conditioned, a.min_rcond, a.max_residual
        ));
    }
    log.push(format!(
        "{} nodes, dt = {:e} s, stability limit {:e} s (local {:e} s)",
        disc.len(),
        stability.dt,
        stability.dt_max,
        stability.dt_max_local.unwrap_or(f64::NAN)
    ));

    let dt = disc.stepper.dt;
    let snapshot_steps: Vec<usize> = cfg.output.snapshot_times.iter().map(|t| (t / dt).round() as usize).collect();
    let receivers = PointSampler::new(&disc.nodes, &cfg.receiver_points(), cfg.shepard_k, cfg.shepard_power)?;
    let probe_sampler = PointSampler::new(&disc.nodes, &cfg.output.probes, cfg.shepard_k, cfg.shepard_power)?;
    let mut seismogram = Seismogram::new(cfg.output.receivers.clone());
    let mut probes = ProbeSeries::new(cfg.output.probes.clone());
    let mut snapshots = Vec::new();
    let positions = std::sync::Arc::new(disc.nodes.positions.clone());

    let mut state = WaveState::at_rest(disc.len());
    let mut record = |state: &WaveState, snapshots: &mut Vec<SnapshotField>| {
        let k = state.step_index;
        if k.is_multiple_of(cfg.output.seismogram_stride) {
            seismogram.push(state.t, receivers.sample(&state.u_curr));
        }
        probes.push(state.t, probe_sampler.sample(&state.u_curr));
        if k == 0 || snapshot_steps.contains(&k) {
            snapshots.push(SnapshotField {
                positions: positions.clone(),
                spacing: disc.nodes.spacing.clone(),
                values: state.u_curr.clone(),
                t: state.t,
                backend: disc.backend,
                grid: disc.grid,
            });
        }
    };
    record(&state, &mut snapshots);
    observer(&state, disc);

    let mut stepper = disc.stepper()?;
    for _ in 0..cfg.steps {
        stepper.step(&mut state)?;
        record(&state, &mut snapshots);
        observer(&state, disc);
        if state.step_index.is_multiple_of(FULL_CHECK_INTERVAL) {
            let line = format!(
                "step {:>7}  t = {:.6} s  max|u| = {:.6e}  wall = {:.2} s",
                state.step_index,
                state.t,
                state.max_abs(),
                started.elapsed().as_secs_f64()
            );
            info!("{line}");
            log.push(line);
        }
    }

    Ok(RunArtifacts {
        backend: disc.backend,
        nodes: disc.nodes.clone(),
        snapshots,
        seismogram,
        probes,
        final_state: state,
        diagnostics: RunDiagnostics {
            node_count: disc.len(),
            stability,
            assembly: disc.assembly,
            log,
            wall_seconds: started.elapsed().as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, DEFAULT_CFL};
    use crate::fdm::{GridLaplacian, UniformGrid};
    use crate::geom::{Point, Rect};

    #[test]
    fn cerjan_examples() {
        assert_eq!(cerjan_factor(30, 30.0), 1.0);
        assert_eq!(cerjan_factor(30, 55.0), 1.0);
        assert!((cerjan_factor(30, 0.0) - (-0.2025f64).exp()).abs() < 1e-15);
        assert!((cerjan_factor(30, 0.0) - 0.81669).abs() < 1e-5);
        assert_eq!(cerjan_factor(0, 0.0), 1.0);
        let mut last = 0.0;
        for d in 0..=30 {
            let g = cerjan_factor(30, d as f64);
            assert!(g > last && g <= 1.0);
            last = g;
        }
    }

    fn grid_setup(n: usize) -> (UniformGrid, NodeSet) {
        let g = UniformGrid::new(n, n, 1.0, Point::new(0.0, 0.0)).unwrap();
        let side = (n - 1) as f64;
        let nodes = g.node_set(Rect::new(0.0, side, 0.0, side).unwrap()).unwrap();
        (g, nodes)
    }

    #[test]
    fn damping_layout() {
        let (_, nodes) = grid_setup(101);
        let layer = build_damping(&nodes, 30, 1.0).unwrap();
        let at = |x: f64, z: f64| layer.factors[nodes.nearest(Point::new(x, z)).unwrap()];
        assert!((at(0.0, 50.0) - 0.81669).abs() < 1e-5);
        assert!((at(50.0, 100.0) - 0.81669).abs() < 1e-5);
        assert_eq!(at(50.0, 50.0), 1.0);
        assert_eq!(at(50.0, 0.0), 1.0);
        assert_eq!(at(20.0, 5.0), 1.0);
        assert!(at(5.0, 20.0) < 1.0);
        assert!(layer.factors.iter().all(|g| *g > 0.0 && *g <= 1.0));
        assert!(build_damping(&nodes, 0, 1.0).unwrap().is_identity());
        assert!(build_damping(&nodes, 30, 0.0).is_err());
    }

    #[test]
    fn stability_examples() {
        let cfg = StepperConfig::new(1e-4, DEFAULT_CFL, vec![9e6]).unwrap();
        let r = check_stability(&cfg, 1.0, 3000.0).unwrap();
        assert!((r.dt_max - 2.357e-4).abs() < 1e-7);
        assert!(r.passed);

        // Bundled homogeneous setup: a = 1.1 m with the 0.75 separation floor.
        let bundled = StepperConfig::new(9.8e-5, DEFAULT_CFL, vec![9e6]).unwrap();
        assert!(check_stability(&bundled, 0.75 * 1.1, 3000.0).unwrap().passed);

        let twice = StepperConfig::new(2.0 * r.dt_max, DEFAULT_CFL, vec![9e6]).unwrap();
        assert!(!check_stability(&twice, 1.0, 3000.0).unwrap().passed);
        assert!(check_stability(&cfg, 0.0, 3000.0).is_err());
        assert!(StepperConfig::new(0.0, DEFAULT_CFL, vec![1.0]).is_err());
        assert!(StepperConfig::new(1e-3, DEFAULT_CFL, vec![0.0]).is_err());

        let local = with_local_ratios(r, &cfg, &[2.0]);
        assert_eq!(local.max_ratio, Some(2.0 / 3000.0));
    }

    struct Fixture {
        op: GridLaplacian,
        nodes: NodeSet,
        boundary: Vec<bool>,
        cfg: StepperConfig,
        damping: AbsorbingLayer,
        source: RickerSource,
        weights: Vec<f64>,
    }

    fn fixture(n: usize, i_max: usize) -> Fixture {
        let (g, nodes) = grid_setup(n);
        let boundary = nodes.kinds.iter().map(|k| k.is_boundary()).collect();
        let cfg = StepperConfig::new(1e-4, DEFAULT_CFL, vec![3000.0f64.powi(2); nodes.len()]).unwrap();
        let damping = build_damping(&nodes, i_max, 1.0).unwrap();
        let c = (n / 2) as f64;
        let source = RickerSource::new(1.0, 1e-3, Point::new(c, c), 4.0).unwrap();
        let weights = source.spatial_weights(&nodes);
        Fixture { op: GridLaplacian { grid: g }, nodes, boundary, cfg, damping, source, weights }
    }

    fn bump(nodes: &NodeSet, width: f64) -> Vec<f64> {
        let c = Point::new(nodes.domain.width() / 2.0, nodes.domain.depth() / 2.0);
        nodes
            .positions
            .iter()
            .zip(&nodes.kinds)
            .map(|(p, k)| if k.is_boundary() { 0.0 } else { (-p.dist2(c) / (width * width)).exp() })
            .collect()
    }

    #[test]
    fn zero_state_stays_zero() {
        let f = fixture(21, 5);
        let mut st = Stepper::new(&f.op, None, &f.damping, &f.cfg, &f.boundary).unwrap();
        let mut s = WaveState::at_rest(f.nodes.len());
        for _ in 0..10 {
            st.step(&mut s).unwrap();
        }
        assert!(s.u_curr.iter().chain(&s.u_prev).all(|v| *v == 0.0));
        assert_eq!(s.step_index, 10);
        assert!((s.t - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn first_step_from_rest_is_pure_forcing() {
        let f = fixture(41, 0);
        let mut st = Stepper::new(&f.op, Some((&f.source, &f.weights)), &f.damping, &f.cfg, &f.boundary).unwrap();
        let mut s = WaveState::at_rest(f.nodes.len());
        st.step(&mut s).unwrap();
        let s0 = f.source.signal(0.0);
        for i in 0..f.nodes.len() {
            let want =
                if f.boundary[i] { 0.0 } else { f.cfg.dt * f.cfg.dt * f.cfg.velocity_squared[i] * (s0 * f.weights[i]) };
            assert_eq!(s.u_curr[i], want);
        }
    }

    #[test]
    fn dirichlet_and_linearity() {
        let f = fixture(41, 8);
        let mut st = Stepper::new(&f.op, None, &f.damping, &f.cfg, &f.boundary).unwrap();
        let u0 = bump(&f.nodes, 4.0);
        let mut a = WaveState { u_prev: u0.clone(), u_curr: u0.clone(), step_index: 0, t: 0.0 };
        let alpha = -3.5;
        let scaled: Vec<f64> = u0.iter().map(|v| alpha * v).collect();
        let mut b = WaveState { u_prev: scaled.clone(), u_curr: scaled, step_index: 0, t: 0.0 };
        for _ in 0..50 {
            st.step(&mut a).unwrap();
            st.step(&mut b).unwrap();
            for i in 0..a.len() {
                if f.boundary[i] {
                    assert_eq!(a.u_curr[i], 0.0);
                }
                assert!((b.u_curr[i] - alpha * a.u_curr[i]).abs() <= 1e-12 * (1.0 + a.u_curr[i].abs()));
            }
        }
    }

    #[test]
    fn zero_layer_matches_undamped_update() {
        let f = fixture(31, 0);
        assert!(f.damping.is_identity());
        let none = AbsorbingLayer::none(f.nodes.len());
        let mut a = Stepper::new(&f.op, Some((&f.source, &f.weights)), &f.damping, &f.cfg, &f.boundary).unwrap();
        let mut b = Stepper::new(&f.op, Some((&f.source, &f.weights)), &none, &f.cfg, &f.boundary).unwrap();
        let (mut sa, mut sb) = (WaveState::at_rest(f.nodes.len()), WaveState::at_rest(f.nodes.len()));
        for _ in 0..40 {
            a.step(&mut sa).unwrap();
            b.step(&mut sb).unwrap();
        }
        assert_eq!(sa, sb);
    }

    #[test]
    fn time_reversal_recovers_initial_field() {
        let f = fixture(101, 0);
        let mut st = Stepper::new(&f.op, None, &f.damping, &f.cfg, &f.boundary).unwrap();
        let u0 = bump(&f.nodes, 5.0);
        let mut s = WaveState { u_prev: u0.clone(), u_curr: u0.clone(), step_index: 0, t: 0.0 };
        for _ in 0..60 {
            st.step(&mut s).unwrap();
        }
        std::mem::swap(&mut s.u_prev, &mut s.u_curr);
        for _ in 0..60 {
            st.step(&mut s).unwrap();
        }
        let scale = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = s.u_curr.iter().zip(&u0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-6 * scale, "{err}");
    }

    #[test]
    fn blow_up_is_reported() {
        let mut f = fixture(31, 0);
        f.cfg.dt = 50.0 * 2.357e-4;
        let mut st = Stepper::new(&f.op, None, &f.damping, &f.cfg, &f.boundary).unwrap();
        let u0 = bump(&f.nodes, 2.0);
        let mut s = WaveState { u_prev: vec![0.0; u0.len()], u_curr: u0, step_index: 0, t: 0.0 };
        let err = (0..500).find_map(|_| st.step(&mut s).err()).expect("no blow-up");
        assert!(matches!(err, Error::BlowUp { step, .. } if step <= 200), "{err:?}");
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let f = fixture(11, 0);
        let short = vec![false; 3];
        assert!(Stepper::new(&f.op, None, &f.damping, &f.cfg, &short).is_err());
        let mut st = Stepper::new(&f.op, None, &f.damping, &f.cfg, &f.boundary).unwrap();
        assert!(st.step(&mut WaveState::at_rest(5)).is_err());
    }

    const DESK: &str = "\
[domain]
x_min = 0
x_max = 40
z_min = 0
z_max = 40
[velocity]
model = uniform
v = 3000
[spacing]
mode = constant
a = 1
[source]
sigma_r = 0.001
x = 20
z = 20
[time]
dt = 1e-4
steps = 0
[abc]
i_max = 5
[output]
receivers = 10, 20, 30
probes = 25 25
snapshot_times = 0.001
";

    #[test]
    fn zero_steps_give_initial_snapshot_only() {
        let cfg = parse_config(DESK).unwrap();
        let run = run(&cfg).unwrap();
        assert_eq!(run.snapshots.len(), 1);
        assert_eq!(run.snapshots[0].t, 0.0);
        assert!(run.snapshots[0].values.iter().all(|v| *v == 0.0));
        assert_eq!(run.seismogram.times, vec![0.0]);
        assert_eq!(run.probes.times.len(), 1);
    }

    #[test]
    fn unstable_time_step_is_refused_unless_forced() {
        let mut cfg = parse_config(DESK).unwrap();
        cfg.dt = 1e-3;
        assert!(matches!(run(&cfg), Err(Error::Unstable { .. })));
        let forced = run_with(&cfg, &RunOptions { force: true }, |_, _| {}).unwrap();
        assert!(!forced.diagnostics.stability.passed);
    }

    #[test]
    fn runs_are_deterministic_and_snapshot_on_schedule() {
        let mut cfg = parse_config(DESK).unwrap();
        cfg.steps = 12;
        for backend in [Backend::RbfFd, Backend::Fdm] {
            cfg.backend = backend;
            let a = run(&cfg).unwrap();
            let b = run(&cfg).unwrap();
            assert_eq!(a.final_state, b.final_state);
            assert_eq!(a.seismogram, b.seismogram);
            assert_eq!(a.snapshots.iter().map(|s| s.t).collect::<Vec<_>>(), vec![0.0, 1e-3]);
            assert_eq!(a.seismogram.times.len(), 13);
            assert!(a.final_state.max_abs() > 0.0);
            assert_eq!(a.diagnostics.assembly.is_some(), backend == Backend::RbfFd);
        }
    }
}
