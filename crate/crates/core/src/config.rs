//! Scenario configuration: a flat `key = value` format grouped in `[sections]`.
//!
//! ```text
//! [domain]
//! x_min = 0
//! x_max = 500
//! ```
//!
//! Comments start with `#`. Every key is validated; unknown keys are rejected
//! and every problem found is reported together with its line number.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::geom::{Point, Rect};
use crate::media::{DEFAULT_SHEPARD_K, DEFAULT_SHEPARD_POWER, DEFAULT_SMOOTHING_WINDOW};
use crate::nodes::DEFAULT_SEPARATION;
use crate::rbf::{ShapeMode, DEFAULT_SUPPORT};
use crate::source::{DEFAULT_DELAY_FACTOR, DEFAULT_EPSILON};
use crate::{Error, Result};

/// Default Cerjan layer thickness in nodes.
pub const DEFAULT_I_MAX: usize = 30;
/// Default Courant constant for the stability check.
pub const DEFAULT_CFL: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Default receiver depth below the free surface, metres.
pub const DEFAULT_RECEIVER_DEPTH: f64 = 2.0;

/// Default RBF-FD hyperviscosity factor `β` (`γ = β v a³`).
pub const DEFAULT_HYPERVISCOSITY: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    RbfFd,
    Fdm,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::RbfFd => "rbffd",
            Backend::Fdm => "fdm",
        }
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rbffd" => Ok(Backend::RbfFd),
            "fdm" => Ok(Backend::Fdm),
            other => Err(format!("unknown backend `{other}` (expected rbffd or fdm)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VelocitySpec {
    Uniform {
        v: f64,
    },
    TwoLayer {
        v_top: f64,
        v_bottom: f64,
        interface_depth: f64,
    },
    /// ASCII grid file; samples start at `origin`.
    Gridded {
        file: PathBuf,
        origin: Point,
    },
    /// `x,z,v` CSV samples.
    Scattered {
        file: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpacingSpec {
    Constant { a: f64 },
    DelayedJump { a_shallow: f64, a_deep: f64, jump_depth: f64, window: f64 },
    FromVelocity { nodes_per_wavelength: f64, window: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceSpec {
    pub s0: f64,
    pub sigma_r: f64,
    pub position: Point,
    pub epsilon: f64,
    pub t_delay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSpec {
    pub snapshot_times: Vec<f64>,
    /// Receiver x positions.
    pub receivers: Vec<f64>,
    pub receiver_depth: f64,
    /// Record a seismogram row every this many steps.
    pub seismogram_stride: usize,
    pub probes: Vec<Point>,
    /// Optional uniform grid spacing for binary snapshot export.
    pub grid_spacing: Option<f64>,
    /// Place receivers and probes as nodes so they are sampled exactly.
    pub pin_recorders: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub backend: Backend,
    pub seed: u64,
    pub domain: Rect,
    pub velocity: VelocitySpec,
    pub shepard_k: usize,
    pub shepard_power: f64,
    pub spacing: SpacingSpec,
    pub separation: f64,
    pub source: SourceSpec,
    pub dt: f64,
    pub steps: usize,
    pub cfl: f64,
    pub support: usize,
    pub shape: ShapeMode,
    /// Dimensionless hyperviscosity factor `β` for the RBF-FD backend.
    pub hyperviscosity: f64,
    pub i_max: usize,
    /// FDM grid spacing; defaults to the constant node spacing.
    pub fdm_h: Option<f64>,
    /// FDM time step; defaults to `dt`.
    pub fdm_dt: Option<f64>,
    pub output: OutputSpec,
    /// Directory that relative file paths are resolved against.
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = parse_config(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            self.base_dir.join(file)
        }
    }

    /// Time step of the active backend.
    pub fn active_dt(&self) -> f64 {
        match self.backend {
            Backend::RbfFd => self.dt,
            Backend::Fdm => self.fdm_dt.unwrap_or(self.dt),
        }
    }

    /// FDM grid spacing, falling back to the constant node spacing.
    pub fn fdm_spacing(&self) -> Option<f64> {
        self.fdm_h.or(match self.spacing {
            SpacingSpec::Constant { a } => Some(a),
            _ => None,
        })
    }

    pub fn receiver_points(&self) -> Vec<Point> {
        let z = self.domain.z_min + self.output.receiver_depth;
        self.output.receivers.iter().map(|&x| Point::new(x, z)).collect()
    }

    /// Serializes to the text format; `parse_config` of the result yields an
    /// equal config (apart from `base_dir`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let f = fmt_f64;
        let _ = writeln!(
            s,
            "[scenario]\nname = {}\nbackend = {}\nseed = {}\n",
            self.name,
            self.backend.as_str(),
            self.seed
        );
        let d = &self.domain;
        let _ = writeln!(
            s,
            "[domain]\nx_min = {}\nx_max = {}\nz_min = {}\nz_max = {}\n",
            f(d.x_min),
            f(d.x_max),
            f(d.z_min),
            f(d.z_max)
        );
        s.push_str("[velocity]\n");
        match &self.velocity {
            VelocitySpec::Uniform { v } => {
                let _ = writeln!(s, "model = uniform\nv = {}", f(*v));
            }
            VelocitySpec::TwoLayer { v_top, v_bottom, interface_depth } => {
                let _ = writeln!(
                    s,
                    "model = two_layer\nv_top = {}\nv_bottom = {}\ninterface_depth = {}",
                    f(*v_top),
                    f(*v_bottom),
                    f(*interface_depth)
                );
            }
            VelocitySpec::Gridded { file, origin } => {
                let _ = writeln!(
                    s,
                    "model = gridded\nfile = {}\norigin_x = {}\norigin_z = {}",
                    file.display(),
                    f(origin.x),
                    f(origin.z)
                );
            }
            VelocitySpec::Scattered { file } => {
                let _ = writeln!(s, "model = scattered\nfile = {}", file.display());
            }
        }
        let _ = writeln!(s, "shepard_k = {}\nshepard_power = {}\n", self.shepard_k, f(self.shepard_power));
        s.push_str("[spacing]\n");
        match &self.spacing {
            SpacingSpec::Constant { a } => {
                let _ = writeln!(s, "mode = constant\na = {}", f(*a));
            }
            SpacingSpec::DelayedJump { a_shallow, a_deep, jump_depth, window } => {
                let _ = writeln!(
                    s,
                    "mode = delayed_jump\na_shallow = {}\na_deep = {}\njump_depth = {}\nwindow = {}",
                    f(*a_shallow),
                    f(*a_deep),
                    f(*jump_depth),
                    f(*window)
                );
            }
            SpacingSpec::FromVelocity { nodes_per_wavelength, window } => {
                let _ = writeln!(
                    s,
                    "mode = from_velocity\nnodes_per_wavelength = {}\nwindow = {}",
                    f(*nodes_per_wavelength),
                    f(*window)
                );
            }
        }
        let _ = writeln!(s, "separation = {}\n", f(self.separation));
        let src = &self.source;
        let _ = writeln!(
            s,
            "[source]\ns0 = {}\nsigma_r = {}\nx = {}\nz = {}\nepsilon = {}\nt_delay = {}\n",
            f(src.s0),
            f(src.sigma_r),
            f(src.position.x),
            f(src.position.z),
            f(src.epsilon),
            f(src.t_delay)
        );
        let _ = writeln!(s, "[time]\ndt = {}\nsteps = {}\ncfl = {}\n", f(self.dt), self.steps, f(self.cfl));
        let (mode, value) = match self.shape {
            ShapeMode::Absolute(v) => ("absolute", v),
            ShapeMode::Relative(v) => ("relative", v),
        };
        let _ = writeln!(
            s,
            "[rbf]\nsupport = {}\nshape = {}\nshape_mode = {}\nhyperviscosity = {}\n",
            self.support,
            f(value),
            mode,
            f(self.hyperviscosity)
        );
        let _ = writeln!(s, "[abc]\ni_max = {}\n", self.i_max);
        if self.fdm_h.is_some() || self.fdm_dt.is_some() {
            s.push_str("[fdm]\n");
            if let Some(h) = self.fdm_h {
                let _ = writeln!(s, "h = {}", f(h));
            }
            if let Some(dt) = self.fdm_dt {
                let _ = writeln!(s, "dt = {}", f(dt));
            }
            s.push('\n');
        }
        let o = &self.output;
        let list = |v: &[f64]| v.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[output]");
        if !o.snapshot_times.is_empty() {
            let _ = writeln!(s, "snapshot_times = {}", list(&o.snapshot_times));
        }
        if !o.receivers.is_empty() {
            let _ = writeln!(s, "receivers = {}", list(&o.receivers));
        }
        let _ = writeln!(s, "receiver_depth = {}\nseismogram_stride = {}", f(o.receiver_depth), o.seismogram_stride);
        if !o.probes.is_empty() {
            let pts: Vec<String> = o.probes.iter().map(|p| format!("{} {}", f(p.x), f(p.z))).collect();
            let _ = writeln!(s, "probes = {}", pts.join("; "));
        }
        if let Some(g) = o.grid_spacing {
            let _ = writeln!(s, "grid_spacing = {}", f(g));
        }
        let _ = writeln!(s, "pin_recorders = {}", o.pin_recorders);
        s
    }
}

/// Shortest representation that parses back to the same value.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("scenario", &["name", "backend", "seed"]),
    ("domain", &["x_min", "x_max", "z_min", "z_max"]),
    (
        "velocity",
        &[
            "model",
            "v",
            "v_top",
            "v_bottom",
            "interface_depth",
            "file",
            "origin_x",
            "origin_z",
            "shepard_k",
            "shepard_power",
        ],
    ),
    ("spacing", &["mode", "a", "a_shallow", "a_deep", "jump_depth", "window", "nodes_per_wavelength", "separation"]),
    ("source", &["s0", "sigma_r", "x", "z", "epsilon", "t_delay"]),
    ("time", &["dt", "steps", "cfl"]),
    ("rbf", &["support", "shape", "shape_mode", "hyperviscosity"]),
    ("abc", &["i_max"]),
    ("fdm", &["h", "dt"]),
    (
        "output",
        &[
            "snapshot_times",
            "receivers",
            "receiver_depth",
            "seismogram_stride",
            "probes",
            "grid_spacing",
            "pin_recorders",
        ],
    ),
];

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Raw key table plus issue collector.
struct Table {
    entries: BTreeMap<String, Entry>,
    issues: Vec<ConfigIssue>,
}

impl Table {
    fn issue(&mut self, line: Option<usize>, message: String) {
        self.issues.push(ConfigIssue { line, message });
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let (v, line) = self.raw(key)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(e) => {
                self.issue(Some(line), format!("`{key}`: cannot parse `{v}`: {e}"));
                None
            }
        }
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        if !self.entries.contains_key(key) {
            self.issue(None, format!("missing required key `{key}`"));
            return None;
        }
        self.parsed(key)
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    fn positive(&mut self, key: &str, v: Option<f64>) -> Option<f64> {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => Some(x),
            Some(x) => {
                let line = self.line_of(key);
                self.issue(line, format!("`{key}` must be positive, got {x}"));
                None
            }
            None => None,
        }
    }

    fn list(&mut self, key: &str) -> Vec<f64> {
        let Some((v, line)) = self.raw(key) else { return Vec::new() };
        match parse_number_list(&v) {
            Ok(xs) => xs,
            Err(e) => {
                self.issue(Some(line), format!("`{key}`: {e}"));
                Vec::new()
            }
        }
    }

    fn points(&mut self, key: &str) -> Vec<Point> {
        let Some((v, line)) = self.raw(key) else { return Vec::new() };
        let mut out = Vec::new();
        for chunk in v.split(';').map(str::trim).filter(|c| !c.is_empty()) {
            let xs: Vec<&str> = chunk.split([' ', ',']).filter(|t| !t.is_empty()).collect();
            match (xs.len(), xs.first().map(|t| t.parse::<f64>()), xs.get(1).map(|t| t.parse::<f64>())) {
                (2, Some(Ok(x)), Some(Ok(z))) => out.push(Point::new(x, z)),
                _ => self.issue(Some(line), format!("`{key}`: expected `x z` pairs separated by `;`, got `{chunk}`")),
            }
        }
        out
    }
}

/// Numbers separated by commas; `start:step:stop` expands to an inclusive range.
fn parse_number_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item.contains(':') {
            let parts: Vec<f64> = item
                .split(':')
                .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{item}`: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if parts.len() != 3 || !(parts[1] > 0.0) || parts[2] < parts[0] {
                return Err(format!("range `{item}` must be start:step:stop with positive step"));
            }
            let n = ((parts[2] - parts[0]) / parts[1] + 1e-9).floor() as usize;
            out.extend((0..=n).map(|k| parts[0] + k as f64 * parts[1]));
        } else {
            out.push(item.parse::<f64>().map_err(|e| format!("`{item}`: {e}"))?);
        }
    }
    Ok(out)
}

fn tokenize(text: &str) -> Table {
    let mut table = Table { entries: BTreeMap::new(), issues: Vec::new() };
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
            let name = name.trim();
            if KNOWN_KEYS.iter().any(|(s, _)| *s == name) {
                section = Some(name.to_string());
            } else {
                table.issue(Some(line), format!("unknown section `[{name}]`"));
                section = None;
            }
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            table.issue(Some(line), format!("expected `key = value`, got `{body}`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = section.as_deref() else {
            table.issue(Some(line), format!("key `{key}` outside a known section"));
            continue;
        };
        let keys = KNOWN_KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !keys.contains(&key) {
            table.issue(Some(line), format!("unknown key `{key}` in section [{sec}]"));
            continue;
        }
        let full = format!("{sec}.{key}");
        if let Some(prev) = table.entries.get(&full) {
            let msg = format!("duplicate key `{full}` (first set on line {})", prev.line);
            table.issue(Some(line), msg);
            continue;
        }
        table.entries.insert(full, Entry { value: value.to_string(), line, used: false });
    }
    table
}

/// Parses and validates a scenario. All problems are collected into one
/// [`Error::Validation`].
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut t = tokenize(text);

    let name = t.parsed::<String>("scenario.name").unwrap_or_else(|| "scenario".to_string());
    let backend = t.parsed::<Backend>("scenario.backend").unwrap_or(Backend::RbfFd);
    let seed = t.parsed::<u64>("scenario.seed").unwrap_or(0);

    let x_min = t.required::<f64>("domain.x_min");
    let x_max = t.required::<f64>("domain.x_max");
    let z_min = t.required::<f64>("domain.z_min");
    let z_max = t.required::<f64>("domain.z_max");
    let domain = match (x_min, x_max, z_min, z_max) {
        (Some(a), Some(b), Some(c), Some(d)) => match Rect::new(a, b, c, d) {
            Ok(r) => Some(r),
            Err(e) => {
                let line = t.line_of("domain.x_min");
                t.issue(line, e.to_string());
                None
            }
        },
        _ => None,
    };

    let model = t.required::<String>("velocity.model");
    let velocity = match model.as_deref() {
        Some("uniform") => {
            let v = t.required("velocity.v");
            t.positive("velocity.v", v).map(|v| VelocitySpec::Uniform { v })
        }
        Some("two_layer") => {
            let a = t.required("velocity.v_top");
            let a = t.positive("velocity.v_top", a);
            let b = t.required("velocity.v_bottom");
            let b = t.positive("velocity.v_bottom", b);
            let c = t.required::<f64>("velocity.interface_depth");
            match (a, b, c) {
                (Some(v_top), Some(v_bottom), Some(interface_depth)) => {
                    Some(VelocitySpec::TwoLayer { v_top, v_bottom, interface_depth })
                }
                _ => None,
            }
        }
        Some("gridded") => {
            let file = t.required::<String>("velocity.file");
            let ox = t.parsed::<f64>("velocity.origin_x").unwrap_or(0.0);
            let oz = t.parsed::<f64>("velocity.origin_z").unwrap_or(0.0);
            file.map(|f| VelocitySpec::Gridded { file: PathBuf::from(f), origin: Point::new(ox, oz) })
        }
        Some("scattered") => {
            t.required::<String>("velocity.file").map(|f| VelocitySpec::Scattered { file: PathBuf::from(f) })
        }
        Some(other) => {
            let line = t.line_of("velocity.model");
            t.issue(line, format!("unknown velocity model `{other}` (uniform, two_layer, gridded, scattered)"));
            None
        }
        None => None,
    };
    let shepard_k = t.parsed::<usize>("velocity.shepard_k").unwrap_or(DEFAULT_SHEPARD_K);
    if shepard_k == 0 {
        let line = t.line_of("velocity.shepard_k");
        t.issue(line, "`velocity.shepard_k` must be at least 1".into());
    }
    let shepard_power = t.parsed::<f64>("velocity.shepard_power").unwrap_or(DEFAULT_SHEPARD_POWER);
    let shepard_power = t.positive("velocity.shepard_power", Some(shepard_power)).unwrap_or(DEFAULT_SHEPARD_POWER);

    let mode = t.required::<String>("spacing.mode");
    let spacing = match mode.as_deref() {
        Some("constant") => {
            let a = t.required("spacing.a");
            t.positive("spacing.a", a).map(|a| SpacingSpec::Constant { a })
        }
        Some("delayed_jump") => {
            let a_s = t.required("spacing.a_shallow");
            let a_s = t.positive("spacing.a_shallow", a_s);
            let a_d = t.required("spacing.a_deep");
            let a_d = t.positive("spacing.a_deep", a_d);
            let jump = t.required::<f64>("spacing.jump_depth");
            let window = t.parsed::<f64>("spacing.window").unwrap_or(DEFAULT_SMOOTHING_WINDOW);
            match (a_s, a_d, jump) {
                (Some(a_shallow), Some(a_deep), Some(jump_depth)) => {
                    if a_shallow > a_deep {
                        let line = t.line_of("spacing.a_shallow");
                        t.issue(line, "`spacing.a_shallow` must not exceed `spacing.a_deep`".into());
                    }
                    Some(SpacingSpec::DelayedJump { a_shallow, a_deep, jump_depth, window })
                }
                _ => None,
            }
        }
        Some("from_velocity") => {
            let npw = t.required("spacing.nodes_per_wavelength");
            let npw = t.positive("spacing.nodes_per_wavelength", npw);
            let window = t.parsed::<f64>("spacing.window").unwrap_or(DEFAULT_SMOOTHING_WINDOW);
            npw.map(|nodes_per_wavelength| SpacingSpec::FromVelocity { nodes_per_wavelength, window })
        }
        Some(other) => {
            let line = t.line_of("spacing.mode");
            t.issue(line, format!("unknown spacing mode `{other}` (constant, delayed_jump, from_velocity)"));
            None
        }
        None => None,
    };
    if let Some(SpacingSpec::DelayedJump { window, .. } | SpacingSpec::FromVelocity { window, .. }) = spacing {
        if !(window >= 0.0) {
            let line = t.line_of("spacing.window");
            t.issue(line, format!("`spacing.window` must be non-negative, got {window}"));
        }
    }
    let separation = t.parsed::<f64>("spacing.separation").unwrap_or(DEFAULT_SEPARATION);
    if !(separation > 0.0 && separation <= 1.0) {
        let line = t.line_of("spacing.separation");
        t.issue(line, format!("`spacing.separation` must be in (0, 1], got {separation}"));
    }

    let s0 = t.parsed::<f64>("source.s0").unwrap_or(1.0);
    let sigma_r = t.required("source.sigma_r");
    let sigma_r = t.positive("source.sigma_r", sigma_r);
    let sx = t.required::<f64>("source.x");
    let sz = t.required::<f64>("source.z");
    let epsilon = t.parsed::<f64>("source.epsilon").unwrap_or(DEFAULT_EPSILON);
    let epsilon = t.positive("source.epsilon", Some(epsilon)).unwrap_or(DEFAULT_EPSILON);
    let t_delay = t.parsed::<f64>("source.t_delay");
    let source = match (sigma_r, sx, sz) {
        (Some(sigma_r), Some(x), Some(z)) => {
            let position = Point::new(x, z);
            if let Some(d) = domain {
                if !d.contains_strictly(position) {
                    let line = t.line_of("source.x");
                    t.issue(line, format!("source {position} lies outside the domain interior"));
                }
            }
            Some(SourceSpec {
                s0,
                sigma_r,
                position,
                epsilon,
                t_delay: t_delay.unwrap_or(DEFAULT_DELAY_FACTOR * sigma_r),
            })
        }
        _ => None,
    };

    let dt = t.required("time.dt");
    let dt = t.positive("time.dt", dt);
    let steps = t.required::<usize>("time.steps");
    let cfl = t.parsed::<f64>("time.cfl").unwrap_or(DEFAULT_CFL);
    let cfl = t.positive("time.cfl", Some(cfl)).unwrap_or(DEFAULT_CFL);

    let support = t.parsed::<usize>("rbf.support").unwrap_or(DEFAULT_SUPPORT);
    if support < 3 {
        let line = t.line_of("rbf.support");
        t.issue(line, format!("`rbf.support` must be at least 3, got {support}"));
    }
    let shape_value = t.parsed::<f64>("rbf.shape").unwrap_or(70.0);
    let shape_value = t.positive("rbf.shape", Some(shape_value)).unwrap_or(70.0);
    let shape = match t.parsed::<String>("rbf.shape_mode").as_deref() {
        None | Some("absolute") => ShapeMode::Absolute(shape_value),
        Some("relative") => ShapeMode::Relative(shape_value),
        Some(other) => {
            let line = t.line_of("rbf.shape_mode");
            t.issue(line, format!("unknown shape mode `{other}` (absolute, relative)"));
            ShapeMode::Absolute(shape_value)
        }
    };
    let hyperviscosity = t.parsed::<f64>("rbf.hyperviscosity").unwrap_or(DEFAULT_HYPERVISCOSITY);
    if !(hyperviscosity >= 0.0 && hyperviscosity.is_finite()) {
        let line = t.line_of("rbf.hyperviscosity");
        t.issue(line, format!("`rbf.hyperviscosity` must be non-negative, got {hyperviscosity}"));
    }
    let i_max = t.parsed::<usize>("abc.i_max").unwrap_or(DEFAULT_I_MAX);

    let fdm_h = t.parsed::<f64>("fdm.h");
    let fdm_h = t.positive("fdm.h", fdm_h);
    let fdm_dt = t.parsed::<f64>("fdm.dt");
    let fdm_dt = t.positive("fdm.dt", fdm_dt);

    let snapshot_times = t.list("output.snapshot_times");
    if snapshot_times.iter().any(|x| !(*x >= 0.0)) {
        let line = t.line_of("output.snapshot_times");
        t.issue(line, "snapshot times must be non-negative".into());
    }
    let receivers = t.list("output.receivers");
    let receiver_depth = t.parsed::<f64>("output.receiver_depth").unwrap_or(DEFAULT_RECEIVER_DEPTH);
    let seismogram_stride = t.parsed::<usize>("output.seismogram_stride").unwrap_or(1).max(1);
    let probes = t.points("output.probes");
    let grid_spacing = t.parsed::<f64>("output.grid_spacing");
    let grid_spacing = t.positive("output.grid_spacing", grid_spacing);
    let pin_recorders = t.parsed::<bool>("output.pin_recorders").unwrap_or(true);
    if let Some(d) = domain {
        if receivers.iter().any(|x| *x < d.x_min || *x > d.x_max) {
            let line = t.line_of("output.receivers");
            t.issue(line, "receivers must lie within the domain width".into());
        }
        if !(receiver_depth >= 0.0 && receiver_depth < d.depth()) {
            let line = t.line_of("output.receiver_depth");
            t.issue(line, format!("receiver depth {receiver_depth} outside the domain"));
        }
        if let Some(p) = probes.iter().find(|p| !d.contains(**p)) {
            let line = t.line_of("output.probes");
            t.issue(line, format!("probe {p} lies outside the domain"));
        }
    }
    if backend == Backend::Fdm && fdm_h.is_none() && !matches!(spacing, Some(SpacingSpec::Constant { .. })) {
        t.issue(None, "fdm backend needs `fdm.h` unless the spacing is constant".into());
    }

    let unused: Vec<(usize, String)> =
        t.entries.iter().filter(|(_, e)| !e.used).map(|(k, e)| (e.line, k.clone())).collect();
    for (line, key) in unused {
        t.issue(Some(line), format!("key `{key}` does not apply to the selected model or mode"));
    }

    if !t.issues.is_empty() {
        t.issues.sort_by_key(|i| i.line.unwrap_or(0));
        return Err(Error::Validation(t.issues));
    }
    // Every required value was present and parsed if no issue was recorded.
    match (domain, velocity, spacing, source, dt, steps) {
        (Some(domain), Some(velocity), Some(spacing), Some(source), Some(dt), Some(steps)) => Ok(ScenarioConfig {
            name,
            backend,
            seed,
            domain,
            velocity,
            shepard_k,
            shepard_power,
            spacing,
            separation,
            source,
            dt,
            steps,
            cfl,
            support,
            shape,
            hyperviscosity,
            i_max,
            fdm_h,
            fdm_dt,
            output: OutputSpec {
                snapshot_times,
                receivers,
                receiver_depth,
                seismogram_stride,
                probes,
                grid_spacing,
                pin_recorders,
            },
            base_dir: PathBuf::new(),
        }),
        _ => Err(Error::Validation(vec![ConfigIssue { line: None, message: "incomplete configuration".into() }])),
    }
}
