//! Timestamped run directories and the files written into them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use meshwave::fdm::UniformGrid;
use meshwave::post::{difference_field, to_grid, write_grid_binary, ConvergencePoint, Seismogram, SnapshotField};
use meshwave::solver::RunArtifacts;
use meshwave::{Error, Result, ScenarioConfig};

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates `<root>/<name>/<timestamp>/`. A numeric suffix keeps runs
    /// started within the same second apart.
    pub fn create(root: &Path, name: &str) -> Result<Self> {
        let parent = root.join(name);
        fs::create_dir_all(&parent)?;
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S").to_string();
        for n in 0.. {
            let leaf = if n == 0 { stamp.clone() } else { format!("{stamp}-{n}") };
            let path = parent.join(leaf);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(Self { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        }
        unreachable!()
    }

    pub fn write_with(&self, file: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.path.join(file))?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_text(&self, file: &str, text: &str) -> Result<()> {
        fs::write(self.path.join(file), text)?;
        Ok(())
    }

    /// Verbatim copy of the scenario file plus the fully resolved settings.
    pub fn write_config(&self, original: &str, cfg: &ScenarioConfig) -> Result<()> {
        self.write_text("config.cfg", original)?;
        self.write_text("resolved.cfg", &cfg.to_text())
    }

    pub fn write_run(&self, cfg: &ScenarioConfig, run: &RunArtifacts) -> Result<()> {
        self.write_with("nodes.csv", |w| run.nodes.write_csv(w))?;
        self.write_with("seismogram.csv", |w| run.seismogram.write_csv(w))?;
        if !cfg.output.probes.is_empty() {
            self.write_with("probes.csv", |w| run.probes.write_csv(w))?;
        }
        let grid = cfg.output.grid_spacing.map(|h| UniformGrid::covering(&cfg.domain, h)).transpose()?;
        for (i, snap) in run.snapshots.iter().enumerate() {
            let stem = snapshot_stem(i, snap);
            self.write_with(&format!("{stem}.csv"), |w| snap.write_csv(w))?;
            if let Some(g) = &grid {
                let values = to_grid(snap, g)?;
                self.write_with(&format!("{stem}.mwv"), |w| write_grid_binary(w, g, &values.values))?;
            }
        }
        let mut log = run.diagnostics.log.join("\n");
        log.push('\n');
        self.write_text("run.log", &log)
    }
}

fn snapshot_stem(index: usize, snap: &SnapshotField) -> String {
    format!("snapshot_{index:02}_t{:.6}", snap.t)
}

pub fn write_convergence<W: Write>(w: &mut W, points: &[ConvergencePoint]) -> Result<()> {
    writeln!(w, "spacing,nodes,value,peak")?;
    for p in points {
        writeln!(w, "{:e},{},{:e},{:e}", p.spacing, p.nodes, p.value, p.peak)?;
    }
    Ok(())
}

/// Linear interpolation of one trace at time `t`; zero outside the record.
fn trace_at(s: &Seismogram, receiver: usize, t: f64) -> f64 {
    let k = s.times.partition_point(|&x| x <= t);
    if k == 0 || k == s.times.len() && t > s.times[k - 1] {
        return 0.0;
    }
    if k == s.times.len() {
        return s.values[k - 1][receiver];
    }
    let (t0, t1) = (s.times[k - 1], s.times[k]);
    let w = (t - t0) / (t1 - t0);
    (1.0 - w) * s.values[k - 1][receiver] + w * s.values[k][receiver]
}

/// Writes difference fields for matching snapshots and paired seismograms.
/// Returns one summary line per compared quantity.
pub fn write_comparison(dir: &RunDir, a: &RunArtifacts, b: &RunArtifacts, grid_h: f64) -> Result<Vec<String>> {
    let domain = a.nodes.domain;
    let grid = UniformGrid::covering(&domain, grid_h)?;
    let points = grid.positions();
    let mut summary = Vec::new();

    for (i, sa) in a.snapshots.iter().enumerate().skip(1) {
        let Some(sb) = b.snapshots.iter().skip(1).min_by(|x, y| (x.t - sa.t).abs().total_cmp(&(y.t - sa.t).abs()))
        else {
            break;
        };
        let ga = to_grid(sa, &grid)?;
        let gb = to_grid(sb, &grid)?;
        let diff = difference_field(&ga.values, &gb.values)?;
        let peak = ga.values.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = diff.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(*v));
        let stem = format!("difference_{:02}_t{:.6}", i, sa.t);
        dir.write_with(&format!("{stem}.csv"), |w| {
            writeln!(w, "x,z,first,second,abs_diff")?;
            for (p, ((u, v), d)) in points.iter().zip(ga.values.iter().zip(&gb.values).zip(&diff)) {
                writeln!(w, "{:e},{:e},{:e},{:e},{:e}", p.x, p.z, u, v, d)?;
            }
            Ok(())
        })?;
        summary.push(format!(
            "snapshot t = {:.6} s (second at {:.6} s): max |diff| = {:e}, relative to peak {:.3}%",
            sa.t,
            sb.t,
            worst,
            100.0 * worst / peak.max(f64::MIN_POSITIVE)
        ));
    }

    let (sa, sb) = (&a.seismogram, &b.seismogram);
    if sa.receivers != sb.receivers {
        summary.push("seismograms not paired: receiver layouts differ".into());
        return Ok(summary);
    }
    let mut worst = 0.0f64;
    dir.write_with("seismograms_paired.csv", |w| {
        writeln!(w, "t,x,first,second")?;
        for (t, row) in sa.times.iter().zip(&sa.values) {
            for (r, (&x, &u)) in sa.receivers.iter().zip(row).enumerate() {
                let v = trace_at(sb, r, *t);
                worst = worst.max((u - v).abs());
                writeln!(w, "{t:e},{x:e},{u:e},{v:e}")?;
            }
        }
        Ok(())
    })?;
    let peak = sa.peak_abs();
    summary.push(format!(
        "seismograms: max |diff| = {:e}, relative to peak {:.3}%",
        worst,
        100.0 * worst / peak.max(f64::MIN_POSITIVE)
    ));
    if peak == 0.0 {
        return Err(Error::Config("first run recorded an all-zero seismogram".into()));
    }
    Ok(summary)
}
