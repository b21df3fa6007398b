//! RBF-FD Laplacian weights from Gaussian collocation over local supports.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::geom::Point;
use crate::nodes::{NeighborQuery, NodeSet};
use crate::{Error, Result};

/// Default support size (centre included).
pub const DEFAULT_SUPPORT: usize = 7;

/// Reciprocal condition estimates below this are reported as ill-conditioned.
pub const RCOND_WARN: f64 = 1e-14;

/// Gaussian radial basis `exp(-r²/σ²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBasis {
    pub shape: f64,
}

impl GaussianBasis {
    pub fn new(shape: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0) {
            return Err(Error::Config(format!("shape parameter must be positive, got {shape}")));
        }
        Ok(Self { shape })
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        (-(r * r) / (self.shape * self.shape)).exp()
    }

    /// 2D Laplacian of the basis as a function of the radius.
    #[inline]
    pub fn laplacian(&self, r: f64) -> f64 {
        let s2 = self.shape * self.shape;
        (4.0 * r * r / (s2 * s2) - 4.0 / s2) * (-(r * r) / s2).exp()
    }
}

/// How the Gaussian width is chosen per stencil.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeMode {
    /// σ in metres, identical for every stencil.
    Absolute(f64),
    /// σ equals the factor times the mean centre-to-neighbour distance.
    Relative(f64),
}

impl ShapeMode {
    pub fn basis_for(&self, center: Point, support: &[Point]) -> Result<GaussianBasis> {
        match *self {
            ShapeMode::Absolute(s) => GaussianBasis::new(s),
            ShapeMode::Relative(f) => {
                let others = support.iter().filter(|p| **p != center);
                let (sum, n) = others.fold((0.0, 0usize), |(s, n), p| (s + p.dist(center), n + 1));
                GaussianBasis::new(f * sum / n.max(1) as f64)
            }
        }
    }
}

/// Weights of one stencil plus the conditioning of its collocation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSolve {
    pub weights: Vec<f64>,
    /// Squared ratio of the smallest to largest Cholesky pivot; roughly 1/cond.
    pub rcond: f64,
    /// `‖Φw − b‖ / ‖b‖`.
    pub residual: f64,
}

impl WeightSolve {
    pub fn ill_conditioned(&self) -> bool {
        self.rcond < RCOND_WARN
    }
}

/// Solves `Φ w = b` with `Φ_kj = φ(|x_j − x_k|)` and `b_k = Δφ(|x_c − x_k|)`.
///
/// `support` must contain `center`. A Cholesky factorization is tried first;
/// if it breaks down the system goes through a fully pivoted LU. One step of
/// iterative refinement is applied either way.
pub fn compute_weights(center: Point, support: &[Point], basis: &GaussianBasis) -> Result<WeightSolve> {
    let n = support.len();
    if !support.contains(&center) {
        return Err(Error::SingularSystem { node: None, reason: "centre is not part of its support".into() });
    }
    for i in 0..n {
        for j in 0..i {
            if support[i] == support[j] {
                return Err(Error::SingularSystem {
                    node: None,
                    reason: format!("duplicate support nodes {} and {}", j, i),
                });
            }
        }
    }
    let phi = DMatrix::from_fn(n, n, |k, j| basis.eval(support[k].dist(support[j])));
    let rhs = DVector::from_fn(n, |k, _| basis.laplacian(center.dist(support[k])));

    let (w, rcond) = match phi.clone().cholesky() {
        Some(chol) => {
            let d = chol.l_dirty().diagonal();
            let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
            let rcond = (lo / hi).powi(2);
            let mut w = chol.solve(&rhs);
            let r = &rhs - &phi * &w;
            w += chol.solve(&r);
            (w, rcond)
        }
        None => {
            let lu = phi.clone().full_piv_lu();
            let mut w = lu.solve(&rhs).ok_or_else(|| Error::SingularSystem {
                node: None,
                reason: "collocation matrix is numerically singular".into(),
            })?;
            let r = &rhs - &phi * &w;
            if let Some(dw) = lu.solve(&r) {
                w += dw;
            }
            let u = lu.u().diagonal();
            let (lo, hi) = u.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
            (w, lo / hi)
        }
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { node: None, reason: "non-finite weights".into() });
    }
    let residual = (&rhs - &phi * &w).norm() / rhs.norm();
    Ok(WeightSolve { weights: w.iter().copied().collect(), rcond, residual })
}

/// One row of the discrete Laplacian.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil<'a> {
    pub center: usize,
    pub support: &'a [usize],
    pub weights: &'a [f64],
}

/// Conditioning summary gathered during assembly.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AssemblyDiagnostics {
    pub stencils: usize,
    pub ill_conditioned: usize,
    pub min_rcond: f64,
    pub max_residual: f64,
}

/// Sparse discrete Laplacian with one stencil per interior node. Boundary rows
/// are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianOperator {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    pub diagnostics: AssemblyDiagnostics,
}

impl LaplacianOperator {
    /// Builds an operator from explicit rows; `rows[i]` is `(support, weights)`
    /// of node `i`, empty for nodes without a stencil.
    pub fn from_rows(rows: Vec<(Vec<usize>, Vec<f64>)>) -> Result<Self> {
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for (support, w) in rows {
            if support.len() != w.len() {
                return Err(Error::LengthMismatch { expected: support.len(), got: w.len() });
            }
            if let Some(&bad) = support.iter().find(|&&j| j >= n) {
                return Err(Error::Config(format!("stencil references node {bad} of {n}")));
            }
            indices.extend(support);
            weights.extend(w);
            offsets.push(indices.len());
        }
        Ok(Self { offsets, indices, weights, diagnostics: AssemblyDiagnostics::default() })
    }

    /// Number of nodes (rows).
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stencil(&self, i: usize) -> Option<Stencil<'_>> {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (a < b).then(|| Stencil { center: i, support: &self.indices[a..b], weights: &self.weights[a..b] })
    }

    pub fn stencils(&self) -> impl Iterator<Item = Stencil<'_>> {
        (0..self.len()).filter_map(|i| self.stencil(i))
    }

    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.apply_into(field, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, field: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.len();
        if field.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: field.len() });
        }
        if out.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: out.len() });
        }
        out.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
            let base = c * 4096;
            for (k, o) in chunk.iter_mut().enumerate() {
                let i = base + k;
                let (a, b) = (self.offsets[i], self.offsets[i + 1]);
                let mut acc = 0.0;
                for (j, w) in self.indices[a..b].iter().zip(&self.weights[a..b]) {
                    acc += w * field[*j];
                }
                *o = acc;
            }
        });
        Ok(())
    }

    /// Debug dump as `center,neighbor,weight` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "center,neighbor,weight")?;
        for s in self.stencils() {
            for (j, wt) in s.support.iter().zip(s.weights) {
                writeln!(w, "{},{},{:.16e}", s.center, j, wt)?;
            }
        }
        Ok(())
    }
}

/// Computes a stencil for every interior node from its `n` nearest neighbours.
pub fn assemble_laplacian(
    nodes: &NodeSet,
    query: &NeighborQuery,
    shape: ShapeMode,
    n: usize,
) -> Result<LaplacianOperator> {
    if n > nodes.len() {
        return Err(Error::TooFewPoints { k: n, available: nodes.len() });
    }
    if n == 0 {
        return Err(Error::Config("support size must be positive".into()));
    }
    type Row = Option<(Vec<usize>, WeightSolve)>;
    let rows: Vec<Result<Row>> = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            if nodes.kinds[i].is_boundary() {
                return Ok(None);
            }
            let center = nodes.positions[i];
            let support = query.knn(center, n)?;
            let pts: Vec<Point> = support.iter().map(|&j| nodes.positions[j]).collect();
            let basis = shape.basis_for(center, &pts)?;
            let solve = compute_weights(center, &pts, &basis).map_err(|e| match e {
                Error::SingularSystem { reason, .. } => Error::SingularSystem { node: Some(i), reason },
                other => other,
            })?;
            Ok(Some((support, solve)))
        })
        .collect();

    let mut diag = AssemblyDiagnostics { min_rcond: f64::INFINITY, ..Default::default() };
    let mut plain = Vec::with_capacity(rows.len());
    for row in rows {
        match row? {
            Some((support, solve)) => {
                diag.stencils += 1;
                diag.ill_conditioned += usize::from(solve.ill_conditioned());
                diag.min_rcond = diag.min_rcond.min(solve.rcond);
                diag.max_residual = diag.max_residual.max(solve.residual);
                plain.push((support, solve.weights));
            }
            None => plain.push((Vec::new(), Vec::new())),
        }
    }
    if diag.ill_conditioned > 0 {
        warn!(
            "{} of {} stencils are ill-conditioned (min rcond {:e})",
            diag.ill_conditioned, diag.stencils, diag.min_rcond
        );
    }
    let mut op = LaplacianOperator::from_rows(plain)?;
    op.diagnostics = diag;
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;
    use crate::nodes::{generate_nodes, SpacingField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cross(h: f64) -> Vec<Point> {
        vec![Point::new(0.0, 0.0), Point::new(-h, 0.0), Point::new(h, 0.0), Point::new(0.0, -h), Point::new(0.0, h)]
    }

    fn five_point_error(sigma_over_h: f64) -> f64 {
        let h = 1.0;
        let w = compute_weights(Point::new(0.0, 0.0), &cross(h), &GaussianBasis::new(sigma_over_h * h).unwrap())
            .unwrap()
            .weights;
        let fd = [-4.0, 1.0, 1.0, 1.0, 1.0];
        let num: f64 = w.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum();
        num.sqrt() / fd.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn flat_limit_approaches_five_point_stencil() {
        let errs: Vec<f64> = [10.0, 30.0, 70.0].iter().map(|&s| five_point_error(s)).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-3, "{errs:?}");
    }

    #[test]
    fn flat_limit_in_one_dimension() {
        let pts = [Point::new(0.0, 0.0), Point::new(-1.0, 0.0), Point::new(1.0, 0.0)];
        let w = compute_weights(pts[0], &pts, &GaussianBasis::new(70.0).unwrap()).unwrap().weights;
        // The 2D Laplacian of a Gaussian adds the z curvature to the centre
        // weight only, so the 1D three-point weights appear as [-2, 1, 1]
        // plus a small constant-mode correction.
        assert!((w[1] - 1.0).abs() < 1e-3 && (w[2] - 1.0).abs() < 1e-3, "{w:?}");
        assert!((w[0] + 2.0).abs() < 1e-2, "{w:?}");
    }

    #[test]
    fn weights_reproduce_support_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pts: Vec<Point> =
                (0..7).map(|_| Point::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5))).collect();
            let basis = GaussianBasis::new(rng.gen_range(0.8..3.0)).unwrap();
            let sol = compute_weights(pts[0], &pts, &basis).unwrap();
            for xk in &pts {
                let applied: f64 = sol.weights.iter().zip(&pts).map(|(w, xj)| w * basis.eval(xj.dist(*xk))).sum();
                let exact = basis.laplacian(pts[0].dist(*xk));
                assert!((applied - exact).abs() <= 1e-8 * exact.abs().max(1.0 / basis.shape.powi(2)));
            }
            assert!(sol.residual < 1e-10);
        }
    }

    #[test]
    fn laplacian_of_gaussian_matches_finite_differences() {
        let b = GaussianBasis::new(1.7).unwrap();
        let f = |x: f64, z: f64| b.eval((x * x + z * z).sqrt());
        let e = 1e-3;
        for (x, z) in [(0.0, 0.0), (0.4, -0.9), (1.3, 2.0)] {
            let fd = (f(x + e, z) + f(x - e, z) + f(x, z + e) + f(x, z - e) - 4.0 * f(x, z)) / (e * e);
            let exact = b.laplacian((x * x + z * z).sqrt());
            assert!((fd - exact).abs() < 1e-5, "{fd} {exact}");
        }
    }

    #[test]
    fn degenerate_supports_are_rejected() {
        let b = GaussianBasis::new(5.0).unwrap();
        let dup = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 0.0)];
        assert!(matches!(compute_weights(dup[0], &dup, &b), Err(Error::SingularSystem { .. })));
        let off = [Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        assert!(compute_weights(Point::new(0.0, 0.0), &off, &b).is_err());
        assert!(GaussianBasis::new(0.0).is_err());
        assert!(GaussianBasis::new(f64::NAN).is_err());
    }

    #[test]
    fn relative_shape_scales_with_support() {
        let pts = cross(2.0);
        let b = ShapeMode::Relative(3.0).basis_for(pts[0], &pts).unwrap();
        assert!((b.shape - 6.0).abs() < 1e-12);
        assert_eq!(ShapeMode::Absolute(70.0).basis_for(pts[0], &pts).unwrap().shape, 70.0);
    }

    fn square_nodes(side: f64, a: f64, seed: u64) -> NodeSet {
        generate_nodes(&Rect::new(0.0, side, 0.0, side).unwrap(), &SpacingField::constant(a), seed).unwrap()
    }

    fn max_interior_error(
        nodes: &NodeSet,
        op: &LaplacianOperator,
        f: impl Fn(Point) -> f64,
        lap: impl Fn(Point) -> f64,
    ) -> f64 {
        let field: Vec<f64> = nodes.positions.iter().map(|&p| f(p)).collect();
        let out = op.apply(&field).unwrap();
        nodes
            .positions
            .iter()
            .zip(&out)
            .zip(&nodes.kinds)
            .filter(|(_, k)| !k.is_boundary())
            .map(|((p, v), _)| (v - lap(*p)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn assembled_operator_on_polynomials() {
        let nodes = square_nodes(20.0, 1.0, 3);
        let op = assemble_laplacian(&nodes, &nodes.neighbor_query(), ShapeMode::Relative(70.0), 7).unwrap();
        assert_eq!(op.diagnostics.stencils, nodes.interior_count());
        assert_eq!(op.len(), nodes.len());
        let zero = op.apply(&vec![0.0; nodes.len()]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let constant = max_interior_error(&nodes, &op, |_| 3.0, |_| 0.0);
        assert!(constant < 1e-3, "{constant}");
        let c = Point::new(10.0, 10.0);
        let quad = max_interior_error(&nodes, &op, |p| p.dist2(c), |_| 4.0);
        assert!(quad < 0.05, "{quad}");
        for s in op.stencils() {
            assert!(!nodes.kinds[s.center].is_boundary());
            assert_eq!(s.support.len(), 7);
            assert!(s.support.contains(&s.center));
        }
    }

    #[test]
    fn assembled_operator_converges_on_smooth_field() {
        let k = std::f64::consts::PI / 20.0;
        let f = move |p: Point| (k * p.x).sin() * (k * p.z).sin();
        let lap = move |p: Point| -2.0 * k * k * f(p);
        let mut errs = Vec::new();
        for a in [1.0, 0.25] {
            let nodes = square_nodes(20.0, a, 9);
            let op = assemble_laplacian(&nodes, &nodes.neighbor_query(), ShapeMode::Relative(70.0), 7).unwrap();
            let field: Vec<f64> = nodes.positions.iter().map(|&p| f(p)).collect();
            let out = op.apply(&field).unwrap();
            let (mut se, mut n) = (0.0, 0);
            for ((kind, &p), u) in nodes.kinds.iter().zip(&nodes.positions).zip(&out) {
                if !kind.is_boundary() {
                    se += (u - lap(p)).powi(2);
                    n += 1;
                }
            }
            errs.push((se / n as f64).sqrt());
        }
        // Gaussian stencils without polynomial terms saturate, so the observed
        // order on scattered nodes sits between one and two.
        let order = (errs[0] / errs[1]).log2() / 2.0;
        assert!(order >= 1.0, "errors {errs:?}, order {order}");
    }

    #[test]
    fn consistency_order_on_uniform_refinements() {
        use crate::fdm::UniformGrid;
        let pi = std::f64::consts::PI;
        let f = move |p: Point| (pi * p.x).sin() * (pi * p.z).sin();
        let errs: Vec<f64> = [10, 20, 40]
            .iter()
            .map(|&cells| {
                let h = 1.0 / cells as f64;
                let g = UniformGrid::new(cells + 1, cells + 1, h, Point::new(0.0, 0.0)).unwrap();
                let nodes = g.node_set(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap()).unwrap();
                let op = assemble_laplacian(&nodes, &nodes.neighbor_query(), ShapeMode::Relative(70.0), 5).unwrap();
                max_interior_error(&nodes, &op, f, move |p| -2.0 * pi * pi * f(p))
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.5, "errors {errs:?}, order {order}");
        }
    }

    #[test]
    fn assembly_errors() {
        let nodes = square_nodes(2.0, 1.0, 0);
        let q = nodes.neighbor_query();
        assert!(matches!(
            assemble_laplacian(&nodes, &q, ShapeMode::Absolute(5.0), nodes.len() + 1),
            Err(Error::TooFewPoints { .. })
        ));
        let op = assemble_laplacian(&nodes, &q, ShapeMode::Absolute(5.0), 5).unwrap();
        assert!(matches!(op.apply(&[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn from_rows_and_csv() {
        let op = LaplacianOperator::from_rows(vec![
            (vec![], vec![]),
            (vec![0, 1, 2], vec![1.0, -2.0, 1.0]),
            (vec![], vec![]),
        ])
        .unwrap();
        assert_eq!(op.apply(&[1.0, 4.0, 9.0]).unwrap(), vec![0.0, 2.0, 0.0]);
        let mut buf = Vec::new();
        op.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("center,neighbor,weight\n1,0,"));
        assert!(LaplacianOperator::from_rows(vec![(vec![3], vec![1.0])]).is_err());
    }
}
