//! P1 finite elements for the mixed problem
//!
//! ```text
//!     L u + n K u = 1   in the domain,
//!           u = 0       on sigma,
//!     d_nu u = kappa u   on the support part,
//! ```
//!
//! where `L` is the Laplace-Beltrami operator of the conformal metric
//! `e^{2w} delta` and `K` the sectional curvature. In two dimensions the
//! Dirichlet energy is conformally invariant, so the stiffness matrix is
//! the flat one; the metric enters through the mass matrix (`e^{2w}`),
//! the boundary mass on the Robin part (`e^{w}`) and the load.

use crate::geometry::ScalarField;
use crate::linalg::{LinalgError, SkylineCholesky, SparseSym, Triplets};
use crate::mesh::{Mesh, MeshError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("bilinear form not coercive (pivot {pivot:.3e} at row {row})")]
    NotCoercive { row: usize, pivot: f64 },
    #[error(transparent)]
    Linalg(LinalgError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeomError),
    #[error("assembly error: {0}")]
    Assembly(String),
}

impl From<LinalgError> for FemError {
    fn from(e: LinalgError) -> FemError {
        match e {
            LinalgError::NotPositiveDefinite { row, pivot } => FemError::NotCoercive { row, pivot },
            other => FemError::Linalg(other),
        }
    }
}

/// Assembled matrices of the mixed problem on a fixed mesh.
pub struct FemSystem {
    /// Flat P1 stiffness.
    pub stiffness: SparseSym,
    /// Metric mass, `int e^{2w} phi_i phi_j`.
    pub mass: SparseSym,
    /// Boundary mass on the Robin part, `int_T e^{w} phi_i phi_j`.
    pub robin_mass: SparseSym,
    /// `int e^{2w} phi_i`.
    pub load: Vec<f64>,
    /// Vertices pinned by the Dirichlet condition (on sigma, incl. gamma).
    pub dirichlet: Vec<bool>,
    /// Indices of the unconstrained vertices, ascending.
    pub free: Vec<usize>,
}

/// P1 shape gradients on a triangle with vertices `p`, and its area.
fn shape_gradients(p: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det;
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        g[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    (g, area)
}

pub fn assemble(mesh: &Mesh) -> Result<FemSystem, FemError> {
    let chart = mesh.chart();
    let nv = mesh.vertices.len();
    let mut a = Triplets::new(nv);
    let mut m = Triplets::new(nv);
    let mut b = Triplets::new(nv);
    let mut load = vec![0.0; nv];

    for t in &mesh.triangles {
        let p = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
        let (g, area) = shape_gradients(p);
        if area <= 0.0 {
            return Err(FemError::Assembly(format!("triangle {t:?} has area {area}")));
        }
        for i in 0..3 {
            for j in i..3 {
                a.push_sym(t[i], t[j], area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
            }
        }
        // edge-midpoint rule, exact for quadratics in the flat factor
        let mids = [
            [0.5 * (p[0][0] + p[1][0]), 0.5 * (p[0][1] + p[1][1])],
            [0.5 * (p[1][0] + p[2][0]), 0.5 * (p[1][1] + p[2][1])],
            [0.5 * (p[2][0] + p[0][0]), 0.5 * (p[2][1] + p[0][1])],
        ];
        let mut w2 = [0.0; 3];
        for (k, q) in mids.iter().enumerate() {
            w2[k] = chart.scale(q)?.powi(2) * area / 3.0;
        }
        // phi_i at edge midpoints: 1/2 on the two adjacent edges, 0 opposite
        for i in 0..3 {
            for j in i..3 {
                let mut val = 0.0;
                for (k, &wk) in w2.iter().enumerate() {
                    let phi_i = if k == i || k == (i + 2) % 3 { 0.5 } else { 0.0 };
                    let phi_j = if k == j || k == (j + 2) % 3 { 0.5 } else { 0.0 };
                    val += wk * phi_i * phi_j;
                }
                m.push_sym(t[i], t[j], val);
            }
            let phi_sum: f64 = (0..3)
                .map(|k| if k == i || k == (i + 2) % 3 { 0.5 * w2[k] } else { 0.0 })
                .sum();
            load[t[i]] += phi_sum;
        }
    }

    // two-point Gauss on each Robin edge with weight e^{w}
    let gauss = 0.5 / 3.0f64.sqrt();
    for e in &mesh.robin_edges {
        let (pa, pb) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
        let len = mesh.edge_length(*e);
        for &t in &[0.5 - gauss, 0.5 + gauss] {
            let q = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
            let w = chart.scale(&q)? * 0.5 * len;
            let (phi_a, phi_b) = (1.0 - t, t);
            b.push_sym(e[0], e[0], w * phi_a * phi_a);
            b.push_sym(e[1], e[1], w * phi_b * phi_b);
            b.push_sym(e[0], e[1], w * phi_a * phi_b);
        }
    }

    let mut dirichlet = vec![false; nv];
    for e in &mesh.sigma_edges {
        dirichlet[e[0]] = true;
        dirichlet[e[1]] = true;
    }
    let free = (0..nv).filter(|&v| !dirichlet[v]).collect();

    Ok(FemSystem {
        stiffness: a.to_csr(),
        mass: m.to_csr(),
        robin_mass: b.to_csr(),
        load,
        dirichlet,
        free,
    })
}

impl FemSystem {
    /// `A - nK M - kappa B_T` for the problem's bilinear form.
    pub fn operator(&self, curvature: f64, kappa: f64) -> SparseSym {
        SparseSym::combine(&[
            (1.0, &self.stiffness),
            (-2.0 * curvature, &self.mass),
            (-kappa, &self.robin_mass),
        ])
    }
}

/// Outward normal derivative (in the metric) on one sigma edge.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SigmaFlux {
    pub edge: [usize; 2],
    pub value: f64,
}

/// Discrete solution with Dirichlet-boundary flux statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionField {
    /// Vertex values; zero on the Dirichlet part.
    pub u: Vec<f64>,
    /// Normal derivative per sigma edge, in `mesh.sigma_edges` order.
    pub u_nu_sigma: Vec<SigmaFlux>,
    /// Length-weighted mean of the sigma normal derivatives.
    pub c_hat: f64,
    /// Length-weighted standard deviation over `|c_hat|`.
    pub rel_std: f64,
}

/// Length-weighted mean and relative spread of the sigma fluxes.
pub fn normal_derivative_stats(mesh: &Mesh, sol: &SolutionField) -> Result<(f64, f64), FemError> {
    if mesh.sigma_edges.is_empty() {
        return Err(FemError::Assembly("empty sigma".into()));
    }
    Ok((sol.c_hat, sol.rel_std))
}

/// Solve the mixed problem with right-hand side 1 and homogeneous data.
pub fn solve_mixed_bvp(mesh: &Mesh, kappa: f64) -> Result<SolutionField, FemError> {
    solve_with_data(mesh, kappa, |_| 1.0, |_| 0.0)
}

/// Solve `L u + nKu = f`, `u = 0` on sigma, `d_nu u = kappa u + q` on
/// the Robin part.
pub fn solve_with_data(
    mesh: &Mesh,
    kappa: f64,
    f: impl Fn([f64; 2]) -> f64,
    q: impl Fn([f64; 2]) -> f64,
) -> Result<SolutionField, FemError> {
    let chart = mesh.chart();
    let sys = assemble(mesh)?;
    let op = sys.operator(mesh.curvature, kappa).restrict(&sys.free);

    // rhs_i = -int e^{2w} f phi_i - int_T e^{w} q phi_i
    let nv = mesh.vertices.len();
    let mut rhs_full = vec![0.0; nv];
    for t in &mesh.triangles {
        let p = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
        let (_, area) = shape_gradients(p);
        let mids = [
            [0.5 * (p[0][0] + p[1][0]), 0.5 * (p[0][1] + p[1][1])],
            [0.5 * (p[1][0] + p[2][0]), 0.5 * (p[1][1] + p[2][1])],
            [0.5 * (p[2][0] + p[0][0]), 0.5 * (p[2][1] + p[0][1])],
        ];
        for (k, mid) in mids.iter().enumerate() {
            let w = chart.scale(mid)?.powi(2) * area / 3.0 * f(*mid);
            rhs_full[t[k]] -= 0.5 * w;
            rhs_full[t[(k + 1) % 3]] -= 0.5 * w;
        }
    }
    let gauss = 0.5 / 3.0f64.sqrt();
    for e in &mesh.robin_edges {
        let (pa, pb) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
        let len = mesh.edge_length(*e);
        for &t in &[0.5 - gauss, 0.5 + gauss] {
            let p = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
            let w = chart.scale(&p)? * 0.5 * len * q(p);
            rhs_full[e[0]] -= (1.0 - t) * w;
            rhs_full[e[1]] -= t * w;
        }
    }
    let rhs: Vec<f64> = sys.free.iter().map(|&v| rhs_full[v]).collect();

    let chol = SkylineCholesky::factor(&op)?;
    let sol = chol.solve_refined(&op, &rhs);

    let mut u = vec![0.0; nv];
    for (k, &v) in sys.free.iter().enumerate() {
        u[v] = sol[k];
    }
    finish_solution(mesh, u)
}

/// Compute sigma-edge normal derivatives and their statistics.
pub fn finish_solution(mesh: &Mesh, u: Vec<f64>) -> Result<SolutionField, FemError> {
    let chart = mesh.chart();
    use std::collections::HashMap;
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (ti, t) in mesh.triangles.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            owner.insert((a.min(b), a.max(b)), ti);
        }
    }
    let mut u_nu = Vec::with_capacity(mesh.sigma_edges.len());
    let mut lengths = Vec::with_capacity(mesh.sigma_edges.len());
    for e in &mesh.sigma_edges {
        let ti = *owner
            .get(&(e[0].min(e[1]), e[0].max(e[1])))
            .ok_or_else(|| FemError::Assembly(format!("sigma edge {e:?} has no triangle")))?;
        let t = mesh.triangles[ti];
        let p = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
        let (g, _) = shape_gradients(p);
        let grad = [
            u[t[0]] * g[0][0] + u[t[1]] * g[1][0] + u[t[2]] * g[2][0],
            u[t[0]] * g[0][1] + u[t[1]] * g[1][1] + u[t[2]] * g[2][1],
        ];
        let nu = mesh.edge_normal(*e);
        let mid = [
            0.5 * (mesh.vertices[e[0]][0] + mesh.vertices[e[1]][0]),
            0.5 * (mesh.vertices[e[0]][1] + mesh.vertices[e[1]][1]),
        ];
        let scale = chart.scale(&mid)?;
        u_nu.push(SigmaFlux { edge: *e, value: (grad[0] * nu[0] + grad[1] * nu[1]) / scale });
        lengths.push(scale * mesh.edge_length(*e));
    }
    let total: f64 = lengths.iter().sum();
    let (c_hat, rel_std) = if total > 0.0 {
        let mean = u_nu.iter().zip(&lengths).map(|(f, l)| f.value * l).sum::<f64>() / total;
        let var = u_nu
            .iter()
            .zip(&lengths)
            .map(|(f, l)| (f.value - mean).powi(2) * l)
            .sum::<f64>()
            / total;
        (mean, var.sqrt() / mean.abs().max(f64::MIN_POSITIVE))
    } else {
        (0.0, 0.0)
    };
    Ok(SolutionField { u, u_nu_sigma: u_nu, c_hat, rel_std })
}

/// Six-point degree-4 triangle rule (barycentric points, weights
/// normalized to sum to 1).
const QUAD4: [([f64; 3], f64); 6] = {
    const A: f64 = 0.445948490915965;
    const B: f64 = 0.091576213509771;
    const WA: f64 = 0.223381589678011;
    const WB: f64 = 0.109951743655322;
    [
        ([1.0 - 2.0 * A, A, A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([A, A, 1.0 - 2.0 * A], WA),
        ([1.0 - 2.0 * B, B, B], WB),
        ([B, B, 1.0 - 2.0 * B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
    ]
};

/// Weighted L2 error (metric volume) and flat H1-seminorm error against
/// an exact solution, by an order-4 element rule. In two dimensions the
/// H1 seminorm carries no conformal weight.
pub fn manufactured_error(
    mesh: &Mesh,
    u: &[f64],
    exact: &dyn ScalarField,
) -> Result<(f64, f64), FemError> {
    let chart = mesh.chart();
    let mut err_l2 = 0.0;
    let mut err_h1 = 0.0;
    for t in &mesh.triangles {
        let p = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
        let (g, area) = shape_gradients(p);
        let grad_h = [
            u[t[0]] * g[0][0] + u[t[1]] * g[1][0] + u[t[2]] * g[2][0],
            u[t[0]] * g[0][1] + u[t[1]] * g[1][1] + u[t[2]] * g[2][1],
        ];
        for (bary, w) in QUAD4 {
            let q = [
                bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
            ];
            let uh = bary[0] * u[t[0]] + bary[1] * u[t[1]] + bary[2] * u[t[2]];
            let diff = uh - exact.value(&q);
            err_l2 += chart.scale(&q)?.powi(2) * w * area * diff * diff;
            let ge = exact.gradient(&q);
            let dg = [grad_h[0] - ge[0], grad_h[1] - ge[1]];
            err_h1 += w * area * (dg[0] * dg[0] + dg[1] * dg[1]);
        }
    }
    Ok((err_l2.sqrt(), err_h1.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Model, SpaceForm, SupportSurface};
    use crate::mesh::{build_domain, Curve, DomainShape, DomainSpec};

    fn appendix_spec() -> DomainSpec {
        DomainSpec {
            chart: SpaceForm::hyperbolic_ball(2),
            support: SupportSurface::horosphere(),
            shape: DomainShape::TwoCurves {
                sigma: Curve::Circle { center: [0.0, 0.5], radius: 0.5 },
                robin: Curve::Circle { center: [0.0, -1.0 / 3.0], radius: 2.0 / 3.0 },
            },
            graded_corner: None,
        }
    }

    struct AppendixU;
    impl ScalarField for AppendixU {
        fn value(&self, p: &[f64]) -> f64 {
            let r2 = p[0] * p[0] + p[1] * p[1];
            (r2 - p[1]) / (1.0 - r2)
        }
        fn gradient(&self, p: &[f64]) -> Vec<f64> {
            let r2 = p[0] * p[0] + p[1] * p[1];
            let s = 1.0 - r2;
            vec![
                2.0 * p[0] / s + 2.0 * p[0] * (r2 - p[1]) / (s * s),
                (2.0 * p[1] - 1.0) / s + 2.0 * p[1] * (r2 - p[1]) / (s * s),
            ]
        }
        fn hessian(&self, _p: &[f64]) -> Vec<Vec<f64>> {
            unimplemented!("not needed here")
        }
    }

    #[test]
    fn unit_triangle_stiffness() {
        let mesh = crate::mesh::Mesh::from_raw(
            Model::Euclidean,
            0.0,
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![[1, 0]],
            vec![[2, 1], [0, 2]],
        );
        let sys = assemble(&mesh).unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((sys.stiffness.get(i, j) - expect[i][j]).abs() < 1e-14);
            }
        }
        // flat mass of the unit triangle has row sums area/3
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| sys.mass.get(i, j)).sum();
            assert!((s - 0.5 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let mesh = build_domain(&appendix_spec(), 0.08).unwrap();
        let sys = assemble(&mesh).unwrap();
        let ones = vec![1.0; mesh.vertices.len()];
        let mut r = vec![0.0; mesh.vertices.len()];
        sys.stiffness.matvec(&ones, &mut r);
        for v in r {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn appendix_solution_values_and_sign() {
        let mut mesh = build_domain(&appendix_spec(), 0.08).unwrap();
        for _ in 0..2 {
            mesh = mesh.refine();
        }
        let sol = solve_mixed_bvp(&mesh, 1.0).unwrap();
        // u < 0 inside, u <= 0 everywhere (discrete maximum principle)
        let max = sol.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max <= 1e-8, "max u = {max}");
        // u at the vertex nearest (0, 1/3) approaches -1/4
        let target = [0.0, 1.0 / 3.0];
        let (mut best, mut val) = (f64::INFINITY, 0.0);
        for (v, p) in mesh.vertices.iter().enumerate() {
            let d = (p[0] - target[0]).hypot(p[1] - target[1]);
            if d < best {
                best = d;
                val = sol.u[v];
            }
        }
        assert!((val + 0.25).abs() < 5e-3, "u near (0,1/3) = {val}");
    }

    #[test]
    fn appendix_l2_convergence_and_flux() {
        let mut mesh = build_domain(&appendix_spec(), 0.08).unwrap();
        let mut errors = Vec::new();
        for _ in 0..3 {
            mesh = mesh.refine();
            let sol = solve_mixed_bvp(&mesh, 1.0).unwrap();
            errors.push(manufactured_error(&mesh, &sol.u, &AppendixU).unwrap());
        }
        for w in errors.windows(2) {
            assert!(w[0].0 / w[1].0 >= 2.5, "errors {errors:?}");
            assert!(w[1].1 < w[0].1, "H1 errors {errors:?}");
        }
        let sol = solve_mixed_bvp(&mesh, 1.0).unwrap();
        assert!((sol.c_hat - 0.5).abs() < 0.01, "c_hat {}", sol.c_hat);
        assert!(sol.rel_std < 0.01, "rel_std {}", sol.rel_std);
    }

    #[test]
    fn oversized_robin_coefficient_detected() {
        let mesh = build_domain(&appendix_spec(), 0.06).unwrap();
        match solve_mixed_bvp(&mesh, 60.0) {
            Err(FemError::NotCoercive { .. }) => {}
            other => panic!("expected NotCoercive, got {other:?}"),
        }
    }

    #[test]
    fn solution_json_round_trip() {
        let mesh = build_domain(&appendix_spec(), 0.1).unwrap();
        let sol = solve_mixed_bvp(&mesh, 1.0).unwrap();
        let v = serde_json::to_value(&sol).unwrap();
        assert!(v.get("u").is_some() && v.get("u_nu_sigma").is_some());
        assert!(v.get("c_hat").is_some() && v.get("rel_std").is_some());
        let back: SolutionField = serde_json::from_value(v).unwrap();
        assert_eq!(back.u, sol.u);
    }
}
