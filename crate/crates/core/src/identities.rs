//! The P-function apparatus: `P = g(grad u, grad u) - (2/n) u + K u^2`
//! is subharmonic for solutions of the mixed problem, satisfies the
//! weighted Pohozaev balance `int V (P - c^2) = 0`, and the master
//! identity `int V u LP = 0`; together with the boundary-Hessian and
//! umbilicity detectors these decide, at desk scale, whether a
//! configuration is overdetermined-consistent.

use crate::geometry::{GeomError, ScalarField, SpaceForm};
use crate::mesh::{boundary_polyline, Mesh, MeshError};
use crate::recovery::{recover, RecoveredField, RecoveryError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),
}

/// Reference mesh size at which the integral tolerances are calibrated.
const H_REF: f64 = 0.01;

/// Scalar residual with its scale, as emitted in reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub name: String,
    pub value: f64,
    pub normalizer: f64,
    pub relative: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Check-specific extra (e.g. violating-node fraction).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<f64>,
}

impl IdentityReport {
    pub(crate) fn new(name: &str, value: f64, normalizer: f64, tolerance: f64) -> IdentityReport {
        let relative = value / normalizer.max(f64::MIN_POSITIVE);
        IdentityReport {
            name: name.into(),
            value,
            normalizer,
            relative,
            tolerance,
            pass: relative.abs() <= tolerance,
            extra: None,
        }
    }
}

/// Integral tolerance scaled from its h = 0.01 calibration.
fn scaled_tol(base: f64, h: f64) -> f64 {
    base * (h / H_REF).max(1.0)
}

#[derive(Debug, Clone)]
pub struct PFunctionField {
    /// Centroid values, one per triangle.
    pub per_triangle: Vec<f64>,
    /// Volume-weighted nodal averages.
    pub per_node: Vec<f64>,
    /// The Neumann constant in use.
    pub c: f64,
}

/// P at triangle centroids from a P1 solution; `K` is the mesh curvature.
pub fn p_function(mesh: &Mesh, u: &[f64], c: f64) -> Result<PFunctionField, IdentityError> {
    let chart = mesh.chart();
    let k = mesh.curvature;
    let nt = mesh.triangles.len();
    let mut per_triangle = Vec::with_capacity(nt);
    let mut per_node = vec![0.0; mesh.vertices.len()];
    let mut node_weight = vec![0.0; mesh.vertices.len()];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let p = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
        let (g, area) = shape_grads(p);
        let grad = [
            u[t[0]] * g[0][0] + u[t[1]] * g[1][0] + u[t[2]] * g[2][0],
            u[t[0]] * g[0][1] + u[t[1]] * g[1][1] + u[t[2]] * g[2][1],
        ];
        let centroid = mesh.centroid(ti);
        let scale = chart.scale(&centroid)?;
        let uc = (u[t[0]] + u[t[1]] + u[t[2]]) / 3.0;
        let val = (grad[0] * grad[0] + grad[1] * grad[1]) / (scale * scale) - uc + k * uc * uc;
        per_triangle.push(val);
        for &v in t {
            per_node[v] += val * area;
            node_weight[v] += area;
        }
    }
    for (pv, w) in per_node.iter_mut().zip(&node_weight) {
        if *w > 0.0 {
            *pv /= w;
        }
    }
    Ok(PFunctionField { per_triangle, per_node, c })
}

/// P evaluated from an analytic solution at a point.
pub fn p_value_analytic(
    chart: &SpaceForm,
    field: &dyn ScalarField,
    p: &[f64],
) -> Result<f64, IdentityError> {
    let scale = chart.scale(p)?;
    let g = field.gradient(p);
    let u = field.value(p);
    Ok((g[0] * g[0] + g[1] * g[1]) / (scale * scale) - u + chart.curvature * u * u)
}

fn shape_grads(p: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        g[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    (g, 0.5 * det)
}

/// `int V (P - c^2) dvol` against `int V (|P| + c^2) dvol`, centroid
/// quadrature; `v` samples the conformal Killing potential.
pub fn pohozaev_residual(
    mesh: &Mesh,
    pf: &PFunctionField,
    v: impl Fn([f64; 2]) -> f64,
) -> Result<IdentityReport, IdentityError> {
    let chart = mesh.chart();
    let c2 = pf.c * pf.c;
    let mut value = 0.0;
    let mut normalizer = 0.0;
    for ti in 0..mesh.triangles.len() {
        let centroid = mesh.centroid(ti);
        let w = chart.scale(&centroid)?.powi(2) * mesh.triangle_area(ti);
        let pot = v(centroid);
        value += pot * (pf.per_triangle[ti] - c2) * w;
        normalizer += pot * (pf.per_triangle[ti].abs() + c2) * w;
    }
    Ok(IdentityReport::new("pohozaev", value, normalizer, scaled_tol(1e-2, mesh.h_max)))
}

/// Weak evaluation of `int V u LP dvol`: the Robin-boundary term minus
/// the bulk Dirichlet pairing, with P gradients from patch recovery.
/// In two dimensions every conformal weight cancels.
pub fn master_identity_residual(
    mesh: &Mesh,
    u: &[f64],
    pf: &PFunctionField,
    v: impl Fn([f64; 2]) -> f64,
) -> Result<IdentityReport, IdentityError> {
    let rec: RecoveredField = recover(mesh, &pf.per_node)?;
    let vu: Vec<f64> = mesh
        .vertices
        .iter()
        .zip(u)
        .map(|(&p, &ui)| v(p) * ui)
        .collect();

    let chart = mesh.chart();
    let c2 = pf.c * pf.c;
    let mut volume = 0.0;
    let mut normalizer = 0.0;
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let p = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
        let (g, _) = shape_grads(p);
        let area = mesh.triangle_area(ti);
        let grad_vu = [
            vu[t[0]] * g[0][0] + vu[t[1]] * g[1][0] + vu[t[2]] * g[2][0],
            vu[t[0]] * g[0][1] + vu[t[1]] * g[1][1] + vu[t[2]] * g[2][1],
        ];
        let grad_p = [
            (rec.gradient[t[0]][0] + rec.gradient[t[1]][0] + rec.gradient[t[2]][0]) / 3.0,
            (rec.gradient[t[0]][1] + rec.gradient[t[1]][1] + rec.gradient[t[2]][1]) / 3.0,
        ];
        let term = (grad_vu[0] * grad_p[0] + grad_vu[1] * grad_p[1]) * area;
        volume += term;
        // the natural problem scale, as in the Pohozaev normalizer
        let centroid = mesh.centroid(ti);
        normalizer += v(centroid)
            * (pf.per_triangle[ti].abs() + c2)
            * chart.scale(&centroid)?.powi(2)
            * area;
    }

    let mut boundary = 0.0;
    for e in &mesh.robin_edges {
        let nu = mesh.edge_normal(*e);
        let len = mesh.edge_length(*e);
        let grad_p = [
            0.5 * (rec.gradient[e[0]][0] + rec.gradient[e[1]][0]),
            0.5 * (rec.gradient[e[0]][1] + rec.gradient[e[1]][1]),
        ];
        let w_mid = 0.5 * (vu[e[0]] + vu[e[1]]);
        let term = w_mid * (grad_p[0] * nu[0] + grad_p[1] * nu[1]) * len;
        boundary += term;
    }

    let value = boundary - volume;
    Ok(IdentityReport::new("master_identity", value, normalizer, scaled_tol(2e-2, mesh.h_max)))
}

/// Calibration constant for the subharmonicity tolerance `C * h`,
/// fixed so the exact two-horosphere solution (`LP = 0`) passes.
pub const SUBHARMONICITY_C: f64 = 3.0;

/// Patch radius for the wide quadratic fits used by the subharmonicity
/// check, as a multiple of `sqrt(h)`. With `H ~ sqrt(h)` both the fit
/// bias `O(H^2)` and the amplified data noise `O(h^2 / H^2)` are `O(h)`,
/// matching the `C * h` tolerance; node-sized patches would leave an
/// `O(1)` noise floor in the second derivatives.
const SUBHARMONICITY_PATCH: f64 = 0.5;

/// Discrete `LP`, from a quadratic fit of nodal P over wide patches,
/// must not dip below `-C h` at any node deeper than one patch radius
/// from the boundary (closer in, the one-sided fit is unreliable).
pub fn subharmonicity_check(mesh: &Mesh, pf: &PFunctionField) -> Result<IdentityReport, IdentityError> {
    let chart = mesh.chart();
    let radius = SUBHARMONICITY_PATCH * mesh.h_max.sqrt();
    let mut on_boundary = vec![false; mesh.vertices.len()];
    for e in mesh.sigma_edges.iter().chain(&mesh.robin_edges) {
        on_boundary[e[0]] = true;
        on_boundary[e[1]] = true;
    }
    let boundary_pts: Vec<[f64; 2]> = (0..mesh.vertices.len())
        .filter(|&i| on_boundary[i])
        .map(|i| mesh.vertices[i])
        .collect();
    let boundary_dist = |p: [f64; 2]| {
        boundary_pts
            .iter()
            .map(|q| (q[0] - p[0]).hypot(q[1] - p[1]))
            .fold(f64::INFINITY, f64::min)
    };

    let mut adj = vec![Vec::new(); mesh.vertices.len()];
    for t in &mesh.triangles {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            if !adj[a].contains(&b) {
                adj[a].push(b);
            }
            if !adj[b].contains(&a) {
                adj[b].push(a);
            }
        }
    }

    let tol_h = SUBHARMONICITY_C * mesh.h_max;
    let mut min_lap = f64::INFINITY;
    let mut interior = 0usize;
    let mut violating = 0usize;
    let mut failed = 0usize;
    for v in 0..mesh.vertices.len() {
        let p0 = mesh.vertices[v];
        if on_boundary[v] || boundary_dist(p0) <= radius {
            continue;
        }
        // breadth-first patch of all nodes within the fit radius
        let mut seen = std::collections::HashSet::from([v]);
        let mut frontier = vec![v];
        let mut patch = vec![v];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &a in &frontier {
                for &b in &adj[a] {
                    if seen.insert(b)
                        && (mesh.vertices[b][0] - p0[0]).hypot(mesh.vertices[b][1] - p0[1])
                            <= radius
                    {
                        next.push(b);
                        patch.push(b);
                    }
                }
            }
            frontier = next;
        }
        if patch.len() < 8 {
            failed += 1;
            continue;
        }
        let m = patch.len();
        let mut a = nalgebra::DMatrix::<f64>::zeros(m, 6);
        let mut b = nalgebra::DVector::<f64>::zeros(m);
        for (r, &w) in patch.iter().enumerate() {
            let q = mesh.vertices[w];
            let dx = (q[0] - p0[0]) / radius;
            let dy = (q[1] - p0[1]) / radius;
            a[(r, 0)] = 1.0;
            a[(r, 1)] = dx;
            a[(r, 2)] = dy;
            a[(r, 3)] = 0.5 * dx * dx;
            a[(r, 4)] = dx * dy;
            a[(r, 5)] = 0.5 * dy * dy;
            b[r] = pf.per_node[w];
        }
        let svd = a.svd(true, true);
        let rank_tol = 1e-10 * svd.singular_values[0].max(f64::MIN_POSITIVE);
        if svd.singular_values.iter().filter(|&&s| s > rank_tol).count() < 6 {
            failed += 1;
            continue;
        }
        let coef = svd.solve(&b, rank_tol).expect("svd solve");
        interior += 1;
        let scale = chart.scale(&p0)?;
        let lap = (coef[3] + coef[5]) / (radius * radius) / (scale * scale);
        min_lap = min_lap.min(lap);
        if lap < -tol_h {
            violating += 1;
        }
    }
    if interior == 0 {
        return Err(IdentityError::DegenerateCurve(
            "no interior nodes deep enough for the subharmonicity patches".into(),
        ));
    }
    if failed as f64 > 0.01 * (interior + failed) as f64 {
        return Err(RecoveryError::RecoveryFailure { failed, total: interior + failed }.into());
    }
    let mut report =
        IdentityReport::new("subharmonicity", (-min_lap).max(0.0), 1.0, tol_h);
    report.extra = Some(violating as f64 / interior as f64);
    Ok(report)
}

/// Max over Robin-edge midpoints of the normal-tangential covariant
/// Hessian component, relative to the full Hessian norm; analytic
/// derivatives.
pub fn boundary_hessian_defect_analytic(
    mesh: &Mesh,
    field: &dyn ScalarField,
) -> Result<IdentityReport, IdentityError> {
    let chart = mesh.chart();
    let mut worst = 0.0f64;
    for e in &mesh.robin_edges {
        let (a, b) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let g = field.gradient(&mid);
        let h = field.hessian(&mid);
        let d = hessian_mixed_ratio(&chart, mesh, *e, &mid, &g, &h)?;
        worst = worst.max(d);
    }
    Ok(IdentityReport::new("boundary_hessian", worst, 1.0, 1e-10))
}

/// Same defect from patch-recovered derivatives of a discrete solution;
/// `tolerance` is caller-supplied (the defect only decays, it has no
/// absolute scale).
pub fn boundary_hessian_defect(
    mesh: &Mesh,
    u: &[f64],
    tolerance: f64,
) -> Result<IdentityReport, IdentityError> {
    let chart = mesh.chart();
    let rec = recover(mesh, u)?;
    let mut worst = 0.0f64;
    for e in &mesh.robin_edges {
        let (a, b) = (mesh.vertices[e[0]], mesh.vertices[e[1]]);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let g = vec![
            0.5 * (rec.gradient[e[0]][0] + rec.gradient[e[1]][0]),
            0.5 * (rec.gradient[e[0]][1] + rec.gradient[e[1]][1]),
        ];
        let h: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                (0..2)
                    .map(|j| 0.5 * (rec.hessian[e[0]][i][j] + rec.hessian[e[1]][i][j]))
                    .collect()
            })
            .collect();
        let d = hessian_mixed_ratio(&chart, mesh, *e, &mid, &g, &h)?;
        worst = worst.max(d);
    }
    Ok(IdentityReport::new("boundary_hessian", worst, 1.0, tolerance))
}

/// `|H(N, t)| / ||H||_F` for the covariant Hessian at an edge midpoint.
fn hessian_mixed_ratio(
    chart: &SpaceForm,
    mesh: &Mesh,
    edge: [usize; 2],
    mid: &[f64; 2],
    grad: &[f64],
    hess: &[Vec<f64>],
) -> Result<f64, IdentityError> {
    let cov = chart.covariant_hessian(mid, grad, hess)?;
    let nu = mesh.edge_normal(edge);
    let tang = [-nu[1], nu[0]];
    let mut mixed = 0.0;
    let mut frob = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            mixed += nu[i] * cov[i][j] * tang[j];
            frob += cov[i][j] * cov[i][j];
        }
    }
    Ok(mixed.abs() / frob.sqrt().max(f64::MIN_POSITIVE))
}

/// Flat curvature of the circumscribed circle of three points, signed
/// positive when the curve bends away from `outward`.
pub fn circumcircle_curvature(
    a: [f64; 2],
    b: [f64; 2],
    c: [f64; 2],
    outward: [f64; 2],
) -> f64 {
    let d = 2.0 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
    if d.abs() < 1e-12 {
        // collinear window: the flat geodesic through the points
        return 0.0;
    }
    let a2 = a[0] * a[0] + a[1] * a[1];
    let b2 = b[0] * b[0] + b[1] * b[1];
    let c2 = c[0] * c[0] + c[1] * c[1];
    let ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d;
    let uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d;
    let r = (b[0] - ux).hypot(b[1] - uy);
    let side = (ux - b[0]) * outward[0] + (uy - b[1]) * outward[1];
    if side < 0.0 {
        1.0 / r
    } else {
        -1.0 / r
    }
}

/// Max relative deviation of the hyperbolic curvature of the sigma
/// polyline from the umbilical value `1/(2c)`.
pub fn umbilicity_defect(mesh: &Mesh, c: f64) -> Result<IdentityReport, IdentityError> {
    assert!(c > 0.0);
    let chart = mesh.chart();
    let (chain, closed) = boundary_polyline(&mesh.sigma_edges)?;
    if chain.len() < 5 {
        return Err(IdentityError::DegenerateCurve("sigma polyline too short".into()));
    }
    // outward normal at a vertex from its incident tagged edges
    let mut normal = vec![[0.0f64; 2]; mesh.vertices.len()];
    for e in &mesh.sigma_edges {
        let n = mesh.edge_normal(*e);
        for &v in e {
            normal[v][0] += n[0];
            normal[v][1] += n[1];
        }
    }
    let target = 1.0 / (2.0 * c);
    let mut worst = 0.0f64;
    let m = chain.len();
    let idxs: Vec<usize> = if closed { (0..m).collect() } else { (1..m - 1).collect() };
    for i in idxs {
        let (a, b, cc) = (
            mesh.vertices[chain[(i + m - 1) % m]],
            mesh.vertices[chain[i]],
            mesh.vertices[chain[(i + 1) % m]],
        );
        let mut n = normal[chain[i]];
        let len = n[0].hypot(n[1]).max(f64::MIN_POSITIVE);
        n = [n[0] / len, n[1] / len];
        let k_flat = circumcircle_curvature(a, b, cc, n);
        let k_metric = chart.curvature_transform(k_flat, &n, &b)?;
        worst = worst.max((k_metric - target).abs());
    }
    Ok(IdentityReport::new("umbilicity", worst, target, 2e-2))
}
