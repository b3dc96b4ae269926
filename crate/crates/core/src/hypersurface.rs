//! Discrete free-boundary curves in the conformal charts: higher-order
//! mean curvatures, Newton-tensor algebra (dimension-generic), the
//! Minkowski formula, the Heintze-Karcher-Ros gap, and Alexandrov-type
//! classification by curvature constancy.

use crate::geometry::{killing_pair, GeomError, Model, SpaceForm, SupportSurface};
use crate::identities::{circumcircle_curvature, IdentityReport};
use crate::mesh::{Curve, Mesh, MeshError};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HypersurfaceError {
    #[error("polyline needs at least {need} vertices, got {got}")]
    TooFewVertices { need: usize, got: usize },
    #[error("repeated consecutive vertex at index {0}")]
    RepeatedPoints(usize),
    #[error("open-curve endpoint {point:?} off the support level set by {defect:e}")]
    EndpointOffSupport { point: [f64; 2], defect: f64 },
    #[error("Newton tensor index {r} out of range for {size}x{size} shape operator")]
    BadIndex { r: usize, size: usize },
    #[error("shape operator must be symmetric; asymmetry {0:e}")]
    NotSymmetric(f64),
    #[error("mean curvature H1 = {h1} <= 0 at vertex {vertex}")]
    NonpositiveMeanCurvature { vertex: usize, h1: f64 },
    #[error("bad classification mode: {0}")]
    BadMode(String),
    #[error("polyline JSON: {0}")]
    BadPolyline(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Tolerance on the free-boundary contact angle: deviations beyond 2
/// degrees from orthogonal are flagged, never silently accepted.
pub const ORTHOGONALITY_TOL_DEG: f64 = 2.0;

/// Quadrature tolerance for the curve/volume integral comparisons.
pub const QUADRATURE_TOL: f64 = 1e-2;

const SUPPORT_LEVEL_TOL: f64 = 1e-9;

/// An oriented polyline in model coordinates. Vertices run
/// counterclockwise around the enclosed domain (the domain lies to the
/// left of travel), so the outward flat unit normal at each vertex is
/// the tangent rotated by -90 degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteHypersurface {
    pub model: Model,
    pub vertices: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 2]>,
    pub closed: bool,
    pub support: Option<SupportSurface>,
}

fn normalize(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]).max(f64::MIN_POSITIVE);
    [v[0] / n, v[1] / n]
}

fn circumcenter(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 2]> {
    let d = 2.0 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
    if d.abs() < 1e-12 {
        return None;
    }
    let a2 = a[0] * a[0] + a[1] * a[1];
    let b2 = b[0] * b[0] + b[1] * b[1];
    let c2 = c[0] * c[0] + c[1] * c[1];
    Some([
        (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d,
        (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d,
    ])
}

impl DiscreteHypersurface {
    pub fn new(
        model: Model,
        mut vertices: Vec<[f64; 2]>,
        closed: bool,
        support: Option<SupportSurface>,
    ) -> Result<Self, HypersurfaceError> {
        if vertices.len() < 5 {
            return Err(HypersurfaceError::TooFewVertices { need: 5, got: vertices.len() });
        }
        for i in 1..vertices.len() {
            let (a, b) = (vertices[i - 1], vertices[i]);
            if (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-14 {
                return Err(HypersurfaceError::RepeatedPoints(i));
            }
        }
        if closed {
            // counterclockwise orientation; flip when handed a clockwise loop
            let mut area2 = 0.0;
            for i in 0..vertices.len() {
                let a = vertices[i];
                let b = vertices[(i + 1) % vertices.len()];
                area2 += a[0] * b[1] - b[0] * a[1];
            }
            if area2 < 0.0 {
                vertices.reverse();
            }
        } else if let Some(ref sup) = support {
            let chart = chart_for(model);
            let curve = Curve::from_support(sup, &chart)?;
            for &p in [vertices[0], *vertices.last().unwrap()].iter() {
                let defect = curve.signed(p).abs();
                if defect > SUPPORT_LEVEL_TOL {
                    return Err(HypersurfaceError::EndpointOffSupport { point: p, defect });
                }
            }
        }
        let mut normals = polyline_normals(&vertices, closed);
        if !closed {
            // the one-sided segment normal at an endpoint is off by half
            // a turning angle; the endpoint window's circumcircle gives
            // the unbiased direction
            let m = vertices.len();
            for (v, w) in [(0usize, [0usize, 1, 2]), (m - 1, [m - 3, m - 2, m - 1])] {
                if let Some(center) = circumcenter(vertices[w[0]], vertices[w[1]], vertices[w[2]]) {
                    let p = vertices[v];
                    let mut dir = normalize([p[0] - center[0], p[1] - center[1]]);
                    if dir[0] * normals[v][0] + dir[1] * normals[v][1] < 0.0 {
                        dir = [-dir[0], -dir[1]];
                    }
                    normals[v] = dir;
                }
            }
        }
        Ok(DiscreteHypersurface { model, vertices, normals, closed, support })
    }

    /// Closed circle, sampled counterclockwise.
    pub fn circle(
        model: Model,
        center: [f64; 2],
        radius: f64,
        segments: usize,
    ) -> Result<Self, HypersurfaceError> {
        let vertices = (0..segments)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            })
            .collect();
        Self::new(model, vertices, true, None)
    }

    /// Open circular arc from angle `a0` counterclockwise to `a1`, with a
    /// radial perturbation `bump(theta)` (relative), free-boundary on
    /// `support`.
    pub fn arc(
        model: Model,
        center: [f64; 2],
        radius: f64,
        a0: f64,
        a1: f64,
        segments: usize,
        support: SupportSurface,
        bump: impl Fn(f64) -> f64,
    ) -> Result<Self, HypersurfaceError> {
        let vertices = (0..=segments)
            .map(|i| {
                let t = a0 + (a1 - a0) * i as f64 / segments as f64;
                let r = radius * (1.0 + bump(t));
                [center[0] + r * t.cos(), center[1] + r * t.sin()]
            })
            .collect();
        Self::new(model, vertices, false, Some(support))
    }

    pub fn chart(&self) -> SpaceForm {
        chart_for(self.model)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "model": self.model,
            "vertices": self.vertices,
            "closed": self.closed,
            "support": self.support,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, HypersurfaceError> {
        let bad = |m: &str| HypersurfaceError::BadPolyline(m.into());
        let model: Model = serde_json::from_value(v.get("model").cloned().ok_or_else(|| bad("missing model"))?)
            .map_err(|e| bad(&e.to_string()))?;
        let vertices: Vec<[f64; 2]> =
            serde_json::from_value(v.get("vertices").cloned().ok_or_else(|| bad("missing vertices"))?)
                .map_err(|e| bad(&e.to_string()))?;
        let closed = v.get("closed").and_then(|c| c.as_bool()).ok_or_else(|| bad("missing closed"))?;
        let support: Option<SupportSurface> = match v.get("support") {
            None | Some(serde_json::Value::Null) => None,
            Some(s) => Some(serde_json::from_value(s.clone()).map_err(|e| bad(&e.to_string()))?),
        };
        Self::new(model, vertices, closed, support)
    }

    fn segment_count(&self) -> usize {
        if self.closed {
            self.vertices.len()
        } else {
            self.vertices.len() - 1
        }
    }

    fn segment(&self, s: usize) -> ([f64; 2], [f64; 2]) {
        let a = self.vertices[s];
        let b = self.vertices[(s + 1) % self.vertices.len()];
        (a, b)
    }
}

fn chart_for(model: Model) -> SpaceForm {
    match model {
        Model::HalfSpace => SpaceForm::hyperbolic_half_space(2),
        Model::PoincareBall => SpaceForm::hyperbolic_ball(2),
        Model::StereographicSphere => SpaceForm::spherical(2),
        Model::Euclidean => SpaceForm::new(0.0, 2, Model::Euclidean).expect("euclidean chart"),
    }
}

/// Outward flat unit normal per vertex: tangent rotated by -90 degrees,
/// adjacent-segment averaged at interior vertices.
fn polyline_normals(vertices: &[[f64; 2]], closed: bool) -> Vec<[f64; 2]> {
    let m = vertices.len();
    let seg_normal = |a: [f64; 2], b: [f64; 2]| normalize([b[1] - a[1], -(b[0] - a[0])]);
    let mut normals = Vec::with_capacity(m);
    for i in 0..m {
        let prev = if i > 0 {
            Some(seg_normal(vertices[i - 1], vertices[i]))
        } else if closed {
            Some(seg_normal(vertices[m - 1], vertices[0]))
        } else {
            None
        };
        let next = if i + 1 < m {
            Some(seg_normal(vertices[i], vertices[i + 1]))
        } else if closed {
            Some(seg_normal(vertices[m - 1], vertices[0]))
        } else {
            None
        };
        let n = match (prev, next) {
            (Some(p), Some(q)) => normalize([p[0] + q[0], p[1] + q[1]]),
            (Some(p), None) => p,
            (None, Some(q)) => q,
            (None, None) => unreachable!("polyline has >= 2 vertices"),
        };
        normals.push(n);
    }
    normals
}

/// Per-vertex principal curvatures and the symmetric functions built
/// from them. Curves carry a single principal curvature; longer lists
/// may be supplied directly for the dimension-generic algebra.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureData {
    /// principal curvatures per vertex, each list of length n-1
    pub principal: Vec<Vec<f64>>,
    /// S_r per vertex, r = 0..=n-1 (S_0 = 1)
    pub s: Vec<Vec<f64>>,
    /// normalized H_r = S_r / binom(n-1, r) per vertex; H_0 = 1
    pub h: Vec<Vec<f64>>,
}

fn binom(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out
}

/// Elementary symmetric polynomials e_0..e_m of the inputs.
fn elementary_symmetric(kappa: &[f64]) -> Vec<f64> {
    let m = kappa.len();
    let mut e = vec![0.0; m + 1];
    e[0] = 1.0;
    for &k in kappa {
        for r in (1..=m).rev() {
            e[r] += k * e[r - 1];
        }
    }
    e
}

impl CurvatureData {
    pub fn from_lists(principal: Vec<Vec<f64>>) -> Self {
        let s: Vec<Vec<f64>> = principal.iter().map(|k| elementary_symmetric(k)).collect();
        let h = s
            .iter()
            .zip(&principal)
            .map(|(sv, kv)| {
                let m = kv.len();
                sv.iter().enumerate().map(|(r, &srv)| srv / binom(m, r)).collect()
            })
            .collect();
        CurvatureData { principal, s, h }
    }

    /// H_r at a vertex; H_0 = 1.
    pub fn h_r(&self, vertex: usize, r: usize) -> f64 {
        self.h[vertex][r]
    }
}

/// Per-vertex curvature of a discrete curve: flat circumscribed-circle
/// curvature of each 3-vertex window (endpoint vertices borrow the
/// nearest full window), mapped into the chart metric.
pub fn principal_curvatures(
    surface: &DiscreteHypersurface,
    chart: &SpaceForm,
) -> Result<CurvatureData, HypersurfaceError> {
    let m = surface.vertices.len();
    let window = |i: isize| -> [f64; 2] {
        let idx = if surface.closed {
            i.rem_euclid(m as isize) as usize
        } else {
            i.clamp(0, m as isize - 1) as usize
        };
        surface.vertices[idx]
    };
    let mut lists = Vec::with_capacity(m);
    for v in 0..m {
        // clamp open-curve endpoint windows to the first/last full triple
        let c = if surface.closed {
            v as isize
        } else {
            (v as isize).clamp(1, m as isize - 2)
        };
        let k_flat = circumcircle_curvature(
            window(c - 1),
            window(c),
            window(c + 1),
            surface.normals[v],
        );
        let k = chart.curvature_transform(k_flat, &surface.normals[v], &surface.vertices[v])?;
        lists.push(vec![k]);
    }
    Ok(CurvatureData::from_lists(lists))
}

/// Newton tensor T_r of a shape operator together with its traces and
/// the relative defects of the four algebraic identities they satisfy:
/// trace(T_r) = (n-1-r) S_r, trace(T_r h) = (r+1) S_{r+1},
/// trace(T_r h^2) = S_1 S_{r+1} - (r+2) S_{r+2}, and the recursion
/// closure T_{n-1} = S_{n-1} I - h T_{n-2} = 0 (Cayley-Hamilton).
#[derive(Debug, Clone)]
pub struct NewtonTraces {
    pub tensor: DMatrix<f64>,
    pub trace: f64,
    pub trace_h: f64,
    pub trace_h2: f64,
    /// S_0..S_{n-1} of the shape operator
    pub s: Vec<f64>,
    /// relative defects of the four identities above
    pub defects: [f64; 4],
}

pub fn newton_tensor(h: &DMatrix<f64>, r: usize) -> Result<NewtonTraces, HypersurfaceError> {
    let m = h.nrows();
    if h.ncols() != m || m == 0 {
        return Err(HypersurfaceError::BadIndex { r, size: m });
    }
    let asym = (h - h.transpose()).norm();
    if asym > 1e-12 * h.norm().max(1.0) {
        return Err(HypersurfaceError::NotSymmetric(asym));
    }
    if r + 1 > m {
        return Err(HypersurfaceError::BadIndex { r, size: m });
    }
    let eig = h.clone().symmetric_eigen();
    let kappa: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut s = elementary_symmetric(&kappa);
    s.push(0.0); // S_{m+1} = 0 closes the trace(T_r h^2) identity at r = m-1
    let kmax = kappa.iter().fold(1.0f64, |a, &k| a.max(k.abs()));

    // T_0 = I, T_j = S_j I - h T_{j-1}
    let mut t = DMatrix::<f64>::identity(m, m);
    for j in 1..=r {
        t = DMatrix::<f64>::identity(m, m) * s[j] - h * t;
    }

    let trace = t.trace();
    let trace_h = (h * &t).trace();
    let trace_h2 = (h * h * &t).trace();
    let rel = |lhs: f64, rhs: f64, scale: f64| (lhs - rhs).abs() / scale.max(1e-300);

    let d0 = rel(trace, (m - r) as f64 * s[r], (m as f64) * kmax.powi(r as i32));
    let d1 = rel(trace_h, (r + 1) as f64 * s[r + 1], (m as f64) * kmax.powi(r as i32 + 1));
    let d2 = rel(
        trace_h2,
        s[1] * s[r + 1] - (r + 2) as f64 * s[r + 2],
        (m as f64) * kmax.powi(r as i32 + 2),
    );
    // Cayley-Hamilton closure, independent of r
    let mut tm = DMatrix::<f64>::identity(m, m);
    for j in 1..=m {
        tm = DMatrix::<f64>::identity(m, m) * s[j] - h * tm;
    }
    let d3 = tm.norm() / ((m as f64) * kmax.powi(m as i32)).max(1e-300);

    Ok(NewtonTraces { tensor: t, trace, trace_h, trace_h2, s, defects: [d0, d1, d2, d3] })
}

/// Outcome of the Minkowski balance: the residual report plus the
/// measured free-boundary contact deviation (degrees from orthogonal;
/// `None` for closed curves).
#[derive(Debug, Clone)]
pub struct MinkowskiResult {
    pub report: IdentityReport,
    pub contact_deviation_deg: Option<f64>,
    pub orthogonal: bool,
}

/// `int H_{k-1} V dA - int H_k g(X, nu) dA` by per-segment midpoint
/// quadrature in the chart metric. For a non-orthogonal free boundary
/// the balance is still computed, but the contact deviation is reported
/// so the caller knows the formula's hypothesis failed.
pub fn minkowski_residual(
    surface: &DiscreteHypersurface,
    chart: &SpaceForm,
    support: &SupportSurface,
    k: usize,
) -> Result<MinkowskiResult, HypersurfaceError> {
    let data = principal_curvatures(surface, chart)?;
    let nmax = data.principal[0].len(); // n-1 curvatures per vertex
    if k == 0 || k > nmax {
        return Err(HypersurfaceError::BadIndex { r: k, size: nmax });
    }

    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for sgm in 0..surface.segment_count() {
        let (a, b) = surface.segment(sgm);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let nu = normalize([b[1] - a[1], -(b[0] - a[0])]);
        let scale = chart.scale(&mid)?;
        let kd = killing_pair(support, chart, &mid)?;
        let j = (sgm + 1) % surface.vertices.len();
        let hk1 = 0.5 * (data.h_r(sgm, k - 1) + data.h_r(j, k - 1));
        let hk = 0.5 * (data.h_r(sgm, k) + data.h_r(j, k));
        // dA = scale * ds ; g(X, nu) = scale * <X, nu_flat>
        lhs += hk1 * kd.v * scale * len;
        rhs += hk * scale * (kd.x[0] * nu[0] + kd.x[1] * nu[1]) * scale * len;
    }

    let mut deviation = None;
    let mut orthogonal = true;
    if !surface.closed {
        if let Some(ref sup) = surface.support {
            let curve = Curve::from_support(sup, chart)?;
            let mut worst = 0.0f64;
            for (p, q) in [
                (surface.vertices[0], surface.vertices[1]),
                (
                    surface.vertices[surface.vertices.len() - 1],
                    surface.vertices[surface.vertices.len() - 2],
                ),
            ] {
                let t = normalize([q[0] - p[0], q[1] - p[1]]);
                let sn = curve.outward_normal(p);
                // orthogonal contact means the curve leaves along the
                // support normal
                let dev = (t[0] * sn[0] + t[1] * sn[1]).abs().min(1.0).acos().to_degrees();
                worst = worst.max(dev);
            }
            deviation = Some(worst);
            orthogonal = worst <= ORTHOGONALITY_TOL_DEG;
        }
    }

    let report = IdentityReport::new("minkowski", lhs - rhs, lhs.abs() + rhs.abs(), QUADRATURE_TOL);
    Ok(MinkowskiResult { report, contact_deviation_deg: deviation, orthogonal })
}

/// Heintze-Karcher-Ros gap `int V/H_1 dA - int n V dvol` over the
/// enclosed mesh; nonnegative, zero exactly for orthogonal umbilical
/// caps.
pub fn hkr_gap(
    surface: &DiscreteHypersurface,
    enclosed: &Mesh,
    chart: &SpaceForm,
) -> Result<IdentityReport, HypersurfaceError> {
    let data = principal_curvatures(surface, chart)?;
    for (v, h) in data.h.iter().enumerate() {
        if h[1] <= 0.0 {
            return Err(HypersurfaceError::NonpositiveMeanCurvature { vertex: v, h1: h[1] });
        }
    }

    let mut lhs = 0.0;
    for sgm in 0..surface.segment_count() {
        let (a, b) = surface.segment(sgm);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let scale = chart.scale(&mid)?;
        let j = (sgm + 1) % surface.vertices.len();
        let h1 = 0.5 * (data.h_r(sgm, 1) + data.h_r(j, 1));
        // V = scale in the half-space chart; dA = scale * ds
        lhs += scale / h1 * scale * len;
    }

    let mut rhs = 0.0;
    for t in 0..enclosed.triangles.len() {
        let c = enclosed.centroid(t);
        let scale = chart.scale(&c)?;
        rhs += 2.0 * scale * scale * scale * enclosed.triangle_area(t);
    }

    Ok(IdentityReport::new("hkr_gap", lhs - rhs, rhs.abs(), QUADRATURE_TOL))
}

/// LHS of the HKR chain for umbilical caps: `int g(X, nu) dA`, which
/// must agree with `int V/H_1 dA` when the cap is umbilical.
pub fn killing_flux(
    surface: &DiscreteHypersurface,
    chart: &SpaceForm,
    support: &SupportSurface,
) -> Result<f64, HypersurfaceError> {
    let mut out = 0.0;
    for sgm in 0..surface.segment_count() {
        let (a, b) = surface.segment(sgm);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let nu = normalize([b[1] - a[1], -(b[0] - a[0])]);
        let scale = chart.scale(&mid)?;
        let kd = killing_pair(support, chart, &mid)?;
        out += scale * (kd.x[0] * nu[0] + kd.x[1] * nu[1]) * scale * len;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlexandrovMode {
    /// constancy of H_k along the curve
    ConstantHk(usize),
    /// constancy of H_k / H_l with H_l > 0
    Quotient(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ConsistentWithUmbilical,
    Inconsistent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    /// coefficient of variation of the tracked quantity along the curve
    pub cv: f64,
    /// worst violation of the Newton-MacLaurin chain across vertices
    pub maclaurin_defect: f64,
    /// vertices where the chain holds with equality (umbilical points)
    pub umbilical_flags: Vec<bool>,
}

const CV_UMBILICAL: f64 = 1e-2;

/// Coefficient of variation of H_k (or H_k/H_l) along the curve, plus a
/// per-vertex Newton-MacLaurin chain check H_r^{1/r} <= H_{r-1}^{1/(r-1)}.
pub fn alexandrov_classify(
    data: &CurvatureData,
    mode: AlexandrovMode,
) -> Result<Classification, HypersurfaceError> {
    let nmax = data.principal[0].len();
    let values: Vec<f64> = match mode {
        AlexandrovMode::ConstantHk(k) => {
            if k == 0 || k > nmax {
                return Err(HypersurfaceError::BadMode(format!("H_{k} undefined for n-1 = {nmax}")));
            }
            (0..data.h.len()).map(|v| data.h_r(v, k)).collect()
        }
        AlexandrovMode::Quotient(k, l) => {
            if l >= k || k > nmax {
                return Err(HypersurfaceError::BadMode(format!(
                    "quotient H_{k}/H_{l} needs l < k <= {nmax}"
                )));
            }
            let mut out = Vec::with_capacity(data.h.len());
            for v in 0..data.h.len() {
                let hl = data.h_r(v, l);
                if hl <= 0.0 {
                    return Err(HypersurfaceError::NonpositiveMeanCurvature { vertex: v, h1: hl });
                }
                out.push(data.h_r(v, k) / hl);
            }
            out
        }
    };

    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    let cv = var.sqrt() / mean.abs().max(f64::MIN_POSITIVE);

    // Newton-MacLaurin chain H_r^{1/r} <= H_{r-1}^{1/(r-1)}, equality
    // exactly at umbilical points
    let mut maclaurin_defect = 0.0f64;
    let mut umbilical_flags = Vec::with_capacity(data.h.len());
    for hv in &data.h {
        let mut equality = true;
        for r in 2..hv.len() {
            if hv[r] < 0.0 || hv[r - 1] <= 0.0 {
                equality = false;
                continue;
            }
            let lhs = hv[r].powf(1.0 / r as f64);
            let rhs = hv[r - 1].powf(1.0 / (r as f64 - 1.0));
            maclaurin_defect = maclaurin_defect.max(lhs - rhs);
            if (lhs - rhs).abs() > 1e-12 * rhs.max(1.0) {
                equality = false;
            }
        }
        umbilical_flags.push(equality && hv.len() > 2);
    }

    let verdict = if cv <= CV_UMBILICAL {
        Verdict::ConsistentWithUmbilical
    } else {
        Verdict::Inconsistent
    };
    Ok(Classification { verdict, cv, maclaurin_defect, umbilical_flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_domain;
    use crate::scenarios::load_scenario;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn horocap_arc(segments: usize, bump: impl Fn(f64) -> f64) -> DiscreteHypersurface {
        DiscreteHypersurface::arc(
            Model::HalfSpace,
            [0.0, 1.0],
            0.5,
            0.0,
            std::f64::consts::PI,
            segments,
            SupportSurface::horosphere(),
            bump,
        )
        .unwrap()
    }

    #[test]
    fn curvature_of_model_curves() {
        let chart = SpaceForm::hyperbolic_half_space(2);

        // circle center (0,2), radius 1: constant curvature 2
        let circ = DiscreteHypersurface::circle(Model::HalfSpace, [0.0, 2.0], 1.0, 256).unwrap();
        let data = principal_curvatures(&circ, &chart).unwrap();
        for h in &data.h {
            assert!((h[1] - 2.0).abs() < 0.02, "H1 {}", h[1]);
        }

        // horocycle segment on x2 = 1
        let verts: Vec<[f64; 2]> = (0..=40).map(|i| [-1.0 + 0.05 * i as f64, 1.0]).collect();
        let horo = DiscreteHypersurface::new(Model::HalfSpace, verts, false, None).unwrap();
        let data = principal_curvatures(&horo, &chart).unwrap();
        for h in &data.h {
            assert!((h[1] - 1.0).abs() < 1e-6, "H1 {}", h[1]);
        }

        // geodesic: half-circle centered on the ideal boundary
        let verts: Vec<[f64; 2]> = (1..60)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / 60.0;
                [t.cos(), t.sin()]
            })
            .collect();
        let geo = DiscreteHypersurface::new(Model::HalfSpace, verts, false, None).unwrap();
        let data = principal_curvatures(&geo, &chart).unwrap();
        for h in &data.h {
            assert!(h[1].abs() < 1e-2, "H1 {}", h[1]);
        }
    }

    #[test]
    fn newton_traces_on_diagonal_example() {
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let t1 = newton_tensor(&h, 1).unwrap();
        assert!((t1.trace - 12.0).abs() < 1e-12, "trace {}", t1.trace);
        assert!((t1.trace_h - 22.0).abs() < 1e-12, "trace_h {}", t1.trace_h);
        let t0 = newton_tensor(&h, 0).unwrap();
        assert!((t0.trace_h2 - 14.0).abs() < 1e-12, "trace_h2 {}", t0.trace_h2);
        assert!(matches!(
            newton_tensor(&h, 3),
            Err(HypersurfaceError::BadIndex { .. })
        ));
    }

    #[test]
    fn newton_identities_on_random_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..1000 {
            let m = rng.gen_range(2..=8usize);
            let mut h = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in 0..=i {
                    let v = rng.gen_range(-2.0..2.0);
                    h[(i, j)] = v;
                    h[(j, i)] = v;
                }
            }
            for r in 0..m {
                let t = newton_tensor(&h, r).unwrap();
                for (which, d) in t.defects.iter().enumerate() {
                    assert!(*d < 1e-12, "trial {trial} m {m} r {r} identity {which}: defect {d}");
                }
            }
        }
    }

    #[test]
    fn minkowski_closed_circle_second_order() {
        let chart = SpaceForm::hyperbolic_half_space(2);
        let sup = SupportSurface::horosphere();
        let mut rels = Vec::new();
        for m in [100usize, 200, 400] {
            let circ = DiscreteHypersurface::circle(Model::HalfSpace, [0.0, 2.0], 1.0, m).unwrap();
            let out = minkowski_residual(&circ, &chart, &sup, 1).unwrap();
            rels.push(out.report.relative.abs());
        }
        assert!(rels[2] < 1e-2, "relative at 400 segments {}", rels[2]);
        // O(m^-2): each doubling divides the residual by ~4
        assert!(rels[0] / rels[1] > 3.0, "decay {} -> {}", rels[0], rels[1]);
        assert!(rels[1] / rels[2] > 3.0, "decay {} -> {}", rels[1], rels[2]);
    }

    #[test]
    fn minkowski_orthogonal_and_tilted_caps() {
        let chart = SpaceForm::hyperbolic_half_space(2);
        let sup = SupportSurface::horosphere();

        let cap = horocap_arc(400, |_| 0.0);
        let out = minkowski_residual(&cap, &chart, &sup, 1).unwrap();
        assert!(out.orthogonal, "contact deviation {:?}", out.contact_deviation_deg);
        assert!(out.report.relative.abs() < 1e-2, "relative {}", out.report.relative);

        // 70-degree contact: flagged, still computed. Endpoint angles
        // put both ends back on x2 = 1.
        let lift = 0.5 * (20.0f64).to_radians().sin();
        let a0 = (-lift / 0.5).asin();
        let tilted = DiscreteHypersurface::arc(
            Model::HalfSpace,
            [0.0, 1.0 + lift],
            0.5,
            a0,
            std::f64::consts::PI - a0,
            400,
            SupportSurface::horosphere(),
            |_| 0.0,
        )
        .unwrap();
        let out = minkowski_residual(&tilted, &chart, &sup, 1).unwrap();
        assert!(!out.orthogonal, "deviation {:?}", out.contact_deviation_deg);
        assert!(out.report.value.is_finite());
    }

    #[test]
    fn hkr_equality_and_gap() {
        let chart = SpaceForm::hyperbolic_half_space(2);
        let s = load_scenario("horocycle_cap_orthogonal").unwrap();
        let enclosed = build_domain(&s.domain, 0.02).unwrap();

        let cap = horocap_arc(400, |_| 0.0);
        let rep = hkr_gap(&cap, &enclosed, &chart).unwrap();
        assert!(rep.relative.abs() < 1e-2, "equality-case gap {}", rep.relative);
        assert!(rep.relative > -QUADRATURE_TOL, "inequality direction {}", rep.relative);

        // umbilical chain: int V/H1 dA = int g(X, nu) dA
        let lhs_flux = killing_flux(&cap, &chart, &SupportSurface::horosphere()).unwrap();
        let lhs_hkr = rep.value + rep.normalizer; // LHS = gap + RHS
        assert!(
            ((lhs_flux - lhs_hkr) / lhs_hkr).abs() < 1e-2,
            "flux {lhs_flux} vs 1/H1 side {lhs_hkr}"
        );
    }

    #[test]
    fn hkr_strictly_positive_on_perturbed_curve() {
        let chart = SpaceForm::hyperbolic_half_space(2);
        // 5% radial bump, vanishing with its derivative at the contact points
        let bump = |t: f64| 0.05 * (2.0 * t).sin().powi(2);
        let cap = horocap_arc(400, bump);

        // enclosed domain meshed from the perturbed polygon
        let mut vertices = cap.vertices.clone();
        vertices.reverse(); // clockwise arc, then the base closes it counterclockwise
        let m = vertices.len();
        let mut tags = vec![Some(crate::mesh::EdgeTag::Sigma); m - 1];
        tags.push(Some(crate::mesh::EdgeTag::Robin));
        let spec = crate::mesh::DomainSpec {
            chart: SpaceForm::hyperbolic_half_space(2),
            support: SupportSurface::horosphere(),
            shape: crate::mesh::DomainShape::Polygon { vertices: vertices.clone(), tags },
            graded_corner: None,
        };
        let enclosed = build_domain(&spec, 0.02).unwrap();

        let rep = hkr_gap(&cap, &enclosed, &chart).unwrap();
        assert!(
            rep.relative > 3.0 * QUADRATURE_TOL,
            "perturbed gap {} not strictly positive",
            rep.relative
        );

        // geodesic piece: H1 = 0 rejected
        let verts: Vec<[f64; 2]> = (1..60)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / 60.0;
                [t.cos(), t.sin()]
            })
            .collect();
        let geo = DiscreteHypersurface::new(Model::HalfSpace, verts, false, None).unwrap();
        assert!(matches!(
            hkr_gap(&geo, &enclosed, &chart),
            Err(HypersurfaceError::NonpositiveMeanCurvature { .. })
        ));
    }

    #[test]
    fn alexandrov_verdicts() {
        let chart = SpaceForm::hyperbolic_half_space(2);

        let cap = horocap_arc(400, |_| 0.0);
        let data = principal_curvatures(&cap, &chart).unwrap();
        let c = alexandrov_classify(&data, AlexandrovMode::ConstantHk(1)).unwrap();
        assert_eq!(c.verdict, Verdict::ConsistentWithUmbilical);
        assert!(c.cv < 1e-2, "cv {}", c.cv);

        // ellipse-like perturbation: inconsistent
        let ell: Vec<[f64; 2]> = (0..256)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / 256.0;
                [1.3 * t.cos(), 2.0 + t.sin()]
            })
            .collect();
        let ellipse = DiscreteHypersurface::new(Model::HalfSpace, ell, true, None).unwrap();
        let data = principal_curvatures(&ellipse, &chart).unwrap();
        let c = alexandrov_classify(&data, AlexandrovMode::ConstantHk(1)).unwrap();
        assert_eq!(c.verdict, Verdict::Inconsistent);
        assert!(c.cv > 5e-2, "cv {}", c.cv);

        // supplied multi-curvature data: equality chain flags umbilical points
        let data = CurvatureData::from_lists(vec![vec![2.0, 2.0, 2.0], vec![1.0, 2.0, 3.0]]);
        assert!((data.h[0][2].sqrt() - data.h[0][1]).abs() < 1e-12);
        let c = alexandrov_classify(&data, AlexandrovMode::Quotient(2, 1)).unwrap();
        assert!(c.umbilical_flags[0]);
        assert!(!c.umbilical_flags[1]);
        assert!(c.maclaurin_defect <= 1e-12, "defect {}", c.maclaurin_defect);
    }

    #[test]
    fn polyline_json_round_trip() {
        let cap = horocap_arc(40, |_| 0.0);
        let v = cap.to_json();
        let back = DiscreteHypersurface::from_json(&v).unwrap();
        assert_eq!(back, cap);
        assert_eq!(back.to_json(), v);

        assert!(matches!(
            DiscreteHypersurface::from_json(&serde_json::json!({"model": "half_space"})),
            Err(HypersurfaceError::BadPolyline(_))
        ));
    }

    #[test]
    fn constructor_validation() {
        assert!(matches!(
            DiscreteHypersurface::new(Model::HalfSpace, vec![[0.0, 1.0]; 3], false, None),
            Err(HypersurfaceError::TooFewVertices { .. })
        ));
        let verts = vec![[0.0, 1.5], [0.1, 1.5], [0.1, 1.5], [0.2, 1.5], [0.3, 1.5]];
        assert!(matches!(
            DiscreteHypersurface::new(Model::HalfSpace, verts, false, None),
            Err(HypersurfaceError::RepeatedPoints(2))
        ));
        // endpoint off the horosphere level set
        let verts: Vec<[f64; 2]> = (0..=10).map(|i| [0.1 * i as f64, 1.1]).collect();
        assert!(matches!(
            DiscreteHypersurface::new(
                Model::HalfSpace,
                verts,
                false,
                Some(SupportSurface::horosphere())
            ),
            Err(HypersurfaceError::EndpointOffSupport { .. })
        ));
    }
}
