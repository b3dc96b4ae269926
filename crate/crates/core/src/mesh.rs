//! Triangulated 2-D domains with boundary split into a Dirichlet part
//! (sigma) and a Robin part on the support surface (robin), meeting at
//! the corner set gamma.
//!
//! The boundary is represented analytically (circles and lines); meshes
//! are built by constrained Delaunay triangulation of a sampled boundary
//! polygon plus a hexagonal interior lattice, and refined by uniform red
//! refinement with new boundary vertices snapped back to the curves.

use crate::geometry::{GeomError, Model, SpaceForm, SupportSurface};
use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};
use thiserror::Error;

/// Boundary vertices are kept on the analytic curves to this residual.
pub const BOUNDARY_SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// An analytic boundary curve; the domain lies on the `signed < 0` side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    /// `signed(x) = |x - center| - radius`; domain inside.
    Circle { center: [f64; 2], radius: f64 },
    /// `signed(x) = <x - point, normal>` with unit `normal`; domain on
    /// the side the normal points away from.
    Line { point: [f64; 2], normal: [f64; 2] },
}

impl Curve {
    pub fn signed(&self, p: [f64; 2]) -> f64 {
        match *self {
            Curve::Circle { center, radius } => dist(p, center) - radius,
            Curve::Line { point, normal } => {
                (p[0] - point[0]) * normal[0] + (p[1] - point[1]) * normal[1]
            }
        }
    }

    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        match *self {
            Curve::Circle { center, radius } => {
                let d = dist(p, center);
                [
                    center[0] + (p[0] - center[0]) * radius / d,
                    center[1] + (p[1] - center[1]) * radius / d,
                ]
            }
            Curve::Line { point, normal } => {
                let s = (p[0] - point[0]) * normal[0] + (p[1] - point[1]) * normal[1];
                [p[0] - s * normal[0], p[1] - s * normal[1]]
            }
        }
    }

    /// Outward gradient of the signed function at a point on the curve.
    pub fn outward_normal(&self, p: [f64; 2]) -> [f64; 2] {
        match *self {
            Curve::Circle { center, .. } => {
                let d = dist(p, center);
                [(p[0] - center[0]) / d, (p[1] - center[1]) / d]
            }
            Curve::Line { normal, .. } => normal,
        }
    }

    /// Support surface as a curve in a 2-D chart.
    pub fn from_support(support: &SupportSurface, chart: &SpaceForm) -> Result<Curve, MeshError> {
        use crate::geometry::SupportKind::*;
        match (support.kind, chart.model) {
            (Horosphere, Model::HalfSpace) => Ok(Curve::Line { point: [0.0, 1.0], normal: [0.0, -1.0] }),
            (Equidistant, Model::HalfSpace) => {
                let theta = support.theta.expect("equidistant carries theta");
                Ok(Curve::Line { point: [0.0, 1.0], normal: [-theta.sin(), -theta.cos()] })
            }
            (GeodesicSphere, Model::PoincareBall) | (GeodesicSphere, Model::StereographicSphere) => {
                Ok(Curve::Circle {
                    center: [0.0, 0.0],
                    radius: support.r_model.expect("geodesic sphere carries r_model"),
                })
            }
            (kind, model) => Err(MeshError::DegenerateDomain(format!(
                "no planar curve for support {kind:?} in {model:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeTag {
    Sigma,
    Robin,
}

/// The domain to mesh.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainSpec {
    pub chart: SpaceForm,
    pub support: SupportSurface,
    pub shape: DomainShape,
    /// Geometric corner-grading ratio in (0, 1]; `None` is uniform.
    #[serde(default)]
    pub graded_corner: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum DomainShape {
    /// Region `{sigma.signed < 0} \cap {robin.signed < 0}` bounded by a
    /// Dirichlet arc of `sigma` and a Robin arc of `robin`.
    TwoCurves { sigma: Curve, robin: Curve },
    /// Closed polygon with one tag per edge `(v[i], v[i+1 mod len])`;
    /// an untagged edge is rejected.
    Polygon { vertices: Vec<[f64; 2]>, tags: Vec<Option<EdgeTag>> },
}

/// Conforming triangulation of a domain.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub model: Model,
    pub curvature: f64,
    pub vertices: Vec<[f64; 2]>,
    /// Positively oriented vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary edges `(a, b)` with outward normal `rot(-90) (b - a)`.
    pub sigma_edges: Vec<[usize; 2]>,
    pub robin_edges: Vec<[usize; 2]>,
    pub gamma_vertices: Vec<usize>,
    pub h_max: f64,
    /// Analytic curves for boundary snapping under refinement, when known.
    pub curves: Option<(Curve, Curve)>,
    /// Interior angle of the domain at each gamma vertex, when known.
    pub gamma_angles: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub min_angle_deg: f64,
    pub max_angle_deg: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub triangle_count: usize,
    pub vertex_count: usize,
    /// Lengths of the tagged boundary parts in the conformal metric.
    pub sigma_length: f64,
    pub robin_length: f64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn midpoint(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Intersection points of two curves; lens/cap domains need exactly two.
fn intersections(a: &Curve, b: &Curve) -> Vec<[f64; 2]> {
    match (*a, *b) {
        (Curve::Circle { center: c0, radius: r0 }, Curve::Circle { center: c1, radius: r1 }) => {
            let d = dist(c0, c1);
            if d >= r0 + r1 || d <= (r0 - r1).abs() || d == 0.0 {
                return vec![];
            }
            let x = (d * d + r0 * r0 - r1 * r1) / (2.0 * d);
            let h2 = r0 * r0 - x * x;
            if h2 <= 0.0 {
                return vec![];
            }
            let h = h2.sqrt();
            let ex = [(c1[0] - c0[0]) / d, (c1[1] - c0[1]) / d];
            let ey = [-ex[1], ex[0]];
            vec![
                [c0[0] + x * ex[0] + h * ey[0], c0[1] + x * ex[1] + h * ey[1]],
                [c0[0] + x * ex[0] - h * ey[0], c0[1] + x * ex[1] - h * ey[1]],
            ]
        }
        (Curve::Circle { center, radius }, Curve::Line { point, normal })
        | (Curve::Line { point, normal }, Curve::Circle { center, radius }) => {
            let s = (center[0] - point[0]) * normal[0] + (center[1] - point[1]) * normal[1];
            let h2 = radius * radius - s * s;
            if h2 <= 0.0 {
                return vec![];
            }
            let h = h2.sqrt();
            let foot = [center[0] - s * normal[0], center[1] - s * normal[1]];
            let t = [-normal[1], normal[0]];
            vec![
                [foot[0] + h * t[0], foot[1] + h * t[1]],
                [foot[0] - h * t[0], foot[1] - h * t[1]],
            ]
        }
        (Curve::Line { .. }, Curve::Line { .. }) => vec![],
    }
}

/// Sample the arc of `curve` from `g0` to `g1` that lies on the
/// `other.signed < 0` side; returns points on the curve, endpoints
/// included, spaced by roughly `h` (graded toward the ends when a
/// ratio is given).
fn sample_arc(
    curve: &Curve,
    other: &Curve,
    g0: [f64; 2],
    g1: [f64; 2],
    h: f64,
    grade: Option<f64>,
) -> Result<Vec<[f64; 2]>, MeshError> {
    let param: Box<dyn Fn(f64) -> [f64; 2]>;
    let length;
    match *curve {
        Curve::Circle { center, radius } => {
            let a0 = (g0[1] - center[1]).atan2(g0[0] - center[0]);
            let a1 = (g1[1] - center[1]).atan2(g1[0] - center[0]);
            let ccw = (a1 - a0).rem_euclid(2.0 * std::f64::consts::PI);
            // pick the arc whose midpoint lies inside the other curve
            let mids = [a0 + 0.5 * ccw, a0 + 0.5 * (ccw - 2.0 * std::f64::consts::PI)];
            let pnt = move |a: f64| [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
            let inside = [other.signed(pnt(mids[0])) < 0.0, other.signed(pnt(mids[1])) < 0.0];
            let delta = match (inside[0], inside[1]) {
                (true, false) => ccw,
                (false, true) => ccw - 2.0 * std::f64::consts::PI,
                _ => {
                    return Err(MeshError::DegenerateDomain(
                        "curves do not intersect transversally".into(),
                    ))
                }
            };
            length = delta.abs() * radius;
            param = Box::new(move |t: f64| pnt(a0 + t * delta));
        }
        Curve::Line { .. } => {
            length = dist(g0, g1);
            param = Box::new(move |t: f64| {
                [g0[0] + t * (g1[0] - g0[0]), g0[1] + t * (g1[1] - g0[1])]
            });
        }
    }
    let m = ((length / h).ceil() as usize).max(2);
    let mut pts = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let s = k as f64 / m as f64;
        let t = match grade {
            // monotone map with slope `ratio` at both ends
            Some(ratio) => s - (1.0 - ratio) * (2.0 * std::f64::consts::PI * s).sin()
                / (2.0 * std::f64::consts::PI),
            None => s,
        };
        pts.push(param(t));
    }
    pts[0] = g0;
    *pts.last_mut().unwrap() = g1;
    Ok(pts)
}

/// Interior angle between two curves at a shared corner, computed from
/// the tangents pointing toward the respective arc interiors.
fn corner_angle(sigma: &Curve, robin: &Curve, corner: [f64; 2], s_next: [f64; 2], r_next: [f64; 2]) -> f64 {
    let tangent = |c: &Curve, toward: [f64; 2]| -> [f64; 2] {
        let n = c.outward_normal(corner);
        let t = [-n[1], n[0]];
        let d = [toward[0] - corner[0], toward[1] - corner[1]];
        if t[0] * d[0] + t[1] * d[1] >= 0.0 {
            t
        } else {
            [-t[0], -t[1]]
        }
    };
    let ts = tangent(sigma, s_next);
    let tr = tangent(robin, r_next);
    (ts[0] * tr[0] + ts[1] * tr[1]).clamp(-1.0, 1.0).acos()
}

struct BoundaryLoop {
    points: Vec<[f64; 2]>,
    /// tag of edge (points[i], points[i+1 mod len])
    tags: Vec<EdgeTag>,
    gamma_angles: Vec<f64>,
}

fn boundary_loop(spec: &DomainSpec, h: f64) -> Result<BoundaryLoop, MeshError> {
    match &spec.shape {
        DomainShape::TwoCurves { sigma, robin } => {
            let gs = intersections(sigma, robin);
            if gs.len() != 2 {
                return Err(MeshError::DegenerateDomain(format!(
                    "expected 2 boundary intersections, found {}",
                    gs.len()
                )));
            }
            let (g0, g1) = (gs[0], gs[1]);
            let s_arc = sample_arc(sigma, robin, g0, g1, h, spec.graded_corner)?;
            let r_arc = sample_arc(robin, sigma, g1, g0, h, spec.graded_corner)?;
            let a0 = corner_angle(sigma, robin, g0, s_arc[1], r_arc[r_arc.len() - 2]);
            let a1 = corner_angle(sigma, robin, g1, s_arc[s_arc.len() - 2], r_arc[1]);
            let mut points = Vec::new();
            let mut tags = Vec::new();
            points.extend_from_slice(&s_arc[..s_arc.len() - 1]);
            tags.extend(std::iter::repeat(EdgeTag::Sigma).take(s_arc.len() - 1));
            points.extend_from_slice(&r_arc[..r_arc.len() - 1]);
            tags.extend(std::iter::repeat(EdgeTag::Robin).take(r_arc.len() - 1));
            Ok(BoundaryLoop { points, tags, gamma_angles: vec![a0, a1] })
        }
        DomainShape::Polygon { vertices, tags } => {
            if vertices.len() < 3 || tags.len() != vertices.len() {
                return Err(MeshError::DegenerateDomain("polygon needs one tag per edge".into()));
            }
            let mut out_tags = Vec::with_capacity(tags.len());
            for (i, t) in tags.iter().enumerate() {
                match t {
                    Some(t) => out_tags.push(*t),
                    None => {
                        return Err(MeshError::DegenerateDomain(format!(
                            "polygon edge {i} tagged neither sigma nor robin"
                        )))
                    }
                }
            }
            // subdivide long polygon edges to the target size
            let mut points = Vec::new();
            let mut tags_out = Vec::new();
            let n = vertices.len();
            for i in 0..n {
                let a = vertices[i];
                let b = vertices[(i + 1) % n];
                let m = ((dist(a, b) / h).ceil() as usize).max(1);
                for k in 0..m {
                    let t = k as f64 / m as f64;
                    points.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                    tags_out.push(out_tags[i]);
                }
            }
            Ok(BoundaryLoop { points, tags: tags_out, gamma_angles: vec![] })
        }
    }
}

fn polygon_signed_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

fn point_in_polygon(p: [f64; 2], pts: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = pts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (pts[i], pts[j]);
        if (a[1] > p[1]) != (b[1] > p[1])
            && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Distance from `p` to the polygon boundary (minimum over segments).
fn polygon_clearance(p: [f64; 2], pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
        best = best.min(dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]]));
    }
    best
}

/// Build a conforming triangulation with `h_max <= target_h` (up to the
/// boundary sampling) of the domain described by `spec`.
pub fn build_domain(spec: &DomainSpec, target_h: f64) -> Result<Mesh, MeshError> {
    assert!(target_h > 0.0);
    spec.support.validate(&spec.chart)?;
    let bl = boundary_loop(spec, target_h)?;
    let mut loop_pts = bl.points;
    let mut loop_tags = bl.tags;
    if polygon_signed_area(&loop_pts) < 0.0 {
        // reverse to counterclockwise; edge i becomes edge n-1-i shifted
        loop_pts.reverse();
        loop_tags.reverse();
        loop_tags.rotate_left(1);
        // after reversing points, edge (i, i+1) was edge (n-1-i, n-i);
        // rotating the reversed tags by one aligns them again
    }
    let nb = loop_pts.len();
    if nb < 3 {
        return Err(MeshError::DegenerateDomain("empty boundary".into()));
    }

    let inside = |p: [f64; 2]| -> bool {
        match &spec.shape {
            DomainShape::TwoCurves { sigma, robin } => sigma.signed(p) < 0.0 && robin.signed(p) < 0.0,
            DomainShape::Polygon { .. } => point_in_polygon(p, &loop_pts),
        }
    };
    let clearance = |p: [f64; 2]| -> f64 {
        match &spec.shape {
            DomainShape::TwoCurves { sigma, robin } => (-sigma.signed(p)).min(-robin.signed(p)),
            DomainShape::Polygon { .. } => polygon_clearance(p, &loop_pts),
        }
    };

    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> =
        ConstrainedDelaunayTriangulation::new();
    let mut handles = Vec::with_capacity(nb);
    for p in &loop_pts {
        let h = cdt
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| MeshError::DegenerateDomain(format!("boundary insertion: {e:?}")))?;
        handles.push(h);
    }
    for i in 0..nb {
        let (a, b) = (handles[i], handles[(i + 1) % nb]);
        if a != b && cdt.can_add_constraint(a, b) {
            cdt.add_constraint(a, b);
        }
    }

    // hexagonal interior lattice, kept clear of the boundary
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &loop_pts {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let dy = target_h * 3.0f64.sqrt() / 2.0;
    let clear = 0.6 * target_h;
    let mut row = 0usize;
    let mut y = lo[1] + dy;
    while y < hi[1] {
        let offset = if row % 2 == 0 { 0.0 } else { 0.5 * target_h };
        let mut x = lo[0] + offset;
        while x < hi[0] {
            let p = [x, y];
            if inside(p) && clearance(p) > clear {
                cdt.insert(Point2::new(p[0], p[1]))
                    .map_err(|e| MeshError::DegenerateDomain(format!("interior insertion: {e:?}")))?;
            }
            x += target_h;
        }
        y += dy;
        row += 1;
    }

    // extract vertices in handle-index order
    let mut all_vertices = vec![[0.0f64; 2]; cdt.num_vertices()];
    for v in cdt.vertices() {
        let pos = v.position();
        all_vertices[v.fix().index()] = [pos.x, pos.y];
    }

    let mut triangles = Vec::new();
    for f in cdt.inner_faces() {
        let vs = f.vertices();
        let idx = [vs[0].fix().index(), vs[1].fix().index(), vs[2].fix().index()];
        let (pa, pb, pc) = (all_vertices[idx[0]], all_vertices[idx[1]], all_vertices[idx[2]]);
        let area = 0.5
            * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])).abs();
        // slivers from exactly-collinear boundary samples are noise
        if area < 1e-10 * target_h * target_h {
            continue;
        }
        let c = [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0];
        if inside(c) {
            triangles.push(idx);
        }
    }
    if triangles.is_empty() {
        return Err(MeshError::DegenerateDomain("no triangles inside the domain".into()));
    }

    // drop unused vertices and reindex
    let mut used = vec![usize::MAX; all_vertices.len()];
    let mut vertices = Vec::new();
    for t in &mut triangles {
        for v in t.iter_mut() {
            if used[*v] == usize::MAX {
                used[*v] = vertices.len();
                vertices.push(all_vertices[*v]);
            }
            *v = used[*v];
        }
    }
    // enforce ccw orientation
    for t in &mut triangles {
        if tri_area(&vertices, t) < 0.0 {
            t.swap(1, 2);
        }
    }

    // boundary tag lookup by original loop edge
    let edge_tag: std::collections::HashMap<(usize, usize), EdgeTag> = (0..nb)
        .filter_map(|i| {
            let a = used[handles[i].index()];
            let b = used[handles[(i + 1) % nb].index()];
            if a == usize::MAX || b == usize::MAX {
                None
            } else {
                Some(((a.min(b), a.max(b)), loop_tags[i]))
            }
        })
        .collect();

    let mut mesh = Mesh {
        model: spec.chart.model,
        curvature: spec.chart.curvature,
        vertices,
        triangles,
        sigma_edges: vec![],
        robin_edges: vec![],
        gamma_vertices: vec![],
        h_max: 0.0,
        curves: match &spec.shape {
            DomainShape::TwoCurves { sigma, robin } => Some((*sigma, *robin)),
            DomainShape::Polygon { .. } => None,
        },
        gamma_angles: bl.gamma_angles,
    };
    mesh.retag_boundary(|key| edge_tag.get(&key).copied())?;
    mesh.recompute_h();
    Ok(mesh)
}

fn tri_area(vertices: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    pub fn from_raw(
        model: Model,
        curvature: f64,
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        sigma_edges: Vec<[usize; 2]>,
        robin_edges: Vec<[usize; 2]>,
    ) -> Mesh {
        let mut mesh = Mesh {
            model,
            curvature,
            vertices,
            triangles,
            sigma_edges,
            robin_edges,
            gamma_vertices: vec![],
            h_max: 0.0,
            curves: None,
            gamma_angles: vec![],
        };
        mesh.recompute_gamma();
        mesh.recompute_h();
        mesh
    }

    pub fn chart(&self) -> SpaceForm {
        SpaceForm::new(self.curvature, 2, self.model).expect("mesh chart is consistent")
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        tri_area(&self.vertices, &self.triangles[t])
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        [
            (self.vertices[a][0] + self.vertices[b][0] + self.vertices[c][0]) / 3.0,
            (self.vertices[a][1] + self.vertices[b][1] + self.vertices[c][1]) / 3.0,
        ]
    }

    fn recompute_h(&mut self) {
        let mut h: f64 = 0.0;
        for t in &self.triangles {
            for e in 0..3 {
                h = h.max(dist(self.vertices[t[e]], self.vertices[t[(e + 1) % 3]]));
            }
        }
        self.h_max = h;
    }

    fn recompute_gamma(&mut self) {
        use std::collections::HashSet;
        let on_sigma: HashSet<usize> = self.sigma_edges.iter().flatten().copied().collect();
        let mut gamma: Vec<usize> = self
            .robin_edges
            .iter()
            .flatten()
            .copied()
            .filter(|v| on_sigma.contains(v))
            .collect();
        gamma.sort_unstable();
        gamma.dedup();
        self.gamma_vertices = gamma;
    }

    /// Recover boundary edges from the triangle soup, orient them
    /// outward and tag them with `tag_of` keyed by the sorted pair.
    fn retag_boundary<F>(&mut self, tag_of: F) -> Result<(), MeshError>
    where
        F: Fn((usize, usize)) -> Option<EdgeTag>,
    {
        use std::collections::HashMap;
        let mut count: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                count.entry(key).or_insert((0, ti)).0 += 1;
            }
        }
        self.sigma_edges.clear();
        self.robin_edges.clear();
        for (&(a, b), &(c, ti)) in count.iter() {
            if c != 1 {
                continue;
            }
            let tag = tag_of((a, b)).ok_or_else(|| {
                MeshError::DegenerateDomain(format!(
                    "untagged boundary edge ({a}, {b}) at {:?} -- {:?}",
                    self.vertices[a], self.vertices[b]
                ))
            })?;
            // orient so the outward normal points away from the triangle
            let centroid = self.centroid(ti);
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let n = [d[1], -d[0]];
            let to_c = [centroid[0] - pa[0], centroid[1] - pa[1]];
            let edge = if n[0] * to_c[0] + n[1] * to_c[1] < 0.0 { [a, b] } else { [b, a] };
            match tag {
                EdgeTag::Sigma => self.sigma_edges.push(edge),
                EdgeTag::Robin => self.robin_edges.push(edge),
            }
        }
        self.sigma_edges.sort_unstable();
        self.robin_edges.sort_unstable();
        self.recompute_gamma();
        Ok(())
    }

    /// Outward flat unit normal of a boundary edge stored as `(a, b)`.
    pub fn edge_normal(&self, edge: [usize; 2]) -> [f64; 2] {
        let (a, b) = (self.vertices[edge[0]], self.vertices[edge[1]]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        [d[1] / len, -d[0] / len]
    }

    pub fn edge_length(&self, edge: [usize; 2]) -> f64 {
        dist(self.vertices[edge[0]], self.vertices[edge[1]])
    }

    /// Uniform red refinement; boundary midpoints are snapped back to
    /// the analytic curves when those are known.
    pub fn refine(&self) -> Mesh {
        use std::collections::HashMap;
        let mut vertices = self.vertices.clone();
        let mut mid_of: HashMap<(usize, usize), usize> = HashMap::new();

        // classify boundary edges for snapping
        let mut boundary_tag: HashMap<(usize, usize), EdgeTag> = HashMap::new();
        for e in &self.sigma_edges {
            boundary_tag.insert((e[0].min(e[1]), e[0].max(e[1])), EdgeTag::Sigma);
        }
        for e in &self.robin_edges {
            boundary_tag.insert((e[0].min(e[1]), e[0].max(e[1])), EdgeTag::Robin);
        }

        let mut midpoint_index = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            if let Some(&m) = mid_of.get(&key) {
                return m;
            }
            let mut p = midpoint(vertices[a], vertices[b]);
            if let (Some(tag), Some((sigma, robin))) = (boundary_tag.get(&key), self.curves.as_ref())
            {
                p = match tag {
                    EdgeTag::Sigma => sigma.project(p),
                    EdgeTag::Robin => robin.project(p),
                };
            }
            let m = vertices.len();
            vertices.push(p);
            mid_of.insert(key, m);
            m
        };

        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for t in &self.triangles {
            let [a, b, c] = *t;
            let mab = midpoint_index(a, b, &mut vertices);
            let mbc = midpoint_index(b, c, &mut vertices);
            let mca = midpoint_index(c, a, &mut vertices);
            triangles.push([a, mab, mca]);
            triangles.push([b, mbc, mab]);
            triangles.push([c, mca, mbc]);
            triangles.push([mab, mbc, mca]);
        }

        let split = |edges: &[[usize; 2]], mid_of: &HashMap<(usize, usize), usize>| -> Vec<[usize; 2]> {
            let mut out = Vec::with_capacity(2 * edges.len());
            for e in edges {
                let key = (e[0].min(e[1]), e[0].max(e[1]));
                let m = mid_of[&key];
                out.push([e[0], m]);
                out.push([m, e[1]]);
            }
            out.sort_unstable();
            out
        };
        let sigma_edges = split(&self.sigma_edges, &mid_of);
        let robin_edges = split(&self.robin_edges, &mid_of);

        let mut mesh = Mesh {
            model: self.model,
            curvature: self.curvature,
            vertices,
            triangles,
            sigma_edges,
            robin_edges,
            gamma_vertices: self.gamma_vertices.clone(),
            h_max: 0.0,
            curves: self.curves,
            gamma_angles: self.gamma_angles.clone(),
        };
        mesh.recompute_h();
        mesh
    }

    /// Quality and metric-length summary.
    pub fn quality(&self) -> Result<QualityReport, MeshError> {
        let chart = self.chart();
        let mut min_angle = f64::INFINITY;
        let mut max_angle: f64 = 0.0;
        let mut h_min = f64::INFINITY;
        let mut h_max: f64 = 0.0;
        for t in &self.triangles {
            let pts = [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]];
            for i in 0..3 {
                let (p, q, r) = (pts[i], pts[(i + 1) % 3], pts[(i + 2) % 3]);
                let u = [q[0] - p[0], q[1] - p[1]];
                let v = [r[0] - p[0], r[1] - p[1]];
                let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
                let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
                let ang = ((u[0] * v[0] + u[1] * v[1]) / (nu * nv)).clamp(-1.0, 1.0).acos();
                min_angle = min_angle.min(ang);
                max_angle = max_angle.max(ang);
                h_min = h_min.min(nu);
                h_max = h_max.max(nu);
            }
        }
        let metric_length = |edges: &[[usize; 2]]| -> Result<f64, MeshError> {
            let mut total = 0.0;
            for e in edges {
                let m = midpoint(self.vertices[e[0]], self.vertices[e[1]]);
                total += chart.scale(&m)? * self.edge_length(*e);
            }
            Ok(total)
        };
        Ok(QualityReport {
            min_angle_deg: min_angle.to_degrees(),
            max_angle_deg: max_angle.to_degrees(),
            h_max,
            h_min,
            triangle_count: self.triangles.len(),
            vertex_count: self.vertices.len(),
            sigma_length: metric_length(&self.sigma_edges)?,
            robin_length: metric_length(&self.robin_edges)?,
        })
    }

    /// Domain area in the conformal metric (centroid quadrature).
    pub fn metric_area(&self) -> Result<f64, MeshError> {
        let chart = self.chart();
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            let c = self.centroid(t);
            let (omega, _) = chart.conformal_factor(&c)?;
            total += (2.0 * omega).exp() * self.triangle_area(t);
        }
        Ok(total)
    }

    /// Structural invariants; used by tests and after deserialization.
    pub fn validate(&self) -> Result<(), MeshError> {
        use std::collections::HashMap;
        for t in 0..self.triangles.len() {
            if self.triangle_area(t) <= 0.0 {
                return Err(MeshError::DegenerateDomain(format!("triangle {t} not ccw")));
            }
        }
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let boundary: usize = count.values().filter(|&&c| c == 1).count();
        if boundary != self.sigma_edges.len() + self.robin_edges.len() {
            return Err(MeshError::DegenerateDomain(format!(
                "boundary edge count {} != tagged {} + {}",
                boundary,
                self.sigma_edges.len(),
                self.robin_edges.len()
            )));
        }
        for e in self.sigma_edges.iter().chain(&self.robin_edges) {
            let key = (e[0].min(e[1]), e[0].max(e[1]));
            if count.get(&key) != Some(&1) {
                return Err(MeshError::DegenerateDomain(format!("tagged edge {e:?} not on boundary")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "dim": 2,
            "model": serde_json::to_value(self.model).unwrap(),
            "K": self.curvature as i64,
            "vertices": self.vertices,
            "triangles": self.triangles,
            "sigma_edges": self.sigma_edges,
            "robin_edges": self.robin_edges,
            "gamma_vertices": self.gamma_vertices,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Mesh, MeshError> {
        #[derive(Deserialize)]
        struct MeshJson {
            dim: usize,
            model: Model,
            #[serde(rename = "K")]
            k: f64,
            vertices: Vec<[f64; 2]>,
            triangles: Vec<[usize; 3]>,
            sigma_edges: Vec<[usize; 2]>,
            robin_edges: Vec<[usize; 2]>,
        }
        let mj: MeshJson = serde_json::from_value(v.clone())?;
        if mj.dim != 2 {
            return Err(MeshError::DegenerateDomain(format!("unsupported dim {}", mj.dim)));
        }
        let mesh = Mesh::from_raw(mj.model, mj.k, mj.vertices, mj.triangles, mj.sigma_edges, mj.robin_edges);
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Chain tagged boundary edges into an ordered vertex polyline.
/// Returns the vertex sequence and whether the chain is closed.
pub fn boundary_polyline(edges: &[[usize; 2]]) -> Result<(Vec<usize>, bool), MeshError> {
    use std::collections::HashMap;
    if edges.is_empty() {
        return Err(MeshError::DegenerateDomain("no edges to chain".into()));
    }
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for e in edges {
        adj.entry(e[0]).or_default().push(e[1]);
        adj.entry(e[1]).or_default().push(e[0]);
    }
    let start = adj
        .iter()
        .find(|(_, nbrs)| nbrs.len() == 1)
        .map(|(&v, _)| v)
        .unwrap_or(edges[0][0]);
    let closed = adj.values().all(|nbrs| nbrs.len() == 2);
    let mut chain = vec![start];
    let mut prev = usize::MAX;
    let mut cur = start;
    loop {
        let nbrs = &adj[&cur];
        let next = match nbrs.iter().find(|&&v| v != prev) {
            Some(&v) => v,
            None => break,
        };
        if next == start {
            break;
        }
        chain.push(next);
        prev = cur;
        cur = next;
        if chain.len() > edges.len() + 1 {
            return Err(MeshError::DegenerateDomain("boundary chain does not close".into()));
        }
    }
    if chain.len() != edges.len() + if closed { 0 } else { 1 } {
        return Err(MeshError::DegenerateDomain("boundary edges form multiple chains".into()));
    }
    Ok((chain, closed))
}

/// Structured patch of equilateral triangles over a parallelogram,
/// `nx` columns by `ny` rows with edge `h`, based at `origin`.
/// Bottom edge is tagged sigma, the rest robin.
pub fn equilateral_patch(origin: [f64; 2], nx: usize, ny: usize, h: f64) -> Mesh {
    let dy = h * 3.0f64.sqrt() / 2.0;
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([origin[0] + i as f64 * h + j as f64 * 0.5 * h, origin[1] + j as f64 * dy]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
            triangles.push([idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let mut sigma_edges = Vec::new();
    let mut robin_edges = Vec::new();
    for i in 0..nx {
        sigma_edges.push([idx(i, 0), idx(i + 1, 0)]);
    }
    for j in 0..ny {
        robin_edges.push([idx(0, j + 1), idx(0, j)]);
        robin_edges.push([idx(nx, j), idx(nx, j + 1)]);
    }
    for i in 0..nx {
        robin_edges.push([idx(i + 1, ny), idx(i, ny)]);
    }
    Mesh::from_raw(Model::HalfSpace, -1.0, vertices, triangles, sigma_edges, robin_edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SpaceForm, SupportSurface};

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

    fn horocap_spec() -> DomainSpec {
        DomainSpec {
            chart: SpaceForm::hyperbolic_half_space(2),
            support: SupportSurface::horosphere(),
            shape: DomainShape::TwoCurves {
                sigma: Curve::Circle { center: [0.0, 1.0], radius: 0.5 },
                robin: Curve::Line { point: [0.0, 1.0], normal: [0.0, -1.0] },
            },
            graded_corner: None,
        }
    }

    #[test]
    fn appendix_domain_builds() {
        let mesh = build_domain(&appendix_spec(), 0.05).unwrap();
        mesh.validate().unwrap();
        assert!(!mesh.sigma_edges.is_empty());
        assert!(!mesh.robin_edges.is_empty());
        assert_eq!(mesh.gamma_vertices.len(), 2);
        // gamma vertices are the exact circle intersections (+-2/5, 1/5)
        for &g in &mesh.gamma_vertices {
            let p = mesh.vertices[g];
            assert!((p[0].abs() - 0.4).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12, "{p:?}");
        }
        let q = mesh.quality().unwrap();
        assert!(q.min_angle_deg > 15.0, "min angle {}", q.min_angle_deg);
        assert!(mesh.h_max <= 0.05 * 1.8, "h_max {}", mesh.h_max);
    }

    #[test]
    fn orthogonal_cap_corner_angle() {
        let mesh = build_domain(&horocap_spec(), 0.03).unwrap();
        for &a in &mesh.gamma_angles {
            assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-9, "angle {a}");
        }
    }

    #[test]
    fn untagged_polygon_edge_rejected() {
        let spec = DomainSpec {
            chart: SpaceForm::hyperbolic_half_space(2),
            support: SupportSurface::horosphere(),
            shape: DomainShape::Polygon {
                vertices: vec![[0.0, 1.0], [1.0, 1.0], [0.5, 2.0]],
                tags: vec![Some(EdgeTag::Sigma), None, Some(EdgeTag::Robin)],
            },
            graded_corner: None,
        };
        assert!(matches!(build_domain(&spec, 0.2), Err(MeshError::DegenerateDomain(_))));
    }

    #[test]
    fn refine_quadruples_and_snaps() {
        let mesh = build_domain(&horocap_spec(), 0.1).unwrap();
        let fine = mesh.refine();
        fine.validate().unwrap();
        assert_eq!(fine.triangles.len(), 4 * mesh.triangles.len());
        assert_eq!(fine.gamma_vertices, mesh.gamma_vertices);
        let (sigma, _) = mesh.curves.unwrap();
        for e in &fine.sigma_edges {
            for &v in e {
                assert!(sigma.signed(fine.vertices[v]).abs() <= BOUNDARY_SNAP_TOL);
            }
        }
    }

    #[test]
    fn metric_area_converges_under_refinement() {
        // hyperbolic area of the orthogonal cap domain via refinement
        let mut mesh = build_domain(&horocap_spec(), 0.08).unwrap();
        let mut areas = vec![mesh.metric_area().unwrap()];
        for _ in 0..3 {
            mesh = mesh.refine();
            areas.push(mesh.metric_area().unwrap());
        }
        let d1 = (areas[1] - areas[2]).abs();
        let d2 = (areas[2] - areas[3]).abs();
        assert!(d1 / d2 >= 3.5, "area differences {d1} {d2}");
    }

    #[test]
    fn equilateral_patch_quality() {
        let mesh = equilateral_patch([0.0, 1.0], 4, 3, 0.25);
        mesh.validate().unwrap();
        let q = mesh.quality().unwrap();
        assert!((q.min_angle_deg - 60.0).abs() < 1e-9);
        assert!((q.max_angle_deg - 60.0).abs() < 1e-9);
    }

    #[test]
    fn horocycle_segment_metric_length() {
        // sigma of this patch is the segment x1 in [0,1] on x2 = 1,
        // where e^w = 1: hyperbolic length 1
        let mesh = equilateral_patch([0.0, 1.0], 10, 3, 0.1);
        let q = mesh.quality().unwrap();
        assert!((q.sigma_length - 1.0).abs() < 1e-12, "{}", q.sigma_length);
    }

    #[test]
    fn sigma_metric_length_converges_to_quadrature_oracle() {
        // independent 1-D adaptive quadrature of int e^w ds over the
        // sigma arc of the orthogonal cap (upper half circle r=1/2 at
        // height 1): e^w = 1/x2 along the circle
        let exact = {
            let n = 1 << 16;
            let mut total = 0.0;
            // the arc above x2 = 1 spans angles (0, pi)
            for k in 0..n {
                let a = std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                let x2 = 1.0 + 0.5 * a.sin();
                total += (1.0 / x2) * (0.5 * std::f64::consts::PI / n as f64);
            }
            total
        };
        let mut mesh = build_domain(&horocap_spec(), 0.08).unwrap();
        let mut err_prev = f64::INFINITY;
        for _ in 0..3 {
            mesh = mesh.refine();
            let err = (mesh.quality().unwrap().sigma_length - exact).abs();
            assert!(err < err_prev);
            err_prev = err;
        }
        assert!(err_prev < 1e-4, "residual {err_prev}");
    }

    #[test]
    fn json_round_trip() {
        let mesh = build_domain(&appendix_spec(), 0.08).unwrap();
        let v = mesh.to_json();
        let back = Mesh::from_json(&v).unwrap();
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert_eq!(back.triangles, mesh.triangles);
        assert_eq!(back.sigma_edges, mesh.sigma_edges);
        assert_eq!(back.gamma_vertices, mesh.gamma_vertices);
    }

    #[test]
    fn outward_normals_point_away_from_triangles() {
        let mesh = build_domain(&appendix_spec(), 0.06).unwrap();
        use std::collections::HashMap;
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        for (ti, t) in mesh.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                owner.insert((a.min(b), a.max(b)), ti);
            }
        }
        for e in mesh.sigma_edges.iter().chain(&mesh.robin_edges) {
            let n = mesh.edge_normal(*e);
            let ti = owner[&(e[0].min(e[1]), e[0].max(e[1]))];
            let c = mesh.centroid(ti);
            let m = midpoint(mesh.vertices[e[0]], mesh.vertices[e[1]]);
            assert!(n[0] * (c[0] - m[0]) + n[1] * (c[1] - m[1]) < 0.0);
        }
    }
}
