//! Closed-form geometry of the conformal models.
//!
//! Each model carries a metric `g = e^{2w} * delta` on a subset of R^n.
//! Everything here is evaluated from exact formulas (conformal factor,
//! Christoffel symbols, Killing fields and their potentials); no finite
//! differences enter the defect computations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points closer than this to the model boundary (`x_n = 0`, `|x| = 1`)
/// are rejected; the conformal factor blows up there.
pub const ADMISSIBLE_MARGIN: f64 = 1e-9;

/// Residual threshold for "this point lies on the support surface".
pub const ON_SUPPORT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    HalfSpace,
    PoincareBall,
    StereographicSphere,
    Euclidean,
}

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("point is outside the admissible region of the {0:?} model")]
    InadmissiblePoint(Model),
    #[error("no closed-form Killing pair for {kind:?} in {model:?}")]
    UnsupportedCase { kind: SupportKind, model: Model },
    #[error("point is not on the support surface (level residual {0:.3e})")]
    NotOnSupport(f64),
    #[error("invalid space form parameters: {0}")]
    BadSpaceForm(String),
    #[error("invalid support surface parameters: {0}")]
    BadSupport(String),
}

/// A simply connected space form of curvature `K` in a conformal chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceForm {
    /// Sectional curvature, one of -1, 0, +1.
    pub curvature: f64,
    /// Ambient dimension `n >= 2`.
    pub dim: usize,
    pub model: Model,
}

impl SpaceForm {
    pub fn new(curvature: f64, dim: usize, model: Model) -> Result<Self, GeomError> {
        if dim < 2 {
            return Err(GeomError::BadSpaceForm(format!("dim {dim} < 2")));
        }
        let ok = match model {
            Model::HalfSpace | Model::PoincareBall => curvature == -1.0,
            Model::StereographicSphere => curvature == 1.0,
            Model::Euclidean => curvature == 0.0,
        };
        if !ok {
            return Err(GeomError::BadSpaceForm(format!(
                "model {model:?} incompatible with K = {curvature}"
            )));
        }
        Ok(SpaceForm { curvature, dim, model })
    }

    pub fn hyperbolic_half_space(dim: usize) -> Self {
        Self::new(-1.0, dim, Model::HalfSpace).unwrap()
    }

    pub fn hyperbolic_ball(dim: usize) -> Self {
        Self::new(-1.0, dim, Model::PoincareBall).unwrap()
    }

    pub fn spherical(dim: usize) -> Self {
        Self::new(1.0, dim, Model::StereographicSphere).unwrap()
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(0.0, dim, Model::Euclidean).unwrap()
    }

    pub fn is_admissible(&self, p: &[f64]) -> bool {
        debug_assert_eq!(p.len(), self.dim);
        match self.model {
            Model::HalfSpace => p[self.dim - 1] > ADMISSIBLE_MARGIN,
            Model::PoincareBall => norm_sq(p) < (1.0 - ADMISSIBLE_MARGIN) * (1.0 - ADMISSIBLE_MARGIN),
            Model::StereographicSphere | Model::Euclidean => true,
        }
    }

    fn check(&self, p: &[f64]) -> Result<(), GeomError> {
        if self.is_admissible(p) {
            Ok(())
        } else {
            Err(GeomError::InadmissiblePoint(self.model))
        }
    }

    /// Conformal exponent `w` and its Euclidean gradient at `p`,
    /// so that `g = e^{2w} * delta`.
    pub fn conformal_factor(&self, p: &[f64]) -> Result<(f64, Vec<f64>), GeomError> {
        self.check(p)?;
        let n = self.dim;
        match self.model {
            Model::HalfSpace => {
                let xn = p[n - 1];
                let mut grad = vec![0.0; n];
                grad[n - 1] = -1.0 / xn;
                Ok((-xn.ln(), grad))
            }
            Model::PoincareBall => {
                let s = 1.0 - norm_sq(p);
                let grad = p.iter().map(|&x| 2.0 * x / s).collect();
                Ok(((2.0 / s).ln(), grad))
            }
            Model::StereographicSphere => {
                let t = 1.0 + norm_sq(p);
                let grad = p.iter().map(|&x| -2.0 * x / t).collect();
                Ok(((2.0 / t).ln(), grad))
            }
            Model::Euclidean => Ok((0.0, vec![0.0; n])),
        }
    }

    /// `e^{w}` at `p`.
    pub fn scale(&self, p: &[f64]) -> Result<f64, GeomError> {
        Ok(self.conformal_factor(p)?.0.exp())
    }

    /// Laplace-Beltrami of a scalar field from its exact Euclidean
    /// gradient and Hessian: `e^{-2w} (tr H + (n-2) grad w . grad u)`.
    pub fn laplace_beltrami(
        &self,
        p: &[f64],
        grad_u: &[f64],
        hess_u: &[Vec<f64>],
    ) -> Result<f64, GeomError> {
        let (omega, grad_omega) = self.conformal_factor(p)?;
        let n = self.dim as f64;
        let trace: f64 = (0..self.dim).map(|i| hess_u[i][i]).sum();
        let cross = dot(&grad_omega, grad_u);
        Ok((-2.0 * omega).exp() * (trace + (n - 2.0) * cross))
    }

    /// Covariant Hessian of a scalar field with Euclidean gradient `g`
    /// and Hessian `h` at `p`, in flat coordinate components:
    /// `H_ij - Gamma^k_ij g_k`.
    pub fn covariant_hessian(
        &self,
        p: &[f64],
        g: &[f64],
        h: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, GeomError> {
        let (_, w) = self.conformal_factor(p)?;
        let wg = dot(&w, g);
        let n = self.dim;
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                // Gamma^k_ij g_k = w_i g_j + w_j g_i - delta_ij <w, g>
                let corr = w[i] * g[j] + w[j] * g[i] - if i == j { wg } else { 0.0 };
                out[i][j] = h[i][j] - corr;
            }
        }
        Ok(out)
    }

    /// Principal curvature in `g` of a curve/umbilical hypersurface with
    /// flat curvature `k_euclid` and flat unit normal `n_euclid` at `p`:
    /// `e^{-w} (k + dw(N))`.
    pub fn curvature_transform(
        &self,
        k_euclid: f64,
        n_euclid: &[f64],
        p: &[f64],
    ) -> Result<f64, GeomError> {
        let (omega, grad_omega) = self.conformal_factor(p)?;
        Ok((-omega).exp() * (k_euclid + dot(&grad_omega, n_euclid)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    GeodesicSphere,
    Horosphere,
    Equidistant,
    GeodesicHyperplane,
}

/// An umbilical support hypersurface `S` with principal curvature `kappa`,
/// embedded in a fixed chart position:
///   - horosphere: `x_n = 1` in the half-space model;
///   - equidistant: `x_1 tan(theta) + x_n = 1` in the half-space model;
///   - geodesic sphere: `|x| = R` in the ball/stereographic models.
///
/// `exterior = false` orients the outward normal of the interior side
/// `B^int`; `exterior = true` flips both the normal and the Robin sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportSurface {
    pub kind: SupportKind,
    pub kappa: f64,
    pub r_model: Option<f64>,
    pub theta: Option<f64>,
    pub exterior: bool,
}

impl SupportSurface {
    pub fn horosphere() -> Self {
        SupportSurface { kind: SupportKind::Horosphere, kappa: 1.0, r_model: None, theta: None, exterior: false }
    }

    pub fn equidistant(theta: f64) -> Result<Self, GeomError> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
            return Err(GeomError::BadSupport(format!("theta {theta} outside [0, pi/2)")));
        }
        Ok(SupportSurface {
            kind: SupportKind::Equidistant,
            kappa: theta.cos(),
            r_model: Some(1.0),
            theta: Some(theta),
            exterior: false,
        })
    }

    /// Geodesic sphere in the hyperbolic ball model with Euclidean model
    /// radius `r_model = tanh(R/2)`; its principal curvature is
    /// `coth R = (1 + r^2) / (2 r) > 1`.
    pub fn geodesic_sphere_hyperbolic(r_model: f64) -> Result<Self, GeomError> {
        if !(r_model > 0.0 && r_model < 1.0) {
            return Err(GeomError::BadSupport(format!("ball model radius {r_model} outside (0,1)")));
        }
        Ok(SupportSurface {
            kind: SupportKind::GeodesicSphere,
            kappa: (1.0 + r_model * r_model) / (2.0 * r_model),
            r_model: Some(r_model),
            theta: None,
            exterior: false,
        })
    }

    /// Geodesic sphere in the stereographic model with model radius
    /// `r_model = tan(R/2) < 1`; its principal curvature is
    /// `cot R = (1 - r^2) / (2 r) > 0`.
    pub fn geodesic_sphere_spherical(r_model: f64) -> Result<Self, GeomError> {
        if !(r_model > 0.0 && r_model < 1.0) {
            return Err(GeomError::BadSupport(format!(
                "stereographic model radius {r_model} outside (0,1)"
            )));
        }
        Ok(SupportSurface {
            kind: SupportKind::GeodesicSphere,
            kappa: (1.0 - r_model * r_model) / (2.0 * r_model),
            r_model: Some(r_model),
            theta: None,
            exterior: false,
        })
    }

    /// Validate the kind/kappa invariants against a chart.
    pub fn validate(&self, chart: &SpaceForm) -> Result<(), GeomError> {
        match self.kind {
            SupportKind::Horosphere => {
                if self.kappa != 1.0 {
                    return Err(GeomError::BadSupport("horosphere requires kappa = 1".into()));
                }
            }
            SupportKind::Equidistant => {
                if !(self.kappa > 0.0 && self.kappa < 1.0) {
                    return Err(GeomError::BadSupport("equidistant requires kappa in (0,1)".into()));
                }
            }
            SupportKind::GeodesicSphere => {
                if chart.curvature == -1.0 && self.kappa <= 1.0 {
                    return Err(GeomError::BadSupport("hyperbolic geodesic sphere requires kappa > 1".into()));
                }
                if chart.curvature == 1.0 && self.kappa <= 0.0 {
                    return Err(GeomError::BadSupport("spherical geodesic sphere requires kappa > 0".into()));
                }
            }
            SupportKind::GeodesicHyperplane => {
                if self.kappa != 0.0 {
                    return Err(GeomError::BadSupport("geodesic hyperplane requires kappa = 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Signed level function whose zero set is `S` in the chart; negative
    /// on the `B^int` side. The gradient direction is the flat outward
    /// normal of `B^int`.
    pub fn level(&self, chart: &SpaceForm, p: &[f64]) -> f64 {
        let n = chart.dim;
        let raw = match (self.kind, chart.model) {
            (SupportKind::Horosphere, Model::HalfSpace) => 1.0 - p[n - 1],
            (SupportKind::Equidistant, Model::HalfSpace) => {
                let theta = self.theta.expect("equidistant carries theta");
                theta.cos() - p[0] * theta.sin() - p[n - 1] * theta.cos()
            }
            (SupportKind::GeodesicSphere, Model::PoincareBall)
            | (SupportKind::GeodesicSphere, Model::StereographicSphere) => {
                norm_sq(p).sqrt() - self.r_model.expect("geodesic sphere carries r_model")
            }
            (SupportKind::GeodesicHyperplane, Model::HalfSpace) => norm_sq(p).sqrt() - 1.0,
            _ => f64::NAN,
        };
        if self.exterior {
            -raw
        } else {
            raw
        }
    }

    /// Flat unit normal of `S` at `p` pointing out of `B^int`
    /// (or out of `B^ext` when `exterior` is set).
    pub fn flat_normal(&self, chart: &SpaceForm, p: &[f64]) -> Vec<f64> {
        let n = chart.dim;
        let mut nd = match (self.kind, chart.model) {
            (SupportKind::Horosphere, Model::HalfSpace) => {
                let mut v = vec![0.0; n];
                v[n - 1] = -1.0;
                v
            }
            (SupportKind::Equidistant, Model::HalfSpace) => {
                let theta = self.theta.expect("equidistant carries theta");
                let mut v = vec![0.0; n];
                v[0] = -theta.sin();
                v[n - 1] = -theta.cos();
                v
            }
            (SupportKind::GeodesicSphere, Model::PoincareBall)
            | (SupportKind::GeodesicSphere, Model::StereographicSphere) => {
                let r = norm_sq(p).sqrt();
                p.iter().map(|&x| x / r).collect()
            }
            _ => vec![f64::NAN; n],
        };
        if self.exterior {
            for v in nd.iter_mut() {
                *v = -*v;
            }
        }
        nd
    }

    /// Closest point on `S` in model coordinates.
    pub fn project(&self, chart: &SpaceForm, p: &[f64]) -> Vec<f64> {
        let n = chart.dim;
        match (self.kind, chart.model) {
            (SupportKind::Horosphere, Model::HalfSpace) => {
                let mut q = p.to_vec();
                q[n - 1] = 1.0;
                q
            }
            (SupportKind::Equidistant, Model::HalfSpace) => {
                let theta = self.theta.expect("equidistant carries theta");
                let mut nrm = vec![0.0; n];
                nrm[0] = theta.sin();
                nrm[n - 1] = theta.cos();
                let mut e = vec![0.0; n];
                e[n - 1] = 1.0;
                let d: f64 = dot(&nrm, p) - dot(&nrm, &e);
                p.iter().zip(&nrm).map(|(&x, &m)| x - d * m).collect()
            }
            (SupportKind::GeodesicSphere, Model::PoincareBall)
            | (SupportKind::GeodesicSphere, Model::StereographicSphere) => {
                let r_target = self.r_model.expect("geodesic sphere carries r_model");
                let r = norm_sq(p).sqrt();
                p.iter().map(|&x| x * r_target / r).collect()
            }
            _ => p.to_vec(),
        }
    }
}

/// Conformal Killing field value `X`, its potential `V` and (in the ball
/// model) the auxiliary potential `V0 = (1+|x|^2)/(1-|x|^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KillingData {
    pub x: Vec<f64>,
    pub v: f64,
    pub v0: Option<f64>,
}

/// Which of the closed-form Killing cases applies to `(support, chart)`.
fn killing_case(support: &SupportSurface, chart: &SpaceForm) -> Result<(), GeomError> {
    match (support.kind, chart.model) {
        (SupportKind::GeodesicSphere, Model::PoincareBall)
        | (SupportKind::GeodesicSphere, Model::StereographicSphere)
        | (SupportKind::Horosphere, Model::HalfSpace)
        | (SupportKind::Equidistant, Model::HalfSpace) => Ok(()),
        (kind, model) => Err(GeomError::UnsupportedCase { kind, model }),
    }
}

pub fn killing_pair(
    support: &SupportSurface,
    chart: &SpaceForm,
    p: &[f64],
) -> Result<KillingData, GeomError> {
    killing_case(support, chart)?;
    chart.check(p)?;
    let n = chart.dim;
    match chart.model {
        Model::HalfSpace => {
            // X = x - E_n, V = 1/x_n
            let mut x = p.to_vec();
            x[n - 1] -= 1.0;
            Ok(KillingData { x, v: 1.0 / p[n - 1], v0: None })
        }
        Model::PoincareBall | Model::StereographicSphere => {
            let r2 = support.r_model.expect("geodesic sphere carries r_model").powi(2);
            let q2 = norm_sq(p);
            let xn = p[n - 1];
            let (a, v, v0) = if chart.model == Model::PoincareBall {
                let s = 1.0 - q2;
                (2.0 / (1.0 - r2), 2.0 * xn / s, Some((1.0 + q2) / s))
            } else {
                (2.0 / (1.0 + r2), 2.0 * xn / (1.0 + q2), None)
            };
            let mut x: Vec<f64> = p.iter().map(|&xi| a * xn * xi).collect();
            x[n - 1] -= a * 0.5 * (q2 + r2);
            Ok(KillingData { x, v, v0 })
        }
        Model::Euclidean => Err(GeomError::UnsupportedCase { kind: support.kind, model: chart.model }),
    }
}

/// Euclidean Jacobian `d_i X^k` of the Killing field, in closed form.
fn killing_jacobian(support: &SupportSurface, chart: &SpaceForm, p: &[f64]) -> Vec<Vec<f64>> {
    let n = chart.dim;
    let mut jac = vec![vec![0.0; n]; n];
    match chart.model {
        Model::HalfSpace => {
            for (i, row) in jac.iter_mut().enumerate() {
                row[i] = 1.0;
            }
        }
        Model::PoincareBall | Model::StereographicSphere => {
            let r2 = support.r_model.expect("geodesic sphere carries r_model").powi(2);
            let a = if chart.model == Model::PoincareBall {
                2.0 / (1.0 - r2)
            } else {
                2.0 / (1.0 + r2)
            };
            let xn = p[n - 1];
            for i in 0..n {
                for k in 0..n {
                    let mut d = 0.0;
                    if i == n - 1 {
                        d += p[k];
                    }
                    if i == k {
                        d += xn;
                    }
                    if k == n - 1 {
                        d -= p[i];
                    }
                    jac[i][k] = a * d;
                }
            }
        }
        Model::Euclidean => unreachable!("killing_case rejects Euclidean"),
    }
    jac
}

/// Frobenius norm (in the orthonormal frame of `g`) of
/// `1/2 (nabla_i X_j + nabla_j X_i) - V g_ij` at `p`.
pub fn killing_defect(
    support: &SupportSurface,
    chart: &SpaceForm,
    p: &[f64],
) -> Result<f64, GeomError> {
    let kd = killing_pair(support, chart, p)?;
    let m = covariant_jacobian(support, chart, p)?;
    let n = chart.dim;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let sym = 0.5 * (m[i][j] + m[j][i]) - if i == j { kd.v } else { 0.0 };
            sum += sym * sym;
        }
    }
    Ok(sum.sqrt())
}

/// `nabla_i X^j` in flat components: `d_i X^j + Gamma^j_ik X^k`.
fn covariant_jacobian(
    support: &SupportSurface,
    chart: &SpaceForm,
    p: &[f64],
) -> Result<Vec<Vec<f64>>, GeomError> {
    killing_case(support, chart)?;
    let kd = killing_pair(support, chart, p)?;
    let (_, w) = chart.conformal_factor(p)?;
    let jac = killing_jacobian(support, chart, p);
    let n = chart.dim;
    let wx = dot(&w, &kd.x);
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            // Gamma^j_ik X^k = w_i X^j + w_j' ... expanded:
            // delta_jk w_i X^k + delta_ij w_k X^k ... use
            // Gamma^j_ik = delta_ij w_k + delta_jk w_i - delta_ik w_j
            let gamma_x = w[i] * kd.x[j] + if i == j { wx } else { 0.0 } - w[j] * kd.x[i];
            m[i][j] = jac[i][j] + gamma_x;
        }
    }
    Ok(m)
}

/// `div_g X - n V`; vanishes identically for the closed-form pairs.
pub fn divergence_defect(
    support: &SupportSurface,
    chart: &SpaceForm,
    p: &[f64],
) -> Result<f64, GeomError> {
    let kd = killing_pair(support, chart, p)?;
    let m = covariant_jacobian(support, chart, p)?;
    let trace: f64 = (0..chart.dim).map(|i| m[i][i]).sum();
    Ok(trace - chart.dim as f64 * kd.v)
}

/// `|g(X, N)|` at a point on the support surface.
pub fn tangency_defect(
    support: &SupportSurface,
    chart: &SpaceForm,
    p_on_s: &[f64],
) -> Result<f64, GeomError> {
    killing_case(support, chart)?;
    let res = support.level(chart, p_on_s).abs();
    if res > ON_SUPPORT_TOL {
        return Err(GeomError::NotOnSupport(res));
    }
    let kd = killing_pair(support, chart, p_on_s)?;
    let nd = support.flat_normal(chart, p_on_s);
    let (omega, _) = chart.conformal_factor(p_on_s)?;
    // g(X, N) with N the g-unit normal e^{-w} N_delta
    Ok((omega.exp() * dot(&kd.x, &nd)).abs())
}

/// Exact Euclidean gradient and Hessian of the potential `V`.
fn potential_derivatives(
    support: &SupportSurface,
    chart: &SpaceForm,
    p: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = chart.dim;
    match chart.model {
        Model::HalfSpace => {
            let xn = p[n - 1];
            let mut grad = vec![0.0; n];
            grad[n - 1] = -1.0 / (xn * xn);
            let mut hess = vec![vec![0.0; n]; n];
            hess[n - 1][n - 1] = 2.0 / (xn * xn * xn);
            (grad, hess)
        }
        Model::PoincareBall | Model::StereographicSphere => {
            // V = 2 x_n / s with s = 1 -+ |x|^2 (sign by model)
            let sgn = if chart.model == Model::PoincareBall { 1.0 } else { -1.0 };
            let s = 1.0 - sgn * norm_sq(p);
            let xn = p[n - 1];
            let mut grad = vec![0.0; n];
            for i in 0..n {
                grad[i] = sgn * 4.0 * xn * p[i] / (s * s);
            }
            grad[n - 1] += 2.0 / s;
            let mut hess = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let mut h = 16.0 * xn * p[i] * p[j] / (s * s * s);
                    if i == j {
                        h += sgn * 4.0 * xn / (s * s);
                    }
                    if i == n - 1 {
                        h += sgn * 4.0 * p[j] / (s * s);
                    }
                    if j == n - 1 {
                        h += sgn * 4.0 * p[i] / (s * s);
                    }
                    hess[i][j] = h;
                }
            }
            let _ = support;
            (grad, hess)
        }
        Model::Euclidean => (vec![0.0; n], vec![vec![0.0; n]; n]),
    }
}

/// Defects of the Killing-potential identities at `p`:
/// `hessian_defect = || nabla^2 V + K V g ||` (orthonormal frame) and,
/// when `p` lies on `S`, `neumann_defect = | d_N V - kappa V |`.
pub fn potential_defects(
    support: &SupportSurface,
    chart: &SpaceForm,
    p: &[f64],
) -> Result<(f64, Option<f64>), GeomError> {
    let kd = killing_pair(support, chart, p)?;
    let (grad, hess) = potential_derivatives(support, chart, p);
    let cov = chart.covariant_hessian(p, &grad, &hess)?;
    let (omega, _) = chart.conformal_factor(p)?;
    let e2w = (2.0 * omega).exp();
    let n = chart.dim;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            // orthonormal frame: e^{-2w} (cov_ij + K V e^{2w} delta_ij)
            let d = cov[i][j] / e2w + if i == j { chart.curvature * kd.v } else { 0.0 };
            sum += d * d;
        }
    }
    let hessian_defect = sum.sqrt();

    let neumann_defect = if support.level(chart, p).abs() <= ON_SUPPORT_TOL {
        let nd = support.flat_normal(chart, p);
        let dnv = (-omega).exp() * dot(&nd, &grad);
        let kappa_signed = if support.exterior { -support.kappa } else { support.kappa };
        Some((dnv - kappa_signed * kd.v).abs())
    } else {
        None
    };
    Ok((hessian_defect, neumann_defect))
}

/// `|| nabla^2 V0 - V0 g ||` (orthonormal frame) for the auxiliary ball
/// potential `V0 = (1+|x|^2)/(1-|x|^2)`.
pub fn v0_hessian_defect(chart: &SpaceForm, p: &[f64]) -> Result<f64, GeomError> {
    if chart.model != Model::PoincareBall {
        return Err(GeomError::UnsupportedCase {
            kind: SupportKind::GeodesicSphere,
            model: chart.model,
        });
    }
    chart.check(p)?;
    let n = chart.dim;
    let s = 1.0 - norm_sq(p);
    let v0 = (1.0 + norm_sq(p)) / s;
    let grad: Vec<f64> = p.iter().map(|&x| 4.0 * x / (s * s)).collect();
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            hess[i][j] = 16.0 * p[i] * p[j] / (s * s * s) + if i == j { 4.0 / (s * s) } else { 0.0 };
        }
    }
    let cov = chart.covariant_hessian(p, &grad, &hess)?;
    let e2w = (2.0 * (2.0 / s).ln()).exp();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = cov[i][j] / e2w - if i == j { v0 } else { 0.0 };
            sum += d * d;
        }
    }
    Ok(sum.sqrt())
}

/// A twice-differentiable scalar field with exact derivatives, used as a
/// callback by the pointwise operators and the manufactured-solution
/// machinery.
pub trait ScalarField {
    fn value(&self, p: &[f64]) -> f64;
    fn gradient(&self, p: &[f64]) -> Vec<f64>;
    fn hessian(&self, p: &[f64]) -> Vec<Vec<f64>>;
}

/// `laplace_beltrami` on a callback field.
pub fn laplace_beltrami_field(
    chart: &SpaceForm,
    field: &dyn ScalarField,
    p: &[f64],
) -> Result<f64, GeomError> {
    let grad = field.gradient(p);
    let hess = field.hessian(p);
    chart.laplace_beltrami(p, &grad, &hess)
}

pub(crate) fn norm_sq(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half_space_2d() -> SpaceForm {
        SpaceForm::hyperbolic_half_space(2)
    }

    #[test]
    fn conformal_factor_examples() {
        let (w, gw) = half_space_2d().conformal_factor(&[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(w, 0.0);
        assert_abs_diff_eq!(gw[0], 0.0);
        assert_abs_diff_eq!(gw[1], -1.0);

        let ball = SpaceForm::hyperbolic_ball(2);
        let (w, gw) = ball.conformal_factor(&[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w, 2.0_f64.ln());
        assert_abs_diff_eq!(gw[0], 0.0);
        assert_abs_diff_eq!(gw[1], 0.0);

        let sph = SpaceForm::spherical(2);
        let (w, _) = sph.conformal_factor(&[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w, 2.0_f64.ln());
    }

    #[test]
    fn inadmissible_points_rejected() {
        let hs = half_space_2d();
        assert_eq!(
            hs.conformal_factor(&[0.0, 0.0]).unwrap_err(),
            GeomError::InadmissiblePoint(Model::HalfSpace)
        );
        let ball = SpaceForm::hyperbolic_ball(2);
        assert!(ball.conformal_factor(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn killing_pair_examples() {
        // horosphere / half-space, p = (0, 2)
        let kd = killing_pair(&SupportSurface::horosphere(), &half_space_2d(), &[0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(kd.x[0], 0.0);
        assert_abs_diff_eq!(kd.x[1], 1.0);
        assert_abs_diff_eq!(kd.v, 0.5);

        // geodesic sphere R = 1/2 in the ball, p = 0
        let sup = SupportSurface::geodesic_sphere_hyperbolic(0.5).unwrap();
        let kd = killing_pair(&sup, &SpaceForm::hyperbolic_ball(2), &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(kd.x[0], 0.0);
        assert_abs_diff_eq!(kd.x[1], -1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kd.v, 0.0);

        // equidistant theta = pi/4, p = (1, 1): case-2 closed form
        let sup = SupportSurface::equidistant(std::f64::consts::FRAC_PI_4).unwrap();
        let kd = killing_pair(&sup, &half_space_2d(), &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(kd.x[0], 1.0);
        assert_abs_diff_eq!(kd.x[1], 0.0);
        assert_abs_diff_eq!(kd.v, 1.0);
    }

    fn sample_cases() -> Vec<(SupportSurface, SpaceForm)> {
        vec![
            (SupportSurface::horosphere(), half_space_2d()),
            (SupportSurface::equidistant(0.5).unwrap(), SpaceForm::hyperbolic_half_space(3)),
            (SupportSurface::geodesic_sphere_hyperbolic(0.5).unwrap(), SpaceForm::hyperbolic_ball(2)),
            (SupportSurface::geodesic_sphere_hyperbolic(0.7).unwrap(), SpaceForm::hyperbolic_ball(3)),
            (SupportSurface::geodesic_sphere_spherical(0.6).unwrap(), SpaceForm::spherical(2)),
            (SupportSurface::geodesic_sphere_spherical(0.4).unwrap(), SpaceForm::spherical(3)),
        ]
    }

    fn random_admissible(chart: &SpaceForm, rng: &mut impl Rng) -> Vec<f64> {
        let n = chart.dim;
        match chart.model {
            Model::HalfSpace => {
                let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                p[n - 1] = rng.gen_range(0.05..3.0);
                p
            }
            Model::PoincareBall => loop {
                let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.95..0.95)).collect();
                if norm_sq(&p) < 0.9 {
                    return p;
                }
            },
            Model::StereographicSphere => (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            Model::Euclidean => (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        }
    }

    #[test]
    fn killing_and_potential_defects_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (sup, chart) in sample_cases() {
            for _ in 0..1000 {
                let p = random_admissible(&chart, &mut rng);
                assert!(killing_defect(&sup, &chart, &p).unwrap() < 1e-10, "{sup:?} {chart:?} {p:?}");
                let (hd, _) = potential_defects(&sup, &chart, &p).unwrap();
                assert!(hd < 1e-10, "{sup:?} {chart:?} {p:?} hd={hd}");
                assert!(divergence_defect(&sup, &chart, &p).unwrap().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn killing_defect_zero_at_origin() {
        let sup = SupportSurface::geodesic_sphere_hyperbolic(0.5).unwrap();
        let d = killing_defect(&sup, &SpaceForm::hyperbolic_ball(2), &[0.0, 0.0]).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn tangency_on_support() {
        let hs = half_space_2d();
        let d = tangency_defect(&SupportSurface::horosphere(), &hs, &[3.0, 1.0]).unwrap();
        assert!(d <= 1e-12);

        let sup = SupportSurface::equidistant(std::f64::consts::FRAC_PI_6).unwrap();
        // point on x1 tan(theta) + x2 = 1
        let theta = std::f64::consts::FRAC_PI_6;
        for t in [-0.5_f64, -0.1, 0.3, 0.8] {
            let p = [t, 1.0 - t * theta.tan()];
            if p[1] > 0.01 {
                assert!(tangency_defect(&sup, &hs, &p).unwrap() <= 1e-12);
            }
        }

        let sup = SupportSurface::geodesic_sphere_hyperbolic(0.5).unwrap();
        let ball = SpaceForm::hyperbolic_ball(2);
        assert!(tangency_defect(&sup, &ball, &[0.5, 0.0]).unwrap() <= 1e-12);

        // off-surface point is rejected
        assert!(matches!(
            tangency_defect(&SupportSurface::horosphere(), &hs, &[0.0, 1.5]),
            Err(GeomError::NotOnSupport(_))
        ));
    }

    #[test]
    fn neumann_defect_on_support() {
        let hs = half_space_2d();
        let (_, nd) = potential_defects(&SupportSurface::horosphere(), &hs, &[2.0, 1.0]).unwrap();
        assert!(nd.unwrap() < 1e-12);

        let theta = std::f64::consts::FRAC_PI_6;
        let sup = SupportSurface::equidistant(theta).unwrap();
        let p = [0.4, 1.0 - 0.4 * theta.tan()];
        let (_, nd) = potential_defects(&sup, &hs, &p).unwrap();
        assert!(nd.unwrap() < 1e-12);
    }

    #[test]
    fn v0_defect_vanishes() {
        let ball = SpaceForm::hyperbolic_ball(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = random_admissible(&ball, &mut rng);
            assert!(v0_hessian_defect(&ball, &p).unwrap() < 1e-10);
        }
    }

    struct InverseHeight;
    impl ScalarField for InverseHeight {
        fn value(&self, p: &[f64]) -> f64 {
            1.0 / p[p.len() - 1]
        }
        fn gradient(&self, p: &[f64]) -> Vec<f64> {
            let n = p.len();
            let mut g = vec![0.0; n];
            g[n - 1] = -1.0 / (p[n - 1] * p[n - 1]);
            g
        }
        fn hessian(&self, p: &[f64]) -> Vec<Vec<f64>> {
            let n = p.len();
            let mut h = vec![vec![0.0; n]; n];
            h[n - 1][n - 1] = 2.0 / p[n - 1].powi(3);
            h
        }
    }

    #[test]
    fn laplace_beltrami_examples() {
        let hs = half_space_2d();
        // u = 1/x_n satisfies lap u = n V; at (0,2) with n=2 this is 1
        let lap = laplace_beltrami_field(&hs, &InverseHeight, &[0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(lap, 1.0, epsilon = 1e-14);

        // constants have zero Laplacian
        struct Konst;
        impl ScalarField for Konst {
            fn value(&self, _: &[f64]) -> f64 {
                42.0
            }
            fn gradient(&self, p: &[f64]) -> Vec<f64> {
                vec![0.0; p.len()]
            }
            fn hessian(&self, p: &[f64]) -> Vec<Vec<f64>> {
                vec![vec![0.0; p.len()]; p.len()]
            }
        }
        assert_abs_diff_eq!(laplace_beltrami_field(&hs, &Konst, &[1.0, 0.5]).unwrap(), 0.0);
    }

    /// Central finite-difference Laplace-Beltrami on a callback field,
    /// via lap u = e^{-n w} d_i (e^{(n-2) w} d_i u). Test-only oracle.
    fn laplace_beltrami_fd(chart: &SpaceForm, field: &dyn ScalarField, p: &[f64]) -> f64 {
        let h = 1e-5;
        let n = chart.dim;
        let flux = |q: &[f64], i: usize| -> f64 {
            let (w, _) = chart.conformal_factor(q).unwrap();
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            ((n as f64 - 2.0) * w).exp() * (field.value(&qp) - field.value(&qm)) / (2.0 * h)
        };
        let (w, _) = chart.conformal_factor(p).unwrap();
        let mut div = 0.0;
        for i in 0..n {
            let mut pp = p.to_vec();
            let mut pm = p.to_vec();
            pp[i] += h;
            pm[i] -= h;
            div += (flux(&pp, i) - flux(&pm, i)) / (2.0 * h);
        }
        (-(n as f64) * w).exp() * div
    }

    #[test]
    fn laplace_beltrami_matches_finite_differences() {
        struct Smooth;
        impl ScalarField for Smooth {
            fn value(&self, p: &[f64]) -> f64 {
                (p[0]).sin() * (0.5 * p[1]).exp()
            }
            fn gradient(&self, p: &[f64]) -> Vec<f64> {
                vec![p[0].cos() * (0.5 * p[1]).exp(), 0.5 * p[0].sin() * (0.5 * p[1]).exp()]
            }
            fn hessian(&self, p: &[f64]) -> Vec<Vec<f64>> {
                let e = (0.5 * p[1]).exp();
                vec![
                    vec![-p[0].sin() * e, 0.5 * p[0].cos() * e],
                    vec![0.5 * p[0].cos() * e, 0.25 * p[0].sin() * e],
                ]
            }
        }
        for chart in [half_space_2d(), SpaceForm::hyperbolic_ball(2), SpaceForm::spherical(2)] {
            let p = match chart.model {
                Model::HalfSpace => vec![0.3, 0.8],
                _ => vec![0.2, 0.3],
            };
            let exact = laplace_beltrami_field(&chart, &Smooth, &p).unwrap();
            let fd = laplace_beltrami_fd(&chart, &Smooth, &p);
            assert!(
                (exact - fd).abs() <= 1e-5 * exact.abs().max(1.0),
                "{chart:?}: exact {exact} fd {fd}"
            );
        }
    }

    #[test]
    fn curvature_transform_examples() {
        let hs = half_space_2d();
        // horizontal line x_n = 1 with downward normal is a horocycle
        let k = hs.curvature_transform(0.0, &[0.0, -1.0], &[0.7, 1.0]).unwrap();
        assert_abs_diff_eq!(k, 1.0, epsilon = 1e-14);

        // sloping line x1 tan(theta) + x2 = 1 is an equidistant, kappa = cos(theta)
        let theta: f64 = 0.4;
        let nd = [-theta.sin(), -theta.cos()];
        let p = [0.5, 1.0 - 0.5 * theta.tan()];
        let k = hs.curvature_transform(0.0, &nd, &p).unwrap();
        assert_abs_diff_eq!(k, theta.cos(), epsilon = 1e-14);

        // Euclidean circle center (0, h), radius r: constant curvature h / r
        let (h, r) = (2.0_f64, 0.7_f64);
        for t in 0..32 {
            let a = 2.0 * std::f64::consts::PI * t as f64 / 32.0;
            let p = [r * a.cos(), h + r * a.sin()];
            let nd = [a.cos(), a.sin()];
            let k = hs.curvature_transform(1.0 / r, &nd, &p).unwrap();
            assert_abs_diff_eq!(k, h / r, epsilon = 1e-10);
        }
    }

    #[test]
    fn support_invariants() {
        assert!(SupportSurface::equidistant(2.0).is_err());
        assert!(SupportSurface::geodesic_sphere_hyperbolic(1.5).is_err());
        let sup = SupportSurface::geodesic_sphere_hyperbolic(0.5).unwrap();
        assert!(sup.kappa > 1.0);
        sup.validate(&SpaceForm::hyperbolic_ball(2)).unwrap();
        let mut bad = sup;
        bad.kappa = 0.5;
        assert!(bad.validate(&SpaceForm::hyperbolic_ball(2)).is_err());
    }
}
