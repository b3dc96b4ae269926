//! First eigenvalues of the two eigenvalue problems attached to the
//! mixed Robin-Dirichlet operator:
//!
//! * Robin-Dirichlet: `(A - kappa B_T) phi = lambda M phi` on the free
//!   dofs; `lambda_1 >= nK`, with equality only on the half-ball.
//! * Steklov-Dirichlet: `(A - nK M) phi = mu kappa B_T phi`, solved by
//!   exact Schur reduction of the bulk onto the Robin boundary — the
//!   discrete Dirichlet-to-Neumann matrix — followed by a dense
//!   symmetric eigensolve; `mu_1 >= 1` whenever the bulk is definite.

use crate::fem::{assemble, FemError};
use crate::linalg::{smallest_eigenpairs, LinalgError, SkylineCholesky, SparseSym};
use crate::mesh::Mesh;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("bulk operator A - nK M is not positive definite on free dofs")]
    IndefiniteBulk,
    #[error("no Robin boundary degrees of freedom")]
    EmptyRobin,
    #[error(transparent)]
    Fem(#[from] FemError),
}

impl From<LinalgError> for SpectraError {
    fn from(e: LinalgError) -> SpectraError {
        match e {
            LinalgError::ConvergenceFailure(msg) => SpectraError::ConvergenceFailure(msg),
            LinalgError::NotPositiveDefinite { .. } => SpectraError::IndefiniteBulk,
            other => SpectraError::ConvergenceFailure(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumProblem {
    RobinDirichlet,
    SteklovDirichlet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub problem: SpectrumProblem,
    /// Ascending; `eigenvalues[0]` is the principal one.
    pub eigenvalues: Vec<f64>,
    /// Nodal fields over all mesh vertices (zero on the Dirichlet part).
    pub eigenvectors: Vec<Vec<f64>>,
    /// The analytic lower bound for the scenario (`nK` or 1).
    pub bound_reference: f64,
    /// First eigenvalue minus the bound.
    pub margin: f64,
}

impl SpectrumResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "problem": serde_json::to_value(self.problem).unwrap(),
            "eigenvalues": self.eigenvalues,
            "bound": self.bound_reference,
            "margin": self.margin,
        })
    }
}

pub const EIG_TOL: f64 = 1e-10;
pub const EIG_MAX_ITER: usize = 500;

/// Smallest `k` eigenpairs of `(A - kappa B_T) phi = lambda M phi`.
pub fn robin_dirichlet_spectrum(
    mesh: &Mesh,
    kappa: f64,
    k: usize,
) -> Result<SpectrumResult, SpectraError> {
    assert!(k >= 1);
    let sys = assemble(mesh)?;
    let c = SparseSym::combine(&[(1.0, &sys.stiffness), (-kappa, &sys.robin_mass)])
        .restrict(&sys.free);
    let m = sys.mass.restrict(&sys.free);
    let bound = 2.0 * mesh.curvature;
    // guaranteed below lambda_1
    let shift = bound - 1.0;
    let pairs = smallest_eigenpairs(&c, &m, shift, k, EIG_TOL, EIG_MAX_ITER)?;
    let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let eigenvectors = pairs
        .iter()
        .map(|(_, v)| {
            let mut full = vec![0.0; mesh.vertices.len()];
            for (i, &dof) in sys.free.iter().enumerate() {
                full[dof] = v[i];
            }
            full
        })
        .collect();
    Ok(SpectrumResult {
        problem: SpectrumProblem::RobinDirichlet,
        margin: eigenvalues[0] - bound,
        eigenvalues,
        eigenvectors,
        bound_reference: bound,
    })
}

/// Smallest `k` eigenvalues of `(A - nK M) phi = mu kappa B_T phi` via
/// the Schur complement (discrete DtN matrix) on the Robin boundary.
pub fn steklov_dirichlet_spectrum(
    mesh: &Mesh,
    kappa: f64,
    k: usize,
) -> Result<SpectrumResult, SpectraError> {
    assert!(k >= 1);
    let sys = assemble(mesh)?;
    let c = SparseSym::combine(&[(1.0, &sys.stiffness), (-2.0 * mesh.curvature, &sys.mass)])
        .restrict(&sys.free);

    // partition free dofs into Robin-boundary and interior
    let mut on_robin = vec![false; mesh.vertices.len()];
    for e in &mesh.robin_edges {
        on_robin[e[0]] = true;
        on_robin[e[1]] = true;
    }
    let t_pos: Vec<usize> =
        (0..sys.free.len()).filter(|&i| on_robin[sys.free[i]]).collect();
    let i_pos: Vec<usize> =
        (0..sys.free.len()).filter(|&i| !on_robin[sys.free[i]]).collect();
    let nt = t_pos.len();
    if nt == 0 {
        return Err(SpectraError::EmptyRobin);
    }
    let t_rank: std::collections::HashMap<usize, usize> =
        t_pos.iter().enumerate().map(|(r, &p)| (p, r)).collect();
    let i_rank: std::collections::HashMap<usize, usize> =
        i_pos.iter().enumerate().map(|(r, &p)| (p, r)).collect();

    let c_ii = c.restrict(&i_pos);
    // definiteness of the bulk is the precondition for mu_1 >= 1
    let chol = SkylineCholesky::factor(&c_ii).map_err(|_| SpectraError::IndefiniteBulk)?;

    // columns of C_IT and the dense block C_TT
    let mut c_it = DMatrix::<f64>::zeros(i_pos.len(), nt);
    let mut s = DMatrix::<f64>::zeros(nt, nt);
    for (a, &pa) in t_pos.iter().enumerate() {
        let (cols, vals) = c.row(pa);
        for (&j, &v) in cols.iter().zip(vals) {
            if let Some(&b) = t_rank.get(&j) {
                s[(a, b)] = v;
            } else if let Some(&i) = i_rank.get(&j) {
                c_it[(i, a)] = v;
            }
        }
    }
    // S = C_TT - C_TI C_II^{-1} C_IT
    let mut x = DMatrix::<f64>::zeros(i_pos.len(), nt);
    for a in 0..nt {
        let col: Vec<f64> = c_it.column(a).iter().copied().collect();
        let sol = chol.solve(&col);
        for (i, v) in sol.into_iter().enumerate() {
            x[(i, a)] = v;
        }
    }
    let correction = c_it.transpose() * &x;
    s -= correction;
    let asym = (&s - s.transpose()).amax() / s.amax().max(f64::MIN_POSITIVE);
    debug_assert!(asym < 1e-12, "Schur complement asymmetry {asym}");
    s = 0.5 * (&s + s.transpose());

    // dense B_TT
    let b_free = sys.robin_mass.restrict(&sys.free);
    let mut b_tt = DMatrix::<f64>::zeros(nt, nt);
    for (a, &pa) in t_pos.iter().enumerate() {
        let (cols, vals) = b_free.row(pa);
        for (&j, &v) in cols.iter().zip(vals) {
            if let Some(&b) = t_rank.get(&j) {
                b_tt[(a, b)] = v;
            }
        }
    }

    // generalized symmetric eigenproblem S psi = nu B_TT psi, nu = mu kappa
    let l = b_tt
        .cholesky()
        .ok_or_else(|| SpectraError::ConvergenceFailure("Robin mass not definite".into()))?;
    let linv_s = l
        .l()
        .solve_lower_triangular(&s)
        .ok_or_else(|| SpectraError::ConvergenceFailure("triangular solve failed".into()))?;
    let w = l
        .l()
        .solve_lower_triangular(&linv_s.transpose())
        .ok_or_else(|| SpectraError::ConvergenceFailure("triangular solve failed".into()))?;
    let eig = SymmetricEigen::new(0.5 * (&w + w.transpose()));
    let mut order: Vec<usize> = (0..nt).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let take = k.min(nt);

    let mut eigenvalues = Vec::with_capacity(take);
    let mut eigenvectors = Vec::with_capacity(take);
    for &idx in order.iter().take(take) {
        eigenvalues.push(eig.eigenvalues[idx] / kappa);
        // psi = L^{-T} y, interior by harmonic extension u_I = -X psi
        let y = eig.eigenvectors.column(idx).into_owned();
        let psi = l.l().transpose().solve_upper_triangular(&y).ok_or_else(|| {
            SpectraError::ConvergenceFailure("triangular solve failed".into())
        })?;
        let ui = -(&x) * &psi;
        let mut full = vec![0.0; mesh.vertices.len()];
        for (r, &p) in t_pos.iter().enumerate() {
            full[sys.free[p]] = psi[r];
        }
        for (r, &p) in i_pos.iter().enumerate() {
            full[sys.free[p]] = ui[r];
        }
        eigenvectors.push(full);
    }
    Ok(SpectrumResult {
        problem: SpectrumProblem::SteklovDirichlet,
        margin: eigenvalues[0] - 1.0,
        eigenvalues,
        eigenvectors,
        bound_reference: 1.0,
    })
}
