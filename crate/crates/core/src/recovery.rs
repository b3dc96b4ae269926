//! Derivative recovery for P1 nodal fields: a least-squares quadratic
//! fit over the 2-ring patch of each node yields nodal gradients and
//! Hessians, which the integral-identity checks need.

use crate::mesh::Mesh;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("patch recovery rank-deficient at {failed} of {total} nodes")]
    RecoveryFailure { failed: usize, total: usize },
}

#[derive(Debug, Clone)]
pub struct RecoveredField {
    pub gradient: Vec<[f64; 2]>,
    pub hessian: Vec<[[f64; 2]; 2]>,
}

/// Maximum tolerated fraction of rank-deficient patches.
const MAX_FAILED_FRACTION: f64 = 0.01;
const MIN_PATCH: usize = 6;

fn vertex_adjacency(mesh: &Mesh) -> Vec<Vec<usize>> {
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
    adj
}

fn ring_patch(adj: &[Vec<usize>], center: usize, rings: usize) -> Vec<usize> {
    let mut seen = std::collections::HashSet::from([center]);
    let mut frontier = vec![center];
    for _ in 0..rings {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &adj[v] {
                if seen.insert(w) {
                    next.push(w);
                }
            }
        }
        frontier = next;
    }
    seen.into_iter().collect()
}

/// Fit `v ~ a0 + g.dx + dx'H dx/2` on the patch around each node.
pub fn recover(mesh: &Mesh, values: &[f64]) -> Result<RecoveredField, RecoveryError> {
    assert_eq!(values.len(), mesh.vertices.len());
    let adj = vertex_adjacency(mesh);
    let n = mesh.vertices.len();
    let mut gradient = vec![[0.0; 2]; n];
    let mut hessian = vec![[[0.0; 2]; 2]; n];
    let mut failed = 0usize;

    for v in 0..n {
        let mut rings = 2;
        let mut patch = ring_patch(&adj, v, rings);
        while patch.len() < MIN_PATCH && rings < 5 {
            rings += 1;
            patch = ring_patch(&adj, v, rings);
        }
        if patch.len() < MIN_PATCH {
            failed += 1;
            continue;
        }
        let p0 = mesh.vertices[v];
        let scale = patch
            .iter()
            .map(|&w| {
                let q = mesh.vertices[w];
                (q[0] - p0[0]).hypot(q[1] - p0[1])
            })
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let m = patch.len();
        let mut a = DMatrix::<f64>::zeros(m, 6);
        let mut b = DVector::<f64>::zeros(m);
        for (r, &w) in patch.iter().enumerate() {
            let q = mesh.vertices[w];
            let dx = (q[0] - p0[0]) / scale;
            let dy = (q[1] - p0[1]) / scale;
            a[(r, 0)] = 1.0;
            a[(r, 1)] = dx;
            a[(r, 2)] = dy;
            a[(r, 3)] = 0.5 * dx * dx;
            a[(r, 4)] = dx * dy;
            a[(r, 5)] = 0.5 * dy * dy;
            b[r] = values[w];
        }
        let svd = a.svd(true, true);
        let rank_tol = 1e-10 * svd.singular_values[0].max(f64::MIN_POSITIVE);
        if svd.singular_values.iter().filter(|&&s| s > rank_tol).count() < 6 {
            failed += 1;
            continue;
        }
        let coef = svd.solve(&b, rank_tol).expect("svd solve");
        gradient[v] = [coef[1] / scale, coef[2] / scale];
        let s2 = scale * scale;
        hessian[v] = [[coef[3] / s2, coef[4] / s2], [coef[4] / s2, coef[5] / s2]];
    }

    if failed as f64 > MAX_FAILED_FRACTION * n as f64 {
        return Err(RecoveryError::RecoveryFailure { failed, total: n });
    }
    Ok(RecoveredField { gradient, hessian })
}
