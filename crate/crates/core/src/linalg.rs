//! Sparse symmetric matrices and a skyline Cholesky solver.
//!
//! Matrices are assembled from triplets into CSR with the full symmetric
//! pattern. Systems are reordered with reverse Cuthill-McKee and factored
//! as L L^T within the envelope; a nonpositive pivot is reported instead
//! of being perturbed, since the callers use it to detect loss of
//! coercivity.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("iteration failed to converge: {0}")]
    ConvergenceFailure(String),
}

/// Symmetric sparse matrix in CSR form (both triangles stored).
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

/// Triplet accumulator; duplicate entries are summed.
#[derive(Debug, Clone)]
pub struct Triplets {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Triplets { n, entries: Vec::new() }
    }

    /// Push one entry; symmetry is the caller's responsibility
    /// (push both (i,j) and (j,i), or use `push_sym`).
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, v));
    }

    pub fn push_sym(&mut self, i: usize, j: usize, v: f64) {
        self.push(i, j, v);
        if i != j {
            self.push(j, i, v);
        }
    }

    pub fn to_csr(&self) -> SparseSym {
        let n = self.n;
        let mut sorted = self.entries.clone();
        sorted.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut data: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &sorted {
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        SparseSym { n, indptr, indices, data }
    }
}

impl SparseSym {
    pub fn zeros(n: usize) -> Self {
        SparseSym { n, indptr: vec![0; n + 1], indices: vec![], data: vec![] }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            out[i] = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let row: f64 = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
            acc += x[i] * row;
        }
        acc
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Linear combination `a*self + b*other + c*third` over the union pattern.
    pub fn combine(terms: &[(f64, &SparseSym)]) -> SparseSym {
        let n = terms[0].1.n;
        let mut t = Triplets::new(n);
        for &(coef, m) in terms {
            assert_eq!(m.n, n);
            for i in 0..n {
                let (cols, vals) = m.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    if coef != 0.0 {
                        t.push(i, j, coef * v);
                    }
                }
            }
        }
        t.to_csr()
    }

    /// Restrict to the index subset `keep` (sorted), relabelling rows/cols.
    pub fn restrict(&self, keep: &[usize]) -> SparseSym {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut t = Triplets::new(keep.len());
        for &old_i in keep {
            let (cols, vals) = self.row(old_i);
            for (&j, &v) in cols.iter().zip(vals) {
                if map[j] != usize::MAX {
                    t.push(map[old_i], map[j], v);
                }
            }
        }
        t.to_csr()
    }

    /// Max relative asymmetry `|a_ij - a_ji| / max|a|`; 0 for empty.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

/// Reverse Cuthill-McKee ordering of the matrix graph.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(m: &SparseSym) -> Vec<usize> {
    let n = m.n;
    let degree = |i: usize| m.indptr[i + 1] - m.indptr[i];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    // BFS returning (levels, last level set) from a seed
    let bfs = |seed: usize, visited: &mut Vec<bool>, order: &mut Vec<usize>| {
        let start = order.len();
        visited[seed] = true;
        order.push(seed);
        let mut head = start;
        while head < order.len() {
            let u = order[head];
            head += 1;
            let (cols, _) = m.row(u);
            let mut nbrs: Vec<usize> = cols.iter().copied().filter(|&v| !visited[v] && v != u).collect();
            nbrs.sort_unstable_by_key(|&v| degree(v));
            for v in nbrs {
                if !visited[v] {
                    visited[v] = true;
                    order.push(v);
                }
            }
        }
    };

    for root in 0..n {
        if visited[root] {
            continue;
        }
        // pseudo-peripheral seed: follow two BFS sweeps
        let mut seed = root;
        for _ in 0..2 {
            let mut vis = visited.clone();
            let mut ord = Vec::new();
            vis[seed] = true;
            ord.push(seed);
            let mut head = 0;
            while head < ord.len() {
                let u = ord[head];
                head += 1;
                for &v in m.row(u).0 {
                    if !vis[v] {
                        vis[v] = true;
                        ord.push(v);
                    }
                }
            }
            seed = *ord.last().unwrap();
        }
        bfs(seed, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Skyline (envelope) Cholesky factorization of an SPD `SparseSym`,
/// with RCM preordering.
pub struct SkylineCholesky {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// first stored column of each permuted row
    first: Vec<usize>,
    /// rows[i][k] = L[i][first[i] + k], k = 0..=i-first[i]
    rows: Vec<Vec<f64>>,
}

impl SkylineCholesky {
    pub fn factor(m: &SparseSym) -> Result<Self, LinalgError> {
        let n = m.n;
        let perm = reverse_cuthill_mckee(m);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        // envelope: first[i] = min(new index of neighbors of i) clipped to <= i
        let mut first = vec![0usize; n];
        for new_i in 0..n {
            let old_i = perm[new_i];
            let mut f = new_i;
            for &j in m.row(old_i).0 {
                f = f.min(inv[j]);
            }
            first[new_i] = f;
        }
        // the envelope must be monotone enough for the skyline solve:
        // entries below first[i] stay zero under LL^T because fill only
        // occurs within rows' envelopes; standard skyline property.

        let mut rows: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; i - first[i] + 1]).collect();
        // scatter matrix values
        for new_i in 0..n {
            let old_i = perm[new_i];
            let (cols, vals) = m.row(old_i);
            for (&j, &v) in cols.iter().zip(vals) {
                let new_j = inv[j];
                if new_j <= new_i {
                    rows[new_i][new_j - first[new_i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = rows[i][j - fi];
                for k in lo..j {
                    s -= rows[i][k - fi] * rows[j][k - fj];
                }
                if j < i {
                    rows[i][j - fi] = s / rows[j][j - fj];
                } else {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { row: i, pivot: s });
                    }
                    rows[i][j - fi] = s.sqrt();
                }
            }
        }
        Ok(SkylineCholesky { n, perm, first, rows })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let fi = self.first[i];
            let mut s = b[self.perm[i]];
            for k in fi..i {
                s -= self.rows[i][k - fi] * y[k];
            }
            y[i] = s / self.rows[i][i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.rows[i][i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.rows[i][k - fi] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    /// Solve with one step of iterative refinement against `m`.
    pub fn solve_refined(&self, m: &SparseSym, b: &[f64]) -> Vec<f64> {
        let mut x = self.solve(b);
        let mut r = vec![0.0; self.n];
        m.matvec(&x, &mut r);
        for i in 0..self.n {
            r[i] = b[i] - r[i];
        }
        let dx = self.solve(&r);
        for i in 0..self.n {
            x[i] += dx[i];
        }
        x
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Smallest `k` eigenpairs of the symmetric pencil `C x = lambda M x`
/// by shift-invert inverse iteration with M-orthogonal deflation.
/// `shift` must lie strictly below the smallest eigenvalue.
pub fn smallest_eigenpairs(
    c: &SparseSym,
    m: &SparseSym,
    shift: f64,
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<(f64, Vec<f64>)>, LinalgError> {
    let n = c.n;
    let shifted = SparseSym::combine(&[(1.0, c), (-shift, m)]);
    let chol = SkylineCholesky::factor(&shifted)?;
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::new();

    for idx in 0..k {
        // deterministic pseudo-random start vector
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 + 1.0) * 0.7390851332151607 + idx as f64;
                (t.sin() * 43758.5453).fract() + 0.1
            })
            .collect();
        m_orthogonalize(&mut v, &pairs, m);
        m_normalize(&mut v, m);

        let mut lambda_prev = f64::INFINITY;
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..max_iter {
            let mut mv = vec![0.0; n];
            m.matvec(&v, &mut mv);
            let mut w = chol.solve(&mv);
            m_orthogonalize(&mut w, &pairs, m);
            m_normalize(&mut w, m);
            lambda = c.quadratic_form(&w) / m.quadratic_form(&w);
            v = w;
            if (lambda - lambda_prev).abs() <= tol * lambda.abs().max(1.0) {
                converged = true;
                break;
            }
            lambda_prev = lambda;
        }
        if !converged {
            return Err(LinalgError::ConvergenceFailure(format!(
                "inverse iteration stalled on eigenpair {idx}"
            )));
        }
        pairs.push((lambda, v));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(pairs)
}

fn m_orthogonalize(v: &mut [f64], basis: &[(f64, Vec<f64>)], m: &SparseSym) {
    if basis.is_empty() {
        return;
    }
    let n = v.len();
    let mut mv = vec![0.0; n];
    for _ in 0..2 {
        m.matvec(v, &mut mv);
        for (_, b) in basis {
            let coef: f64 = b.iter().zip(mv.iter()).map(|(x, y)| x * y).sum();
            for i in 0..n {
                v[i] -= coef * b[i];
            }
            m.matvec(v, &mut mv);
        }
    }
}

fn m_normalize(v: &mut [f64], m: &SparseSym) {
    let norm = m.quadratic_form(v).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn laplacian_1d(n: usize) -> SparseSym {
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i + 1 < n {
                t.push_sym(i, i + 1, -1.0);
            }
        }
        t.to_csr()
    }

    fn identity(n: usize) -> SparseSym {
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 1.0);
        }
        t.to_csr()
    }

    #[test]
    fn csr_accumulates_duplicates() {
        let mut t = Triplets::new(2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.5);
        t.push(1, 0, -1.0);
        t.push(0, 1, -1.0);
        t.push(1, 1, 4.0);
        let m = t.to_csr();
        assert_abs_diff_eq!(m.get(0, 0), 3.5);
        assert_abs_diff_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.asymmetry(), 0.0);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let n = 50;
        let m = laplacian_1d(n);
        let chol = SkylineCholesky::factor(&m).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = chol.solve_refined(&m, &b);
        let mut r = vec![0.0; n];
        m.matvec(&x, &mut r);
        for i in 0..n {
            assert_abs_diff_eq!(r[i], b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_detects_indefinite() {
        let mut t = Triplets::new(2);
        t.push(0, 0, 1.0);
        t.push(1, 1, -1.0);
        let m = t.to_csr();
        assert!(matches!(
            SkylineCholesky::factor(&m),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let m = laplacian_1d(30);
        let perm = reverse_cuthill_mckee(&m);
        let mut seen = vec![false; 30];
        for &p in &perm {
            assert!(!seen[p]);
            seen[p] = true;
        }
    }

    #[test]
    fn eigen_1d_laplacian() {
        // eigenvalues of tridiag(-1,2,-1) are 2 - 2 cos(pi k / (n+1))
        let n = 40;
        let a = laplacian_1d(n);
        let m = identity(n);
        let pairs = smallest_eigenpairs(&a, &m, -0.5, 3, 1e-12, 500).unwrap();
        for (k, (lambda, _)) in pairs.iter().enumerate() {
            let exact = 2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / (n as f64 + 1.0)).cos();
            assert_abs_diff_eq!(*lambda, exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn restrict_submatrix() {
        let m = laplacian_1d(5);
        let sub = m.restrict(&[1, 2, 3]);
        assert_eq!(sub.n, 3);
        assert_abs_diff_eq!(sub.get(0, 0), 2.0);
        assert_abs_diff_eq!(sub.get(0, 1), -1.0);
        assert_abs_diff_eq!(sub.get(0, 2), 0.0);
    }
}
