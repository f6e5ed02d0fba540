//! Fixed-stencil sparse matrices on tensor meshes, a tridiagonal direct
//! solver and Jacobi-preconditioned BiCGSTAB.

use std::sync::Arc;

use crate::grid::TensorMesh;
use crate::model::MAX_DIM;
use crate::par;

/// Neighbour pattern shared by every row. Offset 0 is the diagonal; axial
/// offsets follow as (−e_a, +e_a) pairs, then optional diagonal offsets.
#[derive(Debug)]
pub struct Stencil {
    pub width: usize,
    pub offsets: Vec<[i64; MAX_DIM]>,
    opposite: Vec<usize>,
    cols: Vec<usize>,
    valid: Vec<bool>,
}

impl Stencil {
    pub fn new(mesh: &TensorMesh, with_diagonals: bool) -> Self {
        let n = mesh.dim();
        let mut offsets = vec![[0i64; MAX_DIM]];
        for a in 0..n {
            for sgn in [-1, 1] {
                let mut o = [0i64; MAX_DIM];
                o[a] = sgn;
                offsets.push(o);
            }
        }
        if with_diagonals {
            for a in 0..n {
                for b in a + 1..n {
                    for (sa, sb) in [(1, 1), (-1, -1), (1, -1), (-1, 1)] {
                        let mut o = [0i64; MAX_DIM];
                        o[a] = sa;
                        o[b] = sb;
                        offsets.push(o);
                    }
                }
            }
        }
        let width = offsets.len();
        let opposite = offsets
            .iter()
            .map(|o| {
                let neg = [-o[0], -o[1], -o[2]];
                offsets.iter().position(|q| *q == neg).expect("stencil is symmetric")
            })
            .collect();
        let len = mesh.len();
        let mut cols = vec![0usize; len * width];
        let mut valid = vec![false; len * width];
        for i in 0..len {
            let mi = mesh.multi_index(i);
            for (k, o) in offsets.iter().enumerate() {
                let mut inside = true;
                let mut idx = 0usize;
                for a in 0..n {
                    let j = mi[a] as i64 + o[a];
                    if j < 0 || j >= mesh.counts()[a] as i64 {
                        inside = false;
                        break;
                    }
                    idx += j as usize * mesh.strides()[a];
                }
                cols[i * width + k] = if inside { idx } else { i };
                valid[i * width + k] = inside;
            }
        }
        Self { width, offsets, opposite, cols, valid }
    }

    pub fn rows(&self) -> usize {
        self.cols.len() / self.width
    }

    pub fn col(&self, row: usize, k: usize) -> Option<usize> {
        let e = row * self.width + k;
        self.valid[e].then_some(self.cols[e])
    }

    /// Position of offset `o` in the stencil.
    pub fn position(&self, o: [i64; MAX_DIM]) -> Option<usize> {
        self.offsets.iter().position(|q| *q == o)
    }
}

#[derive(Clone, Debug)]
pub struct StencilMatrix {
    pub stencil: Arc<Stencil>,
    pub values: Vec<f64>,
}

impl StencilMatrix {
    pub fn zeros(stencil: Arc<Stencil>) -> Self {
        let len = stencil.rows() * stencil.width;
        Self { stencil, values: vec![0.0; len] }
    }

    pub fn rows(&self) -> usize {
        self.stencil.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.stencil.width;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.values[i * self.stencil.width]
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let st = &*self.stencil;
        let w = st.width;
        par::fill(y, |i| {
            let mut acc = 0.0;
            for k in 0..w {
                let e = i * w + k;
                if st.valid[e] {
                    acc += self.values[e] * x[st.cols[e]];
                }
            }
            acc
        });
    }

    pub fn transpose(&self) -> Self {
        let st = &*self.stencil;
        let w = st.width;
        let mut out = vec![0.0; self.values.len()];
        par::for_each_chunk(&mut out, w, |i, row| {
            for k in 0..w {
                let e = i * w + k;
                if st.valid[e] {
                    row[k] = self.values[st.cols[e] * w + st.opposite[k]];
                }
            }
        });
        Self { stencil: self.stencil.clone(), values: out }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.transpose().row_sums()
    }

    /// I − dt·self.
    pub fn identity_minus(&self, dt: f64) -> Self {
        let w = self.stencil.width;
        let mut values: Vec<f64> = self.values.iter().map(|v| -dt * v).collect();
        for i in 0..self.rows() {
            values[i * w] += 1.0;
        }
        Self { stencil: self.stencil.clone(), values }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("zero pivot in row {0}")]
    ZeroPivot(usize),
    #[error("no convergence after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Krylov breakdown after {0} iterations")]
    Breakdown(usize),
}

/// Solves A x = b. One-dimensional stencils use the Thomas algorithm; others
/// use Jacobi-preconditioned BiCGSTAB with `x` as the initial guess.
pub fn solve(a: &StencilMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats, SolveError> {
    if a.stencil.width == 3 {
        solve_tridiagonal(a, b, x)
    } else {
        bicgstab(a, b, x, tol, max_iter)
    }
}

fn solve_tridiagonal(a: &StencilMatrix, b: &[f64], x: &mut [f64]) -> Result<SolveStats, SolveError> {
    let n = a.rows();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let r = a.row(i);
        let (diag, lower, upper) = (r[0], if i > 0 { r[1] } else { 0.0 }, if i + 1 < n { r[2] } else { 0.0 });
        let denom = diag - if i > 0 { lower * c[i - 1] } else { 0.0 };
        if denom == 0.0 || !denom.is_finite() {
            return Err(SolveError::ZeroPivot(i));
        }
        c[i] = upper / denom;
        d[i] = (b[i] - if i > 0 { lower * d[i - 1] } else { 0.0 }) / denom;
    }
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(SolveStats { iterations: 1, residual: 0.0 })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bicgstab(a: &StencilMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats, SolveError> {
    let n = b.len();
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.diagonal(i);
            if d != 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats::default());
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res = dot(&r, &r).sqrt() / bnorm;
    if res <= tol {
        return Ok(SolveStats { iterations: 0, residual: res });
    }
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            // Restart with the current residual as shadow vector.
            r_hat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            p_hat[i] = p[i] * inv_diag[i];
        }
        a.matvec(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            return Err(SolveError::Breakdown(it));
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = dot(&s, &s).sqrt() / bnorm;
        if snorm <= tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok(SolveStats { iterations: it, residual: snorm });
        }
        for i in 0..n {
            s_hat[i] = s[i] * inv_diag[i];
        }
        a.matvec(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(SolveError::Breakdown(it));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            return Ok(SolveStats { iterations: it, residual: res });
        }
        if omega == 0.0 {
            return Err(SolveError::Breakdown(it));
        }
    }
    Err(SolveError::NoConvergence { iterations: max_iter, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(mesh: &TensorMesh) -> StencilMatrix {
        let st = Arc::new(Stencil::new(mesh, false));
        let mut m = StencilMatrix::zeros(st.clone());
        let w = st.width;
        for i in 0..mesh.len() {
            let mut diag = 0.0;
            for k in 1..w {
                if st.col(i, k).is_some() {
                    m.values[i * w + k] = 1.0 + 0.1 * k as f64;
                    diag -= 1.0 + 0.1 * k as f64;
                }
            }
            m.values[i * w] = diag;
        }
        m
    }

    #[test]
    fn transpose_swaps_entries() {
        let mesh = TensorMesh::new(&[(0.0, 1.0), (0.0, 1.0)], &[4, 5]).unwrap();
        let q = laplacian(&mesh);
        let qt = q.transpose();
        let x: Vec<f64> = (0..mesh.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..mesh.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut qx = vec![0.0; mesh.len()];
        let mut qty = vec![0.0; mesh.len()];
        q.matvec(&x, &mut qx);
        qt.matvec(&y, &mut qty);
        assert!((dot(&y, &qx) - dot(&x, &qty)).abs() < 1e-12);
    }

    #[test]
    fn solvers_agree() {
        for counts in [vec![30], vec![7, 9], vec![4, 5, 6]] {
            let bounds = vec![(0.0, 1.0); counts.len()];
            let mesh = TensorMesh::new(&bounds, &counts).unwrap();
            let a = laplacian(&mesh).identity_minus(0.3);
            let truth: Vec<f64> = (0..mesh.len()).map(|i| 1.0 + (i as f64).sqrt()).collect();
            let mut b = vec![0.0; mesh.len()];
            a.matvec(&truth, &mut b);
            let mut x = vec![0.0; mesh.len()];
            solve(&a, &b, &mut x, 1e-12, 500).unwrap();
            for (u, v) in x.iter().zip(&truth) {
                assert!((u - v).abs() < 1e-9, "{u} vs {v}");
            }
        }
    }
}
