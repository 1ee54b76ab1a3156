use faer::prelude::*;
use num_complex::Complex64;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PreconditionerKind {
    Jacobi,
    Ilu0,
    /// Complete sparse LU; GMRES then converges in one or two iterations.
    Lu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub restart: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 2000, restart: 60, preconditioner: PreconditionerKind::Ilu0 }
    }
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final ‖Ax − b‖₂ / ‖b‖₂.
    pub relative_residual: f64,
}

pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let inv_diag = (0..a.n_rows())
            .map(|i| {
                let d = a.get(i, i);
                if d == 0.0 || !d.is_finite() {
                    Err(Error::SingularPreconditioner(format!("zero diagonal in row {i}")))
                } else {
                    Ok(1.0 / d)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { inv_diag })
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Incomplete LU with the sparsity pattern of A.
pub struct Ilu0 {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.n_rows();
        let mut lu = a.clone();
        let row_ptr = lu.row_ptr().to_vec();
        let col_idx = lu.col_idx().to_vec();
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                if col_idx[k] == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::SingularPreconditioner(format!("missing diagonal in row {i}")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        let vals = lu.values_mut();
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                pos[col_idx[k]] = k;
            }
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = col_idx[k];
                if j >= i {
                    break;
                }
                let pivot = vals[diag_pos[j]];
                let lij = vals[k] / pivot;
                vals[k] = lij;
                for m in diag_pos[j] + 1..row_ptr[j + 1] {
                    let p = pos[col_idx[m]];
                    if p != usize::MAX {
                        vals[p] -= lij * vals[m];
                    }
                }
            }
            let d = vals[diag_pos[i]];
            if d == 0.0 || !d.is_finite() {
                return Err(Error::SingularPreconditioner(format!("zero pivot in row {i}")));
            }
            for k in row_ptr[i]..row_ptr[i + 1] {
                pos[col_idx[k]] = usize::MAX;
            }
        }
        Ok(Self { lu, diag_pos })
    }
}

impl Preconditioner for Ilu0 {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        let rp = self.lu.row_ptr();
        let ci = self.lu.col_idx();
        let v = self.lu.values();
        for i in 0..n {
            let mut s = r[i];
            for k in rp[i]..self.diag_pos[i] {
                s -= v[k] * z[ci[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag_pos[i] + 1..rp[i + 1] {
                s -= v[k] * z[ci[k]];
            }
            z[i] = s / v[self.diag_pos[i]];
        }
    }
}

/// Sparse LU factorization (faer) with forward and transposed solves.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::InvalidArgument("LU of a non-square matrix".into()));
        }
        let m = a.to_faer()?;
        let lu = m
            .sp_lu()
            .map_err(|e| Error::SingularPreconditioner(format!("sparse LU: {e:?}")))?;
        Ok(Self { n: a.n_rows(), lu })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut m = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut m = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_transpose_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }
}

impl Preconditioner for SparseLu {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let out = self.solve(r);
        z.copy_from_slice(&out);
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn build_preconditioner(a: &CsrMatrix, kind: PreconditionerKind) -> Result<Box<dyn Preconditioner>> {
    Ok(match kind {
        PreconditionerKind::Jacobi => Box::new(Jacobi::new(a)?),
        PreconditionerKind::Ilu0 => Box::new(Ilu0::new(a)?),
        PreconditionerKind::Lu => Box::new(SparseLu::new(a)?),
    })
}

/// Right-preconditioned restarted GMRES. The returned residual is the true
/// residual of the returned iterate.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    m: &dyn Preconditioner,
    cfg: &LinearConfig,
) -> Result<LinearSolution> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(Error::InvalidArgument("GMRES needs a square matrix".into()));
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if !(cfg.tol > 0.0) || cfg.restart == 0 {
        return Err(Error::InvalidArgument("tolerance and restart must be positive".into()));
    }
    let bnorm = norm2(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok(LinearSolution { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let target = cfg.tol * bnorm;
    let mrestart = cfg.restart.min(n.max(1));
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut iterations = 0usize;
    let residual = |x: &[f64], r: &mut [f64]| {
        a.mul_vec_into(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        norm2(r)
    };
    let mut rnorm = residual(&x, &mut r);
    loop {
        if rnorm <= target {
            return Ok(LinearSolution { x, iterations, relative_residual: rnorm / bnorm });
        }
        if iterations >= cfg.max_iters {
            return Err(Error::NonConvergence { iterations, residual: rnorm / bnorm });
        }
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(mrestart + 1);
        v.push(r.iter().map(|ri| ri / rnorm).collect());
        let mut h = vec![vec![0.0; mrestart]; mrestart + 1];
        let mut cs = vec![0.0; mrestart];
        let mut sn = vec![0.0; mrestart];
        let mut g = vec![0.0; mrestart + 1];
        g[0] = rnorm;
        let mut k_used = 0;
        for j in 0..mrestart {
            m.apply(&v[j], &mut z);
            a.mul_vec_into(&z, &mut w);
            for i in 0..=j {
                let hij = dot(&w, &v[i]);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm2(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / denom;
                sn[j] = h[j + 1][j] / denom;
            }
            h[j][j] = cs[j] * h[j][j] + sn[j] * h[j + 1][j];
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            iterations += 1;
            k_used = j + 1;
            if g[j + 1].abs() <= target || iterations >= cfg.max_iters || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wk| wk / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in i + 1..k_used {
                s -= h[i][l] * y[l];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        let mut vy = vec![0.0; n];
        for (yi, vi) in y.iter().zip(&v) {
            for (acc, vk) in vy.iter_mut().zip(vi) {
                *acc += yi * vk;
            }
        }
        m.apply(&vy, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        let new_norm = residual(&x, &mut r);
        if !new_norm.is_finite() {
            return Err(Error::NonConvergence { iterations, residual: f64::INFINITY });
        }
        if new_norm >= rnorm && k_used < mrestart && new_norm > target {
            // A breakdown that made no progress cannot improve on restart.
            return Err(Error::NonConvergence { iterations, residual: new_norm / bnorm });
        }
        rnorm = new_norm;
    }
}

pub fn solve_with_config(a: &CsrMatrix, b: &[f64], cfg: &LinearConfig) -> Result<LinearSolution> {
    if a.n_rows() != a.n_cols() {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    let m = build_preconditioner(a, cfg.preconditioner)?;
    gmres(a, b, None, m.as_ref(), cfg)
}

/// GMRES(60) with an ILU(0) preconditioner; returns x with ‖Ax − b‖ ≤ tol‖b‖.
pub fn solve_sparse_linear(a: &CsrMatrix, b: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let cfg = LinearConfig { tol, max_iters, ..LinearConfig::default() };
    solve_with_config(a, b, &cfg).map(|s| s.x)
}

/// Solves (re + i·im) z = b for complex b through the interleaved real system.
pub fn solve_sparse_linear_complex(
    re: &CsrMatrix,
    im: &CsrMatrix,
    b: &[Complex64],
    cfg: &LinearConfig,
) -> Result<Vec<Complex64>> {
    let a = CsrMatrix::complex_as_real(re, im);
    let rb: Vec<f64> = b.iter().flat_map(|z| [z.re, z.im]).collect();
    let x = solve_with_config(&a, &rb, cfg)?.x;
    Ok(x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize, h: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 / (h * h)));
            if i > 0 {
                t.push((i, i - 1, -1.0 / (h * h)));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 / (h * h)));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    /// Gaussian elimination with partial pivoting, used as an oracle.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn identity_system() {
        let a = CsrMatrix::identity(5);
        let x = solve_sparse_linear(&a, &[1.0; 5], 1e-12, 10).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn two_by_two() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        let x = solve_sparse_linear(&a, &[3.0, 3.0], 1e-12, 10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_matches_dense_oracle_and_analytic() {
        let n = 50;
        let h = 1.0 / 51.0;
        let a = laplacian_1d(n, h);
        let b = vec![1.0; n];
        let x = solve_sparse_linear(&a, &b, 1e-13, 500).unwrap();
        let oracle = dense_solve(a.to_dense(), b.clone());
        for i in 0..n {
            let s = (i + 1) as f64 * h;
            assert!((x[i] - oracle[i]).abs() < 1e-8);
            // Second differences are exact on quadratics.
            assert!((x[i] - s * (1.0 - s) / 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn all_preconditioners_agree() {
        let n = 200;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.3));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.7));
            }
            if i + 7 < n {
                t.push((i, i + 7, 0.4));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, t);
        let b: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let mut sols = Vec::new();
        for kind in [PreconditionerKind::Jacobi, PreconditionerKind::Ilu0, PreconditionerKind::Lu] {
            let cfg = LinearConfig { tol: 1e-12, preconditioner: kind, ..LinearConfig::default() };
            let s = solve_with_config(&a, &b, &cfg).unwrap();
            assert!(s.relative_residual <= 1e-12);
            sols.push(s.x);
        }
        for s in &sols[1..] {
            for (p, q) in s.iter().zip(&sols[0]) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ilu0_is_exact_for_tridiagonal() {
        let a = laplacian_1d(20, 0.1);
        let ilu = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mut z = vec![0.0; 20];
        ilu.apply(&b, &mut z);
        let r = a.mul_vec(&z);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_preconditioner_reported() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]);
        assert!(matches!(Ilu0::new(&a), Err(Error::SingularPreconditioner(_))));
    }

    #[test]
    fn non_convergence_reported() {
        let a = laplacian_1d(400, 1.0 / 401.0);
        let cfg = LinearConfig { tol: 1e-14, max_iters: 3, restart: 3, preconditioner: PreconditionerKind::Jacobi };
        let r = solve_with_config(&a, &vec![1.0; 400], &cfg);
        assert!(matches!(r, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn lu_transpose_solve() {
        let a = CsrMatrix::from_triplets(3, 3, vec![(0, 0, 2.0), (0, 2, 1.0), (1, 1, 3.0), (2, 0, -1.0), (2, 2, 1.0)]);
        let lu = SparseLu::new(&a).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = lu.solve_transpose(&b);
        let r = a.transpose().mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_system() {
        let re = CsrMatrix::identity(2);
        let im = CsrMatrix::diag(&[1.0, -2.0]);
        let b = [Complex64::new(1.0, 1.0), Complex64::new(0.0, 5.0)];
        let cfg = LinearConfig { tol: 1e-13, ..LinearConfig::default() };
        let z = solve_sparse_linear_complex(&re, &im, &b, &cfg).unwrap();
        assert!((z[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((z[1] - Complex64::new(0.0, 5.0) / Complex64::new(1.0, -2.0)).norm() < 1e-12);
    }
}
