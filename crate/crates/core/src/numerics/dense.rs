use crate::error::{Error, Result};

/// Gaussian elimination with partial pivoting on a small dense system.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("dense system shape".into()));
    }
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        if a[p][k] == 0.0 {
            return Err(Error::InvalidArgument("singular dense system".into()));
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

/// Least-squares coefficients for y ≈ Σ_k c_k basis_k(x) via normal equations.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    if rows.is_empty() || rows.len() != y.len() {
        return Err(Error::InsufficientRange("least squares needs data".into()));
    }
    let m = rows[0].len();
    let mut ata = vec![vec![0.0; m]; m];
    let mut aty = vec![0.0; m];
    for (r, yi) in rows.iter().zip(y) {
        for i in 0..m {
            aty[i] += r[i] * yi;
            for j in 0..m {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    solve_dense(ata, aty)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub rms: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::InsufficientRange(format!("line fit with {} points", x.len())));
    }
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v, 1.0]).collect();
    let c = least_squares(&rows, y)?;
    let rms = (x.iter().zip(y).map(|(a, b)| (c[0] * a + c[1] - b).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    Ok(LineFit { slope: c[0], intercept: c[1], rms })
}

/// Slope of log|y| against log x, skipping non-positive entries.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && b.abs() > 0.0 && b.is_finite())
        .map(|(a, b)| (a.ln(), b.abs().ln()))
        .unzip();
    fit_line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve_3x3() {
        let a = vec![vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]];
        let x = solve_dense(a, vec![7.0, 3.0, 6.0]).unwrap();
        for (xi, e) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((xi - e).abs() < 1e-12);
        }
    }

    #[test]
    fn power_law_slope() {
        let x: Vec<f64> = (1..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(-2.5)).collect();
        let f = loglog_slope(&x, &y).unwrap();
        assert!((f.slope + 2.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }
}
