use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{to_real, TravelingWave, TwProblem};
use crate::error::{Error, Result};
use crate::numerics::linear::SparseLu;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub c: f64,
    /// Smallest singular value of 𝕃₀ on the complement of span{iU, ∂₂U}.
    pub smallest_sv_constrained: f64,
    /// ‖𝕃₀z‖/‖z‖ for z₀ = iU and z₁ = ∂₂U, away from the box edge.
    pub kernel_overlaps: [f64; 2],
    /// Smallest singular value without the constraint (box-broken symmetries).
    pub smallest_sv_unconstrained: f64,
    pub h2: f64,
    pub iterations: usize,
}

/// Nodes at least this many cells from the outer box enter the kernel residuals.
const EDGE_STRIP: usize = 5;

/// Fourth-order ∂₂U (second order next to the box edge, zero on it).
fn d2_high_order(w: &TravelingWave) -> Vec<Complex64> {
    let g = &w.grid;
    let u = &w.field;
    (0..u.len())
        .map(|k| {
            let (i, j) = g.ij(k);
            if g.is_outer(k) {
                return Complex64::new(0.0, 0.0);
            }
            if j >= 2 && j + 2 < g.n2 {
                (u[g.index(i, j - 2)] - u[g.index(i, j + 2)] + (u[g.index(i, j + 1)] - u[g.index(i, j - 1)]) * 8.0) / (12.0 * g.h)
            } else {
                (u[g.index(i, j + 1)] - u[g.index(i, j - 1)]) / (2.0 * g.h)
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn nondegeneracy_spectrum(wave: &TravelingWave) -> Result<SpectralReport> {
    if !(wave.residual_norm.is_finite() && wave.residual_norm < 1e-6) {
        return Err(Error::InvalidArgument("wave not converged".into()));
    }
    let g = &wave.grid;
    let p = TwProblem::new(g, wave.c)?;
    let j = p.linearization(&wave.field);
    let z0: Vec<Complex64> = wave.field.iter().map(|z| z * Complex64::i()).collect();
    let z1 = d2_high_order(wave);
    let inside = |k: usize| {
        let (i, jj) = g.ij(k);
        i + EDGE_STRIP < g.n1 && jj >= EDGE_STRIP && jj + EDGE_STRIP < g.n2
    };
    let overlap = |z: &[Complex64]| {
        let r = j.mul_vec(&to_real(z));
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..z.len() {
            if inside(k) {
                num += r[2 * k].powi(2) + r[2 * k + 1].powi(2);
                den += z[k].norm_sqr();
            }
        }
        (num / den).sqrt()
    };
    let kernel_overlaps = [overlap(&z0), overlap(&z1)];

    // Restrict to the free unknowns.
    let free: Vec<usize> = (0..g.n_nodes()).filter(|&k| !g.is_outer(k)).flat_map(|k| [2 * k, 2 * k + 1]).collect();
    let jf = j.submatrix(&free, &free);
    let lu = SparseLu::new(&jf)?;
    let restrict = |z: &[Complex64]| {
        let r = to_real(z);
        free.iter().map(|&q| r[q]).collect::<Vec<f64>>()
    };
    let zs = [restrict(&z0), restrict(&z1)];
    let inv_normal = |x: &[f64]| lu.solve(&lu.solve_transpose(x));
    let w: Vec<Vec<f64>> = zs.iter().map(|z| inv_normal(z)).collect();
    let gram = [[dot(&zs[0], &w[0]), dot(&zs[0], &w[1])], [dot(&zs[1], &w[0]), dot(&zs[1], &w[1])]];
    let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
    if !(det.abs() > 1e-300) {
        return Err(Error::EigenIterationFailure("singular constraint Gram matrix".into()));
    }
    // Inverse of (JᵀJ) restricted to {z₀, z₁}^⊥, via a 2×2 Schur correction.
    let apply = |x: &[f64]| {
        let y = inv_normal(x);
        let b = [dot(&zs[0], &y), dot(&zs[1], &y)];
        let mu = [(gram[1][1] * b[0] - gram[0][1] * b[1]) / det, (gram[0][0] * b[1] - gram[1][0] * b[0]) / det];
        y.iter().enumerate().map(|(q, v)| v - mu[0] * w[0][q] - mu[1] * w[1][q]).collect::<Vec<f64>>()
    };
    let project = |x: &mut Vec<f64>| {
        // Gram–Schmidt against z₀, z₁ for the starting vector.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for z in &zs {
            let mut b = z.clone();
            for e in &basis {
                let a = dot(&b, e);
                b.iter_mut().zip(e).for_each(|(v, q)| *v -= a * q);
            }
            let nb = norm(&b);
            b.iter_mut().for_each(|v| *v /= nb);
            basis.push(b);
        }
        for e in &basis {
            let a = dot(x, e);
            x.iter_mut().zip(e).for_each(|(v, q)| *v -= a * q);
        }
    };
    let m = free.len();
    let mut x: Vec<f64> = (0..m).map(|q| ((q as f64 * 0.618_034).fract() - 0.5) + 0.1 * (q as f64 * 0.017).sin()).collect();
    project(&mut x);
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut sigma_prev = f64::INFINITY;
    let mut sigma = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=300 {
        let y = apply(&x);
        let ny = norm(&y);
        x = y.iter().map(|v| v / ny).collect();
        sigma = norm(&jf.mul_vec(&x));
        iterations = it;
        if it > 3 && (sigma - sigma_prev).abs() <= 1e-7 * sigma {
            converged = true;
            break;
        }
        sigma_prev = sigma;
    }
    if !converged {
        return Err(Error::EigenIterationFailure(format!("no convergence after {iterations} iterations (σ ≈ {sigma})")));
    }
    // Unconstrained smallest singular value for reference.
    let mut v: Vec<f64> = (0..m).map(|q| (q as f64 * 0.414_213).fract() - 0.5).collect();
    let mut s_un = f64::INFINITY;
    for _ in 0..100 {
        let y = inv_normal(&v);
        let ny = norm(&y);
        v = y.iter().map(|t| t / ny).collect();
        let s = norm(&jf.mul_vec(&v));
        if (s - s_un).abs() <= 1e-7 * s {
            s_un = s;
            break;
        }
        s_un = s;
    }
    Ok(SpectralReport {
        c: wave.c,
        smallest_sv_constrained: sigma,
        kernel_overlaps,
        smallest_sv_unconstrained: s_un,
        h2: g.h * g.h,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vortex::{solve_gl_profile, HalfPlaneGrid};
    use crate::wave::{ansatz_seed, solve_traveling_wave, tw_newton_config};

    #[test]
    fn gauge_mode_is_a_discrete_kernel_and_deflation_lifts_sigma() {
        let p = solve_gl_profile(40.0, 2000).unwrap();
        let g = HalfPlaneGrid::half_plane(12.0, 12.0, 0.25).unwrap();
        let w = solve_traveling_wave(0.5, &ansatz_seed(&p, 0.5, &g), &g, &tw_newton_config()).unwrap();
        let r = nondegeneracy_spectrum(&w).unwrap();
        assert!(r.kernel_overlaps[0] < 1e-9);
        assert!(r.kernel_overlaps[1] < 5.0 * r.h2);
        assert!(r.smallest_sv_constrained > r.smallest_sv_unconstrained);
    }
}
