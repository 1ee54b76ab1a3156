use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dense::{least_squares, loglog_slope};
use crate::vortex::{HalfPlaneGrid, VortexProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedSample {
    pub d: f64,
    pub c_proj: f64,
    /// ⟨ΔV + V(1 − |V|²), ∂_dV⟩ / ‖∂_dV‖², the ε-independent part.
    pub interaction: f64,
    /// ⟨i∂₂V, ∂_dV⟩ / ‖∂_dV‖².
    pub drift: f64,
    pub norm2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedCurve {
    pub epsilon: f64,
    pub samples: Vec<ReducedSample>,
    pub c1: f64,
    pub c2: f64,
    /// Max |c_proj − fit| / max |c_proj|.
    pub fit_relative_residual: f64,
    pub d_star: f64,
    /// log-log slope of |interaction| against d.
    pub interaction_slope: f64,
}

/// Projects the ansatz residual 𝕊₀[V_d] = ΔV + iε∂₂V + V(1 − |V|²) on ∂_dV over
/// the half-plane box of `grid`. The GL parts are evaluated in closed form:
/// with V = w⁺w⁻ and Δw = −w(1 − S²),
/// ΔV + V(1 − |V|²) = 2∇w⁺·∇w⁻ − V(1 − S₊²)(1 − S₋²).
pub fn reduced_speed_curve(epsilon: f64, d_samples: &[f64], grid: &HalfPlaneGrid, profile: &VortexProfile) -> Result<ReducedCurve> {
    if !(epsilon > 0.0 && epsilon <= 0.15) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must lie in (0, 0.15]")));
    }
    if d_samples.len() < 3 || d_samples.iter().any(|&d| d <= 2.0) {
        return Err(Error::InvalidArgument("need ≥ 3 separations, each > 2".into()));
    }
    let d_max = d_samples.iter().fold(0.0f64, |m, &d| m.max(d));
    if !grid.is_half_plane() || grid.l1.min(grid.l2) < 4.0 * d_max {
        return Err(Error::InvalidArgument(format!("half-plane box must reach 4·d_max = {}", 4.0 * d_max)));
    }
    let mut samples = Vec::with_capacity(d_samples.len());
    for &d in d_samples {
        let (mut p, mut q, mut n) = (0.0, 0.0, 0.0);
        for k in 0..grid.n_nodes() {
            let y = grid.y(k);
            let wt = grid.weight(k);
            let (wp, p1, p2) = profile.vortex(y, [d, 0.0], 1);
            let (wm, m1, m2) = profile.vortex(y, [-d, 0.0], -1);
            let v = wp * wm;
            let dv = -p1 * wm + wp * m1;
            let d2v = p2 * wm + wp * m2;
            let (sp, sm) = (wp.norm_sqr(), wm.norm_sqr());
            let gl = (p1 * m1 + p2 * m2) * 2.0 - v * ((1.0 - sp) * (1.0 - sm));
            let drift = Complex64::i() * d2v;
            p += (drift * dv.conj()).re * wt;
            q += (gl * dv.conj()).re * wt;
            n += dv.norm_sqr() * wt;
        }
        samples.push(ReducedSample { d, c_proj: (epsilon * p + q) / n, interaction: q / n, drift: p / n, norm2: n });
    }
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| vec![epsilon, -1.0 / s.d]).collect();
    let vals: Vec<f64> = samples.iter().map(|s| s.c_proj).collect();
    let fit = least_squares(&rows, &vals)?;
    let (c1, c2) = (fit[0], fit[1]);
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let fit_relative_residual = samples.iter().map(|s| (s.c_proj - (c1 * epsilon - c2 / s.d)).abs()).fold(0.0, f64::max) / scale;
    let ds: Vec<f64> = samples.iter().map(|s| s.d).collect();
    let inter: Vec<f64> = samples.iter().map(|s| s.interaction.abs()).collect();
    let interaction_slope = loglog_slope(&ds, &inter)?.slope;
    Ok(ReducedCurve { epsilon, samples, c1, c2, fit_relative_residual, d_star: c2 / (c1 * epsilon), interaction_slope })
}
