//! Vortex-free GP solution: boundary layer ρ₁, Madelung residuals and the
//! Newton polish of the coupled system, plus the Dirichlet layer profile.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowSolution;
use crate::grid::{Grid2D, OuterRows};
use crate::numerics::dense::fit_line;
use crate::numerics::linear::{solve_with_config, LinearConfig};
use crate::numerics::{newton_solve, CsrMatrix, NewtonConfig, NonlinearProblem, PreconditionerKind, TripletBuilder};

/// Minimum number of rings within distance ε of the wall.
pub const MIN_LAYER_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Boundary value of the fitted exponential (signed).
    pub amplitude: f64,
    /// Decay rate in unscaled x (the layer decays like e^{−rate·t}).
    pub rate: f64,
    /// Boundary angle index of the fit.
    pub boundary_index: usize,
    /// √2 ρ^δ(x₀)/ε.
    pub predicted_rate: f64,
    /// ε ∂_t ρ^δ(x₀) / (√2 ρ^δ(x₀)), t into the fluid.
    pub predicted_amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct BoundaryLayerField {
    pub rho1: Vec<f64>,
    pub epsilon: f64,
    pub decay_fit: DecayFit,
    pub residual_norm: f64,
    /// max |∂_ν(ρ^δ + ρ₁)| over boundary nodes.
    pub neumann_mismatch: f64,
}

fn lu_linear() -> LinearConfig {
    LinearConfig { tol: 1e-12, max_iters: 200, restart: 60, preconditioner: PreconditionerKind::Lu }
}

/// Nodal Laplacian L f / area with zero-flux boundary rows.
pub fn nodal_laplacian(grid: &Grid2D, f: &[f64]) -> Vec<f64> {
    let l = grid.flux_operator(&vec![1.0; grid.n_nodes()], OuterRows::Neumann).mul_vec(f);
    l.iter().zip(grid.cell_area()).map(|(a, b)| a / b).collect()
}

/// Checks that every boundary radial line has at least `cells` rings within ε.
pub fn check_layer_resolution(grid: &Grid2D, epsilon: f64, cells: usize) -> Result<()> {
    let worst = (0..grid.n_angular()).map(|j| grid.rings_within(j, epsilon)).min().unwrap_or(0);
    if worst < cells {
        return Err(Error::UnderResolved(format!("{worst} rings within ε = {epsilon} of the wall (need {cells})")));
    }
    Ok(())
}

/// Solves ε²Δρ₁ − 2(ρ^δ)²ρ₁ = −ε²Δρ^δ with ∂_ν(ρ^δ + ρ₁) = 0 on ∂Ω and
/// ρ₁ = 0 on the outer ring, so that S₁[(ρ^δ + ρ₁, Φ^δ)] = O(ρ₁²).
pub fn solve_rho1(flow: &FlowSolution, epsilon: f64, _cfg: &NewtonConfig) -> Result<BoundaryLayerField> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon}")));
    }
    let g = &flow.grid;
    check_layer_resolution(g, epsilon, MIN_LAYER_CELLS)?;
    let n = g.n_nodes();
    let e2 = epsilon * epsilon;
    let l1 = g.flux_operator(&vec![1.0; n], OuterRows::Dirichlet);
    let rho = &flow.rho;
    let area = g.cell_area();
    let outer = g.node(g.n_radial() - 1, 0);
    let mut t = TripletBuilder::with_capacity(n, n, l1.nnz() + n);
    t.push_matrix(&l1, 0, 0, e2);
    for k in 0..n {
        if k < outer {
            t.push(k, k, -2.0 * area[k] * rho[k] * rho[k]);
        } else {
            t.push(k, k, 1.0);
        }
    }
    let a = t.build();
    let lr = l1.mul_vec(rho);
    let b: Vec<f64> = (0..n).map(|k| if k < outer { -e2 * lr[k] } else { 0.0 }).collect();
    let rho1 = solve_with_config(&a, &b, &lu_linear())?.x;
    let r = a.mul_vec(&rho1);
    let residual_norm = r.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let total: Vec<f64> = rho.iter().zip(&rho1).map(|(a, b)| a + b).collect();
    let neumann_mismatch = g.boundary_normal_derivative(&total).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let decay_fit = fit_layer_decay(flow, &rho1, epsilon)?;
    Ok(BoundaryLayerField { rho1, epsilon, decay_fit, residual_norm, neumann_mismatch })
}

/// Exponential fit of ρ₁ minus its outer expansion ε²Δρ^δ/(2ρ²) along the
/// normal line through the maximum-speed boundary node, over t ∈ [0, 3ε].
pub fn fit_layer_decay(flow: &FlowSolution, rho1: &[f64], epsilon: f64) -> Result<DecayFit> {
    let g = &flow.grid;
    let j0 = g.boundary_nodes().max_by(|&a, &b| flow.speed2[a].total_cmp(&flow.speed2[b])).unwrap_or(0);
    let lap = nodal_laplacian(g, &flow.rho);
    let b = g.node(0, j0);
    let (mut ts, mut ls) = (vec![], vec![]);
    let mut sign = 0.0;
    for i in 0..g.n_radial() - 1 {
        let k = g.node(i, j0);
        let t = (g.x1()[k] - g.x1()[b]).hypot(g.x2()[k] - g.x2()[b]);
        if t > 3.0 * epsilon {
            break;
        }
        // Boundary rows of the nodal Laplacian include the wall flux; use the
        // neighbor's value for the outer expansion there.
        let kl = if i == 0 { g.node(1, j0) } else { k };
        let outer = epsilon * epsilon * lap[kl] / (2.0 * flow.rho[k] * flow.rho[k]);
        let v = rho1[k] - outer;
        if i == 0 {
            sign = v.signum();
        }
        if v * sign > 0.0 {
            ts.push(t);
            ls.push((v * sign).ln());
        }
    }
    let fit = fit_line(&ts, &ls)?;
    let rho0 = flow.rho[b];
    let dn = g.boundary_normal_derivative(&flow.rho)[j0];
    Ok(DecayFit {
        amplitude: sign * fit.intercept.exp(),
        rate: -fit.slope,
        boundary_index: j0,
        predicted_rate: 2f64.sqrt() * rho0 / epsilon,
        predicted_amplitude: epsilon * dn / (2f64.sqrt() * rho0),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Pointwise S₁ = ε²Δρ + ρ(1 − ρ² − |∇Φ|²) (finite-volume row / cell area).
    pub s1: Vec<f64>,
    /// Pointwise S₂ = ∇·(ρ²∇Φ).
    pub s2: Vec<f64>,
    pub sigma: f64,
    pub gamma: f64,
    pub weighted_norms: BTreeMap<String, f64>,
    /// 2-norms of the integrated (finite-volume) rows, the quantities Newton drives to zero.
    pub integrated_norms: (f64, f64),
}

pub const DEFAULT_SIGMA: f64 = 0.5;

/// Discrete Madelung operators on the grid interior (outer ring excluded).
pub fn madelung_rows(grid: &Grid2D, rho: &[f64], phi: &[f64], epsilon: f64) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n_nodes();
    let (g1, g2) = grid.gradient(phi);
    let area = grid.cell_area();
    let l1 = grid.flux_operator(&vec![1.0; n], OuterRows::Dirichlet);
    let mut s1 = l1.mul_vec(rho);
    let r2: Vec<f64> = rho.iter().map(|r| r * r).collect();
    let s2 = grid.flux_operator(&r2, OuterRows::Dirichlet).mul_vec(phi);
    let outer = grid.node(grid.n_radial() - 1, 0);
    for k in 0..n {
        if k < outer {
            let q2 = g1[k] * g1[k] + g2[k] * g2[k];
            s1[k] = epsilon * epsilon * s1[k] + area[k] * rho[k] * (1.0 - rho[k] * rho[k] - q2);
        } else {
            s1[k] = 0.0;
        }
    }
    (s1, s2)
}

pub fn madelung_residual(grid: &Grid2D, rho: &[f64], phi: &[f64], epsilon: f64) -> Result<ResidualReport> {
    let n = grid.n_nodes();
    if rho.len() != n || phi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rho.len().min(phi.len()) });
    }
    let (r1, r2) = madelung_rows(grid, rho, phi, epsilon);
    let area = grid.cell_area();
    let s1: Vec<f64> = r1.iter().zip(area).map(|(a, b)| a / b).collect();
    let s2: Vec<f64> = r2.iter().zip(area).map(|(a, b)| a / b).collect();
    let e = epsilon;
    let l2y = |f: &[f64]| (f.iter().zip(area).map(|(v, a)| v * v * a).sum::<f64>()).sqrt() / e;
    let l4y = |f: &[f64]| (f.iter().zip(area).map(|(v, a)| v.powi(4) * a).sum::<f64>()).powf(0.25) / e.sqrt();
    let sup = |f: &[f64]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sigma = DEFAULT_SIGMA;
    let weighted = |f: &[f64]| {
        (0..n).map(|k| f[k].abs() * (1.0 + (grid.radius(k) / e).powi(2)).sqrt().powf(1.0 + sigma)).fold(0.0f64, f64::max)
    };
    let mut w = BTreeMap::new();
    w.insert("s1_l2_y".into(), l2y(&s1));
    w.insert("s2_l2_y".into(), l2y(&s2));
    w.insert("s2_l4_y".into(), l4y(&s2));
    w.insert("s1_sup".into(), sup(&s1));
    w.insert("s2_sup".into(), sup(&s2));
    w.insert("s1_weighted_sup".into(), weighted(&s1));
    w.insert("s2_weighted_sup".into(), weighted(&s2));
    w.insert("rho_second_diff_sup".into(), second_difference_sup(grid, rho));
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(ResidualReport { s1, s2, sigma, gamma: 0.5, weighted_norms: w, integrated_norms: (norm(&r1), norm(&r2)) })
}

/// Sup of index-space second differences, the stand-in for Hölder seminorms.
fn second_difference_sup(grid: &Grid2D, f: &[f64]) -> f64 {
    let (nr, nt) = (grid.n_radial(), grid.n_angular());
    let mut m: f64 = 0.0;
    for i in 1..nr - 1 {
        for j in 0..nt {
            let k = grid.node(i, j);
            let dr = f[grid.node(i + 1, j)] - 2.0 * f[k] + f[grid.node(i - 1, j)];
            let ds = f[grid.node(i, (j + 1) % nt)] - 2.0 * f[k] + f[grid.node(i, (j + nt - 1) % nt)];
            m = m.max(dr.abs()).max(ds.abs());
        }
    }
    m
}

/// Newton system for (ρ, Φ), interleaved per node: rows S₁, S₂ on the interior
/// with zero-flux wall conditions, Dirichlet data on the outer ring.
pub struct MadelungProblem {
    grid: Arc<Grid2D>,
    epsilon: f64,
    rho_outer: Vec<f64>,
    phi_outer: Vec<f64>,
    g1: CsrMatrix,
    g2: CsrMatrix,
    l1: CsrMatrix,
}

impl MadelungProblem {
    pub fn new(grid: Arc<Grid2D>, epsilon: f64, rho_outer: Vec<f64>, phi_outer: Vec<f64>) -> Self {
        let (g1, g2) = grid.gradient_matrices();
        let l1 = grid.flux_operator(&vec![1.0; grid.n_nodes()], OuterRows::Dirichlet);
        Self { grid, epsilon, rho_outer, phi_outer, g1, g2, l1 }
    }

    fn outer_start(&self) -> usize {
        self.grid.node(self.grid.n_radial() - 1, 0)
    }

    pub fn split(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (x.iter().step_by(2).cloned().collect(), x.iter().skip(1).step_by(2).cloned().collect())
    }

    pub fn join(rho: &[f64], phi: &[f64]) -> Vec<f64> {
        rho.iter().zip(phi).flat_map(|(a, b)| [*a, *b]).collect()
    }
}

impl NonlinearProblem for MadelungProblem {
    fn dim(&self) -> usize {
        2 * self.grid.n_nodes()
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let (rho, phi) = Self::split(x);
        let (s1, s2) = madelung_rows(&self.grid, &rho, &phi, self.epsilon);
        let o = self.outer_start();
        let mut r = Vec::with_capacity(x.len());
        for k in 0..self.grid.n_nodes() {
            if k < o {
                r.push(s1[k]);
                r.push(s2[k]);
            } else {
                r.push(rho[k] - self.rho_outer[k - o]);
                r.push(phi[k] - self.phi_outer[k - o]);
            }
        }
        r
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        let (rho, phi) = Self::split(x);
        let n = self.grid.n_nodes();
        let o = self.outer_start();
        let area = self.grid.cell_area();
        let e2 = self.epsilon * self.epsilon;
        let a1 = self.g1.mul_vec(&phi);
        let a2 = self.g2.mul_vec(&phi);
        let interior: Vec<bool> = (0..n).map(|k| k < o).collect();
        let d11: Vec<f64> = (0..n).map(|k| area[k] * (1.0 - 3.0 * rho[k] * rho[k] - a1[k] * a1[k] - a2[k] * a2[k])).collect();
        let j11 = self.l1.add(&CsrMatrix::diag(&d11), e2, 1.0).select_rows(&interior);
        let c1: Vec<f64> = (0..n).map(|k| -2.0 * area[k] * rho[k] * a1[k]).collect();
        let c2: Vec<f64> = (0..n).map(|k| -2.0 * area[k] * rho[k] * a2[k]).collect();
        let j12 = self.g1.scale_rows(&c1).add(&self.g2.scale_rows(&c2), 1.0, 1.0).select_rows(&interior);
        let r2: Vec<f64> = rho.iter().map(|r| r * r).collect();
        let j22 = self.grid.flux_operator(&r2, OuterRows::Dirichlet);
        let two_rho: Vec<f64> = rho.iter().map(|r| 2.0 * r).collect();
        let j21 = self.grid.flux_kappa_derivative(&phi, OuterRows::Dirichlet).matmul(&CsrMatrix::diag(&two_rho));
        let outer_id = CsrMatrix::diag(&(0..n).map(|k| if k < o { 0.0 } else { 1.0 }).collect::<Vec<_>>());
        let j11 = j11.add(&outer_id, 1.0, 1.0);
        let j22 = j22.add(&outer_id, 1.0, 1.0);
        CsrMatrix::interleave_2x2(&j11, &j12, &j21, &j22)
    }
}

#[derive(Debug, Clone)]
pub struct VortexFreeSolution {
    pub grid: Arc<Grid2D>,
    pub rho_eps: Vec<f64>,
    pub phi_eps: Vec<f64>,
    pub epsilon: f64,
    pub u: Vec<Complex64>,
    /// (‖ρ₂‖∞, ‖Φ₂‖∞) with ρ₂ = ρ_ε − ρ^δ − ρ₁ and εΦ₂ = Φ_ε − Φ^δ.
    pub correction_norms: (f64, f64),
    /// Integrated Madelung residual norms (S₁, S₂) of the returned state.
    pub residual_norms: (f64, f64),
    pub newton_iterations: usize,
    pub polished: bool,
}

pub fn madelung_newton_config() -> NewtonConfig {
    NewtonConfig { max_iters: 30, ..NewtonConfig::default() }.with_preconditioner(PreconditionerKind::Lu)
}

pub fn assemble_vortex_free(
    flow: &FlowSolution,
    layer: &BoundaryLayerField,
    epsilon: f64,
    polish: bool,
    cfg: &NewtonConfig,
) -> Result<VortexFreeSolution> {
    if layer.epsilon != epsilon {
        return Err(Error::InvalidArgument(format!("layer computed at ε = {}, requested {epsilon}", layer.epsilon)));
    }
    let g = flow.grid.clone();
    let n = g.n_nodes();
    let w1: Vec<f64> = flow.rho.iter().zip(&layer.rho1).map(|(a, b)| a + b).collect();
    let o = g.node(g.n_radial() - 1, 0);
    let (rho, phi, iterations) = if polish {
        let p = MadelungProblem::new(g.clone(), epsilon, w1[o..].to_vec(), flow.phi[o..].to_vec());
        let out = newton_solve(&p, &MadelungProblem::join(&w1, &flow.phi), cfg)?;
        let (r, f) = MadelungProblem::split(&out.x);
        (r, f, out.iterations)
    } else {
        (w1.clone(), flow.phi.clone(), 0)
    };
    let min_rho = rho.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_flow = flow.rho.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_rho < 0.5 * min_flow {
        return Err(Error::VortexContamination { min_rho, bound: 0.5 * min_flow });
    }
    let rho2 = (0..n).map(|k| (rho[k] - w1[k]).abs()).fold(0.0, f64::max);
    let phi2 = (0..n).map(|k| (phi[k] - flow.phi[k]).abs()).fold(0.0, f64::max) / epsilon;
    let (s1, s2) = madelung_rows(&g, &rho, &phi, epsilon);
    let norm = |v: &[f64]| v[..o].iter().map(|x| x * x).sum::<f64>().sqrt();
    let u = rho.iter().zip(&phi).map(|(r, f)| Complex64::from_polar(*r, f / epsilon)).collect();
    Ok(VortexFreeSolution {
        grid: g,
        rho_eps: rho,
        phi_eps: phi,
        epsilon,
        u,
        correction_norms: (rho2, phi2),
        residual_norms: (norm(&s1), norm(&s2)),
        newton_iterations: iterations,
        polished: polish,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirichletLayer {
    pub b: f64,
    pub length: f64,
    pub y: Vec<f64>,
    pub profile: Vec<f64>,
    /// Sup of the ODE residual ρ₀'' + ρ₀(1 − b² − ρ₀²) on the profile grid.
    pub closed_form_error: f64,
}

/// ρ₀(y) = √(1−b²) tanh(√((1−b²)/2) y).
pub fn dirichlet_profile(b: f64, y: f64) -> f64 {
    let a = (1.0 - b * b).sqrt();
    a * (a / 2f64.sqrt() * y).tanh()
}

pub fn dirichlet_layer(b: f64, length: f64) -> Result<DirichletLayer> {
    if !(b * b < 1.0) {
        return Err(Error::DomainError(format!("b² = {} ≥ 1", b * b)));
    }
    let a = (1.0 - b * b).sqrt();
    if length < 20.0 / a {
        return Err(Error::InvalidArgument(format!("L = {length} < 20/√(1−b²)")));
    }
    let k = a / 2f64.sqrt();
    let m = 4001;
    let y: Vec<f64> = (0..m).map(|i| length * i as f64 / (m - 1) as f64).collect();
    let profile: Vec<f64> = y.iter().map(|&t| dirichlet_profile(b, t)).collect();
    let closed_form_error = y
        .iter()
        .zip(&profile)
        .map(|(&t, &r)| {
            let th = (k * t).tanh();
            let d2 = -2.0 * a * k * k * th * (1.0 - th * th);
            (d2 + r * (a * a - r * r)).abs()
        })
        .fold(0.0, f64::max);
    Ok(DirichletLayer { b, length, y, profile, closed_form_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{flow_newton_config, solve_potential_flow, FlowParams};
    use crate::grid::{GridSpec, ObstacleShape};
    use crate::numerics::newton::jacobian_fd_mismatch;
    use rand::{Rng, SeedableRng};

    fn flow(delta: f64) -> FlowSolution {
        let g = Arc::new(Grid2D::build(GridSpec::new(ObstacleShape::disk(1.0), 64, 48, 12.0, 1.06)).unwrap());
        solve_potential_flow(g, FlowParams { delta, epsilon: 0.1 }, None, &flow_newton_config()).unwrap()
    }

    #[test]
    fn dirichlet_profile_oracles() {
        let d = dirichlet_layer(0.0, 40.0).unwrap();
        assert!(d.closed_form_error < 1e-12);
        for (y, r) in d.y.iter().zip(&d.profile).step_by(97) {
            assert!((r - (y / 2f64.sqrt()).tanh()).abs() < 1e-15);
        }
        let d = dirichlet_layer(0.5, 40.0).unwrap();
        assert_eq!(d.profile[0], 0.0);
        assert!((d.profile.last().unwrap() - 0.8660254037844386).abs() < 1e-8);
        assert!(d.profile.windows(2).all(|w| w[1] >= w[0]));
        assert!(matches!(dirichlet_layer(1.0, 40.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn ground_state_has_zero_residual() {
        let f = flow(0.0);
        let n = f.grid.n_nodes();
        let r = madelung_residual(&f.grid, &vec![1.0; n], &vec![0.0; n], 0.1).unwrap();
        assert!(r.s1.iter().chain(&r.s2).all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn w0_residuals() {
        let f = flow(0.15);
        let eps = 0.1;
        let r = madelung_residual(&f.grid, &f.rho, &f.phi, eps).unwrap();
        let lap = nodal_laplacian(&f.grid, &f.rho);
        let o = f.grid.node(f.grid.n_radial() - 1, 0);
        let nt = f.grid.n_angular();
        for k in nt..o {
            assert!((r.s1[k] - eps * eps * lap[k]).abs() < 1e-12);
        }
        // S₂[W₀] is the flow residual itself.
        assert!(r.integrated_norms.1 < 1e-9, "{}", r.integrated_norms.1);
    }

    #[test]
    fn gauge_invariance_of_residuals() {
        let f = flow(0.15);
        let eps = 0.1;
        let u: Vec<Complex64> = f.rho.iter().zip(&f.phi).map(|(r, p)| Complex64::from_polar(*r, p / eps)).collect();
        let rot = Complex64::from_polar(1.0, 0.7);
        let extract = |u: &[Complex64]| {
            let rho: Vec<f64> = u.iter().map(|z| z.norm()).collect();
            let mut phi: Vec<f64> = u.iter().map(|z| eps * z.arg()).collect();
            // Unwrap along each ring from the continuous reference.
            for (k, p) in phi.iter_mut().enumerate() {
                let turns = ((f.phi[k] - *p) / (2.0 * std::f64::consts::PI * eps)).round();
                *p += turns * 2.0 * std::f64::consts::PI * eps;
            }
            (rho, phi)
        };
        let (r0, p0) = extract(&u);
        let ur: Vec<Complex64> = u.iter().map(|z| z * rot).collect();
        let (r1, p1) = extract(&ur);
        let shift = p1[0] - p0[0];
        let p1: Vec<f64> = p1.iter().map(|v| v - shift).collect();
        let a = madelung_residual(&f.grid, &r0, &p0, eps).unwrap();
        let b = madelung_residual(&f.grid, &r1, &p1, eps).unwrap();
        for (x, y) in a.s1.iter().zip(&b.s1) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn madelung_jacobian_consistent() {
        let f = flow(0.15);
        let o = f.grid.node(f.grid.n_radial() - 1, 0);
        let p = MadelungProblem::new(f.grid.clone(), 0.1, f.rho[o..].to_vec(), f.phi[o..].to_vec());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = MadelungProblem::join(&f.rho, &f.phi).iter().map(|v| v + 0.01 * rng.gen_range(-1.0..1.0)).collect();
        let dirs: Vec<Vec<f64>> = (0..10).map(|_| (0..p.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        assert!(jacobian_fd_mismatch(&p, &x, &dirs, 1e-6) < 1e-5);
    }

    #[test]
    fn trivial_flow_gives_constant_state() {
        let f = flow(0.0);
        let layer = solve_rho1(&f, 0.2, &NewtonConfig::default()).unwrap();
        assert!(layer.rho1.iter().all(|v| v.abs() < 1e-12));
        let vf = assemble_vortex_free(&f, &layer, 0.2, true, &madelung_newton_config()).unwrap();
        assert_eq!(vf.newton_iterations, 0);
        assert!(vf.u.iter().all(|z| (*z - 1.0).norm() < 1e-12));
    }

    #[test]
    fn layer_cancels_wall_flux_and_first_order_residual() {
        let f = flow(0.2);
        let eps = 0.2;
        let layer = solve_rho1(&f, eps, &NewtonConfig::default()).unwrap();
        let w1: Vec<f64> = f.rho.iter().zip(&layer.rho1).map(|(a, b)| a + b).collect();
        let r0 = madelung_residual(&f.grid, &f.rho, &f.phi, eps).unwrap();
        let r1 = madelung_residual(&f.grid, &w1, &f.phi, eps).unwrap();
        // S₁[W₁] = O(ρ₁²) is much smaller than S₁[W₀] = ε²Δρ^δ.
        assert!(r1.weighted_norms["s1_l2_y"] < 0.1 * r0.weighted_norms["s1_l2_y"]);
        assert!(layer.neumann_mismatch < 0.05 * f.grid.boundary_normal_derivative(&f.rho).iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn under_resolution_detected() {
        let f = flow(0.1);
        assert!(matches!(solve_rho1(&f, 0.001, &NewtonConfig::default()), Err(Error::UnderResolved(_))));
    }
}
