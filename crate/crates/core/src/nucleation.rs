//! Full GP solves on the exterior grid, vortex seeding at boundary extrema of
//! the flow speed, and the projection diagnostics λ₀, λ₁.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{boundary_extrema, local_mach_speed, FlowSolution};
use crate::grid::{ExtremumKind, Grid2D, OuterRows};
use crate::layer::VortexFreeSolution;
use crate::numerics::newton::norm2;
use crate::numerics::{newton_solve, CsrMatrix, NewtonConfig, NonlinearProblem, PreconditionerKind, TripletBuilder};
use crate::vortex::{detect_vortices_from, HalfPlaneGrid, VortexProfile, VortexSet};
use crate::wave::{continuation_in_c, default_sweep_config, solve_traveling_wave, tw_newton_config, TravelingWave, MAX_SPEED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Neumann,
    Dirichlet,
}

impl std::str::FromStr for BoundaryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neumann" => Ok(Self::Neumann),
            "dirichlet" => Ok(Self::Dirichlet),
            other => Err(Error::Config(format!("unknown boundary condition '{other}'"))),
        }
    }
}

impl std::fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Neumann => "neumann",
            Self::Dirichlet => "dirichlet",
        })
    }
}

/// Plaquettes whose smallest corner modulus is below this count as cores.
pub const CORE_THRESHOLD: f64 = 0.5;
/// A banked wave is reused when its speed is this close to the requested one.
pub const REUSE_DC: f64 = 0.02;
/// Cells per ε demanded near the nucleation sector.
pub const CELLS_PER_EPS: usize = 6;

pub fn gp_newton_config() -> NewtonConfig {
    NewtonConfig { abs_tol: 1e-10, max_iters: 40, damping_min: 1.0 / 256.0, ..NewtonConfig::default() }
        .with_preconditioner(PreconditionerKind::Lu)
}

/// ε²Δu + u(1 − |u|²) = 0 in finite-volume form, with u prescribed on the
/// outer ring and either zero flux (Neumann) or u = 0 (Dirichlet) on ∂Ω.
pub struct GpProblem {
    grid: Arc<Grid2D>,
    epsilon: f64,
    lap: CsrMatrix,
    fixed: Vec<Option<Complex64>>,
}

impl GpProblem {
    pub fn new(grid: Arc<Grid2D>, epsilon: f64, far_field: &[Complex64], bc: BoundaryKind) -> Result<Self> {
        let (nr, nt) = (grid.n_radial(), grid.n_angular());
        if far_field.len() != nt {
            return Err(Error::DimensionMismatch { expected: nt, got: far_field.len() });
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon = {epsilon}")));
        }
        let n = grid.n_nodes();
        let ones = vec![1.0; n];
        let lap = grid.flux_operator(&ones, OuterRows::Dirichlet);
        let mut fixed = vec![None; n];
        for j in 0..nt {
            fixed[grid.node(nr - 1, j)] = Some(far_field[j]);
            if bc == BoundaryKind::Dirichlet {
                fixed[grid.node(0, j)] = Some(Complex64::new(0.0, 0.0));
            }
        }
        Ok(Self { grid, epsilon, lap, fixed })
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        &self.grid
    }

    /// Balance rows ε²(Lu)_k + |cell_k| u_k(1 − |u_k|²); u_k − datum on fixed nodes.
    pub fn rows(&self, u: &[Complex64]) -> Vec<Complex64> {
        let area = self.grid.cell_area();
        let e2 = self.epsilon * self.epsilon;
        (0..u.len())
            .map(|k| match self.fixed[k] {
                Some(v) => u[k] - v,
                None => {
                    let lu: Complex64 = self.lap.row(k).map(|(m, w)| u[m] * w).sum();
                    lu * e2 + u[k] * (area[k] * (1.0 - u[k].norm_sqr()))
                }
            })
            .collect()
    }

    /// Pointwise residual ε²Δu + u(1 − |u|²) on free nodes, zero elsewhere.
    pub fn pointwise_residual(&self, u: &[Complex64]) -> Vec<Complex64> {
        let area = self.grid.cell_area();
        self.rows(u)
            .into_iter()
            .enumerate()
            .map(|(k, r)| if self.fixed[k].is_some() { Complex64::new(0.0, 0.0) } else { r / area[k] })
            .collect()
    }

    pub fn is_fixed(&self, k: usize) -> bool {
        self.fixed[k].is_some()
    }

    pub fn impose(&self, u: &mut [Complex64]) {
        for (z, f) in u.iter_mut().zip(&self.fixed) {
            if let Some(v) = f {
                *z = *v;
            }
        }
    }
}

fn to_real(u: &[Complex64]) -> Vec<f64> {
    u.iter().flat_map(|z| [z.re, z.im]).collect()
}

fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

impl NonlinearProblem for GpProblem {
    fn dim(&self) -> usize {
        2 * self.grid.n_nodes()
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        to_real(&self.rows(&to_complex(x)))
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        let n = self.grid.n_nodes();
        let area = self.grid.cell_area();
        let e2 = self.epsilon * self.epsilon;
        let mut t = TripletBuilder::with_capacity(2 * n, 2 * n, 14 * n);
        for k in 0..n {
            if self.fixed[k].is_some() {
                t.push(2 * k, 2 * k, 1.0);
                t.push(2 * k + 1, 2 * k + 1, 1.0);
                continue;
            }
            for (m, w) in self.lap.row(k) {
                t.push(2 * k, 2 * m, e2 * w);
                t.push(2 * k + 1, 2 * m + 1, e2 * w);
            }
            let (a, b, s) = (x[2 * k], x[2 * k + 1], area[k]);
            t.push(2 * k, 2 * k, s * (1.0 - 3.0 * a * a - b * b));
            t.push(2 * k, 2 * k + 1, -2.0 * s * a * b);
            t.push(2 * k + 1, 2 * k, -2.0 * s * a * b);
            t.push(2 * k + 1, 2 * k + 1, s * (1.0 - a * a - 3.0 * b * b));
        }
        t.build()
    }
}

#[derive(Debug, Clone)]
pub struct GPSolution {
    pub u: Vec<Complex64>,
    pub epsilon: f64,
    pub delta: f64,
    pub bc_kind: BoundaryKind,
    /// 2-norm of the finite-volume rows.
    pub residual_norm: f64,
    pub vortices: VortexSet,
    /// min |u| off the wall ring for Dirichlet, everywhere for Neumann.
    pub min_modulus: f64,
    pub newton_iterations: usize,
    /// λ₀ implied by the converged residual, centred at the sector point.
    pub lambda0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSummary {
    pub epsilon: f64,
    pub delta: f64,
    pub bc_kind: BoundaryKind,
    pub residual_norm: f64,
    pub vortices: VortexSet,
    pub min_modulus: f64,
    pub newton_iterations: usize,
    pub lambda0: f64,
}

impl GPSolution {
    pub fn summary(&self) -> GpSummary {
        GpSummary {
            epsilon: self.epsilon,
            delta: self.delta,
            bc_kind: self.bc_kind,
            residual_norm: self.residual_norm,
            vortices: self.vortices.clone(),
            min_modulus: self.min_modulus,
            newton_iterations: self.newton_iterations,
            lambda0: self.lambda0,
        }
    }
}

/// Far-field datum ρ^δ e^{iΦ^δ/ε} on the outer ring.
pub fn far_field_datum(flow: &FlowSolution, epsilon: f64) -> Vec<Complex64> {
    let g = &flow.grid;
    let nr = g.n_radial();
    (0..g.n_angular())
        .map(|j| {
            let k = g.node(nr - 1, j);
            Complex64::from_polar(flow.rho[k], flow.phi[k] / epsilon)
        })
        .collect()
}

/// Boundary index of the largest flow speed; the first one among values
/// equal to the maximum up to a relative 1e-9.
pub fn sector_index(flow: &FlowSolution) -> usize {
    let g = &flow.grid;
    let top = g.boundary_nodes().map(|j| flow.speed2[j]).fold(f64::NEG_INFINITY, f64::max);
    g.boundary_nodes().find(|&j| flow.speed2[j] >= top * (1.0 - 1e-9)).unwrap_or(0)
}

pub fn check_sector_resolution(grid: &Grid2D, j: usize, epsilon: f64, angular: bool) -> Result<()> {
    let rings = grid.rings_within(j, epsilon);
    if rings < CELLS_PER_EPS {
        return Err(Error::UnderResolved(format!("{rings} rings within ε = {epsilon} at boundary node {j}")));
    }
    if angular {
        let nt = grid.n_angular();
        let arc = grid.boundary_arc(j).max(grid.boundary_arc((j + nt - 1) % nt));
        if arc > epsilon / CELLS_PER_EPS as f64 {
            return Err(Error::UnderResolved(format!("boundary spacing {arc:.4} > ε/{CELLS_PER_EPS} at node {j}")));
        }
    }
    Ok(())
}

/// λ₀ from the imaginary part of the residual tested against ū, normalized by
/// the weight 1/(1 + |y|⁴) around `x0` with y = (x − x0)/ε.
pub fn lambda0_from_residual(problem: &GpProblem, u: &[Complex64], x0: [f64; 2]) -> f64 {
    let g = problem.grid();
    let area = g.cell_area();
    let r = problem.pointwise_residual(u);
    let eps = problem.epsilon;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..u.len() {
        if problem.is_fixed(k) {
            continue;
        }
        let y = [(g.x1()[k] - x0[0]) / eps, (g.x2()[k] - x0[1]) / eps];
        let w = 1.0 / (1.0 + (y[0] * y[0] + y[1] * y[1]).powi(2));
        num += (r[k] * u[k].conj()).im * area[k];
        den += u[k].norm_sqr() * w * area[k];
    }
    num / den
}

/// Newton solve of the exterior GP problem from `seed`.
pub fn gp_exterior_solve(flow: &FlowSolution, epsilon: f64, seed: &[Complex64], bc: BoundaryKind, cfg: &NewtonConfig) -> Result<GPSolution> {
    let g = flow.grid.clone();
    if seed.len() != g.n_nodes() {
        return Err(Error::DimensionMismatch { expected: g.n_nodes(), got: seed.len() });
    }
    let sector = sector_index(flow);
    check_sector_resolution(&g, sector, epsilon, flow.delta != 0.0)?;
    let problem = GpProblem::new(g.clone(), epsilon, &far_field_datum(flow, epsilon), bc)?;
    let mut start = seed.to_vec();
    problem.impose(&mut start);
    let out = newton_solve(&problem, &to_real(&start), cfg)?;
    let u = to_complex(&out.x);
    let first_row = if bc == BoundaryKind::Dirichlet { 1 } else { 0 };
    let vortices = detect_vortices_from(g.as_ref(), &u, CORE_THRESHOLD, first_row)?;
    let min_modulus = (g.node(first_row, 0)..g.n_nodes()).map(|k| u[k].norm()).fold(f64::INFINITY, f64::min);
    let x0 = [g.x1()[sector], g.x2()[sector]];
    let lambda0 = lambda0_from_residual(&problem, &u, x0);
    Ok(GPSolution {
        u,
        epsilon,
        delta: flow.delta,
        bc_kind: bc,
        residual_norm: out.residual_norm(),
        vortices,
        min_modulus,
        newton_iterations: out.iterations,
        lambda0,
    })
}

/// Dirichlet vortex-free seed ρ^δ tanh(√((1 − b²)/2) d/ε) e^{iΦ^δ/ε}, with b the
/// boundary speed on the same radial line and d the wall distance.
pub fn dirichlet_seed(flow: &FlowSolution, epsilon: f64) -> Vec<Complex64> {
    let g = &flow.grid;
    let nt = g.n_angular();
    (0..g.n_nodes())
        .map(|k| {
            let b2 = flow.speed2[k % nt].min(0.999);
            let d = g.wall_distance([g.x1()[k], g.x2()[k]]).max(0.0);
            let t = ((1.0 - b2) / 2.0).sqrt() * d / epsilon;
            Complex64::from_polar(flow.rho[k] * t.tanh(), flow.phi[k] / epsilon)
        })
        .collect()
}

/// Local frame at a boundary node: y₁ along the fluid normal, y₂ along the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub boundary_index: usize,
    pub x0: [f64; 2],
    pub normal: [f64; 2],
    pub flow_dir: [f64; 2],
    /// +1 when the flow runs counterclockwise at x0.
    pub orientation: f64,
    pub b: f64,
}

impl LocalFrame {
    pub fn at(flow: &FlowSolution, j: usize) -> Self {
        let g = &flow.grid;
        let phi_trace: Vec<f64> = g.boundary_nodes().map(|k| flow.phi[k]).collect();
        let dphi = g.boundary_tangential_derivative(&phi_trace)[j];
        Self::with_slope(flow, j, dphi)
    }

    fn with_slope(flow: &FlowSolution, j: usize, dphi: f64) -> Self {
        let g = &flow.grid;
        let tau = g.boundary_tangent(j);
        let s = if dphi < 0.0 { -1.0 } else { 1.0 };
        Self {
            boundary_index: j,
            x0: [g.x1()[j], g.x2()[j]],
            normal: g.boundary_normal(j),
            flow_dir: [s * tau[0], s * tau[1]],
            orientation: s,
            b: flow.speed2[j].max(0.0).sqrt(),
        }
    }

    pub fn to_physical(&self, y: [f64; 2], epsilon: f64) -> [f64; 2] {
        [
            self.x0[0] + epsilon * (y[0] * self.normal[0] + y[1] * self.flow_dir[0]),
            self.x0[1] + epsilon * (y[0] * self.normal[1] + y[1] * self.flow_dir[1]),
        ]
    }

    pub fn to_local(&self, x: [f64; 2], epsilon: f64) -> [f64; 2] {
        let r = [(x[0] - self.x0[0]) / epsilon, (x[1] - self.x0[1]) / epsilon];
        [r[0] * self.normal[0] + r[1] * self.normal[1], r[0] * self.flow_dir[0] + r[1] * self.flow_dir[1]]
    }

    /// Local traveling-wave speed 2b/√(1 − b²).
    pub fn speed(&self) -> Result<f64> {
        let b2 = self.b * self.b;
        if b2 >= 1.0 / 3.0 {
            return Err(Error::SpeedOutOfRange(if b2 < 1.0 { local_mach_speed(b2)? } else { f64::INFINITY }));
        }
        local_mach_speed(b2)
    }
}

fn nearest_boundary_index(grid: &Grid2D, angle: f64) -> usize {
    let tau = std::f64::consts::TAU;
    let dist = |t: f64| {
        let d = (t - angle).rem_euclid(tau);
        d.min(tau - d)
    };
    let th = grid.theta();
    grid.boundary_nodes().min_by(|&a, &b| dist(th[a]).total_cmp(&dist(th[b]))).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexSeedInfo {
    pub frame: LocalFrame,
    pub c_needed: f64,
    pub c_used: f64,
    pub extrapolated_seed: bool,
    /// x0 + ε d_c/√(1 − b²) ν: the +1 core of the placed wave.
    pub predicted_site: [f64; 2],
}

/// u_ε(x) U_c(√(1 − b²) R(x − x0)/ε), the wave reflected across the tangent
/// line; u_ε outside the wave box.
pub fn seed_vortex_branch(
    u_free: &[Complex64],
    flow: &FlowSolution,
    epsilon: f64,
    wave: &TravelingWave,
    x0_angle: f64,
) -> Result<(Vec<Complex64>, VortexSeedInfo)> {
    let g = &flow.grid;
    if u_free.len() != g.n_nodes() {
        return Err(Error::DimensionMismatch { expected: g.n_nodes(), got: u_free.len() });
    }
    if !wave.d_c.is_finite() {
        return Err(Error::InvalidArgument("wave carries no vortex".into()));
    }
    let frame = LocalFrame::at(flow, nearest_boundary_index(g, x0_angle));
    let c_needed = frame.speed()?;
    let a = (1.0 - frame.b * frame.b).sqrt();
    let field = (0..g.n_nodes())
        .map(|k| {
            let y = frame.to_local([g.x1()[k], g.x2()[k]], epsilon);
            let z = [a * y[0].abs(), a * y[1]];
            u_free[k] * wave.grid.interpolate(&wave.field, z).unwrap_or(Complex64::new(1.0, 0.0))
        })
        .collect();
    let info = VortexSeedInfo {
        frame,
        c_needed,
        c_used: wave.c,
        extrapolated_seed: (wave.c - c_needed).abs() >= REUSE_DC,
        predicted_site: frame.to_physical([wave.d_c / a, 0.0], epsilon),
    };
    Ok((field, info))
}

/// Converged half-plane waves on one grid, sorted by speed.
#[derive(Debug, Clone)]
pub struct WaveBank {
    pub grid: HalfPlaneGrid,
    pub waves: Vec<TravelingWave>,
    cfg: NewtonConfig,
    failed: Vec<f64>,
}

impl WaveBank {
    pub fn from_waves(grid: HalfPlaneGrid, mut waves: Vec<TravelingWave>) -> Result<Self> {
        waves.retain(|w| w.d_c.is_finite() && w.grid == grid);
        if waves.is_empty() {
            return Err(Error::MissingArtifact("no vortex-carrying wave on the bank grid".into()));
        }
        waves.sort_by(|a, b| a.c.total_cmp(&b.c));
        Ok(Self { grid, waves, cfg: tw_newton_config(), failed: Vec::new() })
    }

    /// Pair-continuation sweep from c_lo up to c_hi or the end of the branch.
    pub fn sweep(c_lo: f64, c_hi: f64, grid: &HalfPlaneGrid, profile: &VortexProfile) -> Result<Self> {
        let cfg = tw_newton_config();
        let branch = continuation_in_c(c_lo, c_hi.min(MAX_SPEED), grid, profile, &default_sweep_config(c_lo, c_hi), &cfg)?;
        Self::from_waves(grid.clone(), branch.waves)
    }

    pub fn c_range(&self) -> (f64, f64) {
        (self.waves[0].c, self.waves.last().unwrap().c)
    }

    fn nearest(&self, c: f64) -> usize {
        (0..self.waves.len()).min_by(|&a, &b| (self.waves[a].c - c).abs().total_cmp(&(self.waves[b].c - c).abs())).unwrap()
    }

    /// Index of a wave within `REUSE_DC` of c, solving one inside the banked
    /// range if needed. Outside the range, or when the solve fails, returns the
    /// nearest wave flagged as extrapolated.
    pub fn wave_for(&mut self, c: f64) -> (usize, bool) {
        let i = self.nearest(c);
        if (self.waves[i].c - c).abs() < REUSE_DC {
            return (i, false);
        }
        let (lo, hi) = self.c_range();
        if c < lo || c > hi || self.failed.iter().any(|f| (f - c).abs() < REUSE_DC) {
            return (i, true);
        }
        match solve_traveling_wave(c, &self.waves[i].field, &self.grid, &self.cfg) {
            Ok(w) if w.d_c.is_finite() => {
                let pos = self.waves.partition_point(|v| v.c < w.c);
                self.waves.insert(pos, w);
                (pos, false)
            }
            _ => {
                self.failed.push(c);
                (i, true)
            }
        }
    }

    /// The fastest banked wave within `REUSE_DC` of c, else the fastest wave
    /// overall (flagged).
    pub fn seed_wave(&mut self, c: f64) -> (&TravelingWave, bool) {
        let (i, extrapolated) = self.wave_for(c);
        (&self.waves[i], extrapolated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDiagnostics {
    pub epsilon: f64,
    /// θ of each evaluated boundary node.
    pub boundary_points: Vec<f64>,
    pub boundary_indices: Vec<usize>,
    pub lambda0: Vec<f64>,
    /// Counterclockwise orientation.
    pub lambda1: Vec<f64>,
    /// ∂_τ|∇Φ^δ|² (counterclockwise).
    pub tangential_derivative: Vec<f64>,
    /// A₀ at the global speed maximum.
    #[serde(rename = "A0_estimate")]
    pub a0_estimate: f64,
    pub a0_per_point: Vec<f64>,
    pub c_needed: Vec<f64>,
    pub c_used: Vec<f64>,
    pub extrapolated: Vec<bool>,
    /// Largest gap between the two- and four-cell derivative stencils.
    pub noise_floor: f64,
    pub max_gram_condition: f64,
}

impl ProjectionDiagnostics {
    /// Positions q (between q and q+1 in the evaluated list) where λ₁ changes sign.
    pub fn lambda1_zeros(&self) -> Vec<usize> {
        let n = self.lambda1.len();
        (0..n).filter(|&q| self.lambda1[q] == 0.0 || (self.lambda1[q] > 0.0) != (self.lambda1[(q + 1) % n] > 0.0)).collect()
    }

    /// Points where |∂_τ|∇Φ|²| > 3·noise but sign(λ₁) disagrees.
    pub fn sign_mismatches(&self) -> Vec<usize> {
        (0..self.lambda1.len())
            .filter(|&q| {
                let d = self.tangential_derivative[q];
                d.abs() > 3.0 * self.noise_floor && d.signum() != self.lambda1[q].signum()
            })
            .collect()
    }

    /// λ₁ / (ε ∂_τ|∇Φ|²) per point.
    pub fn ratios(&self) -> Vec<f64> {
        self.lambda1.iter().zip(&self.tangential_derivative).map(|(l, d)| l / (self.epsilon * d)).collect()
    }
}

struct WaveData {
    d1: Vec<Complex64>,
    d2: Vec<Complex64>,
    /// ∫|∂₂U|² dz and ∫ z₂ S(1 − S²) ∂₂S dz over the half-plane box.
    i1: f64,
    i2: f64,
}

fn wave_data(w: &TravelingWave) -> WaveData {
    let g = &w.grid;
    let u = &w.field;
    let h = g.h;
    let n = g.n_nodes();
    let mut d1 = vec![Complex64::new(0.0, 0.0); n];
    let mut d2 = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        let (i, j) = g.ij(k);
        d1[k] = if i == 0 {
            Complex64::new(0.0, 0.0)
        } else if i + 1 == g.n1 {
            (u[k] - u[g.index(i - 1, j)]) / h
        } else {
            (u[g.index(i + 1, j)] - u[g.index(i - 1, j)]) / (2.0 * h)
        };
        d2[k] = if j == 0 {
            (u[g.index(i, 1)] - u[k]) / h
        } else if j + 1 == g.n2 {
            (u[k] - u[g.index(i, j - 1)]) / h
        } else {
            (u[g.index(i, j + 1)] - u[g.index(i, j - 1)]) / (2.0 * h)
        };
    }
    let (mut i1, mut i2) = (0.0, 0.0);
    for k in 0..n {
        let wt = g.weight(k);
        let s2 = u[k].norm_sqr();
        i1 += d2[k].norm_sqr() * wt;
        i2 += g.y(k)[1] * (1.0 - s2) * (u[k].conj() * d2[k]).re * wt;
    }
    WaveData { d1, d2, i1, i2 }
}

/// Gradient-based two- vs four-cell stencil gap of the boundary speed trace.
fn derivative_noise_floor(grid: &Grid2D, trace: &[f64], d: &[f64]) -> f64 {
    let nt = trace.len();
    let mut s = vec![0.0; nt + 1];
    for j in 0..nt {
        s[j + 1] = s[j] + grid.boundary_arc(j);
    }
    let per = s[nt];
    let arc = |a: usize, b: usize| {
        // Signed arc length from node a forward to node b (b − a ≤ nt/2).
        let v = s[b % nt] - s[a % nt];
        if v < 0.0 { v + per } else { v }
    };
    (0..nt)
        .map(|j| {
            let (m2, p2) = ((j + nt - 2) % nt, (j + 2) % nt);
            let wide = (trace[p2] - trace[m2]) / arc(m2, p2);
            (d[j] - wide).abs()
        })
        .fold(0.0, f64::max)
}

/// λ₀, λ₁ at the requested boundary nodes from the projection of 𝕊[W] on
/// z₀ = iW and z₁ = ∂W/∂y₂, with the computed ρ_ε, Φ_ε as coefficients.
pub fn lambda_projections(flow: &FlowSolution, vf: &VortexFreeSolution, bank: &mut WaveBank, indices: &[usize]) -> Result<ProjectionDiagnostics> {
    let g = &flow.grid;
    let eps = vf.epsilon;
    let ext = boundary_extrema(flow);
    let trace = &ext.trace.values;
    let noise_floor = derivative_noise_floor(g, trace, &ext.tangential_derivative);
    let (r1, r2) = g.gradient(&vf.rho_eps);
    let (p1, p2) = g.gradient(&vf.phi_eps);
    let phi_trace: Vec<f64> = g.boundary_nodes().map(|k| flow.phi[k]).collect();
    let dphi = g.boundary_tangential_derivative(&phi_trace);
    let mut cache: HashMap<u64, WaveData> = HashMap::new();
    let j_max = sector_index(flow);

    let m = indices.len();
    let mut out = ProjectionDiagnostics {
        epsilon: eps,
        boundary_points: Vec::with_capacity(m),
        boundary_indices: indices.to_vec(),
        lambda0: Vec::with_capacity(m),
        lambda1: Vec::with_capacity(m),
        tangential_derivative: Vec::with_capacity(m),
        a0_estimate: f64::NAN,
        a0_per_point: Vec::with_capacity(m),
        c_needed: Vec::with_capacity(m),
        c_used: Vec::with_capacity(m),
        extrapolated: Vec::with_capacity(m),
        noise_floor,
        max_gram_condition: 0.0,
    };
    for &j in indices {
        if j >= g.n_angular() {
            return Err(Error::InvalidArgument(format!("boundary index {j} out of range")));
        }
        let frame = LocalFrame::with_slope(flow, j, dphi[j]);
        let c = frame.speed()?;
        let (wi, extrapolated) = bank.wave_for(c);
        let wave = &bank.waves[wi];
        let data = cache.entry(wave.c.to_bits()).or_insert_with(|| wave_data(wave));
        let wg = &wave.grid;
        let b = frame.b;
        let a2 = 1.0 - b * b;
        let a = a2.sqrt();
        let mut gram = [[0.0; 2]; 2];
        let mut rhs = [0.0; 2];
        for k in 0..wg.n_nodes() {
            let z = wg.y(k);
            let y = [z[0] / a, z[1] / a];
            let Some(st) = g.interpolation_weights(frame.to_physical(y, eps)) else { continue };
            let mut v = [0.0; 5];
            for &(q, w) in &st {
                v[0] += w * vf.rho_eps[q];
                v[1] += w * r1[q];
                v[2] += w * r2[q];
                v[3] += w * p1[q];
                v[4] += w * p2[q];
            }
            let rho = v[0];
            let (nu, e) = (frame.normal, frame.flow_dir);
            let g_nu = (v[1] * nu[0] + v[2] * nu[1]) / rho;
            let g_e = (v[1] * e[0] + v[2] * e[1]) / rho;
            let f_nu = v[3] * nu[0] + v[4] * nu[1];
            let f_e = v[3] * e[0] + v[4] * e[1];
            let wv = wave.field[k];
            let w1 = data.d1[k] * a;
            let w2 = data.d2[k] * a;
            let i = Complex64::i();
            // Residual of the full equation for this W: the formula for W solving the
            // wave equation at speed 2b/a, plus the speed mismatch of the banked wave.
            let s = (w1 * g_nu + w2 * g_e) * (2.0 * eps)
                + (w1 * f_nu + w2 * (f_e - b)) * (2.0 * i)
                + wv * ((rho * rho - a2) * (1.0 - wv.norm_sqr()))
                + w2 * (i * (2.0 * b - a * wave.c));
            let decay = 1.0 / (1.0 + (y[0] * y[0] + y[1] * y[1]).powi(2));
            let zs = [wv * (i * decay), w2 * decay];
            let weight = wg.weight(k);
            for r in 0..2 {
                rhs[r] += (s * zs[r].conj()).re * weight;
                for col in 0..2 {
                    gram[r][col] += (zs[col] * zs[r].conj()).re * weight;
                }
            }
        }
        let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
        let tr = gram[0][0] + gram[1][1];
        let disc = ((gram[0][0] - gram[1][1]).powi(2) + 4.0 * gram[0][1] * gram[1][0]).max(0.0).sqrt();
        let cond = (tr + disc) / (tr - disc).max(0.0);
        if !(cond.is_finite() && cond < 1e10 && det.abs() > 0.0) {
            return Err(Error::GramSingular(cond));
        }
        out.max_gram_condition = out.max_gram_condition.max(cond);
        let l0 = (gram[1][1] * rhs[0] - gram[0][1] * rhs[1]) / det;
        let l1 = (gram[0][0] * rhs[1] - gram[1][0] * rhs[0]) / det;
        let a0 = 2.0 * data.i1 + data.i2 / a2;
        out.boundary_points.push(g.theta()[j]);
        out.lambda0.push(l0);
        out.lambda1.push(frame.orientation * l1);
        out.tangential_derivative.push(ext.tangential_derivative[j]);
        out.a0_per_point.push(a0);
        out.c_needed.push(c);
        out.c_used.push(wave.c);
        out.extrapolated.push(extrapolated);
        if j == j_max {
            out.a0_estimate = a0;
        }
    }
    if out.a0_estimate.is_nan() {
        let frame = LocalFrame::with_slope(flow, j_max, dphi[j_max]);
        let (wi, _) = bank.wave_for(frame.speed()?);
        let d = wave_data(&bank.waves[wi]);
        out.a0_estimate = 2.0 * d.i1 + d.i2 / (1.0 - frame.b * frame.b);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedSite {
    pub boundary_index: usize,
    pub theta: f64,
    pub x0: [f64; 2],
    pub kind: ExtremumKind,
    pub speed2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexBranchReport {
    pub seed: VortexSeedInfo,
    pub solution: GpSummary,
    /// L² distance to the vortex-free branch.
    pub distinctness: f64,
    /// Nearest core with |u| < 0.3 to the predicted site, if any.
    pub observed_site: Option<[f64; 2]>,
    pub site_distance: f64,
    pub core_wall_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleationReport {
    pub epsilon: f64,
    pub delta: f64,
    pub bc_kind: BoundaryKind,
    pub solver_tolerance: f64,
    pub vortex_free: GpSummary,
    pub vortex_branch: Vec<VortexBranchReport>,
    pub predicted_sites: Vec<PredictedSite>,
    pub observed_sites: Vec<[f64; 2]>,
    pub projections: Option<ProjectionDiagnostics>,
    /// Set when no branch could be seeded (e.g. "degenerate: no extrema").
    pub degenerate: Option<String>,
}

#[derive(Debug, Clone)]
pub struct NucleationRun {
    pub report: NucleationReport,
    pub u_free: Vec<Complex64>,
    pub u_vortex: Vec<Vec<Complex64>>,
}

/// Core modulus below which a detected vortex counts as a nucleated core.
pub const NUCLEATED_CORE: f64 = 0.3;

/// Window of boundary cells around a seeded maximum scanned for the λ₁ zero.
const SEED_WINDOW: usize = 6;

/// Vortex-free solve, then one vortex-seeded solve per requested maximum of
/// the boundary speed (largest first).
pub fn nucleation_report(
    flow: &FlowSolution,
    vf: &VortexFreeSolution,
    bank: &mut WaveBank,
    bc: BoundaryKind,
    n_seeds: usize,
    cfg: &NewtonConfig,
) -> Result<NucleationRun> {
    let g = flow.grid.clone();
    let eps = vf.epsilon;
    let free_seed = match bc {
        BoundaryKind::Neumann => vf.u.clone(),
        BoundaryKind::Dirichlet => dirichlet_seed(flow, eps),
    };
    let free = gp_exterior_solve(flow, eps, &free_seed, bc, cfg)?;
    let ext = boundary_extrema(flow);
    let predicted_sites: Vec<PredictedSite> = ext
        .trace
        .extrema
        .iter()
        .map(|e| PredictedSite { boundary_index: e.index, theta: e.theta, x0: [g.x1()[e.index], g.x2()[e.index]], kind: e.kind, speed2: e.value })
        .collect();
    let mut report = NucleationReport {
        epsilon: eps,
        delta: flow.delta,
        bc_kind: bc,
        solver_tolerance: cfg.abs_tol,
        vortex_free: free.summary(),
        vortex_branch: Vec::new(),
        predicted_sites,
        observed_sites: Vec::new(),
        projections: None,
        degenerate: None,
    };
    let mut maxima: Vec<&PredictedSite> = report.predicted_sites.iter().filter(|s| s.kind == ExtremumKind::Max).collect();
    let top = maxima.iter().map(|s| s.speed2).fold(f64::NEG_INFINITY, f64::max);
    maxima.sort_by(|a, b| {
        let (ta, tb) = (a.speed2 >= top * (1.0 - 1e-9), b.speed2 >= top * (1.0 - 1e-9));
        tb.cmp(&ta).then(b.speed2.total_cmp(&a.speed2)).then(a.boundary_index.cmp(&b.boundary_index))
    });
    if ext.trace.is_constant || maxima.is_empty() {
        report.degenerate = Some("degenerate: no extrema".into());
        return Ok(NucleationRun { report, u_free: free.u, u_vortex: Vec::new() });
    }
    let nt = g.n_angular();
    let chosen: Vec<usize> = maxima.iter().take(n_seeds.max(1)).map(|s| s.boundary_index).collect();
    let window: Vec<usize> = chosen
        .iter()
        .flat_map(|&j| (0..=2 * SEED_WINDOW).map(move |q| (j + nt + q - SEED_WINDOW) % nt))
        .collect();
    let proj = lambda_projections(flow, vf, bank, &window)?;
    let mut branches = Vec::new();
    let mut fields = Vec::new();
    for (s, &j) in chosen.iter().enumerate() {
        // λ₁ zero of max type (+ to − counterclockwise) closest to the maximum.
        let off = s * (2 * SEED_WINDOW + 1);
        let l = &proj.lambda1[off..off + 2 * SEED_WINDOW + 1];
        let zero = (0..2 * SEED_WINDOW)
            .filter(|&q| l[q] > 0.0 && l[q + 1] <= 0.0)
            .min_by_key(|&q| (q as i64 - SEED_WINDOW as i64).abs())
            .map(|q| if l[q].abs() <= l[q + 1].abs() { q } else { q + 1 });
        let j_seed = zero.map(|q| window[off + q]).unwrap_or(j);
        let c = LocalFrame::at(flow, j_seed).speed()?;
        let (wave, _) = bank.seed_wave(c);
        let (seed, info) = seed_vortex_branch(&free.u, flow, eps, wave, g.theta()[j_seed])?;
        let sol = gp_exterior_solve(flow, eps, &seed, bc, cfg)?;
        let area = g.cell_area();
        let distinctness = (0..g.n_nodes()).map(|k| (sol.u[k] - free.u[k]).norm_sqr() * area[k]).sum::<f64>().sqrt();
        let dist = |p: [f64; 2]| (p[0] - info.predicted_site[0]).hypot(p[1] - info.predicted_site[1]);
        let core = sol
            .vortices
            .vortices
            .iter()
            .filter(|v| v.core_min < NUCLEATED_CORE)
            .min_by(|a, b| dist(a.position).total_cmp(&dist(b.position)));
        let (observed_site, site_distance, core_wall_distance) = match core {
            Some(v) => (Some(v.position), dist(v.position), g.wall_distance(v.position)),
            None => (None, f64::INFINITY, f64::NAN),
        };
        if let Some(p) = observed_site {
            report.observed_sites.push(p);
        }
        branches.push(VortexBranchReport { seed: info, solution: sol.summary(), distinctness, observed_site, site_distance, core_wall_distance });
        fields.push(sol.u);
    }
    report.vortex_branch = branches;
    report.projections = Some(proj);
    Ok(NucleationRun { report, u_free: free.u, u_vortex: fields })
}

/// L² distance Σ|u − v|² |cell| between two fields on the same grid.
pub fn l2_distance(grid: &Grid2D, u: &[Complex64], v: &[Complex64]) -> f64 {
    let area = grid.cell_area();
    u.iter().zip(v).zip(area).map(|((a, b), s)| (a - b).norm_sqr() * s).sum::<f64>().sqrt()
}

/// ‖rows‖₂ of an arbitrary field, for diagnostics.
pub fn gp_residual_norm(problem: &GpProblem, u: &[Complex64]) -> f64 {
    norm2(&to_real(&problem.rows(u)))
}
