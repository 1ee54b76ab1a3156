//! Planar traveling waves ΔU + ic∂₂U + U(1 − |U|²) = 0 on the half-plane
//! y₁ ≥ 0 with ∂₁U = 0 on y₁ = 0 and U = 1 on the outer box.

mod reduced;
mod spectrum;

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dense::loglog_slope;
use crate::numerics::newton::norm2;
use crate::numerics::{newton_solve, ContinuationConfig, CsrMatrix, NewtonConfig, NonlinearProblem, PreconditionerKind, Termination, TripletBuilder};
use crate::vortex::{detect_vortices, pair_ansatz, solve_gl_profile, HalfPlaneGrid, VortexProfile, VortexSet};

pub use reduced::{reduced_speed_curve, ReducedCurve, ReducedSample};
pub use spectrum::{nondegeneracy_spectrum, SpectralReport};

pub const MAX_SPEED: f64 = std::f64::consts::SQRT_2;

pub fn to_real(u: &[Complex64]) -> Vec<f64> {
    u.iter().flat_map(|z| [z.re, z.im]).collect()
}

pub fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// 5-point Laplacian with the mirror ghost at y₁ = 0; outer rows empty.
pub(crate) fn laplacian(g: &HalfPlaneGrid) -> CsrMatrix {
    let n = g.n_nodes();
    let h2 = 1.0 / (g.h * g.h);
    let mut t = TripletBuilder::with_capacity(n, n, 5 * n);
    for k in 0..n {
        if g.is_outer(k) {
            continue;
        }
        let (i, j) = g.ij(k);
        t.push(k, k, -4.0 * h2);
        t.push(k, g.index(i + 1, j), h2);
        t.push(k, g.index(if i == 0 { 1 } else { i - 1 }, j), h2);
        t.push(k, g.index(i, j + 1), h2);
        t.push(k, g.index(i, j - 1), h2);
    }
    t.build()
}

/// Centered ∂₂ with outer rows empty.
pub(crate) fn d2(g: &HalfPlaneGrid) -> CsrMatrix {
    let n = g.n_nodes();
    let s = 0.5 / g.h;
    let mut t = TripletBuilder::with_capacity(n, n, 2 * n);
    for k in 0..n {
        if g.is_outer(k) {
            continue;
        }
        let (i, j) = g.ij(k);
        t.push(k, g.index(i, j + 1), s);
        t.push(k, g.index(i, j - 1), -s);
    }
    t.build()
}

pub struct TwProblem {
    grid: HalfPlaneGrid,
    c: f64,
    lap: CsrMatrix,
    d2: CsrMatrix,
    outer: Vec<bool>,
}

impl TwProblem {
    pub fn new(grid: &HalfPlaneGrid, c: f64) -> Result<Self> {
        if !grid.is_half_plane() {
            return Err(Error::InvalidArgument("traveling waves live on the half-plane grid".into()));
        }
        let outer = (0..grid.n_nodes()).map(|k| grid.is_outer(k)).collect();
        Ok(Self { grid: grid.clone(), c, lap: laplacian(grid), d2: d2(grid), outer })
    }

    /// Pointwise ΔU + ic∂₂U + U(1 − |U|²) on interior nodes (zero on the outer box).
    pub fn operator(&self, u: &[Complex64]) -> Vec<Complex64> {
        self.operator_at(u, self.c)
    }

    fn operator_at(&self, u: &[Complex64], c: f64) -> Vec<Complex64> {
        let (re, im): (Vec<f64>, Vec<f64>) = u.iter().map(|z| (z.re, z.im)).unzip();
        let (lr, li) = (self.lap.mul_vec(&re), self.lap.mul_vec(&im));
        let (dr, di) = (self.d2.mul_vec(&re), self.d2.mul_vec(&im));
        (0..u.len())
            .map(|k| {
                if self.outer[k] {
                    return Complex64::new(0.0, 0.0);
                }
                let m = 1.0 - u[k].norm_sqr();
                Complex64::new(lr[k] - c * di[k] + u[k].re * m, li[k] + c * dr[k] + u[k].im * m)
            })
            .collect()
    }

    /// Real-linear 𝕃 at U, interleaved (re, im); outer rows are identity.
    pub fn linearization(&self, u: &[Complex64]) -> CsrMatrix {
        self.linearization_at(u, self.c)
    }

    fn linearization_at(&self, u: &[Complex64], c: f64) -> CsrMatrix {
        let n = u.len();
        let inner: Vec<bool> = self.outer.iter().map(|o| !o).collect();
        let mut d11 = vec![0.0; n];
        let mut d22 = vec![0.0; n];
        let mut d12 = vec![0.0; n];
        let mut eye = vec![0.0; n];
        for k in 0..n {
            if self.outer[k] {
                eye[k] = 1.0;
                continue;
            }
            let (a, b) = (u[k].re, u[k].im);
            let m = 1.0 - a * a - b * b;
            d11[k] = m - 2.0 * a * a;
            d22[k] = m - 2.0 * b * b;
            d12[k] = -2.0 * a * b;
        }
        let id = CsrMatrix::diag(&eye);
        let j11 = self.lap.add(&CsrMatrix::diag(&d11), 1.0, 1.0).add(&id, 1.0, 1.0);
        let j22 = self.lap.add(&CsrMatrix::diag(&d22), 1.0, 1.0).add(&id, 1.0, 1.0);
        let j12 = self.d2.add(&CsrMatrix::diag(&d12), -c, 1.0).select_rows(&inner);
        let j21 = self.d2.add(&CsrMatrix::diag(&d12), c, 1.0).select_rows(&inner);
        CsrMatrix::interleave_2x2(&j11, &j12, &j21, &j22)
    }
}

impl TwProblem {
    fn residual_at(&self, x: &[f64], c: f64) -> Vec<f64> {
        let u = to_complex(x);
        let mut r = to_real(&self.operator_at(&u, c));
        for k in 0..u.len() {
            if self.outer[k] {
                r[2 * k] = u[k].re - 1.0;
                r[2 * k + 1] = u[k].im;
            }
        }
        r
    }
}

impl NonlinearProblem for TwProblem {
    fn dim(&self) -> usize {
        2 * self.grid.n_nodes()
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.residual_at(x, self.c)
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        self.linearization(&to_complex(x))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TravelingWave {
    pub c: f64,
    pub grid: HalfPlaneGrid,
    pub field: Vec<Complex64>,
    /// y₁ of the +1 vortex; NaN when the field carries none.
    pub d_c: f64,
    pub residual_norm: f64,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub vortices: VortexSet,
    pub momentum: f64,
    pub newton_iterations: usize,
}

pub fn tw_newton_config() -> NewtonConfig {
    NewtonConfig { abs_tol: 1e-10, max_iters: 25, ..NewtonConfig::default() }.with_preconditioner(PreconditionerKind::Lu)
}

/// Im ∫ (Ū − 1)∂₂U over the half-plane.
pub fn momentum(g: &HalfPlaneGrid, u: &[Complex64]) -> f64 {
    let mut p = 0.0;
    for k in 0..u.len() {
        let (i, j) = g.ij(k);
        if j == 0 || j == g.n2 - 1 {
            continue;
        }
        let d = (u[g.index(i, j + 1)] - u[g.index(i, j - 1)]) / (2.0 * g.h);
        p += ((u[k].conj() - 1.0) * d).im * g.weight(k);
    }
    p
}

fn finish(grid: &HalfPlaneGrid, c: f64, field: Vec<Complex64>, residual_norm: f64, iterations: usize) -> Result<TravelingWave> {
    let vortices = detect_vortices(grid, &field, 0.5)?;
    let d_c = vortices
        .vortices
        .iter()
        .filter(|v| v.winding > 0)
        .map(|v| v.position[0])
        .fold(f64::NAN, |a: f64, b| if a.is_nan() { b } else { a.min(b) });
    let amplitude = field.iter().map(|z| z.norm()).collect();
    let phase = field.iter().map(|z| z.arg()).collect();
    let momentum = momentum(grid, &field);
    Ok(TravelingWave { c, grid: grid.clone(), field, d_c, residual_norm, amplitude, phase, vortices, momentum, newton_iterations: iterations })
}

/// Rebuilds a wave from a stored field, recomputing its diagnostics.
pub fn wave_from_field(c: f64, grid: &HalfPlaneGrid, field: Vec<Complex64>) -> Result<TravelingWave> {
    if field.len() != grid.n_nodes() {
        return Err(Error::DimensionMismatch { expected: grid.n_nodes(), got: field.len() });
    }
    let res = norm2(&TwProblem::new(grid, c)?.residual(&to_real(&field)));
    finish(grid, c, field, res, 0)
}

/// (U, c) with the +1 core pinned on the axis: Re U(d, 0) = 0. On y₂ = 0 the
/// wave is real (U(y₁, −y₂) = Ū(y₁, y₂)), so one scalar constraint suffices.
pub struct PinnedPair {
    tw: TwProblem,
    k0: usize,
    t: f64,
}

impl PinnedPair {
    pub fn new(grid: &HalfPlaneGrid, d: f64) -> Result<Self> {
        let tw = TwProblem::new(grid, 0.0)?;
        let s = d / grid.h;
        if !(s >= 1.0 && s + 2.0 < grid.n1 as f64) {
            return Err(Error::InvalidArgument(format!("pinned core d = {d} outside the box")));
        }
        let i0 = s.floor() as usize;
        let k0 = grid.index(i0, (grid.n2 - 1) / 2);
        Ok(Self { tw, k0, t: s - i0 as f64 })
    }
}

impl NonlinearProblem for PinnedPair {
    fn dim(&self) -> usize {
        2 * self.tw.grid.n_nodes() + 1
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let n2 = x.len() - 1;
        let mut r = self.tw.residual_at(&x[..n2], x[n2]);
        r.push((1.0 - self.t) * x[2 * self.k0] + self.t * x[2 * self.k0 + 2]);
        r
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        let n2 = x.len() - 1;
        let u = to_complex(&x[..n2]);
        let j = self.tw.linearization_at(&u, x[n2]);
        let mut t = TripletBuilder::with_capacity(n2 + 1, n2 + 1, j.nnz() + n2 + 2);
        t.push_matrix(&j, 0, 0, 1.0);
        let (re, im): (Vec<f64>, Vec<f64>) = u.iter().map(|z| (z.re, z.im)).unzip();
        let (dr, di) = (self.tw.d2.mul_vec(&re), self.tw.d2.mul_vec(&im));
        for k in 0..u.len() {
            if !self.tw.outer[k] {
                t.push(2 * k, n2, -di[k]);
                t.push(2 * k + 1, n2, dr[k]);
            }
        }
        t.push(n2, 2 * self.k0, 1.0 - self.t);
        t.push(n2, 2 * self.k0 + 2, self.t);
        t.build()
    }
}

/// Traveling wave whose +1 core sits at (d, 0); the speed is part of the solve.
pub fn solve_pinned(d: f64, seed: &[Complex64], c_guess: f64, grid: &HalfPlaneGrid, cfg: &NewtonConfig) -> Result<TravelingWave> {
    let p = PinnedPair::new(grid, d)?;
    let mut x0 = to_real(seed);
    x0.push(c_guess);
    let out = newton_solve(&p, &x0, cfg)?;
    let m = out.x.len() - 1;
    let c = out.x[m];
    if !(c > 0.0 && c < MAX_SPEED) {
        return Err(Error::SpeedOutOfRange(c));
    }
    let res = norm2(&p.tw.residual_at(&out.x[..m], c));
    finish(grid, c, to_complex(&out.x[..m]), res, out.iterations)
}

fn default_profile() -> &'static VortexProfile {
    static P: OnceLock<VortexProfile> = OnceLock::new();
    P.get_or_init(|| solve_gl_profile(40.0, 2000).expect("GL profile"))
}

/// Replaces the pair at d_old by the pair at d_new: U·V_new/V_old.
fn move_pair(u: &[Complex64], d_old: f64, d_new: f64, grid: &HalfPlaneGrid) -> Vec<Complex64> {
    let p = default_profile();
    let vo = pair_ansatz(p, d_old, grid).field;
    let vn = pair_ansatz(p, d_new, grid).field;
    (0..u.len())
        .map(|k| {
            if grid.is_outer(k) {
                Complex64::new(1.0, 0.0)
            } else if vo[k].norm() > 0.05 {
                u[k] / vo[k] * vn[k]
            } else {
                vn[k]
            }
        })
        .collect()
}

/// Secant search over the pinned separation until the pinned speed matches c.
fn solve_by_pinning(c: f64, seed: &[Complex64], d0: f64, grid: &HalfPlaneGrid, cfg: &NewtonConfig) -> Result<Vec<Complex64>> {
    let mut w = solve_pinned(d0, seed, c, grid, cfg)?;
    let mut d_a = d0;
    let mut prev: Option<(f64, f64)> = None;
    for _ in 0..10 {
        if (w.c / c - 1.0).abs() < 2e-3 {
            return Ok(w.field);
        }
        let d_b = match prev {
            Some((d_p, c_p)) if (c_p.ln() - w.c.ln()).abs() > 1e-12 => {
                let slope = (d_a.ln() - d_p.ln()) / (w.c.ln() - c_p.ln());
                d_a * ((c.ln() - w.c.ln()) * slope).exp()
            }
            _ => d_a * w.c / c,
        };
        let d_b = d_b.clamp(0.5 * d_a, 2.0 * d_a);
        let next = solve_pinned(d_b, &move_pair(&w.field, d_a, d_b, grid), w.c, grid, cfg)?;
        prev = Some((d_a, w.c));
        (w, d_a) = (next, d_b);
    }
    Err(Error::SeedFailure(format!("pinned secant stalled at c = {} (target {c})", w.c)))
}

/// Core of the seed on the symmetry axis: the minimum of |U| along y₂ = 0,
/// shifted half a cell so a pinned zero never sits on a node.
fn axis_core(grid: &HalfPlaneGrid, u: &[Complex64]) -> Option<f64> {
    let j = (grid.n2 - 1) / 2;
    let (i, m) = (1..grid.n1 - 1).map(|i| (i, u[grid.index(i, j)].norm())).min_by(|a, b| a.1.total_cmp(&b.1))?;
    (m < 0.5).then(|| (i as f64 + 0.5) * grid.h)
}

/// Newton at fixed c; a seed carrying a vortex that Newton cannot place is
/// first relaxed with the core pinned, then polished at fixed c.
pub fn solve_traveling_wave(c: f64, seed: &[Complex64], grid: &HalfPlaneGrid, cfg: &NewtonConfig) -> Result<TravelingWave> {
    if !(c > 0.0 && c < MAX_SPEED) {
        return Err(Error::SpeedOutOfRange(c));
    }
    if seed.len() != grid.n_nodes() {
        return Err(Error::DimensionMismatch { expected: grid.n_nodes(), got: seed.len() });
    }
    let problem = TwProblem::new(grid, c)?;
    let core = axis_core(grid, seed);
    let first = NewtonConfig { max_iters: if core.is_some() { cfg.max_iters.min(12) } else { cfg.max_iters }, ..*cfg };
    let out = match (newton_solve(&problem, &to_real(seed), &first), core) {
        (Ok(o), _) => o,
        (Err(_), Some(d0)) if d0 > grid.h => {
            let u = solve_by_pinning(c, seed, d0, grid, cfg)?;
            newton_solve(&problem, &to_real(&u), cfg)?
        }
        (Err(e), _) => return Err(e),
    };
    let res = out.residual_norm();
    let wave = finish(grid, c, to_complex(&out.x), res, out.iterations)?;
    if core.is_some() && wave.vortices.is_empty() {
        return Err(Error::VortexEscape);
    }
    Ok(wave)
}

/// Pair-ansatz seed with half-separation d = 1/c.
pub fn ansatz_seed(profile: &VortexProfile, c: f64, grid: &HalfPlaneGrid) -> Vec<Complex64> {
    let mut f = pair_ansatz(profile, 1.0 / c, grid).field;
    for (k, z) in f.iter_mut().enumerate() {
        if grid.is_outer(k) {
            *z = Complex64::new(1.0, 0.0);
        }
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwSample {
    pub c: f64,
    pub d_c: f64,
    pub residual: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct TwBranch {
    pub samples: Vec<TwSample>,
    pub waves: Vec<TravelingWave>,
    pub termination: Termination,
    /// Last converged speed with a vortex pair.
    pub c_end_observed: f64,
}

pub fn default_sweep_config(c_start: f64, c_end: f64) -> ContinuationConfig {
    ContinuationConfig {
        param_start: c_start,
        param_end: c_end,
        initial_step: 0.025,
        min_step: 0.005,
        max_step: 0.1,
        step_shrink: 0.5,
        step_grow: 1.5,
    }
}

/// Sweeps c upward from the pair ansatz at c_start. Each step pins the core
/// at the point-vortex estimate d·c/(c + Δc) and moves the previous wave
/// there, so every sample is an exact wave at its own speed. Stops when the
/// cores merge (d_c < 2h), when c reaches c_end, or when Δc < `min_step`.
pub fn continuation_in_c(
    c_start: f64,
    c_end: f64,
    grid: &HalfPlaneGrid,
    profile: &VortexProfile,
    sweep: &ContinuationConfig,
    newton: &NewtonConfig,
) -> Result<TwBranch> {
    if !(c_start > 0.0 && c_start < c_end && c_end <= MAX_SPEED) {
        return Err(Error::InvalidArgument(format!("need 0 < c_start < c_end ≤ √2 (got {c_start}, {c_end})")));
    }
    let first = solve_traveling_wave(c_start, &ansatz_seed(profile, c_start, grid), grid, newton)
        .map_err(|e| Error::SeedFailure(format!("c = {c_start}: {e}")))?;
    let mut waves = vec![first];
    let mut step = sweep.initial_step;
    let termination = loop {
        let last = waves.last().unwrap();
        if last.c >= c_end {
            break Termination::Completed;
        }
        let d = last.d_c * last.c / (last.c + step);
        if d < 2.0 * grid.h {
            break Termination::Stopped { last_param: last.c, reason: format!("cores merged (next d = {d:.3} < 2h)") };
        }
        let seed = move_pair(&last.field, last.d_c, d, grid);
        match solve_pinned(d, &seed, last.c + step, grid, newton) {
            Ok(w) if w.c > last.c && w.d_c.is_finite() => {
                waves.push(w);
                step = (step * sweep.step_grow).min(sweep.max_step);
            }
            Ok(w) if w.c <= last.c => {
                break Termination::Stopped { last_param: last.c, reason: format!("speed stopped increasing at d = {d:.3} (c = {})", w.c) };
            }
            other => {
                let reason = match other {
                    Err(e) => e.to_string(),
                    Ok(_) => "no vortex detected".into(),
                };
                step *= sweep.step_shrink;
                if step < sweep.min_step {
                    break Termination::BranchEnd { last_param: last.c, failed_param: last.c + step / sweep.step_shrink, reason };
                }
            }
        }
    };
    let samples = waves.iter().map(|w| TwSample { c: w.c, d_c: w.d_c, residual: w.residual_norm, momentum: w.momentum }).collect();
    let c_end_observed = waves.last().unwrap().c;
    Ok(TwBranch { samples, waves, termination, c_end_observed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayExponents {
    pub exp_grad_s: f64,
    pub exp_grad_phi: f64,
    pub exp_u_minus_1: f64,
}

/// Slopes of the radial envelopes (max over bins of |y|) of |∇S|, |∇φ|,
/// |U − 1| over 2d_c ≤ |y| ≤ 0.8·min(L₁, L₂).
pub fn decay_fit(wave: &TravelingWave) -> Result<DecayExponents> {
    let g = &wave.grid;
    let lmin = g.l1.min(g.l2);
    if !(wave.d_c.is_finite() && lmin >= 8.0 * wave.d_c) {
        return Err(Error::InsufficientRange(format!("box half-width {lmin} < 8·d_c = {}", 8.0 * wave.d_c)));
    }
    let (r0, r1) = (2.0 * wave.d_c, 0.8 * lmin);
    let nb = 24;
    let edges: Vec<f64> = (0..=nb).map(|q| r0 * (r1 / r0).powf(q as f64 / nb as f64)).collect();
    let mut env = vec![[0.0f64; 3]; nb];
    let u = &wave.field;
    for k in 0..u.len() {
        if g.is_outer(k) {
            continue;
        }
        let y = g.y(k);
        let r = y[0].hypot(y[1]);
        if r < r0 || r >= r1 {
            continue;
        }
        let (i, j) = g.ij(k);
        let d1 = if i == 0 { Complex64::new(0.0, 0.0) } else { (u[g.index(i + 1, j)] - u[g.index(i - 1, j)]) / (2.0 * g.h) };
        let d2 = (u[g.index(i, j + 1)] - u[g.index(i, j - 1)]) / (2.0 * g.h);
        let m = u[k].norm();
        // ∇S = Re(Ū∇U)/|U|, ∇φ = Im(Ū∇U)/|U|².
        let a = [u[k].conj() * d1, u[k].conj() * d2];
        let gs = (a[0].re.powi(2) + a[1].re.powi(2)).sqrt() / m;
        let gp = (a[0].im.powi(2) + a[1].im.powi(2)).sqrt() / (m * m);
        let um = (u[k] - 1.0).norm();
        let b = edges.partition_point(|e| *e <= r) - 1;
        for (q, v) in [gs, gp, um].into_iter().enumerate() {
            env[b][q] = env[b][q].max(v);
        }
    }
    let centers: Vec<f64> = (0..nb).map(|q| (edges[q] * edges[q + 1]).sqrt()).collect();
    let slope = |q: usize| loglog_slope(&centers, &env.iter().map(|e| e[q]).collect::<Vec<_>>()).map(|f| f.slope);
    Ok(DecayExponents { exp_grad_s: slope(0)?, exp_grad_phi: slope(1)?, exp_u_minus_1: slope(2)? })
}
