//! Subsonic potential flow ∇·((1 − |∇Φ|²)∇Φ) = 0 outside the obstacle with
//! ∂Φ/∂ν = 0 on ∂Ω and ∇Φ → δ e₂ at infinity.
//!
//! The outer ring carries Dirichlet data δx₂ plus a dipole in Prandtl–Glauert
//! stretched coordinates; the two dipole moments are extra unknowns fixed by a
//! least-squares fit on the two rings just inside.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{boundary_trace, BoundaryTrace, Grid2D, OuterRows, ShapeKind};
use crate::numerics::dense::loglog_slope;
use crate::numerics::{
    continuation_sweep, ContinuationConfig, CsrMatrix, Family, NewtonConfig, NonlinearProblem, PreconditionerKind,
    Termination, TripletBuilder, Verdict,
};

pub const SONIC_SPEED2: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub delta: f64,
    pub epsilon: f64,
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("|delta| = {} must be < 1", self.delta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon = {} must lie in (0, 1)", self.epsilon)));
        }
        Ok(())
    }
}

/// Converged flow. `rho` is the modulus √(1 − |∇Φ|²) of the limiting GP
/// field; `density` = 1 − |∇Φ|² = rho².
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub grid: Arc<Grid2D>,
    pub phi: Vec<f64>,
    pub speed2: Vec<f64>,
    pub rho: Vec<f64>,
    pub density: Vec<f64>,
    pub delta: f64,
    pub dipole: [f64; 2],
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub max_boundary_speed2: f64,
    pub max_speed2: f64,
    pub sonic_margin: f64,
}

pub fn flow_newton_config() -> NewtonConfig {
    NewtonConfig { max_iters: 40, ..NewtonConfig::default() }.with_preconditioner(PreconditionerKind::Lu)
}

/// The discrete flow system with unknowns (Φ, A, B).
pub struct FlowProblem {
    grid: Arc<Grid2D>,
    delta: f64,
    g1: CsrMatrix,
    g2: CsrMatrix,
    p1: Vec<f64>,
    p2: Vec<f64>,
    /// Least-squares weights: A = Σ α_k e_k, B = Σ β_k e_k over `fit_nodes`.
    fit_nodes: Vec<usize>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl FlowProblem {
    pub fn new(grid: Arc<Grid2D>, delta: f64) -> Result<Self> {
        if !(delta.abs() < 1.0 / 3f64.sqrt()) {
            return Err(Error::InvalidArgument(format!("delta = {delta} is not subsonic at infinity")));
        }
        let (g1, g2) = grid.gradient_matrices();
        let sx = (1.0 - delta * delta).sqrt();
        let sy = (1.0 - 3.0 * delta * delta).sqrt();
        let n = grid.n_nodes();
        let mut p1 = vec![0.0; n];
        let mut p2 = vec![0.0; n];
        for k in 0..n {
            let (x, y) = (grid.x1()[k] / sx, grid.x2()[k] / sy);
            let r2 = x * x + y * y;
            p1[k] = x / r2;
            p2[k] = y / r2;
        }
        let nr = grid.n_radial();
        let fit_nodes: Vec<usize> = (nr - 3..nr - 1).flat_map(|i| (0..grid.n_angular()).map(move |j| (i, j))).map(|(i, j)| grid.node(i, j)).collect();
        let (mut s11, mut s12, mut s22) = (0.0, 0.0, 0.0);
        for &k in &fit_nodes {
            s11 += p1[k] * p1[k];
            s12 += p1[k] * p2[k];
            s22 += p2[k] * p2[k];
        }
        let det = s11 * s22 - s12 * s12;
        let alpha = fit_nodes.iter().map(|&k| (s22 * p1[k] - s12 * p2[k]) / det).collect();
        let beta = fit_nodes.iter().map(|&k| (-s12 * p1[k] + s11 * p2[k]) / det).collect();
        Ok(Self { grid, delta, g1, g2, p1, p2, fit_nodes, alpha, beta })
    }

    pub fn grid(&self) -> &Arc<Grid2D> {
        &self.grid
    }

    pub fn speed2(&self, phi: &[f64]) -> Vec<f64> {
        let a = self.g1.mul_vec(phi);
        let b = self.g2.mul_vec(phi);
        a.iter().zip(&b).map(|(x, y)| x * x + y * y).collect()
    }

    /// Dipole moments fitted to Φ − δx₂ on the fit rings.
    pub fn fit_dipole(&self, phi: &[f64]) -> [f64; 2] {
        let mut a = 0.0;
        let mut b = 0.0;
        for (m, &k) in self.fit_nodes.iter().enumerate() {
            let e = phi[k] - self.delta * self.grid.x2()[k];
            a += self.alpha[m] * e;
            b += self.beta[m] * e;
        }
        [a, b]
    }

    /// Full state vector from a potential, with fitted dipole moments.
    pub fn state_from_phi(&self, phi: &[f64]) -> Vec<f64> {
        let mut x = phi.to_vec();
        x.extend_from_slice(&self.fit_dipole(phi));
        x
    }

    /// Incompressible seed: the exact potential for the disk, δx₂ otherwise.
    pub fn seed(&self) -> Vec<f64> {
        let g = &self.grid;
        let phi: Vec<f64> = match g.shape().kind {
            ShapeKind::Disk => {
                let a2 = g.shape().semi_axis_a.powi(2);
                (0..g.n_nodes()).map(|k| self.delta * g.x2()[k] * (1.0 + a2 / g.radius(k).powi(2))).collect()
            }
            ShapeKind::Ellipse => g.x2().iter().map(|y| self.delta * y).collect(),
        };
        self.state_from_phi(&phi)
    }

    fn outer_ring(&self) -> std::ops::Range<usize> {
        let g = &self.grid;
        g.node(g.n_radial() - 1, 0)..g.n_nodes()
    }
}

impl NonlinearProblem for FlowProblem {
    fn dim(&self) -> usize {
        self.grid.n_nodes() + 2
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let n = self.grid.n_nodes();
        let phi = &x[..n];
        let kappa: Vec<f64> = self.speed2(phi).iter().map(|q| 1.0 - q).collect();
        let mut r = self.grid.flux_operator(&kappa, OuterRows::Dirichlet).mul_vec(phi);
        let (a, b) = (x[n], x[n + 1]);
        for k in self.outer_ring() {
            r[k] = phi[k] - self.delta * self.grid.x2()[k] - a * self.p1[k] - b * self.p2[k];
        }
        let fit = self.fit_dipole(phi);
        r.push(a - fit[0]);
        r.push(b - fit[1]);
        r
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        let n = self.grid.n_nodes();
        let phi = &x[..n];
        let g1p = self.g1.mul_vec(phi);
        let g2p = self.g2.mul_vec(phi);
        let kappa: Vec<f64> = g1p.iter().zip(&g2p).map(|(a, b)| 1.0 - a * a - b * b).collect();
        let l = self.grid.flux_operator(&kappa, OuterRows::Dirichlet);
        let k = self.grid.flux_kappa_derivative(phi, OuterRows::Dirichlet);
        let m2: Vec<f64> = g1p.iter().map(|v| -2.0 * v).collect();
        let n2: Vec<f64> = g2p.iter().map(|v| -2.0 * v).collect();
        let dkappa = self.g1.scale_rows(&m2).add(&self.g2.scale_rows(&n2), 1.0, 1.0);
        let fv = l.add(&k.matmul(&dkappa), 1.0, 1.0);
        let mut t = TripletBuilder::with_capacity(n + 2, n + 2, fv.nnz() + 4 * self.grid.n_angular() + 2);
        t.push_matrix(&fv, 0, 0, 1.0);
        for kk in self.outer_ring() {
            t.push(kk, kk, 1.0);
            t.push(kk, n, -self.p1[kk]);
            t.push(kk, n + 1, -self.p2[kk]);
        }
        t.push(n, n, 1.0);
        t.push(n + 1, n + 1, 1.0);
        for (m, &kk) in self.fit_nodes.iter().enumerate() {
            t.push(n, kk, -self.alpha[m]);
            t.push(n + 1, kk, -self.beta[m]);
        }
        t.build()
    }

    fn check_admissible(&self, x: &[f64]) -> Result<()> {
        let n = self.grid.n_nodes();
        let m = self.speed2(&x[..n]).into_iter().fold(0.0, f64::max);
        if m >= SONIC_SPEED2 || !m.is_finite() {
            Err(Error::EllipticityLoss { max_speed2: m })
        } else {
            Ok(())
        }
    }
}

fn assemble_solution(problem: &FlowProblem, x: Vec<f64>, residual_norm: f64, iterations: usize) -> FlowSolution {
    let grid = problem.grid.clone();
    let n = grid.n_nodes();
    let phi = x[..n].to_vec();
    let speed2 = problem.speed2(&phi);
    let density: Vec<f64> = speed2.iter().map(|q| 1.0 - q).collect();
    let rho = density.iter().map(|d| d.max(0.0).sqrt()).collect();
    let max_boundary_speed2 = grid.boundary_nodes().map(|k| speed2[k]).fold(0.0, f64::max);
    let max_speed2 = speed2.iter().cloned().fold(0.0, f64::max);
    FlowSolution {
        grid,
        phi,
        speed2,
        rho,
        density,
        delta: problem.delta,
        dipole: [x[n], x[n + 1]],
        residual_norm,
        newton_iterations: iterations,
        max_boundary_speed2,
        max_speed2,
        sonic_margin: SONIC_SPEED2 - max_speed2,
    }
}

/// Newton solve of the discrete flow equation; `seed` is a potential on the grid.
pub fn solve_potential_flow(grid: Arc<Grid2D>, params: FlowParams, seed: Option<&[f64]>, cfg: &NewtonConfig) -> Result<FlowSolution> {
    params.validate()?;
    let problem = FlowProblem::new(grid, params.delta)?;
    let x0 = match seed {
        Some(phi) => {
            if phi.len() != problem.grid.n_nodes() {
                return Err(Error::DimensionMismatch { expected: problem.grid.n_nodes(), got: phi.len() });
            }
            problem.state_from_phi(phi)
        }
        None => problem.seed(),
    };
    problem.check_admissible(&x0)?;
    let out = crate::numerics::newton_solve(&problem, &x0, cfg)?;
    let res = out.residual_norm();
    Ok(assemble_solution(&problem, out.x, res, out.iterations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SonicSample {
    pub delta: f64,
    pub max_boundary_speed2: f64,
    pub max_speed2: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SonicReport {
    pub delta_samples: Vec<SonicSample>,
    pub delta_star_bracket: (f64, f64),
    pub reason: String,
}

struct DeltaFamily {
    grid: Arc<Grid2D>,
}

impl Family for DeltaFamily {
    type Problem = FlowProblem;

    fn problem(&self, delta: f64) -> FlowProblem {
        FlowProblem::new(self.grid.clone(), delta.min(0.577)).expect("delta below the far-field sonic bound")
    }

    fn predict(&self, prev: &crate::numerics::BranchSample, delta: f64) -> Vec<f64> {
        if prev.param == 0.0 {
            return self.problem(delta).seed();
        }
        let s = delta / prev.param;
        prev.solution.iter().map(|v| v * s).collect()
    }

    fn inspect(&self, _delta: f64, x: &[f64]) -> Verdict {
        let n = self.grid.n_nodes();
        let p = FlowProblem::new(self.grid.clone(), 0.0).unwrap();
        let q = p.speed2(&x[..n]);
        let max_b = self.grid.boundary_nodes().map(|k| q[k]).fold(0.0, f64::max);
        let max_all = q.iter().cloned().fold(0.0, f64::max);
        if max_all >= SONIC_SPEED2 {
            return Verdict::Reject(format!("ellipticity lost (max speed² {max_all})"));
        }
        let mut d = BTreeMap::new();
        d.insert("max_boundary_speed2".to_string(), max_b);
        d.insert("max_speed2".to_string(), max_all);
        Verdict::Accept(d)
    }
}

/// Sweeps δ upward until the flow solve fails and brackets the sonic limit.
pub fn sonic_continuation(grid: Arc<Grid2D>, delta_max: f64, cfg: &ContinuationConfig, newton: &NewtonConfig) -> Result<SonicReport> {
    if !(delta_max < 1.0) {
        return Err(Error::InvalidArgument("delta_max must be < 1".into()));
    }
    let mut c = *cfg;
    c.param_end = c.param_end.min(delta_max);
    let family = DeltaFamily { grid: grid.clone() };
    let seed = family.problem(c.param_start).seed();
    let res = continuation_sweep(&family, &seed, &c, newton)?;
    let mut samples: Vec<SonicSample> = res
        .samples
        .iter()
        .map(|s| SonicSample {
            delta: s.param,
            max_boundary_speed2: s.diagnostics["max_boundary_speed2"],
            max_speed2: s.diagnostics["max_speed2"],
            converged: true,
        })
        .collect();
    for (d, _) in &res.failures {
        samples.push(SonicSample { delta: *d, max_boundary_speed2: f64::NAN, max_speed2: f64::NAN, converged: false });
    }
    samples.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    match res.termination {
        Termination::BranchEnd { last_param, failed_param, reason } => {
            Ok(SonicReport { delta_samples: samples, delta_star_bracket: (last_param, failed_param), reason })
        }
        t => Err(Error::InsufficientRange(format!("sweep ended without a sonic failure: {t:?}"))),
    }
}

/// Local traveling-wave speed c = 2√b2/√(1 − b2) at a boundary point.
pub fn local_mach_speed(b2: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&b2) {
        return Err(Error::DomainError(format!("b2 = {b2} outside [0, 1)")));
    }
    Ok(2.0 * b2.sqrt() / (1.0 - b2).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayExponents {
    pub exponent_phi: f64,
    pub exponent_rho: f64,
    pub skipped: bool,
}

/// Power-law fit of the far-field deviations over the outer half of the rings.
pub fn farfield_decay_check(sol: &FlowSolution) -> Result<DecayExponents> {
    let g = &sol.grid;
    let a = g.shape().max_semi_axis();
    if g.spec().r_far < 10.0 * a {
        return Err(Error::InsufficientRange(format!("R_far = {} < 10a", g.spec().r_far)));
    }
    if sol.delta == 0.0 {
        return Ok(DecayExponents { exponent_phi: f64::NAN, exponent_rho: f64::NAN, skipped: true });
    }
    let (g1, g2) = g.gradient(&sol.phi);
    let rho_inf = (1.0 - sol.delta * sol.delta).sqrt();
    let nr = g.n_radial();
    let (mut r, mut ephi, mut erho) = (vec![], vec![], vec![]);
    for i in nr / 2..nr - 3 {
        let mut mp: f64 = 0.0;
        let mut mr: f64 = 0.0;
        let mut rad = 0.0;
        for j in 0..g.n_angular() {
            let k = g.node(i, j);
            mp = mp.max(g1[k].hypot(g2[k] - sol.delta));
            mr = mr.max((sol.rho[k] - rho_inf).abs());
            rad += g.radius(k);
        }
        r.push(rad / g.n_angular() as f64);
        ephi.push(mp);
        erho.push(mr);
    }
    Ok(DecayExponents {
        exponent_phi: loglog_slope(&r, &ephi)?.slope,
        exponent_rho: loglog_slope(&r, &erho)?.slope,
        skipped: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryExtrema {
    pub trace: BoundaryTrace,
    /// ∂_τ|∇Φ|² along the counterclockwise tangent, per boundary node.
    pub tangential_derivative: Vec<f64>,
}

pub fn boundary_extrema(sol: &FlowSolution) -> BoundaryExtrema {
    let g = &sol.grid;
    let vals: Vec<f64> = g.boundary_nodes().map(|k| sol.speed2[k]).collect();
    let trace = boundary_trace(g.theta(), &vals);
    let tangential_derivative = g.boundary_tangential_derivative(&vals);
    BoundaryExtrema { trace, tangential_derivative }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, ObstacleShape};
    use crate::numerics::newton::jacobian_fd_mismatch;
    use rand::{Rng, SeedableRng};

    fn small_grid(shape: ObstacleShape) -> Arc<Grid2D> {
        Arc::new(Grid2D::build(GridSpec::new(shape, 24, 32, 12.0, 1.1)).unwrap())
    }

    #[test]
    fn speed_map() {
        assert_eq!(local_mach_speed(0.0).unwrap(), 0.0);
        assert!((local_mach_speed(1.0 / 3.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((local_mach_speed(0.25).unwrap() - 1.1547005383792517).abs() < 1e-12);
        assert!(matches!(local_mach_speed(1.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn zero_datum_is_trivial() {
        let g = small_grid(ObstacleShape::disk(1.0));
        let s = solve_potential_flow(g, FlowParams { delta: 0.0, epsilon: 0.1 }, None, &flow_newton_config()).unwrap();
        assert_eq!(s.newton_iterations, 0);
        assert!(s.phi.iter().all(|v| *v == 0.0));
        assert!(s.rho.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for shape in [ObstacleShape::disk(1.0), ObstacleShape::ellipse(2.0, 1.0)] {
            let g = small_grid(shape);
            let p = FlowProblem::new(g.clone(), 0.15).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
            let mut x = p.seed();
            for v in x.iter_mut() {
                *v += 0.01 * rng.gen_range(-1.0..1.0);
            }
            let dirs: Vec<Vec<f64>> = (0..10).map(|_| (0..p.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let m = jacobian_fd_mismatch(&p, &x, &dirs, 1e-6);
            assert!(m < 1e-5, "mismatch {m}");
        }
    }

    #[test]
    fn disk_symmetry_and_flux_conservation() {
        let g = small_grid(ObstacleShape::disk(1.0));
        let s = solve_potential_flow(g.clone(), FlowParams { delta: 0.15, epsilon: 0.1 }, None, &flow_newton_config()).unwrap();
        let nt = g.n_angular();
        for i in 0..g.n_radial() {
            for j in 0..nt {
                let a = s.phi[g.node(i, j)];
                let b = s.phi[g.node(i, (nt - j) % nt)];
                let c = s.phi[g.node(i, (nt / 2 + nt - j) % nt)];
                assert!((a + b).abs() < 1e-8, "odd in theta");
                assert!((a - c).abs() < 1e-8, "even about pi/2");
            }
        }
        for i in 0..g.n_radial() - 2 {
            assert!(g.ring_flux(&s.density, &s.phi, i).abs() < 1e-6);
        }
    }

    #[test]
    fn ellipse_trace_has_two_maxima_and_minima() {
        let g = small_grid(ObstacleShape::ellipse(2.0, 1.0));
        let s = solve_potential_flow(g, FlowParams { delta: 0.1, epsilon: 0.1 }, None, &flow_newton_config()).unwrap();
        let e = boundary_extrema(&s);
        let maxs = e.trace.extrema.iter().filter(|x| x.kind == crate::grid::ExtremumKind::Max).count();
        let mins = e.trace.extrema.iter().filter(|x| x.kind == crate::grid::ExtremumKind::Min).count();
        assert_eq!((maxs, mins), (2, 2));
    }

    #[test]
    fn sonic_bound_rejects_supersonic_seed() {
        let g = small_grid(ObstacleShape::disk(1.0));
        let p = FlowProblem::new(g, 0.4).unwrap();
        assert!(matches!(p.check_admissible(&p.seed()), Err(Error::EllipticityLoss { .. })));
    }
}
