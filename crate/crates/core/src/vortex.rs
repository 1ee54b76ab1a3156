//! Degree-one Ginzburg–Landau vortex: radial profile, the two-vortex ansatz
//! V_d on a uniform half-plane grid, and phase-winding vortex detection.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::numerics::dense::least_squares;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VortexProfile {
    pub r_nodes: Vec<f64>,
    pub s0: Vec<f64>,
    pub slope_at_0: f64,
    /// β in 1 − S₀ ≈ β/r².
    pub far_coefficient: f64,
    /// Sup norm of the discrete ODE residual.
    pub residual: f64,
    ds: Vec<f64>,
    h: f64,
}

/// Tridiagonal solve (Thomas); `a` sub, `b` diag, `c` super.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Residual of S'' + S'/r − S/r² + S(1 − S²) on nodes 1..=n, with the
/// tail condition S'(R) = 2(1 − S(R))/R imposed through a ghost node.
fn profile_residual(s: &[f64], h: f64, r_max: f64) -> Vec<f64> {
    let n = s.len() - 1;
    (1..=n)
        .map(|i| {
            let r = i as f64 * h;
            let sp = if i < n { s[i + 1] } else { s[n - 1] + 4.0 * h * (1.0 - s[n]) / r_max };
            (sp - 2.0 * s[i] + s[i - 1]) / (h * h) + (sp - s[i - 1]) / (2.0 * h * r) - s[i] / (r * r) + s[i] * (1.0 - s[i] * s[i])
        })
        .collect()
}

pub fn solve_gl_profile(r_prof: f64, n: usize) -> Result<VortexProfile> {
    if r_prof < 40.0 || n < 400 {
        return Err(Error::InvalidArgument(format!("need R ≥ 40 and n ≥ 400 (got {r_prof}, {n})")));
    }
    let h = r_prof / n as f64;
    let mut s: Vec<f64> = (0..=n).map(|i| {
        let r = i as f64 * h;
        r / (r * r + 2.0).sqrt()
    }).collect();
    let mut res = f64::INFINITY;
    let mut converged = false;
    for _ in 0..50 {
        let f = profile_residual(&s, h, r_prof);
        res = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if res < 1e-11 {
            converged = true;
            break;
        }
        let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 1..=n {
            let r = i as f64 * h;
            let row = i - 1;
            let lo = 1.0 / (h * h) - 1.0 / (2.0 * h * r);
            let hi = 1.0 / (h * h) + 1.0 / (2.0 * h * r);
            b[row] = -2.0 / (h * h) - 1.0 / (r * r) + 1.0 - 3.0 * s[i] * s[i];
            if i > 1 {
                a[row] = lo;
            }
            if i < n {
                c[row] = hi;
            } else {
                // Ghost S_{n+1} = S_{n−1} + 4h(1 − S_n)/R.
                a[row] += hi;
                b[row] -= hi * 4.0 * h / r_prof;
            }
        }
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let dx = thomas(&a, &b, &c, &rhs);
        for i in 1..=n {
            s[i] += dx[i - 1];
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations: 50, residual: res });
    }
    let r_nodes: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    // S = αr − αr³/8 + γr⁵ near the origin.
    let rows: Vec<Vec<f64>> = (1..=6).map(|i| {
        let r = r_nodes[i];
        vec![r - r.powi(3) / 8.0, r.powi(5)]
    }).collect();
    let slope_at_0 = least_squares(&rows, &s[1..=6])?[0];
    let (fr, fv): (Vec<Vec<f64>>, Vec<f64>) = (n / 4..=n).map(|i| {
        let r = r_nodes[i];
        (vec![r.powi(-2), r.powi(-4)], 1.0 - s[i])
    }).unzip();
    let far_coefficient = least_squares(&fr, &fv)?[0];
    let mut ds = vec![0.0; n + 1];
    ds[0] = slope_at_0;
    for i in 1..n {
        ds[i] = (s[i + 1] - s[i - 1]) / (2.0 * h);
    }
    ds[n] = 2.0 * (1.0 - s[n]) / r_prof;
    Ok(VortexProfile { r_nodes, s0: s, slope_at_0, far_coefficient, residual: res, ds, h })
}

impl VortexProfile {
    pub fn r_max(&self) -> f64 {
        *self.r_nodes.last().unwrap()
    }

    /// (S₀(r), S₀'(r)) by cubic Hermite interpolation, algebraic tail beyond R.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let n = self.s0.len() - 1;
        if r >= self.r_max() {
            let b = self.far_coefficient;
            return (1.0 - b / (r * r), 2.0 * b / (r * r * r));
        }
        let t = r / self.h;
        let i = (t.floor() as usize).min(n - 1);
        let u = t - i as f64;
        let (p0, p1) = (self.s0[i], self.s0[i + 1]);
        let (m0, m1) = (self.ds[i] * self.h, self.ds[i + 1] * self.h);
        let u2 = u * u;
        let u3 = u2 * u;
        let v = (2.0 * u3 - 3.0 * u2 + 1.0) * p0 + (u3 - 2.0 * u2 + u) * m0 + (-2.0 * u3 + 3.0 * u2) * p1 + (u3 - u2) * m1;
        let dv = (6.0 * u2 - 6.0 * u) * p0 + (3.0 * u2 - 4.0 * u + 1.0) * m0 + (-6.0 * u2 + 6.0 * u) * p1 + (3.0 * u2 - 2.0 * u) * m1;
        (v, dv / self.h)
    }

    /// (S/r, (S/r)'), with the series form near the origin.
    fn ratio(&self, r: f64) -> (f64, f64) {
        if r < 1e-3 {
            let a = self.slope_at_0;
            return (a * (1.0 - r * r / 8.0), -a * r / 4.0);
        }
        let (s, ds) = self.eval(r);
        (s / r, (ds - s / r) / r)
    }

    /// Degree ±1 vortex centered at `c`, with its gradient (∂₁w, ∂₂w).
    pub fn vortex(&self, y: [f64; 2], c: [f64; 2], degree: i32) -> (Complex64, Complex64, Complex64) {
        let (x1, x2) = (y[0] - c[0], y[1] - c[1]);
        let r = x1.hypot(x2);
        let (g, gp) = self.ratio(r);
        let z = if degree > 0 { Complex64::new(x1, x2) } else { Complex64::new(x1, -x2) };
        let i = Complex64::new(0.0, if degree > 0 { 1.0 } else { -1.0 });
        let w = z * g;
        if r == 0.0 {
            return (w, Complex64::new(g, 0.0), i * g);
        }
        let d1 = z * (gp * x1 / r) + g;
        let d2 = z * (gp * x2 / r) + i * g;
        (w, d1, d2)
    }
}

/// Uniform grid on [y1_min, L1] × [−L2, L2]; y1_min = 0 for the half-plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneGrid {
    pub l1: f64,
    pub l2: f64,
    pub h: f64,
    pub n1: usize,
    pub n2: usize,
    pub y1_min: f64,
}

impl HalfPlaneGrid {
    pub fn half_plane(l1: f64, l2: f64, h: f64) -> Result<Self> {
        Self::build(0.0, l1, l2, h)
    }

    /// Full-plane variant for diagnostics.
    pub fn full_plane(l1: f64, l2: f64, h: f64) -> Result<Self> {
        Self::build(-l1, l1, l2, h)
    }

    fn build(y1_min: f64, l1: f64, l2: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 0.25) {
            return Err(Error::InvalidArgument(format!("spacing h = {h} must lie in (0, 0.25]")));
        }
        if !(l1 > y1_min + 4.0 * h && l2 > 4.0 * h) {
            return Err(Error::InvalidArgument("box too small".into()));
        }
        let n1 = ((l1 - y1_min) / h).round() as usize + 1;
        let n2 = (2.0 * l2 / h).round() as usize + 1;
        Ok(Self { l1, l2, h, n1, n2, y1_min })
    }

    pub fn is_half_plane(&self) -> bool {
        self.y1_min == 0.0
    }

    pub fn n_nodes(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n1 + i
    }

    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.n1, k / self.n1)
    }

    pub fn y(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.ij(k);
        [self.y1_min + i as f64 * self.h, -self.l2 + j as f64 * self.h]
    }

    pub fn is_outer(&self, k: usize) -> bool {
        let (i, j) = self.ij(k);
        i == self.n1 - 1 || j == 0 || j == self.n2 - 1 || (!self.is_half_plane() && i == 0)
    }

    /// Cell weight for quadratures (trapezoid in y₁, halved on y₁ = 0).
    pub fn weight(&self, k: usize) -> f64 {
        let (i, j) = self.ij(k);
        let mut w = self.h * self.h;
        if i == 0 || i == self.n1 - 1 {
            w *= 0.5;
        }
        if j == 0 || j == self.n2 - 1 {
            w *= 0.5;
        }
        w
    }

    /// Bilinear interpolation; None outside the box.
    pub fn interpolate(&self, f: &[Complex64], y: [f64; 2]) -> Option<Complex64> {
        let a = (y[0] - self.y1_min) / self.h;
        let b = (y[1] + self.l2) / self.h;
        if a < 0.0 || b < 0.0 || a > (self.n1 - 1) as f64 || b > (self.n2 - 1) as f64 {
            return None;
        }
        let i = (a.floor() as usize).min(self.n1 - 2);
        let j = (b.floor() as usize).min(self.n2 - 2);
        let (u, v) = (a - i as f64, b - j as f64);
        Some(
            f[self.index(i, j)] * ((1.0 - u) * (1.0 - v))
                + f[self.index(i + 1, j)] * (u * (1.0 - v))
                + f[self.index(i, j + 1)] * ((1.0 - u) * v)
                + f[self.index(i + 1, j + 1)] * (u * v),
        )
    }
}

#[derive(Debug, Clone)]
pub struct PairAnsatz {
    pub d: f64,
    pub field: Vec<Complex64>,
    /// ∂V_d/∂d on the same nodes.
    pub d_derivative: Vec<Complex64>,
    /// Outer radius of the core cutoff η̃ (η̃ = 1 for s ≤ 1, 0 for s ≥ 2).
    pub cutoff_radius: f64,
}

/// V_d(y) = S₀(|y − de₁|)S₀(|y + de₁|)e^{iθ₊ − iθ₋} with its gradient and ∂_dV.
pub fn pair_value(profile: &VortexProfile, d: f64, y: [f64; 2]) -> (Complex64, [Complex64; 2], Complex64) {
    let (wp, p1, p2) = profile.vortex(y, [d, 0.0], 1);
    let (wm, m1, m2) = profile.vortex(y, [-d, 0.0], -1);
    let v = wp * wm;
    let g = [p1 * wm + wp * m1, p2 * wm + wp * m2];
    let dd = -p1 * wm + wp * m1;
    (v, g, dd)
}

pub fn pair_ansatz(profile: &VortexProfile, d: f64, grid: &HalfPlaneGrid) -> PairAnsatz {
    let n = grid.n_nodes();
    let mut field = Vec::with_capacity(n);
    let mut dd = Vec::with_capacity(n);
    for k in 0..n {
        let (v, _, w) = pair_value(profile, d, grid.y(k));
        field.push(v);
        dd.push(w);
    }
    PairAnsatz { d, field, d_derivative: dd, cutoff_radius: 2.0 }
}

/// η̃(s): 1 on s ≤ 1, 0 on s ≥ 2, quintic smoothstep between.
pub fn cutoff(s: f64) -> f64 {
    let t = (2.0 - s).clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

impl PairAnsatz {
    /// η_d(y) = η̃(|y − de₁|) + η̃(|y + de₁|).
    pub fn eta(&self, y: [f64; 2]) -> f64 {
        cutoff((y[0] - self.d).hypot(y[1])) + cutoff((y[0] + self.d).hypot(y[1]))
    }
}

/// Logically rectangular grid; the second index may be periodic.
pub trait LatticeGrid {
    fn dims(&self) -> (usize, usize);
    fn periodic_second(&self) -> bool;
    fn lattice_index(&self, a: usize, b: usize) -> usize;
    fn coords(&self, k: usize) -> [f64; 2];
}

impl LatticeGrid for Grid2D {
    fn dims(&self) -> (usize, usize) {
        (self.n_radial(), self.n_angular())
    }
    fn periodic_second(&self) -> bool {
        true
    }
    fn lattice_index(&self, a: usize, b: usize) -> usize {
        self.node(a, b)
    }
    fn coords(&self, k: usize) -> [f64; 2] {
        [self.x1()[k], self.x2()[k]]
    }
}

impl LatticeGrid for HalfPlaneGrid {
    fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }
    fn periodic_second(&self) -> bool {
        false
    }
    fn lattice_index(&self, a: usize, b: usize) -> usize {
        self.index(a, b)
    }
    fn coords(&self, k: usize) -> [f64; 2] {
        self.y(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vortex {
    pub position: [f64; 2],
    pub winding: i32,
    pub core_min: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VortexSet {
    pub vortices: Vec<Vortex>,
}

impl VortexSet {
    pub fn len(&self) -> usize {
        self.vortices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vortices.is_empty()
    }

    pub fn total_winding(&self) -> i32 {
        self.vortices.iter().map(|v| v.winding).sum()
    }
}

fn wrap(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut y = x - tau * (x / tau).round();
    if y <= -std::f64::consts::PI {
        y += tau;
    }
    y
}

pub const AMBIGUOUS_MODULUS: f64 = 1e-6;

pub fn detect_vortices<G: LatticeGrid>(grid: &G, field: &[Complex64], threshold: f64) -> Result<VortexSet> {
    detect_vortices_from(grid, field, threshold, 0)
}

/// Winding census over plaquettes whose first index is ≥ `first_row`
/// (rows below are ignored, e.g. a wall carrying u = 0).
pub fn detect_vortices_from<G: LatticeGrid>(grid: &G, field: &[Complex64], threshold: f64, first_row: usize) -> Result<VortexSet> {
    let (na, nb) = grid.dims();
    let periodic = grid.periodic_second();
    let pb = if periodic { nb } else { nb - 1 };
    let at = |a: usize, b: usize| field[grid.lattice_index(a, b % nb)];
    // Edge phase differences are taken in a canonical orientation so a jump
    // of exactly π is counted by one plaquette only.
    let edge = |p: usize, q: usize| {
        if p < q {
            wrap((field[q] / field[p]).arg())
        } else {
            -wrap((field[p] / field[q]).arg())
        }
    };
    let mut marks: Vec<(usize, usize, i32)> = Vec::new();
    for a in first_row..na - 1 {
        for b in 0..pb {
            let ks = [
                grid.lattice_index(a, b),
                grid.lattice_index(a + 1, b),
                grid.lattice_index(a + 1, (b + 1) % nb),
                grid.lattice_index(a, (b + 1) % nb),
            ];
            let c = ks.map(|k| field[k]);
            let mut sum = 0.0;
            let mut tiny = false;
            for q in 0..4 {
                if c[q].norm() < AMBIGUOUS_MODULUS {
                    tiny = true;
                }
            }
            if !tiny {
                for q in 0..4 {
                    sum += edge(ks[q], ks[(q + 1) % 4]);
                }
            }
            let w = (sum / std::f64::consts::TAU).round() as i32;
            if tiny {
                return Err(Error::AmbiguousCore { modulus: c.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min) });
            }
            if w != 0 {
                marks.push((a, b, w));
            }
        }
    }
    // Union-find over 8-adjacent marked plaquettes.
    let m = marks.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut i = i;
        while p[i] != r {
            let n = p[i];
            p[i] = r;
            i = n;
        }
        r
    }
    let bdist = |x: usize, y: usize| {
        let d = x.abs_diff(y);
        if periodic { d.min(nb - d) } else { d }
    };
    for i in 0..m {
        for j in i + 1..m {
            if marks[i].0.abs_diff(marks[j].0) <= 1 && bdist(marks[i].1, marks[j].1) <= 1 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..m {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out = VortexSet::default();
    for (_, members) in groups {
        let net: i32 = members.iter().map(|&i| marks[i].2).sum();
        if net == 0 {
            continue;
        }
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for &i in &members {
            let (a, b, _) = marks[i];
            for (da, db) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (aa, bb) = (a + da, (b + db) % nb);
                let v = at(aa, bb).norm();
                if v < best.0 {
                    best = (v, aa, bb);
                }
            }
        }
        if best.0 >= threshold {
            continue;
        }
        let position = refine(grid, field, best.1, best.2);
        out.vortices.push(Vortex { position, winding: net, core_min: best.0 });
    }
    Ok(out)
}

/// Minimizer of a quadratic fit to |f|² over the 3×3 index neighborhood.
fn refine<G: LatticeGrid>(grid: &G, field: &[Complex64], a: usize, b: usize) -> [f64; 2] {
    let (na, nb) = grid.dims();
    let periodic = grid.periodic_second();
    let here = grid.coords(grid.lattice_index(a, b));
    let ac = a.clamp(1, na - 2);
    let bc = if periodic { b } else { b.clamp(1, nb - 2) };
    let node = |p: i64, q: i64| {
        let aa = (ac as i64 + p) as usize;
        let bb = (bc as i64 + q).rem_euclid(nb as i64) as usize;
        grid.lattice_index(aa, bb)
    };
    let mut rows = Vec::with_capacity(9);
    let mut vals = Vec::with_capacity(9);
    for p in -1..=1i64 {
        for q in -1..=1i64 {
            let (x, y) = (p as f64, q as f64);
            rows.push(vec![1.0, x, y, x * x, y * y, x * y]);
            vals.push(field[node(p, q)].norm_sqr());
        }
    }
    let Ok(c) = least_squares(&rows, &vals) else { return here };
    let (h11, h22, h12) = (2.0 * c[3], 2.0 * c[4], c[5]);
    let det = h11 * h22 - h12 * h12;
    if !(det > 0.0 && h11 > 0.0) {
        return here;
    }
    let p = ((-c[1] * h22 + c[2] * h12) / det).clamp(-1.0, 1.0);
    let q = ((-c[2] * h11 + c[1] * h12) / det).clamp(-1.0, 1.0);
    // Bilinear map of fractional index offsets to coordinates.
    let (ip, iq) = (p.floor() as i64, q.floor() as i64);
    let (ip, iq) = (ip.min(0), iq.min(0));
    let (u, v) = (p - ip as f64, q - iq as f64);
    let c00 = grid.coords(node(ip, iq));
    let c10 = grid.coords(node(ip + 1, iq));
    let c01 = grid.coords(node(ip, iq + 1));
    let c11 = grid.coords(node(ip + 1, iq + 1));
    let mut out = [0.0; 2];
    for d in 0..2 {
        out[d] = c00[d] * (1.0 - u) * (1.0 - v) + c10[d] * u * (1.0 - v) + c01[d] * (1.0 - u) * v + c11[d] * u * v;
    }
    out
}
