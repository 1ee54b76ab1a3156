//! Body-fitted exterior grids around a disk or an ellipse.
//!
//! The exterior is covered by confocal ellipses: with `A ≥ B` the semi-axes and
//! `c² = A² − B²`, a node sits at major semi-axis `ξ ∈ [A, R_far]` and angle θ;
//! the disk is the case `c = 0`. Computational coordinates are the node indices
//! (ζ, s) with unit spacing, so `ξ = ξ(ζ)` carries the geometric stretching and
//! `θ = θ(s)` the optional angular clustering.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleShape {
    pub kind: ShapeKind,
    pub semi_axis_a: f64,
    pub semi_axis_b: f64,
}

impl ObstacleShape {
    pub fn disk(radius: f64) -> Self {
        Self { kind: ShapeKind::Disk, semi_axis_a: radius, semi_axis_b: radius }
    }

    /// `a` along x₁, `b` along x₂.
    pub fn ellipse(a: f64, b: f64) -> Self {
        Self { kind: ShapeKind::Ellipse, semi_axis_a: a, semi_axis_b: b }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.semi_axis_a, self.semi_axis_b);
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::BadGeometry(format!("semi-axes must be positive, got ({a}, {b})")));
        }
        if self.kind == ShapeKind::Disk && a != b {
            return Err(Error::BadGeometry("a disk needs equal semi-axes".into()));
        }
        Ok(())
    }

    pub fn max_semi_axis(&self) -> f64 {
        self.semi_axis_a.max(self.semi_axis_b)
    }

    fn major_along_x1(&self) -> bool {
        self.semi_axis_a >= self.semi_axis_b
    }

    fn focal2(&self) -> f64 {
        let (a, b) = (self.semi_axis_a, self.semi_axis_b);
        (a * a - b * b).abs()
    }
}

/// Node density raised by `factor` within `half_width` of each center angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularClustering {
    pub centers: Vec<f64>,
    pub half_width: f64,
    pub factor: f64,
}

impl AngularClustering {
    pub fn around(center: f64) -> Self {
        Self { centers: vec![center], half_width: 0.3, factor: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub shape: ObstacleShape,
    pub n_radial: usize,
    pub n_angular: usize,
    pub r_far: f64,
    pub radial_stretch: f64,
    #[serde(default)]
    pub clustering: Option<AngularClustering>,
}

impl GridSpec {
    pub fn new(shape: ObstacleShape, n_radial: usize, n_angular: usize, r_far: f64, radial_stretch: f64) -> Self {
        Self { shape, n_radial, n_angular, r_far, radial_stretch, clustering: None }
    }

    pub fn with_clustering(mut self, c: AngularClustering) -> Self {
        self.clustering = Some(c);
        self
    }
}

const TRANSITION: f64 = 0.2;
const TABLE: usize = 1 << 15;

fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn wrap_angle(t: f64) -> f64 {
    t.rem_euclid(2.0 * PI)
}

#[derive(Debug, Clone)]
struct AngularMap {
    n: usize,
    clustering: Option<AngularClustering>,
    cumulative: Vec<f64>,
    total: f64,
}

impl AngularMap {
    fn new(n: usize, clustering: Option<AngularClustering>) -> Self {
        let mut m = Self { n, clustering, cumulative: vec![], total: 2.0 * PI };
        if m.clustering.is_some() {
            let dt = 2.0 * PI / TABLE as f64;
            let mut cum = Vec::with_capacity(TABLE + 1);
            cum.push(0.0);
            let mut acc = 0.0;
            for k in 0..TABLE {
                let a = k as f64 * dt;
                acc += dt / 6.0 * (m.density(a) + 4.0 * m.density(a + 0.5 * dt) + m.density(a + dt));
                cum.push(acc);
            }
            m.total = acc;
            m.cumulative = cum;
        }
        m
    }

    fn density(&self, theta: f64) -> f64 {
        match &self.clustering {
            None => 1.0,
            Some(c) => {
                let mut w: f64 = 0.0;
                for &center in &c.centers {
                    let d = wrap_angle(theta - center);
                    let d = d.min(2.0 * PI - d);
                    w = w.max(smoothstep5(1.0 - (d - c.half_width) / TRANSITION));
                }
                1.0 + (c.factor - 1.0) * w
            }
        }
    }

    /// ∫₀^θ density, for θ ∈ [0, 2π].
    fn cumulative_at(&self, theta: f64) -> f64 {
        if self.clustering.is_none() {
            return theta;
        }
        let dt = 2.0 * PI / TABLE as f64;
        let k = ((theta / dt).floor() as usize).min(TABLE - 1);
        let a = k as f64 * dt;
        let h = theta - a;
        self.cumulative[k] + h / 6.0 * (self.density(a) + 4.0 * self.density(a + 0.5 * h) + self.density(theta))
    }

    fn theta(&self, s: f64) -> f64 {
        let n = self.n as f64;
        let turns = (s / n).floor();
        let r = s - turns * n;
        let base = 2.0 * PI * turns;
        if self.clustering.is_none() {
            return base + 2.0 * PI * r / n;
        }
        let target = self.total * r / n;
        let k = self.cumulative.partition_point(|&g| g <= target).saturating_sub(1).min(TABLE - 1);
        let dt = 2.0 * PI / TABLE as f64;
        let mut t = k as f64 * dt + 0.5 * dt;
        for _ in 0..30 {
            let f = self.cumulative_at(t) - target;
            let step = f / self.density(t);
            t = (t - step).clamp(k as f64 * dt, (k + 1) as f64 * dt);
            if step.abs() < 1e-15 {
                break;
            }
        }
        base + t
    }

    fn dtheta_ds(&self, s: f64) -> f64 {
        self.total / self.n as f64 / self.density(wrap_angle(self.theta(s)))
    }

    fn s_of_theta(&self, theta: f64) -> f64 {
        let t = wrap_angle(theta);
        self.n as f64 * self.cumulative_at(t) / self.total
    }
}

#[derive(Debug, Clone)]
struct RadialMap {
    inner: f64,
    h0: f64,
    q: f64,
}

impl RadialMap {
    fn new(inner: f64, outer: f64, n: usize, q: f64) -> Self {
        let m = (n - 1) as f64;
        let h0 = if q == 1.0 { (outer - inner) / m } else { (outer - inner) * (q - 1.0) / (q.powf(m) - 1.0) };
        Self { inner, h0, q }
    }

    fn xi(&self, z: f64) -> f64 {
        if self.q == 1.0 {
            self.inner + self.h0 * z
        } else {
            self.inner + self.h0 * (self.q.powf(z) - 1.0) / (self.q - 1.0)
        }
    }

    fn dxi(&self, z: f64) -> f64 {
        if self.q == 1.0 {
            self.h0
        } else {
            self.h0 * self.q.powf(z) * self.q.ln() / (self.q - 1.0)
        }
    }

    fn zeta(&self, xi: f64) -> f64 {
        if self.q == 1.0 {
            (xi - self.inner) / self.h0
        } else {
            (1.0 + (xi - self.inner) * (self.q - 1.0) / self.h0).ln() / self.q.ln()
        }
    }
}

/// Metric of the analytic map at (ξ, θ): position, ∂x/∂ξ, ∂x/∂θ.
fn confocal(shape: &ObstacleShape, xi: f64, theta: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let c2 = shape.focal2();
    let eta = (xi * xi - c2).max(0.0).sqrt();
    let (s, c) = theta.sin_cos();
    if shape.major_along_x1() {
        ([xi * c, eta * s], [c, xi / eta * s], [-xi * s, eta * c])
    } else {
        ([eta * c, xi * s], [xi / eta * c, s], [-eta * s, xi * c])
    }
}

#[derive(Debug, Clone)]
pub struct Grid2D {
    spec: GridSpec,
    radial: RadialMap,
    angular: AngularMap,
    xi: Vec<f64>,
    theta: Vec<f64>,
    x1: Vec<f64>,
    x2: Vec<f64>,
    /// Analytic scale factors in computational units at nodes.
    h_zeta: Vec<f64>,
    h_s: Vec<f64>,
    /// Discrete metric ∂x/∂ζ, ∂x/∂s (same stencils as `d_zeta`, `d_s`).
    m11: Vec<f64>,
    m12: Vec<f64>,
    m21: Vec<f64>,
    m22: Vec<f64>,
    det: Vec<f64>,
    area: Vec<f64>,
    /// Radial face (i+½, j) transmissibility h_s/h_ζ.
    t_radial: Vec<f64>,
    /// Angular face (i, j+½) transmissibility, including the half extent of
    /// the first and last rings.
    t_angular: Vec<f64>,
    d_zeta: CsrMatrix,
    d_s: CsrMatrix,
}

/// Which grid rings carry finite-volume balance rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterRows {
    /// Outer ring rows are left empty for the caller (Dirichlet data).
    Dirichlet,
    /// Outer ring is a half cell with zero normal flux.
    Neumann,
}

impl Grid2D {
    pub fn build(spec: GridSpec) -> Result<Self> {
        spec.shape.validate()?;
        let big = spec.shape.max_semi_axis();
        if !(spec.r_far > big) {
            return Err(Error::BadGeometry(format!("R_far = {} must exceed the semi-axis {big}", spec.r_far)));
        }
        if spec.r_far <= 3.0 * big {
            return Err(Error::BadGeometry(format!("R_far = {} must exceed 3 × {big}", spec.r_far)));
        }
        if spec.n_radial < 4 || spec.n_angular < 8 {
            return Err(Error::InvalidArgument(format!("grid {}×{} too small", spec.n_radial, spec.n_angular)));
        }
        if !(spec.radial_stretch >= 1.0 && spec.radial_stretch.is_finite()) {
            return Err(Error::InvalidArgument("radial_stretch must be ≥ 1".into()));
        }
        if let Some(c) = &spec.clustering {
            if !(c.factor >= 1.0 && c.half_width > 0.0 && !c.centers.is_empty()) {
                return Err(Error::InvalidArgument("angular clustering parameters".into()));
            }
        }
        let (nr, nt) = (spec.n_radial, spec.n_angular);
        let radial = RadialMap::new(big, spec.r_far, nr, spec.radial_stretch);
        let angular = AngularMap::new(nt, spec.clustering.clone());
        let mut xi: Vec<f64> = (0..nr).map(|i| radial.xi(i as f64)).collect();
        xi[0] = big;
        xi[nr - 1] = spec.r_far;
        let theta: Vec<f64> = (0..nt).map(|j| angular.theta(j as f64)).collect();
        let n = nr * nt;
        let mut x1 = vec![0.0; n];
        let mut x2 = vec![0.0; n];
        let mut h_zeta = vec![0.0; n];
        let mut h_s = vec![0.0; n];
        let scale = |z: f64, s: f64, th: f64, xv: f64| {
            let (_, dxi, dth) = confocal(&spec.shape, xv, th);
            let hz = dxi[0].hypot(dxi[1]) * radial.dxi(z);
            let hs = dth[0].hypot(dth[1]) * angular.dtheta_ds(s);
            (hz, hs)
        };
        for i in 0..nr {
            for j in 0..nt {
                let k = i * nt + j;
                let (p, _, _) = confocal(&spec.shape, xi[i], theta[j]);
                x1[k] = p[0];
                x2[k] = p[1];
                let (hz, hs) = scale(i as f64, j as f64, theta[j], xi[i]);
                h_zeta[k] = hz;
                h_s[k] = hs;
            }
        }
        let mut t_radial = vec![0.0; (nr - 1) * nt];
        for i in 0..nr - 1 {
            let z = i as f64 + 0.5;
            let xv = radial.xi(z);
            for j in 0..nt {
                let (hz, hs) = scale(z, j as f64, theta[j], xv);
                t_radial[i * nt + j] = hs / hz;
            }
        }
        let mut t_angular = vec![0.0; n];
        let mut area = vec![0.0; n];
        let half_theta: Vec<f64> = (0..nt).map(|j| angular.theta(j as f64 + 0.5)).collect();
        for i in 0..nr {
            // Boundary rings own half a cell; sample the metric at its midpoint.
            let (z, ext) = if i == 0 {
                (0.25, 0.5)
            } else if i == nr - 1 {
                (i as f64 - 0.25, 0.5)
            } else {
                (i as f64, 1.0)
            };
            let xv = radial.xi(z);
            for j in 0..nt {
                let (hz, hs) = scale(z, j as f64 + 0.5, half_theta[j], xv);
                t_angular[i * nt + j] = ext * hz / hs;
                let (hz2, hs2) = scale(z, j as f64, theta[j], xv);
                area[i * nt + j] = ext * hz2 * hs2;
            }
        }
        let d_zeta = Self::build_d_zeta(nr, nt);
        let d_s = Self::build_d_s(nr, nt);
        let m11 = d_zeta.mul_vec(&x1);
        let m12 = d_s.mul_vec(&x1);
        let m21 = d_zeta.mul_vec(&x2);
        let m22 = d_s.mul_vec(&x2);
        let det: Vec<f64> = (0..n).map(|k| m11[k] * m22[k] - m12[k] * m21[k]).collect();
        if let Some(k) = (0..n).find(|&k| !(det[k] > 0.0) || !(area[k] > 0.0)) {
            return Err(Error::BadGeometry(format!("non-positive metric Jacobian at node {k}")));
        }
        Ok(Self {
            spec,
            radial,
            angular,
            xi,
            theta,
            x1,
            x2,
            h_zeta,
            h_s,
            m11,
            m12,
            m21,
            m22,
            det,
            area,
            t_radial,
            t_angular,
            d_zeta,
            d_s,
        })
    }

    fn build_d_zeta(nr: usize, nt: usize) -> CsrMatrix {
        let mut t = TripletBuilder::with_capacity(nr * nt, nr * nt, 3 * nr * nt);
        for i in 0..nr {
            for j in 0..nt {
                let k = i * nt + j;
                if i == 0 {
                    t.push(k, k, -1.5);
                    t.push(k, k + nt, 2.0);
                    t.push(k, k + 2 * nt, -0.5);
                } else if i == nr - 1 {
                    t.push(k, k, 1.5);
                    t.push(k, k - nt, -2.0);
                    t.push(k, k - 2 * nt, 0.5);
                } else {
                    t.push(k, k + nt, 0.5);
                    t.push(k, k - nt, -0.5);
                }
            }
        }
        t.build()
    }

    fn build_d_s(nr: usize, nt: usize) -> CsrMatrix {
        let mut t = TripletBuilder::with_capacity(nr * nt, nr * nt, 2 * nr * nt);
        for i in 0..nr {
            for j in 0..nt {
                let k = i * nt + j;
                t.push(k, i * nt + (j + 1) % nt, 0.5);
                t.push(k, i * nt + (j + nt - 1) % nt, -0.5);
            }
        }
        t.build()
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn shape(&self) -> &ObstacleShape {
        &self.spec.shape
    }
    pub fn n_radial(&self) -> usize {
        self.spec.n_radial
    }
    pub fn n_angular(&self) -> usize {
        self.spec.n_angular
    }
    pub fn n_nodes(&self) -> usize {
        self.spec.n_radial * self.spec.n_angular
    }
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * self.spec.n_angular + j
    }
    pub fn x1(&self) -> &[f64] {
        &self.x1
    }
    pub fn x2(&self) -> &[f64] {
        &self.x2
    }
    /// Confocal major semi-axis of each ring.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn radius(&self, k: usize) -> f64 {
        self.x1[k].hypot(self.x2[k])
    }
    /// Finite-volume cell areas (half cells on the first and last rings).
    pub fn cell_area(&self) -> &[f64] {
        &self.area
    }
    pub fn d_zeta(&self) -> &CsrMatrix {
        &self.d_zeta
    }
    pub fn d_s(&self) -> &CsrMatrix {
        &self.d_s
    }
    /// Radial spacing of ring i to i+1 in physical ξ.
    pub fn radial_spacing(&self, i: usize) -> f64 {
        self.xi[i + 1] - self.xi[i]
    }

    /// Cartesian gradient weights: ∇f = (a1 f_ζ + b1 f_s, a2 f_ζ + b2 f_s).
    #[inline]
    fn grad_weights(&self, k: usize) -> (f64, f64, f64, f64) {
        let d = self.det[k];
        (self.m22[k] / d, -self.m21[k] / d, -self.m12[k] / d, self.m11[k] / d)
    }

    pub fn gradient(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let fz = self.d_zeta.mul_vec(f);
        let fs = self.d_s.mul_vec(f);
        let n = self.n_nodes();
        let mut g1 = vec![0.0; n];
        let mut g2 = vec![0.0; n];
        for k in 0..n {
            let (a1, b1, a2, b2) = self.grad_weights(k);
            g1[k] = a1 * fz[k] + b1 * fs[k];
            g2[k] = a2 * fz[k] + b2 * fs[k];
        }
        (g1, g2)
    }

    pub fn gradient_complex(&self, f: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let re: Vec<f64> = f.iter().map(|z| z.re).collect();
        let im: Vec<f64> = f.iter().map(|z| z.im).collect();
        let (r1, r2) = self.gradient(&re);
        let (i1, i2) = self.gradient(&im);
        (
            r1.iter().zip(&i1).map(|(a, b)| Complex64::new(*a, *b)).collect(),
            r2.iter().zip(&i2).map(|(a, b)| Complex64::new(*a, *b)).collect(),
        )
    }

    /// Sparse matrices G1, G2 with ∇f = (G1 f, G2 f).
    pub fn gradient_matrices(&self) -> (CsrMatrix, CsrMatrix) {
        let n = self.n_nodes();
        let (mut a1, mut b1, mut a2, mut b2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for k in 0..n {
            let w = self.grad_weights(k);
            a1[k] = w.0;
            b1[k] = w.1;
            a2[k] = w.2;
            b2[k] = w.3;
        }
        let g1 = self.d_zeta.scale_rows(&a1).add(&self.d_s.scale_rows(&b1), 1.0, 1.0);
        let g2 = self.d_zeta.scale_rows(&a2).add(&self.d_s.scale_rows(&b2), 1.0, 1.0);
        (g1, g2)
    }

    /// Divergence (1/J)[∂_ζ(J F^ζ) + ∂_s(J F^s)] with contravariant components.
    pub fn divergence(&self, f1: &[f64], f2: &[f64]) -> Vec<f64> {
        let n = self.n_nodes();
        let mut jz = vec![0.0; n];
        let mut js = vec![0.0; n];
        for k in 0..n {
            jz[k] = self.m22[k] * f1[k] - self.m12[k] * f2[k];
            js[k] = -self.m21[k] * f1[k] + self.m11[k] * f2[k];
        }
        let a = self.d_zeta.mul_vec(&jz);
        let b = self.d_s.mul_vec(&js);
        (0..n).map(|k| (a[k] + b[k]) / self.det[k]).collect()
    }

    /// Discrete metric Jacobian used by `gradient`/`divergence`.
    pub fn metric_jacobian(&self) -> &[f64] {
        &self.det
    }

    /// Conservative flux operator: row k holds Σ_faces T κ_face (f_nb − f_k)
    /// with κ_face the mean of the two nodal values. Zero flux through ∂Ω.
    pub fn flux_operator(&self, kappa: &[f64], outer: OuterRows) -> CsrMatrix {
        let (nr, nt) = (self.n_radial(), self.n_angular());
        let n = self.n_nodes();
        let mut t = TripletBuilder::with_capacity(n, n, 5 * n);
        let last_row = match outer {
            OuterRows::Dirichlet => nr - 1,
            OuterRows::Neumann => nr,
        };
        for i in 0..last_row {
            for j in 0..nt {
                let k = self.node(i, j);
                let mut diag = 0.0;
                let mut face = |nb: usize, tr: f64, t: &mut TripletBuilder| {
                    let c = tr * 0.5 * (kappa[k] + kappa[nb]);
                    t.push(k, nb, c);
                    diag -= c;
                };
                if i + 1 < nr {
                    face(self.node(i + 1, j), self.t_radial[i * nt + j], &mut t);
                }
                if i > 0 {
                    face(self.node(i - 1, j), self.t_radial[(i - 1) * nt + j], &mut t);
                }
                face(self.node(i, (j + 1) % nt), self.t_angular[i * nt + j], &mut t);
                face(self.node(i, (j + nt - 1) % nt), self.t_angular[i * nt + (j + nt - 1) % nt], &mut t);
                t.push(k, k, diag);
            }
        }
        t.build()
    }

    /// ∂(flux_operator(κ) f)_k / ∂κ_m as a sparse matrix.
    pub fn flux_kappa_derivative(&self, f: &[f64], outer: OuterRows) -> CsrMatrix {
        let (nr, nt) = (self.n_radial(), self.n_angular());
        let n = self.n_nodes();
        let mut t = TripletBuilder::with_capacity(n, n, 10 * n);
        let last_row = match outer {
            OuterRows::Dirichlet => nr - 1,
            OuterRows::Neumann => nr,
        };
        for i in 0..last_row {
            for j in 0..nt {
                let k = self.node(i, j);
                let face = |nb: usize, tr: f64, t: &mut TripletBuilder| {
                    let g = 0.5 * tr * (f[nb] - f[k]);
                    t.push(k, k, g);
                    t.push(k, nb, g);
                };
                if i + 1 < nr {
                    face(self.node(i + 1, j), self.t_radial[i * nt + j], &mut t);
                }
                if i > 0 {
                    face(self.node(i - 1, j), self.t_radial[(i - 1) * nt + j], &mut t);
                }
                face(self.node(i, (j + 1) % nt), self.t_angular[i * nt + j], &mut t);
                face(self.node(i, (j + nt - 1) % nt), self.t_angular[i * nt + (j + nt - 1) % nt], &mut t);
            }
        }
        t.build()
    }

    /// Net flux Σ_j T κ (f_{i+1,j} − f_{i,j}) through the ring of faces i+½.
    pub fn ring_flux(&self, kappa: &[f64], f: &[f64], i: usize) -> f64 {
        let nt = self.n_angular();
        (0..nt)
            .map(|j| {
                let (a, b) = (self.node(i, j), self.node(i + 1, j));
                self.t_radial[i * nt + j] * 0.5 * (kappa[a] + kappa[b]) * (f[b] - f[a])
            })
            .sum()
    }

    pub fn boundary_nodes(&self) -> std::ops::Range<usize> {
        0..self.n_angular()
    }

    /// Unit normal pointing into the fluid (away from the obstacle) at boundary node j.
    pub fn boundary_normal(&self, j: usize) -> [f64; 2] {
        let (_, dxi, _) = confocal(&self.spec.shape, self.xi[0], self.theta[j]);
        let n = dxi[0].hypot(dxi[1]);
        [dxi[0] / n, dxi[1] / n]
    }

    /// Unit tangent in the direction of increasing θ (counterclockwise).
    pub fn boundary_tangent(&self, j: usize) -> [f64; 2] {
        let (_, _, dth) = confocal(&self.spec.shape, self.xi[0], self.theta[j]);
        let n = dth[0].hypot(dth[1]);
        [dth[0] / n, dth[1] / n]
    }

    /// ∂f/∂ν at the boundary nodes (ν into the fluid), one-sided second order.
    pub fn boundary_normal_derivative(&self, f: &[f64]) -> Vec<f64> {
        let nt = self.n_angular();
        (0..nt)
            .map(|j| {
                let (a, b, c) = (self.node(0, j), self.node(1, j), self.node(2, j));
                (-1.5 * f[a] + 2.0 * f[b] - 0.5 * f[c]) / self.h_zeta[a]
            })
            .collect()
    }

    /// Tangential derivative along the boundary (counterclockwise), centered.
    pub fn boundary_tangential_derivative(&self, trace: &[f64]) -> Vec<f64> {
        let nt = self.n_angular();
        (0..nt).map(|j| 0.5 * (trace[(j + 1) % nt] - trace[(j + nt - 1) % nt]) / self.h_s[j]).collect()
    }

    /// Arc length between boundary nodes j and j+1 (approximate).
    pub fn boundary_arc(&self, j: usize) -> f64 {
        let nt = self.n_angular();
        let k = (j + 1) % nt;
        (self.x1[k] - self.x1[j]).hypot(self.x2[k] - self.x2[j])
    }

    /// Distance to the obstacle boundary measured along the confocal normal
    /// coordinate; exact for the disk.
    pub fn wall_distance(&self, x: [f64; 2]) -> f64 {
        match self.spec.shape.kind {
            ShapeKind::Disk => x[0].hypot(x[1]) - self.spec.shape.semi_axis_a,
            ShapeKind::Ellipse => ellipse_distance(self.spec.shape.semi_axis_a, self.spec.shape.semi_axis_b, x),
        }
    }

    /// Computational coordinates (ζ, s) of a physical point, if inside the grid.
    pub fn locate(&self, x: [f64; 2]) -> Option<(f64, f64)> {
        let shape = &self.spec.shape;
        let c2 = shape.focal2();
        let r2 = x[0] * x[0] + x[1] * x[1];
        let along = if shape.major_along_x1() { x[0] } else { x[1] };
        let p = c2 + r2;
        let u = 0.5 * (p + (p * p - 4.0 * c2 * along * along).max(0.0).sqrt());
        let xi = u.sqrt();
        if xi < self.xi[0] * (1.0 - 1e-12) || xi > self.spec.r_far * (1.0 + 1e-12) {
            return None;
        }
        let eta = (u - c2).max(0.0).sqrt();
        let theta = if shape.major_along_x1() {
            (x[1] / eta.max(1e-300)).atan2(x[0] / xi)
        } else {
            (x[1] / xi).atan2(x[0] / eta.max(1e-300))
        };
        let z = self.radial.zeta(xi.clamp(self.xi[0], self.spec.r_far)).clamp(0.0, (self.n_radial() - 1) as f64);
        Some((z, self.angular.s_of_theta(theta)))
    }

    fn bilinear_weights(&self, z: f64, s: f64) -> [(usize, f64); 4] {
        let nr = self.n_radial();
        let nt = self.n_angular();
        let i0 = (z.floor() as usize).min(nr - 2);
        let fz = z - i0 as f64;
        let sw = s.rem_euclid(nt as f64);
        let j0 = (sw.floor() as usize).min(nt - 1);
        let fs = sw - j0 as f64;
        let j1 = (j0 + 1) % nt;
        [
            (self.node(i0, j0), (1.0 - fz) * (1.0 - fs)),
            (self.node(i0 + 1, j0), fz * (1.0 - fs)),
            (self.node(i0, j1), (1.0 - fz) * fs),
            (self.node(i0 + 1, j1), fz * fs),
        ]
    }

    /// Bilinear stencil (node, weight) at a physical point; None outside.
    pub fn interpolation_weights(&self, x: [f64; 2]) -> Option<[(usize, f64); 4]> {
        let (z, s) = self.locate(x)?;
        Some(self.bilinear_weights(z, s))
    }

    /// Bilinear interpolation in computational coordinates; None outside.
    pub fn interpolate(&self, f: &[f64], x: [f64; 2]) -> Option<f64> {
        let (z, s) = self.locate(x)?;
        Some(self.bilinear_weights(z, s).iter().map(|&(k, w)| w * f[k]).sum())
    }

    pub fn interpolate_complex(&self, f: &[Complex64], x: [f64; 2]) -> Option<Complex64> {
        let (z, s) = self.locate(x)?;
        Some(self.bilinear_weights(z, s).iter().map(|&(k, w)| f[k] * w).sum())
    }

    /// Number of rings within physical distance `dist` of the boundary
    /// (measured along the first radial line of nodes at angle index j).
    pub fn rings_within(&self, j: usize, dist: f64) -> usize {
        let nr = self.n_radial();
        let b = self.node(0, j);
        (1..nr)
            .take_while(|&i| {
                let k = self.node(i, j);
                (self.x1[k] - self.x1[b]).hypot(self.x2[k] - self.x2[b]) <= dist
            })
            .count()
    }

    /// Smallest physical node spacing (radial and angular) at boundary index j
    /// and ring i.
    pub fn local_spacing(&self, i: usize, j: usize) -> (f64, f64) {
        let k = self.node(i, j);
        (self.h_zeta[k], self.h_s[k])
    }
}

/// Euclidean distance from x to the ellipse (x₁/a)² + (x₂/b)² = 1.
pub fn ellipse_distance(a: f64, b: f64, x: [f64; 2]) -> f64 {
    // Newton on the foot-point parameter, started from the angle of x.
    let (px, py) = (x[0].abs(), x[1].abs());
    let mut t = (a * py).atan2(b * px);
    for _ in 0..50 {
        let (s, c) = t.sin_cos();
        let ex = a * c - px;
        let ey = b * s - py;
        let g = -ex * a * s + ey * b * c;
        let h = (a * s).powi(2) + (b * c).powi(2) - ex * a * c - ey * b * s;
        let step = g / h;
        t = (t - step).clamp(0.0, PI / 2.0);
        if step.abs() < 1e-15 {
            break;
        }
    }
    let d = (a * t.cos() - px).hypot(b * t.sin() - py);
    let inside = (px / a).powi(2) + (py / b).powi(2) < 1.0;
    if inside {
        -d
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub index: usize,
    pub theta: f64,
    pub value: f64,
    pub kind: ExtremumKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub angles: Vec<f64>,
    pub values: Vec<f64>,
    pub extrema: Vec<Extremum>,
    pub is_constant: bool,
}

/// Discrete local extrema with periodic wraparound. A run of equal values
/// counts once, at its smallest angle.
pub fn boundary_trace(angles: &[f64], values: &[f64]) -> BoundaryTrace {
    let n = values.len();
    assert_eq!(angles.len(), n);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let is_constant = n == 0 || hi - lo <= 1e-14 * hi.abs().max(lo.abs()).max(1e-300);
    let mut extrema = Vec::new();
    if !is_constant {
        // Start at a position where the value changes so runs do not wrap.
        let start = (0..n).find(|&j| values[j] != values[(j + n - 1) % n]).unwrap();
        let mut j = 0;
        while j < n {
            let a = (start + j) % n;
            let mut len = 1;
            while len < n && values[(a + len) % n] == values[a] {
                len += 1;
            }
            let prev = values[(a + n - 1) % n];
            let next = values[(a + len) % n];
            let v = values[a];
            let kind = if v > prev && v > next {
                Some(ExtremumKind::Max)
            } else if v < prev && v < next {
                Some(ExtremumKind::Min)
            } else {
                None
            };
            if let Some(kind) = kind {
                // Smallest angle within the run.
                let idx = (0..len).map(|o| (a + o) % n).min_by(|&p, &q| angles[p].total_cmp(&angles[q])).unwrap();
                extrema.push(Extremum { index: idx, theta: angles[idx], value: v, kind });
            }
            j += len;
        }
        extrema.sort_by(|p, q| p.theta.total_cmp(&q.theta));
    }
    BoundaryTrace { angles: angles.to_vec(), values: values.to_vec(), extrema, is_constant }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(nr: usize, nt: usize, rfar: f64, q: f64) -> Grid2D {
        Grid2D::build(GridSpec::new(ObstacleShape::disk(1.0), nr, nt, rfar, q)).unwrap()
    }

    #[test]
    fn constructor_contract() {
        let g = disk(8, 8, 10.0, 1.05);
        assert_eq!(g.n_nodes(), 64);
        for j in 0..8 {
            assert!((g.radius(g.node(0, j)) - 1.0).abs() < 1e-14);
            assert!((g.radius(g.node(7, j)) - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipse_boundary_on_curve() {
        let g = Grid2D::build(GridSpec::new(ObstacleShape::ellipse(2.0, 1.0), 20, 33, 20.0, 1.05)).unwrap();
        for j in 0..33 {
            let k = g.node(0, j);
            let v = (g.x1()[k] / 2.0).powi(2) + g.x2()[k].powi(2);
            assert!((v - 1.0).abs() < 1e-12);
        }
        let g = Grid2D::build(GridSpec::new(ObstacleShape::ellipse(1.0, 2.0), 20, 33, 20.0, 1.05)).unwrap();
        for j in 0..33 {
            let k = g.node(0, j);
            let v = g.x1()[k].powi(2) + (g.x2()[k] / 2.0).powi(2);
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_spacing_ratio() {
        let g = disk(64, 16, 40.0, 1.1);
        for i in 0..62 {
            let r = g.radial_spacing(i + 1) / g.radial_spacing(i);
            assert!((r - 1.1).abs() < 1e-12 * 10.0, "{r}");
        }
    }

    #[test]
    fn bad_geometry() {
        let r = Grid2D::build(GridSpec::new(ObstacleShape::disk(1.0), 16, 16, 0.5, 1.05));
        assert!(matches!(r, Err(Error::BadGeometry(_))));
    }

    #[test]
    fn linear_exactness_and_constants() {
        for shape in [ObstacleShape::disk(1.0), ObstacleShape::ellipse(2.0, 1.0)] {
            let spec = GridSpec::new(shape, 24, 40, 12.0, 1.08).with_clustering(AngularClustering::around(0.0));
            let g = Grid2D::build(spec).unwrap();
            let (g1, g2) = g.gradient(g.x2());
            for k in 0..g.n_nodes() {
                assert!(g1[k].abs() < 1e-10 && (g2[k] - 1.0).abs() < 1e-10);
            }
            let (c1, c2) = g.gradient(&vec![3.5; g.n_nodes()]);
            assert!(c1.iter().chain(&c2).all(|v| *v == 0.0));
        }
    }

    fn laplacian_error(n: usize, f: impl Fn(f64, f64) -> f64, lap: impl Fn(f64, f64) -> f64) -> f64 {
        let g = disk(n, 2 * n, 5.0, 1.0);
        let vals: Vec<f64> = (0..g.n_nodes()).map(|k| f(g.x1()[k], g.x2()[k])).collect();
        let lf = g.flux_operator(&vec![1.0; g.n_nodes()], OuterRows::Dirichlet).mul_vec(&vals);
        let mut err: f64 = 0.0;
        for i in 2..n - 2 {
            for j in 0..2 * n {
                let k = g.node(i, j);
                err = err.max((lf[k] / g.cell_area()[k] - lap(g.x1()[k], g.x2()[k])).abs());
            }
        }
        err
    }

    #[test]
    fn flux_laplacian_second_order() {
        let f = |x: f64, y: f64| x.sin() * y.cos();
        let lap = |x: f64, y: f64| -2.0 * x.sin() * y.cos();
        let e1 = laplacian_error(32, f, lap);
        let e2 = laplacian_error(64, f, lap);
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "order {order} ({e1}, {e2})");
    }

    #[test]
    fn div_grad_r2_exact() {
        let err = |n: usize| {
            let g = disk(n, 2 * n, 5.0, 1.0);
            let r2: Vec<f64> = (0..g.n_nodes()).map(|k| g.radius(k).powi(2)).collect();
            let (a, b) = g.gradient(&r2);
            let d = g.divergence(&a, &b);
            (0..g.n_nodes()).filter(|&k| k / (2 * n) >= 2 && k / (2 * n) < n - 2).map(|k| (d[k] - 4.0).abs()).fold(0.0, f64::max)
        };
        assert!(err(16) < 1e-10 && err(32) < 1e-10);
    }

    #[test]
    fn neumann_rows_sum_to_zero() {
        let spec = GridSpec::new(ObstacleShape::ellipse(2.0, 1.0), 20, 32, 20.0, 1.05);
        let g = Grid2D::build(spec).unwrap();
        let kappa: Vec<f64> = (0..g.n_nodes()).map(|k| 1.0 + 0.5 * (g.x1()[k] * 0.3).sin().powi(2)).collect();
        let l = g.flux_operator(&kappa, OuterRows::Neumann);
        for s in l.row_sums() {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_is_adjoint_in_interior() {
        let g = disk(24, 48, 8.0, 1.05);
        let bump = |k: usize| {
            let r = g.radius(k);
            if r > 1.6 && r < 5.0 {
                ((r - 1.6) * (5.0 - r)).powi(3)
            } else {
                0.0
            }
        };
        let f: Vec<f64> = (0..g.n_nodes()).map(|k| bump(k) * g.x1()[k].cos()).collect();
        let v1: Vec<f64> = (0..g.n_nodes()).map(|k| bump(k) * g.x2()[k]).collect();
        let v2: Vec<f64> = (0..g.n_nodes()).map(|k| bump(k) * (1.0 + g.x1()[k] * g.x2()[k])).collect();
        let (g1, g2) = g.gradient(&f);
        let div = g.divergence(&v1, &v2);
        let jac = g.metric_jacobian();
        let lhs: f64 = (0..g.n_nodes()).map(|k| jac[k] * (g1[k] * v1[k] + g2[k] * v2[k])).sum();
        let rhs: f64 = (0..g.n_nodes()).map(|k| -jac[k] * f[k] * div[k]).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} {rhs}");
    }

    #[test]
    fn clustering_density() {
        let spec = GridSpec::new(ObstacleShape::disk(1.0), 16, 256, 10.0, 1.05).with_clustering(AngularClustering::around(0.0));
        let g = Grid2D::build(spec).unwrap();
        let th = g.theta();
        let near = th[1] - th[0];
        let far = th[129] - th[128];
        assert!((far / near - 4.0).abs() < 1e-6, "{}", far / near);
        assert!(th.windows(2).all(|w| w[1] > w[0]));
        assert!(th[255] < 2.0 * PI);
    }

    #[test]
    fn locate_round_trip() {
        for shape in [ObstacleShape::disk(1.0), ObstacleShape::ellipse(2.0, 1.0), ObstacleShape::ellipse(1.0, 1.5)] {
            let spec = GridSpec::new(shape, 20, 40, 15.0, 1.07).with_clustering(AngularClustering::around(0.5));
            let g = Grid2D::build(spec).unwrap();
            for k in [0, 5, 47, 130, 401, 799] {
                let (z, s) = g.locate([g.x1()[k], g.x2()[k]]).unwrap();
                assert!((z - (k / 40) as f64).abs() < 1e-8, "{z}");
                let ds = (s - (k % 40) as f64).rem_euclid(40.0);
                assert!(ds.min(40.0 - ds) < 1e-8, "{s}");
            }
            let f: Vec<f64> = g.x1().iter().zip(g.x2()).map(|(a, b)| a + 2.0 * b).collect();
            let k = 300;
            assert!((g.interpolate(&f, [g.x1()[k], g.x2()[k]]).unwrap() - f[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_extrema_cos2() {
        let n = 360;
        let ang: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
        let v: Vec<f64> = ang.iter().map(|t| t.cos().powi(2)).collect();
        let tr = boundary_trace(&ang, &v);
        let maxs: Vec<f64> = tr.extrema.iter().filter(|e| e.kind == ExtremumKind::Max).map(|e| e.theta).collect();
        let mins: Vec<f64> = tr.extrema.iter().filter(|e| e.kind == ExtremumKind::Min).map(|e| e.theta).collect();
        assert_eq!(maxs.len(), 2);
        assert_eq!(mins.len(), 2);
        assert!(maxs[0].abs() < 1e-12 && (maxs[1] - PI).abs() < 1e-9);
        assert!((mins[0] - PI / 2.0).abs() < 1e-9 && (mins[1] - 1.5 * PI).abs() < 1e-9);
        let c = boundary_trace(&ang, &vec![2.0; n]);
        assert!(c.is_constant && c.extrema.is_empty());
    }

    #[test]
    fn ellipse_distance_matches_axes() {
        assert!((ellipse_distance(2.0, 1.0, [3.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!((ellipse_distance(2.0, 1.0, [0.0, 2.5]) - 1.5).abs() < 1e-12);
        assert!(ellipse_distance(2.0, 1.0, [0.5, 0.2]) < 0.0);
    }
}
