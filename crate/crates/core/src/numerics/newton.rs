use super::linear::{build_preconditioner, gmres, LinearConfig, PreconditionerKind};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub damping_min: f64,
    pub linear_tol: f64,
    pub linear_max_iters: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 0.0,
            max_iters: 30,
            damping_min: 1.0 / 64.0,
            linear_tol: 1e-8,
            linear_max_iters: 1000,
            preconditioner: PreconditionerKind::Ilu0,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol >= 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidArgument("Newton tolerances".into()));
        }
        if !(self.damping_min > 0.0 && self.damping_min <= 1.0) {
            return Err(Error::InvalidArgument("damping_min must lie in (0, 1]".into()));
        }
        if !(self.linear_tol > 0.0) || self.linear_max_iters == 0 {
            return Err(Error::InvalidArgument("linear tolerances".into()));
        }
        Ok(())
    }

    pub fn with_preconditioner(mut self, p: PreconditionerKind) -> Self {
        self.preconditioner = p;
        self
    }
}

/// A square nonlinear system F(x) = 0 with an assembled sparse Jacobian.
pub trait NonlinearProblem {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> CsrMatrix;
    /// Rejects iterates outside the admissible set (e.g. loss of ellipticity).
    fn check_admissible(&self, _x: &[f64]) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    /// Residual 2-norms, starting with the initial state.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub linear_iterations: usize,
}

impl NewtonOutcome {
    pub fn residual_norm(&self) -> f64 {
        *self.history.last().unwrap()
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton iteration. The step is halved while the residual norm fails to
/// decrease strictly; the first decreasing step is accepted.
pub fn newton_solve<P: NonlinearProblem + ?Sized>(problem: &P, x0: &[f64], cfg: &NewtonConfig) -> Result<NewtonOutcome> {
    cfg.validate()?;
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite initial state".into()));
    }
    let mut x = x0.to_vec();
    let mut f = problem.residual(&x);
    let mut fnorm = norm2(&f);
    let target = cfg.abs_tol.max(cfg.rel_tol * fnorm);
    let mut history = vec![fnorm];
    let mut linear_iterations = 0;
    let lin = LinearConfig {
        tol: cfg.linear_tol,
        max_iters: cfg.linear_max_iters,
        restart: 60,
        preconditioner: cfg.preconditioner,
    };
    for it in 0..cfg.max_iters {
        if fnorm <= target {
            return Ok(NewtonOutcome { x, history, iterations: it, linear_iterations });
        }
        let j = problem.jacobian(&x);
        let pre = build_preconditioner(&j, cfg.preconditioner).map_err(|e| Error::LinearSolveFailure(e.to_string()))?;
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let sol = gmres(&j, &rhs, None, pre.as_ref(), &lin).map_err(|e| Error::LinearSolveFailure(e.to_string()))?;
        linear_iterations += sol.iterations;
        let dx = sol.x;
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + alpha * b).collect();
            let ok = problem.check_admissible(&trial).is_ok();
            if ok {
                let ft = problem.residual(&trial);
                let nt = norm2(&ft);
                if nt.is_finite() && nt < fnorm {
                    x = trial;
                    f = ft;
                    fnorm = nt;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < cfg.damping_min {
                if !ok {
                    problem.check_admissible(&trial)?;
                }
                return Err(Error::LineSearchStall { damping: alpha * 2.0, residual: fnorm });
            }
        }
        history.push(fnorm);
    }
    if fnorm <= target {
        return Ok(NewtonOutcome { x, history, iterations: cfg.max_iters, linear_iterations });
    }
    Err(Error::NonConvergence { iterations: cfg.max_iters, residual: fnorm })
}

/// Largest relative mismatch between J·v and the central difference
/// (F(x + hv) − F(x − hv)) / 2h over the supplied directions.
pub fn jacobian_fd_mismatch<P: NonlinearProblem + ?Sized>(problem: &P, x: &[f64], directions: &[Vec<f64>], h: f64) -> f64 {
    let j = problem.jacobian(x);
    let mut worst: f64 = 0.0;
    for v in directions {
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let fp = problem.residual(&xp);
        let fm = problem.residual(&xm);
        let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let jv = j.mul_vec(v);
        let diff: Vec<f64> = fd.iter().zip(&jv).map(|(a, b)| a - b).collect();
        let scale = norm2(&jv).max(norm2(&fd)).max(1e-300);
        worst = worst.max(norm2(&diff) / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(F, G);

    impl<F: Fn(f64) -> f64, G: Fn(f64) -> f64> NonlinearProblem for Scalar<F, G> {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &[f64]) -> Vec<f64> {
            vec![(self.0)(x[0])]
        }
        fn jacobian(&self, x: &[f64]) -> CsrMatrix {
            CsrMatrix::diag(&[(self.1)(x[0])])
        }
    }

    fn cfg() -> NewtonConfig {
        NewtonConfig { abs_tol: 1e-13, ..NewtonConfig::default() }
    }

    fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn square_root_of_four() {
        let p = Scalar(|x| x * x - 4.0, |x| 2.0 * x);
        let out = newton_solve(&p, &[3.0], &cfg()).unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_tail() {
        let p = Scalar(|x| x * x - 4.0, |x| 2.0 * x);
        let out = newton_solve(&p, &[3.0], &cfg()).unwrap();
        let h = &out.history;
        for k in 0..h.len() - 1 {
            if h[k] < 0.1 && h[k + 1] > 0.0 {
                assert!(h[k + 1] <= 1.0 * h[k] * h[k], "{h:?}");
            }
        }
    }

    #[test]
    fn dottie_number_against_bisection() {
        let p = Scalar(|x| x - x.cos(), |x| 1.0 + x.sin());
        let out = newton_solve(&p, &[1.0], &cfg()).unwrap();
        let oracle = bisect(|x| x - x.cos(), 0.0, 1.0);
        assert!((out.x[0] - oracle).abs() < 1e-12);
        assert!((out.x[0] - 0.7390851332).abs() < 1e-10);
    }

    #[test]
    fn exact_root_takes_no_steps() {
        let p = Scalar(|x| x * x - 4.0, |x| 2.0 * x);
        let out = newton_solve(&p, &[2.0], &cfg()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![2.0]);
    }

    #[test]
    fn stall_is_reported() {
        // x² + 1 has no real root; Newton cannot decrease below 1.
        let p = Scalar(|x| x * x + 1.0, |x| 2.0 * x);
        let r = newton_solve(&p, &[0.3], &cfg());
        assert!(matches!(r, Err(Error::LineSearchStall { .. }) | Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn bad_config_rejected() {
        let p = Scalar(|x| x, |_| 1.0);
        let c = NewtonConfig { damping_min: 0.0, ..NewtonConfig::default() };
        assert!(newton_solve(&p, &[1.0], &c).is_err());
    }

    #[test]
    fn deterministic_iterates() {
        let p = Scalar(|x| x.powi(3) - 2.0 * x - 5.0, |x| 3.0 * x * x - 2.0);
        let a = newton_solve(&p, &[3.0], &cfg()).unwrap();
        let b = newton_solve(&p, &[3.0], &cfg()).unwrap();
        assert_eq!(a.x[0].to_bits(), b.x[0].to_bits());
        assert_eq!(a.history, b.history);
    }
}
