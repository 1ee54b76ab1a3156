use std::collections::BTreeMap;

use super::newton::{newton_solve, NewtonConfig, NonlinearProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ContinuationConfig {
    pub param_start: f64,
    pub param_end: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub step_shrink: f64,
    pub step_grow: f64,
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_step > 0.0
            && self.min_step <= self.initial_step
            && self.initial_step <= self.max_step
            && self.step_shrink > 0.0
            && self.step_shrink < 1.0
            && self.step_grow > 1.0
            && self.param_end != self.param_start;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("continuation config {self:?}")))
        }
    }

    fn direction(&self) -> f64 {
        (self.param_end - self.param_start).signum()
    }
}

#[derive(Debug, Clone)]
pub struct BranchSample {
    pub param: f64,
    pub solution: Vec<f64>,
    pub residual_norm: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// Reached `param_end`.
    Completed,
    /// Step fell below `min_step`; `failed_param` is the closest parameter that
    /// did not converge (or was rejected).
    BranchEnd { last_param: f64, failed_param: f64, reason: String },
    /// A sample inspection asked to stop the sweep.
    Stopped { last_param: f64, reason: String },
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub samples: Vec<BranchSample>,
    pub termination: Termination,
    /// Parameters attempted and rejected, with the reason.
    pub failures: Vec<(f64, String)>,
}

pub enum Verdict {
    Accept(BTreeMap<String, f64>),
    /// Treated like a Newton failure: the step is shrunk.
    Reject(String),
    /// The sample is discarded and the sweep ends.
    Stop(String),
}

/// A one-parameter family of nonlinear problems.
pub trait Family {
    type Problem: NonlinearProblem;
    fn problem(&self, param: f64) -> Self::Problem;
    fn predict(&self, prev: &BranchSample, _param: f64) -> Vec<f64> {
        prev.solution.clone()
    }
    fn inspect(&self, _param: f64, _x: &[f64]) -> Verdict {
        Verdict::Accept(BTreeMap::new())
    }
}

/// Natural-parameter continuation with step halving on failure.
pub fn continuation_sweep<F: Family>(
    family: &F,
    seed: &[f64],
    cfg: &ContinuationConfig,
    newton_cfg: &NewtonConfig,
) -> Result<ContinuationResult> {
    cfg.validate()?;
    let dir = cfg.direction();
    let first = family.problem(cfg.param_start);
    let out = newton_solve(&first, seed, newton_cfg).map_err(|e| Error::SeedFailure(e.to_string()))?;
    let diagnostics = match family.inspect(cfg.param_start, &out.x) {
        Verdict::Accept(d) => d,
        Verdict::Reject(r) | Verdict::Stop(r) => return Err(Error::SeedFailure(r)),
    };
    let mut samples = vec![BranchSample {
        param: cfg.param_start,
        residual_norm: out.residual_norm(),
        solution: out.x,
        diagnostics,
    }];
    let mut failures = Vec::new();
    let mut step = cfg.initial_step;
    loop {
        let prev = samples.last().unwrap();
        let remaining = (cfg.param_end - prev.param) * dir;
        if remaining <= 1e-12 * cfg.param_end.abs().max(1.0) {
            return Ok(ContinuationResult { samples, termination: Termination::Completed, failures });
        }
        let h = step.min(remaining);
        let param = if h == remaining { cfg.param_end } else { prev.param + dir * h };
        let guess = family.predict(prev, param);
        let problem = family.problem(param);
        let attempt = match newton_solve(&problem, &guess, newton_cfg) {
            Ok(o) => match family.inspect(param, &o.x) {
                Verdict::Accept(d) => Ok((o, d)),
                Verdict::Reject(r) => Err(r),
                Verdict::Stop(r) => {
                    let last_param = prev.param;
                    failures.push((param, r.clone()));
                    return Ok(ContinuationResult { samples, termination: Termination::Stopped { last_param, reason: r }, failures });
                }
            },
            Err(e) => Err(e.to_string()),
        };
        match attempt {
            Ok((o, d)) => {
                samples.push(BranchSample { param, residual_norm: o.residual_norm(), solution: o.x, diagnostics: d });
                step = (h * cfg.step_grow).min(cfg.max_step);
            }
            Err(reason) => {
                failures.push((param, reason.clone()));
                if h <= cfg.min_step {
                    let last_param = prev.param;
                    return Ok(ContinuationResult {
                        samples,
                        termination: Termination::BranchEnd { last_param, failed_param: param, reason },
                        failures,
                    });
                }
                step = (h * cfg.step_shrink).max(cfg.min_step);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sparse::CsrMatrix;

    struct Linear(f64);
    impl NonlinearProblem for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0] - self.0]
        }
        fn jacobian(&self, _x: &[f64]) -> CsrMatrix {
            CsrMatrix::identity(1)
        }
    }
    struct LinearFamily;
    impl Family for LinearFamily {
        type Problem = Linear;
        fn problem(&self, t: f64) -> Linear {
            Linear(t)
        }
    }

    struct Fold(f64);
    impl NonlinearProblem for Fold {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, x: &[f64]) -> Vec<f64> {
            vec![x[0] * x[0] - (1.0 - self.0)]
        }
        fn jacobian(&self, x: &[f64]) -> CsrMatrix {
            CsrMatrix::diag(&[2.0 * x[0]])
        }
    }
    struct FoldFamily;
    impl Family for FoldFamily {
        type Problem = Fold;
        fn problem(&self, t: f64) -> Fold {
            Fold(t)
        }
    }

    fn cc(start: f64, end: f64) -> ContinuationConfig {
        ContinuationConfig {
            param_start: start,
            param_end: end,
            initial_step: 0.1,
            min_step: 1e-3,
            max_step: 0.2,
            step_shrink: 0.5,
            step_grow: 1.5,
        }
    }

    #[test]
    fn linear_family_is_tracked_exactly() {
        let nc = NewtonConfig { abs_tol: 1e-14, ..NewtonConfig::default() };
        let r = continuation_sweep(&LinearFamily, &[0.0], &cc(0.0, 1.0), &nc).unwrap();
        assert_eq!(r.termination, Termination::Completed);
        for s in &r.samples {
            assert!((s.solution[0] - s.param).abs() < 1e-14);
        }
        assert_eq!(r.samples.last().unwrap().param, 1.0);
    }

    #[test]
    fn fold_ends_branch_near_one() {
        let nc = NewtonConfig { abs_tol: 1e-12, max_iters: 40, ..NewtonConfig::default() };
        let cfg = cc(0.0, 1.2);
        let r = continuation_sweep(&FoldFamily, &[1.0], &cfg, &nc).unwrap();
        match r.termination {
            Termination::BranchEnd { last_param, failed_param, .. } => {
                assert!(last_param <= 1.0 + 1e-12);
                assert!((1.0 - last_param).abs() <= 2.0 * cfg.min_step.max(1e-3), "last {last_param}");
                assert!(failed_param - last_param <= cfg.min_step + 1e-15);
            }
            t => panic!("unexpected {t:?}"),
        }
    }

    #[test]
    fn seed_failure() {
        let nc = NewtonConfig { max_iters: 2, ..NewtonConfig::default() };
        let r = continuation_sweep(&FoldFamily, &[1.0], &cc(1.5, 2.0), &nc);
        assert!(matches!(r, Err(Error::SeedFailure(_))));
    }

    #[test]
    fn downward_sweep() {
        let nc = NewtonConfig { abs_tol: 1e-14, ..NewtonConfig::default() };
        let r = continuation_sweep(&LinearFamily, &[1.0], &cc(1.0, 0.0), &nc).unwrap();
        assert_eq!(r.samples.last().unwrap().param, 0.0);
    }
}
