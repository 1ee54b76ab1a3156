use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Stage};
use super::export::write_json;
use super::manifest::{RunManifest, StageRecord, StageStatus};
use crate::error::{Error, Result};
use crate::flow::{boundary_extrema, flow_newton_config, solve_potential_flow, sonic_continuation, BoundaryExtrema, FlowParams, FlowSolution, SONIC_SPEED2};
use crate::grid::Grid2D;
use crate::io::{fmt17, read_field, write_field, FieldData};
use crate::layer::{assemble_vortex_free, madelung_newton_config, solve_rho1, VortexFreeSolution};
use crate::nucleation::{gp_newton_config, nucleation_report, BoundaryKind, NucleationReport, NucleationRun, WaveBank};
use crate::numerics::{ContinuationConfig, NewtonConfig};
use crate::vortex::{solve_gl_profile, HalfPlaneGrid};
use crate::wave::{continuation_in_c, default_sweep_config, tw_newton_config, wave_from_field, TwSample};

pub const CONFIG_FILE: &str = "config.ini";

/// Worker cap from `GPOB_THREADS` (default 1). The solvers run sequentially,
/// so the value is recorded but never exceeded.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("GPOB_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("GPOB_THREADS = {s:?} must be a positive integer"))),
        },
        Err(_) => Ok(1),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowArtifact {
    pub delta: f64,
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub max_boundary_speed2: f64,
    pub max_speed2: f64,
    pub sonic_margin: f64,
    pub extrema: BoundaryExtrema,
    pub delta_star_bracket: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerArtifact {
    pub epsilon: f64,
    pub correction_norms: (f64, f64),
    pub residual_norms: (f64, f64),
    pub newton_iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchArtifact {
    pub grid: HalfPlaneGrid,
    pub samples: Vec<TwSample>,
    pub termination: String,
    pub c_end_observed: f64,
    pub wave_files: Vec<String>,
}

fn eps_tag(e: f64) -> String {
    format!("eps_{e:?}")
}

fn rel(p: &Path, dir: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn with_tol(cfg: NewtonConfig, tol: f64) -> NewtonConfig {
    NewtonConfig { abs_tol: tol, ..cfg }
}

/// In-memory results, loaded from disk when a stage was cached.
struct Context {
    dir: PathBuf,
    cfg: RunConfig,
    grid: Option<Arc<Grid2D>>,
    flow: Option<FlowSolution>,
    vfs: Option<Vec<VortexFreeSolution>>,
    bank: Option<WaveBank>,
}

struct StageOutput {
    artifacts: Vec<String>,
    checks: BTreeMap<String, bool>,
    solves: usize,
    degenerate: Option<String>,
}

impl Context {
    fn grid(&mut self) -> Result<Arc<Grid2D>> {
        if self.grid.is_none() {
            self.grid = Some(Arc::new(Grid2D::build(self.cfg.grid_spec())?));
        }
        Ok(self.grid.clone().unwrap())
    }

    fn flow_params(&self) -> FlowParams {
        FlowParams { delta: self.cfg.delta, epsilon: self.cfg.epsilons[0] }
    }

    fn run_flow(&mut self) -> Result<StageOutput> {
        let d = self.dir.join("flow");
        fs::create_dir_all(&d)?;
        let grid = self.grid()?;
        let newton = with_tol(flow_newton_config(), self.cfg.tolerances.flow);
        let flow = solve_potential_flow(grid.clone(), self.flow_params(), None, &newton)?;
        let mut solves = 1;
        let bracket = if self.cfg.sonic_delta_max > 0.0 {
            let start = (self.cfg.delta.abs() * 0.5).max(0.01);
            let cc = ContinuationConfig {
                param_start: start,
                param_end: self.cfg.sonic_delta_max,
                initial_step: 0.02,
                min_step: 0.004,
                max_step: 0.04,
                step_shrink: 0.5,
                step_grow: 1.5,
            };
            solves += 1;
            Some(sonic_continuation(grid.clone(), self.cfg.sonic_delta_max, &cc, &newton)?.delta_star_bracket)
        } else {
            None
        };
        let art = FlowArtifact {
            delta: flow.delta,
            residual_norm: flow.residual_norm,
            newton_iterations: flow.newton_iterations,
            max_boundary_speed2: flow.max_boundary_speed2,
            max_speed2: flow.max_speed2,
            sonic_margin: flow.sonic_margin,
            extrema: boundary_extrema(&flow),
            delta_star_bracket: bracket,
        };
        write_json(&d.join("flow.json"), &art)?;
        write_field(&d.join("phi.bin"), grid.n_radial(), grid.n_angular(), &FieldData::Real(flow.phi.clone()))?;
        write_field(&d.join("speed2.bin"), grid.n_radial(), grid.n_angular(), &FieldData::Real(flow.speed2.clone()))?;
        let mut checks = BTreeMap::new();
        checks.insert("converged".into(), flow.residual_norm <= self.cfg.tolerances.flow);
        checks.insert("subsonic".into(), flow.max_speed2 < SONIC_SPEED2);
        self.flow = Some(flow);
        Ok(StageOutput { artifacts: vec!["flow/flow.json".into(), "flow/phi.bin".into(), "flow/speed2.bin".into()], checks, solves, degenerate: None })
    }

    fn flow(&mut self) -> Result<&FlowSolution> {
        if self.flow.is_none() {
            let grid = self.grid()?;
            let phi = match read_field(&self.dir.join("flow/phi.bin"))?.data {
                FieldData::Real(v) => v,
                FieldData::Complex(_) => return Err(Error::Format("flow/phi.bin holds a complex field".into())),
            };
            let newton = with_tol(flow_newton_config(), self.cfg.tolerances.flow);
            self.flow = Some(solve_potential_flow(grid, self.flow_params(), Some(&phi), &newton)?);
        }
        Ok(self.flow.as_ref().unwrap())
    }

    fn run_layer(&mut self) -> Result<StageOutput> {
        let newton = with_tol(madelung_newton_config(), self.cfg.tolerances.layer);
        let eps = self.cfg.epsilons.clone();
        let flow = self.flow()?.clone();
        let grid = flow.grid.clone();
        let (nr, nt) = (grid.n_radial(), grid.n_angular());
        let mut artifacts = vec![];
        let mut checks = BTreeMap::new();
        let mut vfs = vec![];
        for e in eps {
            let d = self.dir.join("layer").join(eps_tag(e));
            fs::create_dir_all(&d)?;
            let layer = solve_rho1(&flow, e, &newton)?;
            let vf = assemble_vortex_free(&flow, &layer, e, true, &newton)?;
            let art = LayerArtifact {
                epsilon: e,
                correction_norms: vf.correction_norms,
                residual_norms: vf.residual_norms,
                newton_iterations: vf.newton_iterations,
                polished: vf.polished,
            };
            write_json(&d.join("vortex_free.json"), &art)?;
            write_field(&d.join("rho1.bin"), nr, nt, &FieldData::Real(layer.rho1.clone()))?;
            write_field(&d.join("rho_eps.bin"), nr, nt, &FieldData::Real(vf.rho_eps.clone()))?;
            write_field(&d.join("phi_eps.bin"), nr, nt, &FieldData::Real(vf.phi_eps.clone()))?;
            for f in ["vortex_free.json", "rho1.bin", "rho_eps.bin", "phi_eps.bin"] {
                artifacts.push(rel(&d.join(f), &self.dir));
            }
            checks.insert(format!("{}.madelung_residual", eps_tag(e)), vf.polished && vf.residual_norms.0.max(vf.residual_norms.1) <= 1e-9);
            vfs.push(vf);
        }
        self.vfs = Some(vfs);
        Ok(StageOutput { artifacts, checks, solves: 2 * self.cfg.epsilons.len(), degenerate: None })
    }

    fn vortex_free(&mut self) -> Result<Vec<VortexFreeSolution>> {
        if self.vfs.is_none() {
            let flow = self.flow()?.clone();
            let g = flow.grid.clone();
            let mut out = vec![];
            for &e in &self.cfg.epsilons {
                let d = self.dir.join("layer").join(eps_tag(e));
                let real = |f: &str| -> Result<Vec<f64>> {
                    match read_field(&d.join(f))?.data {
                        FieldData::Real(v) if v.len() == g.n_nodes() => Ok(v),
                        _ => Err(Error::Format(format!("{}/{f}", d.display()))),
                    }
                };
                let art: LayerArtifact = serde_json::from_str(&fs::read_to_string(d.join("vortex_free.json"))?)?;
                let (rho_eps, phi_eps) = (real("rho_eps.bin")?, real("phi_eps.bin")?);
                let u = rho_eps.iter().zip(&phi_eps).map(|(r, p)| Complex64::from_polar(*r, p / e)).collect();
                out.push(VortexFreeSolution {
                    grid: g.clone(),
                    rho_eps,
                    phi_eps,
                    epsilon: e,
                    u,
                    correction_norms: art.correction_norms,
                    residual_norms: art.residual_norms,
                    newton_iterations: art.newton_iterations,
                    polished: art.polished,
                });
            }
            self.vfs = Some(out);
        }
        Ok(self.vfs.clone().unwrap())
    }

    fn wave_grid(&self) -> Result<HalfPlaneGrid> {
        HalfPlaneGrid::half_plane(self.cfg.wave_box, self.cfg.wave_box, self.cfg.wave_h)
    }

    fn run_tw(&mut self) -> Result<StageOutput> {
        let d = self.dir.join("tw");
        fs::create_dir_all(&d)?;
        let g = self.wave_grid()?;
        let (lo, hi) = self.cfg.c_range();
        let profile = solve_gl_profile(40.0, 2000)?;
        let newton = with_tol(tw_newton_config(), self.cfg.tolerances.tw);
        let branch = continuation_in_c(lo, hi, &g, &profile, &default_sweep_config(lo, hi), &newton)?;
        let mut wave_files = vec![];
        for (i, w) in branch.waves.iter().enumerate() {
            let name = format!("wave_{i:03}.c64");
            write_field(&d.join(&name), g.n1, g.n2, &FieldData::Complex(w.field.clone()))?;
            wave_files.push(name);
        }
        let art = BranchArtifact {
            grid: g.clone(),
            samples: branch.samples.clone(),
            termination: format!("{:?}", branch.termination),
            c_end_observed: branch.c_end_observed,
            wave_files: wave_files.clone(),
        };
        write_json(&d.join("branch.json"), &art)?;
        let mut checks = BTreeMap::new();
        checks.insert("converged".into(), branch.samples.iter().all(|s| s.residual <= self.cfg.tolerances.tw));
        checks.insert("d_c_decreasing".into(), branch.samples.windows(2).all(|w| w[1].d_c < w[0].d_c));
        checks.insert("nonempty".into(), !branch.waves.is_empty());
        let n = branch.samples.len();
        self.bank = WaveBank::from_waves(g, branch.waves).ok();
        let mut artifacts = vec!["tw/branch.json".to_string()];
        artifacts.extend(wave_files.iter().map(|f| format!("tw/{f}")));
        Ok(StageOutput { artifacts, checks, solves: n, degenerate: None })
    }

    fn bank(&mut self) -> Result<&mut WaveBank> {
        if self.bank.is_none() {
            let d = self.dir.join("tw");
            let art: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("branch.json"))?)?;
            let grid: HalfPlaneGrid = serde_json::from_value(art["grid"].clone())?;
            let samples = art["samples"].as_array().cloned().unwrap_or_default();
            let files = art["wave_files"].as_array().cloned().unwrap_or_default();
            let mut waves = vec![];
            for (s, f) in samples.iter().zip(&files) {
                let (c, f) = (s["c"].as_f64().unwrap_or(f64::NAN), f.as_str().unwrap_or_default());
                match read_field(&d.join(f))?.data {
                    FieldData::Complex(v) => waves.push(wave_from_field(c, &grid, v)?),
                    FieldData::Real(_) => return Err(Error::Format(format!("tw/{f} is real"))),
                }
            }
            self.bank = Some(WaveBank::from_waves(grid, waves)?);
        }
        Ok(self.bank.as_mut().unwrap())
    }

    fn run_nucleate(&mut self) -> Result<StageOutput> {
        let newton = with_tol(gp_newton_config(), self.cfg.tolerances.gp);
        let flow = self.flow()?.clone();
        let vfs = self.vortex_free()?;
        let (bc, seeds) = (self.cfg.bc, self.cfg.n_seeds);
        let mut artifacts = vec![];
        let mut checks = BTreeMap::new();
        let mut degenerate = None;
        let mut solves = 0;
        for vf in &vfs {
            let tag = eps_tag(vf.epsilon);
            let d = self.dir.join("nucleate").join(&tag);
            let run = nucleation_report(&flow, vf, self.bank()?, bc, seeds, &newton)?;
            solves += 1 + run.u_vortex.len();
            artifacts.extend(write_nucleation(&d, &flow.grid, &run)?.iter().map(|p| rel(p, &self.dir)));
            for (k, v) in nucleation_checks(&run.report) {
                checks.insert(format!("{tag}.{k}"), v);
            }
            if run.report.degenerate.is_some() {
                degenerate = run.report.degenerate.clone();
            }
        }
        Ok(StageOutput { artifacts, checks, solves, degenerate })
    }
}

/// Writes report.json, lambda.csv, u_free.c64 and u_vortex.c64 (further
/// seeds as u_vortex_1.c64, …) into `dir`.
pub fn write_nucleation(dir: &Path, grid: &Grid2D, run: &NucleationRun) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (nr, nt) = (grid.n_radial(), grid.n_angular());
    let mut out = vec![dir.join("report.json"), dir.join("lambda.csv"), dir.join("u_free.c64")];
    write_json(&out[0], &run.report)?;
    let mut csv = String::from("theta,lambda0,lambda1,dtau_speed2\n");
    if let Some(p) = &run.report.projections {
        for q in 0..p.lambda1.len() {
            csv += &format!("{},{},{},{}\n", fmt17(p.boundary_points[q]), fmt17(p.lambda0[q]), fmt17(p.lambda1[q]), fmt17(p.tangential_derivative[q]));
        }
    }
    fs::write(&out[1], csv)?;
    write_field(&out[2], nr, nt, &FieldData::Complex(run.u_free.clone()))?;
    for (i, u) in run.u_vortex.iter().enumerate() {
        let p = if i == 0 { dir.join("u_vortex.c64") } else { dir.join(format!("u_vortex_{i}.c64")) };
        write_field(&p, nr, nt, &FieldData::Complex(u.clone()))?;
        out.push(p);
    }
    Ok(out)
}

/// The stage's own acceptance checks on one nucleation report.
pub fn nucleation_checks(r: &NucleationReport) -> BTreeMap<String, bool> {
    let mut c = BTreeMap::new();
    let tol = r.solver_tolerance;
    c.insert("free_converged".into(), r.vortex_free.residual_norm <= tol);
    c.insert("lambda0_identity".into(), r.vortex_free.lambda0.abs() <= 10.0 * tol);
    if r.bc_kind == BoundaryKind::Neumann {
        c.insert("free_min_modulus".into(), r.vortex_free.min_modulus > 0.6);
    }
    if r.degenerate.is_none() {
        let e = r.epsilon;
        c.insert("vortex_branch_found".into(), !r.vortex_branch.is_empty());
        c.insert("distinct".into(), r.vortex_branch.iter().all(|v| v.distinctness > 1e-2));
        c.insert("site_match".into(), r.vortex_branch.iter().all(|v| v.site_distance <= 5.0 * e));
    }
    c
}

fn record_from(stage: Stage, hash: String, out: Result<StageOutput>, secs: f64) -> StageRecord {
    match out {
        Ok(o) => StageRecord {
            stage,
            status: match o.degenerate {
                Some(m) => StageStatus::Degenerate(m),
                None => StageStatus::Completed,
            },
            stage_hash: hash,
            artifacts: o.artifacts,
            seconds: secs,
            checks: o.checks,
            solves: o.solves,
        },
        Err(e) => StageRecord { stage, status: StageStatus::Failed(e.to_string()), stage_hash: hash, artifacts: vec![], seconds: secs, checks: BTreeMap::new(), solves: 0 },
    }
}

/// Runs the requested stages (and any dependency without a usable cache) in
/// `cfg.output_dir`, reusing stages whose artifacts match the config hash.
pub fn run_stages(cfg: &RunConfig, wanted: &[Stage]) -> Result<RunManifest> {
    cfg.validate()?;
    let threads = thread_cap()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let previous = RunManifest::load(&dir).ok();
    let mut needed: Vec<Stage> = wanted.to_vec();
    for s in wanted {
        needed.extend_from_slice(s.depends_on());
    }
    needed.sort();
    needed.dedup();
    fs::write(dir.join(CONFIG_FILE), cfg.to_ini())?;
    let mut ctx = Context { dir: dir.clone(), cfg: cfg.clone(), grid: None, flow: None, vfs: None, bank: None };
    let mut records: Vec<StageRecord> = vec![];
    for stage in Stage::ALL {
        let hash = cfg.stage_hash(stage);
        let cached = previous.as_ref().and_then(|m| m.stage(stage)).filter(|r| r.stage_hash == hash && r.status.is_done()).filter(|r| {
            let one = RunManifest { config_hash: String::new(), software_version: String::new(), threads, stages: vec![(*r).clone()] };
            one.verify(&dir).is_ok()
        });
        if let Some(r) = cached {
            let status = match &r.status {
                StageStatus::Degenerate(m) => StageStatus::Degenerate(m.clone()),
                _ => StageStatus::Cached,
            };
            records.push(StageRecord { status, seconds: 0.0, solves: 0, ..r.clone() });
            continue;
        }
        if !needed.contains(&stage) {
            if let Some(r) = previous.as_ref().and_then(|m| m.stage(stage)) {
                records.push(r.clone());
            }
            continue;
        }
        if let Some(dep) = stage.depends_on().iter().find(|d| !records.iter().any(|r| r.stage == **d && r.status.is_done())) {
            let reason = format!("upstream stage {} unavailable", dep.name());
            records.push(StageRecord { stage, status: StageStatus::Skipped(reason), stage_hash: hash, artifacts: vec![], seconds: 0.0, checks: BTreeMap::new(), solves: 0 });
            continue;
        }
        let t0 = Instant::now();
        let out = match stage {
            Stage::Flow => ctx.run_flow(),
            Stage::Layer => ctx.run_layer(),
            Stage::Tw => ctx.run_tw(),
            Stage::Nucleate => ctx.run_nucleate(),
        };
        records.push(record_from(stage, hash, out, t0.elapsed().as_secs_f64()));
    }
    let manifest = RunManifest { config_hash: cfg.config_hash(), software_version: env!("CARGO_PKG_VERSION").to_string(), threads, stages: records };
    manifest.save(&dir)?;
    Ok(manifest)
}

/// flow → layer → traveling-wave sweep → λ-diagnostics and nucleation.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    run_stages(cfg, &Stage::ALL)
}
