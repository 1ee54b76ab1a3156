use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gpob::grid::Grid2D;
use gpob::io::read_field;
use gpob::nucleation::BoundaryKind;
use gpob::pipeline::{export_field, run_stages, write_json, write_summary, ExportFormat, RunConfig, RunManifest, Stage, CONFIG_FILE};
use gpob::vortex::{solve_gl_profile, HalfPlaneGrid};
use gpob::wave::{ansatz_seed, solve_traveling_wave, tw_newton_config};

#[derive(Parser)]
#[command(name = "gpob", version, about = "Superfluid flow past an obstacle: potential flow, boundary layers, traveling waves, vortex nucleation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct StageArgs {
    /// Run configuration (key = value with [sections]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Potential flow (and the optional sonic bracket).
    Flow(StageArgs),
    /// Boundary layer and vortex-free branch.
    Layer(StageArgs),
    /// One traveling wave from the pair ansatz.
    Tw {
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 40.0)]
        box_size: f64,
        #[arg(long, default_value_t = 0.2)]
        h: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Traveling-wave branch over the configured speeds.
    TwSweep(StageArgs),
    /// Vortex-free and vortex branches plus λ diagnostics.
    Nucleate {
        /// Run directory holding the flow stage (its config.ini is reused).
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        bc: Option<BoundaryKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary document of a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// All stages, resuming from cached artifacts.
    Pipeline(StageArgs),
    /// Field file of a run directory as binary or csv.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(a: &StageArgs) -> gpob::Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    fs::create_dir_all(to)?;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

fn run_stage(cfg: &RunConfig, stage: Stage) -> gpob::Result<bool> {
    let m = run_stages(cfg, &[stage])?;
    for r in &m.stages {
        eprintln!("{:>9} {:?} ({:.1}s) {:?}", r.stage.name(), r.status, r.seconds, r.checks);
    }
    Ok(m.stage(stage).is_some_and(|r| r.checks_pass()))
}

fn run(cli: Cli) -> gpob::Result<bool> {
    match cli.cmd {
        Cmd::Flow(a) => run_stage(&load_config(&a)?, Stage::Flow),
        Cmd::Layer(a) => run_stage(&load_config(&a)?, Stage::Layer),
        Cmd::TwSweep(a) => run_stage(&load_config(&a)?, Stage::Tw),
        Cmd::Pipeline(a) => {
            let cfg = load_config(&a)?;
            let m = run_stages(&cfg, &Stage::ALL)?;
            for r in &m.stages {
                eprintln!("{:>9} {:?} ({:.1}s)", r.stage.name(), r.status, r.seconds);
            }
            let text = write_summary(&cfg.output_dir)?;
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            Ok(doc["acceptance"]["all_pass"] == true)
        }
        Cmd::Nucleate { flow, eps, bc, out } => {
            let mut cfg = RunConfig::load(&flow.join(CONFIG_FILE))?;
            if let Some(e) = eps {
                cfg.epsilons = vec![e];
            }
            if let Some(b) = bc {
                cfg.bc = b;
            }
            cfg.output_dir = match out {
                Some(o) if o != flow => {
                    copy_dir(&flow, &o)?;
                    o
                }
                _ => flow,
            };
            run_stage(&cfg, Stage::Nucleate)
        }
        Cmd::Tw { c, box_size, h, out } => {
            fs::create_dir_all(&out)?;
            let g = HalfPlaneGrid::half_plane(box_size, box_size, h)?;
            let p = solve_gl_profile(40.0, 2000)?;
            let w = solve_traveling_wave(c, &ansatz_seed(&p, c, &g), &g, &tw_newton_config())?;
            gpob::io::write_field(&out.join("wave.c64"), g.n1, g.n2, &gpob::io::FieldData::Complex(w.field.clone()))?;
            let doc = serde_json::json!({
                "c": w.c, "d_c": w.d_c, "residual_norm": w.residual_norm, "momentum": w.momentum,
                "newton_iterations": w.newton_iterations, "vortices": w.vortices, "grid": g,
            });
            write_json(&out.join("wave.json"), &doc)?;
            eprintln!("c = {c}: d_c = {}, residual {:e}", w.d_c, w.residual_norm);
            Ok(w.d_c.is_finite() && w.residual_norm <= tw_newton_config().abs_tol)
        }
        Cmd::Report { run } => {
            let text = write_summary(&run)?;
            print!("{text}");
            RunManifest::load(&run)?.verify(&run)?;
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            Ok(doc["acceptance"]["all_pass"] == true)
        }
        Cmd::Export { run, field, format, out } => {
            let cfg = RunConfig::load(&run.join(CONFIG_FILE))?;
            let grid = Grid2D::build(cfg.grid_spec())?;
            let f = read_field(&run.join(&field))?;
            if (f.n_radial, f.n_angular) != (grid.n_radial(), grid.n_angular()) {
                return Err(gpob::Error::DimensionMismatch { expected: grid.n_nodes(), got: f.n_radial * f.n_angular });
            }
            export_field(&grid, &f.data, &out, format)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
