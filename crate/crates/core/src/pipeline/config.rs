use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::grid::{AngularClustering, GridSpec, ObstacleShape, ShapeKind};
use crate::nucleation::BoundaryKind;
use crate::wave::MAX_SPEED;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub flow: f64,
    pub layer: f64,
    pub tw: f64,
    pub gp: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { flow: 1e-10, layer: 1e-10, tw: 1e-10, gp: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub shape: ObstacleShape,
    pub n_radial: usize,
    pub n_angular: usize,
    pub r_far: f64,
    pub radial_stretch: f64,
    /// Empty for a uniform angular grid.
    pub cluster_centers: Vec<f64>,
    pub cluster_half_width: f64,
    pub cluster_factor: f64,
    pub delta: f64,
    /// Upper δ for the sonic continuation; 0 skips it.
    pub sonic_delta_max: f64,
    pub epsilons: Vec<f64>,
    /// Speeds spanned by the wave sweep (min to max).
    pub c_list: Vec<f64>,
    pub wave_box: f64,
    pub wave_h: f64,
    pub bc: BoundaryKind,
    pub n_seeds: usize,
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            shape: ObstacleShape::disk(1.0),
            n_radial: 128,
            n_angular: 256,
            r_far: 8.0,
            radial_stretch: 1.03,
            cluster_centers: vec![0.0, std::f64::consts::PI],
            cluster_half_width: 0.3,
            cluster_factor: 4.0,
            delta: 0.2,
            sonic_delta_max: 0.0,
            epsilons: vec![0.1],
            c_list: vec![0.5, 1.4],
            wave_box: 10.0,
            wave_h: 0.1,
            bc: BoundaryKind::Neumann,
            n_seeds: 1,
            output_dir: PathBuf::from("run"),
            tolerances: Tolerances::default(),
        }
    }
}

/// `[section]` headers, `key = value` lines, `#` or `;` comments.
pub fn parse_ini(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Config(format!("line {}: unterminated section", n + 1)))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split([',', ' ']).filter(|s| !s.is_empty()).map(|s| num(key, s)).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn from_ini(text: &str) -> Result<Self> {
        let map = parse_ini(text)?;
        let mut c = RunConfig::default();
        let mut semi: Option<Vec<f64>> = None;
        let mut kind = ShapeKind::Disk;
        for (key, v) in &map {
            let k = key.as_str();
            match k {
                "geometry.shape" => {
                    kind = match v.as_str() {
                        "disk" => ShapeKind::Disk,
                        "ellipse" => ShapeKind::Ellipse,
                        _ => return Err(Error::Config(format!("{k}: unknown shape {v:?}"))),
                    }
                }
                "geometry.semi_axes" => semi = Some(list(k, v)?),
                "grid.n_radial" => c.n_radial = num(k, v)?,
                "grid.n_angular" => c.n_angular = num(k, v)?,
                "grid.r_far" => c.r_far = num(k, v)?,
                "grid.stretch" => c.radial_stretch = num(k, v)?,
                "grid.cluster_centers" => c.cluster_centers = list(k, v)?,
                "grid.cluster_half_width" => c.cluster_half_width = num(k, v)?,
                "grid.cluster_factor" => c.cluster_factor = num(k, v)?,
                "flow.delta" => c.delta = num(k, v)?,
                "flow.sonic_delta_max" => c.sonic_delta_max = num(k, v)?,
                "flow.tol" => c.tolerances.flow = num(k, v)?,
                "layer.epsilon" => c.epsilons = list(k, v)?,
                "layer.tol" => c.tolerances.layer = num(k, v)?,
                "tw.c" => c.c_list = list(k, v)?,
                "tw.box" => c.wave_box = num(k, v)?,
                "tw.h" => c.wave_h = num(k, v)?,
                "tw.tol" => c.tolerances.tw = num(k, v)?,
                "nucleate.bc" => c.bc = v.parse()?,
                "nucleate.seeds" => c.n_seeds = num(k, v)?,
                "nucleate.tol" => c.tolerances.gp = num(k, v)?,
                "output.dir" => c.output_dir = PathBuf::from(v),
                _ => return Err(Error::Config(format!("unknown key {k}"))),
            }
        }
        c.shape = match (kind, semi.as_deref()) {
            (ShapeKind::Disk, None) => ObstacleShape::disk(1.0),
            (ShapeKind::Disk, Some([r])) => ObstacleShape::disk(*r),
            (ShapeKind::Ellipse, Some([a, b])) => ObstacleShape::ellipse(*a, *b),
            (_, s) => return Err(Error::Config(format!("geometry.semi_axes {s:?} does not fit the shape"))),
        };
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
        Self::from_ini(&text)
    }

    /// Canonical text; `from_ini(to_ini())` reproduces the config.
    pub fn to_ini(&self) -> String {
        let s = &self.shape;
        let (shape, semi) = match s.kind {
            ShapeKind::Disk => ("disk", fmt_list(&[s.semi_axis_a])),
            ShapeKind::Ellipse => ("ellipse", fmt_list(&[s.semi_axis_a, s.semi_axis_b])),
        };
        let t = &self.tolerances;
        format!(
            "[geometry]\nshape = {shape}\nsemi_axes = {semi}\n\n\
             [grid]\nn_radial = {}\nn_angular = {}\nr_far = {:?}\nstretch = {:?}\ncluster_centers = {}\ncluster_half_width = {:?}\ncluster_factor = {:?}\n\n\
             [flow]\ndelta = {:?}\nsonic_delta_max = {:?}\ntol = {:?}\n\n\
             [layer]\nepsilon = {}\ntol = {:?}\n\n\
             [tw]\nc = {}\nbox = {:?}\nh = {:?}\ntol = {:?}\n\n\
             [nucleate]\nbc = {}\nseeds = {}\ntol = {:?}\n\n\
             [output]\ndir = {}\n",
            self.n_radial,
            self.n_angular,
            self.r_far,
            self.radial_stretch,
            fmt_list(&self.cluster_centers),
            self.cluster_half_width,
            self.cluster_factor,
            self.delta,
            self.sonic_delta_max,
            t.flow,
            fmt_list(&self.epsilons),
            t.layer,
            fmt_list(&self.c_list),
            self.wave_box,
            self.wave_h,
            t.tw,
            self.bc,
            self.n_seeds,
            t.gp,
            self.output_dir.display()
        )
    }

    pub fn grid_spec(&self) -> GridSpec {
        let spec = GridSpec::new(self.shape, self.n_radial, self.n_angular, self.r_far, self.radial_stretch);
        if self.cluster_centers.is_empty() {
            spec
        } else {
            spec.with_clustering(AngularClustering {
                centers: self.cluster_centers.clone(),
                half_width: self.cluster_half_width,
                factor: self.cluster_factor,
            })
        }
    }

    pub fn c_range(&self) -> (f64, f64) {
        let lo = self.c_list.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.c_list.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Checks every stage's preconditions without solving anything.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.shape.validate()?;
        let big = self.shape.max_semi_axis();
        if self.n_radial < 4 || self.n_angular < 8 {
            return bad(format!("grid {}×{} too small", self.n_radial, self.n_angular));
        }
        if !(self.r_far > 3.0 * big && self.r_far.is_finite()) {
            return bad(format!("r_far = {} must exceed 3 × {big}", self.r_far));
        }
        if !(self.radial_stretch >= 1.0 && self.radial_stretch.is_finite()) {
            return bad("stretch must be ≥ 1".into());
        }
        if !self.cluster_centers.is_empty() && !(self.cluster_factor >= 1.0 && self.cluster_half_width > 0.0) {
            return bad("angular clustering parameters".into());
        }
        if self.epsilons.is_empty() {
            return bad("layer.epsilon needs at least one value".into());
        }
        for &e in &self.epsilons {
            FlowParams { delta: self.delta, epsilon: e }.validate()?;
        }
        if !(self.sonic_delta_max == 0.0 || (self.sonic_delta_max > self.delta.abs() && self.sonic_delta_max < 1.0)) {
            return bad(format!("sonic_delta_max = {} must be 0 or in (|δ|, 1)", self.sonic_delta_max));
        }
        if self.c_list.is_empty() || self.c_list.iter().any(|&c| !(c > 0.0 && c < MAX_SPEED)) {
            return bad(format!("tw.c = {:?} must be non-empty and inside (0, √2)", self.c_list));
        }
        if !(self.wave_h > 0.0 && self.wave_box >= 4.0 * self.wave_h) {
            return bad(format!("wave box {} with h = {}", self.wave_box, self.wave_h));
        }
        if self.n_seeds == 0 {
            return bad("nucleate.seeds must be ≥ 1".into());
        }
        let t = &self.tolerances;
        if [t.flow, t.layer, t.tw, t.gp].iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return bad(format!("tolerances must be positive: {t:?}"));
        }
        Ok(())
    }

    fn section_hash(&self, parts: &[&str]) -> String {
        let full = serde_json::to_value(self).expect("config serializes");
        let mut h = Sha256::new();
        for p in parts {
            let keys: &[&str] = match *p {
                "flow" => &["shape", "n_radial", "n_angular", "r_far", "radial_stretch", "cluster_centers", "cluster_half_width", "cluster_factor", "delta", "sonic_delta_max"],
                "layer" => &["epsilons"],
                "tw" => &["c_list", "wave_box", "wave_h"],
                _ => &["bc", "n_seeds"],
            };
            for k in keys {
                h.update(k.as_bytes());
                h.update(full[k].to_string().as_bytes());
            }
            let tol = match *p {
                "flow" => self.tolerances.flow,
                "layer" => self.tolerances.layer,
                "tw" => self.tolerances.tw,
                _ => self.tolerances.gp,
            };
            h.update(tol.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Hash of every knob that changes a stage's output, upstream stages included.
    pub fn stage_hash(&self, stage: Stage) -> String {
        match stage {
            Stage::Flow => self.section_hash(&["flow"]),
            Stage::Layer => self.section_hash(&["flow", "layer"]),
            Stage::Tw => self.section_hash(&["tw"]),
            Stage::Nucleate => self.config_hash(),
        }
    }

    pub fn config_hash(&self) -> String {
        self.section_hash(&["flow", "layer", "tw", "nucleate"])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Flow,
    Layer,
    Tw,
    Nucleate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Flow, Stage::Layer, Stage::Tw, Stage::Nucleate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Flow => "flow",
            Stage::Layer => "layer",
            Stage::Tw => "tw",
            Stage::Nucleate => "nucleate",
        }
    }

    pub fn depends_on(self) -> &'static [Stage] {
        match self {
            Stage::Flow | Stage::Tw => &[],
            Stage::Layer => &[Stage::Flow],
            Stage::Nucleate => &[Stage::Flow, Stage::Layer, Stage::Tw],
        }
    }
}
