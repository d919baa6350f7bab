//! Experiment configuration: one TOML file per experiment, with dotted-key
//! overrides applied before validation.

use std::path::{Path, PathBuf};

use pbir_core::pathseek::PathConfig;
use pbir_core::simulate::Ellipse;
use pbir_core::solvers::Filter;
use pbir_core::{EllipsePhantom, HuberPenalty, ImageGrid, Neighborhood, ScanGeometry};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `"water"`, `"abdomen"`, or a TOML file of `[[ellipse]]` tables
    /// (relative to the config file).
    #[serde(default = "default_phantom")]
    pub phantom: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub path: PathBlock,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub nps: NpsConfig,
    #[serde(default)]
    pub export: ExportConfig,
}

fn default_phantom() -> String {
    "water".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamKind {
    Parallel,
    Fan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub beam: BeamKind,
    pub nx: usize,
    pub ny: usize,
    /// Pixel size, mm.
    pub dx: f64,
    pub dy: f64,
    pub n_views: usize,
    /// Defaults to `ceil(1.5 nx)`.
    pub n_dets: Option<usize>,
    /// Defaults to `dx`.
    pub det_spacing: Option<f64>,
    pub source_to_iso: f64,
    pub source_to_det: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            beam: BeamKind::Parallel,
            nx: 128,
            ny: 128,
            dx: 3.0,
            dy: 3.0,
            n_views: 360,
            n_dets: None,
            det_spacing: None,
            source_to_iso: 600.0,
            source_to_det: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub i0: f64,
    pub seed: u64,
    pub noiseless: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            i0: 2e5,
            seed: 7,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodKind {
    Four,
    Eight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    /// Huber transition, HU.
    pub delta_hu: f64,
    pub neighborhood: NeighborhoodKind,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            delta_hu: 5.0,
            neighborhood: NeighborhoodKind::Four,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fbp,
    Sqs,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ramp,
    Hann,
}

impl From<FilterKind> for Filter {
    fn from(f: FilterKind) -> Self {
        match f {
            FilterKind::Ramp => Filter::Ramp,
            FilterKind::Hann => Filter::Hann,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Fbp,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub beta: f64,
    pub iterations: usize,
    pub subsets: usize,
    pub rho: f64,
    pub n_inner: usize,
    /// ADMM with ρ decreasing from 1 down to `rho`.
    pub continuation: bool,
    pub init: InitKind,
    pub filter: FilterKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Admm,
            beta: 1e-2,
            iterations: 150,
            subsets: 10,
            rho: 0.03,
            n_inner: 2,
            continuation: false,
            init: InitKind::Fbp,
            filter: FilterKind::Hann,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Rog,
    Dog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathBlock {
    pub engine: Engine,
    pub beta1: f64,
    pub beta2: f64,
    pub n_frames: usize,
    pub p: f64,
    pub delta_v: f64,
    pub n_opt: usize,
    pub beta_ratio: f64,
    pub n_subsets_ps: Option<usize>,
    pub n_subsets_opt: Option<usize>,
    pub rho: f64,
    pub n_inner: usize,
}

impl Default for PathBlock {
    fn default() -> Self {
        let d = PathConfig::dog(1e-3, 1e-1);
        Self {
            engine: Engine::Dog,
            beta1: d.beta1,
            beta2: d.beta2,
            n_frames: 20,
            p: d.p,
            delta_v: d.delta_v,
            n_opt: d.n_opt,
            beta_ratio: d.beta_ratio,
            n_subsets_ps: None,
            n_subsets_opt: None,
            rho: d.rho,
            n_inner: d.n_inner,
        }
    }
}

impl PathBlock {
    pub fn to_path_config(&self) -> PathConfig {
        let base = match self.engine {
            Engine::Rog => PathConfig::rog(self.beta1, self.beta2),
            Engine::Dog => PathConfig::dog(self.beta1, self.beta2),
        };
        PathConfig {
            n_frames: self.n_frames,
            p: self.p,
            delta_v: self.delta_v,
            n_opt: self.n_opt,
            beta_ratio: self.beta_ratio,
            n_subsets_ps: self.n_subsets_ps.unwrap_or(base.n_subsets_ps),
            n_subsets_opt: self.n_subsets_opt.unwrap_or(base.n_subsets_opt),
            rho: self.rho,
            n_inner: self.n_inner,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Reference images (relative to the config file). When empty,
    /// `n_references` direct solves at log-spaced β in `[beta1, beta2]` are
    /// computed.
    pub references: Vec<PathBuf>,
    pub n_references: usize,
    /// Side of the central square ROI as a fraction of the grid; 1 = full grid.
    pub roi_fraction: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            references: Vec::new(),
            n_references: 5,
            roi_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NpsEstimator {
    Ensemble,
    Difference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NpsConfig {
    /// Seeds `simulation.seed + k` for `k < n_seeds`.
    pub n_seeds: usize,
    /// Path frame indices at which spectra are estimated.
    pub frames: Vec<usize>,
    pub roi_fraction: f64,
    pub estimator: NpsEstimator,
}

impl Default for NpsConfig {
    fn default() -> Self {
        Self {
            n_seeds: 8,
            frames: vec![0, 8, 16],
            roi_fraction: 0.25,
            estimator: NpsEstimator::Ensemble,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    /// Also write 16-bit PGM previews next to every image.
    pub pgm: bool,
    pub window: f64,
    pub level: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            pgm: false,
            window: 400.0,
            level: 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhantomFile {
    ellipse: Vec<EllipseEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EllipseEntry {
    center_x: f64,
    center_y: f64,
    semi_axis_a: f64,
    semi_axis_b: f64,
    #[serde(default)]
    rotation_deg: f64,
    value_hu: f64,
}

/// A validated configuration together with the directory its relative paths
/// resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub hash: [u8; 32],
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir, overrides)
    }

    pub fn from_str(text: &str, base_dir: PathBuf, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let loaded = Self {
            hash: config_hash(&config)?,
            config,
            base_dir,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.hash)
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        let bad = |m: String| Err(CliError::Config(m));
        self.grid()?;
        self.geometry()?;
        self.penalty()?;
        self.phantom()?;
        if !(c.simulation.i0 > 0.0 && c.simulation.i0.is_finite()) {
            return bad(format!("simulation.i0 must be positive, got {}", c.simulation.i0));
        }
        let s = &c.solver;
        if !(s.beta >= 0.0 && s.beta.is_finite()) {
            return bad(format!("solver.beta must be >= 0, got {}", s.beta));
        }
        if s.subsets == 0 || s.n_inner == 0 {
            return bad("solver.subsets and solver.n_inner must be >= 1".into());
        }
        if !(s.rho > 0.0 && s.rho.is_finite()) {
            return bad(format!("solver.rho must be > 0, got {}", s.rho));
        }
        c.path.to_path_config().validate()?;
        for r in &c.metrics.references {
            let p = self.resolve(r);
            if !p.is_file() {
                return bad(format!("reference image {} does not exist", p.display()));
            }
        }
        if c.metrics.references.is_empty() && c.metrics.n_references == 0 {
            return bad("metrics needs references or n_references >= 1".into());
        }
        for (name, f) in [("metrics", c.metrics.roi_fraction), ("nps", c.nps.roi_fraction)] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("{name}.roi_fraction must be in (0, 1], got {f}"));
            }
        }
        if c.nps.frames.is_empty() {
            return bad("nps.frames must not be empty".into());
        }
        if c.nps.n_seeds < 2 {
            return bad("nps.n_seeds must be >= 2".into());
        }
        if !(c.export.window > 0.0) {
            return bad(format!("export.window must be > 0, got {}", c.export.window));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<ImageGrid> {
        let g = &self.config.geometry;
        Ok(ImageGrid::new(g.nx, g.ny, g.dx, g.dy)?)
    }

    pub fn geometry(&self) -> Result<ScanGeometry> {
        let g = &self.config.geometry;
        let grid = self.grid()?;
        let n_dets = g.n_dets.unwrap_or((3 * g.nx).div_ceil(2));
        let spacing = g.det_spacing.unwrap_or(g.dx);
        Ok(match g.beam {
            BeamKind::Parallel => ScanGeometry::parallel(grid, g.n_views, n_dets, spacing)?,
            BeamKind::Fan => ScanGeometry::fan(grid, g.n_views, n_dets, spacing, g.source_to_iso, g.source_to_det)?,
        })
    }

    pub fn penalty(&self) -> Result<HuberPenalty> {
        let p = &self.config.penalty;
        let nb = match p.neighborhood {
            NeighborhoodKind::Four => Neighborhood::Four,
            NeighborhoodKind::Eight => Neighborhood::Eight,
        };
        Ok(HuberPenalty::new(p.delta_hu, nb)?)
    }

    pub fn phantom(&self) -> Result<EllipsePhantom> {
        let grid = self.grid()?;
        match self.config.phantom.as_str() {
            "water" => Ok(EllipsePhantom::water_cylinder_for_grid(&grid)),
            "abdomen" => Ok(EllipsePhantom::abdomen_for_grid(&grid)),
            file => {
                let path = self.resolve(Path::new(file));
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                let parsed: PhantomFile = toml::from_str(&text).map_err(|e| CliError::Format {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let ellipses = parsed
                    .ellipse
                    .into_iter()
                    .map(|e| Ellipse {
                        center_x: e.center_x,
                        center_y: e.center_y,
                        semi_axis_a: e.semi_axis_a,
                        semi_axis_b: e.semi_axis_b,
                        rotation: e.rotation_deg.to_radians(),
                        value: e.value_hu,
                    })
                    .collect();
                Ok(EllipsePhantom::new(ellipses)?)
            }
        }
    }
}

/// Set `a.b.c = value`; the value is parsed as TOML, falling back to a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid override key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override key {key:?}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// SHA-256 of the canonical TOML serialization.
pub fn config_hash(config: &ExperimentConfig) -> Result<[u8; 32]> {
    let canonical = toml::to_string(config).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Sha256::digest(canonical.as_bytes()).into())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
