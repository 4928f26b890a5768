//! Run configuration: one JSON document, overridable key by key.

use std::path::{Path, PathBuf};

use latticeopt::densmap::DEFAULT_BATCH;
use latticeopt::optimizer::OptConfig;
use latticeopt::pann::{ParamGrid, TrainConfig};
use latticeopt::rve::DEFAULT_TOL_LEN;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seeds: Seeds,
    pub rve: RveSection,
    pub material: MaterialSection,
    pub homogenize: HomogenizeSection,
    pub density: DensitySection,
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub optimize: OptimizeSection,
    pub paths: Paths,
    pub checks: Checks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub rve: u64,
    /// Monte Carlo sampling in the density sweep
    pub density: u64,
    /// train/validation split
    pub split: u64,
    /// network initialization
    pub init: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RveSection {
    pub cells: usize,
    pub strut_length: f64,
    pub tol_len: f64,
    /// Load a saved lattice instead of generating one.
    pub file: Option<PathBuf>,
}

/// Base material of the struts (and of frozen solid regions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialSection {
    pub youngs: f64,
    pub poisson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogenizeSection {
    pub grid: ParamGrid,
    pub eps_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    pub aspects: Vec<f64>,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct DatasetSection {
    pub grid: ParamGrid,
    /// Read records from a dataset CSV instead of homogenizing.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    /// `mbb`, `cantilever` or `voxel` (needs `mask`)
    pub problem: String,
    pub counts: Option<[usize; 3]>,
    pub mask: Option<PathBuf>,
    pub rho_min: Option<f64>,
    pub rho_max: Option<f64>,
    pub gamma0: Option<f64>,
    pub kappa0: Option<f64>,
    pub penalty: Option<f64>,
    pub r_min: Option<f64>,
    pub move_limit: Option<f64>,
    pub damping: Option<f64>,
    pub volume_fraction: Option<f64>,
    pub tolerance: Option<f64>,
    pub window: Option<usize>,
    pub max_iter: Option<usize>,
    pub count_frozen_volume: Option<bool>,
    /// Voxel problems only.
    pub supports: Vec<Support>,
    pub loads: Vec<PointLoad>,
    /// Write a VTK field every this many iterations; 0 writes the final one only.
    pub vtk_every: usize,
}

/// Fixes `dofs` of every node inside the box `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Support {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub dofs: Vec<usize>,
}

/// Nodal force on the node nearest to `at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointLoad {
    pub at: [f64; 3],
    pub dof: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub output: PathBuf,
    /// Defaults to `<output>/net.json`.
    pub net: Option<PathBuf>,
    /// Defaults to `<output>/density_fit.json` if present.
    pub density_fit: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checks {
    pub enabled: bool,
    /// Random inputs for the network constraint check.
    pub probes: usize,
    pub max_fit_rms: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seeds: Seeds::default(),
            rve: RveSection::default(),
            material: MaterialSection::default(),
            homogenize: HomogenizeSection::default(),
            density: DensitySection::default(),
            dataset: DatasetSection::default(),
            train: TrainConfig::default(),
            optimize: OptimizeSection::default(),
            paths: Paths::default(),
            checks: Checks::default(),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { rve: 1, density: 7, split: 7, init: 1 }
    }
}

impl Default for RveSection {
    fn default() -> Self {
        RveSection { cells: 2845, strut_length: 1.0, tol_len: DEFAULT_TOL_LEN, file: None }
    }
}

impl Default for MaterialSection {
    fn default() -> Self {
        MaterialSection { youngs: 210.0, poisson: 0.3 }
    }
}

impl Default for HomogenizeSection {
    fn default() -> Self {
        HomogenizeSection {
            grid: ParamGrid { aspect: vec![0.01, 0.05, 0.1, 0.2, 0.3], youngs: vec![210.0], poisson: vec![0.3] },
            eps_star: 1.0,
        }
    }
}

impl Default for DensitySection {
    fn default() -> Self {
        DensitySection { aspects: (0..13).map(|i| 0.02 + 0.04 * i as f64).collect(), batch: DEFAULT_BATCH }
    }
}

impl Default for OptimizeSection {
    fn default() -> Self {
        OptimizeSection {
            problem: "mbb".into(),
            counts: None,
            mask: None,
            rho_min: None,
            rho_max: None,
            gamma0: None,
            kappa0: None,
            penalty: None,
            r_min: None,
            move_limit: None,
            damping: None,
            volume_fraction: None,
            tolerance: None,
            window: None,
            max_iter: None,
            count_frozen_volume: None,
            supports: vec![],
            loads: vec![],
            vtk_every: 0,
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Paths { output: PathBuf::from("out"), net: None, density_fit: None }
    }
}

impl Default for Checks {
    fn default() -> Self {
        Checks { enabled: true, probes: 10_000, max_fit_rms: 0.01 }
    }
}

impl OptimizeSection {
    /// Applies the explicitly set parameters on top of `base`.
    pub fn apply(&self, base: &OptConfig) -> OptConfig {
        let mut c = base.clone();
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(penalty, r_min, move_limit, damping, volume_fraction, tolerance, window, max_iter, count_frozen_volume);
        c
    }
}

impl RunConfig {
    /// Reads `path` (or starts from the defaults) and applies `key=value`
    /// overrides. Values are parsed as JSON, falling back to plain strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let user = serde_json::from_str::<Value>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            if !user.is_object() {
                return Err(CliError::Config(format!("{}: expected a JSON object", p.display())));
            }
            merge(&mut doc, user);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for f in [&self.rve.file, &self.dataset.file, &self.optimize.mask, &self.paths.density_fit].into_iter().flatten() {
            if !f.exists() {
                return Err(CliError::Config(format!("referenced file {} does not exist", f.display())));
            }
        }
        if !(self.material.youngs > 0.0) || !(self.material.poisson > -1.0 && self.material.poisson < 0.5) {
            return Err(CliError::Config(format!("invalid base material E = {}, nu = {}", self.material.youngs, self.material.poisson)));
        }
        if self.rve.cells == 0 || !(self.rve.strut_length > 0.0) {
            return Err(CliError::Config("rve.cells and rve.strut_length must be positive".into()));
        }
        if self.density.batch == 0 || self.density.aspects.is_empty() {
            return Err(CliError::Config("density.aspects must be non-empty and density.batch positive".into()));
        }
        self.optimize.apply(&OptConfig::default()).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, leaving out the output
    /// directory so identical runs in different places share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.output = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn net_path(&self) -> PathBuf {
        self.paths.net.clone().unwrap_or_else(|| self.paths.output.join("net.json"))
    }

    pub fn density_fit_path(&self) -> PathBuf {
        self.paths.density_fit.clone().unwrap_or_else(|| self.paths.output.join("density_fit.json"))
    }
}

/// Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_override(doc: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| CliError::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("empty key segment in '{key}'")));
        }
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just created")
            }
            _ => return Err(CliError::Config(format!("'{}' is not an object", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            match obj.get_mut(*part) {
                Some(slot) => merge(slot, value),
                None => {
                    obj.insert(part.to_string(), value);
                }
            }
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.hash(), back.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn overrides() {
        let c = RunConfig::load(None, &["optimize.volume_fraction=0.2".into(), "optimize.problem=cantilever".into()]).unwrap();
        assert_eq!(c.optimize.volume_fraction, Some(0.2));
        assert_eq!(c.optimize.problem, "cantilever");
        assert_ne!(c.hash(), RunConfig::default().hash());
        let c = RunConfig::load(None, &["train.epochs=10".into(), "seeds.rve=3".into()]).unwrap();
        assert_eq!((c.train.epochs, c.seeds.rve, c.train.patience), (10, 3, 20_000));
        // nested partial overrides keep the section defaults
        let c = RunConfig::load(None, &["homogenize.grid.aspect=[0.1]".into()]).unwrap();
        assert_eq!(c.homogenize.grid.youngs, vec![210.0]);
        let mut moved = c.clone();
        moved.paths.output = "elsewhere".into();
        assert_eq!(moved.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in ["nonsense=1", "optimize.penalty=-1", "schema_version=9", "train", "rve.file=/no/such/file"] {
            assert!(matches!(RunConfig::load(None, &[bad.into()]), Err(CliError::Config(_))), "{bad}");
        }
        assert!(matches!(RunConfig::load(Some(Path::new("/no/such.json")), &[]), Err(CliError::Io { .. })));
    }

    #[test]
    fn optimizer_overrides_only_touch_set_fields() {
        let s = OptimizeSection { r_min: Some(0.1), max_iter: Some(7), ..Default::default() };
        let base = OptConfig { volume_fraction: 0.1, ..Default::default() };
        let c = s.apply(&base);
        assert_eq!((c.r_min, c.max_iter, c.volume_fraction), (0.1, 7, 0.1));
    }
}
