use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clfm::{BenchConfig, ClfmConfig};
use crate::error::{Error, Result};
use crate::geometry::BevGridSpec;
use crate::icd::{Denominator, Temperature};
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcdConfig {
    /// Side `S` of the pooled instance crop.
    pub pool_size: usize,
    pub denominator: Denominator,
    pub tau_init: f64,
}

impl Default for IcdConfig {
    fn default() -> Self {
        Self { pool_size: 6, denominator: Denominator::ExcludePositive, tau_init: 0.5 }
    }
}

impl IcdConfig {
    pub fn temperature(&self) -> Temperature {
        Temperature::from_tau(self.tau_init)
    }
}

/// Plain gradient descent with optional heavy-ball momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    /// Step on `rho` is `lr · rho_lr_scale · dL/drho`.
    pub rho_lr_scale: f64,
    pub momentum: f64,
    pub steps: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 0.01, rho_lr_scale: 0.1, momentum: 0.9, steps: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub train_scenes: usize,
    pub eval_scenes: usize,
    /// Index of the first held-out scene.
    pub eval_offset: u64,
    pub teacher_std: f64,
    pub student_std: f64,
    /// Encode the student side with the teacher's own weights on the point cloud.
    pub self_distill: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            train_scenes: 8,
            eval_scenes: 8,
            eval_offset: 1_000_000,
            teacher_std: 0.35,
            student_std: 0.02,
            self_distill: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub pool_sizes: Vec<usize>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { pool_sizes: vec![3, 6, 9] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seeds: usize,
    pub tolerance: f64,
    pub step: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seeds: 20, tolerance: 1e-4, step: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub count: usize,
    pub first_index: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { count: 8, first_index: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseConfig {
    pub lidar: PathBuf,
    pub image: PathBuf,
    /// Directory holding a params bundle; empty means fresh weights from the run seed.
    pub params: PathBuf,
    pub oracle: bool,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self { lidar: PathBuf::new(), image: PathBuf::new(), params: PathBuf::new(), oracle: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub json: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("bevlab-out"), json: false }
    }
}

/// Everything one `bevlab` invocation needs. Sections map one-to-one onto TOML tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: BevGridSpec,
    pub synth: SynthConfig,
    pub icd: IcdConfig,
    pub optim: OptimConfig,
    pub distill: DistillConfig,
    pub ablate: AblateConfig,
    pub clfm: ClfmConfig,
    pub bench: BenchConfig,
    pub gradcheck: GradcheckConfig,
    pub gen: GenConfig,
    pub fuse: FuseConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Synthetic-scene settings with the run seed and grid filled in.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { seed: self.seed, grid: self.grid, ..self.synth.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.synth_config().validate()?;
        self.clfm.validate()?;
        if self.icd.pool_size == 0 {
            return bad("icd.pool_size must be ≥ 1");
        }
        if !(self.icd.tau_init > 0.0 && self.icd.tau_init.is_finite()) {
            return bad("icd.tau_init must be positive");
        }
        if !(self.optim.lr >= 0.0 && self.optim.lr.is_finite()) || !(0.0..1.0).contains(&self.optim.momentum) {
            return bad("optim.lr must be ≥ 0 and optim.momentum in [0, 1)");
        }
        if self.ablate.pool_sizes.contains(&0) {
            return bad("ablate.pool_sizes must all be ≥ 1");
        }
        if self.distill.train_scenes == 0 || self.distill.eval_scenes == 0 {
            return bad("distill needs at least one training and one held-out scene");
        }
        if self.distill.eval_offset < self.distill.train_scenes as u64 {
            return bad("held-out scenes overlap the training scenes");
        }
        if !(self.gradcheck.tolerance > 0.0 && self.gradcheck.step > 0.0) {
            return bad("gradcheck tolerance and step must be positive");
        }
        Ok(())
    }

    /// Applies one `dotted.key=value` override. The key must name an existing field; the value is read as a
    /// TOML literal and falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        *slot = match (&*slot, parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        let updated: Self = root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[icd]\npool_size = 9\n[grid]\ncell_size = 0.5\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.icd.pool_size, 9);
        assert_eq!(cfg.icd.tau_init, IcdConfig::default().tau_init);
        assert_eq!(cfg.grid.cell_size, 0.5);
        assert_eq!(cfg.grid.height, BevGridSpec::default().height);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[icd]\npool = 3\n"), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply_override("icd.pool=3"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_override("icd.pool_size"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_parse_literals() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("icd.pool_size=3").unwrap();
        cfg.apply_override("optim.lr = 1").unwrap();
        cfg.apply_override("icd.denominator=include_positive").unwrap();
        cfg.apply_override("clfm.rope=\"axial\"").unwrap();
        cfg.apply_override("output.dir=/tmp/x y").unwrap();
        assert_eq!(cfg.icd.pool_size, 3);
        assert_eq!(cfg.optim.lr, 1.0);
        assert_eq!(cfg.icd.denominator, Denominator::IncludePositive);
        assert_eq!(cfg.clfm.rope, crate::clfm::RopeMode::Axial);
        assert_eq!(cfg.output.dir, PathBuf::from("/tmp/x y"));
    }

    #[test]
    fn invalid_override_leaves_config_untouched() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_override("icd.pool_size=0").is_err());
        assert!(cfg.apply_override("optim.momentum=\"fast\"").is_err());
        assert_eq!(cfg, RunConfig::default());
    }
}
