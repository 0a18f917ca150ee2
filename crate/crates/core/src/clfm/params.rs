use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{load_tensor_as, normal_tensor, save_tensor, Scalar, Tensor};

use super::attention::{AttentionSpec, FeatureMap, ScaleConvention};
use super::rope::RopeMode;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    #[default]
    Dense,
    Depthwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClfmConfig {
    pub channels: usize,
    pub heads: usize,
    pub eps: f64,
    pub feature_map: FeatureMap,
    pub scale: ScaleConvention,
    pub rope: RopeMode,
    pub conv: ConvMode,
}

impl Default for ClfmConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            heads: 2,
            eps: 1e-6,
            feature_map: FeatureMap::EluPlusOne,
            scale: ScaleConvention::Heads,
            rope: RopeMode::Flat,
            conv: ConvMode::Dense,
        }
    }
}

impl ClfmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::Config(format!("{} channels do not split into {} heads", self.channels, self.heads)));
        }
        let multiple = if self.rope == RopeMode::Axial { 4 } else { 2 };
        if self.head_dim() % multiple != 0 {
            return Err(Error::Config(format!("head dim {} must be a multiple of {multiple}", self.head_dim())));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn attention(&self) -> AttentionSpec {
        AttentionSpec { heads: self.heads, eps: self.eps, scale: self.scale }
    }

    pub fn conv_shape(&self) -> Vec<usize> {
        let c = self.channels;
        match self.conv {
            ConvMode::Dense => vec![3, 3, c, c],
            ConvMode::Depthwise => vec![3, 3, c],
        }
    }
}

/// Weights of one modality branch. Projections are `C×C` and act on row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchParams<T: Scalar> {
    pub in_proj: Tensor<T>,
    pub conv: Tensor<T>,
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub shortcut: Tensor<T>,
    pub gate: Tensor<T>,
}

const BRANCH_FIELDS: [&str; 7] = ["in_proj", "conv", "q", "k", "v", "shortcut", "gate"];

impl<T: Scalar> BranchParams<T> {
    fn init<R: Rng + ?Sized>(cfg: &ClfmConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        let mut lin = || normal_tensor(&[c, c], INIT_STD, rng);
        let (in_proj, q, k, v, shortcut, gate) = (lin(), lin(), lin(), lin(), lin(), lin());
        let conv = normal_tensor(&cfg.conv_shape(), INIT_STD, rng);
        Self { in_proj, conv, q, k, v, shortcut, gate }
    }

    /// Identity projections and an impulse conv kernel.
    fn identity(cfg: &ClfmConfig) -> Self {
        let c = cfg.channels;
        let eye = Tensor::identity(c);
        let conv = match cfg.conv {
            ConvMode::Dense => Tensor::from_fn(&[3, 3, c, c], |i| {
                if i[0] == 1 && i[1] == 1 && i[2] == i[3] {
                    T::one()
                } else {
                    T::zero()
                }
            }),
            ConvMode::Depthwise => {
                Tensor::from_fn(&[3, 3, c], |i| if i[0] == 1 && i[1] == 1 { T::one() } else { T::zero() })
            }
        };
        Self { in_proj: eye.clone(), conv, q: eye.clone(), k: eye.clone(), v: eye.clone(), shortcut: eye.clone(), gate: eye }
    }

    fn fields(&self) -> [&Tensor<T>; 7] {
        [&self.in_proj, &self.conv, &self.q, &self.k, &self.v, &self.shortcut, &self.gate]
    }

    fn from_fields(mut take: impl FnMut(&str) -> Result<Tensor<T>>) -> Result<Self> {
        Ok(Self {
            in_proj: take("in_proj")?,
            conv: take("conv")?,
            q: take("q")?,
            k: take("k")?,
            v: take("v")?,
            shortcut: take("shortcut")?,
            gate: take("gate")?,
        })
    }

    fn validate(&self, cfg: &ClfmConfig, branch: &str) -> Result<()> {
        let c = cfg.channels;
        for (name, t) in BRANCH_FIELDS.iter().zip(self.fields()) {
            let want = if *name == "conv" { cfg.conv_shape() } else { vec![c, c] };
            if t.shape() != want {
                return Err(Error::Dimension(format!("{branch}.{name} is {:?}, expected {want:?}", t.shape())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClfmParams<T: Scalar> {
    pub config: ClfmConfig,
    pub lidar: BranchParams<T>,
    pub image: BranchParams<T>,
    /// Final `1×1` conv as a `C×C` matrix.
    pub out_proj: Tensor<T>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ClfmConfig,
    weights: BTreeMap<String, String>,
}

pub const MANIFEST_NAME: &str = "manifest.toml";

impl<T: Scalar> ClfmParams<T> {
    /// Every weight drawn from `normal(0, 0.02)`.
    pub fn init<R: Rng + ?Sized>(config: ClfmConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let lidar = BranchParams::init(&config, rng);
        let image = BranchParams::init(&config, rng);
        let out_proj = normal_tensor(&[config.channels, config.channels], INIT_STD, rng);
        Ok(Self { config, lidar, image, out_proj })
    }

    pub fn identity(config: ClfmConfig) -> Result<Self> {
        config.validate()?;
        let branch = BranchParams::identity(&config);
        Ok(Self { config, lidar: branch.clone(), image: branch, out_proj: Tensor::identity(config.channels) })
    }

    /// Image branch reuses the lidar weights.
    pub fn shared(config: ClfmConfig, branch: BranchParams<T>, out_proj: Tensor<T>) -> Result<Self> {
        let p = Self { config, lidar: branch.clone(), image: branch, out_proj };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.lidar.validate(&self.config, "lidar")?;
        self.image.validate(&self.config, "image")?;
        let c = self.config.channels;
        if self.out_proj.shape() != [c, c] {
            return Err(Error::Dimension(format!("out_proj is {:?}, expected [{c}, {c}]", self.out_proj.shape())));
        }
        Ok(())
    }

    /// `(name, tensor)` in a fixed order, e.g. `lidar.q`.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(15);
        for (branch, p) in [("lidar", &self.lidar), ("image", &self.image)] {
            for (name, t) in BRANCH_FIELDS.iter().zip(p.fields()) {
                out.push((format!("{branch}.{name}"), t));
            }
        }
        out.push(("out_proj".to_string(), &self.out_proj));
        out
    }

    /// Writes one tensor file per weight plus a manifest mapping names to files.
    pub fn save_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut weights = BTreeMap::new();
        for (name, t) in self.named() {
            let file = format!("{name}.bflt");
            save_tensor(dir.join(&file), t)?;
            weights.insert(name, file);
        }
        let manifest = Manifest { config: self.config, weights };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join(MANIFEST_NAME), text)?;
        Ok(())
    }

    pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let load = |name: &str| -> Result<Tensor<T>> {
            let file = manifest
                .weights
                .get(name)
                .ok_or_else(|| Error::Config(format!("manifest lists no weight named {name}")))?;
            load_tensor_as(dir.join(file))
        };
        let params = Self {
            config: manifest.config,
            lidar: BranchParams::from_fields(|f| load(&format!("lidar.{f}")))?,
            image: BranchParams::from_fields(|f| load(&format!("image.{f}")))?,
            out_proj: load("out_proj")?,
        };
        params.validate()?;
        Ok(params)
    }
}
