use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BevGridSpec;

/// Dimension of the latent appearance code behind every object.
pub const LATENT_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    #[serde(skip)]
    pub seed: u64,
    pub objects_min: usize,
    pub objects_max: usize,
    #[serde(skip)]
    pub grid: BevGridSpec,
    pub image_rows: usize,
    pub image_columns: usize,
    pub fov: f64,
    pub depth_bins: usize,
    pub depth_near: f64,
    pub depth_far: f64,
    /// Spread of the per-column depth peak, meters.
    pub depth_sigma: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub classes: usize,
    /// Additive Gaussian noise on every point and pixel feature.
    pub feature_noise: f64,
    /// Spread of an instance's latent code around its class signature.
    pub instance_spread: f64,
    pub point_jitter: f64,
    pub points_per_object: usize,
    pub background_points: usize,
    pub teacher_channels: usize,
    pub student_channels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            objects_min: 4,
            objects_max: 4,
            grid: BevGridSpec::default(),
            image_rows: 1,
            image_columns: 1024,
            fov: FRAC_PI_2,
            depth_bins: 600,
            depth_near: 0.5,
            depth_far: 60.5,
            depth_sigma: 0.2,
            range_min: 8.0,
            range_max: 44.0,
            classes: 3,
            feature_noise: 0.1,
            instance_spread: 1.0,
            point_jitter: 0.05,
            points_per_object: 96,
            background_points: 256,
            teacher_channels: 8,
            student_channels: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: String| Err(Error::Validation(m));
        if self.objects_min > self.objects_max {
            return bad(format!("object range {}..={} is empty", self.objects_min, self.objects_max));
        }
        if !(self.range_min > 0.0 && self.range_min < self.range_max) {
            return bad(format!("range {}..{} is empty", self.range_min, self.range_max));
        }
        if !(self.depth_near >= 0.0 && self.depth_near < self.depth_far) || self.depth_bins == 0 {
            return bad("depth bins must cover a non-empty interval".into());
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return bad(format!("fov {} must lie in (0, π)", self.fov));
        }
        if self.image_rows == 0 || self.image_columns == 0 || self.classes == 0 {
            return bad("image extents and class count must be ≥ 1".into());
        }
        if self.teacher_channels == 0 || self.student_channels == 0 {
            return bad("encoder input channels must be ≥ 1".into());
        }
        for (name, v) in [
            ("feature_noise", self.feature_noise),
            ("instance_spread", self.instance_spread),
            ("point_jitter", self.point_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be a finite non-negative number"));
            }
        }
        if !(self.depth_sigma > 0.0) {
            return bad("depth_sigma must be positive".into());
        }
        Ok(())
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        crate::geometry::DepthDistribution::uniform_edges(self.depth_near, self.depth_far, self.depth_bins)
    }
}
