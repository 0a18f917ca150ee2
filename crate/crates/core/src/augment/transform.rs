use std::f64::consts::FRAC_PI_4;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D};
use crate::tensor::seeded_rng;

use super::scene::SceneSample;

pub const SCALE_RANGE: (f64, f64) = (0.95, 1.05);
pub const ROTATION_LIMIT: f64 = FRAC_PI_4;

/// Scene-wide similarity transform, applied as flip, then scale, then rotation about +z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalAug {
    /// Mirror across the x axis (`y → −y`).
    pub flip_x: bool,
    pub scale: f64,
    pub rotation: f64,
}

impl Default for GlobalAug {
    fn default() -> Self {
        Self { flip_x: false, scale: 1.0, rotation: 0.0 }
    }
}

impl GlobalAug {
    pub fn validate(&self) -> Result<()> {
        if !(SCALE_RANGE.0..=SCALE_RANGE.1).contains(&self.scale) {
            return Err(Error::Validation(format!("scale {} outside [0.95, 1.05]", self.scale)));
        }
        if !(-ROTATION_LIMIT..=ROTATION_LIMIT).contains(&self.rotation) {
            return Err(Error::Validation(format!("rotation {} outside [-π/4, π/4]", self.rotation)));
        }
        Ok(())
    }

    /// Fair-coin flip, uniform scale and rotation over the allowed ranges.
    pub fn sample(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        Self {
            flip_x: rng.random_bool(0.5),
            scale: rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            rotation: rng.random_range(-ROTATION_LIMIT..=ROTATION_LIMIT),
        }
    }

    fn point(&self, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
        let y = if self.flip_x { -y } else { y };
        let (x, y, z) = (x * self.scale, y * self.scale, z * self.scale);
        let (s, c) = self.rotation.sin_cos();
        (x * c - y * s, x * s + y * c, z)
    }

    fn bbox(&self, b: &Box3D) -> Box3D {
        let (cx, cy, cz) = self.point(b.cx, b.cy, b.cz);
        let yaw = if self.flip_x { -b.yaw } else { b.yaw };
        Box3D {
            cx,
            cy,
            cz,
            l: b.l * self.scale,
            w: b.w * self.scale,
            h: b.h * self.scale,
            yaw: normalize_angle(yaw + self.rotation),
            class_id: b.class_id,
        }
    }
}

/// Applies `aug` to every point and box. The image side is left untouched.
pub fn global_augment(scene: &SceneSample, aug: &GlobalAug) -> Result<SceneSample> {
    aug.validate()?;
    let mut out = scene.clone();
    for p in &mut out.points {
        (p.x, p.y, p.z) = aug.point(p.x, p.y, p.z);
    }
    for b in &mut out.boxes {
        *b = aug.bbox(b);
    }
    Ok(out)
}

/// Turns box `index` and the points inside it by `dtheta` about the box center.
pub fn instance_rotation(scene: &SceneSample, index: usize, dtheta: f64) -> Result<SceneSample> {
    let b = *scene
        .boxes
        .get(index)
        .ok_or_else(|| Error::Validation(format!("box index {index} out of range for {} boxes", scene.boxes.len())))?;
    let mut out = scene.clone();
    let (s, c) = dtheta.sin_cos();
    for p in out.points.iter_mut().filter(|p| b.contains(p.x, p.y, p.z)) {
        let (dx, dy) = (p.x - b.cx, p.y - b.cy);
        p.x = b.cx + dx * c - dy * s;
        p.y = b.cy + dx * s + dy * c;
    }
    out.boxes[index].yaw = normalize_angle(b.yaw + dtheta);
    Ok(out)
}
