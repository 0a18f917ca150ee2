use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::BevGridSpec;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Oriented 3D box; `l` runs along the heading, `w` across it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub class_id: u32,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_id: u32) -> Result<Self> {
        let b = Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            l: size[0],
            w: size[1],
            h: size[2],
            yaw: normalize_angle(yaw),
            class_id,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("box has non-finite fields".into()));
        }
        if !(self.l > 0.0 && self.w > 0.0 && self.h > 0.0) {
            return Err(Error::Validation(format!("box dims must be positive: {} {} {}", self.l, self.w, self.h)));
        }
        Ok(())
    }

    /// Footprint corners in world coordinates, counter-clockwise from front-left.
    pub fn corners_bev(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(dx, dy)| (self.cx + dx * c - dy * s, self.cy + dx * s + dy * c))
    }

    /// Point expressed in the box frame (heading along +x).
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * c + dy * s, -dx * s + dy * c)
    }

    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let (lx, ly) = self.to_local(x, y);
        lx.abs() <= self.l / 2.0 && ly.abs() <= self.w / 2.0 && (z - self.cz).abs() <= self.h / 2.0
    }

    /// Horizontal distance from the world origin to the center.
    pub fn range(&self) -> f64 {
        self.cx.hypot(self.cy)
    }
}

/// Axis-aligned inclusive cell rectangle; `u` indexes columns (x), `v` rows (y).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchorBev {
    pub min_u: usize,
    pub min_v: usize,
    pub max_u: usize,
    pub max_v: usize,
}

impl AnchorBev {
    pub fn full(grid: &BevGridSpec) -> Self {
        Self { min_u: 0, min_v: 0, max_u: grid.width - 1, max_v: grid.height - 1 }
    }

    pub fn height(&self) -> usize {
        self.max_v - self.min_v + 1
    }

    pub fn width(&self) -> usize {
        self.max_u - self.min_u + 1
    }

    pub fn contains_cell(&self, u: usize, v: usize) -> bool {
        (self.min_u..=self.max_u).contains(&u) && (self.min_v..=self.max_v).contains(&v)
    }

    pub fn overlaps(&self, other: &AnchorBev) -> bool {
        self.min_u <= other.max_u && other.min_u <= self.max_u && self.min_v <= other.max_v && other.min_v <= self.max_v
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.min_u <= self.max_u && self.min_v <= self.max_v && self.max_u < width && self.max_v < height
    }
}

/// Axis-aligned cell hull of the yaw-rotated footprint, clamped to the grid.
pub fn box_to_anchor(b: &Box3D, grid: &BevGridSpec) -> Result<AnchorBev> {
    let corners = b.corners_bev();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in corners {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let (u0, v0) = grid.cell_of(xmin, ymin);
    let (u1, v1) = grid.cell_of(xmax, ymax);
    let (w, h) = (grid.width as i64, grid.height as i64);
    if u1 < 0 || v1 < 0 || u0 >= w || v0 >= h {
        return Err(Error::OutOfExtent);
    }
    Ok(AnchorBev {
        min_u: u0.clamp(0, w - 1) as usize,
        min_v: v0.clamp(0, h - 1) as usize,
        max_u: u1.clamp(0, w - 1) as usize,
        max_v: v1.clamp(0, h - 1) as usize,
    })
}

/// Parses `cx cy cz l w h yaw class_id` lines; blank lines and `#` comments are skipped.
pub fn parse_boxes(text: &str) -> Result<Vec<Box3D>> {
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Validation(format!("line {}: expected 8 fields, got {}", lineno + 1, fields.len())));
        }
        let mut nums = [0.0f64; 7];
        for (slot, f) in nums.iter_mut().zip(&fields[..7]) {
            *slot = f.parse().map_err(|e| Error::Validation(format!("line {}: {f:?}: {e}", lineno + 1)))?;
        }
        let class_id = fields[7]
            .parse()
            .map_err(|e| Error::Validation(format!("line {}: class {:?}: {e}", lineno + 1, fields[7])))?;
        boxes.push(Box3D::new([nums[0], nums[1], nums[2]], [nums[3], nums[4], nums[5]], nums[6], class_id)?);
    }
    Ok(boxes)
}

/// One box per line; `{:?}`-style shortest round-trip decimals.
pub fn format_boxes(boxes: &[Box3D]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(out, "{:?} {:?} {:?} {:?} {:?} {:?} {:?} {}", b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw, b.class_id);
    }
    out
}

pub fn read_boxes(path: impl AsRef<Path>) -> Result<Vec<Box3D>> {
    parse_boxes(&fs::read_to_string(path)?)
}

pub fn write_boxes(path: impl AsRef<Path>, boxes: &[Box3D]) -> Result<()> {
    fs::write(path, format_boxes(boxes))?;
    Ok(())
}
