use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric BEV grid. Cell `(u, v)` covers
/// `[origin_x + u·cell, origin_x + (u+1)·cell) × [origin_y + v·cell, origin_y + (v+1)·cell)`;
/// feature maps are stored as `height × width × channels`, row = `v`, column = `u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BevGridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for BevGridSpec {
    fn default() -> Self {
        Self { origin_x: 0.0, origin_y: -32.0, cell_size: 0.25, height: 256, width: 256, channels: 8 }
    }
}

impl BevGridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Validation(format!("cell size {} must be positive", self.cell_size)));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Validation("grid extents and channels must be ≥ 1".into()));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(Error::Validation("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    /// Unclamped cell coordinates `(u, v)` of a world point.
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin_x) / self.cell_size).floor() as i64,
            ((y - self.origin_y) / self.cell_size).floor() as i64,
        )
    }

    /// Cell `(u, v)` if the point lies inside the grid.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        let (u, v) = self.cell_of(x, y);
        (u >= 0 && v >= 0 && (u as usize) < self.width && (v as usize) < self.height)
            .then_some((u as usize, v as usize))
    }

    pub fn extent_x(&self) -> (f64, f64) {
        (self.origin_x, self.origin_x + self.width as f64 * self.cell_size)
    }

    pub fn extent_y(&self) -> (f64, f64) {
        (self.origin_y, self.origin_y + self.height as f64 * self.cell_size)
    }

    pub fn cell_center(&self, u: usize, v: usize) -> (f64, f64) {
        (
            self.origin_x + (u as f64 + 0.5) * self.cell_size,
            self.origin_y + (v as f64 + 0.5) * self.cell_size,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_points_to_cells() {
        let g = BevGridSpec { origin_x: 0.0, origin_y: 0.0, cell_size: 0.5, height: 4, width: 6, channels: 1 };
        assert_eq!(g.locate(0.0, 0.0), Some((0, 0)));
        assert_eq!(g.locate(2.9, 1.1), Some((5, 2)));
        assert_eq!(g.locate(3.0, 0.0), None);
        assert_eq!(g.locate(-0.01, 0.0), None);
        assert_eq!(g.locate(f64::NAN, 0.0), None);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut g = BevGridSpec::default();
        g.cell_size = 0.0;
        assert!(g.validate().is_err());
        let mut g = BevGridSpec::default();
        g.channels = 0;
        assert!(g.validate().is_err());
        assert!(BevGridSpec::default().validate().is_ok());
    }
}
