use crate::error::{Error, Result};
use crate::geometry::{box_to_anchor, BevGridSpec, Box3D, DepthDistribution, LidarPoint, RowCamera};
use crate::tensor::Tensor;

/// Top-left corner of a patch on the image canvas; may start off-canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub top: i64,
    pub left: i64,
    pub rows: usize,
    pub cols: usize,
}

impl PixelRect {
    /// Intersection with a `height × width` canvas as row and column ranges.
    pub fn clip(&self, height: usize, width: usize) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let r0 = self.top.max(0);
        let c0 = self.left.max(0);
        let r1 = (self.top + self.rows as i64).min(height as i64);
        let c1 = (self.left + self.cols as i64).min(width as i64);
        (r0 < r1 && c0 < c1).then(|| (r0 as usize..r1 as usize, c0 as usize..c1 as usize))
    }
}

/// 2D instance appearance carried with one representative depth.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthPatch {
    pub rect: PixelRect,
    pub depth: f64,
    /// `rows × cols × C`.
    pub pixels: Tensor<f64>,
    pub instance_id: u32,
}

impl DepthPatch {
    pub fn new(top: i64, left: i64, depth: f64, pixels: Tensor<f64>, instance_id: u32) -> Result<Self> {
        let (rows, cols, _) = pixels.dims3()?;
        let p = Self { rect: PixelRect { top, left, rows, cols }, depth, pixels, instance_id };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth > 0.0) || !self.depth.is_finite() {
            return Err(Error::Validation(format!("patch {} has non-positive depth {}", self.instance_id, self.depth)));
        }
        let (rows, cols, _) = self.pixels.dims3()?;
        if (rows, cols) != (self.rect.rows, self.rect.cols) {
            return Err(Error::Dimension(format!("patch {} pixels do not match its rect", self.instance_id)));
        }
        Ok(())
    }
}

/// One multimodal training frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub points: Vec<LidarPoint>,
    /// `H×W×C_img` image features.
    pub image: Tensor<f64>,
    pub depth: DepthDistribution,
    pub camera: RowCamera,
    pub boxes: Vec<Box3D>,
    /// Instance patches waiting to be composited onto `image`.
    pub patches: Vec<DepthPatch>,
}

impl SceneSample {
    /// Every box must reach the grid.
    pub fn validate(&self, grid: &BevGridSpec) -> Result<()> {
        for (i, b) in self.boxes.iter().enumerate() {
            box_to_anchor(b, grid).map_err(|_| Error::Validation(format!("box {i} lies outside the grid")))?;
        }
        let (h, w, _) = self.image.dims3()?;
        let ds = self.depth.probs().shape();
        if ds[0] != h || ds[1] != w || self.camera.columns != w {
            return Err(Error::Dimension(format!("image {:?}, depth {ds:?} and camera disagree", self.image.shape())));
        }
        Ok(())
    }
}
