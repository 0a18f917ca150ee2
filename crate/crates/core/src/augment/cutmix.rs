use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::scene::DepthPatch;

/// Per-pixel id of the instance left visible, row-major over the canvas.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMask {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<Option<u32>>,
}

impl VisibilityMask {
    pub fn get(&self, r: usize, c: usize) -> Option<u32> {
        self.ids[r * self.width + c]
    }
}

/// Paints patches far to near so each pixel shows its nearest covering patch.
///
/// Equal depths put the higher `instance_id` on top, so the result does not depend on list order.
pub fn cutmix_composite(canvas: &Tensor<f64>, patches: &[DepthPatch]) -> Result<(Tensor<f64>, VisibilityMask)> {
    let (h, w, c) = canvas.dims3()?;
    for p in patches {
        p.validate()?;
        let pc = p.pixels.shape()[2];
        if pc != c {
            return Err(Error::Dimension(format!("patch {} has {pc} channels, canvas has {c}", p.instance_id)));
        }
    }
    let mut order: Vec<&DepthPatch> = patches.iter().collect();
    order.sort_by(|a, b| b.depth.total_cmp(&a.depth).then(a.instance_id.cmp(&b.instance_id)));

    let mut out = canvas.clone();
    let mut ids = vec![None; h * w];
    for p in order {
        let Some((rows, cols)) = p.rect.clip(h, w) else { continue };
        for r in rows {
            let pr = (r as i64 - p.rect.top) as usize;
            for col in cols.clone() {
                let pcol = (col as i64 - p.rect.left) as usize;
                out.row_mut(r * w + col).copy_from_slice(p.pixels.row(pr * p.rect.cols + pcol));
                ids[r * w + col] = Some(p.instance_id);
            }
        }
    }
    Ok((out, VisibilityMask { height: h, width: w, ids }))
}
