use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, ConvPadding, Scalar, Tensor};

use super::BevGridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub feature: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    #[default]
    Mean,
    Max,
}

/// Result of scattering points into a grid.
#[derive(Clone, Debug)]
pub struct PooledBev {
    pub bev: Tensor<f64>,
    /// Points that fell outside the grid.
    pub dropped: usize,
}

/// Per-cell mean or max of the features of the points it contains; empty cells stay zero.
pub fn bev_pool_points(points: &[LidarPoint], grid: &BevGridSpec, mode: PoolMode) -> Result<PooledBev> {
    grid.validate()?;
    let c = grid.channels;
    let cells = grid.height * grid.width;
    let mut acc = vec![0.0f64; cells * c];
    let mut counts = vec![0usize; cells];
    let mut dropped = 0;
    for (i, p) in points.iter().enumerate() {
        if p.feature.len() != c {
            return Err(Error::Dimension(format!("point {i} has {} channels, grid has {c}", p.feature.len())));
        }
        let Some((u, v)) = grid.locate(p.x, p.y) else {
            dropped += 1;
            continue;
        };
        let cell = v * grid.width + u;
        let slot = &mut acc[cell * c..(cell + 1) * c];
        if counts[cell] == 0 {
            slot.copy_from_slice(&p.feature);
        } else {
            for (a, &f) in slot.iter_mut().zip(&p.feature) {
                *a = match mode {
                    PoolMode::Mean => *a + f,
                    PoolMode::Max => a.max(f),
                };
            }
        }
        counts[cell] += 1;
    }
    if mode == PoolMode::Mean {
        for (cell, &n) in counts.iter().enumerate() {
            if n > 1 {
                acc[cell * c..(cell + 1) * c].iter_mut().for_each(|a| *a /= n as f64);
            }
        }
    }
    Ok(PooledBev { bev: Tensor::new(&grid.shape(), acc)?, dropped })
}

/// Gradient of mean pooling with respect to each point's feature (`N×C`); dropped points get zero.
pub fn bev_pool_mean_backward(points: &[LidarPoint], grid: &BevGridSpec, grad_bev: &Tensor<f64>) -> Result<Tensor<f64>> {
    if grad_bev.shape() != grid.shape() {
        return Err(Error::Dimension(format!("BEV gradient {:?} vs grid {:?}", grad_bev.shape(), grid.shape())));
    }
    let c = grid.channels;
    let mut counts = vec![0usize; grid.height * grid.width];
    let cells: Vec<Option<usize>> =
        points.iter().map(|p| grid.locate(p.x, p.y).map(|(u, v)| v * grid.width + u)).collect();
    for cell in cells.iter().flatten() {
        counts[*cell] += 1;
    }
    let mut grad = Tensor::zeros(&[points.len().max(1), c]);
    for (i, cell) in cells.iter().enumerate() {
        if let Some(cell) = *cell {
            let n = counts[cell] as f64;
            for (g, &gb) in grad.row_mut(i).iter_mut().zip(grad_bev.row(cell)) {
                *g = gb / n;
            }
        }
    }
    Ok(grad)
}

/// Max over the height axis of `X×Y×Z×C` voxels followed by a `1×1` projection `proj[C×C_out]`.
pub fn height_compress<T: Scalar>(voxels: &Tensor<T>, proj: &Tensor<T>) -> Result<Tensor<T>> {
    let (x, y, z, c) = match voxels.shape() {
        &[a, b, c, d] => (a, b, c, d),
        other => return Err(Error::Dimension(format!("voxels must be 4-D, got {other:?}"))),
    };
    let (pc, cout) = proj.dims2()?;
    if pc != c {
        return Err(Error::Dimension(format!("projection expects {pc} channels, voxels have {c}")));
    }
    let vd = voxels.data();
    let mut squeezed = Tensor::full(&[x, y, c], T::neg_infinity());
    for i in 0..x * y {
        let out = squeezed.row_mut(i);
        for k in 0..z {
            let src = &vd[(i * z + k) * c..(i * z + k + 1) * c];
            for (o, &v) in out.iter_mut().zip(src) {
                *o = o.max(v);
            }
        }
    }
    let kernel = proj.clone().reshape(&[1, 1, c, cout])?;
    conv2d(&squeezed, &kernel, ConvPadding::Same)
}
