//! Frustum lifting: each pixel's feature is spread along its camera ray by its
//! depth distribution and scattered into BEV cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::BevGridSpec;

/// Single-row pinhole camera: image columns are azimuth rays in the ground plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowCamera {
    pub x: f64,
    pub y: f64,
    /// Direction of the optical axis, radians from +x.
    pub heading: f64,
    /// Horizontal field of view, radians.
    pub fov: f64,
    pub columns: usize,
}

impl RowCamera {
    /// Azimuth of the ray through the center of column `u`; column 0 is the leftmost (largest azimuth).
    pub fn azimuth(&self, u: usize) -> f64 {
        self.heading + self.fov / 2.0 - (u as f64 + 0.5) * self.fov / self.columns as f64
    }

    pub fn ray_point(&self, u: usize, depth: f64) -> (f64, f64) {
        let (s, c) = self.azimuth(u).sin_cos();
        (self.x + depth * c, self.y + depth * s)
    }

    /// Fractional column hit by the ray toward `(x, y)`, if it is in view.
    pub fn column_of(&self, x: f64, y: f64) -> Option<f64> {
        let az = (y - self.y).atan2(x - self.x);
        let rel = crate::geometry::normalize_angle(az - self.heading);
        let col = (self.fov / 2.0 - rel) / self.fov * self.columns as f64;
        (0.0..self.columns as f64).contains(&col).then_some(col)
    }
}

/// Per-pixel probability vectors over `D` depth bins.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthDistribution {
    probs: Tensor<f64>,
    bin_edges: Vec<f64>,
}

pub const DEPTH_SUM_TOLERANCE: f64 = 1e-5;

impl DepthDistribution {
    /// `probs` is `H×W×D`; `bin_edges` holds `D + 1` increasing depths in meters.
    pub fn new(probs: Tensor<f64>, bin_edges: Vec<f64>) -> Result<Self> {
        let (_, _, d) = probs.dims3()?;
        if bin_edges.len() != d + 1 {
            return Err(Error::Validation(format!("{} bin edges for {d} bins", bin_edges.len())));
        }
        if bin_edges.windows(2).any(|w| !(w[1] > w[0])) || bin_edges[0] < 0.0 {
            return Err(Error::Validation("bin edges must be non-negative and strictly increasing".into()));
        }
        for (i, row) in probs.data().chunks_exact(d).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Validation(format!("pixel {i} has a negative or non-finite probability")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > DEPTH_SUM_TOLERANCE {
                return Err(Error::Validation(format!("pixel {i} depth row sums to {s}")));
            }
        }
        Ok(Self { probs, bin_edges })
    }

    pub fn uniform_edges(near: f64, far: f64, bins: usize) -> Vec<f64> {
        (0..=bins).map(|i| near + (far - near) * i as f64 / bins as f64).collect()
    }

    pub fn probs(&self) -> &Tensor<f64> {
        &self.probs
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    pub fn bin_center(&self, d: usize) -> f64 {
        0.5 * (self.bin_edges[d] + self.bin_edges[d + 1])
    }

    pub fn pixel(&self, r: usize, u: usize) -> &[f64] {
        let w = self.probs.shape()[1];
        self.probs.row(r * w + u)
    }
}

/// Cell index (row-major over `H_b×W_b`) for each `(column, bin)`; `None` when it falls off-grid.
fn splat_targets(camera: &RowCamera, depth: &DepthDistribution, grid: &BevGridSpec) -> Vec<Option<usize>> {
    let bins = depth.bins();
    let mut targets = Vec::with_capacity(camera.columns * bins);
    for u in 0..camera.columns {
        for d in 0..bins {
            let (x, y) = camera.ray_point(u, depth.bin_center(d));
            targets.push(grid.locate(x, y).map(|(cu, cv)| cv * grid.width + cu));
        }
    }
    targets
}

fn check_inputs<T: Scalar>(
    features: &Tensor<T>,
    depth: &DepthDistribution,
    camera: &RowCamera,
    grid: &BevGridSpec,
) -> Result<(usize, usize, usize)> {
    let (h, w, c) = features.dims3()?;
    let ds = depth.probs.shape();
    if ds[0] != h || ds[1] != w {
        return Err(Error::Dimension(format!("depth {ds:?} does not cover features {:?}", features.shape())));
    }
    if camera.columns != w {
        return Err(Error::Dimension(format!("camera has {} columns, image has {w}", camera.columns)));
    }
    if grid.channels != c {
        return Err(Error::Dimension(format!("grid expects {} channels, features have {c}", grid.channels)));
    }
    grid.validate()?;
    Ok((h, w, c))
}

/// `BEV[cell] = Σ_{(pixel, bin) → cell} feature(pixel) · p(pixel, bin)`.
pub fn lift_splat<T: Scalar>(
    features: &Tensor<T>,
    depth: &DepthDistribution,
    camera: &RowCamera,
    grid: &BevGridSpec,
) -> Result<Tensor<T>> {
    let (h, w, c) = check_inputs(features, depth, camera, grid)?;
    let targets = splat_targets(camera, depth, grid);
    let bins = depth.bins();
    let mut bev = Tensor::zeros(&grid.shape());
    let out = bev.data_mut();
    for r in 0..h {
        for u in 0..w {
            let feat = features.row(r * w + u);
            for (d, &p) in depth.pixel(r, u).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                if let Some(cell) = targets[u * bins + d] {
                    let p = T::of(p);
                    for (o, &f) in out[cell * c..(cell + 1) * c].iter_mut().zip(feat) {
                        *o = *o + f * p;
                    }
                }
            }
        }
    }
    Ok(bev)
}

/// Gradient of [`lift_splat`] with respect to the image features.
pub fn lift_splat_backward<T: Scalar>(
    grad_bev: &Tensor<T>,
    depth: &DepthDistribution,
    camera: &RowCamera,
    grid: &BevGridSpec,
) -> Result<Tensor<T>> {
    if grad_bev.shape() != grid.shape() {
        return Err(Error::Dimension(format!("BEV gradient {:?} vs grid {:?}", grad_bev.shape(), grid.shape())));
    }
    let ds = depth.probs.shape();
    let (h, w, c) = (ds[0], ds[1], grid.channels);
    if camera.columns != w {
        return Err(Error::Dimension(format!("camera has {} columns, depth has {w}", camera.columns)));
    }
    let targets = splat_targets(camera, depth, grid);
    let bins = depth.bins();
    let g = grad_bev.data();
    let mut grad = Tensor::zeros(&[h, w, c]);
    for r in 0..h {
        for u in 0..w {
            let gp = grad.row_mut(r * w + u);
            for (d, &p) in depth.pixel(r, u).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                if let Some(cell) = targets[u * bins + d] {
                    let p = T::of(p);
                    for (o, &gv) in gp.iter_mut().zip(&g[cell * c..(cell + 1) * c]) {
                        *o = *o + gv * p;
                    }
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{normal_tensor, seeded_rng};
    use rand::Rng;

    fn grid() -> BevGridSpec {
        BevGridSpec { origin_x: 0.0, origin_y: -10.0, cell_size: 0.5, height: 40, width: 40, channels: 2 }
    }

    fn camera(columns: usize) -> RowCamera {
        RowCamera { x: 0.0, y: 0.0, heading: 0.0, fov: 1.2, columns }
    }

    fn random_depth(h: usize, w: usize, edges: Vec<f64>, rng: &mut impl Rng) -> DepthDistribution {
        let d = edges.len() - 1;
        let mut probs = Tensor::from_fn(&[h, w, d], |_| rng.random_range(0.0..1.0));
        for row in probs.data_mut().chunks_exact_mut(d) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        DepthDistribution::new(probs, edges).unwrap()
    }

    #[test]
    fn one_hot_depth_hits_one_cell() {
        let edges = DepthDistribution::uniform_edges(1.0, 9.0, 4);
        let mut probs = Tensor::zeros(&[1, 1, 4]);
        probs.set(&[0, 0, 2], 1.0);
        let depth = DepthDistribution::new(probs, edges).unwrap();
        let feats = Tensor::new(&[1, 1, 2], vec![3.0, -1.5]).unwrap();
        let bev = lift_splat(&feats, &depth, &camera(1), &grid()).unwrap();
        let nonzero: Vec<usize> = (0..40 * 40).filter(|&i| bev.row(i).iter().any(|&v| v != 0.0)).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(bev.row(nonzero[0]), &[3.0, -1.5]);
        // Bin 2 spans 5..7 m, center 6 m straight ahead → cell (12, 20).
        assert_eq!(nonzero[0], 20 * 40 + 12);
    }

    #[test]
    fn mass_is_conserved_in_grid() {
        let mut rng = seeded_rng(3);
        let edges = DepthDistribution::uniform_edges(1.0, 15.0, 10);
        let depth = random_depth(2, 8, edges, &mut rng);
        let feats: Tensor<f64> = normal_tensor(&[2, 8, 2], 1.0, &mut rng);
        let bev = lift_splat(&feats, &depth, &camera(8), &grid()).unwrap();
        for ch in 0..2 {
            let total: f64 = (0..1600).map(|i| bev.row(i)[ch]).sum();
            let want: f64 = (0..16).map(|i| feats.row(i)[ch]).sum();
            assert!((total - want).abs() < 1e-9);
        }
    }

    #[test]
    fn toy_case_matches_brute_force_scatter() {
        let mut rng = seeded_rng(21);
        let edges = vec![2.0, 4.0, 7.0, 12.0, 30.0];
        let depth = random_depth(1, 3, edges.clone(), &mut rng);
        let feats: Tensor<f64> = normal_tensor(&[1, 3, 2], 1.0, &mut rng);
        // Heading offset keeps the middle ray off the y = 0 cell boundary.
        let cam = RowCamera { heading: 0.05, ..camera(3) };
        let g = grid();
        let bev = lift_splat(&feats, &depth, &cam, &g).unwrap();

        let mut want = Tensor::<f64>::zeros(&[40, 40, 2]);
        for u in 0..3 {
            let az = 0.05 + 0.6 - (u as f64 + 0.5) * 0.4;
            for d in 0..4 {
                let r = 0.5 * (edges[d] + edges[d + 1]);
                let (x, y) = (r * az.cos(), r * az.sin());
                let cu = (x / 0.5).floor();
                let cv = ((y + 10.0) / 0.5).floor();
                if cu < 0.0 || cv < 0.0 || cu >= 40.0 || cv >= 40.0 {
                    continue;
                }
                for ch in 0..2 {
                    let idx = [cv as usize, cu as usize, ch];
                    want.set(&idx, want.get(&idx) + feats.get(&[0, u, ch]) * depth.pixel(0, u)[d]);
                }
            }
        }
        assert!(bev.sub(&want).unwrap().max_abs() <= 1e-6);
    }

    #[test]
    fn out_of_grid_bins_are_dropped() {
        let edges = vec![1.0, 3.0, 100.0, 200.0];
        let probs = Tensor::new(&[1, 1, 3], vec![0.25, 0.5, 0.25]).unwrap();
        let depth = DepthDistribution::new(probs, edges).unwrap();
        let feats = Tensor::<f64>::new(&[1, 1, 2], vec![1.0, 1.0]).unwrap();
        let bev = lift_splat(&feats, &depth, &camera(1), &grid()).unwrap();
        assert!((bev.sum() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_depth_is_rejected() {
        let probs = Tensor::new(&[1, 1, 2], vec![0.5, 0.49]).unwrap();
        assert!(matches!(DepthDistribution::new(probs, vec![1.0, 2.0, 3.0]), Err(Error::Validation(_))));
        let probs = Tensor::new(&[1, 1, 2], vec![1.5, -0.5]).unwrap();
        assert!(DepthDistribution::new(probs, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn backward_is_adjoint() {
        let mut rng = seeded_rng(17);
        let depth = random_depth(2, 5, DepthDistribution::uniform_edges(1.0, 25.0, 12), &mut rng);
        let feats: Tensor<f64> = normal_tensor(&[2, 5, 2], 1.0, &mut rng);
        let g: Tensor<f64> = normal_tensor(&[40, 40, 2], 1.0, &mut rng);
        let cam = camera(5);
        let bev = lift_splat(&feats, &depth, &cam, &grid()).unwrap();
        let gf = lift_splat_backward(&g, &depth, &cam, &grid()).unwrap();
        let lhs: f64 = bev.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = feats.data().iter().zip(gf.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn column_of_inverts_azimuth() {
        let cam = camera(64);
        for u in [0usize, 7, 31, 63] {
            let (x, y) = cam.ray_point(u, 10.0);
            let col = cam.column_of(x, y).unwrap();
            assert!((col - (u as f64 + 0.5)).abs() < 1e-9);
        }
        assert!(cam.column_of(-5.0, 0.0).is_none());
    }
}
