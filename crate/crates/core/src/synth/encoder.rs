use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::SceneSample;
use crate::error::{Error, Result};
use crate::geometry::{bev_pool_points, lift_splat, lift_splat_backward, AnchorBev, BevGridSpec, LidarPoint, PoolMode};
use crate::tensor::{matmul, normal_tensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    TeacherFrozen,
    StudentTrainable,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::TeacherFrozen => "teacher_frozen",
            Self::StudentTrainable => "student_trainable",
        }
    }
}

/// Per-point or per-pixel linear projection `C_in → C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoder {
    kind: EncoderKind,
    weights: Tensor<f64>,
}

impl ToyEncoder {
    pub fn new(kind: EncoderKind, weights: Tensor<f64>) -> Result<Self> {
        weights.dims2()?;
        if !weights.all_finite() {
            return Err(Error::NonFinite("encoder weights".into()));
        }
        Ok(Self { kind, weights })
    }

    pub fn random<R: Rng + ?Sized>(kind: EncoderKind, c_in: usize, c: usize, std: f64, rng: &mut R) -> Self {
        Self { kind, weights: normal_tensor(&[c_in, c], std, rng) }
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn weights(&self) -> &Tensor<f64> {
        &self.weights
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[1]
    }

    fn require(&self, kind: EncoderKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::KindMismatch { expected: kind.name(), got: self.kind.name() });
        }
        Ok(())
    }

    /// `W ← W + delta`. Frozen encoders refuse.
    pub fn update(&mut self, delta: &Tensor<f64>) -> Result<()> {
        self.require(EncoderKind::StudentTrainable)?;
        self.weights.add_assign(delta)
    }

    pub fn project(&self, features: &[f64]) -> Vec<f64> {
        let c = self.c_out();
        let mut out = vec![0.0; c];
        for (&f, w) in features.iter().zip(self.weights.data().chunks_exact(c)) {
            out.iter_mut().zip(w).for_each(|(o, &wv)| *o += f * wv);
        }
        out
    }
}

fn check_channels(enc: &ToyEncoder, c_in: usize, grid: &BevGridSpec) -> Result<()> {
    if enc.c_in() != c_in || enc.c_out() != grid.channels {
        return Err(Error::Dimension(format!(
            "encoder {:?} cannot map {c_in} channels onto a {}-channel grid",
            enc.weights.shape(),
            grid.channels
        )));
    }
    Ok(())
}

/// Projects every point through the frozen weights, then mean-pools into the grid.
pub fn teacher_encode(scene: &SceneSample, enc: &ToyEncoder, grid: &BevGridSpec) -> Result<Tensor<f64>> {
    enc.require(EncoderKind::TeacherFrozen)?;
    let Some(first) = scene.points.first() else { return Ok(Tensor::zeros(&grid.shape())) };
    check_channels(enc, first.feature.len(), grid)?;
    let projected: Vec<LidarPoint> =
        scene.points.iter().map(|p| LidarPoint { x: p.x, y: p.y, z: p.z, feature: enc.project(&p.feature) }).collect();
    Ok(bev_pool_points(&projected, grid, PoolMode::Mean)?.bev)
}

/// Teacher-style encoding without the kind check, for self-distillation where both sides share weights.
pub fn points_encode(scene: &SceneSample, weights: &Tensor<f64>, grid: &BevGridSpec) -> Result<Tensor<f64>> {
    teacher_encode(scene, &ToyEncoder::new(EncoderKind::TeacherFrozen, weights.clone())?, grid)
}

fn project_image(scene: &SceneSample, enc: &ToyEncoder, grid: &BevGridSpec) -> Result<Tensor<f64>> {
    let (h, w, c_in) = scene.image.dims3()?;
    check_channels(enc, c_in, grid)?;
    matmul(&scene.image.clone().reshape(&[h * w, c_in])?, &enc.weights)?.reshape(&[h, w, grid.channels])
}

/// Projects the image strip through the trainable weights and lifts it with the scene's depth distribution.
pub fn student_encode(scene: &SceneSample, enc: &ToyEncoder, grid: &BevGridSpec) -> Result<Tensor<f64>> {
    enc.require(EncoderKind::StudentTrainable)?;
    lift_splat(&project_image(scene, enc, grid)?, &scene.depth, &scene.camera, grid)
}

/// `dL/dW` for the student given `dL/dBEV`: `Fᵀ · lift_splat_backward(dL/dBEV)`.
pub fn student_weight_grad(scene: &SceneSample, grad_bev: &Tensor<f64>, grid: &BevGridSpec) -> Result<Tensor<f64>> {
    let (h, w, c_in) = scene.image.dims3()?;
    let g = lift_splat_backward(grad_bev, &scene.depth, &scene.camera, grid)?;
    let f = scene.image.clone().reshape(&[h * w, c_in])?;
    matmul(&f.transpose()?, &g.reshape(&[h * w, grid.channels])?)
}

/// Image strip lifted into the grid before projection. The projection is linear, so
/// `student_encode(scene, W)` equals `lifted · W` cell by cell and the weight gradient is `liftedᵀ · dL/dBEV`.
///
/// [`LiftedImage::restricted`] limits both to a set of anchors; cells outside them read as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedImage {
    /// `(H_b·W_b) × C_in`.
    cells: Tensor<f64>,
    grid: BevGridSpec,
    active: Option<Vec<usize>>,
}

impl LiftedImage {
    pub fn new(scene: &SceneSample, grid: &BevGridSpec) -> Result<Self> {
        let (_, _, c_in) = scene.image.dims3()?;
        let raw = lift_splat(&scene.image, &scene.depth, &scene.camera, &grid.with_channels(c_in))?;
        Ok(Self { cells: raw.reshape(&[grid.height * grid.width, c_in])?, grid: *grid, active: None })
    }

    pub fn restricted(mut self, anchors: &[AnchorBev]) -> Self {
        let w = self.grid.width;
        let mut cells: Vec<usize> =
            anchors.iter().flat_map(|a| (a.min_v..=a.max_v).flat_map(move |v| (a.min_u..=a.max_u).map(move |u| v * w + u))).collect();
        cells.sort_unstable();
        cells.dedup();
        self.active = Some(cells);
        self
    }

    pub fn encode(&self, enc: &ToyEncoder) -> Result<Tensor<f64>> {
        enc.require(EncoderKind::StudentTrainable)?;
        check_channels(enc, self.cells.shape()[1], &self.grid)?;
        let Some(active) = &self.active else {
            return matmul(&self.cells, &enc.weights)?.reshape(&self.grid.shape());
        };
        let mut out = Tensor::zeros(&self.grid.shape());
        let c = self.grid.channels;
        let data = out.data_mut();
        for &cell in active {
            data[cell * c..(cell + 1) * c].copy_from_slice(&enc.project(self.cells.row(cell)));
        }
        Ok(out)
    }

    pub fn weight_grad(&self, grad_bev: &Tensor<f64>) -> Result<Tensor<f64>> {
        if grad_bev.shape() != self.grid.shape() {
            return Err(Error::Dimension(format!("BEV gradient {:?} vs grid {:?}", grad_bev.shape(), self.grid.shape())));
        }
        let (c_in, c) = (self.cells.shape()[1], self.grid.channels);
        let mut out = Tensor::zeros(&[c_in, c]);
        let o = out.data_mut();
        let mut add = |cell: usize| {
            let g = &grad_bev.data()[cell * c..(cell + 1) * c];
            for (i, &f) in self.cells.row(cell).iter().enumerate() {
                if f != 0.0 {
                    o[i * c..(i + 1) * c].iter_mut().zip(g).for_each(|(a, &gv)| *a += f * gv);
                }
            }
        };
        match &self.active {
            Some(active) => active.iter().for_each(|&cell| add(cell)),
            None => (0..self.grid.height * self.grid.width).for_each(add),
        }
        Ok(out)
    }
}
