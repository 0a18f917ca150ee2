use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{box_to_anchor, crop_backward, crop_instance, AnchorBev, BevGridSpec, Box3D};
use crate::tensor::{adaptive_avg_pool, adaptive_avg_pool_backward, Tensor};

use super::loss::{icd_loss_grad, Denominator, InstancePairBatch, Temperature};

/// One scene's contribution to a distillation batch.
#[derive(Clone, Copy, Debug)]
pub struct IcdScene<'a> {
    pub teacher: &'a Tensor<f64>,
    pub student: &'a Tensor<f64>,
    pub boxes: &'a [Box3D],
}

#[derive(Clone, Debug)]
pub struct IcdOutcome {
    pub loss: f64,
    pub similarity: Tensor<f64>,
    /// `dL/dBEV_student`, one map per scene.
    pub student_grads: Vec<Tensor<f64>>,
    pub d_rho: f64,
    pub anchors: Vec<Vec<AnchorBev>>,
}

impl IcdOutcome {
    pub fn instances(&self) -> usize {
        self.similarity.shape()[0]
    }
}

/// Anchors of the boxes that touch the grid; boxes entirely outside are skipped.
pub fn scene_anchors(boxes: &[Box3D], grid: &BevGridSpec) -> Vec<AnchorBev> {
    boxes.iter().filter_map(|b| box_to_anchor(b, grid).ok()).collect()
}

/// Crops each anchor, pools it to `S×S`, and flattens to a row of length `S·S·C`.
pub fn instance_embeddings(bev: &Tensor<f64>, anchors: &[AnchorBev], pool_size: usize) -> Result<Tensor<f64>> {
    let (_, _, c) = bev.dims3()?;
    let e = pool_size * pool_size * c;
    let rows: Vec<Vec<f64>> = anchors
        .par_iter()
        .map(|a| Ok(adaptive_avg_pool(&crop_instance(bev, a)?, pool_size)?.into_data()))
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(rows.len() * e);
    rows.into_iter().for_each(|r| data.extend(r));
    Tensor::new(&[anchors.len().max(1), e], if anchors.is_empty() { vec![0.0; e] } else { data })
}

/// Embedding length for pooled crops.
pub fn embedding_len(pool_size: usize, channels: usize) -> usize {
    pool_size * pool_size * channels
}

/// Boxes → anchors → crops → pooled embeddings → contrastive loss, over a batch of scenes.
///
/// Instances from all scenes share one similarity matrix. Gradients flow to the student maps only.
pub fn icd_pipeline_batch(
    scenes: &[IcdScene<'_>],
    grid: &BevGridSpec,
    pool_size: usize,
    temp: Temperature,
    mode: Denominator,
) -> Result<IcdOutcome> {
    if pool_size == 0 {
        return Err(Error::Validation("pool size must be ≥ 1".into()));
    }
    let shape = grid.shape();
    for s in scenes {
        if s.teacher.shape() != shape || s.student.shape() != shape {
            return Err(Error::Dimension(format!(
                "teacher {:?} / student {:?} must both match grid {shape:?}",
                s.teacher.shape(),
                s.student.shape()
            )));
        }
    }
    let anchors: Vec<Vec<AnchorBev>> = scenes.iter().map(|s| scene_anchors(s.boxes, grid)).collect();
    let total: usize = anchors.iter().map(Vec::len).sum();
    match total {
        0 => return Err(Error::EmptyInstances),
        1 => return Err(Error::InsufficientNegatives(1)),
        _ => {}
    }
    let e = embedding_len(pool_size, grid.channels);
    let mut teacher_rows = Vec::with_capacity(total * e);
    let mut student_rows = Vec::with_capacity(total * e);
    for (s, a) in scenes.iter().zip(&anchors) {
        if a.is_empty() {
            continue;
        }
        teacher_rows.extend_from_slice(instance_embeddings(s.teacher, a, pool_size)?.data());
        student_rows.extend_from_slice(instance_embeddings(s.student, a, pool_size)?.data());
    }
    let batch = InstancePairBatch::new(Tensor::new(&[total, e], teacher_rows)?, Tensor::new(&[total, e], student_rows)?)?;
    let grads = icd_loss_grad(&batch, temp, mode)?;

    let mut student_grads = Vec::with_capacity(scenes.len());
    let mut row = 0;
    for a in &anchors {
        let mut g = Tensor::zeros(&shape);
        for anchor in a {
            let g_pool = Tensor::new(&[pool_size, pool_size, grid.channels], grads.d_student.row(row).to_vec())?;
            let g_crop = adaptive_avg_pool_backward(&g_pool, anchor.height(), anchor.width())?;
            crop_backward(&mut g, anchor, &g_crop)?;
            row += 1;
        }
        student_grads.push(g);
    }
    Ok(IcdOutcome { loss: grads.loss, similarity: grads.similarity, student_grads, d_rho: grads.d_rho, anchors })
}

/// Single-scene form of [`icd_pipeline_batch`].
pub fn icd_pipeline(
    teacher: &Tensor<f64>,
    student: &Tensor<f64>,
    boxes: &[Box3D],
    grid: &BevGridSpec,
    pool_size: usize,
    temp: Temperature,
    mode: Denominator,
) -> Result<IcdOutcome> {
    icd_pipeline_batch(&[IcdScene { teacher, student, boxes }], grid, pool_size, temp, mode)
}
