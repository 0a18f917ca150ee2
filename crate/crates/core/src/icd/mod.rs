//! Instance-level contrastive distillation between teacher and student BEV maps.

mod loss;
mod pipeline;

pub use loss::{
    cosine_similarity_matrix, icd_loss, icd_loss_grad, mean_positive_similarity, retrieval_accuracy, Denominator,
    IcdGrads, InstancePairBatch, Temperature, TAU_MAX, TAU_MIN,
};
pub use pipeline::{embedding_len, icd_pipeline, icd_pipeline_batch, instance_embeddings, scene_anchors, IcdOutcome, IcdScene};
