//! Aligned lidar/image augmentation: ground-truth pasting, depth-ordered patch compositing,
//! and scene or instance rigid transforms.

mod cutmix;
mod gt_sample;
mod scene;
mod transform;

pub use cutmix::{cutmix_composite, VisibilityMask};
pub use gt_sample::{
    gt_sample, load_bank, points_tensor, save_bank, tensor_points, BankEntry, BANK_MANIFEST, MAX_PLACEMENT_ATTEMPTS,
};
pub use scene::{DepthPatch, PixelRect, SceneSample};
pub use transform::{global_augment, instance_rotation, GlobalAug, ROTATION_LIMIT, SCALE_RANGE};
