//! Procedural toy scenes and the linear toy encoders that turn them into teacher and student BEV maps.

mod config;
mod encoder;
mod scene;

pub use config::{SynthConfig, LATENT_DIM};
pub use encoder::{
    points_encode, student_encode, LiftedImage, student_weight_grad, teacher_encode, EncoderKind, ToyEncoder,
};
pub use scene::{generate_scene, object_bank, ray_hit, scene_camera, SynthWorld, DEPTH_WINDOW, PLACEMENT_TRIES};
