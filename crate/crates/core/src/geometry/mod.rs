//! Mapping between metric space and the discrete BEV grid.

mod boxes;
mod crop;
mod grid;
mod lift;
mod pool;

pub use boxes::{
    box_to_anchor, format_boxes, normalize_angle, parse_boxes, read_boxes, write_boxes, AnchorBev, Box3D,
};
pub use crop::{crop_backward, crop_instance};
pub use grid::BevGridSpec;
pub use lift::{lift_splat, lift_splat_backward, DepthDistribution, RowCamera, DEPTH_SUM_TOLERANCE};
pub use pool::{bev_pool_mean_backward, bev_pool_points, height_compress, LidarPoint, PoolMode, PooledBev};
