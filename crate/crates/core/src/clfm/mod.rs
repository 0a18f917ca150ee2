//! Bidirectional kernelized cross-attention fusion of lidar and image BEV maps.
//!
//! Queries and keys pass through a positive feature map and rotary encoding, so attention
//! factorizes as `Q·(Kᵀ V)` and costs `O(L·C·d_h)` instead of `O(L²·C)`. A quadratic
//! reference computes the same quantity in the left-associated order.

mod attention;
mod baselines;
mod bench;
mod forward;
mod params;
mod rope;

pub use attention::{
    kernelize, linear_cross_attention, quadratic_oracle, quadratic_tiled, AttentionSpec, FeatureMap, ScaleConvention,
    QUADRATIC_GUARD,
};
pub use baselines::{fuse_baseline, softmax_attention, time_fusion_schemes, BaselineParams, FusionScheme, SchemeTiming};
pub use bench::{clfm_bench, fit_loglog_slope, BenchConfig, BenchReport, BenchRow};
pub use forward::{clfm_forward, clfm_forward_trace, clfm_forward_with, qkv_project, shortcut, AttentionPath, ClfmTrace, Qkv};
pub use params::{BranchParams, ClfmConfig, ClfmParams, ConvMode, INIT_STD, MANIFEST_NAME};
pub use rope::{RopeMode, RopeTable, ROPE_BASE};
