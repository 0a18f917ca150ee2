use std::path::{Path, PathBuf};

use crate::clfm::{clfm_forward_with, AttentionPath, ClfmParams};
use crate::error::{Error, Result};
use crate::tensor::{load_tensor, save_tensor, seeded_rng, AnyTensor, DType, Scalar, Tensor};

use super::config::RunConfig;
use super::report::{EnvStamp, RunReport};

pub const FUSED_FILE: &str = "fused.bflt";

fn params<T: Scalar>(cfg: &RunConfig) -> Result<ClfmParams<T>> {
    let p = if cfg.fuse.params.as_os_str().is_empty() {
        ClfmParams::init(cfg.clfm, &mut seeded_rng(cfg.seed))?
    } else {
        ClfmParams::load_bundle(&cfg.fuse.params)?
    };
    p.validate()?;
    Ok(p)
}

fn fuse_typed<T: Scalar>(cfg: &RunConfig, x: Tensor<T>, y: Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension(format!("lidar map {:?} and image map {:?} differ", x.shape(), y.shape())));
    }
    let p = params::<T>(cfg)?;
    let path = if cfg.fuse.oracle { AttentionPath::Quadratic } else { AttentionPath::Linear };
    clfm_forward_with(&x, &y, &p, path)
}

/// Fuses two `H×W×C` BEV tensor files and writes the result to `<out>/fused.bflt`.
///
/// Without a params bundle the weights are drawn from the run seed.
pub fn cmd_fuse(cfg: &RunConfig, out: &Path) -> Result<(RunReport, PathBuf)> {
    cfg.validate()?;
    let f = &cfg.fuse;
    if f.lidar.as_os_str().is_empty() || f.image.as_os_str().is_empty() {
        return Err(Error::Config("fuse.lidar and fuse.image must name tensor files".into()));
    }
    let (x, y) = (load_tensor(&f.lidar)?, load_tensor(&f.image)?);
    let dest = out.join(FUSED_FILE);
    std::fs::create_dir_all(out)?;
    let (shape, dtype, max_abs) = match (x, y) {
        (AnyTensor::F32(x), AnyTensor::F32(y)) => {
            let o = fuse_typed(cfg, x, y)?;
            save_tensor(&dest, &o)?;
            (o.shape().to_vec(), DType::F32, o.max_abs() as f64)
        }
        (AnyTensor::F64(x), AnyTensor::F64(y)) => {
            let o = fuse_typed(cfg, x, y)?;
            save_tensor(&dest, &o)?;
            (o.shape().to_vec(), DType::F64, o.max_abs())
        }
        (x, y) => {
            return Err(Error::Format(format!("input dtypes differ: {} and {}", x.dtype().name(), y.dtype().name())))
        }
    };
    let mut report = RunReport::new("fuse", EnvStamp::new(dtype.name(), cfg.seed, "none"), &["height", "width", "channels"]);
    report.push_row(shape.iter().map(|&d| d as f64).collect())?;
    report.set("max_abs", max_abs);
    report.set("oracle", if f.oracle { 1.0 } else { 0.0 });
    report.notes.push(format!("output: {}", dest.display()));
    report.validate()?;
    Ok((report, dest))
}
