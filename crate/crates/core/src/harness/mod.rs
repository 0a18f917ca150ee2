//! Run configuration, report emission, and the subcommands behind the `bevlab` binary.

mod ablate;
mod bench;
mod config;
mod distill;
mod fuse;
mod gen;
mod gradcheck;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use ablate::{cmd_ablate_pool, ABLATE_COLUMNS};
pub use bench::{cmd_bench, BENCH_COLUMNS, SLOPE_FLOOR, SPEEDUP_LENGTH};
pub use config::{
    AblateConfig, DistillConfig, FuseConfig, GenConfig, GradcheckConfig, IcdConfig, OptimConfig, OutputConfig, RunConfig,
};
pub use distill::{cmd_distill, init_encoders, optimizer_label, run_distill, DistillOutcome, DISTILL_COLUMNS};
pub use fuse::{cmd_fuse, FUSED_FILE};
pub use gen::{cmd_gen, DEPTH_EDGES_FILE, EMPTY, GEN_COLUMNS, GEN_MANIFEST};
pub use gradcheck::{
    central_difference, cmd_gradcheck, relative_error, run_gradchecks, GradCheck, GRADCHECK_COLUMNS,
};
pub use report::{format_number, EnvStamp, RunReport, REPORT_FORMAT_VERSION};

/// Writes the report files and the fully resolved config as `<command>.config.toml` beside them.
pub fn write_outputs(report: &RunReport, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = report.write(dir, cfg.output.json)?;
    let p = dir.join(format!("{}.config.toml", report.command));
    fs::write(&p, cfg.to_toml()?)?;
    written.push(p);
    Ok(written)
}

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "BEVLAB_THREADS";

/// Builds the global worker pool, capped by `BEVLAB_THREADS` when set. Returns the thread count in use.
pub fn init_thread_pool() -> Result<usize> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(rayon::current_num_threads()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(rayon::current_num_threads())
}
