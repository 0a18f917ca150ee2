use crate::error::Result;
use crate::icd::embedding_len;

use super::config::RunConfig;
use super::distill::{optimizer_label, run_distill};
use super::report::{EnvStamp, RunReport};

pub const ABLATE_COLUMNS: [&str; 6] =
    ["pool_size", "embedding_len", "final_loss", "final_tau", "final_mean_pos_sim", "final_retrieval_acc"];

/// Runs the distillation loop once per crop side in `ablate.pool_sizes`, one labeled row each.
///
/// Only the pooled crop side changes between runs; scenes, encoders and optimizer are shared.
pub fn cmd_ablate_pool(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = RunReport::new("ablate-pool", EnvStamp::new("f64", cfg.seed, &optimizer_label(cfg)), &ABLATE_COLUMNS);
    for &s in &cfg.ablate.pool_sizes {
        let mut run = cfg.clone();
        run.icd.pool_size = s;
        let r = run_distill(&run)?.report;
        let get = |k: &str| r.get(k).expect("distill report carries final metrics");
        report.push_labeled(
            &format!("S{s}"),
            vec![
                s as f64,
                embedding_len(s, cfg.grid.channels) as f64,
                get("final_loss"),
                get("final_tau"),
                get("final_mean_pos_sim"),
                get("final_retrieval_acc"),
            ],
        )?;
    }
    report.set("runs", cfg.ablate.pool_sizes.len() as f64);
    report.set("steps", cfg.optim.steps as f64);
    report.notes.push("mechanism comparison only; no detection accuracy is measured".into());
    report.validate()?;
    Ok(report)
}
