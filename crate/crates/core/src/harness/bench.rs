use crate::clfm::{clfm_bench, BenchConfig, BenchReport};
use crate::error::Result;

use super::config::RunConfig;
use super::report::{EnvStamp, RunReport};

pub const BENCH_COLUMNS: [&str; 4] = ["length", "linear_ns", "quadratic_ns", "quadratic_timed"];

/// Lengths at or above this enter the large-`L` linear slope.
pub const SLOPE_FLOOR: usize = 1024;

/// Speedup is reported at this length when the quadratic path was timed there.
pub const SPEEDUP_LENGTH: usize = 16384;

/// Times the linear and quadratic attention orders. Untimed quadratic cells hold 0 with `quadratic_timed = 0`.
pub fn cmd_bench(cfg: &RunConfig) -> Result<(RunReport, BenchReport)> {
    cfg.validate()?;
    let bench = clfm_bench(&BenchConfig { seed: cfg.seed, ..cfg.bench.clone() })?;
    let mut report = RunReport::new("bench", EnvStamp::new("f32", cfg.seed, "none"), &BENCH_COLUMNS);
    for r in &bench.rows {
        report.push_row(vec![
            r.length as f64,
            r.linear_ns,
            r.quadratic_ns.unwrap_or(0.0),
            if r.quadratic_ns.is_some() { 1.0 } else { 0.0 },
        ])?;
    }
    let large: Vec<usize> = bench.rows.iter().map(|r| r.length).filter(|&l| l >= SLOPE_FLOOR).collect();
    let fits = [
        ("linear_slope", bench.linear_slope()),
        ("linear_slope_large", bench.linear_slope_over(&large)),
        ("quadratic_slope", bench.quadratic_slope()),
        ("speedup_16384", bench.speedup_at(SPEEDUP_LENGTH)),
    ];
    for (key, value) in fits {
        match value {
            Some(v) => report.set(key, v),
            None => report.notes.push(format!("{key}: not enough timed lengths")),
        }
    }
    report.set("channels", cfg.bench.channels as f64);
    report.set("heads", cfg.bench.heads as f64);
    report.set("trials", cfg.bench.trials as f64);
    report.notes.push("wall-clock medians; timings vary between runs".into());
    report.validate()?;
    Ok((report, bench))
}
