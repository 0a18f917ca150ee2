use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{normal_tensor, seeded_rng, Activation, Tensor};

use super::attention::{linear_cross_attention, quadratic_tiled, AttentionSpec};

/// Each timed sample repeats the call until at least this much wall time has passed.
const MIN_SAMPLE: Duration = Duration::from_millis(10);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub channels: usize,
    pub heads: usize,
    pub trials: usize,
    /// Longest sequence timed on the quadratic path.
    pub quadratic_max: usize,
    pub parallel_trials: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![1024, 2048, 4096, 8192, 16384, 65536],
            channels: 16,
            heads: 4,
            trials: 3,
            quadratic_max: 16384,
            parallel_trials: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub length: usize,
    /// Median nanoseconds per call.
    pub linear_ns: f64,
    pub quadratic_ns: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn linear_slope(&self) -> Option<f64> {
        self.linear_slope_over(&self.rows.iter().map(|r| r.length).collect::<Vec<_>>())
    }

    /// Log-log slope restricted to the given lengths.
    pub fn linear_slope_over(&self, lengths: &[usize]) -> Option<f64> {
        fit_loglog_slope(
            &self.rows.iter().filter(|r| lengths.contains(&r.length)).map(|r| (r.length as f64, r.linear_ns)).collect::<Vec<_>>(),
        )
    }

    pub fn quadratic_slope(&self) -> Option<f64> {
        fit_loglog_slope(
            &self.rows.iter().filter_map(|r| r.quadratic_ns.map(|q| (r.length as f64, q))).collect::<Vec<_>>(),
        )
    }

    /// Quadratic over linear time at `length`.
    pub fn speedup_at(&self, length: usize) -> Option<f64> {
        let row = self.rows.iter().find(|r| r.length == length)?;
        Some(row.quadratic_ns? / row.linear_ns)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,linear_ns,quadratic_ns\n");
        for r in &self.rows {
            let quad = r.quadratic_ns.map(|q| format!("{q:.1}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.1},{}", r.length, r.linear_ns, quad);
        }
        out
    }
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two distinct points.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median per-call time over `trials` samples after one warm-up call.
fn time_call(trials: usize, parallel: bool, f: impl Fn() + Sync) -> f64 {
    let start = Instant::now();
    f();
    let warm = start.elapsed().max(Duration::from_nanos(1));
    let reps = (MIN_SAMPLE.as_nanos() / warm.as_nanos()).max(1) as u32;
    let sample = || {
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        t.elapsed().as_nanos() as f64 / reps as f64
    };
    let samples: Vec<f64> =
        if parallel { (0..trials).into_par_iter().map(|_| sample()).collect() } else { (0..trials).map(|_| sample()).collect() };
    median(samples)
}

/// Times both association orders on random kernelized inputs of each length.
pub fn clfm_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.trials < 3 {
        return Err(Error::Validation(format!("benchmark needs at least 3 trials, got {}", cfg.trials)));
    }
    if cfg.lengths.is_empty() || cfg.lengths.contains(&0) {
        return Err(Error::Validation("benchmark lengths must be nonempty and positive".into()));
    }
    let spec = AttentionSpec::new(cfg.heads, 1e-6);
    let mut rows = Vec::with_capacity(cfg.lengths.len());
    for &l in &cfg.lengths {
        let mut rng = seeded_rng(cfg.seed ^ l as u64);
        let positive = |t: Tensor<f32>| t.map(|v| Activation::EluPlusOne.apply(v));
        let q = positive(normal_tensor(&[l, cfg.channels], 1.0, &mut rng));
        let k = positive(normal_tensor(&[l, cfg.channels], 1.0, &mut rng));
        let v: Tensor<f32> = normal_tensor(&[l, cfg.channels], 1.0, &mut rng);
        // Validate shapes once outside the timed region.
        linear_cross_attention(&q, &k, &v, &spec)?;
        let linear_ns = time_call(cfg.trials, cfg.parallel_trials, || {
            std::hint::black_box(linear_cross_attention(&q, &k, &v, &spec).ok());
        });
        let quadratic_ns = (l <= cfg.quadratic_max).then(|| {
            time_call(cfg.trials, cfg.parallel_trials, || {
                std::hint::black_box(quadratic_tiled(&q, &k, &v, &spec).ok());
            })
        });
        rows.push(BenchRow { length: l, linear_ns, quadratic_ns });
    }
    Ok(BenchReport { config: cfg.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_laws() {
        let pts: Vec<(f64, f64)> = [10.0, 100.0, 1000.0].iter().map(|&x| (x, 3.0 * x * x)).collect();
        assert!((fit_loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_loglog_slope(&pts[..1]).is_none());
        assert!(fit_loglog_slope(&[(4.0, 1.0), (4.0, 2.0)]).is_none());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn small_bench_produces_rows_and_csv() {
        let cfg = BenchConfig { lengths: vec![32, 64, 128], channels: 8, heads: 2, quadratic_max: 64, ..Default::default() };
        let report = clfm_bench(&cfg).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows[2].quadratic_ns.is_none());
        assert!(report.speedup_at(64).is_some());
        let csv = report.to_csv();
        assert!(csv.starts_with("length,linear_ns,quadratic_ns\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().ends_with(','));
    }

    #[test]
    fn rejects_too_few_trials() {
        let cfg = BenchConfig { trials: 2, ..Default::default() };
        assert!(matches!(clfm_bench(&cfg), Err(Error::Validation(_))));
    }
}
