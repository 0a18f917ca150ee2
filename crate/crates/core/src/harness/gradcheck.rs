use rand::Rng;

use crate::error::Result;
use crate::icd::{cosine_similarity_matrix, icd_loss, icd_loss_grad, Denominator, InstancePairBatch, Temperature};
use crate::losses::{focal_loss, focal_loss_grad, smooth_l1, smooth_l1_grad, FocalParams};
use crate::tensor::{normal_tensor, seeded_rng, Tensor};

use super::config::RunConfig;
use super::report::{EnvStamp, RunReport};

pub const GRADCHECK_COLUMNS: [&str; 4] = ["cases", "max_rel_err", "tolerance", "pass"];

/// Rows and embedding width of the random contrastive batches.
const BATCH_ROWS: usize = 6;
const BATCH_WIDTH: usize = 12;

/// Smooth-L1 inputs closer than this to the kink at ±1 are redrawn.
const KINK_MARGIN: f64 = 1e-3;

/// `‖a − f‖ / max(‖a‖, ‖f‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, f)| a - f).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Worst relative error of one analytical gradient over a set of cases.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), cases: 0, max_rel_err: 0.0 }
    }

    pub fn record(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.cases += 1;
        self.max_rel_err = self.max_rel_err.max(relative_error(analytic, numeric));
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.cases > 0 && self.max_rel_err <= tolerance
    }
}

fn contrastive_checks(seeds: usize, h: f64, mode: Denominator) -> Result<[GradCheck; 3]> {
    let tag = match mode {
        Denominator::ExcludePositive => "exclude_positive",
        Denominator::IncludePositive => "include_positive",
    };
    let mut checks = [
        GradCheck::new(format!("nt_xent_teacher_{tag}")),
        GradCheck::new(format!("nt_xent_student_{tag}")),
        GradCheck::new(format!("nt_xent_rho_{tag}")),
    ];
    for seed in 0..seeds as u64 {
        let mut rng = seeded_rng(seed);
        let a: Tensor<f64> = normal_tensor(&[BATCH_ROWS, BATCH_WIDTH], 1.0, &mut rng);
        let b: Tensor<f64> = normal_tensor(&[BATCH_ROWS, BATCH_WIDTH], 1.0, &mut rng);
        let temp = Temperature::from_tau(rng.random_range(0.1..2.0));
        let batch = InstancePairBatch::new(a.clone(), b.clone())?;
        let grads = icd_loss_grad(&batch, temp, mode)?;

        let loss_at = |a: &[f64], b: &[f64], temp: Temperature| -> Result<f64> {
            let shape = [BATCH_ROWS, BATCH_WIDTH];
            let batch = InstancePairBatch::new(Tensor::new(&shape, a.to_vec())?, Tensor::new(&shape, b.to_vec())?)?;
            icd_loss(&cosine_similarity_matrix(&batch)?, temp, mode)
        };
        let fd_a = central_difference(a.data(), h, |x| loss_at(x, b.data(), temp))?;
        let fd_b = central_difference(b.data(), h, |x| loss_at(a.data(), x, temp))?;
        let fd_rho = central_difference(&[temp.rho], h, |x| loss_at(a.data(), b.data(), Temperature { rho: x[0] }))?;
        checks[0].record(grads.d_teacher.data(), &fd_a);
        checks[1].record(grads.d_student.data(), &fd_b);
        checks[2].record(&[grads.d_rho], &fd_rho);
    }
    Ok(checks)
}

fn focal_check(seeds: usize, h: f64) -> Result<GradCheck> {
    let mut check = GradCheck::new("focal");
    for seed in 0..seeds as u64 {
        let mut rng = seeded_rng(seed);
        let params = FocalParams::new(rng.random_range(0.1..0.9), rng.random_range(0.0..3.0))?;
        for target in [0.0, 1.0, rng.random_range(0.0..1.0)] {
            let p = rng.random_range(0.05..0.95);
            let fd = central_difference(&[p], h, |x| Ok(focal_loss(x[0], target, params)))?;
            check.record(&[focal_loss_grad(p, target, params)], &fd);
        }
    }
    Ok(check)
}

fn smooth_l1_check(seeds: usize, h: f64) -> Result<GradCheck> {
    let mut check = GradCheck::new("smooth_l1");
    for seed in 0..seeds as u64 {
        let mut rng = seeded_rng(seed);
        for _ in 0..4 {
            let x = loop {
                let x: f64 = rng.random_range(-3.0..3.0);
                if (x.abs() - 1.0).abs() > KINK_MARGIN {
                    break x;
                }
            };
            let fd = central_difference(&[x], h, |v| Ok(smooth_l1(v[0])))?;
            check.record(&[smooth_l1_grad(x)], &fd);
        }
    }
    Ok(check)
}

/// Every analytical gradient against central differences on seeded random inputs.
pub fn run_gradchecks(seeds: usize, h: f64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for mode in [Denominator::ExcludePositive, Denominator::IncludePositive] {
        out.extend(contrastive_checks(seeds, h, mode)?);
    }
    out.push(focal_check(seeds, h)?);
    out.push(smooth_l1_check(seeds, h)?);
    Ok(out)
}

/// One labeled row per gradient; summary `all_pass` is 1 only when every row is within tolerance.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let g = &cfg.gradcheck;
    let checks = run_gradchecks(g.seeds, g.step)?;
    let mut report = RunReport::new("gradcheck", EnvStamp::new("f64", cfg.seed, "none"), &GRADCHECK_COLUMNS);
    let mut worst: f64 = 0.0;
    for c in &checks {
        let pass = c.passes(g.tolerance);
        report.push_labeled(&c.name, vec![c.cases as f64, c.max_rel_err, g.tolerance, if pass { 1.0 } else { 0.0 }])?;
        worst = worst.max(c.max_rel_err);
    }
    report.set("gradients", checks.len() as f64);
    report.set("max_rel_err", worst);
    report.set("all_pass", if checks.iter().all(|c| c.passes(g.tolerance)) { 1.0 } else { 0.0 });
    report.validate()?;
    Ok(report)
}
