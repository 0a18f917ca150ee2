use rayon::prelude::*;

use crate::augment::SceneSample;
use crate::error::{Error, Result};
use crate::icd::{embedding_len, scene_anchors, icd_pipeline_batch, mean_positive_similarity, retrieval_accuracy, IcdOutcome, IcdScene, Temperature};
use crate::synth::{generate_scene, points_encode, teacher_encode, EncoderKind, LiftedImage, ToyEncoder};
use crate::tensor::{seeded_rng, Tensor};

use super::config::RunConfig;
use super::report::{EnvStamp, RunReport};

pub const DISTILL_COLUMNS: [&str; 5] = ["step", "loss", "tau", "mean_pos_sim", "retrieval_acc"];

/// Key for the encoder initialization stream, kept apart from the scene streams.
const ENCODER_KEY: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub report: RunReport,
    pub teacher: ToyEncoder,
    pub student: ToyEncoder,
    pub temperature: Temperature,
    /// Teacher maps recomputed after training equal the ones computed before it, bit for bit.
    pub teacher_frozen: bool,
}

pub fn optimizer_label(cfg: &RunConfig) -> String {
    format!("gradient descent, lr {}, momentum {}", cfg.optim.lr, cfg.optim.momentum)
}

pub fn init_encoders(cfg: &RunConfig) -> (ToyEncoder, ToyEncoder) {
    let mut rng = seeded_rng(cfg.seed ^ ENCODER_KEY);
    let c = cfg.grid.channels;
    let teacher = ToyEncoder::random(EncoderKind::TeacherFrozen, cfg.synth.teacher_channels, c, cfg.distill.teacher_std, &mut rng);
    let student = ToyEncoder::random(EncoderKind::StudentTrainable, cfg.synth.student_channels, c, cfg.distill.student_std, &mut rng);
    (teacher, student)
}

fn scenes(cfg: &RunConfig, first: u64, count: usize) -> Result<Vec<SceneSample>> {
    let synth = cfg.synth_config();
    (first..first + count as u64).into_par_iter().map(|i| generate_scene(&synth, i)).collect()
}

struct Side {
    scenes: Vec<SceneSample>,
    teacher: Vec<Tensor<f64>>,
    lifted: Vec<LiftedImage>,
}

impl Side {
    fn new(cfg: &RunConfig, first: u64, count: usize, teacher: &ToyEncoder) -> Result<Self> {
        let scenes = scenes(cfg, first, count)?;
        let teacher = teacher_maps(&scenes, teacher, cfg)?;
        let lifted = scenes
            .par_iter()
            .map(|s| Ok(LiftedImage::new(s, &cfg.grid)?.restricted(&scene_anchors(&s.boxes, &cfg.grid))))
            .collect::<Result<_>>()?;
        Ok(Self { scenes, teacher, lifted })
    }

    fn students(&self, cfg: &RunConfig, teacher: &ToyEncoder, student: &ToyEncoder) -> Result<Vec<Tensor<f64>>> {
        self.scenes
            .par_iter()
            .zip(&self.lifted)
            .map(|(s, l)| if cfg.distill.self_distill { points_encode(s, teacher.weights(), &cfg.grid) } else { l.encode(student) })
            .collect()
    }

    fn evaluate(&self, cfg: &RunConfig, students: &[Tensor<f64>], temp: Temperature) -> Result<IcdOutcome> {
        let batch: Vec<IcdScene<'_>> = self
            .scenes
            .iter()
            .zip(&self.teacher)
            .zip(students)
            .map(|((s, t), st)| IcdScene { teacher: t, student: st, boxes: &s.boxes })
            .collect();
        icd_pipeline_batch(&batch, &cfg.grid, cfg.icd.pool_size, temp, cfg.icd.denominator)
    }
}

fn teacher_maps(scenes: &[SceneSample], teacher: &ToyEncoder, cfg: &RunConfig) -> Result<Vec<Tensor<f64>>> {
    scenes.par_iter().map(|s| teacher_encode(s, teacher, &cfg.grid)).collect()
}

/// Trains the student projection and the temperature against the frozen teacher with the contrastive
/// instance loss, logging held-out alignment after every step.
///
/// Row `t` holds the training loss and temperature before update `t` and held-out metrics at the same
/// weights; the last row (`step = steps`) is the trained state.
pub fn run_distill(cfg: &RunConfig) -> Result<DistillOutcome> {
    cfg.validate()?;
    let (teacher, mut student) = init_encoders(cfg);
    let d = &cfg.distill;
    let train = Side::new(cfg, 0, d.train_scenes, &teacher)?;
    let eval = Side::new(cfg, d.eval_offset, d.eval_scenes, &teacher)?;

    let mut report = RunReport::new("distill", EnvStamp::new("f64", cfg.seed, &optimizer_label(cfg)), &DISTILL_COLUMNS);
    let mut temp = cfg.icd.temperature();
    let mut velocity = Tensor::zeros(student.weights().shape());
    let mut rho_velocity = 0.0;
    let (lr, mu) = (cfg.optim.lr, cfg.optim.momentum);
    let mut last: Option<(IcdOutcome, IcdOutcome)> = None;

    for step in 0..=cfg.optim.steps {
        let train_out = train.evaluate(cfg, &train.students(cfg, &teacher, &student)?, temp)?;
        if !train_out.loss.is_finite() {
            return Err(Error::Divergence { step, detail: format!("training loss is {}", train_out.loss) });
        }
        let eval_out = eval.evaluate(cfg, &eval.students(cfg, &teacher, &student)?, temp)?;
        report.push_row(vec![
            step as f64,
            train_out.loss,
            temp.tau(),
            mean_positive_similarity(&eval_out.similarity),
            retrieval_accuracy(&eval_out.similarity),
        ])?;
        if step < cfg.optim.steps && !d.self_distill {
            let grads: Vec<Tensor<f64>> = train
                .lifted
                .par_iter()
                .zip(&train_out.student_grads)
                .map(|(l, g)| l.weight_grad(g))
                .collect::<Result<_>>()?;
            let mut g = Tensor::zeros(student.weights().shape());
            for gi in &grads {
                g.add_assign(gi)?;
            }
            if !g.all_finite() || !train_out.d_rho.is_finite() {
                return Err(Error::Divergence { step, detail: "non-finite gradient".into() });
            }
            velocity = velocity.scale(mu).sub(&g.scale(lr))?;
            student.update(&velocity)?;
            rho_velocity = mu * rho_velocity - lr * cfg.optim.rho_lr_scale * train_out.d_rho;
            temp.rho += rho_velocity;
        }
        last = Some((train_out, eval_out));
    }

    let (train_out, eval_out) = last.expect("at least one step is logged");
    let teacher_frozen = teacher_maps(&train.scenes, &teacher, cfg)? == train.teacher
        && teacher_maps(&eval.scenes, &teacher, cfg)? == eval.teacher;
    report.set("final_loss", train_out.loss);
    report.set("final_tau", temp.tau());
    report.set("final_mean_pos_sim", mean_positive_similarity(&eval_out.similarity));
    report.set("final_retrieval_acc", retrieval_accuracy(&eval_out.similarity));
    report.set("train_instances", train_out.instances() as f64);
    report.set("eval_instances", eval_out.instances() as f64);
    report.set("pool_size", cfg.icd.pool_size as f64);
    report.set("embedding_len", embedding_len(cfg.icd.pool_size, cfg.grid.channels) as f64);
    report.set("teacher_frozen", if teacher_frozen { 1.0 } else { 0.0 });
    if d.self_distill {
        report.notes.push("self-distillation: student side encoded with the teacher's weights".into());
    }
    report.validate()?;
    Ok(DistillOutcome { report, teacher, student, temperature: temp, teacher_frozen })
}

pub fn cmd_distill(cfg: &RunConfig) -> Result<RunReport> {
    Ok(run_distill(cfg)?.report)
}
