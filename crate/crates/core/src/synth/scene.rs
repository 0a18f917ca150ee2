use rand::Rng;
use rand_distr::StandardNormal;

use crate::augment::{BankEntry, DepthPatch, SceneSample};
use crate::error::{Error, Result};
use crate::geometry::{box_to_anchor, Box3D, DepthDistribution, LidarPoint, RowCamera};
use crate::tensor::{seeded_rng, LabRng, Tensor};

use super::config::{SynthConfig, LATENT_DIM};

/// Tries per object before generation gives up.
pub const PLACEMENT_TRIES: usize = 100;

/// Depth peaks are cut to zero beyond this many standard deviations.
pub const DEPTH_WINDOW: f64 = 6.0;

const CLASS_SIZES: [[f64; 3]; 3] = [[3.9, 1.6, 1.56], [0.8, 0.6, 1.73], [1.76, 0.6, 1.73]];

/// Scene-independent draws shared by every scene of one config: class signatures and the
/// modality mixing matrices that map a latent code to point or pixel features.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    /// `classes × LATENT_DIM`.
    pub signatures: Tensor<f64>,
    /// `teacher_channels × LATENT_DIM`.
    pub lidar_mix: Tensor<f64>,
    /// `student_channels × LATENT_DIM`.
    pub image_mix: Tensor<f64>,
}

impl SynthWorld {
    pub fn new(cfg: &SynthConfig) -> Self {
        let mut rng = seeded_rng(cfg.seed);
        let signatures = Tensor::from_fn(&[cfg.classes, LATENT_DIM], |_| rng.sample::<f64, _>(StandardNormal));
        let lidar_mix = orthonormal_mix(cfg.teacher_channels, &mut rng);
        let image_mix = orthonormal_mix(cfg.student_channels, &mut rng);
        Self { signatures, lidar_mix, image_mix }
    }

    fn mix(m: &Tensor<f64>, z: &[f64], gain: f64, noise: f64, rng: &mut LabRng) -> Vec<f64> {
        (0..m.shape()[0])
            .map(|r| {
                let clean: f64 = m.row(r).iter().zip(z).map(|(a, b)| a * b).sum();
                gain * clean + noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }
}

/// Random `rows × LATENT_DIM` matrix whose leading `min(rows, LATENT_DIM)` rows (or columns) are orthonormal.
fn orthonormal_mix(rows: usize, rng: &mut LabRng) -> Tensor<f64> {
    let raw: Vec<Vec<f64>> =
        (0..rows.max(LATENT_DIM)).map(|_| (0..rows.max(LATENT_DIM)).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let n = rows.max(LATENT_DIM);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    for v in raw {
        let mut v = v;
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    Tensor::from_fn(&[rows, LATENT_DIM], |i| basis[i[1]][i[0]])
}

fn scene_rng(cfg: &SynthConfig, index: u64) -> LabRng {
    let mut rng = seeded_rng(cfg.seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

pub fn scene_camera(cfg: &SynthConfig) -> RowCamera {
    RowCamera { x: 0.0, y: 0.0, heading: 0.0, fov: cfg.fov, columns: cfg.image_columns }
}

/// Distance along the ray from `(ox, oy)` at azimuth `az` to the first footprint edge it crosses.
pub fn ray_hit(b: &Box3D, ox: f64, oy: f64, az: f64) -> Option<f64> {
    ray_hit_incidence(b, ox, oy, az).map(|(t, _)| t)
}

/// Hit distance and `|cos|` of the angle between the ray and the normal of the face it enters.
pub fn ray_hit_incidence(b: &Box3D, ox: f64, oy: f64, az: f64) -> Option<(f64, f64)> {
    let (lx, ly) = b.to_local(ox, oy);
    let (s, c) = (az - b.yaw).sin_cos();
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut cos = 0.0;
    for (o, d, half) in [(lx, c, b.l / 2.0), (ly, s, b.w / 2.0)] {
        if d.abs() < 1e-15 {
            if o.abs() > half {
                return None;
            }
            continue;
        }
        let (a, bb) = ((-half - o) / d, (half - o) / d);
        if a.min(bb) > t0 {
            t0 = a.min(bb);
            cos = d.abs();
        }
        t1 = t1.min(a.max(bb));
    }
    (t0 <= t1 && t0 > 0.0).then_some((t0, cos))
}

fn azimuth_span(b: &Box3D, camera: &RowCamera) -> (f64, f64) {
    b.corners_bev().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
        let az = (y - camera.y).atan2(x - camera.x);
        (lo.min(az), hi.max(az))
    })
}

fn class_size(class: usize) -> [f64; 3] {
    let base = CLASS_SIZES[class % CLASS_SIZES.len()];
    let k = 1.0 + 0.1 * (class / CLASS_SIZES.len()) as f64;
    base.map(|s| s * k)
}

fn place_boxes(cfg: &SynthConfig, camera: &RowCamera, n: usize, rng: &mut LabRng) -> Result<Vec<Box3D>> {
    let margin = cfg.fov / cfg.image_columns as f64;
    let half = cfg.fov / 2.0 - margin;
    let mut boxes: Vec<Box3D> = Vec::with_capacity(n);
    let mut spans: Vec<(f64, f64)> = Vec::with_capacity(n);
    for placed in 0..n {
        let mut ok = false;
        for _ in 0..PLACEMENT_TRIES {
            let class = rng.random_range(0..cfg.classes);
            let jitter: f64 = rng.random_range(0.9..1.1);
            let [l, w, h] = class_size(class).map(|s| s * jitter);
            let r = rng.random_range(cfg.range_min..cfg.range_max);
            let az = rng.random_range(-half..half);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let b = Box3D::new([r * az.cos(), r * az.sin(), h / 2.0], [l, w, h], yaw, class as u32)?;
            let (lo, hi) = azimuth_span(&b, camera);
            if lo < -half || hi > half || spans.iter().any(|&(a, z)| lo < z + margin && a < hi + margin) {
                continue;
            }
            if box_to_anchor(&b, &cfg.grid).is_err() {
                continue;
            }
            boxes.push(b);
            spans.push((lo, hi));
            ok = true;
            break;
        }
        if !ok {
            return Err(Error::Placement { wanted: n, placed });
        }
    }
    Ok(boxes)
}

fn inside_footprint(b: &Box3D, x: f64, y: f64, pad: f64) -> bool {
    let (lx, ly) = b.to_local(x, y);
    lx.abs() <= b.l / 2.0 + pad && ly.abs() <= b.w / 2.0 + pad
}

/// Builds scene `index` of the family described by `cfg`; a pure function of both.
///
/// Objects sit on the ground at non-overlapping bearings. Each has two latent codes drawn around its class
/// signature, one for the rear and one for the front, blended along the body. Lidar returns on the visible faces
/// and the image columns that see the object carry the local code through the respective mixing matrix; lidar
/// intensity follows the cosine of the incidence angle, and a column's depth distribution peaks at its hit range.
pub fn generate_scene(cfg: &SynthConfig, index: u64) -> Result<SceneSample> {
    cfg.validate()?;
    let world = SynthWorld::new(cfg);
    let camera = scene_camera(cfg);
    let mut rng = scene_rng(cfg, index);
    let n = rng.random_range(cfg.objects_min..=cfg.objects_max);
    let boxes = place_boxes(cfg, &camera, n, &mut rng)?;
    let latents: Vec<[Vec<f64>; 2]> = boxes
        .iter()
        .map(|b| {
            let sig = world.signatures.row(b.class_id as usize);
            let mut draw = || -> Vec<f64> {
                sig.iter().map(|s| s + cfg.instance_spread * rng.sample::<f64, _>(StandardNormal)).collect()
            };
            [draw(), draw()]
        })
        .collect();
    let latent_at = |i: usize, x: f64, y: f64| -> Vec<f64> {
        let b = &boxes[i];
        let w = (b.to_local(x, y).0 / b.l + 0.5).clamp(0.0, 1.0);
        latents[i][0].iter().zip(&latents[i][1]).map(|(r, f)| r + w * (f - r)).collect()
    };

    let mut points = Vec::with_capacity(n * cfg.points_per_object + cfg.background_points);
    for (i, b) in boxes.iter().enumerate() {
        let (lo, hi) = azimuth_span(b, &camera);
        let mut made = 0;
        let mut draws = 0;
        while made < cfg.points_per_object && draws < 100 * cfg.points_per_object.max(1) {
            draws += 1;
            let az = rng.random_range(lo..=hi);
            let Some((t, cos)) = ray_hit_incidence(b, camera.x, camera.y, az) else { continue };
            let (hx, hy) = (camera.x + t * az.cos(), camera.y + t * az.sin());
            let z = latent_at(i, hx, hy);
            let jx: f64 = rng.sample(StandardNormal);
            let jy: f64 = rng.sample(StandardNormal);
            points.push(LidarPoint {
                x: hx + cfg.point_jitter * jx,
                y: hy + cfg.point_jitter * jy,
                z: rng.random_range(b.cz - b.h / 2.0..=b.cz + b.h / 2.0),
                feature: SynthWorld::mix(&world.lidar_mix, &z, cos, cfg.feature_noise, &mut rng),
            });
            made += 1;
        }
    }
    let ((x0, x1), (y0, y1)) = (cfg.grid.extent_x(), cfg.grid.extent_y());
    let mut bg = 0;
    while bg < cfg.background_points {
        let (x, y) = (rng.random_range(x0..x1), rng.random_range(y0..y1));
        if boxes.iter().any(|b| inside_footprint(b, x, y, 0.5)) {
            continue;
        }
        let feature = (0..cfg.teacher_channels).map(|_| cfg.feature_noise * rng.sample::<f64, _>(StandardNormal)).collect();
        points.push(LidarPoint { x, y, z: rng.random_range(0.0..0.2), feature });
        bg += 1;
    }

    let edges = cfg.bin_edges();
    let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let (rows, cols, ci, bins) = (cfg.image_rows, cfg.image_columns, cfg.student_channels, cfg.depth_bins);
    let mut image = Vec::with_capacity(rows * cols * ci);
    let mut probs = Vec::with_capacity(rows * cols * bins);
    for _ in 0..rows {
        for u in 0..cols {
            let az = camera.azimuth(u);
            let hit = boxes
                .iter()
                .enumerate()
                .filter_map(|(i, b)| ray_hit(b, camera.x, camera.y, az).map(|t| (i, t)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match hit {
                Some((i, t)) => {
                    let (hx, hy) = camera.ray_point(u, t);
                    image.extend(SynthWorld::mix(&world.image_mix, &latent_at(i, hx, hy), 1.0, cfg.feature_noise, &mut rng));
                    let reach = DEPTH_WINDOW * cfg.depth_sigma;
                    let row: Vec<f64> = centers
                        .iter()
                        .map(|c| if (c - t).abs() > reach { 0.0 } else { (-(c - t).powi(2) / (2.0 * cfg.depth_sigma.powi(2))).exp() })
                        .collect();
                    let s: f64 = row.iter().sum();
                    if s > 1e-12 {
                        probs.extend(row.iter().map(|p| p / s));
                    } else {
                        probs.extend(std::iter::repeat_n(1.0 / bins as f64, bins));
                    }
                }
                None => {
                    image.extend((0..ci).map(|_| cfg.feature_noise * rng.sample::<f64, _>(StandardNormal)));
                    probs.extend(std::iter::repeat_n(1.0 / bins as f64, bins));
                }
            }
        }
    }
    Ok(SceneSample {
        points,
        image: Tensor::new(&[rows, cols, ci], image)?,
        depth: DepthDistribution::new(Tensor::new(&[rows, cols, bins], probs)?, edges)?,
        camera,
        boxes,
        patches: Vec::new(),
    })
}

/// Cuts every object of `scene` into a bank entry: its points, box, and the image columns that see it.
pub fn object_bank(scene: &SceneSample, tag: &str) -> Result<Vec<BankEntry>> {
    let (rows, cols, c) = scene.image.dims3()?;
    let mut bank = Vec::new();
    for (i, b) in scene.boxes.iter().enumerate() {
        let points: Vec<LidarPoint> =
            scene.points.iter().filter(|p| inside_footprint(b, p.x, p.y, 0.25)).cloned().collect();
        let seen: Vec<usize> = (0..cols)
            .filter(|&u| ray_hit(b, scene.camera.x, scene.camera.y, scene.camera.azimuth(u)).is_some())
            .collect();
        let (Some(&u0), Some(&u1)) = (seen.first(), seen.last()) else { continue };
        if points.is_empty() {
            continue;
        }
        let width = u1 - u0 + 1;
        let pixels = Tensor::from_fn(&[rows, width, c], |ix| scene.image.get(&[ix[0], u0 + ix[1], ix[2]]));
        let patch = DepthPatch::new(0, u0 as i64, b.range(), pixels, i as u32)?;
        bank.push(BankEntry { name: format!("{tag}_{i}"), points, bbox: *b, patch });
    }
    Ok(bank)
}
