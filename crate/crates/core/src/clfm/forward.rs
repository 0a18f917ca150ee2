use crate::error::{Error, Result};
use crate::tensor::{activation, conv2d, depthwise_conv2d, matmul, Activation, ConvPadding, Scalar, Tensor};

use super::attention::{kernelize, linear_cross_attention, quadratic_oracle};
use super::params::{BranchParams, ClfmConfig, ClfmParams, ConvMode};
use super::rope::RopeTable;

/// Which association order the two attention directions use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionPath {
    #[default]
    Linear,
    Quadratic,
}

/// Projected queries, keys and values of one branch, each `L×C`.
#[derive(Clone, Debug)]
pub struct Qkv<T: Scalar> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
}

fn flatten<T: Scalar>(bev: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = bev.dims3()?;
    bev.clone().reshape(&[h * w, c])
}

fn check_bev<T: Scalar>(bev: &Tensor<T>, cfg: &ClfmConfig) -> Result<(usize, usize)> {
    let (h, w, c) = bev.dims3()?;
    if c != cfg.channels {
        return Err(Error::Dimension(format!("BEV has {c} channels, module expects {}", cfg.channels)));
    }
    Ok((h, w))
}

/// `Linear → Conv3×3 → SiLU → Linear` on the flattened map, three final projections in parallel.
pub fn qkv_project<T: Scalar>(bev: &Tensor<T>, branch: &BranchParams<T>, cfg: &ClfmConfig) -> Result<Qkv<T>> {
    let (h, w) = check_bev(bev, cfg)?;
    let c = cfg.channels;
    let projected = matmul(&flatten(bev)?, &branch.in_proj)?.reshape(&[h, w, c])?;
    let conv = match cfg.conv {
        ConvMode::Dense => conv2d(&projected, &branch.conv, ConvPadding::Same)?,
        ConvMode::Depthwise => depthwise_conv2d(&projected, &branch.conv)?,
    };
    let hidden = activation(&conv, Activation::Silu).reshape(&[h * w, c])?;
    Ok(Qkv { q: matmul(&hidden, &branch.q)?, k: matmul(&hidden, &branch.k)?, v: matmul(&hidden, &branch.v)? })
}

/// `Linear(SiLU(bev))`, flattened.
pub fn shortcut<T: Scalar>(bev: &Tensor<T>, branch: &BranchParams<T>, cfg: &ClfmConfig) -> Result<Tensor<T>> {
    check_bev(bev, cfg)?;
    matmul(&activation(&flatten(bev)?, Activation::Silu), &branch.shortcut)
}

/// Intermediate maps of one forward pass, all `L×C` except `fused`.
#[derive(Clone, Debug)]
pub struct ClfmTrace<T: Scalar> {
    /// Image queries against lidar keys and values.
    pub x_hat: Tensor<T>,
    /// Lidar queries against image keys and values.
    pub y_hat: Tensor<T>,
    pub x_bar: Tensor<T>,
    pub y_bar: Tensor<T>,
    /// `H×W×C`.
    pub fused: Tensor<T>,
}

pub fn clfm_forward_trace<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    params: &ClfmParams<T>,
    path: AttentionPath,
) -> Result<ClfmTrace<T>> {
    params.validate()?;
    if x.shape() != y.shape() {
        return Err(Error::Dimension(format!("lidar {:?} and image {:?} maps differ", x.shape(), y.shape())));
    }
    let cfg = &params.config;
    let (h, w) = check_bev(x, cfg)?;
    let rope = RopeTable::for_grid(cfg.rope, h, w, cfg.head_dim())?;
    let spec = cfg.attention();

    let branch = |bev: &Tensor<T>, p: &BranchParams<T>| -> Result<(Qkv<T>, Tensor<T>)> {
        let Qkv { q, k, v } = qkv_project(bev, p, cfg)?;
        let q = kernelize(&q, &rope, cfg.feature_map)?;
        let k = kernelize(&k, &rope, cfg.feature_map)?;
        Ok((Qkv { q, k, v }, shortcut(bev, p, cfg)?))
    };
    let (lidar, image) = rayon::join(|| branch(x, &params.lidar), || branch(y, &params.image));
    let ((lq, x_bar), (iq, y_bar)) = (lidar?, image?);

    let attend = |q: &Tensor<T>, kv: &Qkv<T>| match path {
        AttentionPath::Linear => linear_cross_attention(q, &kv.k, &kv.v, &spec),
        AttentionPath::Quadratic => quadratic_oracle(q, &kv.k, &kv.v, &spec),
    };
    let (x_hat, y_hat) = rayon::join(|| attend(&iq.q, &lq), || attend(&lq.q, &iq));
    let (x_hat, y_hat) = (x_hat?, y_hat?);

    let gated_x = matmul(&x_hat.mul(&x_bar)?, &params.lidar.gate)?;
    let gated_y = matmul(&y_hat.mul(&y_bar)?, &params.image.gate)?;
    let fused = matmul(&gated_x.add(&gated_y)?, &params.out_proj)?.reshape(&[h, w, cfg.channels])?;
    Ok(ClfmTrace { x_hat, y_hat, x_bar, y_bar, fused })
}

/// Fuses lidar `x` and image `y` BEV maps of shape `H×W×C`.
pub fn clfm_forward<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, params: &ClfmParams<T>) -> Result<Tensor<T>> {
    Ok(clfm_forward_trace(x, y, params, AttentionPath::Linear)?.fused)
}

pub fn clfm_forward_with<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    params: &ClfmParams<T>,
    path: AttentionPath,
) -> Result<Tensor<T>> {
    Ok(clfm_forward_trace(x, y, params, path)?.fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clfm::{FeatureMap, RopeMode};
    use crate::tensor::{normal_tensor, seeded_rng};

    fn cfg() -> ClfmConfig {
        ClfmConfig::default()
    }

    #[test]
    fn zero_input_projects_to_zero() {
        let p: ClfmParams<f64> = ClfmParams::init(cfg(), &mut seeded_rng(1)).unwrap();
        let z = Tensor::zeros(&[4, 5, 8]);
        let qkv = qkv_project(&z, &p.lidar, &p.config).unwrap();
        assert_eq!(qkv.q.max_abs() + qkv.k.max_abs() + qkv.v.max_abs(), 0.0);
        assert_eq!(shortcut(&z, &p.lidar, &p.config).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn identity_chain_is_silu() {
        let mut rng = seeded_rng(2);
        let x: Tensor<f64> = normal_tensor(&[4, 5, 8], 1.0, &mut rng);
        let silu = activation(&x, Activation::Silu).reshape(&[20, 8]).unwrap();
        for conv in [ConvMode::Dense, ConvMode::Depthwise] {
            let p: ClfmParams<f64> = ClfmParams::identity(ClfmConfig { conv, ..cfg() }).unwrap();
            let qkv = qkv_project(&x, &p.lidar, &p.config).unwrap();
            for t in [&qkv.q, &qkv.k, &qkv.v] {
                assert!(t.sub(&silu).unwrap().max_abs() < 1e-15);
            }
            assert!(shortcut(&x, &p.lidar, &p.config).unwrap().sub(&silu).unwrap().max_abs() < 1e-15);
        }
    }

    #[test]
    fn projection_matches_stagewise_loops() {
        let mut rng = seeded_rng(3);
        let (h, w, c) = (4, 3, 8);
        let x: Tensor<f64> = normal_tensor(&[h, w, c], 1.0, &mut rng);
        let p: ClfmParams<f64> = ClfmParams::init(cfg(), &mut rng).unwrap();
        let b = &p.lidar;
        let lin = |t: &Tensor<f64>, m: &Tensor<f64>| {
            Tensor::from_fn(&[t.shape()[0], c], |i| (0..c).map(|a| t.get(&[i[0], a]) * m.get(&[a, i[1]])).sum())
        };
        let silu = |v: f64| v / (1.0 + (-v).exp());
        let s1 = lin(&x.clone().reshape(&[h * w, c]).unwrap(), &b.in_proj);
        let s2 = Tensor::from_fn(&[h * w, c], |i| {
            let (r, col) = ((i[0] / w) as i64, (i[0] % w) as i64);
            let mut acc = 0.0;
            for di in -1..=1i64 {
                for dj in -1..=1i64 {
                    let (rr, cc) = (r + di, col + dj);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    for a in 0..c {
                        acc += s1.get(&[(rr * w as i64 + cc) as usize, a])
                            * b.conv.get(&[(di + 1) as usize, (dj + 1) as usize, a, i[1]]);
                    }
                }
            }
            silu(acc)
        });
        let qkv = qkv_project(&x, b, &p.config).unwrap();
        assert!(qkv.q.sub(&lin(&s2, &b.q)).unwrap().max_abs() < 1e-14);
        assert!(qkv.k.sub(&lin(&s2, &b.k)).unwrap().max_abs() < 1e-14);
        assert!(qkv.v.sub(&lin(&s2, &b.v)).unwrap().max_abs() < 1e-14);
        let sc = lin(&x.clone().reshape(&[h * w, c]).unwrap().map(silu), &b.shortcut);
        assert!(shortcut(&x, b, &p.config).unwrap().sub(&sc).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn identical_inputs_with_shared_weights_are_symmetric() {
        let mut rng = seeded_rng(4);
        let x: Tensor<f64> = normal_tensor(&[6, 6, 8], 1.0, &mut rng);
        let init: ClfmParams<f64> = ClfmParams::init(cfg(), &mut rng).unwrap();
        let p = ClfmParams::shared(cfg(), init.lidar.clone(), init.out_proj.clone()).unwrap();
        let t = clfm_forward_trace(&x, &x, &p, AttentionPath::Linear).unwrap();
        let gx = t.x_hat.mul(&t.x_bar).unwrap();
        assert_eq!(gx, t.y_hat.mul(&t.y_bar).unwrap());
        let want = matmul(&matmul(&gx, &p.lidar.gate).unwrap().scale(2.0), &p.out_proj).unwrap();
        assert!(t.fused.clone().reshape(&[36, 8]).unwrap().sub(&want).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn zero_image_branch() {
        let mut rng = seeded_rng(5);
        let x: Tensor<f64> = normal_tensor(&[5, 5, 8], 1.0, &mut rng);
        let y = Tensor::zeros(&[5, 5, 8]);
        let elu = ClfmConfig { feature_map: FeatureMap::Elu, ..cfg() };
        let p: ClfmParams<f64> = ClfmParams::init(elu, &mut rng).unwrap();
        let t = clfm_forward_trace(&x, &y, &p, AttentionPath::Linear).unwrap();
        assert_eq!(t.y_hat.max_abs(), 0.0);
        assert_eq!(t.x_hat.max_abs(), 0.0);
        assert_eq!(t.fused.max_abs(), 0.0);
        // With the shifted map the image queries are nonzero, but the image shortcut still kills its path.
        let p = ClfmParams { config: cfg(), ..p };
        let t = clfm_forward_trace(&x, &y, &p, AttentionPath::Linear).unwrap();
        assert_eq!(t.y_bar.max_abs(), 0.0);
        assert_eq!(t.y_hat.mul(&t.y_bar).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn oracle_substitution_leaves_output_unchanged() {
        let mut rng = seeded_rng(6);
        for rope in [RopeMode::Flat, RopeMode::Axial, RopeMode::Off] {
            let x: Tensor<f32> = normal_tensor(&[16, 16, 8], 1.0, &mut rng);
            let y: Tensor<f32> = normal_tensor(&[16, 16, 8], 1.0, &mut rng);
            let p = ClfmParams::init(ClfmConfig { rope, ..cfg() }, &mut rng).unwrap();
            let lin = clfm_forward_with(&x, &y, &p, AttentionPath::Linear).unwrap();
            let quad = clfm_forward_with(&x, &y, &p, AttentionPath::Quadratic).unwrap();
            let err = lin.sub(&quad).unwrap().max_abs() / quad.max_abs();
            assert!(err <= 1e-5, "{rope:?}: {err}");
        }
    }

    #[test]
    fn output_shape_and_determinism() {
        let mut rng = seeded_rng(7);
        let x: Tensor<f32> = normal_tensor(&[3, 7, 8], 1.0, &mut rng);
        let y: Tensor<f32> = normal_tensor(&[3, 7, 8], 1.0, &mut rng);
        let p: ClfmParams<f32> = ClfmParams::init(cfg(), &mut seeded_rng(99)).unwrap();
        let a = clfm_forward(&x, &y, &p).unwrap();
        assert_eq!(a.shape(), x.shape());
        let p2: ClfmParams<f32> = ClfmParams::init(cfg(), &mut seeded_rng(99)).unwrap();
        assert_eq!(a.data(), clfm_forward(&x, &y, &p2).unwrap().data());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p: ClfmParams<f64> = ClfmParams::identity(cfg()).unwrap();
        let x = Tensor::zeros(&[4, 4, 8]);
        assert!(matches!(clfm_forward(&x, &Tensor::zeros(&[4, 5, 8]), &p), Err(Error::Dimension(_))));
        assert!(matches!(clfm_forward(&Tensor::zeros(&[4, 4, 4]), &Tensor::zeros(&[4, 4, 4]), &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn random_inputs_stay_finite() {
        let mut rng = seeded_rng(8);
        let p: ClfmParams<f32> = ClfmParams::init(cfg(), &mut rng).unwrap();
        for trial in 0..10_000 {
            let std = [0.01, 1.0, 10.0][trial % 3];
            let x: Tensor<f32> = normal_tensor(&[3, 3, 8], std, &mut rng);
            let y: Tensor<f32> = normal_tensor(&[3, 3, 8], std, &mut rng);
            assert!(clfm_forward(&x, &y, &p).unwrap().all_finite(), "trial {trial}");
        }
    }
}
