//! Reference fusion schemes used for timing and shape comparisons only.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, matmul, normal_tensor, seeded_rng, ConvPadding, Scalar, Tensor};

use super::forward::clfm_forward;
use super::params::{ClfmConfig, ClfmParams, INIT_STD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionScheme {
    /// Softmax self-attention over the channel-concatenated maps.
    SelfAttention,
    /// Bidirectional softmax cross-attention.
    CrossAttention,
    /// `3×3` conv over the concatenated maps.
    Conv,
    Clfm,
}

impl FusionScheme {
    pub const ALL: [FusionScheme; 4] =
        [FusionScheme::SelfAttention, FusionScheme::CrossAttention, FusionScheme::Conv, FusionScheme::Clfm];

    pub fn name(self) -> &'static str {
        match self {
            FusionScheme::SelfAttention => "sa",
            FusionScheme::CrossAttention => "ca",
            FusionScheme::Conv => "conv",
            FusionScheme::Clfm => "clfm",
        }
    }
}

/// Row-wise softmax attention per head with `1/√d_h` scaling, one query row at a time.
pub fn softmax_attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let (lq, c) = q.dims2()?;
    let (lk, ck) = k.dims2()?;
    if ck != c || v.shape() != [lk, c] || heads == 0 || c % heads != 0 {
        return Err(Error::Dimension(format!("softmax attention shapes {:?} {:?} {:?}", q.shape(), k.shape(), v.shape())));
    }
    let d = c / heads;
    let scale = T::of(1.0 / (d as f64).sqrt());
    let mut out = Tensor::zeros(&[lq, c]);
    let mut scores = vec![T::zero(); lk];
    for i in 0..lq {
        for h in 0..heads {
            let qh = &q.row(i)[h * d..(h + 1) * d];
            let mut max = T::neg_infinity();
            for (j, s) in scores.iter_mut().enumerate() {
                let kh = &k.row(j)[h * d..(h + 1) * d];
                *s = qh.iter().zip(kh).fold(T::zero(), |a, (&x, &y)| a + x * y) * scale;
                max = max.max(*s);
            }
            let mut total = T::zero();
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total = total + *s;
            }
            let orow = &mut out.row_mut(i)[h * d..(h + 1) * d];
            for (j, &s) in scores.iter().enumerate() {
                let w = s / total;
                for (o, &vv) in orow.iter_mut().zip(&v.row(j)[h * d..(h + 1) * d]) {
                    *o = *o + w * vv;
                }
            }
        }
    }
    Ok(out)
}

fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = a.dims3()?;
    if b.shape() != a.shape() {
        return Err(Error::Dimension(format!("fusion inputs {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(Tensor::from_fn(&[h, w, 2 * c], |i| {
        if i[2] < c {
            a.get(&[i[0], i[1], i[2]])
        } else {
            b.get(&[i[0], i[1], i[2] - c])
        }
    }))
}

/// Randomly initialized weights for one baseline scheme.
#[derive(Clone, Debug)]
pub struct BaselineParams<T: Scalar> {
    pub scheme: FusionScheme,
    pub channels: usize,
    pub heads: usize,
    weights: Vec<Tensor<T>>,
    clfm: Option<ClfmParams<T>>,
}

impl<T: Scalar> BaselineParams<T> {
    pub fn init<R: Rng + ?Sized>(scheme: FusionScheme, channels: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let c = channels;
        if c == 0 || heads == 0 || c % heads != 0 {
            return Err(Error::Config(format!("{c} channels do not split into {heads} heads")));
        }
        let mut w = |shape: &[usize]| normal_tensor(shape, INIT_STD, rng);
        let (weights, clfm) = match scheme {
            // q, k, v over 2C, then 2C → C.
            FusionScheme::SelfAttention => {
                (vec![w(&[2 * c, 2 * c]), w(&[2 * c, 2 * c]), w(&[2 * c, 2 * c]), w(&[2 * c, c])], None)
            }
            // Per direction q, k, v, then C → C.
            FusionScheme::CrossAttention => ((0..7).map(|_| w(&[c, c])).collect(), None),
            FusionScheme::Conv => (vec![w(&[3, 3, 2 * c, c])], None),
            FusionScheme::Clfm => {
                let cfg = ClfmConfig { channels: c, heads, ..ClfmConfig::default() };
                (Vec::new(), Some(ClfmParams::init(cfg, rng)?))
            }
        };
        Ok(Self { scheme, channels, heads, weights, clfm })
    }
}

/// Fuses `x` and `y` (`H×W×C`) with the given scheme into `H×W×C`.
pub fn fuse_baseline<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, p: &BaselineParams<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    if c != p.channels || y.shape() != x.shape() {
        return Err(Error::Dimension(format!("fusion inputs {:?} {:?} vs {} channels", x.shape(), y.shape(), p.channels)));
    }
    let l = h * w;
    let ws = &p.weights;
    let out = match p.scheme {
        FusionScheme::SelfAttention => {
            let cat = concat_channels(x, y)?.reshape(&[l, 2 * c])?;
            let att = softmax_attention(&matmul(&cat, &ws[0])?, &matmul(&cat, &ws[1])?, &matmul(&cat, &ws[2])?, p.heads)?;
            matmul(&att, &ws[3])?
        }
        FusionScheme::CrossAttention => {
            let xf = x.clone().reshape(&[l, c])?;
            let yf = y.clone().reshape(&[l, c])?;
            let a = softmax_attention(&matmul(&yf, &ws[0])?, &matmul(&xf, &ws[1])?, &matmul(&xf, &ws[2])?, p.heads)?;
            let b = softmax_attention(&matmul(&xf, &ws[3])?, &matmul(&yf, &ws[4])?, &matmul(&yf, &ws[5])?, p.heads)?;
            matmul(&a.add(&b)?, &ws[6])?
        }
        FusionScheme::Conv => return conv2d(&concat_channels(x, y)?, &ws[0], ConvPadding::Same),
        FusionScheme::Clfm => {
            return clfm_forward(x, y, p.clfm.as_ref().expect("clfm params present for clfm scheme"));
        }
    };
    out.reshape(&[h, w, c])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeTiming {
    pub scheme: FusionScheme,
    pub side: usize,
    pub median_ns: f64,
}

/// Median forward time of every scheme on random `side×side×C` maps.
pub fn time_fusion_schemes(side: usize, channels: usize, heads: usize, trials: usize, seed: u64) -> Result<Vec<SchemeTiming>> {
    let mut rng = seeded_rng(seed);
    let x: Tensor<f32> = normal_tensor(&[side, side, channels], 1.0, &mut rng);
    let y: Tensor<f32> = normal_tensor(&[side, side, channels], 1.0, &mut rng);
    let mut out = Vec::new();
    for scheme in FusionScheme::ALL {
        let p = BaselineParams::init(scheme, channels, heads, &mut rng)?;
        fuse_baseline(&x, &y, &p)?;
        let mut samples: Vec<f64> = (0..trials.max(1))
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(fuse_baseline(&x, &y, &p).ok());
                t.elapsed().as_nanos() as f64
            })
            .collect();
        samples.sort_by(f64::total_cmp);
        out.push(SchemeTiming { scheme, side, median_ns: samples[samples.len() / 2] });
    }
    Ok(out)
}
