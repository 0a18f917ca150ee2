use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// `a[m×k] · b[k×p]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, p) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dims disagree: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); m * p];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for l in 0..k {
            let ail = ad[i * k + l];
            if ail == T::zero() {
                continue;
            }
            let brow = &bd[l * p..(l + 1) * p];
            for (o, &blj) in orow.iter_mut().zip(brow) {
                *o = *o + ail * blj;
            }
        }
    }
    Tensor::new(&[m, p], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Elu,
    EluPlusOne,
    Exp,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => x / (T::one() + (-x).exp()),
            Activation::Elu => elu(x),
            Activation::EluPlusOne => elu(x) + T::one(),
            Activation::Exp => x.exp(),
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = T::one() / (T::one() + (-x).exp());
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Elu | Activation::EluPlusOne => {
                if x > T::zero() {
                    T::one()
                } else {
                    x.exp()
                }
            }
            Activation::Exp => x.exp(),
        }
    }
}

fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

pub fn activation_grad<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.derivative(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvPadding {
    /// Zero padding that keeps the spatial extent.
    Same,
    Valid,
}

/// Cross-correlation of `x[H×W×Cin]` with `kernel[kh×kw×Cin×Cout]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, padding: ConvPadding) -> Result<Tensor<T>> {
    let (h, w, cin) = x.dims3()?;
    let (kh, kw, kcin, cout) = match kernel.shape() {
        &[a, b, c, d] => (a, b, c, d),
        other => return Err(Error::Dimension(format!("conv kernel must be 4-D, got {other:?}"))),
    };
    if kcin != cin {
        return Err(Error::Dimension(format!("conv expects {kcin} input channels, got {cin}")));
    }
    if padding == ConvPadding::Same && (kh % 2 == 0 || kw % 2 == 0) {
        return Err(Error::Dimension(format!("same padding needs odd kernel, got {kh}×{kw}")));
    }
    let (ph, pw, oh, ow) = match padding {
        ConvPadding::Same => (kh / 2, kw / 2, h, w),
        ConvPadding::Valid => {
            if kh > h || kw > w {
                return Err(Error::Dimension("kernel larger than input".into()));
            }
            (0, 0, h - kh + 1, w - kw + 1)
        }
    };
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![T::zero(); oh * ow * cout];
    for oi in 0..oh {
        for oj in 0..ow {
            let orow = &mut out[(oi * ow + oj) * cout..(oi * ow + oj + 1) * cout];
            for di in 0..kh {
                let ii = oi as isize + di as isize - ph as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for dj in 0..kw {
                    let jj = oj as isize + dj as isize - pw as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let xpix = &xd[(ii as usize * w + jj as usize) * cin..][..cin];
                    let kbase = (di * kw + dj) * cin * cout;
                    for (ci, &xv) in xpix.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let krow = &kd[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (o, &kv) in orow.iter_mut().zip(krow) {
                            *o = *o + xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[oh, ow, cout], out)
}

/// Per-channel same-padded cross-correlation of `x[H×W×C]` with `kernel[kh×kw×C]`.
pub fn depthwise_conv2d<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    let (kh, kw, kc) = kernel.dims3()?;
    if kc != c {
        return Err(Error::Dimension(format!("depthwise kernel has {kc} channels, input has {c}")));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Dimension(format!("same padding needs odd kernel, got {kh}×{kw}")));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![T::zero(); h * w * c];
    for oi in 0..h {
        for oj in 0..w {
            let orow = &mut out[(oi * w + oj) * c..(oi * w + oj + 1) * c];
            for di in 0..kh {
                let Some(ii) = (oi + di).checked_sub(ph).filter(|&i| i < h) else { continue };
                for dj in 0..kw {
                    let Some(jj) = (oj + dj).checked_sub(pw).filter(|&j| j < w) else { continue };
                    let xpix = &xd[(ii * w + jj) * c..][..c];
                    let krow = &kd[(di * kw + dj) * c..][..c];
                    for ((o, &xv), &kv) in orow.iter_mut().zip(xpix).zip(krow) {
                        *o = *o + xv * kv;
                    }
                }
            }
        }
    }
    Tensor::new(&[h, w, c], out)
}

/// Input index range `[start, end)` covered by output bin `i` of `n_out` over `n_in` cells.
pub fn pool_bin(i: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let start = i * n_in / n_out;
    let end = ((i + 1) * n_in).div_ceil(n_out);
    (start, end)
}

/// Adaptive average pooling of `x[h×w×C]` to `S×S×C`.
pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    if size == 0 {
        return Err(Error::Dimension("pool size must be ≥ 1".into()));
    }
    let xd = x.data();
    let mut out = Tensor::zeros(&[size, size, c]);
    for bi in 0..size {
        let (r0, r1) = pool_bin(bi, h, size);
        for bj in 0..size {
            let (c0, c1) = pool_bin(bj, w, size);
            let count = T::of(((r1 - r0) * (c1 - c0)) as f64);
            let orow = out.row_mut(bi * size + bj);
            for r in r0..r1 {
                for col in c0..c1 {
                    for (o, &v) in orow.iter_mut().zip(&xd[(r * w + col) * c..(r * w + col + 1) * c]) {
                        *o = *o + v;
                    }
                }
            }
            for o in orow.iter_mut() {
                *o = *o / count;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`adaptive_avg_pool`] with respect to its `h×w×C` input.
pub fn adaptive_avg_pool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let (s, s2, c) = grad_out.dims3()?;
    if s != s2 {
        return Err(Error::Dimension("pool gradient must be square".into()));
    }
    let mut grad = Tensor::zeros(&[h, w, c]);
    let gd = grad.data_mut();
    for bi in 0..s {
        let (r0, r1) = pool_bin(bi, h, s);
        for bj in 0..s {
            let (c0, c1) = pool_bin(bj, w, s);
            let count = T::of(((r1 - r0) * (c1 - c0)) as f64);
            let g = grad_out.row(bi * s + bj);
            for r in r0..r1 {
                for col in c0..c1 {
                    for (dst, &gv) in gd[(r * w + col) * c..(r * w + col + 1) * c].iter_mut().zip(g) {
                        *dst = *dst + gv / count;
                    }
                }
            }
        }
    }
    Ok(grad)
}
