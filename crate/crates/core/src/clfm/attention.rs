use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, Scalar, Tensor};

use super::rope::RopeTable;

/// Largest score matrix the quadratic oracle will materialize.
pub const QUADRATIC_GUARD: usize = 100_000_000;

/// Elementwise kernel applied to queries and keys before rotation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    #[default]
    EluPlusOne,
    Elu,
}

impl FeatureMap {
    pub fn activation(self) -> Activation {
        match self {
            FeatureMap::EluPlusOne => Activation::EluPlusOne,
            FeatureMap::Elu => Activation::Elu,
        }
    }
}

/// Which width the two `1/√·` factors on keys and values use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleConvention {
    /// Number of heads.
    #[default]
    Heads,
    HeadDim,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub heads: usize,
    pub eps: f64,
    pub scale: ScaleConvention,
}

impl AttentionSpec {
    pub fn new(heads: usize, eps: f64) -> Self {
        Self { heads, eps, scale: ScaleConvention::Heads }
    }

    /// Product of the key and value factors.
    pub fn factor(&self, channels: usize) -> f64 {
        match self.scale {
            ScaleConvention::Heads => 1.0 / self.heads as f64,
            ScaleConvention::HeadDim => self.heads as f64 / channels as f64,
        }
    }

    fn check(&self, q: (usize, usize), k: (usize, usize), v: (usize, usize)) -> Result<usize> {
        if self.heads == 0 || q.1 % self.heads != 0 {
            return Err(Error::Dimension(format!("{} channels do not split into {} heads", q.1, self.heads)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Validation(format!("epsilon must be positive, got {}", self.eps)));
        }
        if k.1 != q.1 || v.1 != q.1 || k.0 != v.0 {
            return Err(Error::Dimension(format!("attention shapes Q {q:?} K {k:?} V {v:?} disagree")));
        }
        Ok(q.1 / self.heads)
    }
}

/// Feature map followed by rotary encoding of every head.
pub fn kernelize<T: Scalar>(x: &Tensor<T>, rope: &RopeTable, feature_map: FeatureMap) -> Result<Tensor<T>> {
    let (l, _) = x.dims2()?;
    if l > rope.positions() {
        return Err(Error::RopeOverflow { capacity: rope.positions(), requested: l });
    }
    let act = feature_map.activation();
    let mut out = x.map(|v| act.apply(v));
    rope.apply(&mut out)?;
    Ok(out)
}

/// Rows per partial sum; partials are folded into the running total so rounding grows with `L/BLOCK`.
const BLOCK: usize = 128;

fn fold_into<T: Scalar>(total: &mut [T], part: &mut [T]) {
    for (t, p) in total.iter_mut().zip(part.iter_mut()) {
        *t = *t + *p;
        *p = T::zero();
    }
}

/// Contiguous `[L×d_h]` copy of every head.
fn split_heads<T: Scalar>(x: &Tensor<T>, heads: usize) -> Vec<Vec<T>> {
    let (l, c) = (x.shape()[0], x.shape()[1]);
    let d = c / heads;
    (0..heads)
        .map(|h| {
            let mut out = Vec::with_capacity(l * d);
            for row in x.data().chunks_exact(c) {
                out.extend_from_slice(&row[h * d..(h + 1) * d]);
            }
            out
        })
        .collect()
}

fn merge_heads<T: Scalar>(parts: &[Vec<T>], rows: usize, c: usize) -> Result<Tensor<T>> {
    let d = c / parts.len();
    let mut data = vec![T::zero(); rows * c];
    for (h, part) in parts.iter().enumerate() {
        for (i, src) in part.chunks_exact(d).enumerate() {
            data[i * c + h * d..i * c + (h + 1) * d].copy_from_slice(src);
        }
    }
    Tensor::new(&[rows, c], data)
}

/// Right-associated attention `Q·(Kᵀ V)` with per-query normalizer `Q·ΣK + ε`; cost `O(L·C·d_h)`.
pub fn linear_cross_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    spec: &AttentionSpec,
) -> Result<Tensor<T>> {
    let d = spec.check(q.dims2()?, k.dims2()?, v.dims2()?)?;
    let (lq, c) = q.dims2()?;
    let heads = spec.heads;
    let factor = T::of(spec.factor(c));
    let eps = T::of(spec.eps);

    // Per head: kv[a][b] = Σ_j k_ja v_jb and s[a] = Σ_j k_ja, laid out head-major.
    let mut kv = vec![T::zero(); heads * d * d];
    let mut ksum = vec![T::zero(); c];
    let mut part_kv = kv.clone();
    let mut part_s = ksum.clone();
    let rows = k.data().chunks_exact(c).zip(v.data().chunks_exact(c));
    let lk = k.shape()[0];
    for (j, (krow, vrow)) in rows.enumerate() {
        for h in 0..heads {
            let (kh, vh) = (&krow[h * d..(h + 1) * d], &vrow[h * d..(h + 1) * d]);
            let block = &mut part_kv[h * d * d..(h + 1) * d * d];
            for (a, &ka) in kh.iter().enumerate() {
                part_s[h * d + a] = part_s[h * d + a] + ka;
                for (o, &vb) in block[a * d..(a + 1) * d].iter_mut().zip(vh) {
                    *o = *o + ka * vb;
                }
            }
        }
        if (j + 1) % BLOCK == 0 || j + 1 == lk {
            fold_into(&mut kv, &mut part_kv);
            fold_into(&mut ksum, &mut part_s);
        }
    }
    kv.iter_mut().for_each(|x| *x = *x * factor);

    let mut out = vec![T::zero(); lq * c];
    for (qrow, orow) in q.data().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        for h in 0..heads {
            let qh = &qrow[h * d..(h + 1) * d];
            let oh = &mut orow[h * d..(h + 1) * d];
            let block = &kv[h * d * d..(h + 1) * d * d];
            let mut den = eps;
            for (a, &qa) in qh.iter().enumerate() {
                den = den + qa * ksum[h * d + a];
                for (o, &kvab) in oh.iter_mut().zip(&block[a * d..(a + 1) * d]) {
                    *o = *o + qa * kvab;
                }
            }
            oh.iter_mut().for_each(|o| *o = *o / den);
        }
    }
    Tensor::new(&[lq, c], out)
}

/// `Σ_j a_j v_j` and `Σ_j a_j` for one query row, in blocked order.
fn weighted_row<T: Scalar>(scores: impl Iterator<Item = T>, values: &[T], d: usize, num: &mut [T]) -> T {
    let mut den = T::zero();
    let mut part_den = T::zero();
    let mut part = vec![T::zero(); d];
    num.iter_mut().for_each(|x| *x = T::zero());
    let n = values.len() / d;
    for (j, (a, vrow)) in scores.zip(values.chunks_exact(d)).enumerate() {
        part_den = part_den + a;
        for (p, &vb) in part.iter_mut().zip(vrow) {
            *p = *p + a * vb;
        }
        if (j + 1) % BLOCK == 0 || j + 1 == n {
            den = den + part_den;
            part_den = T::zero();
            fold_into(num, &mut part);
        }
    }
    den
}

/// Left-associated reference: materializes each head's `L_q×L_k` score matrix `Q Kᵀ`.
pub fn quadratic_oracle<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    spec: &AttentionSpec,
) -> Result<Tensor<T>> {
    let d = spec.check(q.dims2()?, k.dims2()?, v.dims2()?)?;
    let (lq, c) = q.dims2()?;
    let lk = k.shape()[0];
    let entries = lq.saturating_mul(lk);
    if entries > QUADRATIC_GUARD {
        return Err(Error::MemoryGuard(entries));
    }
    let factor = T::of(spec.factor(c));
    let eps = T::of(spec.eps);
    let (qh, kh, vh) = (split_heads(q, spec.heads), split_heads(k, spec.heads), split_heads(v, spec.heads));
    let mut parts = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let mut scores = vec![T::zero(); entries];
        for (qrow, srow) in qh[h].chunks_exact(d).zip(scores.chunks_exact_mut(lk)) {
            for (krow, s) in kh[h].chunks_exact(d).zip(srow.iter_mut()) {
                *s = dot(qrow, krow);
            }
        }
        let mut out = vec![T::zero(); lq * d];
        for (srow, orow) in scores.chunks_exact(lk).zip(out.chunks_exact_mut(d)) {
            let den = weighted_row(srow.iter().copied(), &vh[h], d, orow) + eps;
            orow.iter_mut().for_each(|o| *o = *o * factor / den);
        }
        parts.push(out);
    }
    merge_heads(&parts, lq, c)
}

/// Same arithmetic as [`quadratic_oracle`] one query row at a time, without the memory guard.
pub fn quadratic_tiled<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    spec: &AttentionSpec,
) -> Result<Tensor<T>> {
    let d = spec.check(q.dims2()?, k.dims2()?, v.dims2()?)?;
    let (lq, c) = q.dims2()?;
    let factor = T::of(spec.factor(c));
    let eps = T::of(spec.eps);
    let (qh, kh, vh) = (split_heads(q, spec.heads), split_heads(k, spec.heads), split_heads(v, spec.heads));
    let mut parts = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let mut out = vec![T::zero(); lq * d];
        for (qrow, orow) in qh[h].chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let scores = kh[h].chunks_exact(d).map(|krow| dot(qrow, krow));
            let den = weighted_row(scores, &vh[h], d, orow) + eps;
            orow.iter_mut().for_each(|o| *o = *o * factor / den);
        }
        parts.push(out);
    }
    merge_heads(&parts, lq, c)
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
