use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::AnchorBev;

/// Copies the anchor window out of an `H×W×C` map.
pub fn crop_instance<T: Scalar>(bev: &Tensor<T>, anchor: &AnchorBev) -> Result<Tensor<T>> {
    let (h, w, c) = bev.dims3()?;
    if !anchor.fits(h, w) {
        return Err(Error::Bounds(format!("{anchor:?} for a {h}×{w} grid")));
    }
    let (oh, ow) = (anchor.height(), anchor.width());
    let mut out = Vec::with_capacity(oh * ow * c);
    let data = bev.data();
    for v in anchor.min_v..=anchor.max_v {
        let start = (v * w + anchor.min_u) * c;
        out.extend_from_slice(&data[start..start + ow * c]);
    }
    Tensor::new(&[oh, ow, c], out)
}

/// Adds a crop-shaped gradient back into the full-map gradient.
pub fn crop_backward<T: Scalar>(grad_bev: &mut Tensor<T>, anchor: &AnchorBev, grad_crop: &Tensor<T>) -> Result<()> {
    let (h, w, c) = grad_bev.dims3()?;
    if !anchor.fits(h, w) {
        return Err(Error::Bounds(format!("{anchor:?} for a {h}×{w} grid")));
    }
    let (ch, cw, cc) = grad_crop.dims3()?;
    if (ch, cw, cc) != (anchor.height(), anchor.width(), c) {
        return Err(Error::Dimension(format!("crop gradient {:?} does not match {anchor:?}", grad_crop.shape())));
    }
    let src = grad_crop.data();
    let dst = grad_bev.data_mut();
    for (row, v) in (anchor.min_v..=anchor.max_v).enumerate() {
        let d0 = (v * w + anchor.min_u) * c;
        let s0 = row * cw * c;
        for (d, &s) in dst[d0..d0 + cw * c].iter_mut().zip(&src[s0..s0 + cw * c]) {
            *d = *d + s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{normal_tensor, seeded_rng};
    use rand::Rng;

    #[test]
    fn full_anchor_is_identity() {
        let mut rng = seeded_rng(4);
        let bev: Tensor<f64> = normal_tensor(&[6, 9, 3], 1.0, &mut rng);
        let a = AnchorBev { min_u: 0, min_v: 0, max_u: 8, max_v: 5 };
        assert_eq!(crop_instance(&bev, &a).unwrap(), bev);
    }

    #[test]
    fn single_cell_anchor() {
        let bev = Tensor::<f64>::from_fn(&[4, 4, 2], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64);
        let a = AnchorBev { min_u: 3, min_v: 1, max_u: 3, max_v: 1 };
        let crop = crop_instance(&bev, &a).unwrap();
        assert_eq!(crop.shape(), &[1, 1, 2]);
        assert_eq!(crop.data(), &[130.0, 131.0]);
    }

    #[test]
    fn random_crops_match_indexing() {
        let mut rng = seeded_rng(12);
        let bev: Tensor<f64> = normal_tensor(&[11, 13, 3], 1.0, &mut rng);
        for _ in 0..50 {
            let (u0, u1) = { let a = rng.random_range(0..13); let b = rng.random_range(0..13); (a.min(b), a.max(b)) };
            let (v0, v1) = { let a = rng.random_range(0..11); let b = rng.random_range(0..11); (a.min(b), a.max(b)) };
            let anchor = AnchorBev { min_u: u0, min_v: v0, max_u: u1, max_v: v1 };
            let crop = crop_instance(&bev, &anchor).unwrap();
            assert_eq!(crop.shape(), &[v1 - v0 + 1, u1 - u0 + 1, 3]);
            for r in 0..crop.shape()[0] {
                for c in 0..crop.shape()[1] {
                    for k in 0..3 {
                        assert_eq!(crop.get(&[r, c, k]), bev.get(&[v0 + r, u0 + c, k]));
                    }
                }
            }
        }
    }

    #[test]
    fn anchor_outside_grid() {
        let bev = Tensor::<f64>::zeros(&[4, 4, 1]);
        let a = AnchorBev { min_u: 2, min_v: 0, max_u: 4, max_v: 1 };
        assert!(matches!(crop_instance(&bev, &a), Err(Error::Bounds(_))));
    }

    #[test]
    fn backward_is_adjoint_of_crop() {
        let mut rng = seeded_rng(8);
        let bev: Tensor<f64> = normal_tensor(&[7, 6, 2], 1.0, &mut rng);
        let a = AnchorBev { min_u: 1, min_v: 2, max_u: 4, max_v: 5 };
        let g: Tensor<f64> = normal_tensor(&[4, 4, 2], 1.0, &mut rng);
        let mut gb = Tensor::zeros(&[7, 6, 2]);
        crop_backward(&mut gb, &a, &g).unwrap();
        let lhs: f64 = crop_instance(&bev, &a).unwrap().data().iter().zip(g.data()).map(|(x, y)| x * y).sum();
        let rhs: f64 = bev.data().iter().zip(gb.data()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
