use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const ROPE_BASE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopeMode {
    /// One rotation angle per flattened row-major index.
    #[default]
    Flat,
    /// First half of each head follows the row index, second half the column index.
    Axial,
    Off,
}

/// Cosine/sine factors for every position and channel pair of one head.
#[derive(Clone, Debug)]
pub struct RopeTable {
    positions: usize,
    head_dim: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    /// Pair `k` at position `m` turns by `m · base^(−2k/d_h)`.
    pub fn flat(positions: usize, head_dim: usize) -> Result<Self> {
        check_head_dim(head_dim, 2)?;
        let pairs = head_dim / 2;
        let freqs: Vec<f64> = (0..pairs).map(|k| ROPE_BASE.powf(-2.0 * k as f64 / head_dim as f64)).collect();
        Ok(Self::from_angles(positions, head_dim, |m, k| m as f64 * freqs[k]))
    }

    /// Row-major grid of `height × width`; each axis gets half the pairs with its own frequency ladder.
    pub fn axial(height: usize, width: usize, head_dim: usize) -> Result<Self> {
        check_head_dim(head_dim, 4)?;
        let quarter = head_dim / 4;
        let half = head_dim / 2;
        let freqs: Vec<f64> = (0..quarter).map(|k| ROPE_BASE.powf(-2.0 * k as f64 / half as f64)).collect();
        Ok(Self::from_angles(height * width, head_dim, |m, k| {
            let (v, u) = (m / width, m % width);
            if k < quarter {
                v as f64 * freqs[k]
            } else {
                u as f64 * freqs[k - quarter]
            }
        }))
    }

    pub fn identity(positions: usize, head_dim: usize) -> Result<Self> {
        check_head_dim(head_dim, 2)?;
        Ok(Self::from_angles(positions, head_dim, |_, _| 0.0))
    }

    /// Table for a `height × width` map flattened row-major.
    pub fn for_grid(mode: RopeMode, height: usize, width: usize, head_dim: usize) -> Result<Self> {
        match mode {
            RopeMode::Flat => Self::flat(height * width, head_dim),
            RopeMode::Axial => Self::axial(height, width, head_dim),
            RopeMode::Off => Self::identity(height * width, head_dim),
        }
    }

    fn from_angles(positions: usize, head_dim: usize, angle: impl Fn(usize, usize) -> f64) -> Self {
        let pairs = head_dim / 2;
        let mut cos = Vec::with_capacity(positions * pairs);
        let mut sin = Vec::with_capacity(positions * pairs);
        for m in 0..positions {
            for k in 0..pairs {
                let (s, c) = angle(m, k).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        Self { positions, head_dim, cos, sin }
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Rotates every head of every row of `x[L×C]` in place.
    pub fn apply<T: Scalar>(&self, x: &mut Tensor<T>) -> Result<()> {
        let (l, c) = x.dims2()?;
        if l > self.positions {
            return Err(Error::RopeOverflow { capacity: self.positions, requested: l });
        }
        if c % self.head_dim != 0 {
            return Err(Error::Dimension(format!("{c} channels do not split into heads of {}", self.head_dim)));
        }
        let pairs = self.head_dim / 2;
        for m in 0..l {
            let cos = &self.cos[m * pairs..(m + 1) * pairs];
            let sin = &self.sin[m * pairs..(m + 1) * pairs];
            for head in x.row_mut(m).chunks_exact_mut(self.head_dim) {
                for (k, pair) in head.chunks_exact_mut(2).enumerate() {
                    let (c, s) = (T::of(cos[k]), T::of(sin[k]));
                    let (a, b) = (pair[0], pair[1]);
                    pair[0] = a * c - b * s;
                    pair[1] = a * s + b * c;
                }
            }
        }
        Ok(())
    }
}

fn check_head_dim(head_dim: usize, multiple: usize) -> Result<()> {
    if head_dim == 0 || head_dim % multiple != 0 {
        return Err(Error::Dimension(format!("head dim {head_dim} must be a positive multiple of {multiple}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{normal_tensor, seeded_rng};

    fn head_norms(x: &Tensor<f64>, d: usize) -> Vec<f64> {
        x.data().chunks(d).map(|h| h.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }

    #[test]
    fn preserves_head_norms() {
        let mut rng = seeded_rng(8);
        for table in [RopeTable::flat(300, 8).unwrap(), RopeTable::axial(15, 20, 8).unwrap()] {
            let x: Tensor<f64> = normal_tensor(&[300, 16], 1.0, &mut rng);
            let mut y = x.clone();
            table.apply(&mut y).unwrap();
            for (a, b) in head_norms(&x, 8).iter().zip(head_norms(&y, 8)) {
                assert!((a - b).abs() <= 1e-5 * a.max(1.0));
            }
        }
    }

    #[test]
    fn position_zero_is_identity() {
        let mut rng = seeded_rng(9);
        let x: Tensor<f64> = normal_tensor(&[4, 8], 1.0, &mut rng);
        let mut y = x.clone();
        RopeTable::flat(4, 4).unwrap().apply(&mut y).unwrap();
        assert_eq!(y.row(0), x.row(0));
        assert_ne!(y.row(1), x.row(1));
    }

    #[test]
    fn pair_zero_turns_one_radian_per_position() {
        let mut x = Tensor::<f64>::from_fn(&[3, 2], |i| if i[1] == 0 { 1.0 } else { 0.0 });
        RopeTable::flat(3, 2).unwrap().apply(&mut x).unwrap();
        assert!((x.get(&[2, 0]) - 2f64.cos()).abs() < 1e-15);
        assert!((x.get(&[2, 1]) - 2f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn overflow_is_reported() {
        let mut x = Tensor::<f32>::zeros(&[5, 4]);
        assert!(matches!(
            RopeTable::flat(4, 4).unwrap().apply(&mut x),
            Err(Error::RopeOverflow { capacity: 4, requested: 5 })
        ));
    }

    #[test]
    fn axial_needs_four_divisible_heads() {
        assert!(RopeTable::axial(2, 2, 6).is_err());
        assert!(RopeTable::flat(2, 3).is_err());
    }

    #[test]
    fn axial_rows_share_column_rotation() {
        // Positions in the same column differ only in the row-indexed half.
        let t = RopeTable::axial(3, 4, 4).unwrap();
        let mut x = Tensor::<f64>::full(&[12, 4], 1.0);
        t.apply(&mut x).unwrap();
        assert_eq!(&x.row(1)[2..], &x.row(5)[2..]);
        assert_eq!(&x.row(4)[..2], &x.row(7)[..2]);
    }
}
