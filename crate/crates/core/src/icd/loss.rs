use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 100.0;
const NORM_FLOOR: f64 = 1e-12;

/// Teacher (`a`) and student (`b`) embeddings, row `i` of both taken from the same instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstancePairBatch {
    a: Tensor<f64>,
    b: Tensor<f64>,
}

impl InstancePairBatch {
    pub fn new(a: Tensor<f64>, b: Tensor<f64>) -> Result<Self> {
        let (n, e) = a.dims2()?;
        if b.shape() != [n, e] {
            return Err(Error::Dimension(format!("teacher {:?} vs student {:?}", a.shape(), b.shape())));
        }
        if n < 2 {
            return Err(Error::InsufficientNegatives(n));
        }
        Ok(Self { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn embedding_len(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn teacher(&self) -> &Tensor<f64> {
        &self.a
    }

    pub fn student(&self) -> &Tensor<f64> {
        &self.b
    }
}

/// Learnable temperature `τ = exp(rho)`, clamped to `[0.01, 100]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub rho: f64,
}

impl Temperature {
    pub fn from_tau(tau: f64) -> Self {
        Self { rho: tau.ln() }
    }

    pub fn tau(&self) -> f64 {
        self.rho.exp().clamp(TAU_MIN, TAU_MAX)
    }

    /// `dτ/drho`; zero where the clamp is active.
    pub fn dtau_drho(&self) -> f64 {
        let raw = self.rho.exp();
        if (TAU_MIN..=TAU_MAX).contains(&raw) {
            raw
        } else {
            0.0
        }
    }
}

/// Which pairs enter the softmax denominator of row `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Negatives only, `j ∈ I \ {i}`.
    #[default]
    ExcludePositive,
    /// Every `j ∈ I` (standard NT-Xent).
    IncludePositive,
}

impl Denominator {
    pub fn from_flag(include_positive: bool) -> Self {
        if include_positive {
            Denominator::IncludePositive
        } else {
            Denominator::ExcludePositive
        }
    }

    fn admits(self, i: usize, j: usize) -> bool {
        self == Denominator::IncludePositive || i != j
    }
}

fn unit_rows(t: &Tensor<f64>, side: &'static str) -> Result<(Tensor<f64>, Vec<f64>)> {
    let (n, _) = t.dims2()?;
    let mut unit = t.clone();
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = unit.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= NORM_FLOOR) {
            return Err(Error::DegenerateEmbedding { side, row: i });
        }
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((unit, norms))
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn similarity_of_units(ua: &Tensor<f64>, ub: &Tensor<f64>) -> Tensor<f64> {
    let n = ua.shape()[0];
    Tensor::from_fn(&[n, n], |ix| dot(ua.row(ix[0]), ub.row(ix[1])).clamp(-1.0, 1.0))
}

/// `M[i][j] = a_i·b_j / (‖a_i‖‖b_j‖)`.
pub fn cosine_similarity_matrix(batch: &InstancePairBatch) -> Result<Tensor<f64>> {
    let (ua, _) = unit_rows(&batch.a, "teacher")?;
    let (ub, _) = unit_rows(&batch.b, "student")?;
    Ok(similarity_of_units(&ua, &ub))
}

/// Per-row softmax weights over the admitted columns of `M / τ` and each row's loss term.
fn row_softmax(m: &Tensor<f64>, tau: f64, mode: Denominator) -> (Tensor<f64>, Vec<f64>) {
    let n = m.shape()[0];
    let mut probs = Tensor::zeros(&[n, n]);
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let row = m.row(i);
        let max = (0..n).filter(|&j| mode.admits(i, j)).map(|j| row[j] / tau).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let p = probs.row_mut(i);
        for j in (0..n).filter(|&j| mode.admits(i, j)) {
            p[j] = (row[j] / tau - max).exp();
            z += p[j];
        }
        p.iter_mut().for_each(|v| *v /= z);
        let lse = max + z.ln();
        terms.push(-(row[i] / tau - lse));
    }
    (probs, terms)
}

/// `L = −Σ_i log( exp(M_ii/τ) / Σ_j exp(M_ij/τ) )` with `j` ranging per `mode`.
pub fn icd_loss(m: &Tensor<f64>, temp: Temperature, mode: Denominator) -> Result<f64> {
    let (n, n2) = m.dims2()?;
    if n != n2 {
        return Err(Error::Dimension(format!("similarity matrix must be square, got {:?}", m.shape())));
    }
    if n < 2 {
        return Err(Error::InsufficientNegatives(n));
    }
    let (_, terms) = row_softmax(m, temp.tau(), mode);
    Ok(terms.iter().sum())
}

#[derive(Clone, Debug)]
pub struct IcdGrads {
    pub loss: f64,
    pub similarity: Tensor<f64>,
    pub d_teacher: Tensor<f64>,
    pub d_student: Tensor<f64>,
    pub d_rho: f64,
}

/// Loss and analytical gradients through cosine normalization and `τ = exp(rho)`.
pub fn icd_loss_grad(batch: &InstancePairBatch, temp: Temperature, mode: Denominator) -> Result<IcdGrads> {
    let n = batch.len();
    let (ua, na) = unit_rows(&batch.a, "teacher")?;
    let (ub, nb) = unit_rows(&batch.b, "student")?;
    let m = similarity_of_units(&ua, &ub);
    let tau = temp.tau();
    let (probs, terms) = row_softmax(&m, tau, mode);
    let loss = terms.iter().sum();

    // dL/dlogit_ij = p_ij − δ_ij, logits = M/τ.
    let mut g_logits = probs;
    for i in 0..n {
        let v = g_logits.get(&[i, i]) - 1.0;
        g_logits.set(&[i, i], v);
    }
    let d_tau: f64 = -g_logits.data().iter().zip(m.data()).map(|(g, s)| g * s).sum::<f64>() / (tau * tau);
    let g_sim = g_logits.scale(1.0 / tau);

    let e = batch.embedding_len();
    let mut d_ua = Tensor::zeros(&[n, e]);
    let mut d_ub = Tensor::zeros(&[n, e]);
    for i in 0..n {
        for j in 0..n {
            let g = g_sim.get(&[i, j]);
            if g == 0.0 {
                continue;
            }
            for (d, &v) in d_ua.row_mut(i).iter_mut().zip(ub.row(j)) {
                *d += g * v;
            }
            for (d, &v) in d_ub.row_mut(j).iter_mut().zip(ua.row(i)) {
                *d += g * v;
            }
        }
    }
    Ok(IcdGrads {
        loss,
        similarity: m,
        d_teacher: normalize_backward(&ua, &na, &d_ua),
        d_student: normalize_backward(&ub, &nb, &d_ub),
        d_rho: d_tau * temp.dtau_drho(),
    })
}

/// Pulls a gradient on unit rows `x/‖x‖` back to `x`.
fn normalize_backward(unit: &Tensor<f64>, norms: &[f64], grad_unit: &Tensor<f64>) -> Tensor<f64> {
    let mut out = grad_unit.clone();
    for (i, &norm) in norms.iter().enumerate() {
        let proj = dot(unit.row(i), grad_unit.row(i));
        for (o, &u) in out.row_mut(i).iter_mut().zip(unit.row(i)) {
            *o = (*o - u * proj) / norm;
        }
    }
    out
}

/// Mean of the diagonal of a similarity matrix.
pub fn mean_positive_similarity(m: &Tensor<f64>) -> f64 {
    let n = m.shape()[0];
    (0..n).map(|i| m.get(&[i, i])).sum::<f64>() / n as f64
}

/// Fraction of rows whose largest entry sits on the diagonal (ties count as misses).
pub fn retrieval_accuracy(m: &Tensor<f64>) -> f64 {
    let n = m.shape()[0];
    let hits = (0..n)
        .filter(|&i| {
            let row = m.row(i);
            (0..n).all(|j| j == i || row[j] < row[i])
        })
        .count();
    hits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{normal_tensor, seeded_rng};
    use proptest::prelude::*;

    fn pair(a: Vec<f64>, b: Vec<f64>, n: usize) -> InstancePairBatch {
        let e = a.len() / n;
        InstancePairBatch::new(Tensor::new(&[n, e], a).unwrap(), Tensor::new(&[n, e], b).unwrap()).unwrap()
    }

    fn central_fd(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Tensor<f64> {
        let mut g = Tensor::zeros(x.shape());
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[k] += h;
            let mut xm = x.clone();
            xm.data_mut()[k] -= h;
            g.data_mut()[k] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn loss_of(a: &Tensor<f64>, b: &Tensor<f64>, t: Temperature, mode: Denominator) -> f64 {
        let batch = InstancePairBatch::new(a.clone(), b.clone()).unwrap();
        icd_loss(&cosine_similarity_matrix(&batch).unwrap(), t, mode).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn orthonormal_rows_give_identity() {
        let b = pair(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3);
        assert_eq!(cosine_similarity_matrix(&b).unwrap(), Tensor::identity(3));
    }

    #[test]
    fn antipodal_pair_is_minus_one() {
        let b = pair(vec![0.3, -1.2, 2.0, 1.0], vec![-0.3, 1.2, 1.0, 1.0], 2);
        assert!((cosine_similarity_matrix(&b).unwrap().get(&[0, 0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn forty_five_degree_similarity() {
        let b = pair(vec![1.0, 1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0, 0.0], 2);
        assert!((cosine_similarity_matrix(&b).unwrap().get(&[0, 0]) - 0.707_106_781_186_547_5).abs() < 1e-15);
    }

    #[test]
    fn zero_row_is_degenerate() {
        let b = pair(vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], 2);
        assert!(matches!(cosine_similarity_matrix(&b), Err(Error::DegenerateEmbedding { side: "teacher", row: 1 })));
    }

    #[test]
    fn needs_two_instances() {
        let one = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(InstancePairBatch::new(one.clone(), one), Err(Error::InsufficientNegatives(1))));
        let m = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        assert!(matches!(icd_loss(&m, Temperature::from_tau(1.0), Denominator::ExcludePositive), Err(Error::InsufficientNegatives(1))));
    }

    #[test]
    fn literal_form_identity_case() {
        // −Σ log(e¹/e⁰) over two rows.
        let m = Tensor::identity(2);
        let l = icd_loss(&m, Temperature { rho: 0.0 }, Denominator::ExcludePositive).unwrap();
        assert!((l + 2.0).abs() < 1e-12);
    }

    #[test]
    fn standard_form_identity_case() {
        let m = Tensor::identity(2);
        let l = icd_loss(&m, Temperature { rho: 0.0 }, Denominator::IncludePositive).unwrap();
        assert!((l - 0.626_523_4).abs() < 1e-6);
        assert!((l - 2.0 * (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn hot_temperature_flattens_the_loss() {
        let l = icd_loss(&Tensor::identity(2), Temperature::from_tau(100.0), Denominator::ExcludePositive).unwrap();
        assert!(l.abs() <= 0.02 + 1e-12);
    }

    #[test]
    fn temperature_clamps() {
        assert_eq!(Temperature { rho: -20.0 }.tau(), TAU_MIN);
        assert_eq!(Temperature { rho: 20.0 }.tau(), TAU_MAX);
        assert_eq!(Temperature { rho: 20.0 }.dtau_drho(), 0.0);
        assert!((Temperature::from_tau(0.5).tau() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn stable_at_cold_temperature() {
        let mut rng = seeded_rng(3);
        let a: Tensor<f64> = normal_tensor(&[6, 5], 1.0, &mut rng);
        let b: Tensor<f64> = normal_tensor(&[6, 5], 1.0, &mut rng);
        let g = icd_loss_grad(&InstancePairBatch::new(a, b).unwrap(), Temperature::from_tau(TAU_MIN), Denominator::IncludePositive).unwrap();
        assert!(g.loss.is_finite() && g.d_student.all_finite());
    }

    #[test]
    fn student_gradient_raises_positive_similarity() {
        // a = b orthonormal: stepping against dL/db must not lower any positive similarity.
        let a = Tensor::new(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::new(&[2, 3], vec![0.9, 0.3, 0.2, 0.1, 0.8, -0.3]).unwrap();
        let batch = InstancePairBatch::new(a.clone(), b.clone()).unwrap();
        let g = icd_loss_grad(&batch, Temperature { rho: 0.0 }, Denominator::ExcludePositive).unwrap();
        let stepped = b.sub(&g.d_student.scale(1e-3)).unwrap();
        let m0 = cosine_similarity_matrix(&batch).unwrap();
        let m1 = cosine_similarity_matrix(&InstancePairBatch::new(a, stepped).unwrap()).unwrap();
        for i in 0..2 {
            assert!(m1.get(&[i, i]) > m0.get(&[i, i]));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5u64 {
            for mode in [Denominator::ExcludePositive, Denominator::IncludePositive] {
                let mut rng = seeded_rng(seed);
                let a: Tensor<f64> = normal_tensor(&[4, 8], 1.0, &mut rng);
                let b: Tensor<f64> = normal_tensor(&[4, 8], 1.0, &mut rng);
                let t = Temperature::from_tau(0.5);
                let g = icd_loss_grad(&InstancePairBatch::new(a.clone(), b.clone()).unwrap(), t, mode).unwrap();
                let fa = central_fd(|x| loss_of(x, &b, t, mode), &a, 1e-4);
                let fb = central_fd(|x| loss_of(&a, x, t, mode), &b, 1e-4);
                for (x, y) in g.d_teacher.data().iter().zip(fa.data()).chain(g.d_student.data().iter().zip(fb.data())) {
                    assert!(rel_err(*x, *y) <= 1e-4, "seed {seed} {mode:?}: {x} vs {y}");
                }
                let h = 1e-4;
                let fr = (loss_of(&a, &b, Temperature { rho: t.rho + h }, mode)
                    - loss_of(&a, &b, Temperature { rho: t.rho - h }, mode))
                    / (2.0 * h);
                assert!(rel_err(g.d_rho, fr) <= 1e-4);
            }
        }
    }

    #[test]
    fn teacher_gradient_is_orthogonal_and_scales_inversely() {
        let mut rng = seeded_rng(9);
        let a: Tensor<f64> = normal_tensor(&[4, 8], 1.0, &mut rng);
        let b: Tensor<f64> = normal_tensor(&[4, 8], 1.0, &mut rng);
        let t = Temperature { rho: 0.0 };
        let mode = Denominator::ExcludePositive;
        let g1 = icd_loss_grad(&InstancePairBatch::new(a.clone(), b.clone()).unwrap(), t, mode).unwrap();
        let mut a2 = a.clone();
        a2.row_mut(2).iter_mut().for_each(|v| *v *= 2.0);
        let g2 = icd_loss_grad(&InstancePairBatch::new(a2.clone(), b.clone()).unwrap(), t, mode).unwrap();
        let fd = central_fd(|x| loss_of(x, &b, t, mode), &a2, 1e-4);
        for k in 0..8 {
            let (x1, x2) = (g1.d_teacher.row(2)[k], g2.d_teacher.row(2)[k]);
            assert!((x1 / 2.0 - x2).abs() < 1e-12);
            assert!(rel_err(x2, fd.row(2)[k]) <= 1e-4);
        }
        assert!(dot(g1.d_teacher.row(2), a.row(2)).abs() < 1e-12);
    }

    #[test]
    fn literal_loss_minimum_on_grid() {
        // N = 2, flag on: brute-force M over [−1, 1]^{2×2}.
        let t = Temperature { rho: 0.0 };
        let steps: Vec<f64> = (0..=20).map(|k| -1.0 + 0.1 * k as f64).collect();
        let mut best = (f64::INFINITY, [0.0; 4]);
        for &p in &steps {
            for &q in &steps {
                for &r in &steps {
                    for &s in &steps {
                        let m = Tensor::new(&[2, 2], vec![p, q, r, s]).unwrap();
                        let l = icd_loss(&m, t, Denominator::IncludePositive).unwrap();
                        if l < best.0 {
                            best = (l, [p, q, r, s]);
                        }
                    }
                }
            }
        }
        let [p, q, r, s] = best.1;
        assert!((p - 1.0).abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        assert!((q + 1.0).abs() < 1e-9 && (r + 1.0).abs() < 1e-9);
    }

    #[test]
    fn retrieval_metrics() {
        let m = Tensor::new(&[3, 3], vec![0.9, 0.1, 0.2, 0.95, 0.5, 0.1, 0.0, 0.0, 0.0]).unwrap();
        assert!((retrieval_accuracy(&m) - 1.0 / 3.0).abs() < 1e-15);
        assert!((mean_positive_similarity(&m) - 1.4 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn loss_invariant_under_row_rescaling(seed in 0u64..500, k in 0usize..5, scale in 0.01f64..100.0) {
            let mut rng = seeded_rng(seed);
            let a: Tensor<f64> = normal_tensor(&[5, 6], 1.0, &mut rng);
            let b: Tensor<f64> = normal_tensor(&[5, 6], 1.0, &mut rng);
            let t = Temperature::from_tau(0.3);
            let base = loss_of(&a, &b, t, Denominator::ExcludePositive);
            let mut b2 = b.clone();
            b2.row_mut(k).iter_mut().for_each(|v| *v *= scale);
            let mut a2 = a.clone();
            a2.row_mut((k + 1) % 5).iter_mut().for_each(|v| *v *= scale);
            prop_assert!((loss_of(&a2, &b2, t, Denominator::ExcludePositive) - base).abs() <= 1e-5);
        }

        #[test]
        fn loss_invariant_under_joint_permutation(seed in 0u64..500, shift in 1usize..5) {
            let mut rng = seeded_rng(seed);
            let a: Tensor<f64> = normal_tensor(&[5, 6], 1.0, &mut rng);
            let b: Tensor<f64> = normal_tensor(&[5, 6], 1.0, &mut rng);
            let perm = |t: &Tensor<f64>| Tensor::from_fn(&[5, 6], |ix| t.get(&[(ix[0] + shift) % 5, ix[1]]));
            for mode in [Denominator::ExcludePositive, Denominator::IncludePositive] {
                let t = Temperature::from_tau(0.7);
                prop_assert!((loss_of(&a, &b, t, mode) - loss_of(&perm(&a), &perm(&b), t, mode)).abs() < 1e-12);
            }
        }

        #[test]
        fn similarity_is_bounded(seed in 0u64..1000) {
            let mut rng = seeded_rng(seed);
            let a: Tensor<f64> = normal_tensor(&[4, 3], 1.0, &mut rng);
            let b: Tensor<f64> = normal_tensor(&[4, 3], 1.0, &mut rng);
            let m = cosine_similarity_matrix(&InstancePairBatch::new(a, b).unwrap()).unwrap();
            prop_assert!(m.data().iter().all(|v| v.abs() <= 1.0 + 1e-6));
        }
    }
}
