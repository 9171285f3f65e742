//! Supervised dice loss and teacher-student consistency losses, each returned
//! with its gradient with respect to the student probability maps only.
//!
//! Teacher outputs and pseudo labels enter as plain `&ProbMap` targets; no
//! gradient is ever produced for them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::volume::ProbMap;

/// Dice smoothing constant.
pub const DICE_EPS: f64 = 1e-5;

/// A scalar loss and its gradients, one per student argument in the order
/// documented on the producing function.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

impl LossValue {
    /// Zero loss with zero gradients for `args` maps of `len` entries.
    pub fn zero(args: usize, len: usize) -> Self {
        Self {
            value: 0.0,
            grads: vec![vec![0.0; len]; args],
        }
    }

    /// Loss with no student arguments at all.
    pub fn none() -> Self {
        Self {
            value: 0.0,
            grads: Vec::new(),
        }
    }

    fn scaled(mut self, s: f64) -> Self {
        self.value *= s;
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v *= s);
        }
        self
    }

    fn concat(mut self, other: LossValue) -> Self {
        self.value += other.value;
        self.grads.extend(other.grads);
        self
    }
}

/// Class-mean soft dice loss over all classes, background included:
/// `1 - (1/C) sum_c (2 sum P_c Y_c + eps) / (sum P_c + sum Y_c + eps)`.
/// Gradient: `grads[0]` with respect to `p`.
pub fn soft_dice_loss(p: &ProbMap, y: &ProbMap) -> Result<LossValue> {
    p.check_same_shape(y)?;
    let classes = p.classes();
    let n = p.dims().len();
    let mut grad = vec![0.0; classes * n];
    let mut score = 0.0;
    for c in 0..classes {
        let pc = p.channel(c);
        let yc = y.channel(c);
        let inter: f64 = pc.iter().zip(yc).map(|(a, b)| a * b).sum();
        let sp: f64 = pc.iter().sum();
        let sy: f64 = yc.iter().sum();
        let num = 2.0 * inter + DICE_EPS;
        let den = sp + sy + DICE_EPS;
        score += num / den;
        let g = &mut grad[c * n..(c + 1) * n];
        for (gv, &yv) in g.iter_mut().zip(yc) {
            *gv = -(2.0 * yv * den - num) / (den * den) / classes as f64;
        }
    }
    Ok(LossValue {
        value: 1.0 - score / classes as f64,
        grads: vec![grad],
    })
}

/// Mean squared difference over all voxels and channels. Gradient:
/// `grads[0]` with respect to the student map `ps`.
pub fn mse_consistency(ps: &ProbMap, pt: &ProbMap) -> Result<LossValue> {
    ps.check_same_shape(pt)?;
    let count = ps.data().len() as f64;
    let mut value = 0.0;
    let grad = ps
        .data()
        .iter()
        .zip(pt.data())
        .map(|(a, b)| {
            let d = a - b;
            value += d * d;
            2.0 * d / count
        })
        .collect();
    Ok(LossValue {
        value: value / count,
        grads: vec![grad],
    })
}

/// `dice(p_s, y) + dice(p_sft, y)`. Gradients: `[d p_s, d p_sft]`.
pub fn seg_loss(p_s: &ProbMap, p_sft: &ProbMap, y_s: &ProbMap) -> Result<LossValue> {
    Ok(soft_dice_loss(p_s, y_s)?.concat(soft_dice_loss(p_sft, y_s)?))
}

/// Dual appearance consistency: the student on the original target view is
/// pulled to the teacher on the swapped view and vice versa.
/// Gradients: `[d f_xt, d f_xtfs]`.
pub fn appearance_consistency(
    f_xt: &ProbMap,
    f_xtfs: &ProbMap,
    teacher_xt: &ProbMap,
    teacher_xtfs: &ProbMap,
) -> Result<LossValue> {
    Ok(mse_consistency(f_xt, teacher_xtfs)?.concat(mse_consistency(f_xtfs, teacher_xt)?))
}

/// Consistency of the student on cuboid-mixed inputs with mixed teacher
/// predictions. `pseudo_t` must be built from teacher outputs on the swapped
/// views and pairs with the student on the mixed original views, and
/// `pseudo_tfs` the other way round, each with the same box as the student
/// input. Gradients: `[d f_xt_sp, d f_xtfs_sp]`.
pub fn structure_consistency(
    f_xt_sp: &ProbMap,
    f_xtfs_sp: &ProbMap,
    pseudo_t: &ProbMap,
    pseudo_tfs: &ProbMap,
) -> Result<LossValue> {
    Ok(mse_consistency(f_xt_sp, pseudo_t)?.concat(mse_consistency(f_xtfs_sp, pseudo_tfs)?))
}

/// `L_seg + lambda * (L_app + L_str)`. Gradients are the segmentation
/// gradients followed by the consistency gradients scaled by `lambda`; pass
/// [`LossValue::none`] for a disabled term.
pub fn total_loss(seg: LossValue, app: LossValue, structure: LossValue, lambda: f64) -> LossValue {
    seg.concat(app.concat(structure).scaled(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{one_hot, Dims, LabelMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_probs(classes: usize, dims: Dims, seed: u64) -> ProbMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len();
        let mut data = vec![0.0; classes * n];
        for p in 0..n {
            let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for c in 0..classes {
                data[c * n + p] = raw[c] / s;
            }
        }
        ProbMap::new(classes, dims, data).unwrap()
    }

    fn labels(dims: Dims, classes: u8, seed: u64) -> LabelMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LabelMap::new(dims, (0..dims.len()).map(|_| rng.gen_range(0..classes)).collect()).unwrap()
    }

    /// Voxel-by-voxel dice with per-class sums accumulated in a scalar loop.
    fn reference_dice(p: &ProbMap, y: &ProbMap) -> f64 {
        let n = p.dims().len();
        let mut total = 0.0;
        for c in 0..p.classes() {
            let (mut i, mut a, mut b) = (0.0, 0.0, 0.0);
            for q in 0..n {
                i += p.prob(c, q) * y.prob(c, q);
                a += p.prob(c, q);
                b += y.prob(c, q);
            }
            total += (2.0 * i + 1e-5) / (a + b + 1e-5);
        }
        1.0 - total / p.classes() as f64
    }

    #[test]
    fn dice_perfect_and_disjoint() {
        let y = one_hot(&labels(Dims::cube(4), 3, 1), 3).unwrap();
        assert!(soft_dice_loss(&y, &y).unwrap().value < 1e-4);

        let y = one_hot(&LabelMap::new(Dims::new(1, 1, 4), vec![0, 0, 1, 1]).unwrap(), 2).unwrap();
        let p = one_hot(&LabelMap::new(Dims::new(1, 1, 4), vec![1, 1, 0, 0]).unwrap(), 2).unwrap();
        let v = soft_dice_loss(&p, &y).unwrap().value;
        assert!((v - 1.0).abs() < 1e-5);
    }

    #[test]
    fn dice_uniform_balanced_matches_reference() {
        let dims = Dims::new(2, 2, 2);
        let y = one_hot(&LabelMap::new(dims, vec![0, 1, 0, 1, 0, 1, 0, 1]).unwrap(), 2).unwrap();
        let p = ProbMap::uniform(2, dims);
        let v = soft_dice_loss(&p, &y).unwrap().value;
        // Closed form: each class has overlap 2, sums 4 and 4.
        let closed = 1.0 - (4.0 + 1e-5) / (8.0 + 1e-5);
        assert!((v - closed).abs() < 1e-12);
        assert!((v - reference_dice(&p, &y)).abs() < 1e-6);
    }

    #[test]
    fn dice_random_matches_reference_and_range() {
        for seed in 0..5 {
            let dims = Dims::new(3, 4, 5);
            let p = random_probs(4, dims, seed);
            let y = one_hot(&labels(dims, 4, seed + 10), 4).unwrap();
            let v = soft_dice_loss(&p, &y).unwrap().value;
            assert!((v - reference_dice(&p, &y)).abs() < 1e-12);
            assert!((0.0..=1.0 + 1e-6).contains(&v));
        }
    }

    #[test]
    fn dice_gradient_matches_differences() {
        let dims = Dims::new(2, 3, 2);
        let p = random_probs(3, dims, 4);
        let y = one_hot(&labels(dims, 3, 5), 3).unwrap();
        let g = &soft_dice_loss(&p, &y).unwrap().grads[0];
        let h = 1e-6;
        for i in 0..p.data().len() {
            let mut up = p.clone();
            up.data_mut()[i] += h;
            let mut dn = p.clone();
            dn.data_mut()[i] -= h;
            let fd = (soft_dice_loss(&up, &y).unwrap().value - soft_dice_loss(&dn, &y).unwrap().value) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn mse_examples() {
        let dims = Dims::cube(3);
        let a = random_probs(2, dims, 1);
        assert_eq!(mse_consistency(&a, &a).unwrap().value, 0.0);

        let shifted = ProbMap::new(2, dims, a.data().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((mse_consistency(&shifted, &a).unwrap().value - 0.01).abs() < 1e-12);

        let b = random_probs(2, dims, 2);
        let mut naive = 0.0;
        for c in 0..2 {
            for q in 0..dims.len() {
                naive += (a.prob(c, q) - b.prob(c, q)).powi(2);
            }
        }
        naive /= (2 * dims.len()) as f64;
        let l = mse_consistency(&a, &b).unwrap();
        assert!((l.value - naive).abs() < 1e-7);
        for (i, g) in l.grads[0].iter().enumerate() {
            assert!((g - 2.0 * (a.data()[i] - b.data()[i]) / 54.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = random_probs(2, Dims::cube(3), 1);
        let b = random_probs(3, Dims::cube(3), 1);
        let c = random_probs(2, Dims::cube(4), 1);
        assert!(mse_consistency(&a, &b).is_err());
        assert!(soft_dice_loss(&a, &c).is_err());
    }

    #[test]
    fn seg_loss_is_sum_of_dice() {
        let dims = Dims::cube(3);
        let y = one_hot(&labels(dims, 3, 7), 3).unwrap();
        let (p1, p2) = (random_probs(3, dims, 1), random_probs(3, dims, 2));
        let l = seg_loss(&p1, &p2, &y).unwrap();
        let d1 = soft_dice_loss(&p1, &y).unwrap();
        let d2 = soft_dice_loss(&p2, &y).unwrap();
        assert_eq!(l.value, d1.value + d2.value);
        assert_eq!(l.grads[0], d1.grads[0]);
        // Gradient for the first prediction does not depend on the second.
        let l2 = seg_loss(&p1, &random_probs(3, dims, 9), &y).unwrap();
        assert_eq!(l.grads[0], l2.grads[0]);
        assert!(seg_loss(&y, &y, &y).unwrap().value < 2e-4);
    }

    #[test]
    fn appearance_terms() {
        let dims = Dims::cube(3);
        let s = random_probs(2, dims, 1);
        let t = random_probs(2, dims, 2);
        assert_eq!(appearance_consistency(&s, &s, &s, &s).unwrap().value, 0.0);
        assert!(appearance_consistency(&s, &t, &s, &t).unwrap().value > 0.0);

        let (a, b, c, d) = (random_probs(2, dims, 3), random_probs(2, dims, 4), random_probs(2, dims, 5), random_probs(2, dims, 6));
        let l = appearance_consistency(&a, &b, &c, &d).unwrap();
        let swapped = appearance_consistency(&b, &a, &d, &c).unwrap();
        assert!((l.value - swapped.value).abs() < 1e-15);
        let termwise = mse_consistency(&a, &d).unwrap().value + mse_consistency(&b, &c).unwrap().value;
        assert!((l.value - termwise).abs() < 1e-7);
    }

    #[test]
    fn structure_terms() {
        use crate::perturb::{pseudo_label, CuboidMask};
        let dims = Dims::cube(4);
        let (a, b) = (random_probs(3, dims, 1), random_probs(3, dims, 2));
        assert_eq!(structure_consistency(&a, &b, &a, &b).unwrap().value, 0.0);

        // Full box: the pseudo label is the partner's teacher output.
        let (t_own, t_partner) = (random_probs(3, dims, 3), random_probs(3, dims, 4));
        let pseudo = pseudo_label(&t_own, &t_partner, &CuboidMask::full(dims)).unwrap();
        let l = structure_consistency(&a, &b, &pseudo, &pseudo).unwrap();
        let expected = mse_consistency(&a, &t_partner).unwrap().value + mse_consistency(&b, &t_partner).unwrap().value;
        assert!((l.value - expected).abs() < 1e-7);
    }

    #[test]
    fn total_loss_arithmetic() {
        let seg = LossValue { value: 0.7, grads: vec![vec![1.0; 4]] };
        assert_eq!(total_loss(seg.clone(), LossValue::none(), LossValue::none(), 0.0).value, 0.7);
        let zero = LossValue::zero(2, 4);
        assert_eq!(total_loss(seg.clone(), zero.clone(), zero, 1.0).value, 0.7);
        let unit = LossValue { value: 1.0, grads: vec![vec![0.5; 4]] };
        let t = total_loss(seg, unit.clone(), unit, 200.0);
        assert_eq!(t.value, 0.7 + 400.0);
        assert_eq!(t.grads.len(), 3);
        assert_eq!(t.grads[1], vec![100.0; 4]);
    }
}
