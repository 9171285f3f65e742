//! Dense 3D grids: intensity volumes, label maps and per-voxel class
//! probability maps.
//!
//! All grids are row-major with W varying fastest, so voxel `(z, y, x)` lives
//! at `(z * H + y) * W + x`. Probability maps stack C such grids channel-first.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Grid shape `(D, H, W)` in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(d: usize, h: usize, w: usize) -> Self {
        Self { d, h, w }
    }

    pub const fn cube(n: usize) -> Self {
        Self { d: n, h: n, w: n }
    }

    pub const fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    /// Inverse of [`Dims::index`].
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.w;
        let y = (i / self.w) % self.h;
        let z = i / (self.w * self.h);
        (z, y, x)
    }

    pub(crate) fn check_positive(&self) -> Result<()> {
        if self.d == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::ZeroDim(*self));
        }
        Ok(())
    }

    pub(crate) fn check_same(&self, other: &Dims) -> Result<()> {
        if self != other {
            return Err(Error::DimsMismatch {
                left: *self,
                right: *other,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.d, self.h, self.w)
    }
}

/// Real-valued scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    data: Vec<f32>,
}

impl Volume {
    /// Fails on a zero axis, a length mismatch or any non-finite value.
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        dims.check_positive()?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                dims,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.d {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    data.push(f(z, y, x));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.dims.index(z, y, x)]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        libm::sqrt(var)
    }
}

/// Integer class labels, one per voxel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: Dims,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        dims.check_positive()?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                dims,
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        self.data[self.dims.index(z, y, x)]
    }

    /// Voxel count per class for classes `0..classes`; labels outside are ignored.
    pub fn histogram(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.data {
            if let Some(c) = counts.get_mut(l as usize) {
                *c += 1;
            }
        }
        counts
    }

    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&l| l as usize >= classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }
}

/// Per-voxel class probabilities, channel-first `(C, D, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    classes: usize,
    dims: Dims,
    data: Vec<f64>,
}

impl ProbMap {
    /// Wraps raw channel-first data. Only the length is checked; callers that
    /// build maps from arbitrary numbers should use [`ProbMap::check_simplex`].
    pub fn new(classes: usize, dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.check_positive()?;
        let expected = classes * dims.len();
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            classes,
            dims,
            data,
        })
    }

    pub fn uniform(classes: usize, dims: Dims) -> Self {
        Self {
            classes,
            dims,
            data: vec![1.0 / classes as f64; classes * dims.len()],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn prob(&self, c: usize, voxel: usize) -> f64 {
        self.data[c * self.dims.len() + voxel]
    }

    pub(crate) fn check_same_shape(&self, other: &ProbMap) -> Result<()> {
        self.dims.check_same(&other.dims)?;
        if self.classes != other.classes {
            return Err(Error::SizeMismatch {
                expected: self.classes,
                actual: other.classes,
            });
        }
        Ok(())
    }

    /// Largest deviation of any per-voxel channel sum from 1, or `None` if a
    /// value falls outside `[0, 1]`.
    pub fn check_simplex(&self) -> Option<f64> {
        let n = self.dims.len();
        let mut worst = 0.0f64;
        for p in 0..n {
            let mut sum = 0.0;
            for c in 0..self.classes {
                let v = self.data[c * n + p];
                if !(0.0..=1.0).contains(&v) {
                    return None;
                }
                sum += v;
            }
            worst = worst.max((sum - 1.0).abs());
        }
        Some(worst)
    }

    /// Per-voxel argmax; ties resolve to the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let n = self.dims.len();
        let data = (0..n)
            .map(|p| {
                let mut best = 0;
                let mut best_v = self.data[p];
                for c in 1..self.classes {
                    let v = self.data[c * n + p];
                    if v > best_v {
                        best = c;
                        best_v = v;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap {
            dims: self.dims,
            data,
        }
    }
}

/// Shifts and scales to zero mean and unit population variance. Inputs with
/// standard deviation below 1e-8 map to all zeros.
pub fn znormalize(v: &Volume) -> Volume {
    let mean = v.mean();
    let std = v.std();
    let data = if std < 1e-8 {
        vec![0.0; v.data.len()]
    } else {
        v.data
            .iter()
            .map(|&x| ((x as f64 - mean) / std) as f32)
            .collect()
    };
    Volume {
        dims: v.dims,
        data,
    }
}

pub fn one_hot(y: &LabelMap, classes: usize) -> Result<ProbMap> {
    y.check_classes(classes)?;
    let n = y.dims.len();
    let mut data = vec![0.0; classes * n];
    for (p, &l) in y.data.iter().enumerate() {
        data[l as usize * n + p] = 1.0;
    }
    Ok(ProbMap {
        classes,
        dims: y.dims,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn znormalize_two_voxels() {
        let v = Volume::new(Dims::new(1, 1, 2), vec![1.0, 3.0]).unwrap();
        assert_eq!(znormalize(&v).data(), &[-1.0, 1.0]);
    }

    #[test]
    fn znormalize_constant_is_zero() {
        let v = Volume::filled(Dims::cube(3), 5.0);
        assert!(znormalize(&v).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn znormalize_idempotent() {
        let v = Volume::from_fn(Dims::cube(4), |z, y, x| (z * 7 + y * 3 + x) as f32 * 0.37);
        let once = znormalize(&v);
        let twice = znormalize(&once);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn one_hot_examples() {
        let y = LabelMap::new(Dims::cube(1), vec![2]).unwrap();
        assert_eq!(one_hot(&y, 4).unwrap().data(), &[0.0, 0.0, 1.0, 0.0]);

        let y = LabelMap::new(Dims::cube(2), vec![0; 8]).unwrap();
        let p = one_hot(&y, 2).unwrap();
        assert!(p.channel(0).iter().all(|&v| v == 1.0));
        assert!(p.channel(1).iter().all(|&v| v == 0.0));

        let y = LabelMap::new(Dims::cube(1), vec![3]).unwrap();
        assert_eq!(
            one_hot(&y, 3),
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3
            })
        );
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Volume::new(Dims::new(2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Volume::new(Dims::new(0, 2, 2), vec![]).is_err());
        assert_eq!(
            Volume::new(Dims::new(1, 1, 2), vec![0.0, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        );
    }

    #[test]
    fn argmax_tie_breaks_low() {
        let p = ProbMap::uniform(3, Dims::cube(2));
        assert!(p.argmax().data().iter().all(|&l| l == 0));
    }

    #[test]
    fn coords_inverse_of_index() {
        let d = Dims::new(3, 4, 5);
        for i in 0..d.len() {
            let (z, y, x) = d.coords(i);
            assert_eq!(d.index(z, y, x), i);
        }
    }

    proptest! {
        #[test]
        fn znormalize_moments(data in proptest::collection::vec(-100.0f32..100.0, 2..200)) {
            let n = data.len();
            let v = Volume::new(Dims::new(1, 1, n), data).unwrap();
            prop_assume!(v.std() > 1e-3);
            let z = znormalize(&v);
            prop_assert!(z.mean().abs() < 1e-5);
            prop_assert!((z.std() - 1.0).abs() < 1e-5);
        }

        #[test]
        fn one_hot_argmax_roundtrip(labels in proptest::collection::vec(0u8..5, 27)) {
            let y = LabelMap::new(Dims::cube(3), labels).unwrap();
            let p = one_hot(&y, 5).unwrap();
            prop_assert_eq!(p.check_simplex(), Some(0.0));
            prop_assert_eq!(p.argmax(), y);
        }
    }
}
