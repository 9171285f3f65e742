//! Cuboid structure perturbation: a single random axis-aligned box selects
//! which of two volumes (or two probability maps) each voxel is taken from.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::volume::{Dims, ProbMap, Volume};

pub const MIN_FRACTION: f64 = 0.20;
pub const MAX_FRACTION: f64 = 0.55;

const TARGET_FRACTION: (f64, f64) = (0.25, 0.5);
const JITTER: (f64, f64) = (0.8, 1.25);
const MAX_ATTEMPTS: usize = 64;

/// Axis-aligned box fully contained in a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CuboidMask {
    pub origin: [usize; 3],
    pub size: [usize; 3],
    pub dims: Dims,
}

impl CuboidMask {
    /// Box covering the entire grid.
    pub fn full(dims: Dims) -> Self {
        Self {
            origin: [0; 3],
            size: dims.as_array(),
            dims,
        }
    }

    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z, y, x];
        (0..3).all(|k| p[k] >= self.origin[k] && p[k] < self.origin[k] + self.size[k])
    }

    pub fn voxel_count(&self) -> usize {
        self.size.iter().product()
    }

    pub fn fraction(&self) -> f64 {
        self.voxel_count() as f64 / self.dims.len() as f64
    }

    pub fn is_contained(&self) -> bool {
        let d = self.dims.as_array();
        (0..3).all(|k| self.size[k] >= 1 && self.origin[k] + self.size[k] <= d[k])
    }

    /// Flat indices of the voxels inside the box, in layout order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        let [oz, oy, ox] = self.origin;
        let [lz, ly, lx] = self.size;
        (oz..oz + lz).flat_map(move |z| {
            (oy..oy + ly).flat_map(move |y| {
                let row = self.dims.index(z, y, 0);
                (row + ox..row + ox + lx).map(move |i| i)
            })
        })
    }
}

/// Draws a box whose volume fraction targets `Uniform[0.25, 0.5]`.
///
/// Per-axis side fractions start at the cube root of the target, get an
/// independent `Uniform[0.8, 1.25]` jitter and are renormalized so their
/// product is the target again. Integer rounding can push the realized
/// fraction outside `[0.20, 0.55]` on tiny grids, in which case the draw is
/// repeated.
pub fn sample_cuboid<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Result<CuboidMask> {
    if dims.as_array().iter().any(|&n| n < 4) {
        return Err(Error::GridTooSmall(dims));
    }
    let sizes = dims.as_array();
    for _ in 0..MAX_ATTEMPTS {
        let f = rng.gen_range(TARGET_FRACTION.0..=TARGET_FRACTION.1);
        let jitter: [f64; 3] = core::array::from_fn(|_| rng.gen_range(JITTER.0..=JITTER.1));
        let norm = libm::cbrt(jitter.iter().product::<f64>());
        let base = libm::cbrt(f);
        let size: [usize; 3] = core::array::from_fn(|k| {
            let side = libm::round(base * jitter[k] / norm * sizes[k] as f64) as usize;
            side.clamp(1, sizes[k])
        });
        let origin: [usize; 3] = core::array::from_fn(|k| rng.gen_range(0..=sizes[k] - size[k]));
        let mask = CuboidMask { origin, size, dims };
        if (MIN_FRACTION..=MAX_FRACTION).contains(&mask.fraction()) {
            return Ok(mask);
        }
    }
    Err(Error::GridTooSmall(dims))
}

/// Grids that can be mixed voxel-wise under a cuboid.
pub trait Blend: Sized {
    fn spatial_dims(&self) -> Dims;
    /// Copy of `self` with the voxels at `indices` taken from `other`.
    /// Shapes must already agree.
    fn take_from(&self, other: &Self, indices: &mut dyn Iterator<Item = usize>) -> Self;
    fn check_compatible(&self, other: &Self) -> Result<()>;
}

impl Blend for Volume {
    fn spatial_dims(&self) -> Dims {
        self.dims()
    }

    fn take_from(&self, other: &Self, indices: &mut dyn Iterator<Item = usize>) -> Self {
        let mut data: Vec<f32> = self.data().to_vec();
        for i in indices {
            data[i] = other.data()[i];
        }
        Volume::new(self.dims(), data).expect("blend of valid volumes is valid")
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        self.dims().check_same(&other.dims())
    }
}

impl Blend for ProbMap {
    fn spatial_dims(&self) -> Dims {
        self.dims()
    }

    fn take_from(&self, other: &Self, indices: &mut dyn Iterator<Item = usize>) -> Self {
        let n = self.dims().len();
        let mut out = self.clone();
        let data = out.data_mut();
        for i in indices {
            for c in 0..self.classes() {
                data[c * n + i] = other.data()[c * n + i];
            }
        }
        out
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        self.check_same_shape(other)
    }
}

/// `b` inside the box, `a` outside. Probability vectors are moved whole.
pub fn blend<T: Blend>(a: &T, b: &T, m: &CuboidMask) -> Result<T> {
    a.check_compatible(b)?;
    a.spatial_dims().check_same(&m.dims)?;
    Ok(a.take_from(b, &mut m.indices()))
}

/// Mixes two teacher predictions with the same box used for the student's
/// mixed input. The result is a training target and carries no gradient.
pub fn pseudo_label(pa: &ProbMap, pb: &ProbMap, m: &CuboidMask) -> Result<ProbMap> {
    blend(pa, pb, m)
}
