//! Synthetic two-domain phantoms.
//!
//! Every phantom is a set of concentric nested ellipsoids (background plus
//! one class per shell). The source domain renders each class at a constant
//! intensity with light blur and noise. The target domain reuses the same
//! anatomy family but renders it with shifted class intensities, a gamma
//! curve and a smooth multiplicative bias field; its abnormal subset also
//! deforms the shells.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::Subset;
use crate::volume::{Dims, LabelMap, Volume};

const SOURCE_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;
const BIAS_STREAM: u64 = 3;
const TAG_STREAM: u64 = 4;
const HELD_OUT_TARGET_STREAM: u64 = 5;
const HELD_OUT_TAG_STREAM: u64 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    /// Semi-axes of each foreground shell as fractions of the grid size,
    /// outermost first. Class `k + 1` is the region inside shell `k` but
    /// outside shell `k + 1`.
    pub semi_axes: Vec<[f64; 3]>,
    /// Source intensity per class, background first.
    pub source_intensity: Vec<f64>,
    /// Target intensity per class before the gamma curve.
    pub target_intensity: Vec<f64>,
    /// Exponent of the target curve `x -> x_max (x / x_max)^gamma`.
    pub target_gamma: f64,
    pub noise_sigma: f64,
    /// Gaussian blur standard deviation in voxels; 0 disables blurring.
    pub blur_sigma: f64,
    /// Relative per-sample jitter of centre and semi-axes.
    pub jitter: f64,
    /// Per-axis relative deformation range `[min, max]` of abnormal shells.
    pub abnormal_range: (f64, f64),
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: Dims::cube(24),
            semi_axes: vec![[0.44, 0.40, 0.46], [0.32, 0.28, 0.33], [0.20, 0.17, 0.19]],
            // The brightest class is the outer shell, so the small inner
            // classes sit between other intensities rather than at an extreme.
            source_intensity: vec![0.0, 3.0, 1.0, 2.0],
            target_intensity: vec![1.8, 3.0, 2.2, 2.6],
            target_gamma: 0.5,
            noise_sigma: 0.15,
            blur_sigma: 0.6,
            jitter: 0.05,
            abnormal_range: (0.10, 0.25),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn classes(&self) -> usize {
        self.semi_axes.len() + 1
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.check_positive()?;
        let c = self.classes();
        if c > 256 {
            return Err(Error::InvalidConfig("at most 256 classes"));
        }
        if self.source_intensity.len() != c || self.target_intensity.len() != c {
            return Err(Error::InvalidConfig("one intensity per class required"));
        }
        for pair in self.semi_axes.windows(2) {
            if (0..3).any(|k| pair[1][k] >= pair[0][k]) {
                return Err(Error::InvalidConfig("semi-axes must be strictly nested"));
            }
        }
        if self.semi_axes.iter().flatten().any(|&a| !(a > 0.0 && a < 0.5)) {
            return Err(Error::InvalidConfig("semi-axes must lie in (0, 0.5)"));
        }
        let mut sorted = self.source_intensity.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[1] - w[0] < 3.0 * self.noise_sigma) {
            return Err(Error::InvalidConfig(
                "source intensities must differ by at least three noise sigmas",
            ));
        }
        let (src, tgt) = (&self.source_intensity, &self.target_intensity);
        let order_kept = (0..c).all(|i| (0..c).all(|j| !(src[i] < src[j]) || tgt[i] < tgt[j]));
        if !order_kept || tgt.iter().any(|&t| t < 0.0) {
            return Err(Error::InvalidConfig(
                "target intensities must be nonnegative and ordered like the source",
            ));
        }
        if !(self.target_gamma > 0.0) || self.noise_sigma < 0.0 || self.blur_sigma < 0.0 {
            return Err(Error::InvalidConfig("invalid appearance parameters"));
        }
        let (lo, hi) = self.abnormal_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidConfig("abnormal range must satisfy 0 <= min <= max < 1"));
        }
        Ok(())
    }
}

/// Generated target sample; labels are for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample {
    pub volume: Volume,
    pub labels: LabelMap,
    pub subset: Subset,
}

/// Ellipsoid shells of one phantom, in voxel units.
#[derive(Debug, Clone, PartialEq)]
pub struct Anatomy {
    pub center: [f64; 3],
    pub semi_axes: Vec<[f64; 3]>,
}

impl Anatomy {
    pub fn inside(&self, shell: usize, z: usize, y: usize, x: usize) -> bool {
        let p = [z as f64, y as f64, x as f64];
        let a = &self.semi_axes[shell];
        (0..3)
            .map(|k| {
                let d = (p[k] - self.center[k]) / a[k];
                d * d
            })
            .sum::<f64>()
            <= 1.0
    }

    pub fn labels(&self, dims: Dims) -> LabelMap {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.d {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    let label = (0..self.semi_axes.len())
                        .take_while(|&s| self.inside(s, z, y, x))
                        .count();
                    data.push(label as u8);
                }
            }
        }
        LabelMap::new(dims, data).expect("dims are positive")
    }
}

fn sample_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 40) | index);
    rng
}

fn jittered_anatomy(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Anatomy {
    let d = spec.dims.as_array();
    let j = spec.jitter;
    let center = core::array::from_fn(|k| {
        (d[k] as f64 - 1.0) / 2.0 + rng.gen_range(-j..=j) * d[k] as f64
    });
    let scale: [f64; 3] = core::array::from_fn(|_| 1.0 + rng.gen_range(-j..=j));
    let semi_axes = spec
        .semi_axes
        .iter()
        .map(|a| core::array::from_fn(|k| a[k] * scale[k] * d[k] as f64))
        .collect();
    Anatomy { center, semi_axes }
}

/// Per-shell deformation: every axis of a shell is scaled by `1 + s r_k` with a
/// common sign `s` per shell and `r_k` drawn from the abnormal range. Inner
/// shells are then clamped to stay inside their parent.
fn deform(anatomy: &mut Anatomy, spec: &PhantomSpec, rng: &mut ChaCha8Rng) {
    let (lo, hi) = spec.abnormal_range;
    for shell in &mut anatomy.semi_axes {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for a in shell.iter_mut() {
            *a *= 1.0 + sign * rng.gen_range(lo..=hi);
        }
    }
    for s in 1..anatomy.semi_axes.len() {
        let parent = anatomy.semi_axes[s - 1];
        for k in 0..3 {
            anatomy.semi_axes[s][k] = anatomy.semi_axes[s][k].min(0.9 * parent[k]);
        }
    }
    let limit = spec.dims.as_array();
    for k in 0..3 {
        let max = 0.5 * limit[k] as f64 - 0.5;
        anatomy.semi_axes[0][k] = anatomy.semi_axes[0][k].min(max);
    }
}

fn gaussian_blur(dims: Dims, data: &mut [f64], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = libm::ceil(3.0 * sigma) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let sizes = dims.as_array();
    let strides = [dims.h * dims.w, dims.w, 1];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = sizes[axis];
        let stride = strides[axis];
        for base in 0..dims.len() {
            if (base / stride) % n != 0 {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|i| data[base + i * stride]));
            for i in 0..n {
                let mut acc = 0.0;
                for (t, &k) in kernel.iter().enumerate() {
                    // Replicate edges.
                    let j = (i as isize + t as isize - radius).clamp(0, n as isize - 1) as usize;
                    acc += k * line[j];
                }
                data[base + i * stride] = acc;
            }
        }
    }
}

fn render(labels: &LabelMap, intensity: &[f64], blur_sigma: f64) -> Vec<f64> {
    let mut data: Vec<f64> = labels.data().iter().map(|&l| intensity[l as usize]).collect();
    gaussian_blur(labels.dims(), &mut data, blur_sigma);
    data
}

fn add_noise(data: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for v in data.iter_mut() {
        *v += normal.sample(rng);
    }
}

fn to_volume(dims: Dims, data: Vec<f64>) -> Volume {
    Volume::new(dims, data.into_iter().map(|v| v as f32).collect()).expect("finite rendering")
}

/// Labeled source-domain phantoms.
pub fn gen_source(n: usize, spec: &PhantomSpec) -> Result<Vec<(Volume, LabelMap)>> {
    spec.validate()?;
    Ok((0..n)
        .map(|i| {
            let mut rng = sample_rng(spec.seed, SOURCE_STREAM, i as u64);
            let labels = jittered_anatomy(spec, &mut rng).labels(spec.dims);
            let mut data = render(&labels, &spec.source_intensity, spec.blur_sigma);
            add_noise(&mut data, spec.noise_sigma, &mut rng);
            (to_volume(spec.dims, data), labels)
        })
        .collect())
}

/// Target-domain phantoms with a shuffled `round(n * abnormal_fraction)`
/// abnormal samples.
pub fn gen_target(n: usize, spec: &PhantomSpec, abnormal_fraction: f64) -> Result<Vec<TargetSample>> {
    target_samples(n, spec, abnormal_fraction, [TARGET_STREAM, TAG_STREAM])
}

fn target_samples(
    n: usize,
    spec: &PhantomSpec,
    abnormal_fraction: f64,
    [sample_stream, tag_stream]: [u64; 2],
) -> Result<Vec<TargetSample>> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&abnormal_fraction) {
        return Err(Error::InvalidConfig("abnormal fraction must lie in [0, 1]"));
    }
    let abnormal = libm::round(n as f64 * abnormal_fraction) as usize;
    let mut tags: Vec<Subset> = (0..n)
        .map(|i| if i < abnormal { Subset::Abnormal } else { Subset::Normal })
        .collect();
    tags.shuffle(&mut sample_rng(spec.seed, tag_stream, 0));
    let x_max = spec.target_intensity.iter().cloned().fold(0.0, f64::max);
    Ok(tags
        .into_iter()
        .enumerate()
        .map(|(i, subset)| {
            let mut rng = sample_rng(spec.seed, sample_stream, i as u64);
            let mut anatomy = jittered_anatomy(spec, &mut rng);
            if subset == Subset::Abnormal {
                deform(&mut anatomy, spec, &mut rng);
            }
            let labels = anatomy.labels(spec.dims);
            let mut data = render(&labels, &spec.target_intensity, spec.blur_sigma);
            if x_max > 0.0 {
                for v in data.iter_mut() {
                    *v = x_max * libm::pow((*v / x_max).max(0.0), spec.target_gamma);
                }
            }
            let bias = bias_field(spec.dims, rng.gen());
            for (v, &b) in data.iter_mut().zip(bias.data()) {
                *v *= b as f64;
            }
            add_noise(&mut data, spec.noise_sigma, &mut rng);
            TargetSample {
                volume: to_volume(spec.dims, data),
                labels,
                subset,
            }
        })
        .collect())
}

/// Set sizes of the standard benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkSizes {
    pub source: usize,
    pub target_train: usize,
    pub target_test: usize,
    pub abnormal_fraction: f64,
}

impl Default for BenchmarkSizes {
    fn default() -> Self {
        Self {
            source: 20,
            target_train: 20,
            target_test: 20,
            abnormal_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub source: Vec<(Volume, LabelMap)>,
    pub target_train: Vec<TargetSample>,
    /// Drawn from streams disjoint from `target_train`.
    pub target_test: Vec<TargetSample>,
}

pub fn gen_benchmark(spec: &PhantomSpec, sizes: BenchmarkSizes) -> Result<Benchmark> {
    Ok(Benchmark {
        source: gen_source(sizes.source, spec)?,
        target_train: gen_target(sizes.target_train, spec, sizes.abnormal_fraction)?,
        target_test: target_samples(
            sizes.target_test,
            spec,
            sizes.abnormal_fraction,
            [HELD_OUT_TARGET_STREAM, HELD_OUT_TAG_STREAM],
        )?,
    })
}

/// Smooth multiplicative field `1 + a S(x)`, where `S` is a random mix of
/// separable cosine products with at most two cycles per axis. The all-zero
/// frequency is excluded, so the grid mean is exactly 1, and `a` is the
/// largest value keeping the field in `[0.7, 1.3]` with neighbouring voxels
/// differing by less than 0.05.
pub fn bias_field(dims: Dims, seed: u64) -> Volume {
    const TERMS: usize = 6;
    let mut rng = sample_rng(seed, BIAS_STREAM, 0);
    let sizes = dims.as_array();
    let mut field = vec![0.0f64; dims.len()];
    for _ in 0..TERMS {
        let mut freq: [u32; 3] = core::array::from_fn(|_| rng.gen_range(0..=2));
        if freq == [0, 0, 0] {
            freq[rng.gen_range(0..3)] = 1;
        }
        let phase: [f64; 3] = core::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
        let coeff: f64 = rng.gen_range(-1.0..=1.0);
        let axis_wave = |k: usize, i: usize| {
            libm::cos(2.0 * PI * freq[k] as f64 * i as f64 / sizes[k] as f64 + phase[k])
        };
        for (q, v) in field.iter_mut().enumerate() {
            let (z, y, x) = dims.coords(q);
            *v += coeff * axis_wave(0, z) * axis_wave(1, y) * axis_wave(2, x);
        }
    }
    let peak = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let strides = [dims.h * dims.w, dims.w, 1];
    let mut steepest = 0.0f64;
    for (q, &v) in field.iter().enumerate() {
        let (z, y, x) = dims.coords(q);
        let c = [z, y, x];
        for k in 0..3 {
            if c[k] + 1 < sizes[k] {
                steepest = steepest.max((field[q + strides[k]] - v).abs());
            }
        }
    }
    let mut a: f64 = 0.3;
    if peak > 0.0 {
        a = a.min(0.3 / peak);
    }
    if steepest > 0.0 {
        a = a.min(0.049 / steepest);
    }
    to_volume(dims, field.into_iter().map(|v| 1.0 + a * v).collect())
}

/// Wasserstein-1 distance between the value distributions of two equally
/// sized volumes (mean absolute difference of the sorted values).
pub fn histogram_distance(a: &Volume, b: &Volume) -> Result<f64> {
    a.dims().check_same(&b.dims())?;
    let mut sa: Vec<f32> = a.data().to_vec();
    let mut sb: Vec<f32> = b.data().to_vec();
    sa.sort_by(f32::total_cmp);
    sb.sort_by(f32::total_cmp);
    Ok(sa
        .iter()
        .zip(&sb)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum::<f64>()
        / sa.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::amplitude_swap;
    use crate::volume::znormalize;
    use std::collections::BTreeSet;

    #[test]
    fn default_spec_is_valid() {
        PhantomSpec::default().validate().unwrap();
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = PhantomSpec::default();
        s.semi_axes[1] = [0.5, 0.1, 0.1];
        assert!(s.validate().is_err());
        let s = PhantomSpec {
            noise_sigma: 0.4,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = PhantomSpec {
            target_intensity: vec![0.5, 2.0, 3.0, 2.5],
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn source_has_all_classes_and_nesting() {
        let spec = PhantomSpec::default();
        let (_, labels) = gen_source(1, &spec).unwrap().remove(0);
        assert!(labels.histogram(4).iter().all(|&c| c > 0));
        // Re-derive the anatomy and check class-3 voxels sit inside shell 1.
        let mut rng = sample_rng(spec.seed, SOURCE_STREAM, 0);
        let anatomy = jittered_anatomy(&spec, &mut rng);
        for q in 0..spec.dims.len() {
            let (z, y, x) = spec.dims.coords(q);
            if labels.data()[q] == 3 {
                assert!(anatomy.inside(1, z, y, x) && anatomy.inside(0, z, y, x));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = PhantomSpec {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(gen_source(2, &spec).unwrap(), gen_source(2, &spec).unwrap());
        assert_eq!(gen_target(2, &spec, 0.5).unwrap(), gen_target(2, &spec, 0.5).unwrap());
        assert_ne!(gen_source(1, &spec).unwrap(), gen_source(1, &spec.with_seed(10)).unwrap());
    }

    #[test]
    fn clean_source_is_piecewise_constant() {
        let spec = PhantomSpec {
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            ..Default::default()
        };
        let (v, _) = gen_source(1, &spec).unwrap().remove(0);
        let distinct: BTreeSet<u32> = v.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn abnormal_fraction_tags() {
        let spec = PhantomSpec::default();
        let normal = gen_target(6, &spec, 0.0).unwrap();
        assert!(normal.iter().all(|s| s.subset == Subset::Normal));
        let half = gen_target(10, &spec, 0.5).unwrap();
        assert_eq!(half.iter().filter(|s| s.subset == Subset::Abnormal).count(), 5);
        assert!(gen_target(2, &spec, 1.5).is_err());
    }

    #[test]
    fn target_histograms_shifted() {
        let spec = PhantomSpec::default();
        let source = gen_source(6, &spec).unwrap();
        let target = gen_target(6, &spec, 0.0).unwrap();
        let mut cross = 0.0;
        let mut baseline = 0.0;
        for i in 0..6 {
            let s = znormalize(&source[i].0);
            let t = znormalize(&target[i].volume);
            cross += histogram_distance(&s, &t).unwrap();
            baseline += histogram_distance(&s, &znormalize(&source[(i + 1) % 6].0)).unwrap();
        }
        assert!(cross > 5.0 * baseline, "cross {cross} baseline {baseline}");
    }

    #[test]
    fn amplitude_swap_closes_appearance_gap() {
        let spec = PhantomSpec::default();
        let source = gen_source(20, &spec).unwrap();
        let target = gen_target(20, &spec, 0.5).unwrap();
        let (mut before, mut after) = (0.0, 0.0);
        for i in 0..20 {
            let s = znormalize(&source[i].0);
            let t = znormalize(&target[i].volume);
            let styled = amplitude_swap(&s, &t, 0.1).unwrap();
            before += histogram_distance(&s, &t).unwrap();
            after += histogram_distance(&styled, &t).unwrap();
        }
        assert!(after <= 0.7 * before, "before {before} after {after}");
    }

    #[test]
    fn abnormal_volumes_deviate() {
        let spec = PhantomSpec::default();
        let samples = gen_target(40, &spec, 0.5).unwrap();
        let volumes = |s: &TargetSample| s.labels.histogram(4).iter().map(|&c| c as f64).collect::<Vec<_>>();
        let normal: Vec<Vec<f64>> = samples.iter().filter(|s| s.subset == Subset::Normal).map(volumes).collect();
        let mean: Vec<f64> = (0..4)
            .map(|c| normal.iter().map(|v| v[c]).sum::<f64>() / normal.len() as f64)
            .collect();
        for s in samples.iter().filter(|s| s.subset == Subset::Abnormal) {
            let v = volumes(s);
            assert!((1..4).any(|c| (v[c] - mean[c]).abs() / mean[c] > 0.10), "{v:?} vs {mean:?}");
        }
    }

    #[test]
    fn benchmark_splits_differ() {
        let spec = PhantomSpec {
            dims: Dims::cube(8),
            ..Default::default()
        };
        let sizes = BenchmarkSizes {
            source: 2,
            target_train: 3,
            target_test: 3,
            abnormal_fraction: 0.5,
        };
        let b = gen_benchmark(&spec, sizes).unwrap();
        assert_eq!((b.source.len(), b.target_train.len(), b.target_test.len()), (2, 3, 3));
        assert_ne!(b.target_train[0].volume, b.target_test[0].volume);
        assert_eq!(b.target_train, gen_target(3, &spec, 0.5).unwrap());
    }

    #[test]
    fn bias_field_bounds() {
        let dims = Dims::cube(24);
        for seed in 0..100 {
            let f = bias_field(dims, seed);
            assert!(f.data().iter().all(|&v| (0.7..=1.3).contains(&v)));
            assert!((0.95..=1.05).contains(&f.mean()));
            let mut steepest = 0.0f32;
            for q in 0..dims.len() {
                let (z, y, x) = dims.coords(q);
                if x + 1 < 24 {
                    steepest = steepest.max((f.data()[q + 1] - f.data()[q]).abs());
                }
                if y + 1 < 24 {
                    steepest = steepest.max((f.data()[q + 24] - f.data()[q]).abs());
                }
                if z + 1 < 24 {
                    steepest = steepest.max((f.data()[q + 576] - f.data()[q]).abs());
                }
            }
            assert!(steepest < 0.05);
        }
        assert_eq!(bias_field(dims, 3), bias_field(dims, 3));
    }
}
