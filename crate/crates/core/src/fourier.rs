//! 3D discrete Fourier transform and low-frequency amplitude swapping.
//!
//! Power-of-two axes use an iterative radix-2 transform; every other length
//! goes through Bluestein's chirp-z reformulation on a padded radix-2 grid.
//! Spectra keep DC at index 0 and wrap negative frequencies, so "centered"
//! frequency coordinates are recovered with [`centered`].

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

/// Complex spectrum of a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    dims: Dims,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(dims: Dims, data: Vec<Complex64>) -> Result<Self> {
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

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize, w: usize) -> Complex64 {
        self.data[self.dims.index(u, v, w)]
    }
}

/// Amplitude and phase grids of a [`Spectrum`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSpectrum {
    pub dims: Dims,
    pub amplitude: Vec<f64>,
    /// Angles in `(-pi, pi]`; zero where the amplitude is zero.
    pub phase: Vec<f64>,
}

/// Boolean low-frequency selection over a spectrum grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqMask {
    dims: Dims,
    half_widths: [usize; 3],
    data: Vec<bool>,
}

impl FreqMask {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn half_widths(&self) -> [usize; 3] {
        self.half_widths
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn contains(&self, u: usize, v: usize, w: usize) -> bool {
        self.data[self.dims.index(u, v, w)]
    }

    pub fn cardinality(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Signed frequency of bin `u` on an axis of length `size`.
pub fn centered(u: usize, size: usize) -> isize {
    if u <= size / 2 {
        u as isize
    } else {
        u as isize - size as isize
    }
}

enum Kernel {
    Identity,
    Radix2(Radix2),
    Bluestein {
        inner: Radix2,
        chirp: Vec<Complex64>,
        kernel_spectrum: Vec<Complex64>,
    },
}

struct Radix2 {
    n: usize,
    twiddles: Vec<Complex64>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Self { n, twiddles }
    }

    /// Unnormalized forward transform in place.
    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.n;
        if n <= 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let t = buf[start + k + half] * self.twiddles[k * stride];
                    let u = buf[start + k];
                    buf[start + k] = u + t;
                    buf[start + k + half] = u - t;
                }
            }
            len <<= 1;
        }
    }

    fn inverse(&self, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|c| *c = c.conj());
        self.forward(buf);
        buf.iter_mut().for_each(|c| *c = c.conj());
    }
}

/// One-dimensional transform plan for a fixed length.
struct Fft1d {
    n: usize,
    kernel: Kernel,
}

impl Fft1d {
    fn new(n: usize) -> Self {
        let kernel = if n == 1 {
            Kernel::Identity
        } else if n.is_power_of_two() {
            Kernel::Radix2(Radix2::new(n))
        } else {
            let m = (2 * n - 1).next_power_of_two();
            let inner = Radix2::new(m);
            // k^2 reduced mod 2n keeps the chirp angle small for accuracy.
            let chirp: Vec<Complex64> = (0..n)
                .map(|k| {
                    let k2 = (k * k) % (2 * n);
                    Complex64::from_polar(1.0, -PI * k2 as f64 / n as f64)
                })
                .collect();
            let mut kernel_spectrum = vec![Complex64::new(0.0, 0.0); m];
            kernel_spectrum[0] = chirp[0].conj();
            for k in 1..n {
                kernel_spectrum[k] = chirp[k].conj();
                kernel_spectrum[m - k] = chirp[k].conj();
            }
            inner.forward(&mut kernel_spectrum);
            Kernel::Bluestein {
                inner,
                chirp,
                kernel_spectrum,
            }
        };
        Self { n, kernel }
    }

    /// Unnormalized forward transform; `scratch` must hold the padded length.
    fn forward(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        match &self.kernel {
            Kernel::Identity => {}
            Kernel::Radix2(r) => r.forward(buf),
            Kernel::Bluestein {
                inner,
                chirp,
                kernel_spectrum,
            } => {
                let m = inner.n;
                scratch.clear();
                scratch.resize(m, Complex64::new(0.0, 0.0));
                for k in 0..self.n {
                    scratch[k] = buf[k] * chirp[k];
                }
                inner.forward(scratch);
                for (s, b) in scratch.iter_mut().zip(kernel_spectrum) {
                    *s *= b;
                }
                inner.inverse(scratch);
                let scale = 1.0 / m as f64;
                for k in 0..self.n {
                    buf[k] = scratch[k] * chirp[k] * scale;
                }
            }
        }
    }
}

fn transform3(dims: Dims, data: &mut [Complex64], inverse: bool) {
    if inverse {
        data.iter_mut().for_each(|c| *c = c.conj());
    }
    let plans = [Fft1d::new(dims.d), Fft1d::new(dims.h), Fft1d::new(dims.w)];
    let strides = [dims.h * dims.w, dims.w, 1];
    let mut line = Vec::new();
    let mut scratch = Vec::new();
    for axis in 0..3 {
        let plan = &plans[axis];
        let n = plan.n;
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        line.resize(n, Complex64::new(0.0, 0.0));
        // Line starts: every voxel whose coordinate along `axis` is zero.
        for base in 0..dims.len() {
            if (base / stride) % n != 0 {
                continue;
            }
            for k in 0..n {
                line[k] = data[base + k * stride];
            }
            plan.forward(&mut line, &mut scratch);
            for k in 0..n {
                data[base + k * stride] = line[k];
            }
        }
    }
    if inverse {
        let scale = 1.0 / dims.len() as f64;
        data.iter_mut().for_each(|c| *c = c.conj() * scale);
    }
}

/// Forward 3D DFT, `S[u] = sum_x v[x] exp(-2 pi i <u, x / n>)`.
pub fn fft3(v: &Volume) -> Spectrum {
    let mut data: Vec<Complex64> = v
        .data()
        .iter()
        .map(|&x| Complex64::new(x as f64, 0.0))
        .collect();
    transform3(v.dims(), &mut data, false);
    Spectrum {
        dims: v.dims(),
        data,
    }
}

/// Inverse 3D DFT. Returns the real part together with the largest
/// absolute imaginary residual.
pub fn ifft3(s: &Spectrum) -> (Volume, f64) {
    let mut data = s.data.clone();
    transform3(s.dims, &mut data, true);
    let max_imag = data.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    let real = Volume::from_fn(s.dims, |z, y, x| data[s.dims.index(z, y, x)].re as f32);
    (real, max_imag)
}

fn phase_of(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let p = libm::atan2(c.im, c.re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

pub fn decompose(s: &Spectrum) -> PolarSpectrum {
    PolarSpectrum {
        dims: s.dims,
        amplitude: s.data.iter().map(|c| c.norm()).collect(),
        phase: s.data.iter().map(|&c| phase_of(c)).collect(),
    }
}

pub fn compose(polar: &PolarSpectrum) -> Result<Spectrum> {
    let n = polar.dims.len();
    for len in [polar.amplitude.len(), polar.phase.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                dims: polar.dims,
                len,
            });
        }
    }
    let data = polar
        .amplitude
        .iter()
        .zip(&polar.phase)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    Spectrum::new(polar.dims, data)
}

/// Box of half-width `floor(beta * size)` around DC on every axis,
/// inclusive, with wraparound for negative frequencies.
pub fn low_freq_mask(dims: Dims, beta: f64) -> Result<FreqMask> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidBeta(beta));
    }
    dims.check_positive()?;
    let half_widths = dims.as_array().map(|n| libm::floor(beta * n as f64) as usize);
    let inside = |u: usize, axis: usize| {
        let n = dims.as_array()[axis];
        centered(u, n).unsigned_abs() <= half_widths[axis]
    };
    let mut data = Vec::with_capacity(dims.len());
    for u in 0..dims.d {
        for v in 0..dims.h {
            for w in 0..dims.w {
                data.push(inside(u, 0) && inside(v, 1) && inside(w, 2));
            }
        }
    }
    Ok(FreqMask {
        dims,
        half_widths,
        data,
    })
}

/// Replaces the low-frequency amplitude of `src` with that of `tgt` while
/// keeping the phase of `src`, returning the image and the largest imaginary
/// residual of the inverse transform.
pub fn amplitude_swap_with_residual(src: &Volume, tgt: &Volume, beta: f64) -> Result<(Volume, f64)> {
    src.dims().check_same(&tgt.dims())?;
    let mask = low_freq_mask(src.dims(), beta)?;
    let source = decompose(&fft3(src));
    let target = decompose(&fft3(tgt));
    let amplitude = source
        .amplitude
        .iter()
        .zip(&target.amplitude)
        .zip(mask.data())
        .map(|((&a_s, &a_t), &m)| if m { a_t } else { a_s })
        .collect();
    let swapped = compose(&PolarSpectrum {
        dims: src.dims(),
        amplitude,
        phase: source.phase,
    })?;
    Ok(ifft3(&swapped))
}

/// [`amplitude_swap_with_residual`] without the residual.
pub fn amplitude_swap(src: &Volume, tgt: &Volume, beta: f64) -> Result<Volume> {
    let (out, residual) = amplitude_swap_with_residual(src, tgt, beta)?;
    debug_assert!(residual < 1e-5, "imaginary residual {residual}");
    Ok(out)
}
