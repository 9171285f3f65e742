//! Compact 3D segmentation network with exact reverse-mode gradients.
//!
//! Architecture: `conv 3x3x3 (1 -> F) -> ReLU -> conv 3x3x3 (F -> F) -> ReLU
//! -> conv 1x1x1 (F -> C) -> softmax`, zero padding, spatial size preserved.
//!
//! Activations are kept on a grid padded by one voxel on every side. With that
//! layout every kernel tap is a constant flat offset, so each tap becomes one
//! long contiguous multiply-add over the padded interior span; border voxels
//! pick up garbage during the sweep and are masked back to zero.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::volume::{Dims, ProbMap, Volume};

const TAPS: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetConfig {
    pub hidden: usize,
    pub classes: usize,
    pub seed: u64,
}

impl NetConfig {
    pub const IN_CHANNELS: usize = 1;

    pub fn new(hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            hidden,
            classes,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden channels must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig("at least two classes required"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.hidden, self.classes)
    }
}

/// Offsets of each weight and bias block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub hidden: usize,
    pub classes: usize,
    /// Start of w1, b1, w2, b2, w3, b3 followed by the total length.
    pub offsets: [usize; 7],
}

impl Layout {
    pub fn new(hidden: usize, classes: usize) -> Self {
        let sizes = [
            TAPS * NetConfig::IN_CHANNELS * hidden,
            hidden,
            TAPS * hidden * hidden,
            hidden,
            hidden * classes,
            classes,
        ];
        let mut offsets = [0; 7];
        for (k, s) in sizes.iter().enumerate() {
            offsets[k + 1] = offsets[k] + s;
        }
        Self {
            hidden,
            classes,
            offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets[6]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn block(&self, k: usize) -> core::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }
}

/// Flat store of all weights and biases in canonical layer order. Also used
/// for gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Layout,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            layout,
            values: vec![0.0; layout.len()],
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::SizeMismatch {
                expected: layout.len(),
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.values[self.layout.block(k)]
    }

    pub(crate) fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
pub fn init_params(cfg: &NetConfig) -> ParamVector {
    let layout = cfg.layout();
    let mut p = ParamVector::zeros(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fan_ins = [
        TAPS * NetConfig::IN_CHANNELS,
        TAPS * cfg.hidden,
        cfg.hidden,
    ];
    for (layer, fan_in) in fan_ins.into_iter().enumerate() {
        let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in as f64)).expect("positive std");
        for w in &mut p.values[layout.block(2 * layer)] {
            *w = normal.sample(&mut rng);
        }
    }
    p
}

/// Padded grid geometry shared by all layers of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Padded {
    dims: Dims,
    plane: usize,
    row: usize,
    len: usize,
    /// Half-open span covering every interior voxel.
    start: usize,
    end: usize,
}

impl Padded {
    fn new(dims: Dims) -> Self {
        let row = dims.w + 2;
        let plane = (dims.h + 2) * row;
        let len = (dims.d + 2) * plane;
        let start = plane + row + 1;
        let end = dims.d * plane + dims.h * row + dims.w + 1;
        Self {
            dims,
            plane,
            row,
            len,
            start,
            end,
        }
    }

    fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z + 1) * self.plane + (y + 1) * self.row + x + 1
    }

    fn tap_offset(&self, k: usize) -> isize {
        let dz = (k / 9) as isize - 1;
        let dy = ((k / 3) % 3) as isize - 1;
        let dx = (k % 3) as isize - 1;
        dz * self.plane as isize + dy * self.row as isize + dx
    }

    /// 1.0 on interior voxels, 0.0 on the padding shell.
    fn interior_mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.len];
        for z in 0..self.dims.d {
            for y in 0..self.dims.h {
                let base = self.index(z, y, 0);
                m[base..base + self.dims.w].fill(1.0);
            }
        }
        m
    }

    fn pad(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        let w = self.dims.w;
        for z in 0..self.dims.d {
            for y in 0..self.dims.h {
                let src = (z * self.dims.h + y) * w;
                let dst = self.index(z, y, 0);
                out[dst..dst + w].copy_from_slice(&v[src..src + w]);
            }
        }
        out
    }

    fn unpad_into(&self, v: &[f64], out: &mut [f64]) {
        let w = self.dims.w;
        for z in 0..self.dims.d {
            for y in 0..self.dims.h {
                let dst = (z * self.dims.h + y) * w;
                let src = self.index(z, y, 0);
                out[dst..dst + w].copy_from_slice(&v[src..src + w]);
            }
        }
    }
}

/// Values saved by [`forward`] for the matching [`backward`] call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layout: Layout,
    grid: Padded,
    input: Vec<f64>,
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn dims(&self) -> Dims {
        self.grid.dims
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with four interleaved partial sums (fixed order, deterministic).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Span chunk length; keeps one output chunk plus its input windows in L1.
const CHUNK: usize = 512;

fn chunks(g: &Padded) -> impl Iterator<Item = (usize, usize)> {
    let end = g.end;
    (g.start..end).step_by(CHUNK).map(move |s| (s, (s + CHUNK).min(end)))
}

/// `dst[j] += sum_t w[t] * src[starts[t] + j]` over the nine taps of one
/// kernel plane.
#[inline]
fn accumulate_plane(dst: &mut [f64], src: &[f64], starts: &[usize; 9], w: &[f64]) {
    let n = dst.len();
    let s0 = &src[starts[0]..starts[0] + n];
    let s1 = &src[starts[1]..starts[1] + n];
    let s2 = &src[starts[2]..starts[2] + n];
    let s3 = &src[starts[3]..starts[3] + n];
    let s4 = &src[starts[4]..starts[4] + n];
    let s5 = &src[starts[5]..starts[5] + n];
    let s6 = &src[starts[6]..starts[6] + n];
    let s7 = &src[starts[7]..starts[7] + n];
    let s8 = &src[starts[8]..starts[8] + n];
    let w: [f64; 9] = core::array::from_fn(|t| w[t]);
    for j in 0..n {
        let a = w[0] * s0[j] + w[1] * s1[j] + w[2] * s2[j];
        let b = w[3] * s3[j] + w[4] * s4[j] + w[5] * s5[j];
        let c = w[6] * s6[j] + w[7] * s7[j] + w[8] * s8[j];
        dst[j] += (a + b) + c;
    }
}

/// Three shifted dot products `sum_j d[j] * a[j + t]` for `t = 0, 1, 2`;
/// `a` must hold `d.len() + 2` values. Fixed four-lane summation order.
#[inline]
fn dot_triple(d: &[f64], a: &[f64]) -> [f64; 3] {
    let n = d.len();
    let a = &a[..n + 2];
    let mut acc = [[0.0f64; 4]; 3];
    let full = n / 4;
    for c in 0..full {
        let j = 4 * c;
        for l in 0..4 {
            let dv = d[j + l];
            acc[0][l] += dv * a[j + l];
            acc[1][l] += dv * a[j + l + 1];
            acc[2][l] += dv * a[j + l + 2];
        }
    }
    let mut out = [0.0; 3];
    for t in 0..3 {
        let mut tail = 0.0;
        for j in 4 * full..n {
            tail += d[j] * a[j + t];
        }
        out[t] = (acc[t][0] + acc[t][1]) + (acc[t][2] + acc[t][3]) + tail;
    }
    out
}

/// Correlates `src` channels with `weights` over the chunk `lo..hi` into
/// `dst` channels. With `transpose` the kernel is mirrored and the in/out
/// roles of the weight tensor are swapped, which computes the input
/// gradient of the forward convolution.
#[allow(clippy::too_many_arguments)]
fn conv_chunk(
    g: &Padded,
    src: &[f64],
    cin: usize,
    weights: &[f64],
    dst: &mut [f64],
    cout: usize,
    lo: usize,
    hi: usize,
    transpose: bool,
) {
    let mut w9 = [0.0; 9];
    for o in 0..cout {
        let out = &mut dst[o * g.len + lo..o * g.len + hi];
        for i in 0..cin {
            let plane_src = &src[i * g.len..(i + 1) * g.len];
            for dz in 0..3 {
                let mut starts = [0usize; 9];
                for t in 0..9 {
                    let k = dz * 9 + t;
                    let (k_src, widx) = if transpose {
                        (TAPS - 1 - k, (i * cout + o) * TAPS + k)
                    } else {
                        (k, (o * cin + i) * TAPS + k)
                    };
                    starts[t] = (lo as isize + g.tap_offset(k_src)) as usize;
                    w9[t] = weights[widx];
                }
                accumulate_plane(out, plane_src, &starts, &w9);
            }
        }
    }
}

/// 3x3x3 zero-padded convolution followed by ReLU on the padded grid.
fn conv3_relu(
    g: &Padded,
    input: &[f64],
    cin: usize,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
    interior: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; cout * g.len];
    for (lo, hi) in chunks(g) {
        for o in 0..cout {
            out[o * g.len + lo..o * g.len + hi].fill(bias[o]);
        }
        conv_chunk(g, input, cin, weights, &mut out, cout, lo, hi, false);
        for o in 0..cout {
            let dst = &mut out[o * g.len + lo..o * g.len + hi];
            for (v, &m) in dst.iter_mut().zip(&interior[lo..hi]) {
                *v = v.max(0.0) * m;
            }
        }
    }
    out
}

/// Accumulates `dW[o][i][k] += sum_q dout[o][q] * input[i][q + off_k]`.
fn weight_grad(g: &Padded, dout: &[f64], cout: usize, input: &[f64], cin: usize, gw: &mut [f64]) {
    for (lo, hi) in chunks(g) {
        for o in 0..cout {
            let d = &dout[o * g.len + lo..o * g.len + hi];
            for i in 0..cin {
                let a = &input[i * g.len..(i + 1) * g.len];
                for row in 0..9 {
                    // Taps row*3 .. row*3+3 differ only in dx = -1, 0, 1.
                    let k = row * 3;
                    let start = (lo as isize + g.tap_offset(k)) as usize;
                    let sums = dot_triple(d, &a[start..start + (hi - lo) + 2]);
                    let base = (o * cin + i) * TAPS + k;
                    for t in 0..3 {
                        gw[base + t] += sums[t];
                    }
                }
            }
        }
    }
}

/// Runs the network on one volume.
pub fn forward(p: &ParamVector, v: &Volume) -> (ProbMap, ForwardCache) {
    let layout = p.layout;
    let (f, c) = (layout.hidden, layout.classes);
    let g = Padded::new(v.dims());
    let interior = g.interior_mask();
    let x: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let input = g.pad(&x);

    let hidden1 = conv3_relu(&g, &input, 1, p.block(0), p.block(1), f, &interior);
    let hidden2 = conv3_relu(&g, &hidden1, f, p.block(2), p.block(3), f, &interior);

    let (w3, b3) = (p.block(4), p.block(5));
    let n = v.dims().len();
    let mut logits = vec![0.0; c * n];
    let mut plane = vec![0.0; g.len];
    for k in 0..c {
        let span = &mut plane[g.start..g.end];
        span.fill(b3[k]);
        for j in 0..f {
            axpy(w3[k * f + j], &hidden2[j * g.len + g.start..j * g.len + g.end], span);
        }
        g.unpad_into(&plane, &mut logits[k * n..(k + 1) * n]);
    }

    let mut probs = logits;
    for q in 0..n {
        let mut max = f64::NEG_INFINITY;
        for k in 0..c {
            max = max.max(probs[k * n + q]);
        }
        let mut sum = 0.0;
        for k in 0..c {
            let e = libm::exp(probs[k * n + q] - max);
            probs[k * n + q] = e;
            sum += e;
        }
        for k in 0..c {
            probs[k * n + q] /= sum;
        }
    }

    let out = ProbMap::new(c, v.dims(), probs.clone()).expect("shape follows input");
    let cache = ForwardCache {
        layout,
        grid: g,
        input,
        hidden1,
        hidden2,
        probs,
    };
    (out, cache)
}

/// Adds the gradient of the loss with respect to every parameter into `grad`,
/// given the gradient with respect to the output probabilities.
pub fn backward_into(
    p: &ParamVector,
    cache: &ForwardCache,
    dl_dprob: &[f64],
    grad: &mut ParamVector,
) -> Result<()> {
    p.check_layout(grad)?;
    if cache.layout != p.layout {
        return Err(Error::SizeMismatch {
            expected: p.len(),
            actual: cache.layout.len(),
        });
    }
    let (f, c) = (p.layout.hidden, p.layout.classes);
    let g = &cache.grid;
    let n = g.dims.len();
    if dl_dprob.len() != c * n {
        return Err(Error::SizeMismatch {
            expected: c * n,
            actual: dl_dprob.len(),
        });
    }
    let layout = p.layout;

    // Softmax Jacobian: dz_k = p_k (g_k - sum_j g_j p_j).
    let probs = &cache.probs;
    let mut dlogits = vec![0.0; c * n];
    for q in 0..n {
        let mut inner = 0.0;
        for k in 0..c {
            inner += dl_dprob[k * n + q] * probs[k * n + q];
        }
        for k in 0..c {
            dlogits[k * n + q] = probs[k * n + q] * (dl_dprob[k * n + q] - inner);
        }
    }
    let dlogits: Vec<Vec<f64>> = (0..c).map(|k| g.pad(&dlogits[k * n..(k + 1) * n])).collect();

    let w3 = p.block(4);
    let span = g.start..g.end;
    let gv = &mut grad.values;
    {
        let (gw3, gb3) = (layout.offsets[4], layout.offsets[5]);
        for k in 0..c {
            let dk = &dlogits[k][span.clone()];
            gv[gb3 + k] += dk.iter().sum::<f64>();
            for j in 0..f {
                let a = &cache.hidden2[j * g.len + g.start..j * g.len + g.end];
                gv[gw3 + k * f + j] += dot(dk, a);
            }
        }
    }

    // Through the 1x1 conv and the second ReLU.
    let mut dz2 = vec![0.0; f * g.len];
    for j in 0..f {
        let dj = &mut dz2[j * g.len + g.start..j * g.len + g.end];
        for k in 0..c {
            axpy(w3[k * f + j], &dlogits[k][span.clone()], dj);
        }
        let a = &cache.hidden2[j * g.len + g.start..j * g.len + g.end];
        for (d, &av) in dj.iter_mut().zip(a) {
            if av <= 0.0 {
                *d = 0.0;
            }
        }
    }

    // Second 3x3x3 conv: weight gradient and gradient into hidden1.
    let (gw2, gb2) = (layout.offsets[2], layout.offsets[3]);
    for o in 0..f {
        gv[gb2 + o] += dz2[o * g.len + g.start..o * g.len + g.end].iter().sum::<f64>();
    }
    weight_grad(g, &dz2, f, &cache.hidden1, f, &mut gv[gw2..gw2 + TAPS * f * f]);
    let mut dz1 = vec![0.0; f * g.len];
    for (lo, hi) in chunks(g) {
        conv_chunk(g, &dz2, f, p.block(2), &mut dz1, f, lo, hi, true);
    }
    for i in 0..f {
        let a = &cache.hidden1[i * g.len..(i + 1) * g.len];
        let d = &mut dz1[i * g.len..(i + 1) * g.len];
        for (dv, &av) in d.iter_mut().zip(a) {
            if av <= 0.0 {
                *dv = 0.0;
            }
        }
    }

    // First conv: weight gradient only.
    let (gw1, gb1) = (layout.offsets[0], layout.offsets[1]);
    for o in 0..f {
        gv[gb1 + o] += dz1[o * g.len + g.start..o * g.len + g.end].iter().sum::<f64>();
    }
    weight_grad(g, &dz1, f, &cache.input, 1, &mut gv[gw1..gw1 + TAPS * f]);
    Ok(())
}

/// Gradient of the loss with respect to every parameter.
pub fn backward(p: &ParamVector, cache: &ForwardCache, dl_dprob: &[f64]) -> Result<ParamVector> {
    let mut grad = ParamVector::zeros(p.layout);
    backward_into(p, cache, dl_dprob, &mut grad)?;
    Ok(grad)
}

/// Central finite differences with step 1e-3, one coordinate at a time.
pub fn finite_diff_grad(p: &ParamVector, loss_fn: impl Fn(&ParamVector) -> f64) -> ParamVector {
    const STEP: f64 = 1e-3;
    let mut probe = p.clone();
    let mut grad = ParamVector::zeros(p.layout);
    for i in 0..p.len() {
        let orig = p.values[i];
        probe.values[i] = orig + STEP;
        let up = loss_fn(&probe);
        probe.values[i] = orig - STEP;
        let down = loss_fn(&probe);
        probe.values[i] = orig;
        grad.values[i] = (up - down) / (2.0 * STEP);
    }
    grad
}

impl ForwardCache {
    /// On/off state of every hidden ReLU unit on interior voxels.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let g = &self.grid;
        let f = self.layout.hidden;
        let interior = g.interior_mask();
        let mut out = Vec::with_capacity(2 * f * g.dims.len());
        for buf in [&self.hidden1, &self.hidden2] {
            for j in 0..f {
                for (q, &m) in interior.iter().enumerate() {
                    if m > 0.0 {
                        out.push(buf[j * g.len + q] > 0.0);
                    }
                }
            }
        }
        out
    }
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub coordinates: usize,
    /// Coordinates whose 1e-3 probe flipped a ReLU and were re-probed with a
    /// 1e-6 step instead.
    pub kink_rechecked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error `|a - b| / max(|a|, |b|, 1e-3)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Checks `analytic` against central differences of `eval`, which returns the
/// loss together with the concatenated [`ForwardCache::relu_pattern`] of every
/// forward pass it ran. Central differences are only valid while the
/// piecewise-linear regime stays fixed, so a coordinate whose probes at
/// `+-1e-3` change the pattern is probed again at `+-1e-6`.
pub fn gradient_check(
    p: &ParamVector,
    analytic: &ParamVector,
    eval: impl Fn(&ParamVector) -> (f64, Vec<bool>),
) -> GradCheck {
    const STEP: f64 = 1e-3;
    const FINE_STEP: f64 = 1e-6;
    let (_, base_pattern) = eval(p);
    let mut probe = p.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        coordinates: p.len(),
        kink_rechecked: 0,
    };
    let mut central = |i: usize, step: f64| {
        let orig = p.values[i];
        probe.values[i] = orig + step;
        let (up, pu) = eval(&probe);
        probe.values[i] = orig - step;
        let (down, pd) = eval(&probe);
        probe.values[i] = orig;
        ((up - down) / (2.0 * step), pu == base_pattern && pd == base_pattern)
    };
    for i in 0..p.len() {
        let (mut numeric, smooth) = central(i, STEP);
        if !smooth {
            report.kink_rechecked += 1;
            numeric = central(i, FINE_STEP).0;
        }
        let err = relative_error(analytic.values[i], numeric);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    report
}
